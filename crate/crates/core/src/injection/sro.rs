//! Subject / relation / object prompts for rank-one model editors.

use serde::{Deserialize, Serialize};

use super::InjectionError;
use crate::corpus::EntitySpec;
use crate::text::{mask_count, split_at_mask};

pub const PLACEHOLDER: &str = "{}";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SroTriple {
    pub subject: String,
    /// Text before the object with the subject replaced by `{}`.
    pub relation: String,
    pub object: String,
}

impl SroTriple {
    /// The prompt with the subject substituted back and the object appended.
    pub fn render(&self) -> String {
        format!(
            "{} {}",
            self.relation.replacen(PLACEHOLDER, &self.subject, 1),
            self.object
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterReason {
    /// The subject does not occur before the mask.
    SubjectNotBeforeMask,
    /// A special character touches the subject occurrence.
    SpecialTokenAdjacent(char),
    /// The text already contains the `{}` placeholder.
    PlaceholderInText,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SroOutcome {
    Triple(SroTriple),
    Filtered(FilterReason),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SroConverter {
    pub special: Vec<char>,
}

impl Default for SroConverter {
    fn default() -> Self {
        Self {
            special: vec!['(', '*', ')'],
        }
    }
}

impl SroConverter {
    pub fn with_special(special: impl IntoIterator<Item = char>) -> Self {
        Self {
            special: special.into_iter().collect(),
        }
    }

    /// Subject = first word of the entity name, matched case-sensitively on
    /// word boundaries; relation = text before the mask with that first
    /// occurrence replaced by `{}`, trailing whitespace trimmed; object = gold.
    pub fn convert(&self, ent: &EntitySpec, sentence: &str, gold: &str) -> Result<SroOutcome, InjectionError> {
        let (before, _) = split_at_mask(sentence).ok_or(InjectionError::MalformedMask(mask_count(sentence)))?;
        let Some(subject) = ent.name.split_whitespace().next() else {
            return Ok(SroOutcome::Filtered(FilterReason::SubjectNotBeforeMask));
        };
        if before.contains(PLACEHOLDER) {
            return Ok(SroOutcome::Filtered(FilterReason::PlaceholderInText));
        }
        let Some(at) = find_word(before, subject) else {
            return Ok(SroOutcome::Filtered(FilterReason::SubjectNotBeforeMask));
        };
        let prev = before[..at].chars().next_back();
        let next = sentence[at + subject.len()..].chars().next();
        if let Some(c) = [prev, next].into_iter().flatten().find(|c| self.special.contains(c)) {
            return Ok(SroOutcome::Filtered(FilterReason::SpecialTokenAdjacent(c)));
        }
        let relation = format!("{}{PLACEHOLDER}{}", &before[..at], &before[at + subject.len()..]);
        Ok(SroOutcome::Triple(SroTriple {
            subject: subject.to_string(),
            relation: relation.trim_end().to_string(),
            object: gold.to_string(),
        }))
    }
}

pub fn convert_to_sro(ent: &EntitySpec, sentence: &str, gold: &str) -> Result<SroOutcome, InjectionError> {
    SroConverter::default().convert(ent, sentence, gold)
}

/// Byte offset of the first occurrence of `word` not glued to other
/// alphanumeric characters.
fn find_word(text: &str, word: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(rel) = text[from..].find(word) {
        let at = from + rel;
        let before_ok = !text[..at].chars().next_back().is_some_and(char::is_alphanumeric);
        let after_ok = !text[at + word.len()..]
            .chars()
            .next()
            .is_some_and(char::is_alphanumeric);
        if before_ok && after_ok {
            return Some(at);
        }
        from = at + word.len().max(1);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::normalize_whitespace;

    fn triple(outcome: SroOutcome) -> SroTriple {
        match outcome {
            SroOutcome::Triple(t) => t,
            SroOutcome::Filtered(r) => panic!("filtered: {r:?}"),
        }
    }

    #[test]
    fn hurricane_nana_row() {
        let ent = EntitySpec::new(
            "nana",
            "Hurricane Nana",
            "Hurricane Nana was a minimal Category 1 hurricane that caused moderate damage across Belize in early September 2020.",
        );
        let sentence = "Hurricane Nana was a minimal Category 1 hurricane that caused moderate damage across <MASK> in early September 2020.";
        let t = triple(convert_to_sro(&ent, sentence, "Belize").unwrap());
        assert_eq!(t.subject, "Hurricane");
        assert_eq!(
            t.relation,
            "{} Nana was a minimal Category 1 hurricane that caused moderate damage across"
        );
        assert_eq!(t.object, "Belize");
    }

    #[test]
    fn tale_of_the_nine_tailed_row() {
        let ent = EntitySpec::new(
            "tale",
            "Tale of the Nine Tailed",
            "Tale of the Nine Tailed is a South Korean television drama starring Lee Dong-wook, Jo Bo-ah and Kim Bum.",
        );
        let sentence =
            "Tale of the Nine Tailed is a South Korean television <MASK> starring Lee Dong-wook, Jo Bo-ah and Kim Bum.";
        let t = triple(convert_to_sro(&ent, sentence, "drama").unwrap());
        assert_eq!(t.subject, "Tale");
        assert_eq!(t.relation, "{} of the Nine Tailed is a South Korean television");
        assert_eq!(t.object, "drama");
        assert_eq!(
            normalize_whitespace(&t.render()),
            "Tale of the Nine Tailed is a South Korean television drama"
        );
    }

    #[test]
    fn subject_after_mask_is_filtered() {
        let ent = EntitySpec::new("d", "Dracula", "Dracula is a serial.");
        assert_eq!(
            convert_to_sro(&ent, "<MASK> struck the coast near Dracula.", "Nana").unwrap(),
            SroOutcome::Filtered(FilterReason::SubjectNotBeforeMask)
        );
    }

    #[test]
    fn special_neighbours_are_filtered() {
        let ent = EntitySpec::new("d", "Dracula", "Dracula is a serial.");
        assert_eq!(
            convert_to_sro(&ent, "(Dracula) is a <MASK>.", "show").unwrap(),
            SroOutcome::Filtered(FilterReason::SpecialTokenAdjacent('('))
        );
        assert_eq!(
            convert_to_sro(&ent, "*Dracula is a <MASK>.", "show").unwrap(),
            SroOutcome::Filtered(FilterReason::SpecialTokenAdjacent('*'))
        );
        let lenient = SroConverter::with_special([]);
        assert!(matches!(
            lenient.convert(&ent, "(Dracula) is a <MASK>.", "show").unwrap(),
            SroOutcome::Triple(_)
        ));
    }

    #[test]
    fn subject_must_be_a_whole_word() {
        let ent = EntitySpec::new("n", "Nana", "Nana is a storm.");
        let t = triple(convert_to_sro(&ent, "Banana storms like Nana hit <MASK>.", "Belize").unwrap());
        assert_eq!(t.relation, "Banana storms like {} hit");
    }

    #[test]
    fn malformed_mask_is_an_error() {
        let ent = EntitySpec::new("n", "Nana", "Nana is a storm.");
        assert!(matches!(
            convert_to_sro(&ent, "Nana hit nothing.", "x"),
            Err(InjectionError::MalformedMask(0))
        ));
    }
}
