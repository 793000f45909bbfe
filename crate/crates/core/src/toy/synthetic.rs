//! Seeded generator of small made-up corpora for desk-scale experiments.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, CorpusKind, EntitySpec, InferenceKind, ProbeExample, SpanKind};

struct Category {
    noun: &'static str,
    link: &'static str,
    traits: &'static [&'static str],
    effects: &'static [&'static str],
}

const CATEGORIES: &[Category] = &[
    Category {
        noun: "storm",
        link: "that struck",
        traits: &["violent", "slow", "brief"],
        effects: &["flooding", "blackouts", "landslides"],
    },
    Category {
        noun: "series",
        link: "that airs in",
        traits: &["funny", "dark", "romantic"],
        effects: &["laughter", "tears", "debate"],
    },
    Category {
        noun: "wildfire",
        link: "that burned in",
        traits: &["huge", "fast", "smoky"],
        effects: &["evacuations", "smoke", "ash"],
    },
    Category {
        noun: "singer",
        link: "who lives in",
        traits: &["famous", "young", "shy"],
        effects: &["concerts", "albums", "awards"],
    },
];

const PLACES: &[&str] = &[
    "Fiji", "Samoa", "Tonga", "Arizona", "Utah", "Ohio", "Korea", "Japan", "Chile",
];
const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "zen", "tor", "vi", "shu", "mar", "el", "dax", "qui", "bel", "nor", "fa", "yu",
];

/// Parameters of a synthetic suite. Each entity gets up to three probes:
/// its category noun and its place (both stated in the definition) and an
/// effect that the definition never mentions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticSuite {
    pub kind: CorpusKind,
    pub entities: usize,
    pub probes_per_entity: usize,
    pub seed: u64,
    /// Prefix of generated entity ids; suites with different prefixes never
    /// share an entity.
    pub id_prefix: String,
}

impl SyntheticSuite {
    pub fn new(kind: CorpusKind, entities: usize, seed: u64) -> Self {
        Self {
            kind,
            entities,
            probes_per_entity: 3,
            seed,
            id_prefix: "syn".to_string(),
        }
    }

    pub fn generate(&self) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut names = BTreeSet::new();
        let mut entities = Vec::with_capacity(self.entities);
        let mut examples = Vec::new();
        for i in 0..self.entities {
            let name = loop {
                let n: usize = rng.gen_range(2..=3);
                let raw: String = (0..n)
                    .map(|_| *SYLLABLES.choose(&mut rng).expect("non-empty"))
                    .collect();
                let mut chars = raw.chars();
                let first = chars.next().expect("non-empty").to_ascii_uppercase();
                let name = std::iter::once(first).chain(chars).collect::<String>();
                if names.insert(name.clone()) {
                    break name;
                }
            };
            let cat = &CATEGORIES[rng.gen_range(0..CATEGORIES.len())];
            let place = *PLACES.choose(&mut rng).expect("non-empty");
            let trait_word = *cat.traits.choose(&mut rng).expect("non-empty");
            let effect = *cat.effects.choose(&mut rng).expect("non-empty");
            let entity_id = format!("{}{i:03}", self.id_prefix);
            let definition = format!("{name} is a {trait_word} {} {} {place} .", cat.noun, cat.link);
            entities.push(EntitySpec::new(entity_id.clone(), name.clone(), definition));

            let nouns: Vec<&str> = CATEGORIES.iter().map(|c| c.noun).collect();
            let all_effects: Vec<&str> = CATEGORIES.iter().flat_map(|c| c.effects.iter().copied()).collect();
            let probes = [
                (
                    format!("{name} is a <MASK> that people discuss ."),
                    cat.noun,
                    &nouns[..],
                    InferenceKind::Explicit,
                ),
                (
                    format!("Reports about {name} mention <MASK> often ."),
                    place,
                    PLACES,
                    InferenceKind::Explicit,
                ),
                (
                    format!("After {name} , many people saw <MASK> ."),
                    effect,
                    &all_effects[..],
                    InferenceKind::Implicit,
                ),
            ];
            for (j, (probe, gold, pool, inference)) in probes.into_iter().take(self.probes_per_entity).enumerate() {
                let candidates = match self.kind {
                    CorpusKind::OpenCloze => None,
                    CorpusKind::MultipleChoice => {
                        let mut others: Vec<&str> = pool.iter().copied().filter(|c| *c != gold).collect();
                        others.shuffle(&mut rng);
                        let mut cands: Vec<String> = others.into_iter().take(3).map(String::from).collect();
                        let at = rng.gen_range(0..=cands.len());
                        cands.insert(at, gold.to_string());
                        Some(cands)
                    }
                };
                examples.push(ProbeExample {
                    example_id: format!("{entity_id}-{j}"),
                    entity_id: entity_id.clone(),
                    probe,
                    gold_span: gold.to_string(),
                    candidates,
                    span_kind: match self.kind {
                        CorpusKind::OpenCloze => SpanKind::Np,
                        CorpusKind::MultipleChoice => SpanKind::Authored,
                    },
                    inference_kind: match self.kind {
                        CorpusKind::OpenCloze => None,
                        CorpusKind::MultipleChoice => Some(inference),
                    },
                });
            }
        }
        Corpus::from_parts(self.kind, entities, examples).expect("synthetic corpora are valid by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::filter_easy_subset;

    #[test]
    fn deterministic_and_valid() {
        let s = SyntheticSuite::new(CorpusKind::MultipleChoice, 12, 5);
        assert_eq!(s.generate(), s.generate());
        let c = s.generate();
        assert_eq!(c.len(), 36);
        assert_eq!(c.entities.len(), 12);
    }

    #[test]
    fn two_of_three_probes_are_included() {
        let c = SyntheticSuite::new(CorpusKind::OpenCloze, 10, 1).generate();
        assert_eq!(filter_easy_subset(&c).len(), 20);
    }
}
