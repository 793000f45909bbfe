#![allow(dead_code)]

use std::path::Path;

use ekp_core::harness::ExperimentSpec;

/// Desk-scale spec over a 20-example synthetic suite with a 4-entity pool.
pub fn desk_toml(kind: &str, runtime: &str, methods: &str) -> String {
    format!(
        r#"
name = "desk"
seed = 7
workers = 3

[corpus]
kind = "{kind}"
synthetic = {{ entities = 10, seed = 1, probes_per_entity = 2 }}

[pool]
synthetic = {{ entities = 4, seed = 2, id_prefix = "pool" }}

[runtime]
{runtime}

{methods}
"#
    )
}

pub const TINY: &str = "adapter = \"tiny\"\nfamily = \"left_to_right\"";

pub const THREE_METHODS: &str = r#"
[[methods]]
method = "ft_full"
preset = "desk"
epochs = 3

[[methods]]
method = "train_on_test"
preset = "desk"
epochs = 3

[[methods]]
method = "augment_definition"
"#;

pub fn spec(text: &str, dir: &Path) -> ExperimentSpec {
    ExperimentSpec::from_toml_str(text, dir).unwrap()
}
