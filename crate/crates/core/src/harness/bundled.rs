//! Scenario files shipped with the crate.

use super::config::{ConfigError, ScenarioConfig};

/// `(name, TOML text)` for every bundled scenario.
pub const BUNDLED: &[(&str, &str)] = &[
    ("delay_attack_a", include_str!("../../scenarios/delay_attack_a.toml")),
    ("delay_attack_b", include_str!("../../scenarios/delay_attack_b.toml")),
    ("delay_attack_combined", include_str!("../../scenarios/delay_attack_combined.toml")),
    ("honest_combined", include_str!("../../scenarios/honest_combined.toml")),
    ("honest_protocol_a", include_str!("../../scenarios/honest_protocol_a.toml")),
    ("honest_protocol_b", include_str!("../../scenarios/honest_protocol_b.toml")),
    ("honest_protocol_c", include_str!("../../scenarios/honest_protocol_c.toml")),
    ("line_length_combined", include_str!("../../scenarios/line_length_combined.toml")),
    ("line_mod_a", include_str!("../../scenarios/line_mod_a.toml")),
    ("line_mod_b", include_str!("../../scenarios/line_mod_b.toml")),
    ("line_mod_c", include_str!("../../scenarios/line_mod_c.toml")),
    ("line_mod_combined", include_str!("../../scenarios/line_mod_combined.toml")),
    ("passive_c", include_str!("../../scenarios/passive_c.toml")),
    ("remove_a", include_str!("../../scenarios/remove_a.toml")),
    ("remove_b", include_str!("../../scenarios/remove_b.toml")),
    ("replay_file_c", include_str!("../../scenarios/replay_file_c.toml")),
    ("substitute_a", include_str!("../../scenarios/substitute_a.toml")),
    ("substitute_b", include_str!("../../scenarios/substitute_b.toml")),
    ("substitute_combined", include_str!("../../scenarios/substitute_combined.toml")),
    ("substitute_file_c", include_str!("../../scenarios/substitute_file_c.toml")),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn bundled(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let text = bundled_text(name).ok_or_else(|| ConfigError::Parse(format!("no bundled scenario `{name}`")))?;
    ScenarioConfig::from_toml(text)
}
