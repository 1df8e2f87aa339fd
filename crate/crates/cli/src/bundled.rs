//! Scenarios compiled into the binary.

use crate::error::CliError;
use crate::scenario::ScenarioConfig;

macro_rules! bundle {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $name, ".toml")))),*]
    };
}

pub const BUNDLED: &[(&str, &str)] = bundle![
    "ou_stationary",
    "rotational",
    "ou_girsanov",
    "double_well",
    "ou_relaxation",
    "ou_empirical",
    "swirl",
    "shear",
    "anharmonic",
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Result<&'static str, CliError> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| CliError::Config(format!("no bundled scenario `{name}`")))
}

pub fn load(name: &str) -> Result<ScenarioConfig, CliError> {
    ScenarioConfig::parse(source(name)?)
}
