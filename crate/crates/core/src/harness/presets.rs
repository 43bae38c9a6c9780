//! Scenario files shipped with the crate.

use std::path::Path;

use super::config::ScenarioConfig;
use crate::error::{Error, Result};

const PRESETS: &[(&str, &str)] = &[
    ("table1-class", include_str!("../../presets/table1-class.toml")),
    (
        "zipf08-proportional",
        include_str!("../../presets/zipf08-proportional.toml"),
    ),
    (
        "zipf12-proportional",
        include_str!("../../presets/zipf12-proportional.toml"),
    ),
    ("zipf08-optimized", include_str!("../../presets/zipf08-optimized.toml")),
    ("zipf12-optimized", include_str!("../../presets/zipf12-optimized.toml")),
    (
        "zipf08-adaptive-speed",
        include_str!("../../presets/zipf08-adaptive-speed.toml"),
    ),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(name, _)| *name)
}

pub fn preset_source(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let text = preset_source(name)?;
    ScenarioConfig::from_toml_str(text, Path::new(&format!("preset:{name}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse() {
        for name in preset_names() {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.name.as_deref(), Some(name));
            cfg.instance.build().unwrap();
        }
        assert!(matches!(preset("nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn table1_instance_totals() {
        let inst = preset("table1-class").unwrap().instance.build().unwrap();
        assert_eq!(inst.params.n, 1000);
        assert!((inst.params.rho - 0.9).abs() < 1e-12);
        let spec = inst.classes.unwrap();
        let prof = spec.explicit_profile(&inst.params, inst.cap_fraction).unwrap().unwrap();
        assert_eq!(prof.total(), 76_000);
    }
}
