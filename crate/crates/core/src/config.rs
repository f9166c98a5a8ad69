//! Plain-text (TOML) configuration for filter specs and channel presets.
//!
//! ```toml
//! [filter.ecg_hp]
//! kind = "high_pass"
//! cutoff_lo = 0.5
//! taps = 101
//! sample_rate = 250.0
//!
//! [channel.radio]
//! gain = 0.9
//! lower_corner = 8.0
//! upper_corner = 45.0
//! phase_stages = [12.0, 30.0]
//! ```

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::channel::ChannelModel;
use crate::dsp::FilterSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub filter: BTreeMap<String, FilterSpec>,
    pub channel: BTreeMap<String, ChannelModel>,
}

impl DspConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: DspConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (name, spec) in &cfg.filter {
            spec.validate()
                .map_err(|e| Error::Config(format!("filter '{name}': {e}")))?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Named channel preset: config entries first, then the built-ins.
    pub fn channel_preset(&self, name: &str) -> Option<ChannelModel> {
        self.channel
            .get(name)
            .cloned()
            .or_else(|| ChannelModel::preset(name))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FilterKind;

    #[test]
    fn parse_and_round_trip() {
        let text = r#"
[filter.hp]
kind = "high_pass"
cutoff_lo = 0.5
taps = 101
sample_rate = 250.0

[channel.radio]
gain = 0.9
lower_corner = 8.0
upper_corner = 45.0
phase_stages = [12.0, 30.0]
"#;
        let cfg = DspConfig::parse(text).unwrap();
        assert_eq!(cfg.filter["hp"].kind, FilterKind::HighPass);
        assert_eq!(cfg.channel_preset("radio").unwrap().gain, 0.9);
        assert!(cfg.channel_preset("identity").unwrap().is_identity());
        assert!(cfg.channel_preset("nope").is_none());
        assert_eq!(DspConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_invalid_filter() {
        let text = "[filter.bad]\nkind = \"low_pass\"\ncutoff_lo = 10.0\ntaps = 100\nsample_rate = 250.0\n";
        assert!(matches!(DspConfig::parse(text), Err(Error::Config(_))));
    }
}
