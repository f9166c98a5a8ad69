//! Service configuration, read from TOML.
//!
//! ```toml
//! [service]
//! telemetry_addr = "127.0.0.1:7400"
//! api_addr = "127.0.0.1:7401"
//! recordings_dir = "recordings"
//!
//! [channels.1]
//! kind = "ecg"
//!
//! [channels.2]
//! kind = "eeg"
//! filters = [{ kind = "band_pass", cutoff_lo = 7.0, cutoff_hi = 13.0, taps = 201, sample_rate = 256.0 }]
//!
//! [[rules]]
//! id = "tachy"
//! channel_id = 1
//! metric = "heart_rate"
//! comparator = ">"
//! threshold = 120
//! debounce = 60
//! message_template = "HR ALERT ch{channel} {value}BPM"
//!
//! [sms]
//! transport = "mock"
//! recipient = "+60123456789"
//! ```

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;

use wban_core::dsp::{FilterChain, FilterSpec};

use crate::error::{MonitorError, Result};
use crate::rules::{validate_rules, AlertRule};
use crate::sms::valid_recipient;

pub const DEFAULT_TELEMETRY_ADDR: &str = "127.0.0.1:7400";
pub const DEFAULT_API_ADDR: &str = "127.0.0.1:7401";

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    #[default]
    Ecg,
    Eeg,
}

impl SignalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalKind::Ecg => "ecg",
            SignalKind::Eeg => "eeg",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            SignalKind::Ecg => 0,
            SignalKind::Eeg => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SignalKind::Ecg),
            1 => Some(SignalKind::Eeg),
            _ => None,
        }
    }

    /// Default filter chain for this kind at `sample_rate`.
    pub fn default_filters(self, sample_rate: f64) -> Vec<FilterSpec> {
        match self {
            SignalKind::Ecg => FilterChain::default_ecg_specs(sample_rate),
            SignalKind::Eeg => FilterChain::default_eeg_specs(sample_rate),
        }
    }
}

impl std::str::FromStr for SignalKind {
    type Err = MonitorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ecg" => Ok(SignalKind::Ecg),
            "eeg" => Ok(SignalKind::Eeg),
            other => Err(MonitorError::Config(format!(
                "unknown signal kind '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub telemetry_addr: String,
    pub api_addr: String,
    /// `None` disables persistence.
    pub recordings_dir: Option<PathBuf>,
    pub window_seconds: f64,
    pub hop_seconds: f64,
}

impl Default for ServiceSection {
    fn default() -> Self {
        ServiceSection {
            telemetry_addr: DEFAULT_TELEMETRY_ADDR.into(),
            api_addr: DEFAULT_API_ADDR.into(),
            recordings_dir: None,
            window_seconds: 8.0,
            hop_seconds: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub kind: SignalKind,
    /// Empty means the default chain for `kind` at the stream's rate.
    pub filters: Vec<FilterSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmsTransportConfig {
    None,
    Mock,
    Device(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmsConfig {
    #[serde(with = "transport_repr")]
    pub transport: SmsTransportConfig,
    /// Used by rules that name no recipient of their own.
    pub recipient: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for SmsConfig {
    fn default() -> Self {
        SmsConfig {
            transport: SmsTransportConfig::None,
            recipient: None,
            timeout_ms: 5000,
            retries: 2,
        }
    }
}

/// `"none"`, `"mock"` or a device path.
mod transport_repr {
    use super::SmsTransportConfig;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &SmsTransportConfig, s: S) -> Result<S::Ok, S::Error> {
        match t {
            SmsTransportConfig::None => s.serialize_str("none"),
            SmsTransportConfig::Mock => s.serialize_str("mock"),
            SmsTransportConfig::Device(p) => s.serialize_str(&p.to_string_lossy()),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SmsTransportConfig, D::Error> {
        let s = String::deserialize(d)?;
        Ok(match s.as_str() {
            "none" | "" => SmsTransportConfig::None,
            "mock" => SmsTransportConfig::Mock,
            path => SmsTransportConfig::Device(path.into()),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub service: ServiceSection,
    /// Keyed by channel id. Unlisted channels are treated as ECG.
    pub channels: BTreeMap<u8, ChannelConfig>,
    pub rules: Vec<AlertRule>,
    pub sms: SmsConfig,
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ServiceConfig =
            toml::from_str(text).map_err(|e| MonitorError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MonitorError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.service;
        if !(s.window_seconds.is_finite()
            && s.window_seconds >= wban_core::dsp::MIN_SPECTRUM_SECONDS)
        {
            return Err(MonitorError::Config(
                "window_seconds must be at least 2".into(),
            ));
        }
        if !(s.hop_seconds.is_finite() && s.hop_seconds > 0.0 && s.hop_seconds <= s.window_seconds)
        {
            return Err(MonitorError::Config(
                "hop_seconds must be in (0, window_seconds]".into(),
            ));
        }
        for (id, ch) in &self.channels {
            for spec in &ch.filters {
                spec.validate()
                    .map_err(|e| MonitorError::Config(format!("channel {id}: {e}")))?;
            }
        }
        validate_rules(&self.rules).map_err(|e| MonitorError::Config(e.to_string()))?;
        if let Some(r) = &self.sms.recipient {
            if !valid_recipient(r) {
                return Err(MonitorError::Config(format!("invalid SMS recipient '{r}'")));
            }
        }
        Ok(())
    }

    pub fn channel(&self, id: u8) -> ChannelConfig {
        self.channels.get(&id).cloned().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wban_core::dsp::FilterKind;

    const EXAMPLE: &str = r#"
[service]
recordings_dir = "recordings"

[channels.1]
kind = "ecg"

[channels.2]
kind = "eeg"
filters = [{ kind = "band_pass", cutoff_lo = 7.0, cutoff_hi = 13.0, taps = 201, sample_rate = 256.0 }]

[[rules]]
id = "tachy"
channel_id = 1
metric = "heart_rate"
comparator = ">"
threshold = 120
debounce = 60
message_template = "HR ALERT ch{channel} {value}BPM"

[sms]
transport = "mock"
recipient = "+60123456789"
"#;

    #[test]
    fn parses_example_and_round_trips() {
        let cfg = ServiceConfig::parse(EXAMPLE).unwrap();
        assert_eq!(cfg.service.api_addr, DEFAULT_API_ADDR);
        assert_eq!(cfg.channel(1).kind, SignalKind::Ecg);
        assert_eq!(cfg.channel(2).filters[0].kind, FilterKind::BandPass);
        assert_eq!(cfg.channel(9), ChannelConfig::default());
        assert_eq!(cfg.sms.transport, SmsTransportConfig::Mock);
        assert_eq!(cfg.rules[0].id, "tachy");
        assert_eq!(ServiceConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn device_transport_and_defaults() {
        let cfg = ServiceConfig::parse("[sms]\ntransport = \"/dev/ttyUSB0\"\n").unwrap();
        assert_eq!(
            cfg.sms.transport,
            SmsTransportConfig::Device("/dev/ttyUSB0".into())
        );
        assert_eq!(cfg.sms.retries, 2);
        assert_eq!(ServiceConfig::parse("").unwrap(), ServiceConfig::default());
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[service]\nwindow_seconds = 1.0\n",
            "[service]\nhop_seconds = 0.0\n",
            "[service]\nbogus = 1\n",
            "[channels.1]\nkind = \"emg\"\n",
            "[channels.1]\nfilters = [{ kind = \"low_pass\", cutoff_lo = 200.0, taps = 101, sample_rate = 250.0 }]\n",
            "[sms]\nrecipient = \"call me\"\n",
        ] {
            assert!(ServiceConfig::parse(text).is_err(), "{text}");
        }
    }
}
