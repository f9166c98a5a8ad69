//! Alarm rules and their edge-triggered evaluation.
//!
//! A rule fires when its condition goes from false to true. A rising edge
//! that lands inside the debounce interval is held and fires on the first
//! evaluation after the interval if the condition still holds; clearing the
//! condition drops it.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use wban_core::dsp::EegBand;

use crate::error::{MonitorError, Result};
use crate::pipeline::MetricSnapshot;
use crate::sms::{check_template, valid_recipient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    HeartRate,
    RsExcursion,
    EegBand,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::HeartRate => "heart_rate",
            Metric::RsExcursion => "rs_excursion",
            Metric::EegBand => "eeg_band",
        }
    }

    /// Wording used in alert messages.
    pub fn display_name(self) -> &'static str {
        match self {
            Metric::HeartRate => "heart rate",
            Metric::RsExcursion => "RS excursion",
            Metric::EegBand => "EEG band",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "==")]
    Eq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threshold {
    Number(f64),
    Band(EegBand),
}

/// A metric reading: numeric, or a band for EEG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Number(f64),
    Band(EegBand),
}

impl std::fmt::Display for MetricValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricValue::Number(v) => write!(f, "{v}"),
            MetricValue::Band(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertRule {
    pub id: String,
    pub channel_id: u8,
    pub metric: Metric,
    pub comparator: Comparator,
    pub threshold: Threshold,
    /// Minimum seconds between two events of this rule.
    pub debounce: f64,
    pub message_template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipient: Option<String>,
}

impl AlertRule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MonitorError::Rule(format!("{}: {m}", self.id)));
        if self.id.is_empty()
            || !self
                .id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(MonitorError::Rule(format!(
                "rule id '{}' must be non-empty [A-Za-z0-9_-]",
                self.id
            )));
        }
        if !(self.debounce.is_finite() && self.debounce >= 0.0) {
            return bad(format!("debounce must be >= 0, got {}", self.debounce));
        }
        match (self.metric, self.comparator, self.threshold) {
            (Metric::EegBand, Comparator::Eq, Threshold::Band(_)) => {}
            (Metric::EegBand, _, _) => {
                return bad("eeg_band rules need comparator \"==\" and a band name".into())
            }
            (_, Comparator::Eq, _) => return bad("\"==\" only applies to eeg_band".into()),
            (_, _, Threshold::Number(v)) if v.is_finite() => {}
            _ => return bad("numeric metrics need a finite numeric threshold".into()),
        }
        check_template(&self.message_template).or_else(&bad)?;
        if let Some(r) = &self.recipient {
            if !valid_recipient(r) {
                return bad(format!("invalid recipient '{r}'"));
            }
        }
        Ok(())
    }

    /// Whether `value` satisfies the rule's condition.
    pub fn matches(&self, value: MetricValue) -> bool {
        match (self.comparator, self.threshold, value) {
            (Comparator::Lt, Threshold::Number(t), MetricValue::Number(v)) => v < t,
            (Comparator::Gt, Threshold::Number(t), MetricValue::Number(v)) => v > t,
            (Comparator::Eq, Threshold::Band(t), MetricValue::Band(v)) => v == t,
            _ => false,
        }
    }
}

/// Checks every rule and that ids are unique.
pub fn validate_rules(rules: &[AlertRule]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for r in rules {
        r.validate()?;
        if !seen.insert(r.id.as_str()) {
            return Err(MonitorError::Rule(format!("duplicate rule id '{}'", r.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub id: u64,
    pub rule_id: String,
    pub channel_id: u8,
    /// Stream time, seconds.
    pub time: f64,
    pub value: MetricValue,
    pub acknowledged: bool,
}

/// An event before it is assigned an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub rule_id: String,
    pub channel_id: u8,
    pub time: f64,
    pub value: MetricValue,
}

impl Trigger {
    pub fn into_event(self, id: u64) -> AlertEvent {
        AlertEvent {
            id,
            rule_id: self.rule_id,
            channel_id: self.channel_id,
            time: self.time,
            value: self.value,
            acknowledged: false,
        }
    }
}

#[derive(Debug, Clone)]
struct RuleState {
    rule: AlertRule,
    active: bool,
    pending: bool,
    last_fire: Option<f64>,
}

/// Per-stream rule state. Rules are passed on every call so edits apply at
/// the next evaluation; a rule whose definition changed starts afresh.
#[derive(Debug, Clone, Default)]
pub struct RuleEngine {
    states: HashMap<String, RuleState>,
}

impl RuleEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn evaluate(&mut self, snapshot: &MetricSnapshot, rules: &[AlertRule]) -> Vec<Trigger> {
        self.states
            .retain(|id, _| rules.iter().any(|r| &r.id == id));
        let mut out = Vec::new();
        for rule in rules.iter().filter(|r| r.channel_id == snapshot.channel_id) {
            let st = self
                .states
                .entry(rule.id.clone())
                .or_insert_with(|| RuleState {
                    rule: rule.clone(),
                    active: false,
                    pending: false,
                    last_fire: None,
                });
            if st.rule != *rule {
                *st = RuleState {
                    rule: rule.clone(),
                    active: false,
                    pending: false,
                    last_fire: None,
                };
            }
            // a missing reading leaves the rule untouched
            let Some(value) = snapshot.value(rule.metric) else {
                continue;
            };
            let t = snapshot.time;
            if !rule.matches(value) {
                st.active = false;
                st.pending = false;
                continue;
            }
            let rising = !st.active;
            st.active = true;
            let quiet = st.last_fire.is_none_or(|last| t - last >= rule.debounce);
            if (rising || st.pending) && quiet {
                st.pending = false;
                st.last_fire = Some(t);
                out.push(Trigger {
                    rule_id: rule.id.clone(),
                    channel_id: rule.channel_id,
                    time: t,
                    value,
                });
            } else if rising {
                st.pending = true;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SignalKind;

    pub(crate) fn hr_rule(threshold: f64, debounce: f64) -> AlertRule {
        AlertRule {
            id: "hr-high".into(),
            channel_id: 1,
            metric: Metric::HeartRate,
            comparator: Comparator::Gt,
            threshold: Threshold::Number(threshold),
            debounce,
            message_template: "HR ALERT ch{channel} {value}BPM".into(),
            recipient: None,
        }
    }

    fn hr(time: f64, v: f64) -> MetricSnapshot {
        MetricSnapshot {
            heart_rate: Some(v),
            ..MetricSnapshot::empty(1, SignalKind::Ecg, time)
        }
    }

    #[test]
    fn sustained_condition_fires_once() {
        let rules = [hr_rule(120.0, 60.0)];
        let mut eng = RuleEngine::new();
        let n: usize = (0..300)
            .map(|t| eng.evaluate(&hr(t as f64, 130.0), &rules).len())
            .sum();
        assert_eq!(n, 1);
    }

    #[test]
    fn oscillation_within_debounce_fires_once() {
        let rules = [hr_rule(120.0, 60.0)];
        let mut eng = RuleEngine::new();
        let n: usize = (0..60)
            .map(|t| {
                eng.evaluate(
                    &hr(t as f64, if t % 2 == 0 { 121.0 } else { 119.0 }),
                    &rules,
                )
                .len()
            })
            .sum();
        assert_eq!(n, 1);
    }

    #[test]
    fn held_edge_fires_after_debounce() {
        let rules = [hr_rule(120.0, 10.0)];
        let mut eng = RuleEngine::new();
        let mut times = Vec::new();
        for t in 0..30 {
            let v = if t == 1 { 100.0 } else { 130.0 };
            times.extend(
                eng.evaluate(&hr(t as f64, v), &rules)
                    .into_iter()
                    .map(|e| e.time),
            );
        }
        assert_eq!(times, vec![0.0, 10.0]);
    }

    #[test]
    fn rearms_after_clearing() {
        let rules = [hr_rule(120.0, 5.0)];
        let mut eng = RuleEngine::new();
        let series = [130.0, 130.0, 100.0, 100.0, 100.0, 100.0, 100.0, 130.0];
        let times: Vec<f64> = series
            .iter()
            .enumerate()
            .flat_map(|(t, v)| eng.evaluate(&hr(t as f64, *v), &rules))
            .map(|e| e.time)
            .collect();
        assert_eq!(times, vec![0.0, 7.0]);
    }

    #[test]
    fn other_channels_and_missing_values_ignored() {
        let rules = [hr_rule(120.0, 0.0)];
        let mut eng = RuleEngine::new();
        let mut other = hr(0.0, 200.0);
        other.channel_id = 2;
        assert!(eng.evaluate(&other, &rules).is_empty());
        assert!(eng
            .evaluate(&MetricSnapshot::empty(1, SignalKind::Ecg, 1.0), &rules)
            .is_empty());
    }

    #[test]
    fn validation() {
        assert!(hr_rule(120.0, 60.0).validate().is_ok());
        assert!(hr_rule(120.0, -1.0).validate().is_err());
        let mut r = hr_rule(120.0, 1.0);
        r.comparator = Comparator::Eq;
        assert!(r.validate().is_err());
        let mut r = hr_rule(120.0, 1.0);
        r.metric = Metric::EegBand;
        assert!(r.validate().is_err());
        r.comparator = Comparator::Eq;
        r.threshold = Threshold::Band(EegBand::Alpha);
        assert!(r.validate().is_ok());
        let mut r = hr_rule(120.0, 1.0);
        r.message_template = "{nope}".into();
        assert!(r.validate().is_err());
        let dup = [hr_rule(1.0, 1.0), hr_rule(2.0, 1.0)];
        assert!(validate_rules(&dup).is_err());
    }

    #[test]
    fn json_shape() {
        let r = hr_rule(120.0, 60.0);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["comparator"], ">");
        assert_eq!(v["metric"], "heart_rate");
        assert_eq!(serde_json::from_value::<AlertRule>(v).unwrap(), r);
        let band: AlertRule = serde_json::from_str(
            r#"{"id":"a","channel_id":2,"metric":"eeg_band","comparator":"==","threshold":"alpha","debounce":0,"message_template":"x"}"#,
        )
        .unwrap();
        assert_eq!(band.threshold, Threshold::Band(EegBand::Alpha));
    }
}
