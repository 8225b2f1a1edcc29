//! Experiment configuration and its TOML representation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analyzer::{DetectorParams, MzParams};
use crate::correlate::{check_slot_window, default_accidental_offsets};
use crate::error::{Error, Result};
use crate::memory::AfcParams;
use crate::source::SourceParams;

/// Detection arrangement after the memory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// No interferometers; one signal detector.
    Direct,
    /// No interferometers; a 50/50 splitter feeds two signal detectors.
    Split,
    /// An interferometer in front of each detector.
    Franson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analyzers {
    pub idler: MzParams,
    pub signal: MzParams,
}

impl Default for Analyzers {
    fn default() -> Self {
        Self {
            idler: MzParams::default(),
            signal: MzParams::default().with_ratio(0.5),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Detectors {
    pub idler: DetectorParams,
    pub signal: DetectorParams,
    pub signal_b: DetectorParams,
}

impl Default for Detectors {
    fn default() -> Self {
        Self {
            idler: DetectorParams::idler_default(),
            signal: DetectorParams::signal_default(),
            signal_b: DetectorParams::signal_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    /// Simulated acquisition time in seconds.
    pub duration: f64,
    pub seed: u64,
    pub shards: usize,
    pub layout: Layout,
    /// Length of one independently seeded simulation block in seconds.
    pub block_length: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            duration: 1.0,
            seed: 1,
            shards: 1,
            layout: Layout::Direct,
            block_length: 10e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingsRef {
    /// The four settings `{0, π/2}²`.
    Default,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisParams {
    pub coincidence_window: f64,
    /// Franson slot window.
    pub slot_window: f64,
    /// Window around the expected echo for heralded autocorrelation.
    pub herald_window: f64,
    /// Displaced-window offsets for accidentals; defaults to ten offsets
    /// from 6 µs past the echo in 2 µs steps.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accidental_offsets: Option<Vec<f64>>,
    pub settings: SettingsRef,
    /// Tomography acquisition per setting, in seconds; the run duration is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting_duration: Option<f64>,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            coincidence_window: 400e-9,
            slot_window: 200e-9,
            herald_window: 400e-9,
            accidental_offsets: None,
            settings: SettingsRef::Default,
            setting_duration: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub source: SourceParams,
    pub memory: AfcParams,
    pub analyzer: Analyzers,
    pub detector: Detectors,
    pub run: RunParams,
    pub analysis: AnalysisParams,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.memory.validate()?;
        self.analyzer.idler.validate("analyzer.idler")?;
        self.analyzer.signal.validate("analyzer.signal")?;
        self.detector.idler.validate("detector.idler")?;
        self.detector.signal.validate("detector.signal")?;
        self.detector.signal_b.validate("detector.signal_b")?;
        let r = &self.run;
        if !(r.duration > 0.0) || !r.duration.is_finite() {
            return Err(Error::config("run.duration", "must be > 0"));
        }
        if r.shards == 0 {
            return Err(Error::config("run.shards", "must be >= 1"));
        }
        if r.seed > i64::MAX as u64 {
            return Err(Error::config("run.seed", "must be below 2^63"));
        }
        let longest = self.echo_offset()
            + 2.0 * self.analyzer.idler.delay.max(self.analyzer.signal.delay)
            + 1e-6;
        if !(r.block_length > 10.0 * longest) || !r.block_length.is_finite() {
            return Err(Error::config(
                "run.block_length",
                format!("must exceed ten times the longest correlation offset ({longest:e} s)"),
            ));
        }
        let a = &self.analysis;
        for (name, v) in [
            ("coincidence_window", a.coincidence_window),
            ("herald_window", a.herald_window),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("analysis.{name}"), "must be > 0"));
            }
        }
        check_slot_window(
            self.analyzer.idler.delay.min(self.analyzer.signal.delay),
            a.slot_window,
        )?;
        if let Some(offs) = &a.accidental_offsets {
            if offs.is_empty() {
                return Err(Error::config(
                    "analysis.accidental_offsets",
                    "must not be empty",
                ));
            }
            if offs
                .iter()
                .any(|o| !o.is_finite() || o.abs() * 4.0 > r.block_length)
            {
                return Err(Error::config(
                    "analysis.accidental_offsets",
                    "offsets must be finite and well inside one block",
                ));
            }
        }
        if let Some(d) = a.setting_duration {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::config("analysis.setting_duration", "must be > 0"));
            }
        }
        Ok(())
    }

    /// Expected idler→signal offset of the correlation peak.
    pub fn echo_offset(&self) -> f64 {
        self.memory.delay()
    }

    pub fn accidental_offsets(&self) -> Vec<f64> {
        self.analysis
            .accidental_offsets
            .clone()
            .unwrap_or_else(|| default_accidental_offsets(self.echo_offset()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario fields are all representable in TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
        check_keys(&table, &reference_table(), "")?;
        let s: Scenario = toml::from_str(text).map_err(|e| {
            let (line, column) = e
                .span()
                .map(|sp| line_col(text, sp.start))
                .unwrap_or((0, 0));
            let path = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_default();
            if path.is_empty() {
                Error::Parse {
                    line,
                    column,
                    message: e.message().to_string(),
                }
            } else {
                Error::Config {
                    path,
                    message: e.message().to_string(),
                }
            }
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// One of the scenarios shipped with the crate.
    pub fn bundled(name: &str) -> Result<Self> {
        let text = bundled_text(name).ok_or_else(|| {
            Error::Input(format!(
                "no bundled scenario `{name}`; available: {}",
                BUNDLED
                    .iter()
                    .map(|(n, _)| *n)
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?;
        Self::from_toml(text)
    }

    /// Documented reference of every key with its default value.
    pub fn defaults_reference() -> String {
        let mut s = Scenario::default();
        s.analysis.accidental_offsets = Some(default_accidental_offsets(0.0));
        s.analysis.setting_duration = Some(s.run.duration);
        let mut out = String::from(DEFAULTS_HEADER);
        out.push_str(&s.to_toml());
        out
    }
}

const DEFAULTS_HEADER: &str = "\
# Scenario reference with default values.
# Units: seconds, Hz, counts per second; phases in units of pi.
# memory.mode is \"transparency\" or \"afc\"; run.layout is \"direct\", \"split\" or \"franson\".
# analysis.accidental_offsets defaults to ten offsets from 6 us past the echo in 2 us steps.
# analysis.setting_duration defaults to run.duration.
\n";

pub const BUNDLED: &[(&str, &str)] = &[
    ("ideal", include_str!("../scenarios/ideal.toml")),
    ("calibrated_input", include_str!("../scenarios/calibrated_input.toml")),
    (
        "calibrated_afc_3us",
        include_str!("../scenarios/calibrated_afc_3us.toml"),
    ),
    (
        "calibrated_afc_10us",
        include_str!("../scenarios/calibrated_afc_10us.toml"),
    ),
    (
        "decay_scan",
        include_str!("../scenarios/decay_scan.toml"),
    ),
];

pub fn bundled_text(name: &str) -> Option<&'static str> {
    let name = name.trim_end_matches(".toml").trim_end_matches(".scenario");
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

fn reference_table() -> toml::Table {
    let mut s = Scenario::default();
    s.analysis.accidental_offsets = Some(vec![0.0]);
    s.analysis.setting_duration = Some(1.0);
    toml::Table::try_from(&s).expect("default scenario serializes")
}

fn check_keys(input: &toml::Table, reference: &toml::Table, prefix: &str) -> Result<()> {
    for (key, value) in input {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match reference.get(key) {
            None => {
                let best = reference
                    .keys()
                    .map(|k| (strsim::jaro_winkler(key, k), k))
                    .max_by(|a, b| a.0.total_cmp(&b.0));
                let hint = match best {
                    Some((score, k)) if score > 0.7 => {
                        format!("; did you mean `{}`?", join(prefix, k))
                    }
                    _ => String::new(),
                };
                return Err(Error::config(path, format!("unknown key{hint}")));
            }
            Some(toml::Value::Table(sub)) => match value {
                toml::Value::Table(t) => check_keys(t, sub, &path)?,
                _ => return Err(Error::config(path, "expected a table")),
            },
            Some(_) => {}
        }
    }
    Ok(())
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |p| before.len() - p - 1)
        + 1;
    (line, column)
}

fn parse_error(text: &str, e: &toml::de::Error) -> Error {
    let (line, column) = e
        .span()
        .map(|sp| line_col(text, sp.start))
        .unwrap_or((0, 0));
    Error::Parse {
        line,
        column,
        message: e.message().to_string(),
    }
}
