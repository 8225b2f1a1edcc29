//! Time-tag records and streams.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::povm::Slot;
use crate::state::Bloch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Idler,
    Signal,
    /// Second output of the signal splitter in the heralded-autocorrelation layout.
    SignalB,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Idler => "idler",
            Channel::Signal => "signal",
            Channel::SignalB => "signal_b",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idler" => Ok(Channel::Idler),
            "signal" => Ok(Channel::Signal),
            "signal_b" => Ok(Channel::SignalB),
            other => Err(Error::Input(format!("unknown channel `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TagKind {
    /// Photon from a time-bin entangled pair; stored by the comb.
    Pair,
    /// Broadband photon outside the comb acceptance.
    Noise,
    Dark,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tag {
    pub time: f64,
    pub channel: Channel,
    pub kind: TagKind,
    /// Analyzer output slot, once the photon has passed an interferometer.
    pub slot: Option<Slot>,
    /// Time-bin qubit carried by the photon before analysis.
    pub qubit: Option<Bloch>,
}

impl Tag {
    pub fn new(time: f64, channel: Channel) -> Self {
        Self {
            time,
            channel,
            kind: TagKind::Pair,
            slot: None,
            qubit: None,
        }
    }

    pub fn with_kind(mut self, kind: TagKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_qubit(mut self, q: Bloch) -> Self {
        self.qubit = Some(q);
        self
    }

    pub fn with_slot(mut self, s: Slot) -> Self {
        self.slot = Some(s);
        self
    }
}

pub(crate) fn sort_tags(tags: &mut [Tag]) {
    tags.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.channel.cmp(&b.channel)));
}

/// Detection events sorted by time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimeTagStream {
    tags: Vec<Tag>,
}

impl TimeTagStream {
    /// Sorts the tags; rejects non-finite or negative times.
    pub fn new(mut tags: Vec<Tag>) -> Result<Self> {
        if let Some(t) = tags.iter().find(|t| !t.time.is_finite() || t.time < 0.0) {
            return Err(Error::Input(format!("invalid tag time {}", t.time)));
        }
        sort_tags(&mut tags);
        Ok(Self { tags })
    }

    /// Plain arrival times on one channel.
    pub fn from_times(times: &[f64], channel: Channel) -> Result<Self> {
        Self::new(times.iter().map(|&t| Tag::new(t, channel)).collect())
    }

    pub(crate) fn from_sorted(tags: Vec<Tag>) -> Self {
        debug_assert!(tags.windows(2).all(|w| w[0].time <= w[1].time));
        Self { tags }
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<Tag> {
        self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.tags.iter().map(|t| t.time).collect()
    }

    /// Tags of a single channel.
    pub fn channel(&self, ch: Channel) -> TimeTagStream {
        Self {
            tags: self
                .tags
                .iter()
                .filter(|t| t.channel == ch)
                .copied()
                .collect(),
        }
    }

    pub fn merge(streams: &[&TimeTagStream]) -> TimeTagStream {
        let mut tags: Vec<Tag> = streams
            .iter()
            .flat_map(|s| s.tags.iter().copied())
            .collect();
        sort_tags(&mut tags);
        Self { tags }
    }

    /// One `time channel` line per tag, times with 12 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.tags.len() * 28);
        for t in &self.tags {
            out.push_str(&format!("{:.11e} {}\n", t.time, t.channel));
        }
        out
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::with_capacity(self.tags.len() * 40);
        for t in &self.tags {
            out.push_str(&format!(
                "{{\"time_s\":{:.11e},\"channel\":\"{}\"}}\n",
                t.time, t.channel
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tags = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let time: f64 =
                parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: k + 1,
                        column: 1,
                        message: "expected a time in seconds".into(),
                    })?;
            let channel: Channel = parts
                .next()
                .ok_or_else(|| Error::Parse {
                    line: k + 1,
                    column: line.find(char::is_whitespace).unwrap_or(line.len()) + 1,
                    message: "expected a channel name".into(),
                })?
                .parse()?;
            tags.push(Tag::new(time, channel));
        }
        Self::new(tags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_and_validates() {
        let s = TimeTagStream::from_times(&[3.0, 1.0, 2.0], Channel::Idler).unwrap();
        assert_eq!(s.times(), vec![1.0, 2.0, 3.0]);
        assert!(TimeTagStream::from_times(&[-1.0], Channel::Idler).is_err());
        assert!(TimeTagStream::from_times(&[f64::NAN], Channel::Idler).is_err());
    }

    #[test]
    fn text_round_trip() {
        let s = TimeTagStream::new(vec![
            Tag::new(1.234567890123e-3, Channel::Signal),
            Tag::new(0.5, Channel::Idler),
            Tag::new(0.75, Channel::SignalB),
        ])
        .unwrap();
        let text = s.to_text();
        assert_eq!(text.lines().next().unwrap(), "1.23456789012e-3 signal");
        let back = TimeTagStream::from_text(&text).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.tags()[2].channel, Channel::SignalB);
        assert!(TimeTagStream::from_text("0.1 photon").is_err());
        assert!(TimeTagStream::from_text("abc idler").is_err());
    }
}
