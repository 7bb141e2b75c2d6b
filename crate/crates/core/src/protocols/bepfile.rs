//! `F(k)`: one party's timestamped voltage/current record of BEP `k`.
//!
//! Text layout:
//!
//! ```text
//! party=Bob,k=3,sample_rate=200000,local_start=0.030005000,config=<hex>
//! 0,1.23456789012e-3,-4.56789012345e-7
//! 1,...
//! <hex AuthTag>
//! ```
//!
//! Samples carry 12 significant digits and the start time 9 fractional
//! digits. [`build_bep_file`] rounds to that precision up front, so a file
//! survives serialize → parse unchanged.

use serde::Serialize;
use thiserror::Error;

use crate::auth::{hash_with, AuthError, AuthTag, Digest, HashAlgorithm};
use crate::line::{BepMeasurement, LineConfig};
use crate::timebase::Party;

#[derive(Debug, Error, PartialEq)]
pub enum BepFileError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Tag(#[from] AuthError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BepFile {
    pub party: Party,
    pub bep_index: u64,
    pub sample_rate: f64,
    pub local_start: f64,
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
    pub config_digest: Digest,
}

fn round_sample(x: f64) -> f64 {
    format_sample(x).parse().expect("formatted float parses")
}

fn round_start(t: f64) -> f64 {
    format_start(t).parse().expect("formatted float parses")
}

fn format_sample(x: f64) -> String {
    format!("{x:.11e}")
}

fn format_start(t: f64) -> String {
    format!("{t:.9}")
}

/// Digest identifying the line parameters a file was recorded under.
pub fn config_digest(config: &LineConfig, algorithm: HashAlgorithm) -> Digest {
    #[derive(Serialize)]
    struct Canonical<'a>(&'a LineConfig);
    let text = serde_json::to_string(&Canonical(config)).expect("config serializes");
    hash_with(algorithm, text.as_bytes())
}

pub fn build_bep_file(
    meas: &BepMeasurement,
    config: &LineConfig,
    algorithm: HashAlgorithm,
) -> Result<BepFile, BepFileError> {
    if meas.voltage.is_empty() {
        return Err(BepFileError::Degenerate(format!(
            "BEP {} of {} has no samples",
            meas.bep_index, meas.party
        )));
    }
    if meas.voltage.len() != meas.current.len() {
        return Err(BepFileError::Degenerate(
            "voltage and current records differ in length".into(),
        ));
    }
    Ok(BepFile {
        party: meas.party,
        bep_index: meas.bep_index,
        sample_rate: meas.voltage.sample_rate(),
        local_start: round_start(meas.local_start),
        voltage: meas.voltage.samples().iter().copied().map(round_sample).collect(),
        current: meas.current.samples().iter().copied().map(round_sample).collect(),
        config_digest: config_digest(config, algorithm),
    })
}

impl BepFile {
    pub fn len(&self) -> usize {
        self.voltage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltage.is_empty()
    }

    /// Local timestamp of sample `n`.
    pub fn local_time(&self, n: usize) -> f64 {
        self.local_start + n as f64 / self.sample_rate
    }

    fn header(&self) -> String {
        format!(
            "party={},k={},sample_rate={},local_start={},config={}",
            self.party,
            self.bep_index,
            self.sample_rate,
            format_start(self.local_start),
            self.config_digest.to_hex()
        )
    }

    /// Header and sample lines; this is what gets hashed.
    pub fn payload_text(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for (i, (v, c)) in self.voltage.iter().zip(&self.current).enumerate() {
            out.push_str(&format!("{i},{},{}\n", format_sample(*v), format_sample(*c)));
        }
        out
    }

    pub fn to_text(&self, tag: Option<&AuthTag>) -> String {
        let mut out = self.payload_text();
        if let Some(tag) = tag {
            out.push_str(&tag.to_hex());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<(Self, Option<AuthTag>), BepFileError> {
        let err = |line: usize, msg: &str| BepFileError::Parse {
            line,
            msg: msg.to_owned(),
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty file"))?;

        let mut party = None;
        let mut bep_index = None;
        let mut sample_rate = None;
        let mut local_start = None;
        let mut config = None;
        for item in header.split(',') {
            let (key, value) = item.split_once('=').ok_or_else(|| err(1, "expected key=value"))?;
            match key {
                "party" => {
                    party = Some(match value {
                        "Alice" => Party::Alice,
                        "Bob" => Party::Bob,
                        "Eve" => Party::Eve,
                        _ => return Err(err(1, "unknown party")),
                    })
                }
                "k" => bep_index = Some(value.parse::<u64>().map_err(|_| err(1, "bad k"))?),
                "sample_rate" => {
                    sample_rate = Some(value.parse::<f64>().map_err(|_| err(1, "bad sample_rate"))?)
                }
                "local_start" => {
                    local_start = Some(value.parse::<f64>().map_err(|_| err(1, "bad local_start"))?)
                }
                "config" => config = Some(Digest::from_hex(value).map_err(|_| err(1, "bad config digest"))?),
                _ => return Err(err(1, "unknown header key")),
            }
        }

        let mut voltage = Vec::new();
        let mut current = Vec::new();
        let mut tag = None;
        for (i, line) in lines {
            let lineno = i + 1;
            if tag.is_some() {
                return Err(err(lineno, "content after tag line"));
            }
            let mut fields = line.split(',');
            match (fields.next(), fields.next(), fields.next(), fields.next()) {
                (Some(idx), Some(v), Some(c), None) => {
                    let idx: usize = idx.parse().map_err(|_| err(lineno, "bad index"))?;
                    if idx != voltage.len() {
                        return Err(err(lineno, "sample index out of sequence"));
                    }
                    voltage.push(v.parse().map_err(|_| err(lineno, "bad voltage"))?);
                    current.push(c.parse().map_err(|_| err(lineno, "bad current"))?);
                }
                (Some(hex), None, None, None) => tag = Some(AuthTag::from_hex(hex)?),
                _ => return Err(err(lineno, "expected index,voltage,current")),
            }
        }

        let file = BepFile {
            party: party.ok_or_else(|| err(1, "missing party"))?,
            bep_index: bep_index.ok_or_else(|| err(1, "missing k"))?,
            sample_rate: sample_rate.ok_or_else(|| err(1, "missing sample_rate"))?,
            local_start: local_start.ok_or_else(|| err(1, "missing local_start"))?,
            voltage,
            current,
            config_digest: config.ok_or_else(|| err(1, "missing config"))?,
        };
        Ok((file, tag))
    }
}
