//! VeReMi-style message ingestion and preprocessing.
//!
//! A raw dataset is a stream of beacon messages, each carrying the sender's
//! claimed position and speed plus a ground-truth attacker label. This module
//! parses the two supported encodings, optionally resamples to per-class
//! targets, serializes each record into the text line the classifiers consume,
//! encodes labels to dense class indices, and produces the train/test split.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ground-truth label carried by every message. Numeric codes follow the
/// VeReMi convention: 0 benign, then one bit per position-falsification
/// attack family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttackerType {
    Benign,
    Constant,
    ConstantOffset,
    Random,
    RandomOffset,
    EventualStop,
}

impl AttackerType {
    /// All labels in ascending numeric order.
    pub const ALL: [AttackerType; 6] = [
        AttackerType::Benign,
        AttackerType::Constant,
        AttackerType::ConstantOffset,
        AttackerType::Random,
        AttackerType::RandomOffset,
        AttackerType::EventualStop,
    ];

    pub fn code(self) -> u16 {
        match self {
            AttackerType::Benign => 0,
            AttackerType::Constant => 1,
            AttackerType::ConstantOffset => 2,
            AttackerType::Random => 4,
            AttackerType::RandomOffset => 8,
            AttackerType::EventualStop => 16,
        }
    }

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(AttackerType::Benign),
            1 => Some(AttackerType::Constant),
            2 => Some(AttackerType::ConstantOffset),
            4 => Some(AttackerType::Random),
            8 => Some(AttackerType::RandomOffset),
            16 => Some(AttackerType::EventualStop),
            _ => None,
        }
    }
}

impl fmt::Display for AttackerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// One beacon message: when it was sent, by whom, and the claimed kinematics.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageRecord {
    pub send_time: f64,
    pub sender_id: i64,
    pub message_id: i64,
    pub position: [f64; 3],
    pub speed: [f64; 3],
    pub attacker_type: AttackerType,
}

/// A serialized record ready for tokenization, with its encoded class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub class_index: usize,
    pub raw_label: u16,
}

/// Bijection between the raw labels present in a dataset and dense class
/// indices `0..n`. Indices follow the ascending numeric order of the labels,
/// so with all six labels present, raw 16 maps to index 5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapping {
    labels: Vec<u16>,
}

impl LabelMapping {
    /// Builds the mapping from whatever labels occur in `records`.
    pub fn from_records(records: &[MessageRecord]) -> Self {
        let mut labels: Vec<u16> = records.iter().map(|r| r.attacker_type.code()).collect();
        labels.sort_unstable();
        labels.dedup();
        LabelMapping { labels }
    }

    pub fn from_labels(mut labels: Vec<u16>) -> Self {
        labels.sort_unstable();
        labels.dedup();
        LabelMapping { labels }
    }

    pub fn index_of(&self, raw: u16) -> Option<usize> {
        self.labels.binary_search(&raw).ok()
    }

    pub fn label_at(&self, index: usize) -> Option<u16> {
        self.labels.get(index).copied()
    }

    /// Raw labels in ascending order; position equals class index.
    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Train/test partition of a labeled dataset.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<LabeledText>,
    pub test: Vec<LabeledText>,
    pub seed: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMode {
    /// Fail when a target asks for more records than exist.
    #[default]
    Strict,
    /// Cap each target at the available count.
    Lenient,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: unknown attacker label {value}")]
    UnknownLabel { line: usize, value: i64 },
    #[error("line {line}: non-finite value in field {field}")]
    NonFinite { line: usize, field: &'static str },
    #[error("resample target for label {label} is {want} but only {have} records exist")]
    InsufficientRecords { label: u16, want: usize, have: usize },
    #[error("cannot split an empty example list")]
    EmptyInput,
    #[error("split ratio {0} is outside (0, 1)")]
    BadRatio(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Expected CSV header, also written by [`write_csv`].
pub const CSV_HEADER: &str = "sendtime,sender,messageID,pos_x,pos_y,pos_z,spd_x,spd_y,spd_z,attackerType";

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    #[serde(rename = "sendTime")]
    send_time: f64,
    sender: i64,
    #[serde(rename = "messageID")]
    message_id: i64,
    pos: [f64; 3],
    spd: [f64; 3],
    #[serde(rename = "attackerType")]
    attacker_type: i64,
}

/// Parses a whole source into records, one per non-blank data row, preserving
/// input order. CSV input must begin with [`CSV_HEADER`]; the header row is
/// consumed and not emitted. Reported line numbers are 1-based over the raw
/// input, header included.
pub fn parse_records<R: Read>(source: R, format: RecordFormat) -> Result<Vec<MessageRecord>, DataError> {
    let reader = BufReader::new(source);
    let mut records = Vec::new();
    match format {
        RecordFormat::Jsonl => {
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                let trimmed = line.trim();
                if trimmed.is_empty() {
                    continue;
                }
                records.push(parse_json_line(trimmed, idx + 1)?);
            }
        }
        RecordFormat::Csv => {
            let mut lines = reader.lines();
            let header = match lines.next() {
                Some(h) => h?,
                None => return Ok(records),
            };
            if header.trim_end() != CSV_HEADER {
                return Err(DataError::MalformedRow {
                    line: 1,
                    reason: format!("expected header `{CSV_HEADER}`"),
                });
            }
            for (idx, line) in lines.enumerate() {
                let line = line?;
                let trimmed = line.trim();
                if trimmed.is_empty() {
                    continue;
                }
                records.push(parse_csv_line(trimmed, idx + 2)?);
            }
        }
    }
    Ok(records)
}

fn parse_json_line(line: &str, lineno: usize) -> Result<MessageRecord, DataError> {
    let raw: JsonRecord = serde_json::from_str(line).map_err(|e| DataError::MalformedRow {
        line: lineno,
        reason: e.to_string(),
    })?;
    let attacker_type = AttackerType::from_code(raw.attacker_type).ok_or(DataError::UnknownLabel {
        line: lineno,
        value: raw.attacker_type,
    })?;
    finalize_record(
        MessageRecord {
            send_time: raw.send_time,
            sender_id: raw.sender,
            message_id: raw.message_id,
            position: raw.pos,
            speed: raw.spd,
            attacker_type,
        },
        lineno,
    )
}

fn parse_csv_line(line: &str, lineno: usize) -> Result<MessageRecord, DataError> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 10 {
        return Err(DataError::MalformedRow {
            line: lineno,
            reason: format!("expected 10 fields, found {}", fields.len()),
        });
    }
    let float = |idx: usize, name: &str| -> Result<f64, DataError> {
        fields[idx].parse::<f64>().map_err(|_| DataError::MalformedRow {
            line: lineno,
            reason: format!("field {name}: `{}` is not a number", fields[idx]),
        })
    };
    let int = |idx: usize, name: &str| -> Result<i64, DataError> {
        fields[idx].parse::<i64>().map_err(|_| DataError::MalformedRow {
            line: lineno,
            reason: format!("field {name}: `{}` is not an integer", fields[idx]),
        })
    };
    let label = int(9, "attackerType")?;
    let attacker_type = AttackerType::from_code(label).ok_or(DataError::UnknownLabel {
        line: lineno,
        value: label,
    })?;
    finalize_record(
        MessageRecord {
            send_time: float(0, "sendtime")?,
            sender_id: int(1, "sender")?,
            message_id: int(2, "messageID")?,
            position: [float(3, "pos_x")?, float(4, "pos_y")?, float(5, "pos_z")?],
            speed: [float(6, "spd_x")?, float(7, "spd_y")?, float(8, "spd_z")?],
            attacker_type,
        },
        lineno,
    )
}

fn finalize_record(record: MessageRecord, lineno: usize) -> Result<MessageRecord, DataError> {
    const POS_FIELDS: [&str; 3] = ["pos_x", "pos_y", "pos_z"];
    const SPD_FIELDS: [&str; 3] = ["spd_x", "spd_y", "spd_z"];
    if !record.send_time.is_finite() {
        return Err(DataError::NonFinite { line: lineno, field: "send_time" });
    }
    for (i, v) in record.position.iter().enumerate() {
        if !v.is_finite() {
            return Err(DataError::NonFinite { line: lineno, field: POS_FIELDS[i] });
        }
    }
    for (i, v) in record.speed.iter().enumerate() {
        if !v.is_finite() {
            return Err(DataError::NonFinite { line: lineno, field: SPD_FIELDS[i] });
        }
    }
    if record.send_time < 0.0 {
        return Err(DataError::MalformedRow {
            line: lineno,
            reason: format!("send_time must be non-negative, got {}", record.send_time),
        });
    }
    Ok(record)
}

/// Writes records as canonical JSONL (the inverse of the JSONL parser).
pub fn write_jsonl<W: Write>(records: &[MessageRecord], mut out: W) -> Result<(), DataError> {
    for r in records {
        let raw = JsonRecord {
            send_time: r.send_time,
            sender: r.sender_id,
            message_id: r.message_id,
            pos: r.position,
            spd: r.speed,
            attacker_type: r.attacker_type.code() as i64,
        };
        serde_json::to_writer(&mut out, &raw).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes records as CSV with the canonical header.
pub fn write_csv<W: Write>(records: &[MessageRecord], mut out: W) -> Result<(), DataError> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.send_time,
            r.sender_id,
            r.message_id,
            r.position[0],
            r.position[1],
            r.position[2],
            r.speed[0],
            r.speed[1],
            r.speed[2],
            r.attacker_type.code()
        )?;
    }
    Ok(())
}

/// Downsamples each labeled class to its target count.
///
/// For every label in `targets` (visited in ascending label order), the
/// requested number of records is chosen uniformly without replacement from
/// that label's records using a single generator seeded with `seed`. Output
/// order is label-ascending, then original input order within a label. Labels
/// absent from `targets` are dropped. Record contents are preserved
/// bit-for-bit; only selection and order change.
pub fn resample(
    records: &[MessageRecord],
    targets: &BTreeMap<u16, usize>,
    seed: u64,
    mode: ResampleMode,
) -> Result<Vec<MessageRecord>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (&label, &want) in targets {
        let mut indices: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.attacker_type.code() == label)
            .map(|(i, _)| i)
            .collect();
        let have = indices.len();
        let take = match mode {
            ResampleMode::Strict if want > have => {
                return Err(DataError::InsufficientRecords { label, want, have });
            }
            ResampleMode::Strict => want,
            ResampleMode::Lenient => want.min(have),
        };
        // Partial Fisher-Yates: after i swaps, indices[..i] is a uniform
        // draw without replacement.
        for i in 0..take {
            let j = rng.random_range(i..have);
            indices.swap(i, j);
        }
        indices.truncate(take);
        indices.sort_unstable();
        out.extend(indices.into_iter().map(|i| records[i].clone()));
    }
    Ok(out)
}

/// Serializes one record into its text-feature line: the nine numeric fields
/// joined by single spaces, in the order send_time, sender_id, message_id,
/// position x/y/z, speed x/y/z. Floating-point fields are rendered with
/// exactly two decimal places, rounding the stored binary value half-to-even;
/// integer fields in plain decimal.
pub fn build_text(record: &MessageRecord) -> String {
    format!(
        "{:.2} {} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
        record.send_time,
        record.sender_id,
        record.message_id,
        record.position[0],
        record.position[1],
        record.position[2],
        record.speed[0],
        record.speed[1],
        record.speed[2],
    )
}

/// Serializes every record and encodes its label against the mapping derived
/// from the labels present in `records`.
pub fn encode_labels(records: &[MessageRecord]) -> (Vec<LabeledText>, LabelMapping) {
    let mapping = LabelMapping::from_records(records);
    let examples = records
        .iter()
        .map(|r| {
            let raw = r.attacker_type.code();
            LabeledText {
                text: build_text(r),
                class_index: mapping.index_of(raw).expect("label present by construction"),
                raw_label: raw,
            }
        })
        .collect();
    (examples, mapping)
}

/// Splits examples into train and test by a seeded uniform shuffle; the first
/// `floor(ratio * N)` shuffled examples become the training set. The split is
/// not stratified.
pub fn split_train_test(
    examples: Vec<LabeledText>,
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit, DataError> {
    if examples.is_empty() {
        return Err(DataError::EmptyInput);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::BadRatio(ratio));
    }
    let mut shuffled = examples;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_train = (ratio * shuffled.len() as f64).floor() as usize;
    let test = shuffled.split_off(n_train);
    Ok(DatasetSplit { train: shuffled, test, seed, ratio })
}
