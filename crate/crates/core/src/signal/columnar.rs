//! Plain-text recording format.
//!
//! ```text
//! # dataset: lab-a
//! # rate: 500
//! # marker: 1250 attended
//! # marker: 1730 unattended
//! Fp1,Fp2,Cz,...
//! 1.25e-6,-3.0e-7,...
//! ```
//!
//! Header lines start with `#` and hold `key: value` pairs; `dataset` and
//! `rate` are required and `marker` may repeat. The first other line names
//! the channels, and every following line is one time sample with one
//! comma-separated value per channel. Blank lines are ignored.
//!
//! Several recordings may follow each other in one file; a `# dataset:`
//! line after sample rows starts the next one.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::{Label, RawRecording};
use crate::error::{Error, Result};

pub fn read_columnar(reader: impl BufRead) -> Result<RawRecording> {
    let mut dataset_id = None;
    let mut rate = None;
    let mut markers = Vec::new();
    let mut channels: Option<Vec<String>> = None;
    let mut samples: Vec<Vec<f64>> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Ingestion(format!("line {}: {e}", lineno + 1)))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Ingestion(format!("line {}: {msg}", lineno + 1));
        if let Some(header) = line.strip_prefix('#') {
            let Some((key, value)) = header.split_once(':') else {
                continue;
            };
            let value = value.trim();
            match key.trim() {
                "dataset" => dataset_id = Some(value.to_string()),
                "rate" => {
                    rate = Some(value.parse::<f64>().map_err(|e| bad(format!("rate `{value}`: {e}")))?)
                }
                "marker" => {
                    let mut parts = value.split_whitespace();
                    let (Some(idx), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
                        return Err(bad(format!("marker `{value}` is not `<index> <label>`")));
                    };
                    let idx = idx.parse::<usize>().map_err(|e| bad(format!("marker index: {e}")))?;
                    markers.push((idx, label.parse::<Label>().map_err(bad)?));
                }
                _ => {}
            }
            continue;
        }
        match &channels {
            None => {
                let names: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
                samples = vec![Vec::new(); names.len()];
                channels = Some(names);
            }
            Some(names) => {
                let mut count = 0;
                for (i, field) in line.split(',').enumerate() {
                    if i >= names.len() {
                        return Err(bad(format!("more than {} values", names.len())));
                    }
                    let v = field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| bad(format!("value `{}`: {e}", field.trim())))?;
                    samples[i].push(v);
                    count += 1;
                }
                if count != names.len() {
                    return Err(bad(format!("{count} values, expected {}", names.len())));
                }
            }
        }
    }

    let rec = RawRecording {
        channels: channels.ok_or_else(|| Error::Ingestion("no channel header line".into()))?,
        rate: rate.ok_or_else(|| Error::Ingestion("missing `# rate:` header".into()))?,
        samples,
        markers,
        dataset_id: dataset_id.ok_or_else(|| Error::Ingestion("missing `# dataset:` header".into()))?,
    };
    rec.validate()?;
    Ok(rec)
}

/// Reads every recording in a possibly multi-recording file.
pub fn read_columnar_all(mut reader: impl BufRead) -> Result<Vec<RawRecording>> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::Ingestion(format!("reading recording text: {e}")))?;
    let mut blocks: Vec<String> = vec![String::new()];
    let mut has_data = false;
    for line in text.lines() {
        let t = line.trim();
        let starts_block = t.strip_prefix('#').and_then(|h| h.split_once(':')).is_some_and(|(k, _)| k.trim() == "dataset");
        if starts_block && has_data {
            blocks.push(String::new());
            has_data = false;
        }
        if !t.is_empty() && !t.starts_with('#') {
            has_data = true;
        }
        let block = blocks.last_mut().expect("at least one block");
        block.push_str(line);
        block.push('\n');
    }
    blocks.iter().map(|b| read_columnar(b.as_bytes())).collect()
}

pub fn write_columnar(rec: &RawRecording, mut writer: impl Write) -> std::io::Result<()> {
    writeln!(writer, "# dataset: {}", rec.dataset_id)?;
    writeln!(writer, "# rate: {}", rec.rate)?;
    for (idx, label) in &rec.markers {
        writeln!(writer, "# marker: {idx} {label}")?;
    }
    writeln!(writer, "{}", rec.channels.join(","))?;
    let mut row = String::new();
    for t in 0..rec.len() {
        row.clear();
        for (i, ch) in rec.samples.iter().enumerate() {
            if i > 0 {
                row.push(',');
            }
            write!(row, "{:e}", ch[t]).expect("writing to a String");
        }
        writeln!(writer, "{row}")?;
    }
    Ok(())
}
