//! Corpus persistence: JSONL records with inline frames or a binary
//! frame-feature sidecar per record.
//!
//! JSONL line shape:
//! `{"id": .., "d_in": .., "frames": [[..]] | "frames_file": "..", "long": {..}, "short": {..}}`
//! UTF-8, LF line endings, deterministic field order.
//!
//! Sidecar: magic "VCXF", u32 version=1, u32 n_frames, u32 d_in, then
//! little-endian f32 row-major frame rows.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusMeta, Description, SampleRecord};
use crate::{Error, Result};

const FRAMES_MAGIC: &[u8; 4] = b"VCXF";
const FRAMES_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    d_in: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<Vec<f32>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    frames_file: Option<String>,
    long: Description,
    short: Description,
}

/// Write the corpus as JSONL with inline frame values.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    save_lines(corpus, path.as_ref(), None)
}

/// Write the corpus as JSONL plus one binary frames file per record under
/// `<parent>/<frames_dir>/<id>.vcxf`, referenced via `frames_file`.
pub fn save_corpus_with_sidecar(
    corpus: &Corpus,
    path: impl AsRef<Path>,
    frames_dir: &str,
) -> Result<()> {
    save_lines(corpus, path.as_ref(), Some(frames_dir))
}

fn save_lines(corpus: &Corpus, path: &Path, frames_dir: Option<&str>) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::InvalidArgument("empty corpus path".into()));
    }
    corpus.validate()?;
    let parent = path.parent().map(|p| p.to_path_buf()).unwrap_or_default();
    if let Some(dir) = frames_dir {
        fs::create_dir_all(parent.join(dir))?;
    }
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    for rec in &corpus.records {
        let line = match frames_dir {
            None => RecordLine {
                id: rec.id.clone(),
                d_in: corpus.d_in,
                frames: Some(rec.frames.clone()),
                frames_file: None,
                long: rec.long.clone(),
                short: rec.short.clone(),
            },
            Some(dir) => {
                let rel = format!("{dir}/{}.vcxf", rec.id);
                write_frames_file(parent.join(&rel), &rec.frames)?;
                RecordLine {
                    id: rec.id.clone(),
                    d_in: corpus.d_in,
                    frames: None,
                    frames_file: Some(rel),
                    long: rec.long.clone(),
                    short: rec.short.clone(),
                }
            }
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Load a corpus, validating every type invariant; frame sidecars are
/// resolved relative to the corpus file's directory.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    let parent = path.parent().map(|p| p.to_path_buf()).unwrap_or_default();
    let reader = BufReader::new(file);

    let mut records = Vec::new();
    let mut d_in: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        match d_in {
            None => d_in = Some(parsed.d_in),
            Some(d) if d != parsed.d_in => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("inconsistent d_in: {} (corpus uses {d})", parsed.d_in),
                })
            }
            _ => {}
        }
        let frames = match (parsed.frames, parsed.frames_file) {
            (Some(frames), None) => frames,
            (None, Some(rel)) => read_frames_file(parent.join(&rel))?,
            (Some(_), Some(_)) => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "record has both frames and frames_file".into(),
                })
            }
            (None, None) => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "record missing frames (or frames_file)".into(),
                })
            }
        };
        records.push(SampleRecord {
            id: parsed.id,
            frames,
            long: parsed.long,
            short: parsed.short,
        });
    }

    let d_in = d_in.ok_or_else(|| Error::Validation("corpus file has no records".into()))?;
    let corpus = Corpus {
        records,
        d_in,
        meta: CorpusMeta {
            seed: None,
            config_echo: None,
            source: format!("loaded:{}", path.display()),
        },
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Write one record's frames in the binary sidecar format.
pub fn write_frames_file(path: impl AsRef<Path>, frames: &[Vec<f32>]) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("write_frames_file"));
    }
    let d_in = frames[0].len();
    let file = fs::File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    out.write_all(FRAMES_MAGIC)?;
    out.write_all(&FRAMES_VERSION.to_le_bytes())?;
    out.write_all(&(frames.len() as u32).to_le_bytes())?;
    out.write_all(&(d_in as u32).to_le_bytes())?;
    for row in frames {
        if row.len() != d_in {
            return Err(Error::DimensionMismatch {
                context: "write_frames_file row",
                expected: d_in,
                got: row.len(),
            });
        }
        for &v in row {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read one record's frames from the binary sidecar format.
pub fn read_frames_file(path: impl AsRef<Path>) -> Result<Vec<Vec<f32>>> {
    let path = path.as_ref();
    let mut file = fs::File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header).map_err(|_| {
        Error::Validation(format!("frames file {} truncated header", path.display()))
    })?;
    if &header[0..4] != FRAMES_MAGIC {
        return Err(Error::Validation(format!(
            "frames file {}: bad magic {:?} (expected {:?})",
            path.display(),
            &header[0..4],
            FRAMES_MAGIC
        )));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FRAMES_VERSION {
        return Err(Error::Validation(format!(
            "frames file {}: unsupported version {version}",
            path.display()
        )));
    }
    let n_frames = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let d_in = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    file.read_to_end(&mut body)?;
    let expected = n_frames * d_in * 4;
    if body.len() != expected {
        return Err(Error::Validation(format!(
            "frames file {}: expected {expected} payload bytes, got {}",
            path.display(),
            body.len()
        )));
    }
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let mut row = Vec::with_capacity(d_in);
        for j in 0..d_in {
            let off = (f * d_in + j) * 4;
            row.push(f32::from_le_bytes(body[off..off + 4].try_into().unwrap()));
        }
        frames.push(row);
    }
    Ok(frames)
}
