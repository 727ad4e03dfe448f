//! On-disk dataset: a text manifest plus one binary payload per case.
//!
//! Manifest (`manifest.txt`):
//!
//! ```text
//! format: tenca-dataset
//! version: 1
//! cases: 2
//! delta_t_s: 8
//! case_0000 64 64 3 60,240,960 case_0000.tnca 5d1f09a2
//! case_0001 64 64 2 120,480 case_0001.tnca 0c44be71
//! ```
//!
//! Each case line holds id, height, width, frame count, comma-separated
//! times in seconds, payload file name and the CRC-32 of the whole payload
//! file in hex.
//!
//! Payload: magic `TNCA`, `u16` version, `u16` k, `u32` h, `u32` w, then
//! `k + 1` planes of `h·w` little-endian `f32` (pre-contrast first), then
//! the CRC-32 of everything before it. All integers are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Result, TencaError};
use crate::image::Image;
use crate::trainer::{Frame, TrainingCase};

pub const PAYLOAD_MAGIC: &[u8; 4] = b"TNCA";
pub const PAYLOAD_VERSION: u16 = 1;
pub const MANIFEST_FORMAT: &str = "tenca-dataset";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
const HEADER_LEN: usize = 16;

/// One case line of the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseEntry {
    pub case_id: String,
    pub height: usize,
    pub width: usize,
    pub times: Vec<f64>,
    pub file: String,
    pub checksum: u32,
}

impl CaseEntry {
    pub fn k(&self) -> usize {
        self.times.len()
    }

    /// Exact payload size implied by the entry's shape.
    pub fn payload_len(&self) -> usize {
        payload_len(self.k(), self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub version: u32,
    pub delta_t_s: f64,
    pub cases: Vec<CaseEntry>,
}

fn payload_len(k: usize, h: usize, w: usize) -> usize {
    HEADER_LEN + (k + 1) * h * w * 4 + 4
}

/// Serialises a case to payload bytes.
pub fn encode_case(case: &TrainingCase) -> Result<Vec<u8>> {
    case.validate()?;
    let (h, w) = case.dims();
    let k = case.k();
    let mut out = Vec::with_capacity(payload_len(k, h, w));
    out.extend_from_slice(PAYLOAD_MAGIC);
    out.extend_from_slice(&PAYLOAD_VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u16).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for plane in std::iter::once(&case.pre_contrast).chain(case.targets()) {
        for v in plane.pixels() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Parses payload bytes. `path` only labels errors.
///
/// Checks, in order: header presence, magic, version, length, trailing
/// checksum, and that the header agrees with `entry`.
pub fn decode_case(bytes: &[u8], entry: &CaseEntry, path: &Path) -> Result<TrainingCase> {
    if bytes.len() < HEADER_LEN {
        return Err(TencaError::Truncated {
            path: path.into(),
            missing: HEADER_LEN - bytes.len(),
        });
    }
    if &bytes[..4] != PAYLOAD_MAGIC {
        return Err(TencaError::format(path, "not a TNCA payload (bad magic)"));
    }
    let version = u16_at(bytes, 4);
    if version != PAYLOAD_VERSION {
        return Err(TencaError::Version {
            path: path.into(),
            found: version.into(),
            expected: PAYLOAD_VERSION.into(),
        });
    }
    let k = u16_at(bytes, 6) as usize;
    let h = u32_at(bytes, 8) as usize;
    let w = u32_at(bytes, 12) as usize;
    let want = payload_len(k, h, w);
    if bytes.len() < want {
        return Err(TencaError::Truncated {
            path: path.into(),
            missing: want - bytes.len(),
        });
    }
    if bytes.len() > want {
        return Err(TencaError::format(path, format!("{} trailing bytes", bytes.len() - want)));
    }
    let stored = u32_at(bytes, want - 4);
    let computed = crc32fast::hash(&bytes[..want - 4]);
    if stored != computed {
        return Err(TencaError::Checksum {
            path: path.into(),
            stored,
            computed,
        });
    }
    if (k, h, w) != (entry.k(), entry.height, entry.width) {
        return Err(TencaError::format(
            path,
            format!(
                "payload is k={k} {h}x{w} but the manifest says k={} {}x{}",
                entry.k(),
                entry.height,
                entry.width
            ),
        ));
    }
    let plane_bytes = h * w * 4;
    let planes: Vec<Image> = bytes[HEADER_LEN..want - 4]
        .chunks_exact(plane_bytes)
        .map(|p| {
            let data = p
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Image::new(h, w, data)
        })
        .collect::<Result<_>>()?;
    let mut planes = planes.into_iter();
    let pre = planes.next().expect("k + 1 planes");
    let frames = planes
        .zip(&entry.times)
        .map(|(target, &time_s)| Frame { target, time_s })
        .collect();
    TrainingCase::new(entry.case_id.clone(), pre, frames)
}

fn format_times(times: &[f64]) -> String {
    times.iter().map(|t| format!("{t}")).collect::<Vec<_>>().join(",")
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "format: {MANIFEST_FORMAT}\nversion: {}\ncases: {}\ndelta_t_s: {}\n",
            self.version,
            self.cases.len(),
            self.delta_t_s
        );
        for e in &self.cases {
            s.push_str(&format!(
                "{} {} {} {} {} {} {:08x}\n",
                e.case_id,
                e.height,
                e.width,
                e.k(),
                format_times(&e.times),
                e.file,
                e.checksum
            ));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, msg: String| TencaError::format(path, format!("line {line}: {msg}"));
        let mut format = None;
        let mut version = None;
        let mut count = None;
        let mut delta_t_s = None;
        let mut cases = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((key, value)) = line.split_once(':') {
                let value = value.trim();
                match key.trim() {
                    "format" => format = Some(value.to_string()),
                    "version" => version = Some(value.parse::<u32>().map_err(|e| bad(n, format!("version: {e}")))?),
                    "cases" => count = Some(value.parse::<usize>().map_err(|e| bad(n, format!("cases: {e}")))?),
                    "delta_t_s" => delta_t_s = Some(value.parse::<f64>().map_err(|e| bad(n, format!("delta_t_s: {e}")))?),
                    other => return Err(bad(n, format!("unknown header key {other:?}"))),
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 7 {
                return Err(bad(n, format!("expected 7 fields, found {}", fields.len())));
            }
            let num = |s: &str, what: &str| s.parse::<usize>().map_err(|e| bad(n, format!("{what}: {e}")));
            let height = num(fields[1], "height")?;
            let width = num(fields[2], "width")?;
            let k = num(fields[3], "k")?;
            let times = fields[4]
                .split(',')
                .map(|t| t.parse::<f64>().map_err(|e| bad(n, format!("time {t:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if times.len() != k {
                return Err(bad(n, format!("k = {k} but {} times listed", times.len())));
            }
            if times.windows(2).any(|p| p[1] <= p[0]) {
                return Err(bad(n, "times must be strictly increasing".into()));
            }
            let checksum = u32::from_str_radix(fields[6], 16).map_err(|e| bad(n, format!("checksum: {e}")))?;
            cases.push(CaseEntry {
                case_id: fields[0].to_string(),
                height,
                width,
                times,
                file: fields[5].to_string(),
                checksum,
            });
        }
        match format.as_deref() {
            Some(MANIFEST_FORMAT) => {}
            Some(other) => return Err(TencaError::format(path, format!("unknown manifest format {other:?}"))),
            None => return Err(TencaError::format(path, "missing 'format' header")),
        }
        let version = version.ok_or_else(|| TencaError::format(path, "missing 'version' header"))?;
        if version != MANIFEST_VERSION {
            return Err(TencaError::Version {
                path: path.into(),
                found: version,
                expected: MANIFEST_VERSION,
            });
        }
        let delta_t_s = delta_t_s.ok_or_else(|| TencaError::format(path, "missing 'delta_t_s' header"))?;
        let count = count.ok_or_else(|| TencaError::format(path, "missing 'cases' header"))?;
        if count != cases.len() {
            return Err(TencaError::format(
                path,
                format!("header says {count} cases, found {}", cases.len()),
            ));
        }
        let mut files: Vec<&str> = cases.iter().map(|c| c.file.as_str()).collect();
        files.sort_unstable();
        if files.windows(2).any(|p| p[0] == p[1]) {
            return Err(TencaError::format(path, "two cases share a payload file"));
        }
        Ok(Self {
            version,
            delta_t_s,
            cases,
        })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| TencaError::io(&path, e))?;
        Self::parse(&text, &path)
    }
}

fn entry_for(case: &TrainingCase, bytes: &[u8]) -> Result<CaseEntry> {
    if case.case_id.is_empty() || case.case_id.contains(|c: char| c.is_whitespace() || c == ':' || c == '/' || c == '\\') {
        return Err(TencaError::Data(format!(
            "case id {:?} must be non-empty without whitespace, ':' or path separators",
            case.case_id
        )));
    }
    let (height, width) = case.dims();
    Ok(CaseEntry {
        case_id: case.case_id.clone(),
        height,
        width,
        times: case.times(),
        file: format!("{}.tnca", case.case_id),
        checksum: crc32fast::hash(bytes),
    })
}

/// Writes one payload into `dir` and returns its manifest entry.
pub fn write_case(dir: &Path, case: &TrainingCase) -> Result<CaseEntry> {
    let bytes = encode_case(case)?;
    let entry = entry_for(case, &bytes)?;
    let path = dir.join(&entry.file);
    fs::write(&path, &bytes).map_err(|e| TencaError::io(&path, e))?;
    Ok(entry)
}

/// Reads the payload named by `entry` from `dir`.
pub fn read_case(dir: &Path, entry: &CaseEntry) -> Result<TrainingCase> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| TencaError::io(&path, e))?;
    let case = decode_case(&bytes, entry, &path)?;
    let whole = crc32fast::hash(&bytes);
    if whole != entry.checksum {
        return Err(TencaError::Checksum {
            path,
            stored: entry.checksum,
            computed: whole,
        });
    }
    Ok(case)
}

/// Writes all payloads and the manifest into `dir` (created if missing).
/// Encoding runs in parallel; files are written in case order.
pub fn write_dataset(dir: &Path, cases: &[TrainingCase], delta_t_s: f64) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| TencaError::io(dir, e))?;
    let encoded: Vec<Vec<u8>> = cases.par_iter().map(encode_case).collect::<Result<_>>()?;
    let mut entries = Vec::with_capacity(cases.len());
    for (case, bytes) in cases.iter().zip(&encoded) {
        let entry = entry_for(case, bytes)?;
        if entries.iter().any(|e: &CaseEntry| e.file == entry.file) {
            return Err(TencaError::Data(format!("duplicate case id {:?}", case.case_id)));
        }
        let path = dir.join(&entry.file);
        fs::write(&path, bytes).map_err(|e| TencaError::io(&path, e))?;
        entries.push(entry);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        delta_t_s,
        cases: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_text()).map_err(|e| TencaError::io(&path, e))?;
    Ok(manifest)
}

/// Reads the manifest and every payload in `dir`.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<TrainingCase>)> {
    let manifest = DatasetManifest::read(dir)?;
    let cases = manifest
        .cases
        .par_iter()
        .map(|e| read_case(dir, e))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, cases))
}

/// Path of the payload for `entry` inside `dir`.
pub fn payload_path(dir: &Path, entry: &CaseEntry) -> PathBuf {
    dir.join(&entry.file)
}
