//! Flat `key = value` configuration files with `[section]` headers.
//!
//! `#` starts a comment. Every key must be known to the consumer; leftovers
//! are reported with their line number. Serialisation is canonical: fixed
//! section and key order, every key written, floats in shortest
//! round-trip form.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Result, TencaError};
use crate::phantom::{KineticsRange, PhantomSpec, Range};
use crate::trainer::{AdamConfig, TrainConfig};

#[derive(Debug, Clone)]
struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
    used: bool,
}

/// Parsed but not yet interpreted configuration text.
#[derive(Debug, Clone)]
pub struct ConfigDoc {
    origin: PathBuf,
    entries: Vec<Entry>,
}

impl ConfigDoc {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut section = String::new();
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| TencaError::format(origin, format!("line {line_no}: unterminated section header")))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TencaError::format(origin, format!("line {line_no}: expected 'key = value'")))?;
            let key = key.trim().to_string();
            if entries.iter().any(|e| e.section == section && e.key == key) {
                return Err(TencaError::format(
                    origin,
                    format!("line {line_no}: duplicate key {}", qualified(&section, &key)),
                ));
            }
            entries.push(Entry {
                section: section.clone(),
                key,
                value: value.trim().to_string(),
                line: line_no,
                used: false,
            });
        }
        Ok(Self {
            origin: origin.to_path_buf(),
            entries,
        })
    }

    /// Removes and parses `section.key` if present.
    pub fn take<T: FromStr>(&mut self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let origin = self.origin.clone();
        let Some(e) = self.entries.iter_mut().find(|e| e.section == section && e.key == key) else {
            return Ok(None);
        };
        e.used = true;
        e.value.parse::<T>().map(Some).map_err(|err| {
            TencaError::Config(format!(
                "{}: line {}: {}: cannot parse {:?}: {err}",
                origin.display(),
                e.line,
                qualified(section, key),
                e.value
            ))
        })
    }

    /// Like [`take`](Self::take) but keeps `value` when the key is absent.
    pub fn take_or<T: FromStr>(&mut self, section: &str, key: &str, value: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.take(section, key)? {
            *value = v;
        }
        Ok(())
    }

    /// Fails on the first key nobody asked for.
    pub fn finish(self) -> Result<()> {
        match self.entries.iter().find(|e| !e.used) {
            None => Ok(()),
            Some(e) => Err(TencaError::Config(format!(
                "{}: line {}: unknown key {}",
                self.origin.display(),
                e.line,
                qualified(&e.section, &e.key)
            ))),
        }
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

/// Accumulates canonical `key = value` text.
struct Writer(String);

impl Writer {
    fn section(&mut self, name: &str) {
        if !self.0.is_empty() {
            self.0.push('\n');
        }
        let _ = writeln!(self.0, "[{name}]");
    }

    fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.0, "{key} = {value}");
    }
}

fn write_train(w: &mut Writer, t: &TrainConfig) {
    w.section("model");
    w.kv("channels", t.channels);
    w.kv("hidden", t.hidden);
    w.kv("fire_rate", t.fire_rate);
    w.section("time");
    w.kv("delta_t_s", t.delta_t_s);
    w.kv("n_steps", t.n_steps);
    w.section("train");
    w.kv("epochs", t.epochs);
    w.kv("batch_size", t.batch_size);
    w.kv("seed", t.seed);
    w.kv("segment_len", t.segment_len);
    w.kv("grad_clip_norm", t.grad_clip_norm);
    w.section("adam");
    w.kv("learning_rate", t.adam.learning_rate);
    w.kv("beta1", t.adam.beta1);
    w.kv("beta2", t.adam.beta2);
    w.kv("eps", t.adam.eps);
    w.section("mode");
    w.kv("deterministic_mask", t.deterministic_mask);
    w.kv("full_horizon", t.full_horizon);
}

fn read_train(doc: &mut ConfigDoc) -> Result<TrainConfig> {
    let mut t = TrainConfig::default();
    doc.take_or("model", "channels", &mut t.channels)?;
    doc.take_or("model", "hidden", &mut t.hidden)?;
    doc.take_or("model", "fire_rate", &mut t.fire_rate)?;
    doc.take_or("time", "delta_t_s", &mut t.delta_t_s)?;
    doc.take_or("time", "n_steps", &mut t.n_steps)?;
    doc.take_or("train", "epochs", &mut t.epochs)?;
    doc.take_or("train", "batch_size", &mut t.batch_size)?;
    doc.take_or("train", "seed", &mut t.seed)?;
    doc.take_or("train", "segment_len", &mut t.segment_len)?;
    doc.take_or("train", "grad_clip_norm", &mut t.grad_clip_norm)?;
    let a: &mut AdamConfig = &mut t.adam;
    doc.take_or("adam", "learning_rate", &mut a.learning_rate)?;
    doc.take_or("adam", "beta1", &mut a.beta1)?;
    doc.take_or("adam", "beta2", &mut a.beta2)?;
    doc.take_or("adam", "eps", &mut a.eps)?;
    doc.take_or("mode", "deterministic_mask", &mut t.deterministic_mask)?;
    doc.take_or("mode", "full_horizon", &mut t.full_horizon)?;
    Ok(t)
}

/// Canonical text of a [`TrainConfig`] alone.
pub fn train_config_to_text(t: &TrainConfig) -> String {
    let mut w = Writer(String::new());
    write_train(&mut w, t);
    w.0
}

/// Parses text produced by [`train_config_to_text`]; no other keys allowed.
pub fn train_config_from_text(text: &str, origin: &Path) -> Result<TrainConfig> {
    let mut doc = ConfigDoc::parse(text, origin)?;
    let t = read_train(&mut doc)?;
    doc.finish()?;
    t.validate()?;
    Ok(t)
}

/// A training run: hyperparameters, file locations and mode flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
    /// Save a checkpoint after every this many epochs (and always at the end).
    pub checkpoint_every: usize,
    /// Run on a single worker thread.
    pub reproducible: bool,
}

impl RunConfig {
    pub fn new(train: TrainConfig, dataset: impl Into<PathBuf>) -> Self {
        Self {
            train,
            dataset: dataset.into(),
            checkpoint_dir: PathBuf::from("checkpoints"),
            report_dir: PathBuf::from("reports"),
            checkpoint_every: 10,
            reproducible: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.checkpoint_every == 0 {
            return Err(TencaError::Config("run.checkpoint_every must be at least 1".into()));
        }
        if self.dataset.as_os_str().is_empty() {
            return Err(TencaError::Config("paths.dataset is required".into()));
        }
        Ok(())
    }

    /// Parses and validates. Paths are kept exactly as written.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut doc = ConfigDoc::parse(text, origin)?;
        let train = read_train(&mut doc)?;
        let mut cfg = RunConfig::new(train, PathBuf::new());
        let dataset: Option<String> = doc.take("paths", "dataset")?;
        cfg.dataset = dataset.map(PathBuf::from).unwrap_or_default();
        if let Some(p) = doc.take::<String>("paths", "checkpoint_dir")? {
            cfg.checkpoint_dir = p.into();
        }
        if let Some(p) = doc.take::<String>("paths", "report_dir")? {
            cfg.report_dir = p.into();
        }
        doc.take_or("run", "checkpoint_every", &mut cfg.checkpoint_every)?;
        doc.take_or("run", "reproducible", &mut cfg.reproducible)?;
        doc.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TencaError::io(path, e))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.checkpoint_dir, &mut cfg.report_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut w = Writer(String::new());
        w.section("paths");
        w.kv("dataset", self.dataset.display());
        w.kv("checkpoint_dir", self.checkpoint_dir.display());
        w.kv("report_dir", self.report_dir.display());
        write_train(&mut w, &self.train);
        w.section("run");
        w.kv("checkpoint_every", self.checkpoint_every);
        w.kv("reproducible", self.reproducible);
        w.0
    }
}

/// What `gen-data` produces: a phantom family and how many cases to draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub phantom: PhantomSpec,
    pub cases: usize,
}

fn take_range(doc: &mut ConfigDoc, section: &str, stem: &str, r: &mut Range) -> Result<()> {
    doc.take_or(section, &format!("{stem}_min"), &mut r.min)?;
    doc.take_or(section, &format!("{stem}_max"), &mut r.max)
}

fn take_kinetics(doc: &mut ConfigDoc, section: &str, k: &mut KineticsRange) -> Result<()> {
    take_range(doc, section, "amplitude", &mut k.amplitude)?;
    take_range(doc, section, "uptake", &mut k.uptake)?;
    take_range(doc, section, "washout", &mut k.washout)
}

fn write_range(w: &mut Writer, stem: &str, r: Range) {
    w.kv(&format!("{stem}_min"), r.min);
    w.kv(&format!("{stem}_max"), r.max);
}

fn write_kinetics(w: &mut Writer, k: &KineticsRange) {
    write_range(w, "amplitude", k.amplitude);
    write_range(w, "uptake", k.uptake);
    write_range(w, "washout", k.washout);
}

impl DataSpec {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut doc = ConfigDoc::parse(text, origin)?;
        let mut p = PhantomSpec::default();
        let mut cases = 10usize;
        doc.take_or("dataset", "cases", &mut cases)?;
        doc.take_or("dataset", "seed", &mut p.seed)?;
        doc.take_or("image", "height", &mut p.height)?;
        doc.take_or("image", "width", &mut p.width)?;
        take_range(&mut doc, "background", "level", &mut p.background)?;
        doc.take_or("background", "texture_amplitude", &mut p.texture_amplitude)?;
        take_kinetics(&mut doc, "background", &mut p.background_kinetics)?;
        doc.take_or("lesion", "count_min", &mut p.lesion_count.0)?;
        doc.take_or("lesion", "count_max", &mut p.lesion_count.1)?;
        take_range(&mut doc, "lesion", "radius", &mut p.lesion_radius)?;
        take_range(&mut doc, "lesion", "level", &mut p.lesion_level)?;
        take_kinetics(&mut doc, "lesion", &mut p.lesion_kinetics)?;
        doc.take_or("acquisition", "frames_min", &mut p.frame_count.0)?;
        doc.take_or("acquisition", "frames_max", &mut p.frame_count.1)?;
        doc.take_or("acquisition", "max_time_s", &mut p.max_time_s)?;
        doc.take_or("acquisition", "delta_t_s", &mut p.delta_t_s)?;
        doc.take_or("acquisition", "noise_sigma", &mut p.noise_sigma)?;
        doc.finish()?;
        if cases == 0 {
            return Err(TencaError::Config("dataset.cases must be at least 1".into()));
        }
        p.validate()?;
        Ok(Self { phantom: p, cases })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TencaError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let p = &self.phantom;
        let mut w = Writer(String::new());
        w.section("dataset");
        w.kv("cases", self.cases);
        w.kv("seed", p.seed);
        w.section("image");
        w.kv("height", p.height);
        w.kv("width", p.width);
        w.section("background");
        write_range(&mut w, "level", p.background);
        w.kv("texture_amplitude", p.texture_amplitude);
        write_kinetics(&mut w, &p.background_kinetics);
        w.section("lesion");
        w.kv("count_min", p.lesion_count.0);
        w.kv("count_max", p.lesion_count.1);
        write_range(&mut w, "radius", p.lesion_radius);
        write_range(&mut w, "level", p.lesion_level);
        write_kinetics(&mut w, &p.lesion_kinetics);
        w.section("acquisition");
        w.kv("frames_min", p.frame_count.0);
        w.kv("frames_max", p.frame_count.1);
        w.kv("max_time_s", p.max_time_s);
        w.kv("delta_t_s", p.delta_t_s);
        w.kv("noise_sigma", p.noise_sigma);
        w.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> &'static Path {
        Path::new("test.cfg")
    }

    #[test]
    fn run_config_round_trip_is_canonical() {
        let text = "# overfit\n[paths]\ndataset = data\n\n[train]\nepochs = 3 # short\nseed = 9\n[adam]\nlearning_rate = 2e-3\n";
        let cfg = RunConfig::parse(text, origin()).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.train.adam.learning_rate, 2e-3);
        assert_eq!(cfg.train.channels, 24);
        let canon = cfg.to_text();
        let again = RunConfig::parse(&canon, origin()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_text(), canon);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let err = RunConfig::parse("[paths]\ndataset = d\n[train]\nepoch = 3\n", origin()).unwrap_err();
        assert!(err.to_string().contains("unknown key train.epoch"), "{err}");
        assert!(err.to_string().contains("line 4"), "{err}");
        let err = RunConfig::parse("[paths]\ndataset = d\ndataset = e\n", origin()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        assert!(RunConfig::parse("[paths]\ndataset = d\n[model]\nchannels = many\n", origin()).is_err());
        assert!(RunConfig::parse("[model]\nchannels = 4\n", origin()).is_err());
    }

    #[test]
    fn validation_runs_before_use() {
        assert!(RunConfig::parse("[paths]\ndataset = d\n[model]\nfire_rate = 1.5\n", origin()).is_err());
        assert!(RunConfig::parse("[paths]\ndataset = d\n[run]\ncheckpoint_every = 0\n", origin()).is_err());
    }

    #[test]
    fn train_config_text_round_trip() {
        let t = TrainConfig {
            delta_t_s: 7.5,
            fire_rate: 0.3,
            deterministic_mask: true,
            ..Default::default()
        };
        let text = train_config_to_text(&t);
        assert_eq!(train_config_from_text(&text, origin()).unwrap(), t);
    }

    #[test]
    fn data_spec_parses_and_names_bad_fields() {
        let spec = DataSpec::parse("[dataset]\ncases = 10\nseed = 7\n[image]\nheight = 32\nwidth = 48\n", origin()).unwrap();
        assert_eq!(spec.cases, 10);
        assert_eq!(spec.phantom.seed, 7);
        assert_eq!((spec.phantom.height, spec.phantom.width), (32, 48));
        assert_eq!(DataSpec::parse(&spec.to_text(), origin()).unwrap(), spec);

        let err = DataSpec::parse("[lesion]\nuptake_min = 0.001\nuptake_max = 0.002\n", origin()).unwrap_err();
        assert!(err.to_string().contains("lesion.uptake_min"), "{err}");
        let err = DataSpec::parse("[image]\nheight = 8\n", origin()).unwrap_err();
        assert!(err.to_string().contains("phantom.size"), "{err}");
    }
}
