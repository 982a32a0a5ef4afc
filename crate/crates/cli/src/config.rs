use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cgtn_core::train::OptimizerKind;
use cgtn_core::{CoreError, Result};

/// Numeric width used for network parameters and activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn label(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetId {
    Mnist,
    Cifar10,
}

impl DatasetId {
    pub fn label(self) -> &'static str {
        match self {
            DatasetId::Mnist => "mnist",
            DatasetId::Cifar10 => "cifar10",
        }
    }
}

/// Everything a run can be told through the sectioned key=value file.
/// Flags override single fields after parsing. Unknown sections or keys
/// are rejected so typos cannot silently fall back to defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    // [data]
    pub data_dir: String,
    pub dataset: DatasetId,
    pub resize: usize,
    pub standardize: bool,
    pub limit_train: usize,
    pub limit_test: usize,
    pub mnist_base_url: String,
    pub cifar_url: String,
    pub cifar_sha256: String,
    // [train]
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub eval_batch: usize,
    pub precision: Precision,
    // [arch]
    pub arch_file: String,
    // [distill]
    pub per_class_counts: Vec<usize>,
    pub group_sizes: Vec<usize>,
    pub lambda: f64,
    pub distill_steps: usize,
    pub step_size: f64,
    pub per_level_steps: Vec<usize>,
    pub embedder: String,
    pub resample_embedder: bool,
    // [output]
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: "data".into(),
            dataset: DatasetId::Mnist,
            resize: 0,
            standardize: false,
            limit_train: 0,
            limit_test: 0,
            mnist_base_url: "https://ossci-datasets.s3.amazonaws.com/mnist".into(),
            cifar_url: "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz".into(),
            cifar_sha256: String::new(),
            epochs: 30,
            batch_size: 128,
            optimizer: OptimizerKind::AdaptiveMoment,
            learning_rate: 1e-3,
            momentum: 0.9,
            seed: 0,
            eval_batch: 256,
            precision: Precision::F32,
            arch_file: String::new(),
            per_class_counts: vec![6000, 600, 100, 20, 4, 1],
            group_sizes: vec![10, 6, 5, 5, 4],
            lambda: 19.0,
            distill_steps: 500,
            step_size: 1.0,
            per_level_steps: Vec::new(),
            embedder: "default".into(),
            resample_embedder: true,
            out_dir: "runs/out".into(),
        }
    }
}

fn bad_line(line: usize, message: String) -> CoreError {
    CoreError::Parse {
        what: "config",
        line,
        message,
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| bad_line(line, format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_line(line, format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| bad_line(line, format!("{key}: bad entry {part:?}")))
        })
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CoreError::Io)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| bad_line(line_no, format!("unterminated section {line:?}")))?;
                if !["data", "train", "arch", "distill", "output"].contains(&name) {
                    return Err(bad_line(line_no, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad_line(line_no, format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(bad_line(line_no, format!("key {key} appears before any section")));
            }
            cfg.apply(&section, key, value, line_no)?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<()> {
        match (section, key) {
            ("data", "dir") => self.data_dir = value.into(),
            ("data", "dataset") => {
                self.dataset = match value {
                    "mnist" => DatasetId::Mnist,
                    "cifar10" => DatasetId::Cifar10,
                    _ => {
                        return Err(bad_line(
                            line,
                            format!("dataset must be mnist or cifar10, got {value:?}"),
                        ))
                    }
                }
            }
            ("data", "resize") => self.resize = parse_num(line, key, value)?,
            ("data", "standardize") => self.standardize = parse_bool(line, key, value)?,
            ("data", "limit_train") => self.limit_train = parse_num(line, key, value)?,
            ("data", "limit_test") => self.limit_test = parse_num(line, key, value)?,
            ("data", "mnist_base_url") => self.mnist_base_url = value.into(),
            ("data", "cifar_url") => self.cifar_url = value.into(),
            ("data", "cifar_sha256") => self.cifar_sha256 = value.into(),
            ("train", "epochs") => self.epochs = parse_num(line, key, value)?,
            ("train", "batch_size") => self.batch_size = parse_num(line, key, value)?,
            ("train", "optimizer") => {
                self.optimizer =
                    OptimizerKind::parse(value).map_err(|e| bad_line(line, e.to_string()))?
            }
            ("train", "learning_rate") => self.learning_rate = parse_num(line, key, value)?,
            ("train", "momentum") => self.momentum = parse_num(line, key, value)?,
            ("train", "seed") => self.seed = parse_num(line, key, value)?,
            ("train", "eval_batch") => self.eval_batch = parse_num(line, key, value)?,
            ("train", "precision") => {
                self.precision = match value {
                    "f32" => Precision::F32,
                    "f64" => Precision::F64,
                    _ => {
                        return Err(bad_line(
                            line,
                            format!("precision must be f32 or f64, got {value:?}"),
                        ))
                    }
                }
            }
            ("arch", "file") => self.arch_file = value.into(),
            ("distill", "per_class_counts") => {
                self.per_class_counts = parse_list(line, key, value)?
            }
            ("distill", "group_sizes") => self.group_sizes = parse_list(line, key, value)?,
            ("distill", "lambda") => self.lambda = parse_num(line, key, value)?,
            ("distill", "steps") => self.distill_steps = parse_num(line, key, value)?,
            ("distill", "step_size") => self.step_size = parse_num(line, key, value)?,
            ("distill", "per_level_steps") => {
                self.per_level_steps = parse_list(line, key, value)?
            }
            ("distill", "embedder") => self.embedder = value.into(),
            ("distill", "resample_embedder") => {
                self.resample_embedder = parse_bool(line, key, value)?
            }
            ("output", "dir") => self.out_dir = value.into(),
            _ => return Err(bad_line(line, format!("unknown key {section}.{key}"))),
        }
        Ok(())
    }

    /// Canonical serialization of every setting, written into the output
    /// directory so a finished run documents exactly what it ran with.
    pub fn resolved_text(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = String::new();
        let _ = writeln!(s, "[data]");
        let _ = writeln!(s, "dir = {}", self.data_dir);
        let _ = writeln!(s, "dataset = {}", self.dataset.label());
        let _ = writeln!(s, "resize = {}", self.resize);
        let _ = writeln!(s, "standardize = {}", self.standardize);
        let _ = writeln!(s, "limit_train = {}", self.limit_train);
        let _ = writeln!(s, "limit_test = {}", self.limit_test);
        let _ = writeln!(s, "mnist_base_url = {}", self.mnist_base_url);
        let _ = writeln!(s, "cifar_url = {}", self.cifar_url);
        let _ = writeln!(s, "cifar_sha256 = {}", self.cifar_sha256);
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "optimizer = {}", self.optimizer.label());
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "eval_batch = {}", self.eval_batch);
        let _ = writeln!(s, "precision = {}", self.precision.label());
        let _ = writeln!(s, "\n[arch]");
        let _ = writeln!(s, "file = {}", self.arch_file);
        let _ = writeln!(s, "\n[distill]");
        let _ = writeln!(s, "per_class_counts = {}", list(&self.per_class_counts));
        let _ = writeln!(s, "group_sizes = {}", list(&self.group_sizes));
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "steps = {}", self.distill_steps);
        let _ = writeln!(s, "step_size = {}", self.step_size);
        let _ = writeln!(s, "per_level_steps = {}", list(&self.per_level_steps));
        let _ = writeln!(s, "embedder = {}", self.embedder);
        let _ = writeln!(s, "resample_embedder = {}", self.resample_embedder);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.out_dir);
        s
    }

    pub fn train_config(&self) -> cgtn_core::train::TrainConfig {
        cgtn_core::train::TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed: self.seed,
            eval_batch: self.eval_batch,
        }
    }
}
