use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cgtn_core::data::{load_cifar10, load_mnist, DirLock, LabeledImageSet};
use cgtn_core::{CoreError, Result};
use cgtn_tensor::Element;

use crate::config::{DatasetId, RunConfig};

/// An output directory claimed for one run: created, locked, and stocked
/// with the resolved config so the artifacts are self-describing.
pub struct RunDir {
    pub path: PathBuf,
    _lock: DirLock,
}

impl RunDir {
    pub fn claim(cfg: &RunConfig, command: &str) -> Result<RunDir> {
        let path = PathBuf::from(&cfg.out_dir);
        fs::create_dir_all(&path).map_err(CoreError::Io)?;
        let lock = DirLock::acquire(&path)?;
        fs::write(path.join("config_resolved.cfg"), cfg.resolved_text()).map_err(CoreError::Io)?;
        fs::write(path.join("run_meta.txt"), run_meta(cfg, command)).map_err(CoreError::Io)?;
        Ok(RunDir { path, _lock: lock })
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let target = self.path.join(name);
        fs::write(&target, contents).map_err(CoreError::Io)?;
        Ok(target)
    }
}

/// Key=value record of what produced this directory. Deliberately free of
/// timestamps: rerunning the same config must reproduce every byte.
fn run_meta(cfg: &RunConfig, command: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "command = {command}");
    let _ = writeln!(s, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "precision = {}", cfg.precision.label());
    let _ = writeln!(s, "optimizer = {}", cfg.optimizer.label());
    let _ = writeln!(s, "resize_convention = bilinear_half_pixel_centers");
    let _ = writeln!(s, "cluster_scope_default = spatial_per_channel");
    let _ = writeln!(s, "cluster_init = constant_zero_linear_uniform_higher_zero");
    let _ = writeln!(s, "pixel_normalization = raw_over_255");
    if !cfg.arch_file.is_empty() {
        let _ = writeln!(s, "arch_file = {}", cfg.arch_file);
        if let Ok(text) = fs::read_to_string(&cfg.arch_file) {
            for line in text.lines() {
                let _ = writeln!(s, "arch | {line}");
            }
        }
    }
    s
}

/// Loads the configured dataset, applying resize, standardization, and
/// the optional head-of-set limits, in that order.
pub fn load_dataset<E: Element>(
    cfg: &RunConfig,
) -> Result<(LabeledImageSet<E>, LabeledImageSet<E>)> {
    let dir = Path::new(&cfg.data_dir);
    let (mut train, mut test) = match cfg.dataset {
        DatasetId::Mnist => load_mnist::<E>(dir)?,
        DatasetId::Cifar10 => load_cifar10::<E>(dir)?,
    };
    if cfg.resize > 0 {
        train = train.resized(cfg.resize, cfg.resize)?;
        test = test.resized(cfg.resize, cfg.resize)?;
    }
    if cfg.standardize {
        train.standardize_per_channel();
        test.standardize_per_channel();
    }
    if cfg.limit_train > 0 && cfg.limit_train < train.count() {
        let idx: Vec<usize> = (0..cfg.limit_train).collect();
        train = train.subset(&idx)?;
    }
    if cfg.limit_test > 0 && cfg.limit_test < test.count() {
        let idx: Vec<usize> = (0..cfg.limit_test).collect();
        test = test.subset(&idx)?;
    }
    Ok((train, test))
}

pub fn read_arch(path: &str) -> Result<Vec<cgtn_core::arch::LayerSpec>> {
    if path.is_empty() {
        return Err(CoreError::Config(
            "no architecture file: set [arch] file or pass --arch".into(),
        ));
    }
    let text = fs::read_to_string(path).map_err(CoreError::Io)?;
    cgtn_core::arch::parse_arch(&text)
}
