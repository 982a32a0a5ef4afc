use std::path::Path;

use cgtn_core::data::{fetch_cifar10, fetch_mnist, mnist_fetch_plan};
use cgtn_core::Result;

use crate::config::{DatasetId, RunConfig};

pub fn run(cfg: &RunConfig) -> Result<()> {
    let dir = Path::new(&cfg.data_dir);
    std::fs::create_dir_all(dir).map_err(cgtn_core::CoreError::Io)?;
    let paths = match cfg.dataset {
        DatasetId::Mnist => {
            let mut plan = mnist_fetch_plan();
            let default_base = RunConfig::default().mnist_base_url;
            if cfg.mnist_base_url != default_base {
                for file in &mut plan {
                    file.url = format!("{}/{}.gz", cfg.mnist_base_url, file.file_name);
                }
            }
            fetch_mnist(dir, &plan)?
        }
        DatasetId::Cifar10 => {
            let sha = if cfg.cifar_sha256.is_empty() {
                None
            } else {
                Some(cfg.cifar_sha256.as_str())
            };
            fetch_cifar10(dir, &cfg.cifar_url, sha)?
        }
    };
    for p in paths {
        println!("fetched {}", p.display());
    }
    Ok(())
}
