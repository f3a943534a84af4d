//! Seeded synthetic datasets with disjoint train/validation splits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::noise::{NoiseConfig, NoiseMode};
use super::phantom::make_phantom;
use super::{simulate, DEFAULT_ANGLES};
use crate::error::{LtvError, Result};
use crate::tensor::io::{read_pgm, write_pgm16};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub height: usize,
    pub width: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_primitives: usize,
    pub angles: usize,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            height: 64,
            width: 64,
            n_train: 32,
            n_val: 8,
            n_primitives: 6,
            angles: DEFAULT_ANGLES,
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn total(&self) -> usize {
        self.n_train + self.n_val
    }

    /// Image `index` is textured when odd.
    pub fn is_textured(index: usize) -> bool {
        index % 2 == 1
    }

    /// Per-image phantom seed.
    pub fn image_seed(&self, index: usize) -> u64 {
        self.seed ^ index as u64
    }

    /// Per-image noise seed; decorrelated from the phantom stream.
    pub fn noise_seed(&self, index: usize) -> u64 {
        self.image_seed(index).wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub clean: Tensor,
    pub noisy: Tensor,
    pub textured: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// One sample of the dataset described by `cfg`.
pub fn generate_sample(cfg: &DatasetConfig, index: usize) -> Result<Sample> {
    let textured = DatasetConfig::is_textured(index);
    let ph = make_phantom(cfg.height, cfg.width, cfg.n_primitives, cfg.image_seed(index), textured)?;
    let noise = NoiseConfig { seed: cfg.noise_seed(index), ..cfg.noise.clone() };
    let noisy = simulate(&ph.image, &noise, cfg.angles)?;
    Ok(Sample { index, clean: ph.image, noisy, textured })
}

impl Dataset {
    /// Generate all images in parallel; the result does not depend on the
    /// thread count.
    pub fn generate(cfg: &DatasetConfig) -> Result<Dataset> {
        if cfg.n_train == 0 || cfg.n_val == 0 {
            return Err(LtvError::InvalidArgument("train and validation splits must be non-empty".into()));
        }
        cfg.noise.validate()?;
        let mut all: Vec<Sample> =
            (0..cfg.total()).into_par_iter().map(|i| generate_sample(cfg, i)).collect::<Result<_>>()?;
        let val = all.split_off(cfg.n_train);
        Ok(Dataset { config: cfg.clone(), train: all, val })
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(self.val.iter())
    }

    /// `clean/NNNN.pgm`, `noisy/NNNN.pgm` and `meta.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("clean"))?;
        fs::create_dir_all(dir.join("noisy"))?;
        for s in self.samples() {
            write_pgm16(&dir.join("clean").join(format!("{:04}.pgm", s.index)), &s.clean)?;
            write_pgm16(&dir.join("noisy").join(format!("{:04}.pgm", s.index)), &s.noisy)?;
        }
        fs::write(dir.join("meta.txt"), meta_text(&self.config))?;
        Ok(())
    }

    /// Load a directory written by [`Dataset::save`]. Pixel values carry the
    /// 16-bit quantization of the PGM files.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let meta = fs::read_to_string(dir.join("meta.txt"))?;
        let config = parse_meta(&meta)?;
        let mut all = Vec::with_capacity(config.total());
        for index in 0..config.total() {
            let clean = read_pgm(&dir.join("clean").join(format!("{index:04}.pgm")))?;
            let noisy = read_pgm(&dir.join("noisy").join(format!("{index:04}.pgm")))?;
            if clean.shape() != [config.height, config.width] || noisy.shape() != clean.shape() {
                return Err(LtvError::Format(format!("image {index:04} does not match meta.txt dimensions")));
            }
            all.push(Sample { index, clean, noisy, textured: DatasetConfig::is_textured(index) });
        }
        let val = all.split_off(config.n_train);
        Ok(Dataset { config, train: all, val })
    }
}

pub fn meta_text(cfg: &DatasetConfig) -> String {
    let mut s = String::new();
    let n = &cfg.noise;
    let _ = writeln!(s, "height={}", cfg.height);
    let _ = writeln!(s, "width={}", cfg.width);
    let _ = writeln!(s, "n_train={}", cfg.n_train);
    let _ = writeln!(s, "n_val={}", cfg.n_val);
    let _ = writeln!(s, "n_primitives={}", cfg.n_primitives);
    let _ = writeln!(s, "angles={}", cfg.angles);
    let _ = writeln!(s, "seed={}", cfg.seed);
    let _ = writeln!(s, "n0={}", n.n0);
    let _ = writeln!(s, "dose_fraction={}", n.dose_fraction);
    let _ = writeln!(s, "mode={}", n.mode.as_str());
    let _ = writeln!(s, "gaussian_sigma={}", n.gaussian_sigma);
    let _ = writeln!(s, "mu={}", n.mu.map_or("auto".to_string(), |m| m.to_string()));
    let textured: Vec<String> =
        (0..cfg.total()).filter(|&i| DatasetConfig::is_textured(i)).map(|i| i.to_string()).collect();
    let _ = writeln!(s, "textured={}", textured.join(","));
    s
}

pub fn parse_meta(text: &str) -> Result<DatasetConfig> {
    let mut cfg = DatasetConfig::default();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line.split_once('=').ok_or_else(|| LtvError::Format(format!("meta.txt: bad line '{line}'")))?;
        let bad = |e: &dyn std::fmt::Display| LtvError::Format(format!("meta.txt: {k}: {e}"));
        match k.trim() {
            "height" => cfg.height = v.parse().map_err(|e| bad(&e))?,
            "width" => cfg.width = v.parse().map_err(|e| bad(&e))?,
            "n_train" => cfg.n_train = v.parse().map_err(|e| bad(&e))?,
            "n_val" => cfg.n_val = v.parse().map_err(|e| bad(&e))?,
            "n_primitives" => cfg.n_primitives = v.parse().map_err(|e| bad(&e))?,
            "angles" => cfg.angles = v.parse().map_err(|e| bad(&e))?,
            "seed" => cfg.seed = v.parse().map_err(|e| bad(&e))?,
            "n0" => cfg.noise.n0 = v.parse().map_err(|e| bad(&e))?,
            "dose_fraction" => cfg.noise.dose_fraction = v.parse().map_err(|e| bad(&e))?,
            "mode" => cfg.noise.mode = NoiseMode::parse(v).map_err(|e| bad(&e))?,
            "gaussian_sigma" => cfg.noise.gaussian_sigma = v.parse().map_err(|e| bad(&e))?,
            "mu" => cfg.noise.mu = if v == "auto" { None } else { Some(v.parse().map_err(|e| bad(&e))?) },
            "textured" => {}
            other => return Err(LtvError::Format(format!("meta.txt: unknown key '{other}'"))),
        }
    }
    Ok(cfg)
}
