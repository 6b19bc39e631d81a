//! Run settings. A config file holds `key = value` lines with `#` comments;
//! flags given on the command line override the file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use topica_core::estimation::{DEFAULT_EPSILON, DEFAULT_STEP};
use topica_core::image::{CropRect, DEFAULT_FRAME_RATE};
use topica_core::{Error, TrainConfig};

use crate::error::{CliError, CliResult};

pub const KEYS: &[&str] = &[
    "patch_side",
    "n_patches",
    "k",
    "map_width",
    "map_height",
    "radius",
    "epsilon",
    "step0",
    "max_iters",
    "tol",
    "seed",
    "frame_rate",
    "crop",
    "batch_size",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub patch_side: usize,
    pub n_patches: usize,
    pub k: usize,
    pub map_width: usize,
    pub map_height: usize,
    pub radius: usize,
    pub epsilon: f64,
    pub step0: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub frame_rate: f64,
    pub crop: Option<CropRect>,
    /// `None` trains full-batch (written as 0).
    pub batch_size: Option<usize>,
}

/// Desk scale: 9×9 patches leave 80 components after DC removal, enough
/// for 64 bases on an 8×8 torus.
impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            patch_side: 9,
            n_patches: 20_000,
            k: 64,
            map_width: 8,
            map_height: 8,
            radius: 1,
            epsilon: DEFAULT_EPSILON,
            step0: DEFAULT_STEP,
            max_iters: 500,
            tol: 1e-4,
            seed: 0,
            frame_rate: DEFAULT_FRAME_RATE,
            crop: None,
            batch_size: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::usage(format!("bad value {value:?} for {key}")))
}

/// `row,col,height,width`.
pub fn parse_crop(value: &str) -> CliResult<CropRect> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    let [row, col, height, width] = parts[..] else {
        return Err(CliError::usage(format!(
            "crop must be row,col,height,width, got {value:?}"
        )));
    };
    Ok(CropRect {
        row: parse("crop", row)?,
        col: parse("crop", col)?,
        height: parse("crop", height)?,
        width: parse("crop", width)?,
    })
}

/// `a,b` pair of numbers.
pub fn parse_pair<T: FromStr>(what: &str, value: &str) -> CliResult<(T, T)> {
    let Some((a, b)) = value.split_once(',') else {
        return Err(CliError::usage(format!(
            "{what} must be a,b, got {value:?}"
        )));
    };
    Ok((parse(what, a.trim())?, parse(what, b.trim())?))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let value = value.trim();
        match key {
            "patch_side" => self.patch_side = parse(key, value)?,
            "n_patches" => self.n_patches = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "map_width" => self.map_width = parse(key, value)?,
            "map_height" => self.map_height = parse(key, value)?,
            "radius" => self.radius = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "step0" => self.step0 = parse(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "tol" => self.tol = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "frame_rate" => self.frame_rate = parse(key, value)?,
            "crop" => {
                self.crop = match value {
                    "" | "none" => None,
                    v => Some(parse_crop(v)?),
                }
            }
            "batch_size" => {
                self.batch_size = match parse::<usize>(key, value)? {
                    0 => None,
                    b => Some(b),
                }
            }
            other => return Err(CliError::usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every line of a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("{origin}:{}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| CliError::usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = RunConfig::default();
        config.apply_text(&text, &path.display().to_string())?;
        Ok(config)
    }

    /// Starts from `file` (or the defaults), then applies `overrides` in order
    /// and validates.
    pub fn resolve(file: Option<&Path>, overrides: &[(&str, String)]) -> CliResult<Self> {
        let mut config = match file {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for (key, value) in overrides {
            config.set(key, value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::usage(msg));
        if self.patch_side < 2 {
            return bad(format!("patch_side must be >= 2, got {}", self.patch_side));
        }
        if self.n_patches == 0 {
            return bad("n_patches must be >= 1".into());
        }
        let max_k = self.patch_side * self.patch_side - 1;
        if self.k == 0 || self.k > max_k {
            return bad(format!(
                "k must lie in 1..={max_k} (mean-removed {}x{} patches)",
                self.patch_side, self.patch_side
            ));
        }
        if self.map_width == 0 || self.map_height == 0 || self.map_width * self.map_height != self.k
        {
            return bad(format!(
                "map {}x{} must hold exactly k = {} units",
                self.map_width, self.map_height, self.k
            ));
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return bad(format!(
                "frame_rate must be positive, got {}",
                self.frame_rate
            ));
        }
        if self.batch_size.is_some_and(|b| b > self.n_patches) {
            return bad("batch_size cannot exceed n_patches".into());
        }
        self.train_config()
            .validate()
            .map_err(|e| CliError::usage(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            step0: self.step0,
            epsilon: self.epsilon,
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
            batch_size: self.batch_size,
            ..TrainConfig::default()
        }
    }

    /// Canonical text form; [`RunConfig::apply_text`] reads it back.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let crop = match self.crop {
            Some(c) => format!("{},{},{},{}", c.row, c.col, c.height, c.width),
            None => "none".into(),
        };
        let values: [String; 14] = [
            self.patch_side.to_string(),
            self.n_patches.to_string(),
            self.k.to_string(),
            self.map_width.to_string(),
            self.map_height.to_string(),
            self.radius.to_string(),
            format!("{:e}", self.epsilon),
            format!("{:e}", self.step0),
            self.max_iters.to_string(),
            format!("{:e}", self.tol),
            self.seed.to_string(),
            format!("{:e}", self.frame_rate),
            crop,
            self.batch_size.unwrap_or(0).to_string(),
        ];
        for (key, value) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let config = RunConfig::default();
        config.validate().unwrap();
        let mut back = RunConfig {
            seed: 99,
            ..RunConfig::default()
        };
        back.apply_text(&config.render(), "rendered").unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn file_then_flags() {
        let mut config = RunConfig::default();
        config
            .apply_text("# full scale\npatch_side = 100\nk = 200 # retained\nmap_width=20\nmap_height = 10\n", "f")
            .unwrap();
        assert_eq!(
            (
                config.patch_side,
                config.k,
                config.map_width,
                config.map_height
            ),
            (100, 200, 20, 10)
        );
        config.set("radius", "0").unwrap();
        config.set("crop", "1, 2, 30, 40").unwrap();
        assert_eq!(
            config.crop,
            Some(CropRect {
                row: 1,
                col: 2,
                height: 30,
                width: 40
            })
        );
        config.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut config = RunConfig::default();
        assert!(matches!(config.set("bogus", "1"), Err(CliError::Usage(_))));
        assert!(config.set("k", "sixty").is_err());
        assert!(config.apply_text("k 64", "f").is_err());
        assert!(config.set("crop", "1,2,3").is_err());
    }

    #[test]
    fn range_checks() {
        let cases: &[(&str, &str)] = &[
            ("k", "81"),
            ("map_width", "7"),
            ("epsilon", "0"),
            ("step0", "-1"),
            ("max_iters", "0"),
            ("frame_rate", "0"),
            ("patch_side", "1"),
            ("n_patches", "0"),
        ];
        for (key, value) in cases {
            let mut config = RunConfig::default();
            config.set(key, value).unwrap();
            assert!(config.validate().is_err(), "{key} = {value} accepted");
        }
    }
}
