//! Run configuration: one JSON file, with `--key value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use sera::quadrature::WeightsMode;
use sera::recovery::{AmplitudeMode, RecoveryParams, RescaleMode};
use sera::synthesis::SampleGeometry;
use sera::SERO_BOX_A;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    Spikes,
    ExpSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub q: usize,
    pub n: f64,
    pub rho: f64,
    pub mu: f64,
    pub eta: f64,
    pub s: Option<u32>,
    pub v: f64,
    pub weights_mode: WeightsMode,
    pub amplitude_mode: AmplitudeMode,
    pub rescale_mode: RescaleMode,
    pub seed: u64,

    pub kind: TargetKind,
    pub count: usize,
    pub box_radius: f64,
    pub amp_min: f64,
    pub amp_max: f64,
    pub exponents: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub clutter_bv: f64,
    pub clutter_atoms: usize,
    pub noise: f64,

    /// Level of the quadrature weights; `2n` when absent.
    pub weights_level: Option<f64>,
    pub beta_hat: f64,
    pub density_factor: f64,
    pub jitter: f64,

    pub max_level: Option<f64>,
    pub grid_spacing: Option<f64>,
    pub window: Option<f64>,
    pub constants_box: Option<f64>,
    pub m_hint: Option<f64>,
    pub clutter_bound: Option<f64>,

    /// Multiplies every tolerance of `verify`.
    pub tolerance_scale: f64,

    pub out_dir: PathBuf,
    /// Samples CSV; `<out_dir>/samples.csv` when absent.
    pub samples: Option<PathBuf>,
    /// Weights CSV; `<out_dir>/weights.csv` when absent.
    pub weights: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            q: 1,
            n: 4.0,
            rho: 1.0,
            mu: 1.0,
            eta: 2.0,
            s: None,
            v: 0.5,
            weights_mode: WeightsMode::default(),
            amplitude_mode: AmplitudeMode::default(),
            rescale_mode: RescaleMode::default(),
            seed: 0,
            kind: TargetKind::default(),
            count: 3,
            box_radius: 2.5,
            amp_min: 1.0,
            amp_max: 2.0,
            exponents: Vec::new(),
            coefficients: Vec::new(),
            clutter_bv: 0.0,
            clutter_atoms: 8,
            noise: 0.0,
            weights_level: None,
            beta_hat: 0.5,
            density_factor: 1.0,
            jitter: 0.25,
            max_level: None,
            grid_spacing: None,
            window: None,
            constants_box: None,
            m_hint: None,
            clutter_bound: None,
            tolerance_scale: 1.0,
            out_dir: PathBuf::from("out"),
            samples: None,
            weights: None,
        }
    }
}

/// Parses `--key value` pairs. Values that parse as JSON keep their type;
/// anything else is taken as a string.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            bail!("expected a `--key` flag, found `{flag}`");
        };
        let (key, raw) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().with_context(|| format!("flag `--{key}` needs a value"))?;
                (key.to_string(), v.clone())
            }
        };
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Value::Object(Default::default()),
        };
        let Value::Object(map) = &mut value else {
            bail!("the config file must hold a JSON object");
        };
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        let cfg: RunConfig = serde_json::from_value(value).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.q == 0 {
            bail!("q must be at least 1");
        }
        for (name, v) in [("n", self.n), ("beta_hat", self.beta_hat), ("tolerance_scale", self.tolerance_scale)] {
            if !(v.is_finite() && v > 0.0) {
                bail!("{name} must be positive, got {v}");
            }
        }
        if !(self.amp_min > 0.0 && self.amp_max >= self.amp_min) {
            bail!("amplitude range must satisfy 0 < amp_min <= amp_max");
        }
        if self.clutter_bv < 0.0 || self.noise < 0.0 {
            bail!("clutter_bv and noise must be non-negative");
        }
        if let Some(l) = self.weights_level {
            if l < self.n {
                bail!("weights_level {l} is below n = {}", self.n);
            }
        }
        self.recovery_params().validate()?;
        Ok(())
    }

    pub fn weights_level(&self) -> f64 {
        self.weights_level.unwrap_or(2.0 * self.n)
    }

    pub fn samples_path(&self) -> PathBuf {
        self.samples.clone().unwrap_or_else(|| self.out_dir.join("samples.csv"))
    }

    pub fn weights_path(&self) -> PathBuf {
        self.weights.clone().unwrap_or_else(|| self.out_dir.join("weights.csv"))
    }

    /// Metadata file stored next to the weights CSV.
    pub fn weights_meta_path(&self) -> PathBuf {
        self.weights_path().with_extension("json")
    }

    pub fn geometry(&self) -> SampleGeometry {
        SampleGeometry {
            q: self.q,
            a: SERO_BOX_A,
            n: self.weights_level(),
            density_factor: self.density_factor,
            beta_hat: self.beta_hat,
            jitter: self.jitter,
            seed: self.seed,
        }
    }

    pub fn recovery_params(&self) -> RecoveryParams {
        RecoveryParams {
            n: self.n,
            rho: self.rho,
            mu: self.mu,
            eta: self.eta,
            s: self.s,
            amplitude_mode: self.amplitude_mode,
            rescale_mode: self.rescale_mode,
            max_level: self.max_level,
            grid_spacing: self.grid_spacing,
            window: self.window,
            constants_box: self.constants_box,
            m_hint: self.m_hint,
            clutter_bound: self.clutter_bound,
            v: self.v,
        }
    }
}
