//! Flat `key = value` configuration.
//!
//! The core keys are required; module keys (dotted names) fall back to
//! their defaults when absent. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fitting::{LmOptions, Loss};
use crate::graph::EdgeWeighting;
use crate::init::InitParams;
use crate::mrf::{EnergyParams, LabelCostMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Window length Δt in seconds.
    pub window_duration: f64,
    /// Downsampling cell edge in pixels.
    pub cell_size: u32,
    /// Observation cap per window after downsampling.
    pub n_max: usize,
    /// Flow magnitude floor in px/window.
    pub n_min: f64,
    pub energy: EnergyParams,
    pub max_outer_iterations: usize,
    /// Largest model parameter change still counted as converged.
    pub epsilon_m: f64,
    /// Largest relabeled fraction still counted as converged.
    pub epsilon_l: f64,

    pub weighting: EdgeWeighting,
    pub label_cost_mode: LabelCostMode,
    pub max_sweeps: usize,
    /// Truncate the loss inside nonlinear fitting.
    pub fitting_truncate: bool,
    pub fitting_max_iters: usize,
    pub fitting_tol: f64,
    pub init: InitParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_duration: 0.010,
            cell_size: 2,
            n_max: 5000,
            n_min: 0.1,
            energy: EnergyParams {
                lambda_p: 0.2,
                lambda_m: 30.0,
                tau_d: 1.0,
            },
            max_outer_iterations: 10,
            epsilon_m: 1e-4,
            epsilon_l: 0.001,
            weighting: EdgeWeighting::Uniform,
            label_cost_mode: LabelCostMode::Delong,
            max_sweeps: 1,
            fitting_truncate: true,
            fitting_max_iters: 50,
            fitting_tol: 1e-8,
            init: InitParams::default(),
        }
    }
}

/// Keys that every config file must define.
pub const REQUIRED_KEYS: [&str; 10] = [
    "window_duration",
    "cell_size",
    "n_max",
    "n_min",
    "lambda_P",
    "lambda_M",
    "tau_D",
    "max_outer_iterations",
    "epsilon_m",
    "epsilon_L",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{v}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("key `{key}`: expected true or false, got `{v}`"))),
    }
}

impl PipelineConfig {
    pub fn lm_options(&self) -> LmOptions {
        LmOptions {
            max_iters: self.fitting_max_iters,
            tol: self.fitting_tol,
            loss: if self.fitting_truncate {
                Loss::Truncated { tau: self.energy.tau_d }
            } else {
                Loss::Quadratic
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.energy.validate()?;
        let positive = [
            ("window_duration", self.window_duration),
            ("n_min", self.n_min),
            ("epsilon_m", self.epsilon_m),
            ("epsilon_L", self.epsilon_l),
            ("fitting.tol", self.fitting_tol),
            ("init.d_min", self.init.d_min),
        ];
        for (k, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("key `{k}` must be positive, got {v}")));
            }
        }
        if self.cell_size < 1 || self.n_max < 1 || self.max_outer_iterations < 1 || self.max_sweeps < 1 {
            return Err(Error::Config(
                "cell_size, n_max, max_outer_iterations and mrf.max_sweeps must be at least 1".into(),
            ));
        }
        if self.init.samples < 1 || self.init.samples_with_prior < 1 {
            return Err(Error::Config("init sample counts must be at least 1".into()));
        }
        if let EdgeWeighting::ExpDist { sigma } = self.weighting {
            if !(sigma.is_finite() && sigma > 0.0) {
                return Err(Error::Config(format!("smoothness.sigma must be positive, got {sigma}")));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", k + 1)));
            };
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", k + 1)));
            }
        }
        for key in REQUIRED_KEYS {
            if !entries.contains_key(key) {
                return Err(Error::MissingKey(key.to_string()));
            }
        }

        let mut c = Self::default();
        let mut sigma: Option<f64> = None;
        let mut weighting: Option<String> = None;
        for (key, v) in &entries {
            let k = key.as_str();
            match k {
                "window_duration" => c.window_duration = parse_num(k, v)?,
                "cell_size" => c.cell_size = parse_num(k, v)?,
                "n_max" => c.n_max = parse_num(k, v)?,
                "n_min" => c.n_min = parse_num(k, v)?,
                "lambda_P" => c.energy.lambda_p = parse_num(k, v)?,
                "lambda_M" => c.energy.lambda_m = parse_num(k, v)?,
                "tau_D" => c.energy.tau_d = parse_num(k, v)?,
                "max_outer_iterations" => c.max_outer_iterations = parse_num(k, v)?,
                "epsilon_m" => c.epsilon_m = parse_num(k, v)?,
                "epsilon_L" => c.epsilon_l = parse_num(k, v)?,
                "smoothness.weighting" => weighting = Some(v.clone()),
                "smoothness.sigma" => sigma = Some(parse_num(k, v)?),
                "mrf.label_cost_mode" => c.label_cost_mode = v.parse()?,
                "mrf.max_sweeps" => c.max_sweeps = parse_num(k, v)?,
                "fitting.truncate" => c.fitting_truncate = parse_bool(k, v)?,
                "fitting.max_iters" => c.fitting_max_iters = parse_num(k, v)?,
                "fitting.tol" => c.fitting_tol = parse_num(k, v)?,
                "init.samples" => c.init.samples = parse_num(k, v)?,
                "init.samples_with_prior" => c.init.samples_with_prior = parse_num(k, v)?,
                "init.d_min" => c.init.d_min = parse_num(k, v)?,
                "init.r_grow" => c.init.r_grow = parse_num(k, v)?,
                "init.min_cluster_size" => c.init.min_cluster_size = parse_num(k, v)?,
                "init.a_min" => c.init.a_min = parse_num(k, v)?,
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        c.weighting = match (weighting.as_deref(), sigma) {
            (None | Some("uniform"), None) => EdgeWeighting::Uniform,
            (Some("exp_dist"), Some(sigma)) => EdgeWeighting::ExpDist { sigma },
            (Some("exp_dist"), None) => return Err(Error::MissingKey("smoothness.sigma".into())),
            (None | Some("uniform"), Some(_)) => {
                return Err(Error::Config("smoothness.sigma requires smoothness.weighting = exp_dist".into()))
            }
            (Some(other), _) => return Err(Error::Config(format!("unknown smoothness.weighting `{other}`"))),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key, one per line, in a form [`Self::parse`] reads back exactly.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("window_duration", self.window_duration.to_string());
        put("cell_size", self.cell_size.to_string());
        put("n_max", self.n_max.to_string());
        put("n_min", self.n_min.to_string());
        put("lambda_P", self.energy.lambda_p.to_string());
        put("lambda_M", self.energy.lambda_m.to_string());
        put("tau_D", self.energy.tau_d.to_string());
        put("max_outer_iterations", self.max_outer_iterations.to_string());
        put("epsilon_m", self.epsilon_m.to_string());
        put("epsilon_L", self.epsilon_l.to_string());
        match self.weighting {
            EdgeWeighting::Uniform => put("smoothness.weighting", "uniform".into()),
            EdgeWeighting::ExpDist { sigma } => {
                put("smoothness.weighting", "exp_dist".into());
                put("smoothness.sigma", sigma.to_string());
            }
        }
        put("mrf.label_cost_mode", self.label_cost_mode.to_string());
        put("mrf.max_sweeps", self.max_sweeps.to_string());
        put("fitting.truncate", self.fitting_truncate.to_string());
        put("fitting.max_iters", self.fitting_max_iters.to_string());
        put("fitting.tol", self.fitting_tol.to_string());
        put("init.samples", self.init.samples.to_string());
        put("init.samples_with_prior", self.init.samples_with_prior.to_string());
        put("init.d_min", self.init.d_min.to_string());
        put("init.r_grow", self.init.r_grow.to_string());
        put("init.min_cluster_size", self.init.min_cluster_size.to_string());
        put("init.a_min", self.init.a_min.to_string());
        s
    }
}
