//! Run configuration: a TOML file whose keys are read as flat dotted paths.
//!
//! `optimizer.alpha_hi = 2` and `[optimizer]\nalpha_hi = 2` are the same key.
//! Every key is optional; see [`ACCEPTED_KEYS`] and the README for defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use harq_core::feedback_model::FeedbackSpec;
use harq_core::harq_analysis::{AnalysisOptions, CodeGeometry, DupAckMode, HarqPolicy, OutageFormula};
use harq_core::mc_simulator::{FeedbackMode, MIN_EPISODES};
use harq_core::mi_model::{DownlinkSpec, FailureModel, DEFAULT_CONVOLUTION_BINS, MIN_CONVOLUTION_BINS};
use harq_core::optimizer::{OptimizerConfig, RateGrid};

use crate::error::{AppError, Context};

pub const ACCEPTED_KEYS: &[&str] = &[
    "snr_d_db",
    "snr_u_db",
    "m_max",
    "n_b",
    "n_m",
    "units_total",
    "epsilon",
    "rho_min_units",
    "rho_max_units",
    "rhos_units",
    "alphas",
    "output_path",
    "analysis.outage_formula",
    "analysis.failure_model",
    "analysis.bins",
    "dup_ack.mode",
    "mc.n_episodes",
    "mc.seed",
    "mc.feedback_mode",
    "mc.stop",
    "validate.z_limit",
    "sweep.kind",
    "sweep.axis",
    "sweep.values",
    "sweep.alphas",
    "sweep.scan_points",
    "sweep.gap_stride",
    "optimizer.init",
    "optimizer.init_scan_points",
    "optimizer.init_units",
    "optimizer.init_alpha",
    "optimizer.lambda_lo",
    "optimizer.lambda_hi",
    "optimizer.lambda_tol",
    "optimizer.lambda_doublings",
    "optimizer.pgd_step",
    "optimizer.pgd_tol",
    "optimizer.pgd_max_iters",
    "optimizer.pgd_fd_step",
    "optimizer.alpha_lo",
    "optimizer.alpha_hi",
    "optimizer.alt_max_iters",
    "optimizer.alt_tol",
];

/// How the alternating optimizer is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Best common threshold of an evenly spaced scan over the threshold box.
    Scan { points: usize },
    /// Equal rates and `optimizer.init_alpha` everywhere.
    Uniform,
}

/// Which stop rule `simulate` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimStop {
    FirstAck,
    DuplicatedAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    SnrUDb,
    SnrDDb,
    Alpha,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Analyze,
    Optimize,
    Simulate,
    /// Minimum achievable outage per common threshold.
    Fig3,
    /// Optimized thresholds vs duplicated ACK.
    Fig4,
    /// Variable vs best fixed threshold.
    Fig5,
    /// Gaussian vs exact failure probability over the rate grid.
    Gap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub n_episodes: u64,
    pub seed: u64,
    pub feedback_mode: FeedbackMode,
    pub stop: SimStop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub alphas: Vec<f64>,
    pub scan_points: usize,
    pub gap_stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub snr_d_db: f64,
    pub snr_u_db: f64,
    pub m_max: usize,
    pub n_b: u32,
    pub n_m: u32,
    pub rho_min_units: usize,
    pub rho_max_units: usize,
    pub rhos_units: Option<Vec<usize>>,
    pub alphas: Option<Vec<f64>>,
    pub output_path: Option<PathBuf>,
    pub analysis: AnalysisOptions,
    pub dup_ack: DupAckMode,
    pub optimizer: OptimizerConfig,
    pub init: InitStrategy,
    pub mc: McConfig,
    pub z_limit: f64,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let optimizer = OptimizerConfig::default();
        RunConfig {
            snr_d_db: 3.0,
            snr_u_db: -10.0,
            m_max: 4,
            n_b: 1024,
            n_m: 4096,
            rho_min_units: 1,
            rho_max_units: optimizer.units_total,
            rhos_units: None,
            alphas: None,
            output_path: None,
            analysis: AnalysisOptions::default(),
            dup_ack: DupAckMode::default(),
            optimizer,
            init: InitStrategy::Scan { points: 50 },
            mc: McConfig {
                n_episodes: 1_000_000,
                seed: 1,
                feedback_mode: FeedbackMode::AnalyticFlip,
                stop: SimStop::FirstAck,
            },
            z_limit: 4.0,
            sweep: SweepConfig {
                kind: SweepKind::Optimize,
                axis: SweepAxis::SnrUDb,
                values: Vec::new(),
                alphas: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
                scan_points: 50,
                gap_stride: 4,
            },
        }
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<RunConfig, AppError> {
    let text = std::fs::read_to_string(path).map_err(|source| AppError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text).map_err(|e| match e {
        AppError::Parse { message, .. } => AppError::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Parses and validates config text.
pub fn parse_config(text: &str) -> Result<RunConfig, AppError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| AppError::Parse {
        path: PathBuf::from("<config>"),
        message: e.to_string(),
    })?;
    let mut flat = BTreeMap::new();
    flatten("", table, &mut flat);
    if let Some(key) = flat.keys().find(|k| !ACCEPTED_KEYS.contains(&k.as_str())) {
        return Err(AppError::UnknownKey {
            key: key.clone(),
            accepted: ACCEPTED_KEYS.join(", "),
        });
    }
    let keys = Keys(flat);
    let mut c = RunConfig::default();

    keys.f64("snr_d_db", &mut c.snr_d_db)?;
    keys.f64("snr_u_db", &mut c.snr_u_db)?;
    keys.usize("m_max", &mut c.m_max)?;
    let mut n_b = c.n_b as usize;
    keys.usize("n_b", &mut n_b)?;
    c.n_b = to_u32("n_b", n_b)?;
    let mut n_m = 4 * n_b;
    keys.usize("n_m", &mut n_m)?;
    c.n_m = to_u32("n_m", n_m)?;
    keys.usize("units_total", &mut c.optimizer.units_total)?;
    keys.f64("epsilon", &mut c.optimizer.epsilon)?;
    keys.usize("rho_min_units", &mut c.rho_min_units)?;
    c.rho_max_units = c.optimizer.units_total;
    keys.usize("rho_max_units", &mut c.rho_max_units)?;
    c.rhos_units = keys.usize_list("rhos_units")?;
    c.alphas = keys.f64_list("alphas")?;
    c.output_path = keys.string("output_path")?.map(PathBuf::from);

    if let Some(s) = keys.string("analysis.outage_formula")? {
        c.analysis.outage = choose("analysis.outage_formula", &s, &[("published", OutageFormula::Published), ("exact", OutageFormula::Exact)])?;
    }
    let mut bins = DEFAULT_CONVOLUTION_BINS;
    keys.usize("analysis.bins", &mut bins)?;
    if bins < MIN_CONVOLUTION_BINS {
        return Err(AppError::field("analysis.bins", format!("must be at least {MIN_CONVOLUTION_BINS}, got {bins}")));
    }
    if let Some(s) = keys.string("analysis.failure_model")? {
        c.analysis.failure = choose(
            "analysis.failure_model",
            &s,
            &[("gaussian", FailureModel::Gaussian), ("convolution", FailureModel::Convolution { bins })],
        )?;
    }
    c.optimizer.outage_formula = c.analysis.outage;
    if let Some(s) = keys.string("dup_ack.mode")? {
        c.dup_ack = choose("dup_ack.mode", &s, &[("extra_round", DupAckMode::ExtraRound), ("repeated_slot", DupAckMode::RepeatedSlot)])?;
    }

    keys.u64("mc.n_episodes", &mut c.mc.n_episodes)?;
    keys.u64("mc.seed", &mut c.mc.seed)?;
    if let Some(s) = keys.string("mc.feedback_mode")? {
        c.mc.feedback_mode = choose(
            "mc.feedback_mode",
            &s,
            &[("analytic_flip", FeedbackMode::AnalyticFlip), ("symbol_level", FeedbackMode::SymbolLevel)],
        )?;
    }
    if let Some(s) = keys.string("mc.stop")? {
        c.mc.stop = choose("mc.stop", &s, &[("first_ack", SimStop::FirstAck), ("duplicated_ack", SimStop::DuplicatedAck)])?;
    }
    keys.f64("validate.z_limit", &mut c.z_limit)?;

    if let Some(s) = keys.string("sweep.kind")? {
        c.sweep.kind = choose(
            "sweep.kind",
            &s,
            &[
                ("analyze", SweepKind::Analyze),
                ("optimize", SweepKind::Optimize),
                ("simulate", SweepKind::Simulate),
                ("fig3", SweepKind::Fig3),
                ("fig4", SweepKind::Fig4),
                ("fig5", SweepKind::Fig5),
                ("gap", SweepKind::Gap),
            ],
        )?;
    }
    if let Some(s) = keys.string("sweep.axis")? {
        c.sweep.axis = choose(
            "sweep.axis",
            &s,
            &[("snr_u_db", SweepAxis::SnrUDb), ("snr_d_db", SweepAxis::SnrDDb), ("alpha", SweepAxis::Alpha)],
        )?;
    }
    if let Some(v) = keys.f64_list("sweep.values")? {
        c.sweep.values = v;
    }
    if let Some(v) = keys.f64_list("sweep.alphas")? {
        c.sweep.alphas = v;
    }
    keys.usize("sweep.scan_points", &mut c.sweep.scan_points)?;
    keys.usize("sweep.gap_stride", &mut c.sweep.gap_stride)?;

    let o = &mut c.optimizer;
    let mut init = "scan".to_string();
    if let Some(s) = keys.string("optimizer.init")? {
        init = s;
    }
    let mut init_points = 50;
    keys.usize("optimizer.init_scan_points", &mut init_points)?;
    c.init = match init.as_str() {
        "scan" => InitStrategy::Scan { points: init_points },
        "uniform" => InitStrategy::Uniform,
        _ => return Err(AppError::field("optimizer.init", format!("expected one of scan, uniform; got `{init}`"))),
    };
    if let Some(v) = keys.get("optimizer.init_units") {
        o.init_units = Some(as_usize("optimizer.init_units", v)?);
    }
    keys.f64("optimizer.init_alpha", &mut o.init_alpha)?;
    keys.f64("optimizer.lambda_lo", &mut o.lambda_lo)?;
    keys.f64("optimizer.lambda_hi", &mut o.lambda_hi)?;
    keys.f64("optimizer.lambda_tol", &mut o.lambda_tol)?;
    let mut doublings = o.lambda_doublings as usize;
    keys.usize("optimizer.lambda_doublings", &mut doublings)?;
    o.lambda_doublings = to_u32("optimizer.lambda_doublings", doublings)?;
    keys.f64("optimizer.pgd_step", &mut o.pgd_step)?;
    keys.f64("optimizer.pgd_tol", &mut o.pgd_tol)?;
    keys.usize("optimizer.pgd_max_iters", &mut o.pgd_max_iters)?;
    keys.f64("optimizer.pgd_fd_step", &mut o.pgd_fd_step)?;
    keys.f64("optimizer.alpha_lo", &mut o.alpha_lo)?;
    keys.f64("optimizer.alpha_hi", &mut o.alpha_hi)?;
    keys.usize("optimizer.alt_max_iters", &mut o.alt_max_iters)?;
    keys.f64("optimizer.alt_tol", &mut o.alt_tol)?;

    c.validate()?;
    Ok(c)
}

impl RunConfig {
    /// Checks every bound, naming the offending key.
    pub fn validate(&self) -> Result<(), AppError> {
        for (key, v) in [("snr_d_db", self.snr_d_db), ("snr_u_db", self.snr_u_db)] {
            if !v.is_finite() {
                return Err(AppError::field(key, format!("must be finite, got {v}")));
            }
        }
        let eps = self.optimizer.epsilon;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(AppError::field("epsilon", format!("must lie in the open interval (0, 1), got {eps}")));
        }
        if self.m_max == 0 {
            return Err(AppError::field("m_max", "must be at least 1"));
        }
        if self.n_b == 0 {
            return Err(AppError::field("n_b", "must be positive"));
        }
        if self.n_m < self.n_b {
            return Err(AppError::field("n_m", format!("must be at least n_b = {}, got {}", self.n_b, self.n_m)));
        }
        let units = self.optimizer.units_total;
        if units < self.m_max {
            return Err(AppError::field("units_total", format!("must be at least m_max = {}, got {units}", self.m_max)));
        }
        if self.rho_min_units == 0 || self.rho_min_units > self.rho_max_units {
            return Err(AppError::field(
                "rho_min_units",
                format!("must lie in [1, rho_max_units = {}], got {}", self.rho_max_units, self.rho_min_units),
            ));
        }
        if self.rho_max_units > units {
            return Err(AppError::field(
                "rho_max_units",
                format!("must be at most units_total = {units}, got {}", self.rho_max_units),
            ));
        }
        if self.rho_min_units * self.m_max > units {
            return Err(AppError::field(
                "rho_min_units",
                format!("{} rounds of {} units exceed units_total = {units}", self.m_max, self.rho_min_units),
            ));
        }
        if let Some(r) = &self.rhos_units {
            if r.len() != self.m_max {
                return Err(AppError::field("rhos_units", format!("needs m_max = {} entries, got {}", self.m_max, r.len())));
            }
            if let Some(u) = r.iter().find(|&&u| u < self.rho_min_units || u > self.rho_max_units) {
                return Err(AppError::field(
                    "rhos_units",
                    format!("entry {u} outside [{}, {}]", self.rho_min_units, self.rho_max_units),
                ));
            }
            let sum: usize = r.iter().sum();
            if sum > units {
                return Err(AppError::field("rhos_units", format!("sum {sum} exceeds units_total = {units}")));
            }
        }
        if let Some(a) = &self.alphas {
            if a.len() != self.m_max - 1 {
                return Err(AppError::field("alphas", format!("needs m_max - 1 = {} entries, got {}", self.m_max - 1, a.len())));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(AppError::field("alphas", "entries must be finite"));
            }
        }
        if self.mc.n_episodes < MIN_EPISODES {
            return Err(AppError::field("mc.n_episodes", format!("must be at least {MIN_EPISODES}, got {}", self.mc.n_episodes)));
        }
        if !(self.z_limit > 0.0) {
            return Err(AppError::field("validate.z_limit", format!("must be positive, got {}", self.z_limit)));
        }
        if self.sweep.values.iter().any(|v| !v.is_finite()) {
            return Err(AppError::field("sweep.values", "entries must be finite"));
        }
        if self.sweep.scan_points < 2 {
            return Err(AppError::field("sweep.scan_points", "must be at least 2"));
        }
        if self.sweep.gap_stride == 0 {
            return Err(AppError::field("sweep.gap_stride", "must be positive"));
        }
        if let InitStrategy::Scan { points } = self.init {
            if points < 2 {
                return Err(AppError::field("optimizer.init_scan_points", "must be at least 2"));
            }
        }
        self.optimizer.validate(self.m_max).map_err(|e| match e {
            harq_core::Error::Invalid { field, detail } => {
                let path = if field.contains('.') || ACCEPTED_KEYS.contains(&field) {
                    field.to_string()
                } else {
                    format!("optimizer.{field}")
                };
                AppError::field(path, detail)
            }
            other => AppError::Core {
                context: "optimizer settings".into(),
                source: other,
            },
        })
    }

    pub fn geometry(&self) -> Result<CodeGeometry, AppError> {
        let unit = self.n_m as f64 / self.n_b as f64 / self.optimizer.units_total as f64;
        CodeGeometry::new(
            self.n_b,
            self.n_m,
            self.rho_min_units as f64 * unit,
            self.rho_max_units as f64 * unit,
        )
        .context("code geometry")
    }

    pub fn grid(&self) -> Result<RateGrid, AppError> {
        RateGrid::new(&self.geometry()?, self.optimizer.units_total).context("rate grid")
    }

    pub fn downlink(&self) -> Result<DownlinkSpec, AppError> {
        DownlinkSpec::new(self.snr_d_db).context("snr_d_db")
    }

    /// Feedback channel with the configured thresholds (or none).
    pub fn feedback(&self) -> Result<FeedbackSpec, AppError> {
        FeedbackSpec::new(self.snr_u_db, self.alphas.clone().unwrap_or_default()).context("snr_u_db")
    }

    /// The policy given by `rhos_units` and `alphas`; both are required.
    pub fn policy(&self) -> Result<HarqPolicy, AppError> {
        let units = self
            .rhos_units
            .as_ref()
            .ok_or_else(|| AppError::field("rhos_units", "required by this command"))?;
        let alphas = match (&self.alphas, self.m_max) {
            (_, 1) => Vec::new(),
            (Some(a), _) => a.clone(),
            (None, _) => return Err(AppError::field("alphas", "required by this command")),
        };
        let grid = self.grid()?;
        HarqPolicy::new(grid.rhos_of(units), alphas, self.geometry()?).context("policy")
    }

    /// A copy with one sweep coordinate applied.
    pub fn at(&self, axis: SweepAxis, value: f64) -> RunConfig {
        let mut c = self.clone();
        match axis {
            SweepAxis::SnrUDb => c.snr_u_db = value,
            SweepAxis::SnrDDb => c.snr_d_db = value,
            SweepAxis::Alpha => c.alphas = Some(vec![value; self.m_max - 1]),
        }
        c
    }
}

fn flatten(prefix: &str, table: toml::Table, out: &mut BTreeMap<String, toml::Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other);
            }
        }
    }
}

fn choose<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T, AppError> {
    options.iter().find(|(name, _)| *name == value).map(|(_, v)| *v).ok_or_else(|| {
        let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
        AppError::field(key, format!("expected one of {}; got `{value}`", names.join(", ")))
    })
}

fn to_u32(key: &str, v: usize) -> Result<u32, AppError> {
    u32::try_from(v).map_err(|_| AppError::field(key, format!("{v} does not fit in 32 bits")))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64, AppError> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(AppError::field(key, format!("expected a number, got {}", other.type_str()))),
    }
}

fn as_u64(key: &str, v: &toml::Value) -> Result<u64, AppError> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        toml::Value::Integer(i) => Err(AppError::field(key, format!("must be non-negative, got {i}"))),
        other => Err(AppError::field(key, format!("expected an integer, got {}", other.type_str()))),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize, AppError> {
    let x = as_u64(key, v)?;
    usize::try_from(x).map_err(|_| AppError::field(key, format!("{x} is too large")))
}

fn as_array<'a>(key: &str, v: &'a toml::Value) -> Result<&'a [toml::Value], AppError> {
    v.as_array()
        .map(|a| a.as_slice())
        .ok_or_else(|| AppError::field(key, format!("expected an array, got {}", v.type_str())))
}

struct Keys(BTreeMap<String, toml::Value>);

impl Keys {
    fn get(&self, key: &str) -> Option<&toml::Value> {
        self.0.get(key)
    }

    fn f64(&self, key: &str, slot: &mut f64) -> Result<(), AppError> {
        if let Some(v) = self.get(key) {
            *slot = as_f64(key, v)?;
        }
        Ok(())
    }

    fn u64(&self, key: &str, slot: &mut u64) -> Result<(), AppError> {
        if let Some(v) = self.get(key) {
            *slot = as_u64(key, v)?;
        }
        Ok(())
    }

    fn usize(&self, key: &str, slot: &mut usize) -> Result<(), AppError> {
        if let Some(v) = self.get(key) {
            *slot = as_usize(key, v)?;
        }
        Ok(())
    }

    fn string(&self, key: &str) -> Result<Option<String>, AppError> {
        self.get(key)
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| AppError::field(key, format!("expected a string, got {}", v.type_str())))
            })
            .transpose()
    }

    fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, AppError> {
        self.get(key)
            .map(|v| {
                as_array(key, v)?
                    .iter()
                    .enumerate()
                    .map(|(i, x)| as_f64(&format!("{key}[{i}]"), x))
                    .collect()
            })
            .transpose()
    }

    fn usize_list(&self, key: &str) -> Result<Option<Vec<usize>>, AppError> {
        self.get(key)
            .map(|v| {
                as_array(key, v)?
                    .iter()
                    .enumerate()
                    .map(|(i, x)| as_usize(&format!("{key}[{i}]"), x))
                    .collect()
            })
            .transpose()
    }
}
