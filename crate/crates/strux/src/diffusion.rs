//! Two-segment (influential / imitator) diffusion as a joint nonlinear state
//! space, fit by MAP with a UKF likelihood inside an MCEM loop whose M-step is
//! a genetic search.
//!
//! Each category contributes states (c_inf, c_imm), cumulative counts that
//! move by the Bass-type increment and are clamped to [0, M]. Observations are
//! y = θ·c_inf + (1 − θ)·c_imm + v. Only θ·M_inf and (1 − θ)·M_imm enter the
//! observation scale, so θ and the market sizes are not separately identified
//! from one series; the hierarchy prior and the initialization pin them down.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::kalman::{ukf_filter, ukf_loglik, ukf_smooth, SliceStateSpace, FilterOutput, GaussianBelief, NonlinearStateSpace, UkfParams};
use crate::linalg;
use crate::optim::{genetic_optimize, mcem_drive, GAConfig, MCEMConfig, McemIteration, ObjFn, ParamTransform, TransformKind};
use crate::rng;
use crate::stats::{gauss_logpdf, mvn_draw};

/// Parameters per category, in this order in every flat vector.
pub const PARAM_NAMES: [&str; 8] = ["p_inf", "q_inf", "p_imm", "q_imm", "m_inf", "m_imm", "w", "theta"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentedDiffusionParams {
    pub p_inf: f64,
    pub q_inf: f64,
    pub p_imm: f64,
    pub q_imm: f64,
    pub m_inf: f64,
    pub m_imm: f64,
    pub w: f64,
    pub theta: f64,
}

impl SegmentedDiffusionParams {
    pub fn to_vec(&self) -> [f64; 8] {
        [self.p_inf, self.q_inf, self.p_imm, self.q_imm, self.m_inf, self.m_imm, self.w, self.theta]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self { p_inf: v[0], q_inf: v[1], p_imm: v[2], q_imm: v[3], m_inf: v[4], m_imm: v[5], w: v[6], theta: v[7] }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return invalid("non-finite diffusion parameter");
        }
        if self.p_inf < 0.0 || self.q_inf < 0.0 || self.p_imm < 0.0 || self.q_imm < 0.0 {
            return invalid("adoption rates must be non-negative");
        }
        if !(self.m_inf > 0.0 && self.m_imm > 0.0) {
            return invalid("market sizes must be positive");
        }
        if !(self.w > 0.0 && self.w < 1.0 && self.theta > 0.0 && self.theta < 1.0) {
            return invalid("w and theta must lie in (0,1)");
        }
        Ok(())
    }

    /// One deterministic step of the cumulative recursion, clamped to [0, M].
    pub fn step(&self, c_inf: f64, c_imm: f64) -> (f64, f64) {
        let (inf, imm) = self.step_smooth(c_inf.clamp(0.0, self.m_inf), c_imm.clamp(0.0, self.m_imm));
        (inf.clamp(0.0, self.m_inf), imm.clamp(0.0, self.m_imm))
    }

    /// The same polynomial without clamping. The filter propagates sigma
    /// points through this form: a clamp at the boundary makes the unscented
    /// mean blow up when the sigma spread is tiny.
    pub fn step_smooth(&self, ci: f64, cm: f64) -> (f64, f64) {
        let fi = ci / self.m_inf;
        let fm = cm / self.m_imm;
        let inf = ci + (self.p_inf + self.q_inf * fi) * (self.m_inf - ci);
        let imm = cm + (self.p_imm + self.q_imm * (self.w * fi + (1.0 - self.w) * fm)) * (self.m_imm - cm);
        (inf, imm)
    }

    pub fn observe(&self, c_inf: f64, c_imm: f64) -> f64 {
        self.theta * c_inf + (1.0 - self.theta) * c_imm
    }
}

/// Local-store rows of the reference category table, in table order.
pub fn reference_local_params() -> Vec<(&'static str, SegmentedDiffusionParams)> {
    let rows: [(&str, [f64; 8]); 10] = [
        ("Device Tools", [0.025, 0.0, 0.282, 0.194, 5.0, 80.0, 0.100, 0.046]),
        ("eBooks", [0.024, 0.0, 0.278, 0.191, 103.0, 1952.0, 0.032, 0.044]),
        ("Games", [0.024, 0.0, 0.275, 0.189, 3.0, 56.0, 0.246, 0.038]),
        ("Health", [0.025, 0.0, 0.282, 0.194, 7.0, 120.0, 0.782, 0.038]),
        ("Humor", [0.026, 0.0, 0.299, 0.206, 6.0, 99.0, 0.506, 0.041]),
        ("Internet", [0.025, 0.0, 0.285, 0.197, 11.0, 200.0, 0.738, 0.041]),
        ("Logic", [0.025, 0.0, 0.282, 0.194, 6.0, 113.0, 0.344, 0.043]),
        ("Reference", [0.026, 0.0, 0.299, 0.206, 12.0, 225.0, 0.940, 0.042]),
        ("Social", [0.025, 0.0, 0.281, 0.193, 3.0, 48.0, 0.658, 0.040]),
        ("University", [0.025, 0.0, 0.281, 0.194, 6.0, 113.0, 0.555, 0.042]),
    ];
    rows.iter().map(|(n, v)| (*n, SegmentedDiffusionParams::from_slice(v))).collect()
}

pub fn ebooks_local() -> SegmentedDiffusionParams {
    reference_local_params()[1].1
}

/// Category-level shrinkage Φ_j = Δ·Pop_j + o_j on the transformed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    /// 8×q coefficients.
    pub delta: DMatrix<f64>,
    /// Residual variance per transformed parameter.
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointDiffusionModel {
    pub params: Vec<SegmentedDiffusionParams>,
    /// 2J×2J covariance of (c_inf_1, c_imm_1, c_inf_2, ...) innovations.
    pub state_noise: DMatrix<f64>,
    pub obs_noise: Vec<f64>,
    pub hierarchy: Option<Hierarchy>,
    /// Covariates per category (an intercept is added internally).
    pub popularity: Vec<Vec<f64>>,
    /// Mean of the state before the first observation.
    pub initial_state: Vec<f64>,
    pub initial_var: f64,
}

impl JointDiffusionModel {
    /// Independent categories with diagonal noise, starting from zero adopters.
    pub fn new(params: Vec<SegmentedDiffusionParams>, state_var: (f64, f64), obs_var: f64) -> Self {
        let j = params.len();
        let mut w = DMatrix::zeros(2 * j, 2 * j);
        for k in 0..j {
            w[(2 * k, 2 * k)] = state_var.0;
            w[(2 * k + 1, 2 * k + 1)] = state_var.1;
        }
        Self {
            params,
            state_noise: w,
            obs_noise: vec![obs_var; j],
            hierarchy: None,
            popularity: vec![Vec::new(); j],
            initial_state: vec![0.0; 2 * j],
            initial_var: 1.0,
        }
    }

    pub fn categories(&self) -> usize {
        self.params.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.params.len();
        if j == 0 {
            return invalid("model has no categories");
        }
        for p in &self.params {
            p.validate()?;
        }
        if self.state_noise.shape() != (2 * j, 2 * j) {
            return Err(Error::Dimension(format!("state noise is {:?}, expected {}x{}", self.state_noise.shape(), 2 * j, 2 * j)));
        }
        if !linalg::is_psd(&self.state_noise, 1e-9) {
            return invalid("state noise not PSD");
        }
        if self.obs_noise.len() != j || self.obs_noise.iter().any(|v| !(*v > 0.0)) {
            return invalid("observation variances must be positive, one per category");
        }
        if self.popularity.len() != j {
            return Err(Error::Dimension("one popularity row per category required".into()));
        }
        if self.initial_state.len() != 2 * j || !(self.initial_var > 0.0) {
            return invalid("initial state must have 2J entries and positive variance");
        }
        Ok(())
    }

    /// Unclamped mean transition used by the filter.
    fn transition(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        for (k, p) in self.params.iter().enumerate() {
            let (a, b) = p.step_smooth(x[2 * k], x[2 * k + 1]);
            out[2 * k] = a;
            out[2 * k + 1] = b;
        }
        out
    }

    fn observe(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.params.len(), self.params.iter().enumerate().map(|(k, p)| p.observe(x[2 * k], x[2 * k + 1])))
    }

    fn prior_belief(&self) -> GaussianBelief {
        let n = self.initial_state.len();
        GaussianBelief::new(DVector::from_column_slice(&self.initial_state), DMatrix::identity(n, n) * self.initial_var)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDiffusion {
    /// J×T observed cumulative adopters.
    pub y: Vec<Vec<f64>>,
    pub c_inf: Vec<Vec<f64>>,
    pub c_imm: Vec<Vec<f64>>,
    /// Drawn state innovations per period (2J each), before clamping.
    pub innovations: Vec<DVector<f64>>,
}

/// Draw T periods. With `noiseless` the recursion runs without any noise.
pub fn simulate_diffusion(model: &JointDiffusionModel, t: usize, seed: u64, noiseless: bool) -> Result<SimulatedDiffusion> {
    model.validate()?;
    if t == 0 {
        return invalid("T must be at least 1");
    }
    let j = model.categories();
    let mut r = rng::stream(seed, &[0xd1ff]);
    let mut x = DVector::from_column_slice(&model.initial_state);
    let zero = DVector::zeros(2 * j);
    let mut out = SimulatedDiffusion { y: vec![Vec::with_capacity(t); j], c_inf: vec![Vec::with_capacity(t); j], c_imm: vec![Vec::with_capacity(t); j], innovations: Vec::with_capacity(t) };
    for _ in 0..t {
        let mut nx = DVector::zeros(2 * j);
        for (k, p) in model.params.iter().enumerate() {
            let (a, b) = p.step(x[2 * k], x[2 * k + 1]);
            nx[2 * k] = a;
            nx[2 * k + 1] = b;
        }
        let e = if noiseless { zero.clone() } else { mvn_draw(&mut r, &zero, &model.state_noise)? };
        nx += &e;
        for (k, p) in model.params.iter().enumerate() {
            nx[2 * k] = nx[2 * k].clamp(0.0, p.m_inf);
            nx[2 * k + 1] = nx[2 * k + 1].clamp(0.0, p.m_imm);
            let v = if noiseless { 0.0 } else { model.obs_noise[k].sqrt() * r.sample::<f64, _>(StandardNormal) };
            out.y[k].push(p.observe(nx[2 * k], nx[2 * k + 1]) + v);
            out.c_inf[k].push(nx[2 * k]);
            out.c_imm[k].push(nx[2 * k + 1]);
        }
        out.innovations.push(e);
        x = nx;
    }
    Ok(out)
}

fn check_series(y: &[Vec<f64>], j: usize) -> Result<usize> {
    if y.len() != j {
        return Err(Error::Dimension(format!("{} series for {} categories", y.len(), j)));
    }
    let t = y[0].len();
    if y.iter().any(|s| s.len() != t) {
        return Err(Error::Dimension("series lengths differ".into()));
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return invalid("non-finite observation");
    }
    Ok(t)
}

fn as_series(y: &[Vec<f64>]) -> Vec<Option<DVector<f64>>> {
    let t = y[0].len();
    (0..t).map(|s| Some(DVector::from_iterator(y.len(), y.iter().map(|row| row[s])))).collect()
}

/// UKF over the joint state space.
pub fn filter(model: &JointDiffusionModel, y: &[Vec<f64>], ut: UkfParams, smooth: bool) -> Result<FilterOutput> {
    model.validate()?;
    check_series(y, model.categories())?;
    let tf = |x: &DVector<f64>| model.transition(x);
    let of = |x: &DVector<f64>| model.observe(x);
    let obs_noise = DMatrix::from_diagonal(&DVector::from_column_slice(&model.obs_noise));
    let nl = NonlinearStateSpace { transition_fn: &tf, obs_fn: &of, state_noise: model.state_noise.clone(), obs_noise };
    let out = ukf_filter(&as_series(y), &nl, &model.prior_belief(), ut)?;
    if smooth {
        ukf_smooth(&out, &nl, ut)
    } else {
        Ok(out)
    }
}

/// Map between a model and the unconstrained search vector:
/// 8 transformed parameters per category, the packed lower factor of W
/// (log diagonal), then log V_j.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionCoding {
    pub categories: usize,
    pub eps: f64,
}

impl DiffusionCoding {
    pub fn new(categories: usize, eps: f64) -> Self {
        Self { categories, eps }
    }

    fn param_transform(&self) -> ParamTransform {
        let e = self.eps;
        ParamTransform::new(vec![
            TransformKind::LogPositive { shift: -e },
            TransformKind::LogPositive { shift: -e },
            TransformKind::LogPositive { shift: -e },
            TransformKind::LogPositive { shift: -e },
            TransformKind::LogPositive { shift: 0.0 },
            TransformKind::LogPositive { shift: 0.0 },
            TransformKind::Logit { lo: 0.0, hi: 1.0 },
            TransformKind::Logit { lo: 0.0, hi: 1.0 },
        ])
    }

    pub fn state_len(&self) -> usize {
        let n = 2 * self.categories;
        n * (n + 1) / 2
    }

    pub fn len(&self) -> usize {
        8 * self.categories + self.state_len() + self.categories
    }

    pub fn is_empty(&self) -> bool {
        self.categories == 0
    }

    /// Offset of a named parameter of category `j` in the search vector.
    pub fn param_index(&self, j: usize, name: &str) -> Option<usize> {
        PARAM_NAMES.iter().position(|n| *n == name).map(|k| 8 * j + k)
    }

    /// Transformed per-category parameters Φ_j.
    pub fn phi(&self, p: &SegmentedDiffusionParams) -> Vec<f64> {
        self.param_transform().forward(&p.to_vec())
    }

    pub fn encode(&self, m: &JointDiffusionModel) -> Result<Vec<f64>> {
        let mut u = Vec::with_capacity(self.len());
        for p in &m.params {
            u.extend(self.phi(p));
        }
        u.extend(linalg::packed_from_cov(&m.state_noise)?);
        u.extend(m.obs_noise.iter().map(|v| v.ln()));
        Ok(u)
    }

    /// Fills parameters and noise into a copy of `template`.
    pub fn decode(&self, u: &[f64], template: &JointDiffusionModel) -> JointDiffusionModel {
        let j = self.categories;
        let tr = self.param_transform();
        let params = (0..j).map(|k| SegmentedDiffusionParams::from_slice(&tr.inverse(&u[8 * k..8 * k + 8]))).collect();
        let off = 8 * j;
        let l = linalg::lower_from_packed(2 * j, &u[off..off + self.state_len()]);
        let w = linalg::symmetrize(&(&l * l.transpose()));
        let obs = u[off + self.state_len()..].iter().map(|v| v.exp()).collect();
        JointDiffusionModel { params, state_noise: w, obs_noise: obs, ..template.clone() }
    }
}

fn design_row(pop: &[f64]) -> Vec<f64> {
    let mut r = Vec::with_capacity(pop.len() + 1);
    r.push(1.0);
    r.extend_from_slice(pop);
    r
}

/// Least-squares fit of Φ_j on (1, Pop_j), with residual variances shrunk
/// toward 1 by a two-observation pseudo-prior. None when there are too few
/// categories for a residual.
pub fn fit_hierarchy(phis: &[Vec<f64>], pop: &[Vec<f64>]) -> Option<Hierarchy> {
    let j = phis.len();
    let q = pop.first().map_or(0, |p| p.len()) + 1;
    if j < q + 2 {
        return None;
    }
    let x = DMatrix::from_fn(j, q, |r, c| design_row(&pop[r])[c]);
    let xtx = x.transpose() * &x;
    let inv = linalg::spd_inverse(&xtx).ok()?;
    let d = phis[0].len();
    let mut delta = DMatrix::zeros(d, q);
    let mut sigma2 = Vec::with_capacity(d);
    let (nu0, s0) = (2.0, 1.0);
    for c in 0..d {
        let yv = DVector::from_iterator(j, phis.iter().map(|p| p[c]));
        let b = &inv * (x.transpose() * &yv);
        let rss = (&yv - &x * &b).norm_squared();
        delta.set_row(c, &b.transpose());
        sigma2.push((rss + nu0 * s0) / (j as f64 + nu0));
    }
    Some(Hierarchy { delta, sigma2 })
}

/// log p(Φ | hierarchy); zero when there is no hierarchy.
pub fn log_prior(coding: &DiffusionCoding, model: &JointDiffusionModel) -> f64 {
    let Some(h) = &model.hierarchy else { return 0.0 };
    let mut lp = 0.0;
    for (p, pop) in model.params.iter().zip(&model.popularity) {
        let phi = coding.phi(p);
        let z = design_row(pop);
        for (c, v) in phi.iter().enumerate() {
            let mean: f64 = h.delta.row(c).iter().zip(&z).map(|(a, b)| a * b).sum();
            lp += gauss_logpdf(*v, mean, h.sigma2[c]);
        }
    }
    lp
}

/// UKF log likelihood plus log prior; −∞ when the filter fails.
pub fn log_posterior(coding: &DiffusionCoding, model: &JointDiffusionModel, y: &[Vec<f64>], ut: UkfParams) -> f64 {
    match loglik(model, y, ut) {
        Ok(ll) if ll.is_finite() => ll + log_prior(coding, model),
        _ => f64::NEG_INFINITY,
    }
}

/// UKF log likelihood alone, on the allocation-free path.
pub fn loglik(model: &JointDiffusionModel, y: &[Vec<f64>], ut: UkfParams) -> Result<f64> {
    model.validate()?;
    let j = model.categories();
    let t = check_series(y, j)?;
    let tf = |x: &[f64], out: &mut [f64]| {
        for (k, p) in model.params.iter().enumerate() {
            let (a, b) = p.step_smooth(x[2 * k], x[2 * k + 1]);
            out[2 * k] = a;
            out[2 * k + 1] = b;
        }
    };
    let of = |x: &[f64], out: &mut [f64]| {
        for (k, p) in model.params.iter().enumerate() {
            out[k] = p.observe(x[2 * k], x[2 * k + 1]);
        }
    };
    let obs_noise = DMatrix::from_diagonal(&DVector::from_column_slice(&model.obs_noise));
    let series: Vec<Vec<f64>> = (0..t).map(|s| y.iter().map(|row| row[s]).collect()).collect();
    let ss = SliceStateSpace { state_dim: 2 * j, obs_dim: j, transition_fn: &tf, obs_fn: &of, state_noise: &model.state_noise, obs_noise: &obs_noise };
    ukf_loglik(&series, &ss, &model.prior_belief(), ut)
}

/// Starting values for the search.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionDefaults {
    pub p_inf: f64,
    pub q_inf: f64,
    pub p_imm: f64,
    pub q_imm: f64,
    pub w: f64,
    pub theta: f64,
    /// M_inf starts at this fraction of max(y).
    pub m_inf_share: f64,
    /// State and observation noise s.d. as a fraction of max(y).
    pub noise_share: f64,
}

impl Default for DiffusionDefaults {
    fn default() -> Self {
        Self { p_inf: 0.03, q_inf: 0.01, p_imm: 0.1, q_imm: 0.1, w: 0.5, theta: 0.05, m_inf_share: 0.05, noise_share: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionConfig {
    pub mcem: MCEMConfig,
    pub ga: GAConfig,
    pub ukf: UkfParams,
    pub defaults: DiffusionDefaults,
    /// Offset inside log(p + eps) and log(q + eps).
    pub eps: f64,
    pub initial_var: f64,
    /// Search-vector coordinates allowed to move; None frees all.
    pub free: Option<Vec<bool>>,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            mcem: MCEMConfig { tolerance: 1e-8, max_iterations: 25, monte_carlo_draws: 0 },
            ga: GAConfig::default(),
            ukf: UkfParams::default(),
            defaults: DiffusionDefaults::default(),
            eps: 1e-6,
            initial_var: 1.0,
            free: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionFit {
    pub model: JointDiffusionModel,
    pub filter: FilterOutput,
    /// J×T one-step-ahead forecasts.
    pub forecasts: Vec<Vec<f64>>,
    pub mad: f64,
    pub mse: f64,
    pub objective_init: f64,
    pub objective: f64,
    pub trace: Vec<McemIteration>,
    pub converged: bool,
    /// Initial GA population in natural coordinates of the first category.
    pub initial_population: Vec<Vec<f64>>,
}

/// Starting model from the defaults.
pub fn default_start(y: &[Vec<f64>], pop: &[Vec<f64>], cfg: &DiffusionConfig) -> Result<JointDiffusionModel> {
    let j = y.len();
    if j == 0 {
        return invalid("no series");
    }
    let d = &cfg.defaults;
    let mut params = Vec::with_capacity(j);
    let mut sv = Vec::with_capacity(j);
    let mut ov = Vec::with_capacity(j);
    for s in y {
        let ymax = s.iter().cloned().fold(0.0f64, f64::max).max(1.0);
        params.push(SegmentedDiffusionParams {
            p_inf: d.p_inf,
            q_inf: d.q_inf,
            p_imm: d.p_imm,
            q_imm: d.q_imm,
            m_inf: d.m_inf_share * ymax,
            m_imm: ymax / (1.0 - d.theta),
            w: d.w,
            theta: d.theta,
        });
        let sd = d.noise_share * ymax;
        sv.push(sd * sd);
        ov.push(sd * sd);
    }
    let mut m = JointDiffusionModel::new(params, (1.0, 1.0), 1.0);
    for k in 0..j {
        m.state_noise[(2 * k, 2 * k)] = sv[k] * d.m_inf_share;
        m.state_noise[(2 * k + 1, 2 * k + 1)] = sv[k];
    }
    m.obs_noise = ov;
    m.popularity = if pop.is_empty() { vec![Vec::new(); j] } else { pop.to_vec() };
    m.initial_var = cfg.initial_var;
    Ok(m)
}

/// MAP fit from the configured defaults.
pub fn fit_map(y: &[Vec<f64>], pop: &[Vec<f64>], cfg: &DiffusionConfig) -> Result<DiffusionFit> {
    let start = default_start(y, pop, cfg)?;
    fit_map_from(y, &start, cfg)
}

/// MAP fit from a given starting model. Each E-step refits the hierarchy at
/// the current parameters and returns the log posterior; the M-step runs
/// the genetic search from the current point with U(0.9, 1.1) jitter.
pub fn fit_map_from(y: &[Vec<f64>], start: &JointDiffusionModel, cfg: &DiffusionConfig) -> Result<DiffusionFit> {
    start.validate()?;
    let j = start.categories();
    let t = check_series(y, j)?;
    if t < 10 {
        return invalid("need at least 10 periods per category");
    }
    if y.iter().flatten().any(|v| *v < 0.0) {
        return invalid("adoption counts must be non-negative");
    }
    let coding = DiffusionCoding::new(j, cfg.eps);
    let u0 = coding.encode(start)?;
    if let Some(f) = &cfg.free {
        if f.len() != u0.len() {
            return Err(Error::Dimension(format!("free mask has {} entries, search vector {}", f.len(), u0.len())));
        }
    }
    let ydata = Arc::new(y.to_vec());
    let template = Arc::new(start.clone());
    let ut = cfg.ukf;

    let objective_for = {
        let coding = coding.clone();
        let ydata = ydata.clone();
        let template = template.clone();
        move |u: &[f64]| -> (JointDiffusionModel, f64) {
            let mut m = coding.decode(u, &template);
            let phis: Vec<Vec<f64>> = m.params.iter().map(|p| coding.phi(p)).collect();
            m.hierarchy = fit_hierarchy(&phis, &m.popularity);
            let v = log_posterior(&coding, &m, &ydata, ut);
            (m, v)
        }
    };
    let objective_init = objective_for(&u0).1;
    if !objective_init.is_finite() {
        return Err(Error::Numerical("log posterior not finite at the starting point".into()));
    }

    let e_step = {
        let coding = coding.clone();
        let ydata = ydata.clone();
        let template = template.clone();
        move |u: &[f64], _it: usize| -> Result<Box<ObjFn<'static>>> {
            let base = coding.decode(u, &template);
            let phis: Vec<Vec<f64>> = base.params.iter().map(|p| coding.phi(p)).collect();
            let hier = fit_hierarchy(&phis, &base.popularity);
            let coding = coding.clone();
            let ydata = ydata.clone();
            let template = template.clone();
            Ok(Box::new(move |v: &[f64]| {
                let mut m = coding.decode(v, &template);
                m.hierarchy = hier.clone();
                log_posterior(&coding, &m, &ydata, ut)
            }))
        }
    };

    let free = cfg.free.clone();
    let ga = cfg.ga.clone();
    let seed = cfg.seed;
    let coding_m = coding.clone();
    let mut first_population: Vec<Vec<f64>> = Vec::new();
    let first_pop_ref = &mut first_population;
    let m_step = move |q: &ObjFn<'static>, u: &[f64], it: usize| -> Result<Vec<f64>> {
        let pop = jitter_population(&coding_m, u, ga.population, rng::mix(seed, &[it as u64]), free.as_deref());
        if it == 0 {
            *first_pop_ref = pop.iter().map(|p| coding_m.param_transform().inverse(&p[..8])).collect();
        }
        let embed = |x: &[f64]| -> Vec<f64> {
            match &free {
                None => x.to_vec(),
                Some(mask) => {
                    let mut full = u.to_vec();
                    let mut k = 0;
                    for (i, f) in mask.iter().enumerate() {
                        if *f {
                            full[i] = x[k];
                            k += 1;
                        }
                    }
                    full
                }
            }
        };
        let project = |x: &[f64]| -> Vec<f64> {
            match &free {
                None => x.to_vec(),
                Some(mask) => x.iter().zip(mask).filter(|(_, f)| **f).map(|(v, _)| *v).collect(),
            }
        };
        let sub_pop: Vec<Vec<f64>> = pop.iter().map(|p| project(p)).collect();
        if sub_pop[0].is_empty() {
            return Ok(u.to_vec());
        }
        let obj = |x: &[f64]| q(&embed(x));
        let gcfg = GAConfig { seed: rng::mix(seed, &[0x6a, it as u64]), ..ga.clone() };
        let res = genetic_optimize(&obj, &sub_pop, &gcfg)?;
        Ok(embed(&res.x))
    };
    let res = mcem_drive(e_step, m_step, &cfg.mcem, &u0)?;
    let (model, objective) = objective_for(&res.params);
    let out = filter(&model, y, ut, true)?;
    let (forecasts, mad, mse) = forecast_from(&out, y);
    Ok(DiffusionFit {
        model,
        filter: out,
        forecasts,
        mad,
        mse,
        objective_init,
        objective,
        trace: res.trace,
        converged: res.converged,
        initial_population: first_population,
    })
}

/// The current point followed by members whose natural-scale coordinates
/// are multiplied by U(0.9, 1.1). Fixed coordinates are left alone.
fn jitter_population(coding: &DiffusionCoding, u: &[f64], n: usize, seed: u64, free: Option<&[bool]>) -> Vec<Vec<f64>> {
    let j = coding.categories;
    let tr = coding.param_transform();
    let mut out = vec![u.to_vec()];
    for c in 1..n {
        let mut r = rng::stream(seed, &[0x717, c as u64]);
        let mut v = u.to_vec();
        for k in 0..j {
            let mut nat = tr.inverse(&u[8 * k..8 * k + 8]);
            for (i, x) in nat.iter_mut().enumerate() {
                let f = r.random_range(0.9..1.1);
                if free.is_none_or(|m| m[8 * k + i]) {
                    *x *= f;
                }
            }
            // Keep the (0,1) parameters inside their range.
            nat[6] = nat[6].clamp(1e-6, 1.0 - 1e-6);
            nat[7] = nat[7].clamp(1e-6, 1.0 - 1e-6);
            v[8 * k..8 * k + 8].copy_from_slice(&tr.forward(&nat));
        }
        for i in 8 * j..u.len() {
            let f: f64 = r.random_range(0.9..1.1);
            if free.is_none_or(|m| m[i]) {
                // Log-scale entries: multiplicative jitter of the natural value is additive here.
                v[i] = u[i] + f.ln();
            }
        }
        out.push(v);
    }
    out
}

fn forecast_from(out: &FilterOutput, y: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64, f64) {
    let j = y.len();
    let t = y[0].len();
    let mut fc = vec![Vec::with_capacity(t); j];
    let (mut sa, mut ss) = (0.0, 0.0);
    for s in 0..t {
        for k in 0..j {
            let f = out.obs_pred[s][k];
            fc[k].push(f);
            let e = y[k][s] - f;
            sa += e.abs();
            ss += e * e;
        }
    }
    let n = (j * t) as f64;
    (fc, sa / n, ss / n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub yhat: Vec<Vec<f64>>,
    pub mad: f64,
    pub mse: f64,
}

/// One-step-ahead forecasts of `y` under `model`, with MAD and MSE.
pub fn forecast_errors(model: &JointDiffusionModel, y: &[Vec<f64>], ut: UkfParams) -> Result<Forecast> {
    let out = filter(model, y, ut, false)?;
    let (yhat, mad, mse) = forecast_from(&out, y);
    Ok(Forecast { yhat, mad, mse })
}

/// Filtered (or smoothed) imitator counts per category, clamped to [0, M_imm].
pub fn imitator_path(model: &JointDiffusionModel, out: &FilterOutput, smoothed: bool) -> Vec<Vec<f64>> {
    let beliefs = if smoothed && !out.smoothed.is_empty() { &out.smoothed } else { &out.filtered };
    model
        .params
        .iter()
        .enumerate()
        .map(|(k, p)| beliefs.iter().map(|b| b.mean[2 * k + 1].clamp(0.0, p.m_imm)).collect())
        .collect()
}

/// End-of-period snapshots: the value on the last day of each block of
/// `days`; a trailing partial block reports its last day.
pub fn aggregate_end_of_period(path: &[f64], days: usize) -> Vec<f64> {
    if days == 0 {
        return path.to_vec();
    }
    path.chunks(days).map(|c| *c.last().expect("non-empty chunk")).collect()
}
