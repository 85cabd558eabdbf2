//! Global and local optimizers, parameter transforms and the Monte Carlo
//! (generalized) EM driver. Every routine maximizes.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::par;
use crate::rng;
use crate::stats;

/// Objective to maximize. Non-finite values are treated as −∞ (rejected).
pub type ObjFn<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;

fn clean(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformKind {
    Identity,
    /// x = shift + exp(u), so x > shift.
    LogPositive { shift: f64 },
    /// x = lo + (hi − lo)·expit(u).
    Logit { lo: f64, hi: f64 },
}

/// Per-coordinate map between natural and unconstrained coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTransform {
    pub kinds: Vec<TransformKind>,
}

impl ParamTransform {
    pub fn new(kinds: Vec<TransformKind>) -> Self {
        Self { kinds }
    }

    pub fn identity(n: usize) -> Self {
        Self { kinds: vec![TransformKind::Identity; n] }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// Natural → unconstrained.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.kinds)
            .map(|(&v, k)| match *k {
                TransformKind::Identity => v,
                TransformKind::LogPositive { shift } => (v - shift).ln(),
                TransformKind::Logit { lo, hi } => stats::logit((v - lo) / (hi - lo)),
            })
            .collect()
    }

    /// Unconstrained → natural.
    pub fn inverse(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.kinds)
            .map(|(&v, k)| match *k {
                TransformKind::Identity => v,
                TransformKind::LogPositive { shift } => shift + v.exp(),
                TransformKind::Logit { lo, hi } => lo + (hi - lo) * stats::expit(v),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SAConfig {
    pub initial_temperature: f64,
    pub cooling_factor: f64,
    pub steps_per_temperature: usize,
    pub proposal_scale: f64,
    pub max_evals: usize,
    pub seed: u64,
    /// Rescale the step per temperature block toward a 0.3–0.5 acceptance band.
    pub adaptive: bool,
}

impl Default for SAConfig {
    fn default() -> Self {
        Self {
            initial_temperature: 1.0,
            cooling_factor: 0.95,
            steps_per_temperature: 100,
            proposal_scale: 0.5,
            max_evals: 20_000,
            seed: 0,
            adaptive: true,
        }
    }
}

impl SAConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooling_factor > 0.0 && self.cooling_factor < 1.0) {
            return invalid(format!("cooling_factor must lie in (0,1), got {}", self.cooling_factor));
        }
        if self.steps_per_temperature < 1 || self.max_evals < 1 {
            return invalid("steps_per_temperature and max_evals must be at least 1");
        }
        if !(self.initial_temperature > 0.0) || !(self.proposal_scale > 0.0) {
            return invalid("initial_temperature and proposal_scale must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub x: Vec<f64>,
    pub f: f64,
    /// Best value seen after each temperature block / generation.
    pub trace: Vec<f64>,
    pub evals: usize,
    /// Set when no proposal was ever finite (SA) or the population collapsed (GA).
    pub flag: bool,
}

/// Simulated annealing with Gaussian proposals of scale
/// `proposal_scale · T` and acceptance probability `exp(Δf / T)`.
pub fn simulated_annealing(obj: &ObjFn<'_>, x0: &[f64], cfg: &SAConfig) -> Result<OptResult> {
    cfg.validate()?;
    let f0 = clean(obj(x0));
    if !f0.is_finite() {
        return invalid("objective is not finite at the starting point");
    }
    let d = x0.len();
    let mut rng = rng::stream(cfg.seed, &[0x5A]);
    let mut x = x0.to_vec();
    let mut fx = f0;
    let mut best = x.clone();
    let mut fbest = fx;
    let mut t = cfg.initial_temperature;
    let mut evals = 1usize;
    let mut mult = 1.0f64;
    let mut any_finite = false;
    let mut trace = Vec::new();
    while evals < cfg.max_evals {
        let mut accepted = 0usize;
        let mut tried = 0usize;
        for _ in 0..cfg.steps_per_temperature {
            if evals >= cfg.max_evals {
                break;
            }
            let step = cfg.proposal_scale * t * mult;
            let cand: Vec<f64> = x.iter().map(|v| v + step * rng.sample::<f64, _>(StandardNormal)).collect();
            let fc = clean(obj(&cand));
            evals += 1;
            tried += 1;
            if fc.is_finite() {
                any_finite = true;
            }
            let accept = if fc >= fx {
                true
            } else if fc.is_finite() {
                rng.random::<f64>() < ((fc - fx) / t).exp()
            } else {
                false
            };
            if accept {
                x = cand;
                fx = fc;
                accepted += 1;
                if fx > fbest {
                    fbest = fx;
                    best = x.clone();
                }
            }
        }
        trace.push(fbest);
        if cfg.adaptive && tried > 0 {
            let rate = accepted as f64 / tried as f64;
            if rate > 0.5 {
                mult *= 1.5;
            } else if rate < 0.3 {
                mult /= 1.5;
            }
            mult = mult.clamp(1e-6, 1e6);
        }
        t *= cfg.cooling_factor;
        let _ = d;
    }
    Ok(OptResult { x: best, f: fbest, trace, evals, flag: !any_finite })
}

/// Objective split into overlapping blocks of coordinates. `block_value(b, x)`
/// must return the sum of every objective term touched by block `b`, so a
/// move inside block `b` changes the total by the change in that value.
pub trait BlockObjective: Sync {
    fn dim(&self) -> usize;
    fn n_blocks(&self) -> usize;
    fn block_coords(&self, b: usize) -> &[usize];
    fn block_value(&self, b: usize, x: &[f64]) -> f64;
    fn total(&self, x: &[f64]) -> f64;
    /// Groups of blocks whose term sets are pairwise disjoint; blocks within
    /// a group may move concurrently.
    fn colors(&self) -> Vec<Vec<usize>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSAConfig {
    pub initial_temperature: f64,
    pub cooling_factor: f64,
    pub sweeps: usize,
    pub proposal_scale: f64,
    pub seed: u64,
}

impl Default for BlockSAConfig {
    fn default() -> Self {
        Self { initial_temperature: 1.0, cooling_factor: 0.9, sweeps: 30, proposal_scale: 0.1, seed: 0 }
    }
}

/// Block-wise simulated annealing: each sweep proposes a Gaussian move for
/// every block in turn. Blocks of one color are processed concurrently with
/// streams keyed by (seed, sweep, block), so results do not depend on the
/// thread count. Per-block step sizes adapt to acceptance.
pub fn block_annealing(obj: &dyn BlockObjective, x0: &[f64], cfg: &BlockSAConfig) -> Result<OptResult> {
    if !(cfg.cooling_factor > 0.0 && cfg.cooling_factor < 1.0) {
        return invalid("cooling_factor must lie in (0,1)");
    }
    let f0 = clean(obj.total(x0));
    if !f0.is_finite() {
        return invalid("objective is not finite at the starting point");
    }
    let nb = obj.n_blocks();
    let colors = obj.colors();
    let mut x = x0.to_vec();
    let mut mult = vec![1.0f64; nb];
    let mut t = cfg.initial_temperature;
    let mut best = x.clone();
    let mut fbest = f0;
    let mut evals = 1usize;
    let mut trace = Vec::new();
    for sweep in 0..cfg.sweeps {
        for group in &colors {
            let xs = &x;
            let moves: Vec<(usize, Option<Vec<f64>>, bool)> = par::map_slice(group, |_, &b| {
                let mut r = rng::stream(cfg.seed, &[sweep as u64, b as u64]);
                let coords = obj.block_coords(b);
                let cur = obj.block_value(b, xs);
                let step = cfg.proposal_scale * t.sqrt() * mult[b];
                let mut cand = xs.clone();
                for &c in coords {
                    cand[c] += step * r.sample::<f64, _>(StandardNormal);
                }
                let new = clean(obj.block_value(b, &cand));
                let accept = if !cur.is_finite() {
                    new.is_finite()
                } else if new >= cur {
                    true
                } else if new.is_finite() {
                    r.random::<f64>() < ((new - cur) / t).exp()
                } else {
                    false
                };
                if accept {
                    (b, Some(coords.iter().map(|&c| cand[c]).collect()), true)
                } else {
                    (b, None, false)
                }
            });
            evals += 2 * group.len();
            for (b, vals, acc) in moves {
                if let Some(v) = vals {
                    for (k, &c) in obj.block_coords(b).iter().enumerate() {
                        x[c] = v[k];
                    }
                }
                mult[b] = if acc { (mult[b] * 1.2).min(1e3) } else { (mult[b] / 1.1).max(1e-4) };
            }
        }
        let f = clean(obj.total(&x));
        evals += 1;
        if f > fbest {
            fbest = f;
            best = x.clone();
        }
        trace.push(fbest);
        t *= cfg.cooling_factor;
    }
    Ok(OptResult { x: best, f: fbest, trace, evals, flag: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GAConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_scale: f64,
    /// Multiplicative decay of the mutation scale per generation.
    pub mutation_decay: f64,
    pub elitism: usize,
    pub seed: u64,
}

impl Default for GAConfig {
    fn default() -> Self {
        Self {
            population: 60,
            generations: 300,
            crossover_rate: 0.7,
            mutation_scale: 0.1,
            mutation_decay: 0.99,
            elitism: 2,
            seed: 0,
        }
    }
}

impl GAConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return invalid("population must be at least 2");
        }
        if self.elitism < 1 || self.elitism >= self.population {
            return invalid("elitism must satisfy 1 <= elitism < population");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return invalid("crossover_rate must lie in [0,1]");
        }
        if self.mutation_scale < 0.0 {
            return invalid("mutation_scale must be non-negative");
        }
        Ok(())
    }
}

fn tournament(r: &mut rng::Rng, fit: &[f64]) -> usize {
    let a = r.random_range(0..fit.len());
    let b = r.random_range(0..fit.len());
    if fit[b] > fit[a] || (fit[b] == fit[a] && b < a) {
        b
    } else {
        a
    }
}

/// Genetic search: tournament selection (size 2), uniform crossover,
/// Gaussian mutation, elitism. Candidate `c` of generation `g` draws from
/// stream (seed, g, c); fitness is evaluated in parallel.
pub fn genetic_optimize(obj: &ObjFn<'_>, init_population: &[Vec<f64>], cfg: &GAConfig) -> Result<OptResult> {
    cfg.validate()?;
    if init_population.is_empty() {
        return invalid("initial population is empty");
    }
    let d = init_population[0].len();
    if init_population.iter().any(|p| p.len() != d) {
        return Err(Error::Dimension("initial population members differ in length".into()));
    }
    // Fill up to the configured size by mutating seeds.
    let mut pop: Vec<Vec<f64>> = (0..cfg.population)
        .map(|c| {
            if c < init_population.len() {
                init_population[c].clone()
            } else {
                let mut r = rng::stream(cfg.seed, &[u64::MAX, c as u64]);
                let base = &init_population[c % init_population.len()];
                base.iter().map(|v| v + cfg.mutation_scale * r.sample::<f64, _>(StandardNormal)).collect()
            }
        })
        .collect();
    let mut fit: Vec<f64> = par::map_slice(&pop, |_, x| clean(obj(x)));
    if init_population.iter().enumerate().any(|(i, _)| i < fit.len() && !fit[i].is_finite()) {
        return invalid("objective is not finite on the initial population");
    }
    let mut evals = pop.len();
    let mut trace = Vec::with_capacity(cfg.generations + 1);
    let best_of = |fit: &[f64]| -> usize {
        let mut b = 0;
        for i in 1..fit.len() {
            if fit[i] > fit[b] {
                b = i;
            }
        }
        b
    };
    let mut bi = best_of(&fit);
    trace.push(fit[bi]);
    let mut scale = cfg.mutation_scale;
    let mut collapsed = false;
    for g in 0..cfg.generations {
        if scale == 0.0 && pop.iter().all(|p| p == &pop[0]) {
            collapsed = true;
            break;
        }
        let mut order: Vec<usize> = (0..pop.len()).collect();
        order.sort_by(|&a, &b| fit[b].total_cmp(&fit[a]).then(a.cmp(&b)));
        let elites: Vec<usize> = order[..cfg.elitism].to_vec();
        let pop_ref = &pop;
        let fit_ref = &fit;
        let children: Vec<Vec<f64>> = par::map_range(cfg.population - cfg.elitism, |c| {
            let mut r = rng::stream(cfg.seed, &[g as u64, c as u64]);
            let p1 = tournament(&mut r, fit_ref);
            let p2 = tournament(&mut r, fit_ref);
            let cross = r.random::<f64>() < cfg.crossover_rate;
            (0..d)
                .map(|k| {
                    let base = if cross && r.random::<bool>() { pop_ref[p2][k] } else { pop_ref[p1][k] };
                    base + scale * r.sample::<f64, _>(StandardNormal)
                })
                .collect()
        });
        let child_fit: Vec<f64> = par::map_slice(&children, |_, x| clean(obj(x)));
        evals += children.len();
        let mut next: Vec<Vec<f64>> = elites.iter().map(|&e| pop[e].clone()).collect();
        let mut next_fit: Vec<f64> = elites.iter().map(|&e| fit[e]).collect();
        next.extend(children);
        next_fit.extend(child_fit);
        pop = next;
        fit = next_fit;
        bi = best_of(&fit);
        trace.push(fit[bi]);
        scale *= cfg.mutation_decay;
    }
    Ok(OptResult { x: pop[bi].clone(), f: fit[bi], trace, evals, flag: collapsed })
}

/// Maximize a scalar function on `[lo, hi]`: a coarse scan picks the best
/// bracket, then Brent's golden-section/parabolic search refines it. The
/// endpoints are always candidates, so monotone functions return an end.
pub fn numeric_argmax_1d<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if !(lo < hi) {
        return invalid(format!("empty bracket [{lo}, {hi}]"));
    }
    let mut a = lo;
    let mut b = hi;
    let fa = f(a);
    let fb = f(b);
    if !fa.is_finite() || !fb.is_finite() {
        return invalid("function not finite at bracket endpoints");
    }
    const SCAN: usize = 64;
    let mut xs = Vec::with_capacity(SCAN + 1);
    let mut fs = Vec::with_capacity(SCAN + 1);
    for i in 0..=SCAN {
        let x = lo + (hi - lo) * i as f64 / SCAN as f64;
        let v = if i == 0 { fa } else if i == SCAN { fb } else { f(x) };
        xs.push(x);
        fs.push(if v.is_finite() { v } else { f64::NEG_INFINITY });
    }
    let mut k = 0;
    for i in 1..=SCAN {
        if fs[i] > fs[k] {
            k = i;
        }
    }
    if fs.iter().filter(|v| v.is_finite()).count() < 2 {
        return Err(Error::Numerical("function non-finite across the bracket".into()));
    }
    a = xs[k.saturating_sub(1)];
    b = xs[(k + 1).min(SCAN)];
    let xr = brent_max(&f, a, b, xs[k], tol * (hi - lo).abs().max(1e-300));
    let mut best = xs[k];
    let mut fbest = fs[k];
    let fr = f(xr);
    if fr.is_finite() && fr > fbest {
        best = xr;
        fbest = fr;
    }
    if fa >= fbest {
        best = lo;
        fbest = fa;
    }
    if fb > fbest {
        best = hi;
    }
    Ok(best)
}

fn brent_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, x0: f64, xtol: f64) -> f64 {
    let g = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };
    const CG: f64 = 0.381_966_011_250_105_1;
    let (mut x, mut w, mut v) = (x0, x0, x0);
    let (mut fx, mut fw, mut fv) = (g(x), g(x), g(x));
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    for _ in 0..200 {
        let xm = 0.5 * (a + b);
        let tol1 = 1e-12 * x.abs() + xtol.max(1e-15) * 0.1;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if !(p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CG * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + if d >= 0.0 { tol1 } else { -tol1 } };
        let fu = g(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    x
}

/// Bisection root of a continuous function with a sign change on [lo, hi].
pub fn bisect_root<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if !(flo.is_finite() && fhi.is_finite()) || flo * fhi > 0.0 {
        return None;
    }
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if !fm.is_finite() {
            return None;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo <= xtol {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCEMConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub monte_carlo_draws: usize,
}

impl Default for MCEMConfig {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iterations: 2000, monte_carlo_draws: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McemIteration {
    /// Expected objective of this iteration at the incoming parameters.
    pub q_before: f64,
    /// Expected objective at the parameters kept by the M-step.
    pub q_after: f64,
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McemResult {
    pub params: Vec<f64>,
    pub trace: Vec<McemIteration>,
    pub converged: bool,
}

/// Generalized EM driver. `e_step(params, iter)` returns the expected
/// objective for the iteration (built with the iteration's fixed Monte Carlo
/// draws); `m_step(q, params, iter)` proposes parameters. A proposal that
/// does not improve `q` is discarded, so each iteration weakly increases the
/// expected objective. Stops when the Euclidean parameter change falls below
/// the tolerance or at `max_iterations`.
pub fn mcem_drive<E, M>(mut e_step: E, mut m_step: M, cfg: &MCEMConfig, params0: &[f64]) -> Result<McemResult>
where
    E: FnMut(&[f64], usize) -> Result<Box<ObjFn<'static>>>,
    M: FnMut(&ObjFn<'static>, &[f64], usize) -> Result<Vec<f64>>,
{
    if !(cfg.tolerance > 0.0) {
        return invalid("tolerance must be positive");
    }
    let mut params = params0.to_vec();
    let mut trace = Vec::new();
    let mut converged = false;
    for it in 0..cfg.max_iterations {
        let q = e_step(&params, it).map_err(|e| Error::Numerical(format!("E-step failed at iteration {it} for parameters {params:?}: {e}")))?;
        let q0 = clean(q(&params));
        if !q0.is_finite() {
            return Err(Error::Numerical(format!("expected objective not finite at iteration {it} for parameters {params:?}")));
        }
        let cand = m_step(&*q, &params, it)?;
        let q1 = clean(q(&cand));
        let (next, q_after) = if q1 >= q0 { (cand, q1) } else { (params.clone(), q0) };
        let change = next.iter().zip(&params).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        trace.push(McemIteration { q_before: q0, q_after, change });
        params = next;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(McemResult { params, trace, converged })
}
