//! Euler–Maruyama simulation of the controlled jump diffusion and Monte Carlo
//! estimators of the cost and of its directional derivative.
//!
//! Step `k` covers `(t_k, t_{k+1}]`. Coefficients are taken at the left node
//! and in the regime held just before the step; jumps falling in the step act
//! on the frozen left-node state, and the compensator `Δt·Σ ν_j (E_j x + F_j u)`
//! is subtracted analytically:
//!
//! ```text
//! X_{k+1} = X_k + (A X_k + B u_k) Δt + Σ_i (Cᵢ X_k + Dᵢ u_k) ΔWᵢ
//!         + Σ_{events} (E(θ) X_k + F(θ) u_k) − Δt Σ_j ν_j (E(θ_j) X_k + F(θ_j) u_k)
//! ```
//!
//! Randomness comes from ChaCha keyed by `(seed, channel)` with the path index
//! as stream id, so bundles are reproducible in any execution order and can
//! be shared between controls (common random numbers).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal, WeightedIndex};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::feedback::FeedbackLaw;
use crate::problem::{total_intensity, validate, CoefficientSlice, LqProblem};
use crate::riccati::{RiccatiSolution, TimeGrid};

const CHANNEL_BROWNIAN: u64 = 0;
const CHANNEL_JUMPS: u64 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("state became non-finite at step {step}; grid too coarse for the coefficients")]
    NonFinite { step: usize },
    #[error("control has {got} steps, grid has {expected}")]
    StepMismatch { got: usize, expected: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("problem failed validation: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: usize,
}

/// Randomness for one path: Brownian increments and the marked jump times.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub seed: u64,
    pub path_index: u64,
    pub steps: usize,
    pub d: usize,
    /// Step-major, `steps × d`, each `~ N(0, Δt)`.
    pub brownian: Vec<f64>,
    /// Strictly increasing times in `(0, T]`.
    pub jumps: Vec<JumpEvent>,
}

impl NoiseBundle {
    pub fn increments(&self, step: usize) -> &[f64] {
        &self.brownian[step * self.d..(step + 1) * self.d]
    }

    /// Bundle on the grid with twice the step: increments summed pairwise,
    /// jump events unchanged.
    pub fn coarsen(&self) -> Option<NoiseBundle> {
        if self.steps % 2 != 0 {
            return None;
        }
        let d = self.d;
        let mut brownian = Vec::with_capacity(self.brownian.len() / 2);
        for k in 0..self.steps / 2 {
            let (a, b) = (self.increments(2 * k), self.increments(2 * k + 1));
            brownian.extend(a.iter().zip(b).map(|(x, y)| x + y));
        }
        debug_assert_eq!(brownian.len(), self.steps / 2 * d);
        Some(NoiseBundle {
            steps: self.steps / 2,
            brownian,
            ..self.clone()
        })
    }
}

fn channel_rng(seed: u64, channel: u64, path_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&channel.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(path_index);
    rng
}

pub fn sample_noise(p: &LqProblem, grid: &TimeGrid, path_index: u64, seed: u64) -> NoiseBundle {
    let steps = grid.steps();
    let sd = grid.dt().sqrt();
    let mut rng = channel_rng(seed, CHANNEL_BROWNIAN, path_index);
    let brownian: Vec<f64> = (0..steps * p.d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sd
        })
        .collect();

    let mut jumps = Vec::new();
    let rate = total_intensity(&p.marks);
    if rate > 0.0 {
        let mut rng = channel_rng(seed, CHANNEL_JUMPS, path_index);
        let wait = Exp::new(rate).expect("positive rate");
        let pick = WeightedIndex::new(p.marks.weights()).expect("positive weights");
        let mut t = 0.0;
        loop {
            let next = t + wait.sample(&mut rng);
            if next > grid.horizon() {
                break;
            }
            let mark = pick.sample(&mut rng);
            if next > t {
                jumps.push(JumpEvent { time: next, mark });
            }
            t = next;
        }
    }
    NoiseBundle {
        seed,
        path_index,
        steps,
        d: p.d,
        brownian,
        jumps,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Feedback(FeedbackLaw),
    /// One control vector per step.
    OpenLoop(Vec<DVector<f64>>),
    /// `base + eps·direction`; a feedback base is first realized on the path
    /// and then perturbed as an open-loop process.
    Perturbed {
        base: Box<Control>,
        direction: Vec<DVector<f64>>,
        eps: f64,
    },
}

impl Control {
    pub fn zero(p: &LqProblem, grid: &TimeGrid) -> Control {
        Control::OpenLoop(vec![DVector::zeros(p.m); grid.steps()])
    }

    pub fn perturbed(base: Control, direction: Vec<DVector<f64>>, eps: f64) -> Control {
        Control::Perturbed {
            base: Box::new(base),
            direction,
            eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RealizedEvent {
    pub time: f64,
    pub mark: usize,
    pub regime_before: usize,
    pub regime_after: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub grid: TimeGrid,
    /// Post-jump state at every node.
    pub x: Vec<DVector<f64>>,
    /// Control applied on each step.
    pub u: Vec<DVector<f64>>,
    pub events: Vec<RealizedEvent>,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
}

impl McEstimate {
    /// Sample mean and standard error, reduced with fixed-shape pairwise sums.
    pub fn from_samples(xs: &[f64]) -> McEstimate {
        let n = xs.len();
        assert!(n >= 2, "need at least two samples");
        let mean = pairwise_sum(xs) / n as f64;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        McEstimate {
            mean,
            stderr: (var / n as f64).sqrt(),
            paths: n,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateRow {
    pub label: String,
    pub mean: f64,
    pub stderr: f64,
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
}

/// Summation whose association depends only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Per-slice data with the jump compensator folded into the drift.
struct SliceCache<'a> {
    s: &'a CoefficientSlice,
    a_comp: DMatrix<f64>,
    b_comp: DMatrix<f64>,
    b_active: bool,
    c_active: Vec<bool>,
    d_active: Vec<bool>,
    f_active: Vec<bool>,
}

impl<'a> SliceCache<'a> {
    fn new(p: &LqProblem, s: &'a CoefficientSlice) -> Self {
        let nz = |m: &DMatrix<f64>| m.iter().any(|&v| v != 0.0);
        let mut a_comp = s.a.clone();
        let mut b_comp = s.b.clone();
        for (j, w) in p.marks.weights().enumerate() {
            a_comp -= &s.e[j] * w;
            b_comp -= &s.f[j] * w;
        }
        SliceCache {
            b_active: nz(&b_comp),
            c_active: s.c.iter().map(nz).collect(),
            d_active: s.d.iter().map(nz).collect(),
            f_active: s.f.iter().map(nz).collect(),
            a_comp,
            b_comp,
            s,
        }
    }
}

/// Validated problem data laid out for the time loop; build once and reuse
/// across bundles.
pub struct Simulator<'a> {
    p: &'a LqProblem,
    grid: TimeGrid,
    /// `[regime][interval]`
    caches: Vec<Vec<SliceCache<'a>>>,
    /// Table interval of each step.
    interval: Vec<usize>,
}

impl<'a> Simulator<'a> {
    pub fn new(p: &'a LqProblem, grid: &TimeGrid) -> Result<Self, McError> {
        let report = validate(p);
        if !report.is_empty() {
            return Err(McError::Invalid(report.messages()));
        }
        if grid.horizon() != p.horizon {
            return Err(McError::InvalidArgument(
                "grid horizon differs from problem horizon".into(),
            ));
        }
        let caches = (0..p.regime_count())
            .map(|r| p.env.table(r).iter().map(|s| SliceCache::new(p, s)).collect())
            .collect();
        let h = grid.dt();
        let interval = (0..grid.steps())
            .map(|k| {
                p.interval_index((grid.node(k) + 0.5 * h).min(p.horizon))
                    .expect("inside horizon")
            })
            .collect();
        Ok(Simulator {
            p,
            grid: *grid,
            caches,
            interval,
        })
    }

    fn cache(&self, step: usize, regime: usize) -> &SliceCache<'a> {
        &self.caches[regime][self.interval[step]]
    }

    fn step_of(&self, t: f64) -> usize {
        let k = (t / self.grid.dt()).ceil() as usize;
        k.saturating_sub(1).min(self.grid.steps() - 1)
    }

    /// `out = x + drift + diffusion + jumps` for one step. Returns the regime
    /// after the step's events.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &self,
        step: usize,
        regime: usize,
        events: &[JumpEvent],
        inc: &[f64],
        x: &DVector<f64>,
        u: &DVector<f64>,
        out: &mut DVector<f64>,
    ) -> usize {
        let dt = self.grid.dt();
        let c = self.cache(step, regime);
        out.copy_from(x);
        out.gemv(dt, &c.a_comp, x, 1.0);
        if c.b_active {
            out.gemv(dt, &c.b_comp, u, 1.0);
        }
        for (i, &dw) in inc.iter().enumerate() {
            if c.c_active[i] {
                out.gemv(dw, &c.s.c[i], x, 1.0);
            }
            if c.d_active[i] {
                out.gemv(dw, &c.s.d[i], u, 1.0);
            }
        }
        let mut r = regime;
        for ev in events {
            let ce = self.cache(step, r);
            out.gemv(1.0, &ce.s.e[ev.mark], x, 1.0);
            if ce.f_active[ev.mark] {
                out.gemv(1.0, &ce.s.f[ev.mark], u, 1.0);
            }
            r = self.p.env.jump_target(r, ev.mark);
        }
        r
    }

    /// Event slices per step.
    fn bucket_events<'n>(&self, noise: &'n NoiseBundle) -> Vec<(usize, &'n [JumpEvent])> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < noise.jumps.len() {
            let k = self.step_of(noise.jumps[i].time);
            let mut j = i + 1;
            while j < noise.jumps.len() && self.step_of(noise.jumps[j].time) == k {
                j += 1;
            }
            out.push((k, &noise.jumps[i..j]));
            i = j;
        }
        out
    }
}

/// Where the per-step control comes from.
enum Plan<'c> {
    Feedback(&'c FeedbackLaw),
    OpenLoop(std::borrow::Cow<'c, [DVector<f64>]>),
}

struct Outcome {
    cost: f64,
    record: Option<Path>,
}

fn check_steps(got: usize, grid: &TimeGrid) -> Result<(), McError> {
    if got != grid.steps() {
        return Err(McError::StepMismatch {
            got,
            expected: grid.steps(),
        });
    }
    Ok(())
}

fn plan_for<'c>(engine: &Simulator<'_>, ctrl: &'c Control, noise: &NoiseBundle) -> Result<Plan<'c>, McError> {
    match ctrl {
        Control::Feedback(law) => {
            if law.grid != engine.grid {
                return Err(McError::StepMismatch {
                    got: law.grid.steps(),
                    expected: engine.grid.steps(),
                });
            }
            Ok(Plan::Feedback(law))
        }
        Control::OpenLoop(us) => {
            check_steps(us.len(), &engine.grid)?;
            Ok(Plan::OpenLoop(std::borrow::Cow::Borrowed(us)))
        }
        Control::Perturbed { base, direction, eps } => {
            check_steps(direction.len(), &engine.grid)?;
            let base_u = match plan_for(engine, base, noise)? {
                Plan::OpenLoop(us) => us.into_owned(),
                Plan::Feedback(_) => {
                    let x0 = engine.p.x0.clone();
                    run(engine, base, noise, 0, &x0, engine.p.r0, true)?
                        .record
                        .expect("recorded")
                        .u
                }
            };
            Ok(Plan::OpenLoop(std::borrow::Cow::Owned(
                base_u.iter().zip(direction).map(|(u, v)| u + v * *eps).collect(),
            )))
        }
    }
}

/// Core time loop from node `start` with state `x_start` in `regime`.
fn run(
    engine: &Simulator<'_>,
    ctrl: &Control,
    noise: &NoiseBundle,
    start: usize,
    x_start: &DVector<f64>,
    regime: usize,
    record: bool,
) -> Result<Outcome, McError> {
    let p = engine.p;
    let grid = engine.grid;
    if noise.steps != grid.steps() || noise.d != p.d {
        return Err(McError::StepMismatch {
            got: noise.steps,
            expected: grid.steps(),
        });
    }
    let plan = plan_for(engine, ctrl, noise)?;
    let dt = grid.dt();
    let buckets = engine.bucket_events(noise);
    let mut bucket = buckets.iter().position(|(k, _)| *k >= start).unwrap_or(buckets.len());

    let mut x = x_start.clone();
    let mut next = DVector::zeros(p.n);
    let mut u = DVector::zeros(p.m);
    let mut qx = DVector::zeros(p.n);
    let mut nu = DVector::zeros(p.m);
    let mut r = regime;
    let mut running = Vec::with_capacity(grid.steps() - start);
    let mut path = record.then(|| Path {
        grid,
        x: vec![x.clone()],
        u: Vec::new(),
        events: Vec::new(),
        cost: 0.0,
    });

    for k in start..grid.steps() {
        match &plan {
            Plan::Feedback(law) => u.gemv(1.0, law.at(k, r), &x, 0.0),
            Plan::OpenLoop(us) => u.copy_from(&us[k]),
        }
        let s = engine.cache(k, r).s;
        qx.gemv(1.0, s.q.as_matrix(), &x, 0.0);
        nu.gemv(1.0, s.n.as_matrix(), &u, 0.0);
        running.push((x.dot(&qx) + u.dot(&nu)) * dt);

        let events: &[JumpEvent] = match buckets.get(bucket) {
            Some((bk, evs)) if *bk == k => {
                bucket += 1;
                evs
            }
            _ => &[],
        };
        let r_after = engine.advance(k, r, events, noise.increments(k), &x, &u, &mut next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(McError::NonFinite { step: k });
        }
        if let Some(path) = path.as_mut() {
            let mut rr = r;
            for ev in events {
                let after = p.env.jump_target(rr, ev.mark);
                path.events.push(RealizedEvent {
                    time: ev.time,
                    mark: ev.mark,
                    regime_before: rr,
                    regime_after: after,
                });
                rr = after;
            }
            path.u.push(u.clone());
            path.x.push(next.clone());
        }
        r = r_after;
        std::mem::swap(&mut x, &mut next);
    }
    let cost = pairwise_sum(&running) + p.terminal.quad_form(&x);
    if let Some(path) = path.as_mut() {
        path.cost = cost;
    }
    Ok(Outcome { cost, record: path })
}

impl Simulator<'_> {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn path(&self, ctrl: &Control, noise: &NoiseBundle) -> Result<Path, McError> {
        Ok(run(self, ctrl, noise, 0, &self.p.x0, self.p.r0, true)?
            .record
            .expect("recorded"))
    }

    pub fn cost(&self, ctrl: &Control, noise: &NoiseBundle) -> Result<f64, McError> {
        Ok(run(self, ctrl, noise, 0, &self.p.x0, self.p.r0, false)?.cost)
    }

    pub fn realize(&self, law: &FeedbackLaw, noise: &NoiseBundle) -> Result<Vec<DVector<f64>>, McError> {
        Ok(self.path(&Control::Feedback(law.clone()), noise)?.u)
    }

    pub fn pairing(&self, u: &Control, v: &[DVector<f64>], noise: &NoiseBundle) -> Result<f64, McError> {
        pairing_on_path(self, u, v, noise)
    }
}

pub fn simulate(p: &LqProblem, ctrl: &Control, noise: &NoiseBundle, grid: &TimeGrid) -> Result<Path, McError> {
    Simulator::new(p, grid)?.path(ctrl, noise)
}

/// Realized cost of one path, without recording the trajectory.
pub fn path_cost(p: &LqProblem, ctrl: &Control, noise: &NoiseBundle, grid: &TimeGrid) -> Result<f64, McError> {
    Simulator::new(p, grid)?.cost(ctrl, noise)
}

/// Records `u*(ω)` under the feedback law on this bundle.
pub fn realize_open_loop(
    p: &LqProblem,
    law: &FeedbackLaw,
    noise: &NoiseBundle,
    grid: &TimeGrid,
) -> Result<Control, McError> {
    Ok(Control::OpenLoop(Simulator::new(p, grid)?.realize(law, noise)?))
}

/// Evaluates `f` on the bundles `0..n_paths` in parallel; results come back in
/// path order, so any reduction over them is independent of the worker count.
pub fn map_paths<T, F>(p: &LqProblem, grid: &TimeGrid, n_paths: usize, seed: u64, f: F) -> Result<Vec<T>, McError>
where
    T: Send,
    F: Fn(&NoiseBundle) -> Result<T, McError> + Sync,
{
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| f(&sample_noise(p, grid, i, seed)))
        .collect()
}

fn check_paths(n_paths: usize) -> Result<(), McError> {
    if n_paths < 2 {
        return Err(McError::InvalidArgument(format!(
            "need at least 2 paths, got {n_paths}"
        )));
    }
    Ok(())
}

pub fn estimate_cost(
    p: &LqProblem,
    ctrl: &Control,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate, McError> {
    check_paths(n_paths)?;
    let engine = Simulator::new(p, grid)?;
    let costs = map_paths(p, grid, n_paths, seed, |noise| engine.cost(ctrl, noise))?;
    Ok(McEstimate::from_samples(&costs))
}

/// Per-path pairing `2[Σ (⟨Q X, Y⟩ + ⟨N u, v⟩) Δt + ⟨M X_T, Y_T⟩]`, where `Y`
/// is driven by `v` from zero on the same bundle.
fn pairing_on_path(
    engine: &Simulator<'_>,
    u: &Control,
    v: &[DVector<f64>],
    noise: &NoiseBundle,
) -> Result<f64, McError> {
    let p = engine.p;
    let grid = engine.grid;
    check_steps(v.len(), &grid)?;
    let base = run(engine, u, noise, 0, &p.x0, p.r0, true)?.record.expect("recorded");
    let dt = grid.dt();
    let buckets = engine.bucket_events(noise);
    let mut bucket = 0;
    let mut y = DVector::zeros(p.n);
    let mut next = DVector::zeros(p.n);
    let mut r = p.r0;
    let mut terms = Vec::with_capacity(grid.steps());
    for k in 0..grid.steps() {
        let s = engine.cache(k, r).s;
        let (x, uk) = (&base.x[k], &base.u[k]);
        terms.push((x.dot(&(s.q.as_matrix() * &y)) + uk.dot(&(s.n.as_matrix() * &v[k]))) * dt);
        let events: &[JumpEvent] = match buckets.get(bucket) {
            Some((bk, evs)) if *bk == k => {
                bucket += 1;
                evs
            }
            _ => &[],
        };
        r = engine.advance(k, r, events, noise.increments(k), &y, &v[k], &mut next);
        std::mem::swap(&mut y, &mut next);
    }
    let xt = &base.x[grid.steps()];
    Ok(2.0 * (pairwise_sum(&terms) + xt.dot(&(p.terminal.as_matrix() * &y))))
}

/// Pathwise directional derivative of the cost on one bundle.
pub fn pathwise_pairing(
    p: &LqProblem,
    u: &Control,
    v: &[DVector<f64>],
    noise: &NoiseBundle,
    grid: &TimeGrid,
) -> Result<f64, McError> {
    let engine = Simulator::new(p, grid)?;
    pairing_on_path(&engine, u, v, noise)
}

/// Monte Carlo estimate of `⟨J′(u), v⟩`.
pub fn gradient_pairing(
    p: &LqProblem,
    u: &Control,
    v: &[DVector<f64>],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate, McError> {
    check_paths(n_paths)?;
    let engine = Simulator::new(p, grid)?;
    let samples = map_paths(p, grid, n_paths, seed, |noise| pairing_on_path(&engine, u, v, noise))?;
    Ok(McEstimate::from_samples(&samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub estimate: McEstimate,
    pub oracle: f64,
    pub z: f64,
}

/// Compares `⟨K̂(t) x, x⟩` from an uncontrolled linear solve with the Monte
/// Carlo value of `∫_t^T ⟨Q y, y⟩ ds + ⟨M y_T, y_T⟩`, `y_t = x`.
pub fn lyapunov_representation_check(
    p: &LqProblem,
    sol: &RiccatiSolution,
    t: f64,
    x: &DVector<f64>,
    regime: usize,
    n_paths: usize,
    seed: u64,
) -> Result<LyapunovReport, McError> {
    check_paths(n_paths)?;
    let grid = sol.grid;
    let start = grid
        .node_index(t)
        .ok_or_else(|| McError::InvalidArgument(format!("t = {t} is not a grid node")))?;
    if regime >= p.regime_count() {
        return Err(McError::InvalidArgument(format!("regime {regime} out of range")));
    }
    let engine = Simulator::new(p, &grid)?;
    let zero = Control::zero(p, &grid);
    let costs = map_paths(p, &grid, n_paths, seed, |noise| {
        Ok(run(&engine, &zero, noise, start, x, regime, false)?.cost)
    })?;
    let estimate = McEstimate::from_samples(&costs);
    let oracle = sol.k_at(start, regime).quad_form(x);
    let gap = estimate.mean - oracle;
    let z = if estimate.stderr > 0.0 {
        gap / estimate.stderr
    } else if gap.abs() <= 1e-12 * oracle.abs().max(1.0) {
        0.0
    } else {
        gap.signum() * f64::INFINITY
    };
    Ok(LyapunovReport { estimate, oracle, z })
}

/// Deterministic per-step direction from a seed: a few random cosine modes
/// per control component, so the same direction can be evaluated on
/// different grids.
pub fn smooth_direction(m: usize, grid: &TimeGrid, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = 4;
    let coef: Vec<f64> = (0..m * modes).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let horizon = grid.horizon();
    (0..grid.steps())
        .map(|k| {
            let t = grid.node(k);
            DVector::from_fn(m, |i, _| {
                (0..modes)
                    .map(|j| coef[i * modes + j] * (std::f64::consts::PI * j as f64 * t / horizon).cos())
                    .sum()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::gain_from_riccati;
    use crate::problem::{canned_problem, BenchmarkId, CoefficientEnv, CoefficientSlice, MarkSpace};
    use crate::riccati::solve_direct;
    use crate::symcone::SymMat;

    fn zero_dynamics(n: usize) -> LqProblem {
        let mut p = canned_problem(&BenchmarkId::ScalarRiccati);
        p.n = n;
        p.x0 = DVector::from_fn(n, |i, _| 1.0 + i as f64);
        p.env = CoefficientEnv::Deterministic {
            grid: vec![0.0, 1.0],
            slices: vec![CoefficientSlice::zeros(n, 1, 1, 0)],
        };
        p.terminal = SymMat::identity(n);
        p
    }

    #[test]
    fn empty_mark_space_never_jumps() {
        let p = canned_problem(&BenchmarkId::ScalarRiccati);
        let grid = TimeGrid::new(10, 1.0);
        for i in 0..100 {
            assert!(sample_noise(&p, &grid, i, 5).jumps.is_empty());
        }
    }

    #[test]
    fn noise_is_deterministic() {
        let p = canned_problem(&BenchmarkId::TwoRegimeSwitching);
        let grid = TimeGrid::new(100, 1.0);
        let a = sample_noise(&p, &grid, 17, 99);
        assert_eq!(a, sample_noise(&p, &grid, 17, 99));
        assert_ne!(a, sample_noise(&p, &grid, 18, 99));
        assert!(a.jumps.windows(2).all(|w| w[0].time < w[1].time));
        assert!(a.jumps.iter().all(|e| e.time > 0.0 && e.time <= 1.0));
        assert_eq!(a.brownian.len(), 100 * p.d);
    }

    #[test]
    fn poisson_count_mean() {
        let mut p = canned_problem(&BenchmarkId::LyapunovOnly);
        p.marks = MarkSpace::new(&[1.0, 2.0]);
        if let CoefficientEnv::Deterministic { slices, .. } = &mut p.env {
            slices[0] = CoefficientSlice::zeros(1, 1, 1, 2);
        }
        let grid = TimeGrid::new(4, 1.0);
        let counts: Vec<f64> = (0..100_000)
            .map(|i| sample_noise(&p, &grid, i, 3).jumps.len() as f64)
            .collect();
        let est = McEstimate::from_samples(&counts);
        assert!((est.mean - 3.0).abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn zero_dynamics_keeps_state() {
        let p = zero_dynamics(2);
        let grid = TimeGrid::new(20, 1.0);
        let mut q = p.clone();
        q.x0 = DVector::from_column_slice(&[1.0, 0.0]);
        let path = simulate(&q, &Control::zero(&q, &grid), &sample_noise(&q, &grid, 0, 1), &grid).unwrap();
        assert!(path.x.iter().all(|x| x == &q.x0));
        assert_eq!(path.cost, 1.0);
        let est = estimate_cost(&p, &Control::zero(&p, &grid), &grid, 10, 1).unwrap();
        assert_eq!(est.mean, 5.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn pure_drift_converges_to_exponential() {
        let mut p = zero_dynamics(1);
        if let CoefficientEnv::Deterministic { slices, .. } = &mut p.env {
            slices[0].a[(0, 0)] = 0.8;
        }
        let exact = 0.8f64.exp();
        let err = |steps: usize| {
            let grid = TimeGrid::new(steps, 1.0);
            let path = simulate(&p, &Control::zero(&p, &grid), &sample_noise(&p, &grid, 0, 0), &grid).unwrap();
            (path.x[steps][0] - exact).abs()
        };
        let (e1, e2) = (err(1000), err(2000));
        assert!(e1 < 1e-3 && (e1 / e2 - 2.0).abs() < 0.05, "{e1} {e2}");
    }

    #[test]
    fn forced_jump_doubles_state() {
        let mut p = zero_dynamics(2);
        p.marks = MarkSpace::new(&[1e-300]);
        if let CoefficientEnv::Deterministic { slices, .. } = &mut p.env {
            slices[0] = CoefficientSlice::zeros(2, 1, 1, 1);
            slices[0].e[0] = DMatrix::identity(2, 2);
        }
        let grid = TimeGrid::new(10, 1.0);
        let mut noise = sample_noise(&p, &grid, 0, 0);
        noise.jumps = vec![JumpEvent { time: 0.5, mark: 0 }];
        let path = simulate(&p, &Control::zero(&p, &grid), &noise, &grid).unwrap();
        assert_eq!(path.x[4], p.x0);
        assert_eq!(path.x[5], &p.x0 * 2.0);
        assert_eq!(path.x[10], &p.x0 * 2.0);
        assert_eq!(path.events.len(), 1);
    }

    #[test]
    fn regime_events_are_recorded() {
        let p = canned_problem(&BenchmarkId::TwoRegimeSwitching);
        let grid = TimeGrid::new(50, 1.0);
        let mut noise = sample_noise(&p, &grid, 0, 0);
        noise.jumps = vec![
            JumpEvent { time: 0.3, mark: 0 },
            JumpEvent { time: 0.301, mark: 0 },
            JumpEvent { time: 0.7, mark: 1 },
        ];
        let path = simulate(&p, &Control::zero(&p, &grid), &noise, &grid).unwrap();
        let seen: Vec<(usize, usize)> = path.events.iter().map(|e| (e.regime_before, e.regime_after)).collect();
        assert_eq!(seen, vec![(0, 1), (1, 0), (0, 0)]);
    }

    #[test]
    fn compensated_jump_sum_is_centred() {
        let p = canned_problem(&BenchmarkId::TwoRegimeSwitching);
        let grid = TimeGrid::new(4, 1.0);
        let phi = [1.0, -3.0];
        let comp: f64 = p.marks.weights().zip(phi).map(|(w, f)| w * f).sum::<f64>() * p.horizon;
        let samples: Vec<f64> = (0..100_000)
            .map(|i| {
                sample_noise(&p, &grid, i, 8)
                    .jumps
                    .iter()
                    .map(|e| phi[e.mark])
                    .sum::<f64>()
                    - comp
            })
            .collect();
        let est = McEstimate::from_samples(&samples);
        assert!(est.mean.abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn open_loop_replay_is_bit_exact() {
        let p = canned_problem(&BenchmarkId::TwoRegimeSwitching);
        let grid = TimeGrid::new(100, 1.0);
        let law = gain_from_riccati(&p, &solve_direct(&p, &grid).unwrap()).unwrap();
        for i in 0..5 {
            let noise = sample_noise(&p, &grid, i, 4);
            let fb = simulate(&p, &Control::Feedback(law.clone()), &noise, &grid).unwrap();
            let ol = realize_open_loop(&p, &law, &noise, &grid).unwrap();
            if let Control::OpenLoop(us) = &ol {
                for (k, u) in us.iter().enumerate() {
                    let r = regime_at_step(&fb, &grid, k, p.r0);
                    assert_eq!(u, &(law.at(k, r) * &fb.x[k]));
                }
            }
            assert_eq!(simulate(&p, &ol, &noise, &grid).unwrap(), fb);
        }
    }

    fn regime_at_step(path: &Path, grid: &TimeGrid, k: usize, r0: usize) -> usize {
        path.events
            .iter()
            .filter(|e| e.time <= grid.node(k))
            .last()
            .map_or(r0, |e| e.regime_after)
    }

    #[test]
    fn zero_gain_realizes_zero_control() {
        let p = canned_problem(&BenchmarkId::LyapunovOnly);
        let grid = TimeGrid::new(30, 1.0);
        let law = gain_from_riccati(&p, &solve_direct(&p, &grid).unwrap()).unwrap();
        let ol = realize_open_loop(&p, &law, &sample_noise(&p, &grid, 0, 0), &grid).unwrap();
        assert_eq!(ol, Control::zero(&p, &grid));
    }

    #[test]
    fn central_difference_equals_pairing() {
        let id = BenchmarkId::RandomPsd {
            seed: 3,
            n: 3,
            m: 2,
            d: 2,
            k: 2,
            regimes: 2,
        };
        let p = canned_problem(&id);
        let grid = TimeGrid::new(200, 1.0);
        let u = Control::OpenLoop(smooth_direction(2, &grid, 1));
        let v = smooth_direction(2, &grid, 2);
        let eps = 1e-3;
        for i in 0..10 {
            let noise = sample_noise(&p, &grid, i, 6);
            let up = path_cost(&p, &Control::perturbed(u.clone(), v.clone(), eps), &noise, &grid).unwrap();
            let dn = path_cost(&p, &Control::perturbed(u.clone(), v.clone(), -eps), &noise, &grid).unwrap();
            let cd = (up - dn) / (2.0 * eps);
            let pair = pathwise_pairing(&p, &u, &v, &noise, &grid).unwrap();
            assert!((cd - pair).abs() <= 1e-8 * pair.abs().max(1e-300), "{cd} vs {pair}");
        }
    }

    #[test]
    fn second_difference_is_eps_independent() {
        let id = BenchmarkId::RandomPsd {
            seed: 8,
            n: 2,
            m: 1,
            d: 2,
            k: 1,
            regimes: 1,
        };
        let p = canned_problem(&id);
        let grid = TimeGrid::new(100, 1.0);
        let u = Control::OpenLoop(smooth_direction(1, &grid, 11));
        let v = smooth_direction(1, &grid, 12);
        let noise = sample_noise(&p, &grid, 0, 0);
        let c0 = path_cost(&p, &u, &noise, &grid).unwrap();
        let second = |eps: f64| {
            let up = path_cost(&p, &Control::perturbed(u.clone(), v.clone(), eps), &noise, &grid).unwrap();
            let dn = path_cost(&p, &Control::perturbed(u.clone(), v.clone(), -eps), &noise, &grid).unwrap();
            (up + dn - 2.0 * c0) / (2.0 * eps * eps)
        };
        let (a, b) = (second(0.1), second(0.05));
        assert!(((a - b) / a).abs() < 1e-8, "{a} {b}");
    }

    #[test]
    fn zero_direction_pairs_to_zero() {
        let p = canned_problem(&BenchmarkId::TwoRegimeSwitching);
        let grid = TimeGrid::new(50, 1.0);
        let v = vec![DVector::zeros(1); 50];
        let est = gradient_pairing(&p, &Control::zero(&p, &grid), &v, &grid, 20, 0).unwrap();
        assert_eq!((est.mean, est.stderr), (0.0, 0.0));
    }

    #[test]
    fn coarsened_bundle_sums_increments() {
        let p = canned_problem(&BenchmarkId::TwoRegimeSwitching);
        let grid = TimeGrid::new(10, 1.0);
        let n = sample_noise(&p, &grid, 2, 2);
        let c = n.coarsen().unwrap();
        assert_eq!(c.steps, 5);
        assert_eq!(c.increments(1)[0], n.increments(2)[0] + n.increments(3)[0]);
        assert_eq!(c.jumps, n.jumps);
    }

    #[test]
    fn homogeneity_per_bundle() {
        let p = canned_problem(&BenchmarkId::TwoRegimeSwitching);
        let grid = TimeGrid::new(100, 1.0);
        let law = gain_from_riccati(&p, &solve_direct(&p, &grid).unwrap()).unwrap();
        let mut q = p.clone();
        q.x0 *= 2.0;
        for i in 0..5 {
            let noise = sample_noise(&p, &grid, i, 0);
            let a = path_cost(&p, &Control::Feedback(law.clone()), &noise, &grid).unwrap();
            let b = path_cost(&q, &Control::Feedback(law.clone()), &noise, &grid).unwrap();
            assert_eq!(b, 4.0 * a);
        }
    }

    #[test]
    fn unstable_grid_reports_non_finite() {
        let mut p = zero_dynamics(1);
        if let CoefficientEnv::Deterministic { slices, .. } = &mut p.env {
            slices[0].a[(0, 0)] = 1e300;
        }
        let grid = TimeGrid::new(10, 1.0);
        let err = simulate(&p, &Control::zero(&p, &grid), &sample_noise(&p, &grid, 0, 0), &grid).unwrap_err();
        assert!(matches!(err, McError::NonFinite { .. }));
    }

    #[test]
    fn lyapunov_check_trivial_cases() {
        let p = zero_dynamics(2);
        let grid = TimeGrid::new(20, 1.0);
        let sol = crate::riccati::solve_lyapunov(&p, &grid, &crate::riccati::GainSchedule::Zero).unwrap();
        let x = DVector::from_column_slice(&[1.0, 2.0]);
        let rep = lyapunov_representation_check(&p, &sol, 0.0, &x, 0, 10, 0).unwrap();
        assert_eq!(rep.estimate.mean, 5.0);
        assert_eq!(rep.oracle, 5.0);
        assert_eq!(rep.z, 0.0);

        let mut p0 = canned_problem(&BenchmarkId::LyapunovOnly);
        p0.terminal = SymMat::zeros(1);
        if let CoefficientEnv::Deterministic { slices, .. } = &mut p0.env {
            slices[0].q = SymMat::zeros(1);
        }
        let sol = crate::riccati::solve_lyapunov(&p0, &grid, &crate::riccati::GainSchedule::Zero).unwrap();
        let rep = lyapunov_representation_check(&p0, &sol, 0.5, &DVector::from_element(1, 3.0), 0, 10, 0).unwrap();
        assert_eq!((rep.estimate.mean, rep.oracle), (0.0, 0.0));
    }

    #[test]
    fn pairwise_sum_matches_naive_on_exact_values() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }
}
