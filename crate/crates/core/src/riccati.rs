//! Backward Riccati equation with jumps.
//!
//! The kernel `K` of the value function `⟨K_t x, x⟩` solves a terminal-value
//! matrix equation. In the supported coefficient classes the Brownian
//! martingale field vanishes and the jump field is `H(θ) = K_{r'} − K_r`,
//! where `r' = jump_map(r, θ)`, so the backward equation becomes a coupled
//! system of matrix ODEs (one per regime):
//!
//! ```text
//! −dK_r/dt = G_r + Q_r − B̂_r N̂_r⁻¹ B̂_rᵀ + Σ_k ν_k H_r(θ_k),   K_r(T) = M
//! G  = KA + AᵀK + Σ_i Cᵢᵀ K Cᵢ + Σ_k ν_k [H E + Eᵀ H + Eᵀ (K + H) E]
//! B̂  = KB + Σ_i Cᵢᵀ K Dᵢ + Σ_k ν_k [H F + Eᵀ (K + H) F]
//! N̂  = N + Σ_i Dᵢᵀ K Dᵢ + Σ_k ν_k Fᵀ (K + H) F
//! ```
//!
//! The last term of the first line is the compensator of the regime jumps.
//! The deterministic class is the single-regime case with `H ≡ 0`.
//!
//! Two solvers are provided: direct RK4 integration of the nonlinear system,
//! and quasilinearization, which freezes the gain `Û = N̂⁻¹B̂ᵀ` at the
//! previous iterate and solves the resulting linear (Lyapunov-type) equation.
//! Starting from `K₀ = 0` the iterates `K₁ ⪰ K₂ ⪰ …` decrease monotonically to
//! the Riccati solution.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::problem::{validate, CoefficientSlice, LqProblem, MarkSpace};
use crate::symcone::{spd_solve, ConeError, SymMat};

/// Eigenvalues of `K` in `[-PSD_TOL, 0)` are rounding; below that is failure.
pub const PSD_TOL: f64 = 1e-8;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 50;
/// Breakpoints closer than this (relative to the step) count as grid nodes.
const NODE_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiccatiError {
    #[error("N̂ lost uniform positivity at node {node}: min eigenvalue {min_eig:e}")]
    NotUniformlyPositive { node: usize, min_eig: f64 },
    #[error("K left the PSD cone at node {node}, regime {regime}: min eigenvalue {min_eig:e}")]
    PsdViolation { node: usize, regime: usize, min_eig: f64 },
    #[error("quasilinearization did not converge in {max_iter} iterations (last deviation {last_deviation:e})")]
    NoConvergence { max_iter: usize, last_deviation: f64 },
    #[error("iterates not monotone at iteration {iteration}: min eigenvalue of K_j - K_(j+1) is {min_eig:e}")]
    MonotonicityViolation { iteration: usize, min_eig: f64 },
    #[error("grid incompatible with problem: {0}")]
    GridMismatch(String),
    #[error("problem failed validation: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// Uniform grid `t_k = k·T/steps` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, horizon: f64) -> Self {
        assert!(steps >= 1, "time grid needs at least one step");
        assert!(horizon > 0.0 && horizon.is_finite(), "horizon must be positive");
        TimeGrid { steps, horizon }
    }

    pub fn for_problem(p: &LqProblem, steps: usize) -> Self {
        Self::new(steps, p.horizon)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|k| self.node(k))
    }

    /// Node index of `t` when `t` lies on the grid.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = t / self.dt();
        let k = x.round();
        if (x - k).abs() <= NODE_MATCH_TOL * x.abs().max(1.0) && k >= 0.0 && k as usize <= self.steps {
            Some(k as usize)
        } else {
            None
        }
    }

    /// Grid with twice the step, when `steps` is even.
    pub fn coarsen(&self) -> Option<TimeGrid> {
        (self.steps % 2 == 0 && self.steps >= 2).then(|| TimeGrid::new(self.steps / 2, self.horizon))
    }
}

/// `K + H(θ_k)`, with an empty `h` standing for `H ≡ 0`.
fn k_plus_h(k: &SymMat, h: &[SymMat], mark: usize) -> DMatrix<f64> {
    match h.get(mark) {
        Some(hm) => k.as_matrix() + hm.as_matrix(),
        None => k.as_matrix().clone(),
    }
}

/// `N̂ = N + Σ Dᵢᵀ K Dᵢ + Σ ν_k F(θ_k)ᵀ (K + H(θ_k)) F(θ_k)`.
///
/// The printed weight carries `Dᵢ*` on both sides of `K`; the congruence
/// `Dᵢᵀ K Dᵢ` is the dimensionally consistent reading.
pub fn nhat(s: &CoefficientSlice, marks: &MarkSpace, k: &SymMat, h: &[SymMat]) -> SymMat {
    let km = k.as_matrix();
    let mut out = s.n.as_matrix().clone();
    for d in &s.d {
        out += d.transpose() * km * d;
    }
    for (j, w) in marks.weights().enumerate() {
        let f = &s.f[j];
        out += f.transpose() * k_plus_h(k, h, j) * f * w;
    }
    SymMat::symmetrize(out)
}

/// `B̂ = KB + Σ Cᵢᵀ K Dᵢ + Σ ν_k [H F + Eᵀ (K + H) F](θ_k)`, an `n×m` matrix.
pub fn bhat(s: &CoefficientSlice, marks: &MarkSpace, k: &SymMat, h: &[SymMat]) -> DMatrix<f64> {
    let km = k.as_matrix();
    let mut out = km * &s.b;
    for (c, d) in s.c.iter().zip(&s.d) {
        out += c.transpose() * km * d;
    }
    for (j, w) in marks.weights().enumerate() {
        let (e, f) = (&s.e[j], &s.f[j]);
        let mut blk = e.transpose() * k_plus_h(k, h, j) * f;
        if let Some(hm) = h.get(j) {
            blk += hm.as_matrix() * f;
        }
        out += blk * w;
    }
    out
}

/// Linear part `G` of the generator (no `Q`, no gain term).
fn linear_part(s: &CoefficientSlice, marks: &MarkSpace, k: &SymMat, h: &[SymMat]) -> DMatrix<f64> {
    let km = k.as_matrix();
    let ka = km * &s.a;
    let mut g = &ka + ka.transpose();
    for c in &s.c {
        g += c.transpose() * km * c;
    }
    for (j, w) in marks.weights().enumerate() {
        let e = &s.e[j];
        let mut blk = e.transpose() * k_plus_h(k, h, j) * e;
        if let Some(hm) = h.get(j) {
            let he = hm.as_matrix() * e;
            blk += &he + he.transpose();
        }
        g += blk * w;
    }
    g
}

/// `Û = N̂⁻¹ B̂ᵀ`; the optimal control is `u = −Û x`.
pub fn optimal_gain_hat(
    s: &CoefficientSlice,
    marks: &MarkSpace,
    k: &SymMat,
    h: &[SymMat],
    floor: f64,
) -> Result<DMatrix<f64>, ConeError> {
    spd_solve(&nhat(s, marks, k, h), &bhat(s, marks, k, h).transpose(), floor)
}

/// `G + Q − B̂ N̂⁻¹ B̂ᵀ`, i.e. `−dK/dt` without the regime compensator.
pub fn generator_drift(
    s: &CoefficientSlice,
    marks: &MarkSpace,
    k: &SymMat,
    h: &[SymMat],
    floor: f64,
) -> Result<SymMat, ConeError> {
    let bh = bhat(s, marks, k, h);
    let mut out = linear_part(s, marks, k, h) + s.q.as_matrix();
    if bh.iter().any(|&v| v != 0.0) {
        let sol = spd_solve(&nhat(s, marks, k, h), &bh.transpose(), floor)?;
        out -= &bh * sol;
    } else {
        // positivity is still a standing hypothesis even when the gain vanishes
        let nh = nhat(s, marks, k, h);
        let min_eig = nh.min_eigenvalue();
        if !(min_eig >= floor) {
            return Err(ConeError::NotUniformlyPositive { min_eig, floor });
        }
    }
    Ok(SymMat::symmetrize(out))
}

/// Generator with the gain frozen at `U` (control `u = −U x`):
/// `F(K, H, U) + Uᵀ N U + Q`, where `F` is `G` evaluated with
/// `A − BU`, `Cᵢ − DᵢU`, `E − FU`.
pub fn frozen_gain_drift(
    s: &CoefficientSlice,
    marks: &MarkSpace,
    k: &SymMat,
    h: &[SymMat],
    u: &DMatrix<f64>,
) -> SymMat {
    let closed = CoefficientSlice {
        a: &s.a - &s.b * u,
        b: s.b.clone(),
        c: s.c.iter().zip(&s.d).map(|(c, d)| c - d * u).collect(),
        d: s.d.clone(),
        e: s.e.iter().zip(&s.f).map(|(e, f)| e - f * u).collect(),
        f: s.f.clone(),
        q: s.q.clone(),
        n: s.n.clone(),
    };
    let out = linear_part(&closed, marks, k, h) + s.q.as_matrix() + u.transpose() * s.n.as_matrix() * u;
    SymMat::symmetrize(out)
}

/// Gain `U` (control `u = −U x`) fed to [`solve_lyapunov`].
#[derive(Debug, Clone, PartialEq)]
pub enum GainSchedule {
    Zero,
    /// `[node][regime]`; linearly interpolated at RK4 midpoints.
    Nodal(Vec<Vec<DMatrix<f64>>>),
    /// `[step][stage][regime]`, one gain per RK4 stage.
    Staged(Vec<[Vec<DMatrix<f64>>; 4]>),
}

impl GainSchedule {
    fn at(&self, step: usize, stage: usize, regime: usize) -> Option<DMatrix<f64>> {
        match self {
            GainSchedule::Zero => None,
            GainSchedule::Nodal(g) => Some(match stage {
                0 => g[step + 1][regime].clone(),
                3 => g[step][regime].clone(),
                _ => (&g[step][regime] + &g[step + 1][regime]) * 0.5,
            }),
            GainSchedule::Staged(g) => Some(g[step][stage][regime].clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    Direct,
    Lyapunov,
    Quasilinearization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub method: Method,
    pub iterations: usize,
    /// `[node][regime]`
    pub min_eig_k: Vec<Vec<f64>>,
    /// `[node][regime]`
    pub min_eig_nhat: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    /// `[node][regime]`
    pub k: Vec<Vec<SymMat>>,
    /// `[node][regime][mark]`; zero in the deterministic class.
    pub h: Vec<Vec<Vec<SymMat>>>,
    pub diagnostics: Diagnostics,
    stages: Vec<[Vec<SymMat>; 4]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionRow {
    pub t: f64,
    pub regime: usize,
    pub i: usize,
    pub j: usize,
    #[serde(rename = "K_ij")]
    pub k_ij: f64,
}

#[derive(Debug, Clone, Serialize)]
#[allow(non_snake_case)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub regime: usize,
    pub min_eig_K: f64,
    pub min_eig_Nhat: f64,
}

impl RiccatiSolution {
    pub fn regimes(&self) -> usize {
        self.k[0].len()
    }

    pub fn k_at(&self, node: usize, regime: usize) -> &SymMat {
        &self.k[node][regime]
    }

    pub fn h_at(&self, node: usize, regime: usize) -> &[SymMat] {
        &self.h[node][regime]
    }

    /// RK4 stage inputs `[step][stage][regime]`.
    pub fn stage_states(&self) -> &[[Vec<SymMat>; 4]] {
        &self.stages
    }

    /// Sup over nodes and regimes of the Frobenius distance.
    pub fn sup_deviation(&self, other: &RiccatiSolution) -> f64 {
        sup_deviation(&self.k, &other.k)
    }

    pub fn solution_rows(&self) -> Vec<SolutionRow> {
        let mut rows = Vec::new();
        for (node, ks) in self.k.iter().enumerate() {
            let t = self.grid.node(node);
            for (regime, k) in ks.iter().enumerate() {
                for i in 0..k.dim() {
                    for j in 0..k.dim() {
                        rows.push(SolutionRow {
                            t,
                            regime,
                            i,
                            j,
                            k_ij: k.as_matrix()[(i, j)],
                        });
                    }
                }
            }
        }
        rows
    }

    pub fn diagnostics_rows(&self) -> Vec<DiagnosticsRow> {
        let d = &self.diagnostics;
        let mut rows = Vec::new();
        for node in 0..self.k.len() {
            for regime in 0..self.regimes() {
                rows.push(DiagnosticsRow {
                    t: self.grid.node(node),
                    regime,
                    min_eig_K: d.min_eig_k[node][regime],
                    min_eig_Nhat: d.min_eig_nhat[node][regime],
                });
            }
        }
        rows
    }
}

fn sup_deviation(a: &[Vec<SymMat>], b: &[Vec<SymMat>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| p.sub(q).frobenius_norm()))
        .fold(0.0, f64::max)
}

/// Monotone-scheme record of a quasilinearization run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    /// `K_1, K_2, …` as `[iterate][node][regime]`.
    pub iterates: Vec<Vec<Vec<SymMat>>>,
    /// `deviations[j] = sup ‖K_{j+1} − K_{j+2}‖` for consecutive iterates.
    pub deviations: Vec<f64>,
    /// Min over nodes and regimes of `λ_min(K_j − K_{j+1})`, same indexing.
    pub certificates: Vec<f64>,
    /// Min eigenvalue over nodes and regimes of each iterate.
    pub iterate_min_eig: Vec<f64>,
}

fn check_ready(p: &LqProblem, grid: &TimeGrid) -> Result<(), RiccatiError> {
    let report = validate(p);
    if !report.is_empty() {
        return Err(RiccatiError::Invalid(report.messages()));
    }
    if grid.horizon() != p.horizon {
        return Err(RiccatiError::GridMismatch(format!(
            "grid horizon {} differs from problem horizon {}",
            grid.horizon(),
            p.horizon
        )));
    }
    let table = p.env.grid();
    for &b in &table[1..table.len() - 1] {
        if grid.node_index(b).is_none() {
            return Err(RiccatiError::GridMismatch(format!(
                "table breakpoint {b} is not a node of the {}-step grid",
                grid.steps()
            )));
        }
    }
    Ok(())
}

/// Per-step slice lookup for every regime.
fn step_slices<'a>(p: &'a LqProblem, grid: &TimeGrid) -> Vec<Vec<&'a CoefficientSlice>> {
    let h = grid.dt();
    (0..grid.steps())
        .map(|k| {
            let mid = (grid.node(k) + 0.5 * h).min(p.horizon);
            (0..p.regime_count())
                .map(|r| p.slice_at(mid, r).expect("validated problem"))
                .collect()
        })
        .collect()
}

/// Jump field of regime `r`: `K_{jump_map(r,k)} − K_r` per mark, empty for
/// the deterministic class.
fn jump_field(p: &LqProblem, ks: &[SymMat], r: usize) -> Vec<SymMat> {
    if !p.env.is_regime() {
        return Vec::new();
    }
    (0..p.marks.len())
        .map(|k| ks[p.env.jump_target(r, k)].sub(&ks[r]))
        .collect()
}

fn regime_compensator(marks: &MarkSpace, h: &[SymMat], into: SymMat) -> SymMat {
    h.iter().zip(marks.weights()).fold(into, |acc, (hm, w)| acc.axpy(w, hm))
}

struct Integrated {
    nodes: Vec<Vec<SymMat>>,
    stages: Vec<[Vec<SymMat>; 4]>,
    min_eig: Vec<Vec<f64>>,
}

fn stack_axpy(y: &[SymMat], s: f64, d: &[SymMat]) -> Vec<SymMat> {
    y.iter().zip(d).map(|(a, b)| a.axpy(s, b)).collect()
}

/// Classical RK4 in reversed time `s = T − t` on the stacked system, from
/// `K(T) = terminal` down to `t = 0`. `drift(step, stage, K)` returns `−dK/dt`
/// for every regime.
fn integrate_backward<F>(grid: &TimeGrid, terminal: Vec<SymMat>, mut drift: F) -> Result<Integrated, RiccatiError>
where
    F: FnMut(usize, usize, &[SymMat]) -> Result<Vec<SymMat>, RiccatiError>,
{
    let steps = grid.steps();
    let h = grid.dt();
    let regimes = terminal.len();
    let mut nodes: Vec<Vec<SymMat>> = vec![Vec::new(); steps + 1];
    let mut min_eig = vec![vec![0.0; regimes]; steps + 1];
    for (r, k) in terminal.iter().enumerate() {
        min_eig[steps][r] = k.min_eigenvalue();
    }
    nodes[steps] = terminal;
    let mut stages = Vec::with_capacity(steps);
    for k in (0..steps).rev() {
        let y = &nodes[k + 1];
        let s1 = y.clone();
        let d1 = drift(k, 0, &s1)?;
        let s2 = stack_axpy(y, 0.5 * h, &d1);
        let d2 = drift(k, 1, &s2)?;
        let s3 = stack_axpy(y, 0.5 * h, &d2);
        let d3 = drift(k, 2, &s3)?;
        let s4 = stack_axpy(y, h, &d3);
        let d4 = drift(k, 3, &s4)?;
        let mut next = Vec::with_capacity(regimes);
        for r in 0..regimes {
            let incr = d1[r].axpy(2.0, &d2[r]).axpy(2.0, &d3[r]).add(&d4[r]);
            let mut kr = y[r].axpy(h / 6.0, &incr);
            let mut e = kr.min_eigenvalue();
            if !kr.is_finite() || e < -PSD_TOL || e.is_nan() {
                return Err(RiccatiError::PsdViolation {
                    node: k,
                    regime: r,
                    min_eig: e,
                });
            }
            if e < 0.0 {
                if let Some(c) = kr.clamp_to_cone(PSD_TOL) {
                    kr = c;
                    e = kr.min_eigenvalue().max(0.0);
                }
            }
            min_eig[k][r] = e;
            next.push(kr);
        }
        nodes[k] = next;
        stages.push([s1, s2, s3, s4]);
    }
    stages.reverse();
    Ok(Integrated { nodes, stages, min_eig })
}

fn cone_to_riccati(node: usize) -> impl Fn(ConeError) -> RiccatiError {
    move |e| match e {
        ConeError::NotUniformlyPositive { min_eig, .. } => RiccatiError::NotUniformlyPositive { node, min_eig },
        other => RiccatiError::GridMismatch(other.to_string()),
    }
}

fn stage_node(step: usize, stage: usize) -> usize {
    if stage == 0 {
        step + 1
    } else {
        step
    }
}

fn assemble(
    p: &LqProblem,
    grid: TimeGrid,
    integrated: Integrated,
    method: Method,
    iterations: usize,
) -> RiccatiSolution {
    let Integrated { nodes, stages, min_eig } = integrated;
    let regimes = p.regime_count();
    let mut h = Vec::with_capacity(nodes.len());
    let mut min_eig_nhat = Vec::with_capacity(nodes.len());
    for (node, ks) in nodes.iter().enumerate() {
        let t = grid.node(node);
        let mut hn = Vec::with_capacity(regimes);
        let mut en = Vec::with_capacity(regimes);
        for r in 0..regimes {
            let hr = jump_field(p, ks, r);
            let s = p.slice_at(t, r).expect("validated problem");
            en.push(nhat(s, &p.marks, &ks[r], &hr).min_eigenvalue());
            hn.push(if hr.is_empty() {
                vec![SymMat::zeros(p.n); p.marks.len()]
            } else {
                hr
            });
        }
        h.push(hn);
        min_eig_nhat.push(en);
    }
    RiccatiSolution {
        grid,
        k: nodes,
        h,
        diagnostics: Diagnostics {
            method,
            iterations,
            min_eig_k: min_eig,
            min_eig_nhat,
        },
        stages,
    }
}

/// Direct RK4 integration of the nonlinear Riccati system.
pub fn solve_direct(p: &LqProblem, grid: &TimeGrid) -> Result<RiccatiSolution, RiccatiError> {
    check_ready(p, grid)?;
    let slices = step_slices(p, grid);
    let regimes = p.regime_count();
    let terminal = vec![p.terminal.clone(); regimes];
    let integrated = integrate_backward(grid, terminal, |step, stage, ks| {
        (0..regimes)
            .map(|r| {
                let h = jump_field(p, ks, r);
                let g = generator_drift(slices[step][r], &p.marks, &ks[r], &h, p.delta)
                    .map_err(cone_to_riccati(stage_node(step, stage)))?;
                Ok(regime_compensator(&p.marks, &h, g))
            })
            .collect()
    })?;
    Ok(assemble(p, *grid, integrated, Method::Direct, 0))
}

/// Linear equation with the gain frozen at `gains` (control `u = −U x`):
/// `−dK_r/dt = F(K_r, H_r, U) + Uᵀ N U + Q + Σ ν_k H_r(θ_k)`.
pub fn solve_lyapunov(p: &LqProblem, grid: &TimeGrid, gains: &GainSchedule) -> Result<RiccatiSolution, RiccatiError> {
    check_ready(p, grid)?;
    match gains {
        GainSchedule::Zero => {}
        GainSchedule::Nodal(g) if g.len() == grid.steps() + 1 => {}
        GainSchedule::Staged(g) if g.len() == grid.steps() => {}
        _ => {
            return Err(RiccatiError::GridMismatch(
                "gain schedule length does not match grid".into(),
            ))
        }
    }
    let slices = step_slices(p, grid);
    let regimes = p.regime_count();
    let zero = DMatrix::zeros(p.m, p.n);
    let terminal = vec![p.terminal.clone(); regimes];
    let integrated = integrate_backward(grid, terminal, |step, stage, ks| {
        Ok((0..regimes)
            .map(|r| {
                let h = jump_field(p, ks, r);
                let u = gains.at(step, stage, r);
                let f = frozen_gain_drift(slices[step][r], &p.marks, &ks[r], &h, u.as_ref().unwrap_or(&zero));
                regime_compensator(&p.marks, &h, f)
            })
            .collect())
    })?;
    Ok(assemble(p, *grid, integrated, Method::Lyapunov, 0))
}

/// `Û(K)` at every RK4 stage state of `sol`.
fn staged_gains(p: &LqProblem, grid: &TimeGrid, sol: &RiccatiSolution) -> Result<GainSchedule, RiccatiError> {
    let slices = step_slices(p, grid);
    let regimes = p.regime_count();
    let mut out = Vec::with_capacity(grid.steps());
    for (step, st) in sol.stages.iter().enumerate() {
        let mut per_stage: [Vec<DMatrix<f64>>; 4] = Default::default();
        for (stage, ks) in st.iter().enumerate() {
            per_stage[stage] = (0..regimes)
                .map(|r| {
                    let h = jump_field(p, ks, r);
                    optimal_gain_hat(slices[step][r], &p.marks, &ks[r], &h, p.delta)
                        .map_err(cone_to_riccati(stage_node(step, stage)))
                })
                .collect::<Result<_, _>>()?;
        }
        out.push(per_stage);
    }
    Ok(GainSchedule::Staged(out))
}

fn certificate(prev: &[Vec<SymMat>], next: &[Vec<SymMat>]) -> f64 {
    prev.iter()
        .zip(next)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.sub(y).min_eigenvalue()))
        .fold(f64::INFINITY, f64::min)
}

fn min_over(ks: &[Vec<f64>]) -> f64 {
    ks.iter().flatten().copied().fold(f64::INFINITY, f64::min)
}

/// Quasilinearization from `K₀ = 0`: iterate `K_{j+1} = Lyap(Û(K_j))` until
/// consecutive iterates differ by less than `tol` in sup-Frobenius norm.
///
/// Gains are frozen at the previous iterate's RK4 stage states, so the fixed
/// point is exactly the [`solve_direct`] solution on the same grid.
pub fn solve_quasilinearization(
    p: &LqProblem,
    grid: &TimeGrid,
    tol: f64,
    max_iter: usize,
) -> Result<(RiccatiSolution, IterationTrace), RiccatiError> {
    assert!(tol > 0.0, "tolerance must be positive");
    // Û(0) = 0 since B̂ vanishes at K = 0, H = 0
    let mut prev = solve_lyapunov(p, grid, &GainSchedule::Zero)?;
    let mut trace = IterationTrace {
        iterate_min_eig: vec![min_over(&prev.diagnostics.min_eig_k)],
        iterates: vec![prev.k.clone()],
        ..Default::default()
    };
    let mut last_deviation = f64::INFINITY;
    for j in 1..=max_iter {
        let gains = staged_gains(p, grid, &prev)?;
        let next = solve_lyapunov(p, grid, &gains)?;
        let dev = sup_deviation(&prev.k, &next.k);
        let cert = certificate(&prev.k, &next.k);
        trace.deviations.push(dev);
        trace.certificates.push(cert);
        trace.iterate_min_eig.push(min_over(&next.diagnostics.min_eig_k));
        trace.iterates.push(next.k.clone());
        if cert < -PSD_TOL {
            return Err(RiccatiError::MonotonicityViolation {
                iteration: j,
                min_eig: cert,
            });
        }
        prev = next;
        last_deviation = dev;
        if dev < tol {
            prev.diagnostics.method = Method::Quasilinearization;
            prev.diagnostics.iterations = j;
            return Ok((prev, trace));
        }
    }
    Err(RiccatiError::NoConvergence {
        max_iter,
        last_deviation,
    })
}
