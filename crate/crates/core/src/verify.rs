//! Check suites binding the Riccati solver, the feedback law and the
//! simulator together. Every check returns a [`CheckReport`] whose verdict is
//! `observed[i] <= bound[i]` for all `i`.
//!
//! Statistical tolerance is `3·stderr`. Discretization tolerance `c·Δt` is
//! calibrated by grid halving: the same bundles are coarsened (increments
//! summed pairwise) and re-run under the law sampled at every other node, and
//! the paired difference `Ĵ_{2Δt} − Ĵ_{Δt}` (plus three of its own standard
//! errors) estimates the leading weak-error term.

use std::path::Path as FsPath;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use thiserror::Error;

use crate::feedback::{adjoint_along, gain_from_riccati, optimal_value, stationarity_residual, FeedbackLaw};
use crate::montecarlo::{map_paths, smooth_direction, Control, McError, McEstimate, Simulator};
use crate::problem::LqProblem;
use crate::report::{write_rows_to_path, ExportError, Format};
use crate::riccati::{solve_direct, solve_quasilinearization, RiccatiError, RiccatiSolution, TimeGrid, PSD_TOL};

pub const SIGMAS: f64 = 3.0;
pub const STATIONARITY_TOL: f64 = 1e-10;
pub const PAIRING_REL_TOL: f64 = 1e-8;
pub const RATIO_REL_TOL: f64 = 1e-6;
pub const FD_EPS: f64 = 1e-3;
/// Relative rounding slack for estimators that are exactly deterministic.
pub const ROUNDING_REL: f64 = 1e-10;
pub const DEFAULT_EPS: [f64; 3] = [0.1, 0.05, 0.025];

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub observed: Vec<f64>,
    pub bound: Vec<f64>,
    /// `3·stderr` part of the bound (largest over components).
    pub statistical: f64,
    /// `c·Δt` part of the bound (largest over components).
    pub discretization: f64,
    pub details: String,
}

impl CheckReport {
    fn new(
        name: &str,
        observed: Vec<f64>,
        bound: Vec<f64>,
        statistical: f64,
        discretization: f64,
        details: String,
    ) -> Self {
        assert_eq!(observed.len(), bound.len());
        // NaN compares false and therefore fails
        let passed = observed.iter().zip(&bound).all(|(o, b)| o <= b);
        CheckReport {
            name: name.to_string(),
            passed,
            observed,
            bound,
            statistical,
            discretization,
            details,
        }
    }
}

/// Flat CSV layout: vectors joined with `;`.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub name: String,
    pub passed: bool,
    pub observed: String,
    pub bound: String,
    pub statistical: f64,
    pub discretization: f64,
    pub details: String,
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(";")
}

pub fn report_rows(reports: &[CheckReport]) -> Vec<ReportRow> {
    reports
        .iter()
        .map(|r| ReportRow {
            name: r.name.clone(),
            passed: r.passed,
            observed: join(&r.observed),
            bound: join(&r.bound),
            statistical: r.statistical,
            discretization: r.discretization,
            details: r.details.clone(),
        })
        .collect()
}

pub fn write_reports(path: &FsPath, reports: &[CheckReport], format: Format) -> Result<(), ExportError> {
    match format {
        Format::Csv => write_rows_to_path(path, &report_rows(reports), format),
        Format::Json => write_rows_to_path(path, reports, format),
    }
}

/// Paired fine/coarse samples from the same bundles.
struct Calibrated {
    fine: McEstimate,
    /// `|mean(coarse − fine)| + 3·stderr(coarse − fine)`; zero when the grid
    /// cannot be halved.
    allowance: f64,
    note: String,
}

fn calibrate(pairs: &[(f64, Option<f64>)]) -> Calibrated {
    let fine: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let fine = McEstimate::from_samples(&fine);
    let diffs: Option<Vec<f64>> = pairs.iter().map(|(f, c)| c.map(|c| c - f)).collect();
    match diffs {
        Some(d) => {
            let e = McEstimate::from_samples(&d);
            Calibrated {
                fine,
                allowance: e.mean.abs() + SIGMAS * e.stderr,
                note: format!("halving shift {:e} ± {:e}", e.mean, e.stderr),
            }
        }
        None => Calibrated {
            fine,
            allowance: 0.0,
            note: "no calibration: grid cannot be halved".into(),
        },
    }
}

/// The law restricted to every other node, on the half-resolution grid.
fn coarsen_law(law: &FeedbackLaw) -> Option<FeedbackLaw> {
    let grid = law.grid.coarsen()?;
    let gain = law.gain.iter().step_by(2).cloned().collect();
    Some(FeedbackLaw { grid, gain })
}

/// `|v_{2h} − v_h|` of the Riccati value itself, bounding the oracle's own
/// integration error.
fn oracle_shift(p: &LqProblem, grid: &TimeGrid, value: f64) -> f64 {
    grid.coarsen()
        .and_then(|g| solve_direct(p, &g).ok())
        .map_or(0.0, |sol| (optimal_value(&sol, &p.x0, p.r0) - value).abs())
}

fn costs_with_calibration(
    p: &LqProblem,
    grid: &TimeGrid,
    law: &FeedbackLaw,
    n_paths: usize,
    seed: u64,
) -> Result<Calibrated, VerifyError> {
    let sim = Simulator::new(p, grid)?;
    let coarse = coarsen_law(law);
    let coarse_sim = match &coarse {
        Some(l) => Some(Simulator::new(p, &l.grid)?),
        None => None,
    };
    let fine_ctrl = Control::Feedback(law.clone());
    let coarse_ctrl = coarse.map(Control::Feedback);
    let pairs = map_paths(p, grid, n_paths, seed, |noise| {
        let f = sim.cost(&fine_ctrl, noise)?;
        let c = match (&coarse_sim, &coarse_ctrl) {
            (Some(s), Some(ctrl)) => Some(s.cost(ctrl, &noise.coarsen().expect("even steps"))?),
            _ => None,
        };
        Ok((f, c))
    })?;
    Ok(calibrate(&pairs))
}

fn check_paths(n_paths: usize) -> Result<(), VerifyError> {
    if n_paths < 2 {
        return Err(VerifyError::InvalidArgument(format!(
            "need at least 2 paths, got {n_paths}"
        )));
    }
    Ok(())
}

/// Monte Carlo cost under the Riccati feedback against `⟨K(0, r₀) x₀, x₀⟩`.
pub fn check_value_match(
    p: &LqProblem,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<CheckReport, VerifyError> {
    check_paths(n_paths)?;
    let sol = solve_direct(p, grid)?;
    let law = gain_from_riccati(p, &sol)?;
    let oracle = optimal_value(&sol, &p.x0, p.r0);
    let cal = costs_with_calibration(p, grid, &law, n_paths, seed)?;
    let stat = SIGMAS * cal.fine.stderr;
    let disc = cal.allowance + oracle_shift(p, grid, oracle) + ROUNDING_REL * oracle.abs().max(1.0);
    Ok(CheckReport::new(
        "value_match",
        vec![(cal.fine.mean - oracle).abs()],
        vec![stat + disc],
        stat,
        disc,
        format!(
            "estimate {:.10e} (stderr {:e}, {} paths), oracle {:.10e}; {}",
            cal.fine.mean, cal.fine.stderr, cal.fine.paths, oracle, cal.note
        ),
    ))
}

/// Gaps `Ĵ(u* ± εv) − Ĵ(u*)` on common bundles, and `ε`-independence of the
/// symmetric second difference `[Ĵ(u*+εv) + Ĵ(u*−εv) − 2Ĵ(u*)] / (2ε²)`.
pub fn check_optimality_gap(
    p: &LqProblem,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    directions: &[Vec<DVector<f64>>],
    eps_list: &[f64],
) -> Result<CheckReport, VerifyError> {
    check_paths(n_paths)?;
    if eps_list.is_empty() || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(VerifyError::InvalidArgument(
            "eps_list must hold positive values".into(),
        ));
    }
    let sol = solve_direct(p, grid)?;
    let law = gain_from_riccati(p, &sol)?;
    let sim = Simulator::new(p, grid)?;
    let per = 2 * eps_list.len();
    // [path][1 + dir * per + 2 * e + sign]
    let samples = map_paths(p, grid, n_paths, seed, |noise| {
        let base = Control::OpenLoop(sim.realize(&law, noise)?);
        let mut out = vec![sim.cost(&base, noise)?];
        for v in directions {
            for &eps in eps_list {
                for s in [eps, -eps] {
                    out.push(sim.cost(&Control::perturbed(base.clone(), v.clone(), s), noise)?);
                }
            }
        }
        Ok(out)
    })?;

    let column =
        |f: &dyn Fn(&[f64]) -> f64| McEstimate::from_samples(&samples.iter().map(|s| f(s)).collect::<Vec<_>>());
    let (mut observed, mut bound) = (Vec::new(), Vec::new());
    let (mut worst_gap, mut worst_ratio, mut stat) = (f64::INFINITY, 0.0f64, 0.0f64);
    for i in 0..directions.len() {
        let mut second = Vec::new();
        for (e, &eps) in eps_list.iter().enumerate() {
            let at = 1 + i * per + 2 * e;
            for sign in 0..2 {
                let gap = column(&|s| s[at + sign] - s[0]);
                observed.push(-gap.mean);
                bound.push(SIGMAS * gap.stderr);
                worst_gap = worst_gap.min(gap.mean + SIGMAS * gap.stderr);
                stat = stat.max(SIGMAS * gap.stderr);
            }
            second.push(column(&|s| (s[at] + s[at + 1] - 2.0 * s[0]) / (2.0 * eps * eps)).mean);
        }
        let reference = second[0];
        for s in &second[1..] {
            let rel = if *s == reference {
                0.0
            } else {
                (s - reference).abs() / reference.abs()
            };
            worst_ratio = worst_ratio.max(rel);
            observed.push(rel);
            bound.push(RATIO_REL_TOL);
        }
    }
    Ok(CheckReport::new(
        "optimality_gap",
        observed,
        bound,
        stat,
        0.0,
        format!(
            "{} directions × {} eps, {} paths; min gap + 3·stderr {:e}; max relative spread of gap/eps² {:e}",
            directions.len(),
            eps_list.len(),
            n_paths,
            worst_gap,
            worst_ratio
        ),
    ))
}

/// `|a − b| / max(|b|, scale)`; `scale` keeps the ratio meaningful where the
/// derivative itself vanishes.
fn relative_gap(a: f64, b: f64, scale: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(scale).max(f64::MIN_POSITIVE)
    }
}

/// Number of bundles used for the pathwise exactness part of [`check_gradient`].
pub const EXACTNESS_BUNDLES: usize = 16;

/// (a) Pathwise central difference of the cost equals the pairing integrand on
/// fixed bundles, relative to `max(|pairing|, |cost|)`. (b) When `u` is a feedback law it is taken as the claimed
/// optimum and the pairing estimate must vanish within `3·stderr + c·Δt`.
pub fn check_gradient(
    p: &LqProblem,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    u: &Control,
    v: &[DVector<f64>],
) -> Result<CheckReport, VerifyError> {
    check_paths(n_paths)?;
    let sim = Simulator::new(p, grid)?;
    let mut worst = 0.0f64;
    for i in 0..n_paths.min(EXACTNESS_BUNDLES) {
        let noise = crate::montecarlo::sample_noise(p, grid, i as u64, seed);
        let up = sim.cost(&Control::perturbed(u.clone(), v.to_vec(), FD_EPS), &noise)?;
        let dn = sim.cost(&Control::perturbed(u.clone(), v.to_vec(), -FD_EPS), &noise)?;
        let cd = (up - dn) / (2.0 * FD_EPS);
        worst = worst.max(relative_gap(
            cd,
            sim.pairing(u, v, &noise)?,
            0.5 * (up.abs() + dn.abs()),
        ));
    }
    let mut observed = vec![worst];
    let mut bound = vec![PAIRING_REL_TOL];
    let mut details = format!("max relative central-difference error {worst:e}");
    let (mut stat, mut disc) = (0.0, 0.0);

    if let Control::Feedback(law) = u {
        let coarse = coarsen_law(law);
        let coarse_sim = match &coarse {
            Some(l) => Some(Simulator::new(p, &l.grid)?),
            None => None,
        };
        let coarse_v: Vec<DVector<f64>> = v.iter().step_by(2).cloned().collect();
        let coarse_u = coarse.map(Control::Feedback);
        let pairs = map_paths(p, grid, n_paths, seed, |noise| {
            let f = sim.pairing(u, v, noise)?;
            let c = match (&coarse_sim, &coarse_u) {
                (Some(s), Some(cu)) => Some(s.pairing(cu, &coarse_v, &noise.coarsen().expect("even steps"))?),
                _ => None,
            };
            Ok((f, c))
        })?;
        let cal = calibrate(&pairs);
        stat = SIGMAS * cal.fine.stderr;
        disc = cal.allowance + ROUNDING_REL;
        observed.push(cal.fine.mean.abs());
        bound.push(stat + disc);
        details.push_str(&format!(
            "; pairing at feedback {:e} (stderr {:e}, {} paths); {}",
            cal.fine.mean, cal.fine.stderr, cal.fine.paths, cal.note
        ));
    }
    Ok(CheckReport::new("gradient", observed, bound, stat, disc, details))
}

/// (a) Stationarity residual of the adjoint triple along the law's control
/// at every node and regime for random states. (b) `2Ĵ(law)` against
/// `⟨p₀, x₀⟩ = 2⟨K(0) x₀, x₀⟩`.
#[allow(clippy::too_many_arguments)]
pub fn check_hamilton_identities(
    p: &LqProblem,
    sol: &RiccatiSolution,
    law: &FeedbackLaw,
    grid: &TimeGrid,
    n_samples: usize,
    n_paths: usize,
    seed: u64,
) -> Result<CheckReport, VerifyError> {
    check_paths(n_paths)?;
    if sol.grid != *grid || law.grid != *grid {
        return Err(VerifyError::InvalidArgument("solution, law and grid disagree".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states: Vec<DVector<f64>> = (0..n_samples)
        .map(|_| DVector::from_fn(p.n, |_, _| StandardNormal.sample(&mut rng)))
        .collect();
    let mut residual = 0.0f64;
    for k in 0..=grid.steps() {
        for r in 0..sol.regimes() {
            let s = p
                .slice_at(grid.node(k), r)
                .map_err(|e| VerifyError::InvalidArgument(e.to_string()))?;
            let (km, h) = (sol.k_at(k, r), sol.h_at(k, r));
            for x in &states {
                let u = law.at(k, r) * x;
                let adj = adjoint_along(s, km, h, x, &u);
                let res = stationarity_residual(s, &p.marks, &u, &adj).norm() / (1.0 + x.norm());
                residual = residual.max(if res.is_nan() { f64::INFINITY } else { res });
            }
        }
    }

    let oracle = 2.0 * optimal_value(sol, &p.x0, p.r0);
    let (gap, stat, disc, note) = match costs_with_calibration(p, grid, law, n_paths, seed) {
        Ok(cal) => {
            let stat = 2.0 * SIGMAS * cal.fine.stderr;
            let disc =
                2.0 * (cal.allowance + oracle_shift(p, grid, oracle / 2.0)) + ROUNDING_REL * oracle.abs().max(1.0);
            (
                (2.0 * cal.fine.mean - oracle).abs(),
                stat,
                disc,
                format!("2Ĵ {:.10e}, ⟨p₀,x₀⟩ {:.10e}; {}", 2.0 * cal.fine.mean, oracle, cal.note),
            )
        }
        // a diverging closed loop is a failed identity, not a harness error
        Err(VerifyError::Mc(McError::NonFinite { step })) => {
            (f64::INFINITY, 0.0, 0.0, format!("closed loop diverged at step {step}"))
        }
        Err(e) => return Err(e),
    };
    Ok(CheckReport::new(
        "hamilton_identities",
        vec![residual, gap],
        vec![STATIONARITY_TOL, stat + disc],
        stat,
        disc,
        format!("max stationarity residual {residual:e} over {n_samples} states; {note}"),
    ))
}

/// Monotone quasilinearization: certificates and iterates stay in the cone
/// and the limit matches the direct solve.
pub fn check_monotone_scheme(
    p: &LqProblem,
    grid: &TimeGrid,
    tol: f64,
    max_iter: usize,
) -> Result<CheckReport, VerifyError> {
    if !(tol > 0.0) {
        return Err(VerifyError::InvalidArgument("tol must be positive".into()));
    }
    let limit_tol = (10.0 * tol).max(1e-6);
    let direct = solve_direct(p, grid)?;
    match solve_quasilinearization(p, grid, tol, max_iter) {
        Ok((sol, trace)) => {
            let cert = trace.certificates.iter().copied().fold(f64::INFINITY, f64::min);
            let eig = trace.iterate_min_eig.iter().copied().fold(f64::INFINITY, f64::min);
            let dev = sol.sup_deviation(&direct);
            // no consecutive pair means nothing to certify
            let cert_obs = if cert.is_finite() { -cert } else { f64::NEG_INFINITY };
            Ok(CheckReport::new(
                "monotone_scheme",
                vec![cert_obs, -eig, dev],
                vec![PSD_TOL, PSD_TOL, limit_tol],
                0.0,
                0.0,
                format!(
                    "{} iterations; min certificate {cert:e}; min iterate eigenvalue {eig:e}; sup distance to direct {dev:e}",
                    sol.diagnostics.iterations
                ),
            ))
        }
        Err(RiccatiError::MonotonicityViolation { iteration, min_eig }) => Ok(CheckReport::new(
            "monotone_scheme",
            vec![-min_eig],
            vec![PSD_TOL],
            0.0,
            0.0,
            format!("monotonicity lost at iteration {iteration}: min eigenvalue {min_eig:e}"),
        )),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    /// Random states for the stationarity residual.
    pub n_samples: usize,
    pub n_directions: usize,
    pub eps_list: Vec<f64>,
    /// Path cap for the optimality-gap check, which simulates
    /// `1 + 2·directions·eps` controls per bundle.
    pub gap_paths: usize,
    /// Replace the Riccati law by its negative in the gradient and Hamilton
    /// checks.
    pub flip_gain_sign: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            steps: 1000,
            n_paths: 10_000,
            seed: 42,
            tol: crate::riccati::DEFAULT_TOL,
            max_iter: crate::riccati::DEFAULT_MAX_ITER,
            n_samples: 100,
            n_directions: 10,
            eps_list: DEFAULT_EPS.to_vec(),
            gap_paths: 1000,
            flip_gain_sign: false,
        }
    }
}

/// Seeded smooth perturbation directions.
pub fn directions(m: usize, grid: &TimeGrid, count: usize, seed: u64) -> Vec<Vec<DVector<f64>>> {
    (0..count as u64)
        .map(|i| smooth_direction(m, grid, seed.wrapping_mul(1_000_003).wrapping_add(i)))
        .collect()
}

pub fn run_suite(p: &LqProblem, cfg: &SuiteConfig) -> Result<Vec<CheckReport>, VerifyError> {
    let grid = TimeGrid::for_problem(p, cfg.steps);
    let sol = solve_direct(p, &grid)?;
    let mut law = gain_from_riccati(p, &sol)?;
    if cfg.flip_gain_sign {
        law = law.sign_flipped();
    }
    let dirs = directions(p.m, &grid, cfg.n_directions, cfg.seed);
    let v = directions(p.m, &grid, 1, cfg.seed ^ 0x9e37_79b9).remove(0);
    let gradient = match check_gradient(p, &grid, cfg.n_paths, cfg.seed, &Control::Feedback(law.clone()), &v) {
        Err(VerifyError::Mc(McError::NonFinite { step })) => CheckReport::new(
            "gradient",
            vec![f64::INFINITY],
            vec![PAIRING_REL_TOL],
            0.0,
            0.0,
            format!("closed loop diverged at step {step}"),
        ),
        other => other?,
    };
    Ok(vec![
        check_value_match(p, &grid, cfg.n_paths, cfg.seed)?,
        check_optimality_gap(p, &grid, cfg.n_paths.min(cfg.gap_paths), cfg.seed, &dirs, &cfg.eps_list)?,
        gradient,
        check_hamilton_identities(p, &sol, &law, &grid, cfg.n_samples, cfg.n_paths, cfg.seed)?,
        check_monotone_scheme(p, &grid, cfg.tol, cfg.max_iter)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{canned_problem, BenchmarkId, CoefficientEnv, CoefficientSlice};
    use crate::symcone::SymMat;

    fn small(id: &BenchmarkId, steps: usize) -> (LqProblem, TimeGrid) {
        let p = canned_problem(id);
        let g = TimeGrid::for_problem(&p, steps);
        (p, g)
    }

    #[test]
    fn report_verdict_is_componentwise() {
        let r = CheckReport::new("x", vec![1.0, 2.0], vec![1.0, 3.0], 0.0, 0.0, String::new());
        assert!(r.passed);
        let r = CheckReport::new("x", vec![1.0, f64::NAN], vec![1.0, 3.0], 0.0, 0.0, String::new());
        assert!(!r.passed);
    }

    #[test]
    fn value_match_on_deterministic_and_lyapunov() {
        let (p, g) = small(&BenchmarkId::ScalarRiccati, 200);
        let r = check_value_match(&p, &g, 50, 1).unwrap();
        assert!(r.passed, "{r:?}");
        let (p, g) = small(&BenchmarkId::LyapunovOnly, 200);
        let r = check_value_match(&p, &g, 4000, 1).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn zero_direction_gap_is_exactly_zero() {
        let (p, g) = small(&BenchmarkId::TwoRegimeSwitching, 100);
        let v = vec![vec![DVector::zeros(1); 100]];
        let r = check_optimality_gap(&p, &g, 20, 3, &v, &DEFAULT_EPS).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.observed.iter().all(|&o| o == 0.0 || o == -0.0));
    }

    #[test]
    fn gap_on_scalar_benchmark() {
        let (p, g) = small(&BenchmarkId::ScalarRiccati, 200);
        let dirs = directions(1, &g, 10, 5);
        let r = check_optimality_gap(&p, &g, 20, 3, &dirs, &DEFAULT_EPS).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn gap_nonnegative_when_control_cannot_act() {
        let (p, g) = small(&BenchmarkId::LyapunovOnly, 100);
        let dirs = directions(1, &g, 3, 5);
        let r = check_optimality_gap(&p, &g, 50, 3, &dirs, &DEFAULT_EPS).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn gradient_zero_direction_and_random_control() {
        let id = BenchmarkId::RandomPsd {
            seed: 2,
            n: 2,
            m: 2,
            d: 2,
            k: 1,
            regimes: 1,
        };
        let (p, g) = small(&id, 100);
        let zero = vec![DVector::zeros(2); 100];
        let u = Control::OpenLoop(smooth_direction(2, &g, 9));
        let r = check_gradient(&p, &g, 10, 0, &u, &zero).unwrap();
        assert!(r.passed && r.observed == vec![0.0], "{r:?}");
        let r = check_gradient(&p, &g, 10, 0, &u, &smooth_direction(2, &g, 10)).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.observed.len(), 1);
    }

    #[test]
    fn flipped_gain_fails_hamilton_check() {
        let (p, g) = small(&BenchmarkId::TwoRegimeSwitching, 200);
        let sol = solve_direct(&p, &g).unwrap();
        let law = gain_from_riccati(&p, &sol).unwrap();
        let ok = check_hamilton_identities(&p, &sol, &law, &g, 10, 2000, 0).unwrap();
        assert!(ok.passed, "{ok:?}");
        let bad = check_hamilton_identities(&p, &sol, &law.sign_flipped(), &g, 10, 2000, 0).unwrap();
        assert!(!bad.passed);
        assert!(bad.observed[0] > 1e-3);
    }

    #[test]
    fn zero_problem_has_zero_residuals() {
        let mut p = canned_problem(&BenchmarkId::ScalarRiccati);
        p.env = CoefficientEnv::Deterministic {
            grid: vec![0.0, 1.0],
            slices: vec![CoefficientSlice::zeros(1, 1, 1, 0)],
        };
        p.terminal = SymMat::zeros(1);
        let g = TimeGrid::for_problem(&p, 50);
        let sol = solve_direct(&p, &g).unwrap();
        let law = gain_from_riccati(&p, &sol).unwrap();
        let r = check_hamilton_identities(&p, &sol, &law, &g, 5, 10, 0).unwrap();
        assert_eq!(r.observed, vec![0.0, 0.0]);
        assert!(r.passed);
    }

    #[test]
    fn scalar_residuals_are_tiny() {
        let (p, g) = small(&BenchmarkId::ScalarRiccati, 100);
        let sol = solve_direct(&p, &g).unwrap();
        let law = gain_from_riccati(&p, &sol).unwrap();
        let r = check_hamilton_identities(&p, &sol, &law, &g, 20, 10, 0).unwrap();
        assert!(r.observed[0] < 1e-12, "{r:?}");
    }

    #[test]
    fn monotone_scheme_examples() {
        let (p, g) = small(&BenchmarkId::LyapunovOnly, 100);
        let r = check_monotone_scheme(&p, &g, 1e-8, 50).unwrap();
        assert!(r.passed && r.details.starts_with("1 iterations"), "{r:?}");
        let (p, g) = small(&BenchmarkId::ScalarRiccati, 100);
        let r = check_monotone_scheme(&p, &g, 1e-8, 50).unwrap();
        assert!(r.passed && r.observed[0] <= 1e-10, "{r:?}");
        let id = BenchmarkId::RandomPsd {
            seed: 11,
            n: 3,
            m: 2,
            d: 2,
            k: 2,
            regimes: 2,
        };
        let (p, g) = small(&id, 100);
        assert!(check_monotone_scheme(&p, &g, 1e-8, 50).unwrap().passed);
    }

    #[test]
    fn two_paths_still_run() {
        let p = canned_problem(&BenchmarkId::TwoRegimeSymmetric);
        let cfg = SuiteConfig {
            steps: 20,
            n_paths: 2,
            n_directions: 2,
            n_samples: 3,
            ..Default::default()
        };
        let reports = run_suite(&p, &cfg).unwrap();
        assert_eq!(reports.len(), 5);
        assert!(reports.iter().all(|r| r.bound.iter().all(|b| b.is_finite())));
    }

    #[test]
    fn csv_rows_join_vectors() {
        let r = CheckReport::new("x", vec![1.0, 0.5], vec![2.0, 1.0], 0.0, 0.0, "d".into());
        let rows = report_rows(&[r]);
        assert_eq!(rows[0].observed, "1e0;5e-1");
    }
}
