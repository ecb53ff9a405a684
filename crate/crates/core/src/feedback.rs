//! Optimal feedback, optimal value, and the closed-form adjoint along a state.
//!
//! Conventions, fixed once for the whole crate:
//!
//! * The gain is `Θ = −N̂⁻¹ B̂ᵀ`, so `u_t = Θ_t X_{t−}`. The feedback display
//!   as often printed drops this minus sign; the pointwise minimization of the
//!   Hamiltonian and the dual representation both carry it.
//! * The adjoint state is `p = 2 K x` (not `K x`). With `p_T = 2 M X_T` this is
//!   the only scaling under which the stationarity condition
//!   `2 N u + Bᵀ p + Σ Dᵢᵀ qᵢ + Σ ν Fᵀ r = 0`, the gain formula and the value
//!   `⟨K₀ x, x⟩` agree. `qᵢ` and `r(θ)` carry the same factor 2.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::problem::{CoefficientSlice, LqProblem, MarkSpace};
use crate::riccati::{bhat, nhat, RiccatiError, RiccatiSolution, TimeGrid};
use crate::symcone::{spd_solve, ConeError, SymMat};

/// Gain table `Θ(t_k, r)`; the control is `u = Θ(t, r_{t−}) X_{t−}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackLaw {
    pub grid: TimeGrid,
    /// `[node][regime]`, each `m×n`.
    pub gain: Vec<Vec<DMatrix<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GainRow {
    pub t: f64,
    pub regime: usize,
    pub row: usize,
    pub col: usize,
    pub theta: f64,
}

impl FeedbackLaw {
    pub fn at(&self, node: usize, regime: usize) -> &DMatrix<f64> {
        &self.gain[node][regime]
    }

    pub fn regimes(&self) -> usize {
        self.gain[0].len()
    }

    /// Same law with every gain negated; used to exercise the checks.
    pub fn sign_flipped(&self) -> FeedbackLaw {
        FeedbackLaw {
            grid: self.grid,
            gain: self.gain.iter().map(|g| g.iter().map(|m| -m).collect()).collect(),
        }
    }

    pub fn rows(&self) -> Vec<GainRow> {
        let mut rows = Vec::new();
        for (node, gs) in self.gain.iter().enumerate() {
            let t = self.grid.node(node);
            for (regime, g) in gs.iter().enumerate() {
                for row in 0..g.nrows() {
                    for col in 0..g.ncols() {
                        rows.push(GainRow {
                            t,
                            regime,
                            row,
                            col,
                            theta: g[(row, col)],
                        });
                    }
                }
            }
        }
        rows
    }
}

/// `Θ = −N̂⁻¹ [Bᵀ K + Σ Dᵢᵀ K Cᵢ + Σ ν Fᵀ (K E + H + H E)]` for one slice.
pub fn gain_at(
    s: &CoefficientSlice,
    marks: &MarkSpace,
    k: &SymMat,
    h: &[SymMat],
    floor: f64,
) -> Result<DMatrix<f64>, ConeError> {
    Ok(-spd_solve(
        &nhat(s, marks, k, h),
        &bhat(s, marks, k, h).transpose(),
        floor,
    )?)
}

/// Gains at every node, using the slice active on `[t_k, t_{k+1})`.
pub fn gain_from_riccati(p: &LqProblem, sol: &RiccatiSolution) -> Result<FeedbackLaw, RiccatiError> {
    let grid = sol.grid;
    let mut gain = Vec::with_capacity(grid.steps() + 1);
    for node in 0..=grid.steps() {
        let t = grid.node(node);
        let row = (0..sol.regimes())
            .map(|r| {
                let s = p
                    .slice_at(t, r)
                    .map_err(|e| RiccatiError::GridMismatch(e.to_string()))?;
                gain_at(s, &p.marks, sol.k_at(node, r), sol.h_at(node, r), p.delta).map_err(|e| match e {
                    ConeError::NotUniformlyPositive { min_eig, .. } => {
                        RiccatiError::NotUniformlyPositive { node, min_eig }
                    }
                    other => RiccatiError::GridMismatch(other.to_string()),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        gain.push(row);
    }
    Ok(FeedbackLaw { grid, gain })
}

/// `⟨K(0, r₀) x₀, x₀⟩`.
pub fn optimal_value(sol: &RiccatiSolution, x0: &DVector<f64>, r0: usize) -> f64 {
    sol.k_at(0, r0).quad_form(x0)
}

/// Adjoint components `(p, qᵢ, r(θ_k))` at a state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTriple {
    pub p: DVector<f64>,
    pub q: Vec<DVector<f64>>,
    pub r: Vec<DVector<f64>>,
}

/// Closed-form adjoint along `(x, u)` with the factor-2 convention:
///
/// ```text
/// p    = 2 K x
/// qᵢ   = 2 [K Cᵢ x + K Dᵢ u]
/// r(θ) = 2 [(H + K E + H E)(θ) x + (K + H)(θ) F(θ) u]
/// ```
///
/// The printed relations read `p = K X`, which is off by the factor 2 fixed by
/// the terminal condition `p_T = 2 M X_T`.
pub fn adjoint_along(
    s: &CoefficientSlice,
    k: &SymMat,
    h: &[SymMat],
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> AdjointTriple {
    let km = k.as_matrix();
    let p = km * x * 2.0;
    let q =
        s.c.iter()
            .zip(&s.d)
            .map(|(c, d)| (km * (c * x) + km * (d * u)) * 2.0)
            .collect();
    let r =
        s.e.iter()
            .zip(&s.f)
            .enumerate()
            .map(|(j, (e, f))| {
                let kx = km * (e * x) + km * (f * u);
                match h.get(j) {
                    Some(hm) => {
                        let hm = hm.as_matrix();
                        (hm * x + hm * (e * x) + hm * (f * u) + kx) * 2.0
                    }
                    None => kx * 2.0,
                }
            })
            .collect();
    AdjointTriple { p, q, r }
}

/// `2 N u + Bᵀ p + Σ Dᵢᵀ qᵢ + Σ ν_k F(θ_k)ᵀ r(θ_k)`; zero along the optimum.
pub fn stationarity_residual(
    s: &CoefficientSlice,
    marks: &MarkSpace,
    u: &DVector<f64>,
    adj: &AdjointTriple,
) -> DVector<f64> {
    let mut out = s.n.as_matrix() * u * 2.0 + s.b.tr_mul(&adj.p);
    for (d, q) in s.d.iter().zip(&adj.q) {
        out += d.tr_mul(q);
    }
    for ((f, r), w) in s.f.iter().zip(&adj.r).zip(marks.weights()) {
        out += f.tr_mul(r) * w;
    }
    out
}

/// `⟨p, Ax+Bu⟩ + Σ ⟨qᵢ, Cᵢx+Dᵢu⟩ + Σ ν_k ⟨r(θ_k), E x + F u⟩ + ⟨Qx,x⟩ + ⟨Nu,u⟩`.
pub fn hamiltonian(
    s: &CoefficientSlice,
    marks: &MarkSpace,
    x: &DVector<f64>,
    u: &DVector<f64>,
    adj: &AdjointTriple,
) -> f64 {
    let mut out = adj.p.dot(&(&s.a * x + &s.b * u));
    for ((c, d), q) in s.c.iter().zip(&s.d).zip(&adj.q) {
        out += q.dot(&(c * x + d * u));
    }
    for (((e, f), r), w) in s.e.iter().zip(&s.f).zip(&adj.r).zip(marks.weights()) {
        out += w * r.dot(&(e * x + f * u));
    }
    out + s.q.quad_form(x) + s.n.quad_form(u)
}
