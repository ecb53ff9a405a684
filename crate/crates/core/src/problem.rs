//! Problem data: state equation coefficients, quadratic cost weights, the
//! finite mark space, and the two supported coefficient classes.
//!
//! Coefficients are piecewise constant on a declared table grid. The
//! deterministic class has one slice table; the regime-switching class has one
//! table per regime plus a jump map sending `(regime, mark)` to the regime
//! entered when a jump with that mark occurs. Regime-switching coefficients
//! are therefore adapted to the jump filtration only.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symcone::SymMat;

/// Default uniform-positivity floor for the control weight.
pub const DEFAULT_DELTA: f64 = 1e-6;
/// Tolerance for PSD tests on `Q` and `M`.
pub const WEIGHT_PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("time {t} outside horizon [0, {horizon}]")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("regime {regime} out of range (problem has {count})")]
    BadRegime { regime: usize, count: usize },
    #[error("unknown benchmark `{0}`")]
    UnknownBenchmark(String),
    #[error("malformed problem file at `{path}`: {message}")]
    Malformed { path: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub label: String,
    pub weight: f64,
}

/// Finite mark set with per-mark jump intensities.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarkSpace {
    pub marks: Vec<Mark>,
}

impl MarkSpace {
    pub fn new(weights: &[f64]) -> Self {
        MarkSpace {
            marks: weights
                .iter()
                .enumerate()
                .map(|(k, &w)| Mark {
                    label: format!("theta{}", k + 1),
                    weight: w,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.marks[k].weight
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.marks.iter().map(|m| m.weight)
    }
}

pub fn total_intensity(ms: &MarkSpace) -> f64 {
    ms.weights().sum()
}

/// Coefficients active on one table interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSlice {
    #[serde(rename = "A", with = "rowmajor")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "rowmajor")]
    pub b: DMatrix<f64>,
    #[serde(rename = "C", with = "rowmajor_list")]
    pub c: Vec<DMatrix<f64>>,
    #[serde(rename = "D", with = "rowmajor_list")]
    pub d: Vec<DMatrix<f64>>,
    /// Per mark.
    #[serde(rename = "E", with = "rowmajor_list")]
    pub e: Vec<DMatrix<f64>>,
    /// Per mark.
    #[serde(rename = "F", with = "rowmajor_list")]
    pub f: Vec<DMatrix<f64>>,
    #[serde(rename = "Q")]
    pub q: SymMat,
    #[serde(rename = "N")]
    pub n: SymMat,
}

impl CoefficientSlice {
    /// All-zero slice with `N = I`.
    pub fn zeros(n: usize, m: usize, d: usize, marks: usize) -> Self {
        CoefficientSlice {
            a: DMatrix::zeros(n, n),
            b: DMatrix::zeros(n, m),
            c: vec![DMatrix::zeros(n, n); d],
            d: vec![DMatrix::zeros(n, m); d],
            e: vec![DMatrix::zeros(n, n); marks],
            f: vec![DMatrix::zeros(n, m); marks],
            q: SymMat::zeros(n),
            n: SymMat::identity(m),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", try_from = "RawEnv")]
pub enum CoefficientEnv {
    #[serde(rename = "deterministic")]
    Deterministic {
        grid: Vec<f64>,
        slices: Vec<CoefficientSlice>,
    },
    #[serde(rename = "regime")]
    RegimeSwitching {
        grid: Vec<f64>,
        regimes: Vec<Vec<CoefficientSlice>>,
        /// `jump_map[r][k]` is the regime entered from `r` on mark `k`.
        jump_map: Vec<Vec<usize>>,
    },
}

// Plain-struct mirror of the tagged enum; serde buffers internally tagged
// content, which would hide field paths in error messages.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnv {
    #[serde(rename = "type")]
    kind: String,
    grid: Vec<f64>,
    slices: Option<Vec<CoefficientSlice>>,
    regimes: Option<Vec<Vec<CoefficientSlice>>>,
    jump_map: Option<Vec<Vec<usize>>>,
}

impl TryFrom<RawEnv> for CoefficientEnv {
    type Error = String;

    fn try_from(raw: RawEnv) -> Result<Self, String> {
        match (raw.kind.as_str(), raw.slices, raw.regimes, raw.jump_map) {
            ("deterministic", Some(slices), None, None) => Ok(CoefficientEnv::Deterministic { grid: raw.grid, slices }),
            ("regime", None, Some(regimes), Some(jump_map)) => Ok(CoefficientEnv::RegimeSwitching {
                grid: raw.grid,
                regimes,
                jump_map,
            }),
            ("deterministic", ..) => Err("deterministic env needs `slices` only".into()),
            ("regime", ..) => Err("regime env needs `regimes` and `jump_map`".into()),
            (other, ..) => Err(format!("unknown env type `{other}`")),
        }
    }
}

impl CoefficientEnv {
    pub fn grid(&self) -> &[f64] {
        match self {
            CoefficientEnv::Deterministic { grid, .. } | CoefficientEnv::RegimeSwitching { grid, .. } => grid,
        }
    }

    pub fn regime_count(&self) -> usize {
        match self {
            CoefficientEnv::Deterministic { .. } => 1,
            CoefficientEnv::RegimeSwitching { regimes, .. } => regimes.len(),
        }
    }

    pub fn is_regime(&self) -> bool {
        matches!(self, CoefficientEnv::RegimeSwitching { .. })
    }

    /// Slice table of regime `r` (the deterministic table for any `r`).
    pub fn table(&self, r: usize) -> &[CoefficientSlice] {
        match self {
            CoefficientEnv::Deterministic { slices, .. } => slices,
            CoefficientEnv::RegimeSwitching { regimes, .. } => &regimes[r],
        }
    }

    /// Regime entered from `r` on a jump with mark `k`; identity for the
    /// deterministic class.
    pub fn jump_target(&self, r: usize, k: usize) -> usize {
        match self {
            CoefficientEnv::Deterministic { .. } => r,
            CoefficientEnv::RegimeSwitching { jump_map, .. } => jump_map[r][k],
        }
    }

    fn all_slices(&self) -> Box<dyn Iterator<Item = (usize, usize, &CoefficientSlice)> + '_> {
        match self {
            CoefficientEnv::Deterministic { slices, .. } => Box::new(slices.iter().enumerate().map(|(i, s)| (0, i, s))),
            CoefficientEnv::RegimeSwitching { regimes, .. } => Box::new(
                regimes
                    .iter()
                    .enumerate()
                    .flat_map(|(r, t)| t.iter().enumerate().map(move |(i, s)| (r, i, s))),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqProblem {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(with = "vector")]
    pub x0: DVector<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Regime at time zero.
    #[serde(default)]
    pub r0: usize,
    pub marks: MarkSpace,
    pub env: CoefficientEnv,
    #[serde(rename = "M")]
    pub terminal: SymMat,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

/// An admissibility violation found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension(String),
    Horizon(f64),
    Delta(f64),
    MarkWeight { mark: usize, weight: f64 },
    TableGrid(String),
    QNotPsd { regime: usize, slice: usize, min_eig: f64 },
    NBelowDelta { regime: usize, slice: usize, min_eig: f64 },
    MNotPsd(f64),
    NonFinite(String),
    FInRegimeMode { regime: usize, slice: usize, mark: usize },
    JumpMap(String),
    InitialRegime(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension(s) => write!(f, "dimension mismatch: {s}"),
            Violation::Horizon(t) => write!(f, "horizon must be positive, got {t}"),
            Violation::Delta(d) => write!(f, "delta must be positive, got {d}"),
            Violation::MarkWeight { mark, weight } => {
                write!(f, "mark {mark} weight must be positive, got {weight}")
            }
            Violation::TableGrid(s) => write!(f, "table grid: {s}"),
            Violation::QNotPsd { regime, slice, min_eig } => {
                write!(f, "Q not PSD (regime {regime}, slice {slice}, min eig {min_eig:e})")
            }
            Violation::NBelowDelta { regime, slice, min_eig } => write!(
                f,
                "N below delta floor (regime {regime}, slice {slice}, min eig {min_eig:e})"
            ),
            Violation::MNotPsd(e) => write!(f, "M not PSD (min eig {e:e})"),
            Violation::NonFinite(s) => write!(f, "non-finite entry in {s}"),
            Violation::FInRegimeMode { regime, slice, mark } => write!(
                f,
                "F must vanish in regime mode (regime {regime}, slice {slice}, mark {mark})"
            ),
            Violation::JumpMap(s) => write!(f, "jump map: {s}"),
            Violation::InitialRegime(r) => write!(f, "initial regime {r} out of range"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn messages(&self) -> Vec<String> {
        self.violations.iter().map(ToString::to_string).collect()
    }
}

fn shape_check(out: &mut Vec<Violation>, what: &str, m: &DMatrix<f64>, rows: usize, cols: usize) {
    if m.nrows() != rows || m.ncols() != cols {
        out.push(Violation::Dimension(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    } else if m.iter().any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite(what.to_string()));
    }
}

/// Checks every standing assumption; an empty report means the problem is
/// admissible.
pub fn validate(p: &LqProblem) -> ValidationReport {
    let mut v = Vec::new();
    let (n, m, d, k) = (p.n, p.m, p.d, p.marks.len());
    if n == 0 || m == 0 {
        v.push(Violation::Dimension(format!("n={n}, m={m} must be >= 1")));
        return ValidationReport { violations: v };
    }
    if !(p.horizon > 0.0) || !p.horizon.is_finite() {
        v.push(Violation::Horizon(p.horizon));
    }
    if !(p.delta > 0.0) {
        v.push(Violation::Delta(p.delta));
    }
    if p.x0.len() != n {
        v.push(Violation::Dimension(format!(
            "x0 has length {}, expected {n}",
            p.x0.len()
        )));
    }
    for (i, mk) in p.marks.marks.iter().enumerate() {
        if !(mk.weight > 0.0) || !mk.weight.is_finite() {
            v.push(Violation::MarkWeight {
                mark: i,
                weight: mk.weight,
            });
        }
    }
    if p.terminal.dim() != n {
        v.push(Violation::Dimension(format!(
            "M is {0}x{0}, expected {n}x{n}",
            p.terminal.dim()
        )));
    } else if !p.terminal.is_finite() {
        v.push(Violation::NonFinite("M".into()));
    } else {
        let e = p.terminal.min_eigenvalue();
        if e < -WEIGHT_PSD_TOL {
            v.push(Violation::MNotPsd(e));
        }
    }

    let grid = p.env.grid();
    if grid.len() < 2 {
        v.push(Violation::TableGrid("needs at least two breakpoints".into()));
    } else {
        if grid[0] != 0.0 {
            v.push(Violation::TableGrid(format!("must start at 0, starts at {}", grid[0])));
        }
        if grid[grid.len() - 1] != p.horizon {
            v.push(Violation::TableGrid(format!(
                "must end at T={}, ends at {}",
                p.horizon,
                grid[grid.len() - 1]
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            v.push(Violation::TableGrid("breakpoints must be strictly increasing".into()));
        }
    }
    let intervals = grid.len().saturating_sub(1);

    match &p.env {
        CoefficientEnv::Deterministic { slices, .. } => {
            if slices.len() != intervals {
                v.push(Violation::TableGrid(format!(
                    "{} slices for {intervals} intervals",
                    slices.len()
                )));
            }
            if p.r0 != 0 {
                v.push(Violation::InitialRegime(p.r0));
            }
        }
        CoefficientEnv::RegimeSwitching { regimes, jump_map, .. } => {
            let rc = regimes.len();
            if rc == 0 {
                v.push(Violation::JumpMap("no regimes".into()));
            }
            if p.r0 >= rc.max(1) {
                v.push(Violation::InitialRegime(p.r0));
            }
            for (r, t) in regimes.iter().enumerate() {
                if t.len() != intervals {
                    v.push(Violation::TableGrid(format!(
                        "regime {r}: {} slices for {intervals} intervals",
                        t.len()
                    )));
                }
            }
            if jump_map.len() != rc {
                v.push(Violation::JumpMap(format!("{} rows for {rc} regimes", jump_map.len())));
            }
            for (r, row) in jump_map.iter().enumerate() {
                if row.len() != k {
                    v.push(Violation::JumpMap(format!(
                        "row {r} has {} entries for {k} marks",
                        row.len()
                    )));
                }
                if let Some(&bad) = row.iter().find(|&&t| t >= rc) {
                    v.push(Violation::JumpMap(format!("row {r} targets unknown regime {bad}")));
                }
            }
        }
    }

    let regime_mode = p.env.is_regime();
    for (r, i, s) in p.env.all_slices() {
        let at = |name: &str| format!("regime {r} slice {i} {name}");
        let before = v.len();
        shape_check(&mut v, &at("A"), &s.a, n, n);
        shape_check(&mut v, &at("B"), &s.b, n, m);
        for (name, list, len, cols) in [
            ("C", &s.c, d, n),
            ("D", &s.d, d, m),
            ("E", &s.e, k, n),
            ("F", &s.f, k, m),
        ] {
            if list.len() != len {
                v.push(Violation::Dimension(format!(
                    "{} has {} blocks, expected {len}",
                    at(name),
                    list.len()
                )));
            }
            for (j, blk) in list.iter().enumerate() {
                shape_check(&mut v, &at(&format!("{name}[{j}]")), blk, n, cols);
            }
        }
        if s.q.dim() != n {
            v.push(Violation::Dimension(format!(
                "{} is {}x{}",
                at("Q"),
                s.q.dim(),
                s.q.dim()
            )));
        }
        if s.n.dim() != m {
            v.push(Violation::Dimension(format!(
                "{} is {}x{}",
                at("N"),
                s.n.dim(),
                s.n.dim()
            )));
        }
        if v.len() > before {
            continue;
        }
        if !s.q.is_finite() || !s.n.is_finite() {
            v.push(Violation::NonFinite(at("Q/N")));
            continue;
        }
        let qe = s.q.min_eigenvalue();
        if qe < -WEIGHT_PSD_TOL {
            v.push(Violation::QNotPsd {
                regime: r,
                slice: i,
                min_eig: qe,
            });
        }
        let ne = s.n.min_eigenvalue();
        if ne < p.delta {
            v.push(Violation::NBelowDelta {
                regime: r,
                slice: i,
                min_eig: ne,
            });
        }
        if regime_mode {
            for (mark, f) in s.f.iter().enumerate() {
                if f.iter().any(|&x| x != 0.0) {
                    v.push(Violation::FInRegimeMode {
                        regime: r,
                        slice: i,
                        mark,
                    });
                }
            }
        }
    }
    ValidationReport { violations: v }
}

impl LqProblem {
    pub fn regime_count(&self) -> usize {
        self.env.regime_count()
    }

    /// Index of the table interval containing `t`, left-endpoint convention,
    /// with `t = T` mapped to the last interval.
    pub fn interval_index(&self, t: f64) -> Result<usize, ProblemError> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(ProblemError::OutOfHorizon {
                t,
                horizon: self.horizon,
            });
        }
        let grid = self.env.grid();
        let last = grid.len() - 2;
        // number of interior breakpoints <= t
        let idx = grid[1..grid.len() - 1].partition_point(|&b| b <= t);
        Ok(idx.min(last))
    }

    pub fn slice_at(&self, t: f64, regime: usize) -> Result<&CoefficientSlice, ProblemError> {
        let count = self.regime_count();
        if regime >= count {
            return Err(ProblemError::BadRegime { regime, count });
        }
        let i = self.interval_index(t)?;
        Ok(&self.env.table(regime)[i])
    }

    pub fn from_json_str(s: &str) -> Result<Self, ProblemError> {
        let de = &mut serde_json::Deserializer::from_str(s);
        serde_path_to_error::deserialize(de).map_err(|e| ProblemError::Malformed {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self, ProblemError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serialization is infallible")
    }
}

/// Free-function form of [`LqProblem::slice_at`].
pub fn slice_at(p: &LqProblem, t: f64, regime: usize) -> Result<&CoefficientSlice, ProblemError> {
    p.slice_at(t, regime)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchmarkId {
    ScalarRiccati,
    LyapunovOnly,
    TwoRegimeSymmetric,
    TwoRegimeSwitching,
    RandomPsd {
        seed: u64,
        n: usize,
        m: usize,
        d: usize,
        k: usize,
        regimes: usize,
    },
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BenchmarkId::ScalarRiccati => f.write_str("scalar-riccati"),
            BenchmarkId::LyapunovOnly => f.write_str("lyapunov-only"),
            BenchmarkId::TwoRegimeSymmetric => f.write_str("two-regime-symmetric"),
            BenchmarkId::TwoRegimeSwitching => f.write_str("two-regime-switching"),
            BenchmarkId::RandomPsd {
                seed,
                n,
                m,
                d,
                k,
                regimes,
            } => write!(f, "random-psd:seed={seed},n={n},m={m},d={d},k={k},r={regimes}"),
        }
    }
}

impl FromStr for BenchmarkId {
    type Err = ProblemError;

    /// Accepts the fixed names and `random-psd:seed=S,n=N,m=M,d=D,k=K[,r=R]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || ProblemError::UnknownBenchmark(s.to_string());
        match s {
            "scalar-riccati" => return Ok(BenchmarkId::ScalarRiccati),
            "lyapunov-only" => return Ok(BenchmarkId::LyapunovOnly),
            "two-regime-symmetric" => return Ok(BenchmarkId::TwoRegimeSymmetric),
            "two-regime-switching" => return Ok(BenchmarkId::TwoRegimeSwitching),
            _ => {}
        }
        let params = s.strip_prefix("random-psd:").ok_or_else(unknown)?;
        let (mut seed, mut n, mut m, mut d, mut k, mut r) = (None, None, None, None, None, 1);
        for kv in params.split(',') {
            let (key, val) = kv.split_once('=').ok_or_else(unknown)?;
            let num: u64 = val.trim().parse().map_err(|_| unknown())?;
            match key.trim() {
                "seed" => seed = Some(num),
                "n" => n = Some(num as usize),
                "m" => m = Some(num as usize),
                "d" => d = Some(num as usize),
                "k" | "K" => k = Some(num as usize),
                "r" | "R" => r = num as usize,
                _ => return Err(unknown()),
            }
        }
        match (seed, n, m, d, k) {
            (Some(seed), Some(n), Some(m), Some(d), Some(k)) if n >= 1 && m >= 1 && r >= 1 => {
                Ok(BenchmarkId::RandomPsd {
                    seed,
                    n,
                    m,
                    d,
                    k,
                    regimes: r,
                })
            }
            _ => Err(unknown()),
        }
    }
}

pub fn canned_problem(id: &BenchmarkId) -> LqProblem {
    match *id {
        BenchmarkId::ScalarRiccati => {
            let mut s = CoefficientSlice::zeros(1, 1, 1, 0);
            s.b[(0, 0)] = 1.0;
            LqProblem {
                n: 1,
                m: 1,
                d: 1,
                horizon: 1.0,
                x0: DVector::from_element(1, 1.0),
                delta: DEFAULT_DELTA,
                r0: 0,
                marks: MarkSpace::default(),
                env: CoefficientEnv::Deterministic {
                    grid: vec![0.0, 1.0],
                    slices: vec![s],
                },
                terminal: SymMat::identity(1),
            }
        }
        BenchmarkId::LyapunovOnly => {
            let mut s = CoefficientSlice::zeros(1, 1, 1, 1);
            s.a[(0, 0)] = 0.5;
            s.c[0][(0, 0)] = 0.4;
            s.e[0][(0, 0)] = 0.3;
            s.q = SymMat::identity(1);
            LqProblem {
                n: 1,
                m: 1,
                d: 1,
                horizon: 1.0,
                x0: DVector::from_element(1, 1.0),
                delta: DEFAULT_DELTA,
                r0: 0,
                marks: MarkSpace::new(&[1.0]),
                env: CoefficientEnv::Deterministic {
                    grid: vec![0.0, 1.0],
                    slices: vec![s],
                },
                terminal: SymMat::identity(1),
            }
        }
        BenchmarkId::TwoRegimeSymmetric => {
            let s = two_regime_slice(0.2, 1.0);
            LqProblem {
                n: 2,
                m: 1,
                d: 1,
                horizon: 1.0,
                x0: DVector::from_column_slice(&[1.0, -0.5]),
                delta: DEFAULT_DELTA,
                r0: 0,
                marks: MarkSpace::new(&[1.5, 0.5]),
                env: CoefficientEnv::RegimeSwitching {
                    grid: vec![0.0, 1.0],
                    regimes: vec![vec![s.clone()], vec![s]],
                    jump_map: vec![vec![1, 0], vec![0, 1]],
                },
                terminal: SymMat::identity(2),
            }
        }
        BenchmarkId::TwoRegimeSwitching => {
            let calm = two_regime_slice(0.1, 0.5);
            let mut stressed = two_regime_slice(0.6, 2.0);
            stressed.a[(0, 1)] = 0.8;
            stressed.c[0][(1, 1)] = 0.5;
            stressed.e[0][(0, 0)] = -0.4;
            LqProblem {
                n: 2,
                m: 1,
                d: 1,
                horizon: 1.0,
                x0: DVector::from_column_slice(&[1.0, -0.5]),
                delta: DEFAULT_DELTA,
                r0: 0,
                marks: MarkSpace::new(&[1.5, 0.5]),
                env: CoefficientEnv::RegimeSwitching {
                    grid: vec![0.0, 1.0],
                    regimes: vec![vec![calm], vec![stressed]],
                    jump_map: vec![vec![1, 0], vec![0, 1]],
                },
                terminal: SymMat::from_diagonal(&[1.0, 2.0]),
            }
        }
        BenchmarkId::RandomPsd {
            seed,
            n,
            m,
            d,
            k,
            regimes,
        } => random_psd(seed, n, m, d, k, regimes),
    }
}

fn two_regime_slice(drift: f64, q_scale: f64) -> CoefficientSlice {
    let mut s = CoefficientSlice::zeros(2, 1, 1, 2);
    s.a = DMatrix::from_row_slice(2, 2, &[drift, 1.0, -0.3, 0.0]);
    s.b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    s.c[0] = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.1]);
    s.d[0] = DMatrix::from_row_slice(2, 1, &[0.1, 0.3]);
    s.e[0] = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, -0.2]);
    s.e[1] = DMatrix::from_row_slice(2, 2, &[-0.1, 0.1, 0.0, 0.1]);
    s.q = SymMat::from_diagonal(&[q_scale, 0.5 * q_scale]);
    s.n = SymMat::identity(1);
    s
}

fn random_psd(seed: u64, n: usize, m: usize, d: usize, k: usize, regimes: usize) -> LqProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mat = |r: usize, c: usize, s: f64, rng: &mut ChaCha8Rng| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-s..s));
    let gram = |g: DMatrix<f64>, scale: f64| SymMat::new(&g * g.transpose() * scale).unwrap();
    let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
    let regime_mode = regimes > 1;
    let intervals = 2;
    let mut tables = Vec::with_capacity(regimes);
    for _ in 0..regimes {
        let mut table = Vec::with_capacity(intervals);
        for _ in 0..intervals {
            let f = if regime_mode {
                vec![DMatrix::zeros(n, m); k]
            } else {
                (0..k).map(|_| mat(n, m, 0.3, &mut rng)).collect()
            };
            let q = gram(mat(n, n, 1.0, &mut rng), 1.0 / n as f64);
            let nn = gram(mat(m, m, 1.0, &mut rng), 1.0 / m as f64).add(&SymMat::scaled_identity(m, 0.5));
            table.push(CoefficientSlice {
                a: mat(n, n, 0.5, &mut rng),
                b: mat(n, m, 1.0, &mut rng),
                c: (0..d).map(|_| mat(n, n, 0.3, &mut rng)).collect(),
                d: (0..d).map(|_| mat(n, m, 0.3, &mut rng)).collect(),
                e: (0..k).map(|_| mat(n, n, 0.3, &mut rng)).collect(),
                f,
                q,
                n: nn,
            });
        }
        tables.push(table);
    }
    let terminal = gram(mat(n, n, 1.0, &mut rng), 1.0 / n as f64);
    let x0 = DVector::from_fn(n, |_, _| {
        let v: f64 = rng.gen_range(0.25..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let grid = vec![0.0, 0.5, 1.0];
    let env = if regime_mode {
        let jump_map = (0..regimes)
            .map(|_| (0..k).map(|_| rng.gen_range(0..regimes)).collect())
            .collect();
        CoefficientEnv::RegimeSwitching {
            grid,
            regimes: tables,
            jump_map,
        }
    } else {
        CoefficientEnv::Deterministic {
            grid,
            slices: tables.pop().unwrap(),
        }
    };
    LqProblem {
        n,
        m,
        d,
        horizon: 1.0,
        x0,
        delta: DEFAULT_DELTA,
        r0: 0,
        marks: MarkSpace::new(&weights),
        env,
        terminal,
    }
}

mod rowmajor {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 {
            return Err("matrix must have at least one row and one column".into());
        }
        if let Some(i) = rows.iter().position(|row| row.len() != c) {
            return Err(format!(
                "ragged matrix: row {i} has {} entries, expected {c}",
                rows[i].len()
            ));
        }
        Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        from_rows(Vec::<Vec<f64>>::deserialize(d)?).map_err(D::Error::custom)
    }
}

mod rowmajor_list {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(super::rowmajor::to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        Vec::<Vec<Vec<f64>>>::deserialize(d)?
            .into_iter()
            .enumerate()
            .map(|(i, rows)| super::rowmajor::from_rows(rows).map_err(|e| D::Error::custom(format!("block {i}: {e}"))))
            .collect()
    }
}

mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}
