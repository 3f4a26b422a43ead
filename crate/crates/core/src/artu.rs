//! ARTU coefficient solver and the precomputed coefficient lattice.
//!
//! The forecaster `x̂(t+h) = S·y(t) − P·y(t−h) + (1+P−S)·ȳ` with `S = α+K`
//! and `P = α·K` is optimal in mean square when `(α, K)` is a stationary
//! point of the normalized objective [`mse_value`]. Its gradient is the
//! pair of quadratic equations returned by [`residuals`], which are solved
//! by multi-start Levenberg–Marquardt. Only strict local minima (positive
//! definite Hessian) with `|α| < 1` are admissible; among those the lowest
//! objective wins.
//!
//! Variables are ordered `(K, α)` wherever a vector or matrix is involved,
//! matching the row order of the two equations.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::scalar::Scalar;

/// Restart count used by the reference grids.
pub const DEFAULT_RESTARTS: usize = 100;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_GRID_STEP: f64 = 0.01;
/// Objective differences below this are treated as ties.
pub const MSE_TIE: f64 = 1e-10;
pub const DEFAULT_MASTER_SEED: u64 = 20_210_101;

#[derive(Debug, Error)]
pub enum ArtuError {
    #[error("invalid ARTU inputs: {0}")]
    InvalidInputs(String),
    #[error("no admissible solution for R={r}, rho1={rho1}, rho2={rho2}")]
    NoAdmissibleSolution { r: f64, rho1: f64, rho2: f64 },
    #[error("grid step {0} does not divide [-1, 1]")]
    InvalidStep(f64),
    #[error("query ({rho1}, {rho2}) outside grid")]
    OutsideGrid { rho1: f64, rho2: f64 },
    #[error("grid neighbour of ({rho1}, {rho2}) is unsolved")]
    NeighborUnsolved { rho1: f64, rho2: f64 },
    #[error("grid file line {line}: {reason}")]
    GridFormat { line: usize, reason: String },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Noise ratio and the two autocorrelations defining one ARTU problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArtuInputs<T> {
    r: T,
    rho1: T,
    rho2: T,
}

impl<T: Scalar> ArtuInputs<T> {
    pub fn new(r: T, rho1: T, rho2: T) -> Result<Self, ArtuError> {
        if !(r >= T::zero() && r <= T::one()) {
            return Err(ArtuError::InvalidInputs(format!("R = {r} not in [0, 1]")));
        }
        for (name, rho) in [("rho1", rho1), ("rho2", rho2)] {
            if !(rho.abs() < T::one()) {
                return Err(ArtuInputs::<T>::bad(name, rho));
            }
        }
        Ok(Self { r, rho1, rho2 })
    }

    fn bad(name: &str, rho: T) -> ArtuError {
        ArtuError::InvalidInputs(format!("{name} = {rho} not in (-1, 1)"))
    }

    pub fn r(&self) -> T {
        self.r
    }

    pub fn rho1(&self) -> T {
        self.rho1
    }

    pub fn rho2(&self) -> T {
        self.rho2
    }

    /// `ρ(h)² − ρ(2h)`: zero exactly when the autocorrelation decays
    /// exponentially, where the gain vanishes and ARTU reduces to CLIPER.
    pub fn degeneracy(&self) -> T {
        self.rho1 * self.rho1 - self.rho2
    }
}

/// Solved coefficients for one [`ArtuInputs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArtuSolution<T> {
    pub alpha: T,
    pub k: T,
    /// `α + K`
    pub s: T,
    /// `α · K`
    pub p: T,
    pub mse: T,
    pub residual_norm: T,
    pub degeneracy: T,
}

impl<T: Scalar> ArtuSolution<T> {
    fn at(alpha: T, k: T, inputs: &ArtuInputs<T>) -> Self {
        let [r1, r2] = residuals(alpha, k, inputs);
        Self {
            alpha,
            k,
            s: alpha + k,
            p: alpha * k,
            mse: mse_value(alpha, k, inputs),
            residual_norm: (r1 * r1 + r2 * r2).sqrt(),
            degeneracy: inputs.degeneracy(),
        }
    }

    /// Weight on the climatological mean, `1 + P − S`.
    pub fn mean_weight(&self) -> T {
        T::one() + self.p - self.s
    }
}

/// Gradient of [`mse_value`] with respect to `(K, α)`.
pub fn residuals<T: Scalar>(alpha: T, k: T, inputs: &ArtuInputs<T>) -> [T; 2] {
    let ArtuInputs { r, rho1, rho2 } = *inputs;
    let one = T::one();
    let two = T::lit(2.0);
    let r1 = k * (one + r) + alpha * (one + rho2) - two * k * alpha * rho1 - alpha * alpha * rho1
        + k * alpha * alpha
        - rho1;
    let r2 = k * (one + rho2) - two * k * alpha * rho1 + alpha - k * k * rho1 + k * k * alpha - rho1;
    [r1, r2]
}

/// Jacobian of [`residuals`]; rows are the two equations, columns `(K, α)`.
/// It is the Hessian of the objective and therefore symmetric.
pub fn jacobian<T: Scalar>(alpha: T, k: T, inputs: &ArtuInputs<T>) -> [[T; 2]; 2] {
    let ArtuInputs { r, rho1, rho2 } = *inputs;
    let one = T::one();
    let two = T::lit(2.0);
    let off = rho2 + two * k * alpha - two * k * rho1 - two * alpha * rho1 + one;
    [
        [alpha * alpha - two * rho1 * alpha + one + r, off],
        [off, k * k - two * k * rho1 + one],
    ]
}

/// Integrated objective with the additive constant fixed to 0. Only
/// differences between values are meaningful.
pub fn mse_value<T: Scalar>(alpha: T, k: T, inputs: &ArtuInputs<T>) -> T {
    let ArtuInputs { r, rho1, rho2 } = *inputs;
    let half = T::lit(0.5);
    let one = T::one();
    k * k * (r * half + half) - k * rho1 - alpha * (k * k * rho1 - k * (rho2 + one) + rho1)
        + alpha * alpha * (k * k * half - k * rho1 + half)
}

/// Hessian of the objective by central differences of [`residuals`].
pub fn fd_hessian<T: Scalar>(alpha: T, k: T, inputs: &ArtuInputs<T>, step: T) -> [[T; 2]; 2] {
    let two = T::lit(2.0);
    let [p1k, p2k] = residuals(alpha, k + step, inputs);
    let [m1k, m2k] = residuals(alpha, k - step, inputs);
    let [p1a, p2a] = residuals(alpha + step, k, inputs);
    let [m1a, m2a] = residuals(alpha - step, k, inputs);
    let d_kk = (p1k - m1k) / (two * step);
    let d_ka = (p1a - m1a) / (two * step);
    let d_ak = (p2k - m2k) / (two * step);
    let d_aa = (p2a - m2a) / (two * step);
    let off = (d_ka + d_ak) / two;
    [[d_kk, off], [off, d_aa]]
}

/// Knobs for [`solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig<T> {
    /// Random initializations drawn uniformly in `[-1, 1]²`, after one warm
    /// start at the exponential-decay root `(α, K) = (ρ(h), 0)`.
    pub restarts: usize,
    pub max_iter: usize,
    /// Residual norm below which a run counts as converged.
    pub tol: T,
    /// Finite-difference step for the second-order test.
    pub fd_step: T,
    pub seed: u64,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
            tol: T::default_solver_tol(),
            fd_step: T::epsilon().sqrt().max(T::lit(1e-6)),
            seed: DEFAULT_MASTER_SEED,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// Hessian determinants within this band are numerically zero.
    fn degenerate_band(&self) -> T {
        (T::lit(10.0) * T::epsilon() / self.fd_step).max(T::lit(1e-8))
    }
}

/// Second-order admissibility of a stationary point.
///
/// Requires `∂²/∂K² > 0` and a positive Hessian determinant. When the
/// determinant is numerically zero the test is inconclusive and the point is
/// accepted only if the objective does not decrease anywhere on a small ring
/// around it.
pub fn is_strict_minimum<T: Scalar>(alpha: T, k: T, inputs: &ArtuInputs<T>, cfg: &SolverConfig<T>) -> bool {
    let h = fd_hessian(alpha, k, inputs, cfg.fd_step);
    if !(h[0][0] > T::zero()) {
        return false;
    }
    let det = h[0][0] * h[1][1] - h[0][1] * h[0][1];
    let band = cfg.degenerate_band();
    if det > band {
        return true;
    }
    if det < -band {
        return false;
    }
    let centre = mse_value(alpha, k, inputs);
    let radius = T::lit(1e-3);
    let slack = T::epsilon() * T::lit(16.0) * (T::one() + centre.abs());
    (0..16).all(|i| {
        let theta = T::lit(i as f64 * std::f64::consts::TAU / 16.0);
        let m = mse_value(alpha + radius * theta.cos(), k + radius * theta.sin(), inputs);
        m >= centre - slack
    })
}

fn solve2<T: Scalar>(m: [[T; 2]; 2], b: [T; 2]) -> Option<[T; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if !det.is_normal() {
        return None;
    }
    Some([
        (b[0] * m[1][1] - b[1] * m[0][1]) / det,
        (m[0][0] * b[1] - m[1][0] * b[0]) / det,
    ])
}

/// One Levenberg–Marquardt descent from `(alpha, k)`. Iteration continues
/// past the tolerance until no step reduces the residual, so roots are
/// polished to working precision. Returns the final `(α, K)` and residual norm.
fn levenberg_marquardt<T: Scalar>(
    alpha0: T,
    k0: T,
    inputs: &ArtuInputs<T>,
    cfg: &SolverConfig<T>,
) -> (T, T, T) {
    let (mut alpha, mut k) = (alpha0, k0);
    let [mut f1, mut f2] = residuals(alpha, k, inputs);
    let mut cost = f1 * f1 + f2 * f2;
    let mut lambda = T::lit(1e-3);
    let lambda_min = T::lit(1e-15);
    let lambda_max = T::lit(1e16);
    let tiny = T::lit(1e-12);
    let ten = T::lit(10.0);

    for _ in 0..cfg.max_iter {
        if cost.is_zero() {
            break;
        }
        let j = jacobian(alpha, k, inputs);
        // JᵀJ and Jᵀf
        let a00 = j[0][0] * j[0][0] + j[1][0] * j[1][0];
        let a01 = j[0][0] * j[0][1] + j[1][0] * j[1][1];
        let a11 = j[0][1] * j[0][1] + j[1][1] * j[1][1];
        let g0 = j[0][0] * f1 + j[1][0] * f2;
        let g1 = j[0][1] * f1 + j[1][1] * f2;

        let mut accepted = None;
        while lambda <= lambda_max {
            let m = [
                [a00 + lambda * a00.max(tiny), a01],
                [a01, a11 + lambda * a11.max(tiny)],
            ];
            let Some([dk, da]) = solve2(m, [-g0, -g1]) else {
                lambda = lambda * ten;
                continue;
            };
            let (kn, an) = (k + dk, alpha + da);
            let [n1, n2] = residuals(an, kn, inputs);
            let cn = n1 * n1 + n2 * n2;
            if cn < cost {
                accepted = Some((an, kn, n1, n2, cn, dk.abs().max(da.abs())));
                lambda = (lambda / ten).max(lambda_min);
                break;
            }
            lambda = lambda * ten;
        }
        let Some((an, kn, n1, n2, cn, step)) = accepted else {
            break;
        };
        alpha = an;
        k = kn;
        f1 = n1;
        f2 = n2;
        cost = cn;
        if !alpha.is_finite() || !k.is_finite() {
            break;
        }
        if cost.sqrt() < cfg.tol && step <= T::epsilon() * (T::one() + alpha.abs() + k.abs()) {
            break;
        }
    }
    (alpha, k, cost.sqrt())
}

/// Solve for the admissible `(α, K)` of minimum objective.
///
/// Deterministic in `(inputs, cfg)`. Ties within [`MSE_TIE`] go to the root
/// with the smaller `|K|`.
pub fn solve<T: Scalar>(inputs: &ArtuInputs<T>, cfg: &SolverConfig<T>) -> Result<ArtuSolution<T>, ArtuError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let warm = std::iter::once((inputs.rho1, T::zero()));
    let random = (0..cfg.restarts).map(|_| {
        let a: f64 = rng.random_range(-1.0..=1.0);
        let k: f64 = rng.random_range(-1.0..=1.0);
        (T::lit(a), T::lit(k))
    });
    let starts: Vec<(T, T)> = warm.chain(random).collect();

    let tie = T::lit(MSE_TIE);
    let mut best: Option<ArtuSolution<T>> = None;
    for (a0, k0) in starts {
        let (alpha, k, norm) = levenberg_marquardt(a0, k0, inputs, cfg);
        if !(norm < cfg.tol) || !(alpha.abs() < T::one()) || !k.is_finite() {
            continue;
        }
        if !is_strict_minimum(alpha, k, inputs, cfg) {
            continue;
        }
        let cand = ArtuSolution::at(alpha, k, inputs);
        best = match best {
            None => Some(cand),
            Some(b) if cand.mse < b.mse - tie => Some(cand),
            Some(b) if (cand.mse - b.mse).abs() <= tie && cand.k.abs() < b.k.abs() => Some(cand),
            keep => keep,
        };
    }
    best.ok_or_else(|| ArtuError::NoAdmissibleSolution {
        r: inputs.r.to_f64_lossy(),
        rho1: inputs.rho1.to_f64_lossy(),
        rho2: inputs.rho2.to_f64_lossy(),
    })
}

/// Deterministic per-cell seed derived from the master seed (SplitMix64 finalizer).
pub fn cell_seed(master: u64, i: usize, j: usize) -> u64 {
    let mut z = master
        ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lattice of ARTU solutions over `ρ(h) × ρ(2h)` at a fixed noise ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientGrid<T> {
    r: T,
    step: T,
    rho1_axis: Vec<T>,
    rho2_axis: Vec<T>,
    // row-major: rho1 index major
    alpha: Vec<T>,
    k: Vec<T>,
    mse: Vec<T>,
    solved: Vec<bool>,
}

fn axis_len(step: f64) -> Result<usize, ArtuError> {
    if !(step > 0.0 && step <= 2.0) {
        return Err(ArtuError::InvalidStep(step));
    }
    let cells = (2.0 / step).round();
    if (cells * step - 2.0).abs() > 1e-9 {
        return Err(ArtuError::InvalidStep(step));
    }
    Ok(cells as usize + 1)
}

fn axis<T: Scalar>(len: usize) -> Vec<T> {
    let cells = (len - 1) as f64;
    (0..len)
        .map(|i| T::lit((2.0 * i as f64 - cells) / cells))
        .collect()
}

/// Sweep the `[-1, 1]²` lattice at `step`, solving every node.
///
/// Cell `(i, j)` uses [`cell_seed`]`(cfg.seed, i, j)`, so the grid is
/// identical whether cells run serially or in parallel. Nodes with
/// `|ρ| = 1` lie outside the solver's domain and stay unsolved.
pub fn generate_grid<T: Scalar>(
    r: T,
    step: f64,
    cfg: &SolverConfig<T>,
    parallel: bool,
) -> Result<CoefficientGrid<T>, ArtuError> {
    if !(r >= T::zero() && r <= T::one()) {
        return Err(ArtuError::InvalidInputs(format!("R = {r} not in [0, 1]")));
    }
    let n = axis_len(step)?;
    let ax: Vec<T> = axis(n);
    let cell = |idx: usize| -> Option<ArtuSolution<T>> {
        let (i, j) = (idx / n, idx % n);
        let inputs = ArtuInputs::new(r, ax[i], ax[j]).ok()?;
        solve(&inputs, &cfg.with_seed(cell_seed(cfg.seed, i, j))).ok()
    };
    let results: Vec<Option<ArtuSolution<T>>> = if parallel {
        (0..n * n).into_par_iter().map(cell).collect()
    } else {
        (0..n * n).map(cell).collect()
    };
    let mut grid = CoefficientGrid {
        r,
        step: T::lit(step),
        rho1_axis: ax.clone(),
        rho2_axis: ax,
        alpha: Vec::with_capacity(n * n),
        k: Vec::with_capacity(n * n),
        mse: Vec::with_capacity(n * n),
        solved: Vec::with_capacity(n * n),
    };
    for res in results {
        match res {
            Some(s) => {
                grid.alpha.push(s.alpha);
                grid.k.push(s.k);
                grid.mse.push(s.mse);
                grid.solved.push(true);
            }
            None => {
                grid.alpha.push(T::nan());
                grid.k.push(T::nan());
                grid.mse.push(T::nan());
                grid.solved.push(false);
            }
        }
    }
    Ok(grid)
}

/// Solve-rate summary of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveRate {
    pub total: usize,
    pub solved: usize,
    /// Cells inside the admissible correlation region (`ρ(2h) ≥ 2ρ(h)² − 1`)
    /// and at least one step away from its border and from `|ρ| = 1`.
    pub interior: usize,
    pub interior_solved: usize,
}

impl SolveRate {
    pub fn fraction(&self) -> f64 {
        self.solved as f64 / self.total.max(1) as f64
    }

    pub fn interior_fraction(&self) -> f64 {
        self.interior_solved as f64 / self.interior.max(1) as f64
    }
}

impl<T: Scalar> CoefficientGrid<T> {
    pub fn r(&self) -> T {
        self.r
    }

    pub fn step(&self) -> T {
        self.step
    }

    pub fn rho1_axis(&self) -> &[T] {
        &self.rho1_axis
    }

    pub fn rho2_axis(&self) -> &[T] {
        &self.rho2_axis
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rho1_axis.len(), self.rho2_axis.len())
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.rho2_axis.len() + j
    }

    /// `(α, K)` at node `(i, j)` if solved.
    pub fn node(&self, i: usize, j: usize) -> Option<(T, T)> {
        let id = self.idx(i, j);
        self.solved[id].then(|| (self.alpha[id], self.k[id]))
    }

    pub fn node_mse(&self, i: usize, j: usize) -> Option<T> {
        let id = self.idx(i, j);
        self.solved[id].then(|| self.mse[id])
    }

    pub fn is_solved(&self, i: usize, j: usize) -> bool {
        self.solved[self.idx(i, j)]
    }

    /// Cells near `ρ(h) = 0` or the parabola `ρ(2h) = ρ(h)²`, where root
    /// families meet and the selected branch may switch.
    pub fn is_boundary_cell(&self, i: usize, j: usize) -> bool {
        let (r1, r2) = (self.rho1_axis[i], self.rho2_axis[j]);
        r1.abs() < self.step || (r1 * r1 - r2).abs() < self.step
    }

    pub fn solve_rate(&self) -> SolveRate {
        let (n1, n2) = self.dims();
        let mut rate = SolveRate {
            total: n1 * n2,
            solved: 0,
            interior: 0,
            interior_solved: 0,
        };
        let two = T::lit(2.0);
        let margin = self.step * T::lit(0.999);
        for i in 0..n1 {
            for j in 0..n2 {
                let ok = self.is_solved(i, j);
                rate.solved += ok as usize;
                let (r1, r2) = (self.rho1_axis[i], self.rho2_axis[j]);
                let inside = r1.abs() <= T::one() - margin
                    && r2.abs() <= T::one() - margin
                    && r2 - (two * r1 * r1 - T::one()) >= margin;
                if inside {
                    rate.interior += 1;
                    rate.interior_solved += ok as usize;
                }
            }
        }
        rate
    }

    fn locate(axis: &[T], x: T) -> Option<(usize, T)> {
        let (lo, hi) = (axis[0], axis[axis.len() - 1]);
        if !(x >= lo && x <= hi) {
            return None;
        }
        let cells = axis.len() - 1;
        let pos = ((x - lo) / (hi - lo) * T::from_count(cells)).floor();
        let mut i = pos.to_usize().unwrap_or(0).min(cells.saturating_sub(1));
        // guard against rounding at node boundaries
        while i > 0 && x < axis[i] {
            i -= 1;
        }
        while i + 1 < cells && x >= axis[i + 1] {
            i += 1;
        }
        if x == axis[i] {
            return Some((i, T::zero()));
        }
        let t = (x - axis[i]) / (axis[i + 1] - axis[i]);
        Some((i, t))
    }

    /// Bilinear interpolation of `α` and `K` at `(rho1, rho2)`.
    ///
    /// Only corners with non-zero weight must be solved, so a query exactly
    /// on a solved node always succeeds and returns the node values.
    pub fn interpolate(&self, rho1: T, rho2: T) -> Result<(T, T), ArtuError> {
        let outside = || ArtuError::OutsideGrid {
            rho1: rho1.to_f64_lossy(),
            rho2: rho2.to_f64_lossy(),
        };
        let (i, tx) = Self::locate(&self.rho1_axis, rho1).ok_or_else(outside)?;
        let (j, ty) = Self::locate(&self.rho2_axis, rho2).ok_or_else(outside)?;
        let one = T::one();
        let corners = [
            (i, j, (one - tx) * (one - ty)),
            (i + 1, j, tx * (one - ty)),
            (i, j + 1, (one - tx) * ty),
            (i + 1, j + 1, tx * ty),
        ];
        let mut alpha = T::zero();
        let mut k = T::zero();
        for (ci, cj, w) in corners {
            if w.is_zero() {
                continue;
            }
            let (a, kk) = self.node(ci, cj).ok_or(ArtuError::NeighborUnsolved {
                rho1: rho1.to_f64_lossy(),
                rho2: rho2.to_f64_lossy(),
            })?;
            alpha = alpha + w * a;
            k = k + w * kk;
        }
        Ok((alpha, k))
    }

    /// Write in the `artu-grid v1` CSV format.
    pub fn write<W: Write>(&self, mut out: W) -> Result<(), ArtuError> {
        writeln!(out, "# artu-grid v1, R={}, step={}", self.r, self.step)?;
        writeln!(out, "rho1,rho2,alpha,K,mse,solved")?;
        let (n1, n2) = self.dims();
        let mut line = String::new();
        for i in 0..n1 {
            for j in 0..n2 {
                let id = self.idx(i, j);
                line.clear();
                write!(
                    line,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                    self.rho1_axis[i].to_f64_lossy(),
                    self.rho2_axis[j].to_f64_lossy(),
                    self.alpha[id].to_f64_lossy(),
                    self.k[id].to_f64_lossy(),
                    self.mse[id].to_f64_lossy(),
                    u8::from(self.solved[id]),
                )
                .expect("writing to String");
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }

    /// Read a grid written by [`CoefficientGrid::write`].
    pub fn read<R: BufRead>(input: R) -> Result<Self, ArtuError> {
        let fmt = |line: usize, reason: &str| ArtuError::GridFormat {
            line,
            reason: reason.to_string(),
        };
        let mut lines = input.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| fmt(1, "empty file"))?;
        let header = header?;
        let rest = header
            .strip_prefix("# artu-grid v1,")
            .ok_or_else(|| fmt(1, "missing `# artu-grid v1` header"))?;
        let mut r = None;
        let mut step = None;
        for part in rest.split(',') {
            let part = part.trim();
            if let Some(v) = part.strip_prefix("R=") {
                r = v.parse::<f64>().ok();
            } else if let Some(v) = part.strip_prefix("step=") {
                step = v.parse::<f64>().ok();
            }
        }
        let r = r.ok_or_else(|| fmt(1, "missing R"))?;
        let step = step.ok_or_else(|| fmt(1, "missing step"))?;
        let n = axis_len(step)?;

        let mut rows: Vec<[f64; 5]> = Vec::with_capacity(n * n);
        let mut solved = Vec::with_capacity(n * n);
        for (no, line) in lines {
            let line = line?;
            let line_no = no + 1;
            if line.trim().is_empty() || line.starts_with("rho1") {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 6 {
                return Err(fmt(line_no, "expected 6 columns"));
            }
            let mut row = [0.0; 5];
            for (slot, raw) in row.iter_mut().zip(&cols[..5]) {
                *slot = raw.parse().map_err(|_| fmt(line_no, "bad number"))?;
            }
            rows.push(row);
            solved.push(match cols[5] {
                "1" => true,
                "0" => false,
                _ => return Err(fmt(line_no, "solved must be 0 or 1")),
            });
        }
        if rows.len() != n * n {
            return Err(fmt(0, &format!("expected {} rows, found {}", n * n, rows.len())));
        }
        let rho1_axis: Vec<T> = (0..n).map(|i| T::lit(rows[i * n][0])).collect();
        let rho2_axis: Vec<T> = (0..n).map(|j| T::lit(rows[j][1])).collect();
        for (id, row) in rows.iter().enumerate() {
            let (i, j) = (id / n, id % n);
            if T::lit(row[0]) != rho1_axis[i] || T::lit(row[1]) != rho2_axis[j] {
                return Err(fmt(id + 3, "rows not in rho1-major ascending order"));
            }
        }
        Ok(Self {
            r: T::lit(r),
            step: T::lit(step),
            rho1_axis,
            rho2_axis,
            alpha: rows.iter().map(|x| T::lit(x[2])).collect(),
            k: rows.iter().map(|x| T::lit(x[3])).collect(),
            mse: rows.iter().map(|x| T::lit(x[4])).collect(),
            solved,
        })
    }
}

/// Where [`crate::models`] obtains ARTU coefficients.
#[derive(Debug, Clone)]
pub enum CoefficientSource<T> {
    /// Solve directly for each `(ρ(h), ρ(2h))`.
    Solve(SolverConfig<T>),
    /// Interpolate a precomputed grid, solving directly where it has holes.
    Grid(CoefficientGrid<T>, SolverConfig<T>),
}

impl<T: Scalar> Default for CoefficientSource<T> {
    fn default() -> Self {
        CoefficientSource::Solve(SolverConfig::default())
    }
}

impl<T: Scalar> CoefficientSource<T> {
    pub fn coefficients(&self, inputs: &ArtuInputs<T>) -> Result<ArtuSolution<T>, ArtuError> {
        match self {
            CoefficientSource::Solve(cfg) => solve(inputs, cfg),
            CoefficientSource::Grid(grid, cfg) => match grid.interpolate(inputs.rho1, inputs.rho2) {
                Ok((alpha, k)) => Ok(ArtuSolution::at(alpha, k, inputs)),
                Err(ArtuError::NeighborUnsolved { .. }) => solve(inputs, cfg),
                Err(e) => Err(e),
            },
        }
    }
}

/// Solution record for explicit `(α, K)`, e.g. to pin the gain to zero.
pub fn solution_from_coefficients<T: Scalar>(alpha: T, k: T, inputs: &ArtuInputs<T>) -> ArtuSolution<T> {
    ArtuSolution::at(alpha, k, inputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inp(r: f64, rho1: f64, rho2: f64) -> ArtuInputs<f64> {
        ArtuInputs::new(r, rho1, rho2).unwrap()
    }

    #[test]
    fn residuals_at_origin() {
        for (r, rho1, rho2) in [(0.0, 0.4, 0.3), (0.1, -0.2, 0.7)] {
            assert_eq!(residuals(0.0, 0.0, &inp(r, rho1, rho2)), [-rho1, -rho1]);
        }
    }

    #[test]
    fn residuals_vanish_on_parabola() {
        let rho1: f64 = 0.37;
        let [a, b] = residuals(rho1, 0.0, &inp(0.05, rho1, rho1 * rho1));
        assert!(a.abs() < 1e-15 && b.abs() < 1e-15);
    }

    #[test]
    fn residuals_small_at_rounded_reference_coefficients() {
        // two-decimal rounding of the coefficients alone moves r2 by ~7e-3
        for (r, alpha, k) in [(0.01, 0.60, -0.27), (0.05, 0.59, -0.25), (0.10, 0.58, -0.23)] {
            let [a, b] = residuals(alpha, k, &inp(r, 0.4, 0.3));
            assert!(a.abs() < 1e-2 && b.abs() < 1e-2, "{a} {b}");
        }
    }

    #[test]
    fn jacobian_at_origin() {
        let j = jacobian(0.0, 0.0, &inp(0.0, 0.4, 0.3));
        assert_eq!(j, [[1.0, 1.3], [1.3, 1.0]]);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let x = inp(0.05, 0.4, 0.3);
        let (alpha, k) = (0.3, -0.1);
        let h = 1e-6;
        let j = jacobian(alpha, k, &x);
        let dk: Vec<f64> = residuals(alpha, k + h, &x)
            .iter()
            .zip(residuals(alpha, k - h, &x))
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect();
        let da: Vec<f64> = residuals(alpha + h, k, &x)
            .iter()
            .zip(residuals(alpha - h, k, &x))
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect();
        for row in 0..2 {
            assert!((j[row][0] - dk[row]).abs() < 1e-6);
            assert!((j[row][1] - da[row]).abs() < 1e-6);
        }
        assert_eq!(j[0][1], j[1][0]);
    }

    #[test]
    fn mse_reference_points() {
        let x = inp(0.05, 0.4, 0.3);
        assert_eq!(mse_value(0.0, 0.0, &x), 0.0);
        assert!((mse_value(0.4, 0.0, &x) + 0.08).abs() < 1e-15);
    }

    #[test]
    fn inputs_validated() {
        assert!(ArtuInputs::new(-0.1, 0.0, 0.0).is_err());
        assert!(ArtuInputs::new(0.0, 1.0, 0.0).is_err());
        assert!(ArtuInputs::new(0.0, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn solve_reference_triple_r005() {
        let s = solve(&inp(0.05, 0.4, 0.3), &SolverConfig::default()).unwrap();
        assert!((s.alpha - 0.59).abs() <= 0.01 && (s.k + 0.25).abs() <= 0.01, "{s:?}");
        assert!(s.residual_norm < 1e-10);
        assert_eq!(s.s, s.alpha + s.k);
        assert_eq!(s.p, s.alpha * s.k);
    }

    #[test]
    fn solve_white_noise_limit() {
        for r in [0.0, 0.01, 0.05, 0.1] {
            let s = solve(&inp(r, 0.0, 0.0), &SolverConfig::default()).unwrap();
            assert!(s.alpha.abs() < 1e-9 && s.k.abs() < 1e-9, "R={r}: {s:?}");
        }
    }

    #[test]
    fn solve_exponential_decay_gives_zero_gain() {
        let s = solve(&inp(0.07, 0.5, 0.25), &SolverConfig::default()).unwrap();
        assert!((s.alpha - 0.5).abs() < 1e-6 && s.k.abs() < 1e-6);
        assert_eq!(s.degeneracy, 0.0);
    }

    #[test]
    fn solve_is_deterministic() {
        let cfg = SolverConfig::default().with_seed(99);
        let a = solve(&inp(0.03, 0.6, 0.2), &cfg).unwrap();
        let b = solve(&inp(0.03, 0.6, 0.2), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn solve_outside_correlation_region_fails() {
        // not a valid autocorrelation pair: the objective is unbounded below
        let err = solve(&inp(0.05, 0.9, -0.9), &SolverConfig::default());
        assert!(matches!(err, Err(ArtuError::NoAdmissibleSolution { .. })));
    }

    #[test]
    fn f32_solver_reaches_reference_values() {
        let x = ArtuInputs::<f32>::new(0.05, 0.4, 0.3).unwrap();
        let s = solve(&x, &SolverConfig::default()).unwrap();
        assert!((s.alpha - 0.59).abs() <= 0.01 && (s.k + 0.25).abs() <= 0.01, "{s:?}");
    }

    #[test]
    fn grid_axes_and_seeds() {
        assert_eq!(axis_len(0.1).unwrap(), 21);
        assert_eq!(axis_len(0.01).unwrap(), 201);
        assert!(axis_len(0.3).is_err());
        let ax: Vec<f64> = axis(201);
        assert_eq!(ax[140], 0.4);
        assert_eq!(ax[130], 0.3);
        assert_eq!(ax[100], 0.0);
        assert_ne!(cell_seed(1, 2, 3), cell_seed(1, 3, 2));
    }

    #[test]
    fn interpolation_midpoint_and_nodes() {
        let mut g = CoefficientGrid::<f64> {
            r: 0.0,
            step: 1.0,
            rho1_axis: vec![-1.0, 0.0, 1.0],
            rho2_axis: vec![-1.0, 0.0, 1.0],
            alpha: vec![0.0; 9],
            k: vec![0.0; 9],
            mse: vec![0.0; 9],
            solved: vec![true; 9],
        };
        // alpha = 0 on rho1 = -1 row, 1 on rho1 = 0 row
        for j in 0..3 {
            g.alpha[3 + j] = 1.0;
            g.k[j] = 2.0;
        }
        assert_eq!(g.interpolate(-0.5, -0.5).unwrap(), (0.5, 1.0));
        assert_eq!(g.interpolate(0.0, 0.0).unwrap(), (1.0, 0.0));
        assert!(matches!(g.interpolate(1.5, 0.0), Err(ArtuError::OutsideGrid { .. })));
        g.solved[0] = false;
        assert!(matches!(g.interpolate(-0.5, -0.5), Err(ArtuError::NeighborUnsolved { .. })));
        // a node query needs only its own cell
        assert_eq!(g.interpolate(0.0, -1.0).unwrap(), (1.0, 0.0));
    }

    #[test]
    fn grid_file_rejects_garbage() {
        let bad = "# artu-grid v1, R=0.05, step=1\nrho1,rho2,alpha,K,mse,solved\n-1,-1,0,0,0,1\n";
        assert!(matches!(
            CoefficientGrid::<f64>::read(bad.as_bytes()),
            Err(ArtuError::GridFormat { .. })
        ));
        assert!(CoefficientGrid::<f64>::read("hello".as_bytes()).is_err());
    }
}
