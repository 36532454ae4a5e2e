//! Backward equation solver: given terminal data on simulated paths,
//! recovers the wealth process X and its volatility loading Z by
//! least-squares regression on a polynomial basis of a conditioning
//! state, stepping backward with an explicit scheme. The stored wealth
//! rows truncate each fitted conditional mean to the comparison envelope
//! of the terminal data and recenter so the truncation leaves the
//! propagated cross-path mean untouched: the regression chain itself
//! stays raw, so the guard redistributes tail extrapolation error
//! without biasing the recursion, and keeps nonnegative claims from
//! dipping on extrapolated tails. Also solves the first-order
//! variational equation
//! around a base solution and probes how fast the variational expansion
//! closes.

use crate::drivers::WealthDriver;
use crate::error::{Result, SolverError};
use crate::linalg::{cholesky, cholesky_solve, symmetric_eigen_extremes};
use crate::paths::{PathBundle, TimeGrid, CHUNK};
use crate::reduce;
use crate::scalar::Scalar;
use rayon::prelude::*;
use std::sync::Arc;

/// Regressions whose scaled normal equations are worse conditioned than
/// this are refused rather than silently smoothed over.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Magnitude at which the backward recursion is declared divergent.
const BLOWUP_LIMIT: f64 = 1e12;

/// Which conditioning variables the coupled solver regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateFeatures {
    /// Log of the linear-base adjoint, held fixed across sweeps
    /// (default; Gaussian, and for constant coefficients a sufficient
    /// statistic of the driving noise).
    AdjointState,
    /// Previous iterate of the wealth process.
    WealthProxy,
    /// The adjoint coordinate alongside the previous wealth iterate.
    Both,
}

#[derive(Debug, Clone)]
pub struct RegressionConfig {
    /// Total degree of the monomial basis.
    pub basis_degree: usize,
    pub state_features: StateFeatures,
    /// Added to the unit-RMS-scaled normal equations, so it is relative
    /// to a diagonal of about one.
    pub ridge: f64,
    /// Fixed-point passes resolving the implicit driver argument.
    pub picard_substeps: usize,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            basis_degree: 3,
            state_features: StateFeatures::AdjointState,
            ridge: 1e-8,
            picard_substeps: 2,
        }
    }
}

/// Conditioning variables, step-major: value ((k * n_state + j) * n + i)
/// for step k, coordinate j, path i.
pub struct StateProcess<S: Scalar> {
    values: Vec<S>,
    n_state: usize,
    n_steps: usize,
    n_paths: usize,
}

impl<S: Scalar> StateProcess<S> {
    pub fn new(values: Vec<S>, n_state: usize, n_steps: usize, n_paths: usize) -> Result<Self> {
        if n_state == 0 || n_paths == 0 {
            return Err(SolverError::invalid_argument(
                "state process needs at least one coordinate and one path",
            ));
        }
        if values.len() != (n_steps + 1) * n_state * n_paths {
            return Err(SolverError::invalid_argument(format!(
                "state buffer has {} values, expected {}",
                values.len(),
                (n_steps + 1) * n_state * n_paths
            )));
        }
        Ok(StateProcess {
            values,
            n_state,
            n_steps,
            n_paths,
        })
    }

    /// Brownian levels as the conditioning state.
    pub fn from_brownian(paths: &PathBundle<S>) -> Self {
        StateProcess {
            values: paths.brownian_levels(),
            n_state: paths.dim(),
            n_steps: paths.grid().n_steps(),
            n_paths: paths.n_paths(),
        }
    }

    #[inline]
    pub fn n_state(&self) -> usize {
        self.n_state
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    #[inline]
    pub fn coord(&self, step: usize, j: usize) -> &[S] {
        let base = (step * self.n_state + j) * self.n_paths;
        &self.values[base..base + self.n_paths]
    }
}

/// Per-step regression quality: relative residual of the conditional
/// expectation fit and condition number of the scaled normal equations.
#[derive(Debug, Clone, Default)]
pub struct RegressionDiagnostics {
    pub residual_norms: Vec<f64>,
    pub condition_numbers: Vec<f64>,
}

/// Discrete solution of the backward equation on a path ensemble.
///
/// X is step-major (N+1, n); Z stores per-step path-major rows
/// ((k * n + i) * d + j) so one path's loading is contiguous.
pub struct BsdeSolution<S: Scalar> {
    pub(crate) grid: TimeGrid<S>,
    pub(crate) dim: usize,
    pub(crate) n_paths: usize,
    pub(crate) x: Vec<S>,
    pub(crate) z: Vec<S>,
    pub(crate) x0: S,
    pub(crate) z0: Vec<S>,
    pub(crate) state: Arc<StateProcess<S>>,
    pub diagnostics: RegressionDiagnostics,
}

impl<S: Scalar> std::fmt::Debug for BsdeSolution<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BsdeSolution")
            .field("n_steps", &self.grid.n_steps())
            .field("dim", &self.dim)
            .field("n_paths", &self.n_paths)
            .field("x0", &self.x0)
            .field("z0", &self.z0)
            .finish_non_exhaustive()
    }
}

impl<S: Scalar> BsdeSolution<S> {
    #[inline]
    pub fn x0(&self) -> S {
        self.x0
    }

    #[inline]
    pub fn z0(&self) -> &[S] {
        &self.z0
    }

    #[inline]
    pub fn grid(&self) -> &TimeGrid<S> {
        &self.grid
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Wealth values at step k across paths.
    #[inline]
    pub fn x_at(&self, k: usize) -> &[S] {
        &self.x[k * self.n_paths..(k + 1) * self.n_paths]
    }

    /// One path's loading row at step k (d contiguous values).
    #[inline]
    pub fn z_row(&self, k: usize, path: usize) -> &[S] {
        let base = (k * self.n_paths + path) * self.dim;
        &self.z[base..base + self.dim]
    }

    /// Full loading block at step k, path-major (n, d).
    #[inline]
    pub fn z_block(&self, k: usize) -> &[S] {
        let w = self.n_paths * self.dim;
        &self.z[k * w..(k + 1) * w]
    }

    #[inline]
    pub fn terminal(&self) -> &[S] {
        self.x_at(self.grid.n_steps())
    }

    #[inline]
    pub fn state(&self) -> &Arc<StateProcess<S>> {
        &self.state
    }
}

/// How the driver enters the backward step.
enum DriverMode<'a, S: Scalar> {
    /// The nonlinear driver itself.
    Full(&'a dyn WealthDriver<S>),
    /// First-order expansion with coefficients frozen at a base solution.
    Linearized {
        dr: &'a dyn WealthDriver<S>,
        base: &'a BsdeSolution<S>,
    },
}

impl<'a, S: Scalar> DriverMode<'a, S> {
    fn driver(&self) -> &'a dyn WealthDriver<S> {
        match self {
            DriverMode::Full(dr) => *dr,
            DriverMode::Linearized { dr, .. } => *dr,
        }
    }
}

/// Monomial exponent tuples of total degree <= degree, graded order.
fn monomial_exponents(n_state: usize, degree: usize) -> Vec<Vec<u32>> {
    let mut all: Vec<Vec<u32>> = vec![Vec::new()];
    for _ in 0..n_state {
        let mut next = Vec::new();
        for base in &all {
            let used: u32 = base.iter().sum();
            for e in 0..=(degree as u32 - used) {
                let mut b = base.clone();
                b.push(e);
                next.push(b);
            }
        }
        all = next;
    }
    all.sort_by_key(|e| (e.iter().sum::<u32>(), e.clone()));
    all
}

fn validate_inputs<S: Scalar>(
    dr: &dyn WealthDriver<S>,
    terminal: &[S],
    paths: &PathBundle<S>,
    state: &StateProcess<S>,
    cfg: &RegressionConfig,
) -> Result<()> {
    let n = paths.n_paths();
    if terminal.len() != n {
        return Err(SolverError::invalid_argument(format!(
            "terminal data has {} entries for {} paths",
            terminal.len(),
            n
        )));
    }
    if dr.dim() != paths.dim() {
        return Err(SolverError::invalid_argument(format!(
            "driver dimension {} does not match path dimension {}",
            dr.dim(),
            paths.dim()
        )));
    }
    if state.n_paths() != n || state.n_steps() != paths.grid().n_steps() {
        return Err(SolverError::invalid_argument(
            "state process shape does not match the path bundle",
        ));
    }
    if cfg.basis_degree == 0 || cfg.basis_degree > 8 {
        return Err(SolverError::invalid_argument(
            "basis degree must lie in 1..=8",
        ));
    }
    if cfg.picard_substeps == 0 || cfg.picard_substeps > 32 {
        return Err(SolverError::invalid_argument(
            "picard substeps must lie in 1..=32",
        ));
    }
    if !(cfg.ridge >= 0.0) || !cfg.ridge.is_finite() {
        return Err(SolverError::invalid_argument("ridge must be finite and >= 0"));
    }
    if !reduce::max_abs(terminal).is_finite() {
        return Err(SolverError::invalid_argument("terminal data must be finite"));
    }
    Ok(())
}

/// Fills the row-major basis matrix b[i*m + a] from the state at `step`.
fn build_basis<S: Scalar>(
    state: &StateProcess<S>,
    step: usize,
    exps: &[Vec<u32>],
    b: &mut [S],
) {
    let m = exps.len();
    let ns = state.n_state();
    let coords: Vec<&[S]> = (0..ns).map(|j| state.coord(step, j)).collect();
    b.par_chunks_mut(CHUNK * m)
        .enumerate()
        .for_each(|(c, rows)| {
            let lo = c * CHUNK;
            for ii in 0..rows.len() / m {
                let i = lo + ii;
                let row = &mut rows[ii * m..(ii + 1) * m];
                for (a, e) in exps.iter().enumerate() {
                    let mut v = S::one();
                    for (j, &p) in e.iter().enumerate() {
                        if p > 0 {
                            v = v * coords[j][i].powi(p as i32);
                        }
                    }
                    row[a] = v;
                }
            }
        });
}

struct StepFit<S: Scalar> {
    coef_x: Vec<S>,
    /// Z coefficients with the 1/dt already folded in, coordinate-major.
    coef_z: Vec<S>,
    residual_rel: f64,
    condition: f64,
}

/// Scales basis columns to unit RMS in place and fits the conditional
/// expectation targets by ridge-regularized least squares.
fn fit_step<S: Scalar>(
    b: &mut [S],
    n: usize,
    m: usize,
    x_next: &[S],
    dw: &[&[S]],
    dt: S,
    cfg: &RegressionConfig,
    step: usize,
) -> Result<StepFit<S>> {
    let d = dw.len();

    let col_sq: Vec<S> = reduce::sum_partials_vec(n, m, |lo, hi, acc| {
        for i in lo..hi {
            let row = &b[i * m..(i + 1) * m];
            for (a, &v) in row.iter().enumerate() {
                acc[a] += v * v;
            }
        }
    });
    let scales: Vec<S> = col_sq
        .iter()
        .map(|&s| {
            let rms = (s / S::from_count(n)).sqrt();
            if rms > S::zero() {
                S::one() / rms
            } else {
                S::one()
            }
        })
        .collect();
    b.par_chunks_mut(CHUNK * m).for_each(|rows| {
        for row in rows.chunks_mut(m) {
            for (v, &s) in row.iter_mut().zip(&scales) {
                *v = *v * s;
            }
        }
    });

    let bview = &*b;
    let mut gram: Vec<S> = reduce::sum_partials_vec(n, m * m, |lo, hi, acc| {
        for i in lo..hi {
            let row = &bview[i * m..(i + 1) * m];
            for a in 0..m {
                let va = row[a];
                for bb in a..m {
                    acc[a * m + bb] += va * row[bb];
                }
            }
        }
    });
    let inv_n = S::one() / S::from_count(n);
    for a in 0..m {
        for bb in 0..a {
            gram[a * m + bb] = gram[bb * m + a];
        }
    }
    for g in gram.iter_mut() {
        *g = *g * inv_n;
    }
    for a in 0..m {
        gram[a * m + a] += S::lit(cfg.ridge);
    }

    let (eig_lo, eig_hi) = symmetric_eigen_extremes(&gram, m);
    let condition = if eig_lo > S::zero() {
        (eig_hi / eig_lo).as_f64()
    } else {
        f64::INFINITY
    };
    if !(condition <= CONDITION_LIMIT) {
        return Err(SolverError::IllConditionedBasis {
            step,
            cond: condition,
            limit: CONDITION_LIMIT,
        });
    }

    // one fused pass for all d+1 regression targets
    let width = m * (d + 1);
    let rhs_all: Vec<S> = reduce::sum_partials_vec(n, width, |lo, hi, acc| {
        let mut ydw = vec![S::zero(); d];
        for i in lo..hi {
            let row = &bview[i * m..(i + 1) * m];
            let y = x_next[i];
            for (j, w) in dw.iter().enumerate() {
                ydw[j] = y * w[i];
            }
            for (a, &ba) in row.iter().enumerate() {
                let base = a * (d + 1);
                acc[base] += ba * y;
                for j in 0..d {
                    acc[base + 1 + j] += ba * ydw[j];
                }
            }
        }
    });

    cholesky(&mut gram, m).map_err(|_| SolverError::IllConditionedBasis {
        step,
        cond: condition,
        limit: CONDITION_LIMIT,
    })?;
    let mut coef_x = vec![S::zero(); m];
    for a in 0..m {
        coef_x[a] = rhs_all[a * (d + 1)] * inv_n;
    }
    cholesky_solve(&gram, m, &mut coef_x);
    let mut coef_z = vec![S::zero(); d * m];
    let inv_dt = S::one() / dt;
    for j in 0..d {
        let mut rhs = vec![S::zero(); m];
        for a in 0..m {
            rhs[a] = rhs_all[a * (d + 1) + 1 + j] * inv_n;
        }
        cholesky_solve(&gram, m, &mut rhs);
        for (a, v) in rhs.into_iter().enumerate() {
            coef_z[j * m + a] = v * inv_dt;
        }
    }

    // relative residual of the conditional-expectation fit
    let coef_x_ref = &coef_x;
    let sums: Vec<S> = reduce::sum_partials_vec(n, 2, |lo, hi, acc| {
        for i in lo..hi {
            let row = &bview[i * m..(i + 1) * m];
            let mut fit = S::zero();
            for (a, &ba) in row.iter().enumerate() {
                fit = fit + coef_x_ref[a] * ba;
            }
            let y = x_next[i];
            acc[0] += (y - fit) * (y - fit);
            acc[1] += y * y;
        }
    });
    let residual_rel = if sums[1] > S::zero() {
        (sums[0] / sums[1]).sqrt().as_f64()
    } else {
        0.0
    };

    Ok(StepFit {
        coef_x,
        coef_z,
        residual_rel,
        condition,
    })
}

fn backward_solve<S: Scalar>(
    mode: DriverMode<'_, S>,
    terminal: &[S],
    paths: &PathBundle<S>,
    state: Arc<StateProcess<S>>,
    cfg: &RegressionConfig,
) -> Result<BsdeSolution<S>> {
    let dr = mode.driver();
    validate_inputs(dr, terminal, paths, &state, cfg)?;
    if let DriverMode::Linearized { base, .. } = &mode {
        if base.n_paths != paths.n_paths() || base.grid.n_steps() != paths.grid().n_steps() {
            return Err(SolverError::invalid_argument(
                "base solution does not match the path bundle",
            ));
        }
    }

    let n = paths.n_paths();
    let d = paths.dim();
    let n_steps = paths.grid().n_steps();
    let dt = paths.grid().dt();
    let grid = paths.grid().clone();
    let exps = monomial_exponents(state.n_state(), cfg.basis_degree);
    let m = exps.len();
    let substeps = cfg.picard_substeps;

    let mut x = vec![S::zero(); (n_steps + 1) * n];
    let mut z = vec![S::zero(); n_steps * n * d];
    x[n_steps * n..].copy_from_slice(terminal);

    let mut basis = vec![S::zero(); n * m];
    let mut residuals = vec![0.0f64; n_steps];
    let mut conditions = vec![1.0f64; n_steps];

    // Two chains share the fits. The regression chain stays raw so the
    // fitted coefficients, the Z covariances, and the propagated means
    // are plain least squares with no feedback from the guard below.
    // The stored rows additionally truncate each fitted conditional mean
    // to the comparison envelope of the terminal data (a solution started
    // from ξ cannot leave [min(ξ)∧0, max(ξ)∨0] scaled by the driver's
    // Lipschitz growth, and the z part of the driver absorbs into a
    // measure change, so the envelope never widens with the estimation
    // error of intermediate rows) and recenter by the truncation's own
    // mean shift, so the stored chain has the exact cross-path means of
    // the raw one with tail extrapolation error redistributed instead of
    // accumulated.
    let mut raw_next: Vec<S> = terminal.to_vec();
    let mut raw_cur = vec![S::zero(); n];
    let (term_lo, term_hi) = reduce::extremes(terminal);
    let lip = dr.lipschitz_bound();
    let horizon = grid.horizon();

    for k in (1..n_steps).rev() {
        build_basis(&state, k, &exps, &mut basis);
        let x_cur = &mut x[k * n..(k + 1) * n];
        let dw: Vec<&[S]> = (0..d).map(|j| paths.dw(k, j)).collect();
        let fit = fit_step(&mut basis, n, m, &raw_next, &dw, dt, cfg, k)?;
        residuals[k] = fit.residual_rel;
        conditions[k] = fit.condition;

        let t_k = grid.time(k);
        let z_cur = &mut z[k * n * d..(k + 1) * n * d];
        let bview = &basis;
        let coef_x = &fit.coef_x;
        let coef_z = &fit.coef_z;
        let mode_ref = &mode;

        // first pass: raw fitted values for the conditional mean and Z
        raw_cur
            .par_chunks_mut(CHUNK)
            .zip(z_cur.par_chunks_mut(CHUNK * d))
            .enumerate()
            .for_each(|(c, (rawc, zc))| {
                let lo = c * CHUNK;
                for ii in 0..rawc.len() {
                    let i = lo + ii;
                    let row = &bview[i * m..(i + 1) * m];
                    let mut cx = S::zero();
                    for (a, &ba) in row.iter().enumerate() {
                        cx = cx + coef_x[a] * ba;
                    }
                    rawc[ii] = cx;
                    let zrow = &mut zc[ii * d..(ii + 1) * d];
                    for j in 0..d {
                        let cj = &coef_z[j * m..(j + 1) * m];
                        let mut v = S::zero();
                        for (a, &ba) in row.iter().enumerate() {
                            v = v + cj[a] * ba;
                        }
                        zrow[j] = v;
                    }
                }
            });

        let growth = (lip * (horizon - t_k)).exp();
        let cx_lo = term_lo.min(S::zero()) * growth;
        let cx_hi = term_hi.max(S::zero()) * growth;
        let mean_raw = reduce::mean(&raw_cur);
        let mean_clip = reduce::sum_partials(n, |a, b| {
            raw_cur[a..b]
                .iter()
                .map(|&v| v.max(cx_lo).min(cx_hi))
                .sum::<S>()
        }) / S::from_count(n);
        let shift = mean_clip - mean_raw;

        // second pass: settle the driver on both conditional means
        let extremes: Vec<S> = x_cur
            .par_chunks_mut(CHUNK)
            .zip(raw_cur.par_chunks_mut(CHUNK))
            .zip(z_cur.par_chunks(CHUNK * d))
            .enumerate()
            .map(|(c, ((xc, rawc), zc))| {
                let lo = c * CHUNK;
                let mut ws = vec![S::zero(); dr.workspace_len()];
                let mut fz = vec![S::zero(); d];
                let mut worst = S::zero();
                for ii in 0..xc.len() {
                    let i = lo + ii;
                    let raw_cx = rawc[ii];
                    let cx = raw_cx.max(cx_lo).min(cx_hi) - shift;
                    let zrow = &zc[ii * d..(ii + 1) * d];
                    let (raw_xv, xv) = match mode_ref {
                        DriverMode::Full(drv) => {
                            let mut a = raw_cx;
                            let mut b = cx;
                            for _ in 0..substeps {
                                a = raw_cx + drv.eval(t_k, a, zrow, &mut ws) * dt;
                            }
                            for _ in 0..substeps {
                                b = cx + drv.eval(t_k, b, zrow, &mut ws) * dt;
                            }
                            (a, b)
                        }
                        DriverMode::Linearized { dr: drv, base } => {
                            let fx = drv.grad(
                                t_k,
                                base.x_at(k)[i],
                                base.z_row(k, i),
                                &mut fz,
                                &mut ws,
                            );
                            let mut zpart = S::zero();
                            for j in 0..d {
                                zpart = zpart + fz[j] * zrow[j];
                            }
                            let mut a = raw_cx;
                            let mut b = cx;
                            for _ in 0..substeps {
                                a = raw_cx + (fx * a + zpart) * dt;
                            }
                            for _ in 0..substeps {
                                b = cx + (fx * b + zpart) * dt;
                            }
                            (a, b)
                        }
                    };
                    rawc[ii] = raw_xv;
                    xc[ii] = xv;
                    worst = worst.max(raw_xv.abs()).max(xv.abs());
                }
                worst
            })
            .collect();
        std::mem::swap(&mut raw_next, &mut raw_cur);
        let worst = extremes.into_iter().fold(S::zero(), |a, b| a.max(b));
        if !worst.is_finite() || worst > S::lit(BLOWUP_LIMIT) {
            return Err(SolverError::NumericalBlowup(format!(
                "backward recursion reached magnitude {:e} at step {k}",
                worst.as_f64()
            )));
        }
    }

    // step 0: the conditioning sigma-algebra is trivial, so fits reduce
    // to plain cross-path means, taken on the raw chain
    let x1 = raw_next;
    let mut z0 = vec![S::zero(); d];
    for j in 0..d {
        z0[j] = reduce::dot_mean(&x1, paths.dw(0, j)) / dt;
    }
    let cx0 = reduce::mean(&x1);
    let t0 = grid.time(0);
    let mut ws = vec![S::zero(); dr.workspace_len()];
    let mut x0 = cx0;
    match &mode {
        DriverMode::Full(drv) => {
            for _ in 0..substeps {
                x0 = cx0 + drv.eval(t0, x0, &z0, &mut ws) * dt;
            }
        }
        DriverMode::Linearized { dr: drv, base } => {
            let mut fz = vec![S::zero(); d];
            let fx = drv.grad(t0, base.x0, &base.z0, &mut fz, &mut ws);
            for _ in 0..substeps {
                let mut lin = fx * x0;
                for j in 0..d {
                    lin = lin + fz[j] * z0[j];
                }
                x0 = cx0 + lin * dt;
            }
        }
    }
    if !x0.is_finite() {
        return Err(SolverError::NumericalBlowup(
            "initial value is not finite".into(),
        ));
    }
    x[..n].fill(x0);
    if n_steps > 0 {
        z[..n * d]
            .par_chunks_mut(d)
            .for_each(|row| row.copy_from_slice(&z0));
        let sd1 = reduce::mean_sq_diff(&x1, &vec![cx0; n]).sqrt().as_f64();
        let rms1 = reduce::dot_mean(&x1, &x1).sqrt().as_f64();
        residuals[0] = if rms1 > 0.0 { sd1 / rms1 } else { 0.0 };
    }

    Ok(BsdeSolution {
        grid,
        dim: d,
        n_paths: n,
        x,
        z,
        x0,
        z0,
        state,
        diagnostics: RegressionDiagnostics {
            residual_norms: residuals,
            condition_numbers: conditions,
        },
    })
}

/// Solves the backward wealth equation with the given terminal data.
pub fn solve_bsde<S: Scalar>(
    dr: &dyn WealthDriver<S>,
    terminal: &[S],
    paths: &PathBundle<S>,
    state: Arc<StateProcess<S>>,
    cfg: &RegressionConfig,
) -> Result<BsdeSolution<S>> {
    backward_solve(DriverMode::Full(dr), terminal, paths, state, cfg)
}

/// Solves the first-order variational equation around `base`: the same
/// backward pass with the driver replaced by its differential frozen at
/// the base solution. Kinked drivers have no such differential.
pub fn solve_variational<S: Scalar>(
    dr: &dyn WealthDriver<S>,
    base: &BsdeSolution<S>,
    xi_hat: &[S],
    paths: &PathBundle<S>,
    cfg: &RegressionConfig,
) -> Result<BsdeSolution<S>> {
    if !dr.smooth() {
        return Err(SolverError::UnsupportedNonSmooth(format!(
            "driver '{}' has kinks; the variational equation needs a derivative",
            dr.name()
        )));
    }
    backward_solve(
        DriverMode::Linearized { dr, base },
        xi_hat,
        paths,
        base.state.clone(),
        cfg,
    )
}

/// One scaling step of the variational probe.
#[derive(Debug, Clone, Copy)]
pub struct ProbePoint<S: Scalar> {
    pub rho: S,
    /// sup over steps of mean squared remainder of X.
    pub sup_mean_square_x: S,
    /// Time-integrated mean squared remainder of Z.
    pub integrated_mean_square_z: S,
}

/// Measures how fast the first-order expansion closes: solves the full
/// equation at terminal xi_star + rho * xi_hat for each rho, subtracts
/// the base and the scaled variational solution, and reports remainder
/// norms. All solves share one path ensemble and one conditioning state
/// built from the linear-base adjoint, so remainders are pathwise.
pub fn variational_convergence_probe<S: Scalar>(
    dr: &dyn WealthDriver<S>,
    xi_star: &[S],
    xi_hat: &[S],
    paths: &PathBundle<S>,
    rhos: &[S],
    cfg: &RegressionConfig,
) -> Result<Vec<ProbePoint<S>>> {
    if !dr.smooth() {
        return Err(SolverError::UnsupportedNonSmooth(format!(
            "driver '{}' has kinks; the variational probe needs a derivative",
            dr.name()
        )));
    }
    if xi_star.len() != xi_hat.len() {
        return Err(SolverError::invalid_argument(
            "terminal and perturbation must have equal length",
        ));
    }
    let adj = crate::fbsde::linear_adjoint(dr.base_params(), paths)?;
    let state = Arc::new(adj.state_process()?);
    let base = backward_solve(DriverMode::Full(dr), xi_star, paths, state.clone(), cfg)?;
    let vari = backward_solve(
        DriverMode::Linearized { dr, base: &base },
        xi_hat,
        paths,
        state.clone(),
        cfg,
    )?;

    let n = paths.n_paths();
    let d = paths.dim();
    let n_steps = paths.grid().n_steps();
    let dt = paths.grid().dt();
    let mut out = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let shifted: Vec<S> = xi_star
            .iter()
            .zip(xi_hat)
            .map(|(&a, &b)| a + rho * b)
            .collect();
        let full = backward_solve(DriverMode::Full(dr), &shifted, paths, state.clone(), cfg)?;
        let mut sup_x = S::zero();
        for k in 0..=n_steps {
            let (xf, xb, xv) = (full.x_at(k), base.x_at(k), vari.x_at(k));
            let ms = reduce::sum_partials(n, |lo, hi| {
                let mut acc = S::zero();
                for i in lo..hi {
                    let r = xf[i] - xb[i] - rho * xv[i];
                    acc = acc + r * r;
                }
                acc
            }) / S::from_count(n);
            sup_x = sup_x.max(ms);
        }
        let mut int_z = S::zero();
        for k in 0..n_steps {
            let (zf, zb, zv) = (full.z_block(k), base.z_block(k), vari.z_block(k));
            let ms = reduce::sum_partials(n * d, |lo, hi| {
                let mut acc = S::zero();
                for i in lo..hi {
                    let r = zf[i] - zb[i] - rho * zv[i];
                    acc = acc + r * r;
                }
                acc
            }) / S::from_count(n);
            int_z = int_z + ms * dt;
        }
        out.push(ProbePoint {
            rho,
            sup_mean_square_x: sup_x,
            integrated_mean_square_z: int_z,
        });
    }
    Ok(out)
}

/// Maps the loading Z back to portfolio weights through the volatility:
/// pi = (sigma')^{-1} z per path and step, same path-major layout as Z.
pub fn recover_portfolio<S: Scalar>(
    sol: &BsdeSolution<S>,
    vol: &crate::drivers::Volatility<S>,
) -> Result<Vec<S>> {
    if vol.dim() != sol.dim {
        return Err(SolverError::invalid_argument(
            "volatility dimension does not match the solution",
        ));
    }
    let d = sol.dim;
    let n = sol.n_paths;
    let n_steps = sol.grid.n_steps();
    let mut pi = vec![S::zero(); sol.z.len()];
    for k in 0..n_steps {
        let t = sol.grid.time(k);
        let zk = sol.z_block(k);
        let out = &mut pi[k * n * d..(k + 1) * n * d];
        let statuses: Vec<Result<()>> = out
            .par_chunks_mut(CHUNK * d)
            .zip(zk.par_chunks(CHUNK * d))
            .map(|(oc, zc)| {
                for (orow, zrow) in oc.chunks_mut(d).zip(zc.chunks(d)) {
                    vol.portfolio_from_loading(t, zrow, orow)?;
                }
                Ok(())
            })
            .collect();
        for s in statuses {
            s?;
        }
    }
    Ok(pi)
}
