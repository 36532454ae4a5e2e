//! Multiplier side of the constrained variance minimization. The optimal
//! terminal wealth is a put-shaped function of the adjoint terminal value
//! with two scalar multipliers, one enforcing the budget and one the mean
//! target. This module holds the multiplier algebra, the pointwise
//! optimality checks, and the search that matches a budget and a mean
//! target, plus the frontier and feasibility helpers built on it.

use crate::bsde::{solve_bsde, RegressionConfig};
use crate::drivers::WealthDriver;
use crate::error::{Result, SolverError};
use crate::fbsde::{linear_adjoint, solve_coupled, CoupledSolution, PicardConfig, TerminalRule};
use crate::linalg;
use crate::oracle::LognormalLaw;
use crate::paths::{PathBundle, CHUNK};
use crate::reduce;
use crate::scalar::Scalar;
use rayon::prelude::*;
use std::sync::Arc;

/// Bisection steps resolving the mean multiplier on a fixed ensemble.
const INNER_BISECTIONS: usize = 128;
/// Budget evaluations allowed for the outer root find, final one included.
const OUTER_EVALS: usize = 80;
/// Growth steps allowed when establishing either bracket.
const BRACKET_EXPANSIONS: usize = 60;
/// Relative bracket width at which the outer search counts as resolved.
/// Far below the sampling noise of the budget estimate, so tightening it
/// further cannot move the answer.
const OUTER_WIDTH_TOL: f64 = 1e-6;
/// Ensemble refreshes of the adjoint per outer evaluation.
const ADJOINT_REFRESHES: usize = 5;

/// Lagrange multipliers: `lambda1` scales the adjoint in the budget term,
/// `lambda2` shifts it for the mean target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multipliers<S: Scalar> {
    pub lambda1: S,
    pub lambda2: S,
}

/// The affine argument lambda1 * q + lambda2 shared by the terminal rule
/// and the optimality checks. Both sides must evaluate the same
/// expression so that satisfied conditions cancel exactly.
#[inline]
pub(crate) fn kkt_argument<S: Scalar>(lam: &Multipliers<S>, q: S) -> S {
    lam.lambda1 * q + lam.lambda2
}

/// Optimal terminal wealth for given multipliers: pointwise minimizer of
/// xi^2 + (lambda1 q + lambda2) xi over xi >= 0, which is the truncated
/// linear rule xi = (-(lambda1 q + lambda2))^+ / 2.
pub fn terminal_wealth<S: Scalar>(lam: &Multipliers<S>, q_terminal: &[S]) -> Vec<S> {
    let mut xi = vec![S::zero(); q_terminal.len()];
    xi.par_chunks_mut(CHUNK)
        .zip(q_terminal.par_chunks(CHUNK))
        .for_each(|(xc, qc)| {
            for (x, &q) in xc.iter_mut().zip(qc) {
                *x = S::half() * (-kkt_argument(lam, q)).max(S::zero());
            }
        });
    xi
}

/// Pointwise first-order optimality audit of a terminal claim against
/// multipliers. The zero set is where the claim vanishes (up to `tol`);
/// there the stationarity 2 xi + lambda1 q + lambda2 must be
/// non-negative, and off it, zero.
#[derive(Debug, Clone, Copy)]
pub struct KktSummary<S: Scalar> {
    /// Largest shortfall of the stationarity term on the zero set.
    pub max_violation_zero_set: S,
    /// Largest magnitude of the stationarity term off the zero set.
    pub max_violation_active_set: S,
    /// Largest negative excursion of the claim itself.
    pub max_negative_wealth: S,
    /// Fraction of paths in the zero set.
    pub zero_set_fraction: f64,
}

/// Audits a terminal claim against the first-order conditions. A claim
/// produced by `terminal_wealth` from the same `q_terminal` and `lam`
/// yields violations that are exactly zero, because both sides evaluate
/// one shared expression and the rule's halving is exact in binary.
pub fn kkt_verify<S: Scalar>(
    xi: &[S],
    q_terminal: &[S],
    lam: &Multipliers<S>,
    tol: S,
) -> Result<KktSummary<S>> {
    if xi.len() != q_terminal.len() {
        return Err(SolverError::invalid_argument(
            "claim and adjoint samples must have equal length",
        ));
    }
    if xi.is_empty() {
        return Err(SolverError::invalid_argument("empty sample"));
    }
    if !(tol >= S::zero()) {
        return Err(SolverError::invalid_argument("tolerance must be >= 0"));
    }
    let n = xi.len();
    let n_chunks = n.div_ceil(CHUNK);
    let parts: Vec<(S, S, S, usize)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            let mut worst_zero = S::zero();
            let mut worst_active = S::zero();
            let mut worst_neg = S::zero();
            let mut zeros = 0usize;
            for i in lo..hi {
                let stationarity = S::two() * xi[i] + kkt_argument(lam, q_terminal[i]);
                if xi[i] <= tol {
                    zeros += 1;
                    worst_zero = worst_zero.max(-stationarity);
                } else {
                    worst_active = worst_active.max(stationarity.abs());
                }
                worst_neg = worst_neg.max(-xi[i]);
            }
            (worst_zero, worst_active, worst_neg, zeros)
        })
        .collect();
    let mut summary = KktSummary {
        max_violation_zero_set: S::zero(),
        max_violation_active_set: S::zero(),
        max_negative_wealth: S::zero(),
        zero_set_fraction: 0.0,
    };
    let mut zeros = 0usize;
    for (wz, wa, wn, z) in parts {
        summary.max_violation_zero_set = summary.max_violation_zero_set.max(wz);
        summary.max_violation_active_set = summary.max_violation_active_set.max(wa);
        summary.max_negative_wealth = summary.max_negative_wealth.max(wn);
        zeros += z;
    }
    summary.zero_set_fraction = zeros as f64 / n as f64;
    Ok(summary)
}

/// One mean-variance instance: a wealth model, the capital committed at
/// time zero, and the mean the terminal wealth must reach.
#[derive(Clone)]
pub struct ProblemSpec<S: Scalar> {
    pub driver: Arc<dyn WealthDriver<S>>,
    pub initial_wealth: S,
    pub target_mean: S,
}

impl<S: Scalar> std::fmt::Debug for ProblemSpec<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("driver", &self.driver.name())
            .field("initial_wealth", &self.initial_wealth)
            .field("target_mean", &self.target_mean)
            .finish()
    }
}

impl<S: Scalar> ProblemSpec<S> {
    pub fn new(
        driver: Arc<dyn WealthDriver<S>>,
        initial_wealth: S,
        target_mean: S,
    ) -> Result<Self> {
        let spec = ProblemSpec {
            driver,
            initial_wealth,
            target_mean,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.initial_wealth > S::zero()) || !self.initial_wealth.is_finite() {
            return Err(SolverError::invalid_argument(format!(
                "initial wealth must be positive and finite, got {}",
                self.initial_wealth
            )));
        }
        if !(self.target_mean > S::zero()) || !self.target_mean.is_finite() {
            return Err(SolverError::invalid_argument(format!(
                "target mean must be positive and finite, got {}",
                self.target_mean
            )));
        }
        Ok(())
    }
}

/// Control variates from an exactly known adjoint law: the first four
/// powers of the adjoint terminal value, centered. A correction moves a
/// sample mean by beta' (sampled - exact moments) with beta fitted per
/// statistic, removing the part of its noise the adjoint moments explain.
struct MomentControls<S: Scalar> {
    /// Column-major (4, n): cols[k * n + i] = q_i^(k+1).
    cols: Vec<S>,
    n: usize,
    sampled: [S; 4],
    exact: [S; 4],
    /// Factored centered Gram matrix; None disables all corrections (a
    /// degenerate ensemble, e.g. a deterministic adjoint).
    chol: Option<Vec<S>>,
}

impl<S: Scalar> MomentControls<S> {
    fn new(q_terminal: &[S], law: &LognormalLaw<S>) -> Self {
        let n = q_terminal.len();
        let mut cols = Vec::with_capacity(4 * n);
        cols.extend_from_slice(q_terminal);
        for k in 1..4 {
            let mut next = vec![S::zero(); n];
            {
                let prev = &cols[(k - 1) * n..k * n];
                next.par_chunks_mut(CHUNK).enumerate().for_each(|(c, out)| {
                    let lo = c * CHUNK;
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = prev[lo + j] * q_terminal[lo + j];
                    }
                });
            }
            cols.extend_from_slice(&next);
        }
        let mut sampled = [S::zero(); 4];
        let mut exact = [S::zero(); 4];
        for k in 0..4 {
            sampled[k] = reduce::mean(&cols[k * n..(k + 1) * n]);
            exact[k] = law.power_mean(S::from_count(k + 1));
        }
        let mut gram = vec![S::zero(); 16];
        for k in 0..4 {
            for l in k..4 {
                let g = reduce::dot_mean(&cols[k * n..(k + 1) * n], &cols[l * n..(l + 1) * n])
                    - sampled[k] * sampled[l];
                gram[k * 4 + l] = g;
                gram[l * 4 + k] = g;
            }
        }
        let trace = gram[0] + gram[5] + gram[10] + gram[15];
        let ridge = trace * S::lit(0.25) * S::lit(1e-12);
        for k in 0..4 {
            gram[k * 4 + k] = gram[k * 4 + k] + ridge;
        }
        let chol = match linalg::cholesky(&mut gram, 4) {
            Ok(()) => Some(gram),
            Err(_) => None,
        };
        MomentControls {
            cols,
            n,
            sampled,
            exact,
            chol,
        }
    }

    /// The adjoint samples the controls were built on.
    fn q(&self) -> &[S] {
        &self.cols[..self.n]
    }

    /// Amount to subtract from mean(stat): beta' (sampled - exact).
    fn correction(&self, stat: &[S]) -> S {
        let Some(chol) = &self.chol else {
            return S::zero();
        };
        debug_assert_eq!(stat.len(), self.n);
        let stat_mean = reduce::mean(stat);
        let mut beta = [S::zero(); 4];
        for k in 0..4 {
            beta[k] = reduce::dot_mean(&self.cols[k * self.n..(k + 1) * self.n], stat)
                - self.sampled[k] * stat_mean;
        }
        linalg::cholesky_solve(chol, 4, &mut beta);
        (0..4)
            .map(|k| beta[k] * (self.sampled[k] - self.exact[k]))
            .sum()
    }
}

fn corrected_mean<S: Scalar>(stat: &[S], controls: Option<&MomentControls<S>>) -> S {
    match controls {
        Some(ctl) => reduce::mean(stat) - ctl.correction(stat),
        None => reduce::mean(stat),
    }
}

/// Sample mean of the terminal rule without materializing the claim. The
/// per-path expression is the one `terminal_wealth` uses, so the bisection
/// target and the claim it settles on agree to the bit.
fn mean_claim<S: Scalar>(lam: &Multipliers<S>, q: &[S]) -> S {
    reduce::sum_partials(q.len(), |lo, hi| {
        q[lo..hi]
            .iter()
            .map(|&qi| S::half() * (-kkt_argument(lam, qi)).max(S::zero()))
            .sum::<S>()
    }) / S::from_count(q.len())
}

fn fraction_below<S: Scalar>(xs: &[S], cut: S) -> f64 {
    let n = xs.len();
    let n_chunks = n.div_ceil(CHUNK);
    let count: usize = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            xs[lo..hi].iter().filter(|&&v| v < cut).count()
        })
        .sum();
    count as f64 / n as f64
}

/// Pathwise product of the adjoint samples and a claim, the integrand of
/// the budget in martingale form.
fn budget_integrand<S: Scalar>(q: &[S], xi: &[S]) -> Vec<S> {
    debug_assert_eq!(q.len(), xi.len());
    let mut p = vec![S::zero(); q.len()];
    p.par_chunks_mut(CHUNK)
        .zip(q.par_chunks(CHUNK).zip(xi.par_chunks(CHUNK)))
        .for_each(|(pc, (qc, xc))| {
            for ((o, &a), &b) in pc.iter_mut().zip(qc).zip(xc) {
                *o = a * b;
            }
        });
    p
}

/// Mean-target multiplier on a fixed adjoint ensemble: bisection on the
/// claim mean, which is continuous and non-increasing in lambda2. With
/// controls, the corrected mean is targeted through an offset refit once
/// at the first pass's solution and frozen, so monotonicity inside each
/// pass stays exact.
fn solve_lambda2<S: Scalar>(
    lambda1: S,
    q: &[S],
    target_mean: S,
    controls: Option<&MomentControls<S>>,
) -> Result<S> {
    let (q_min, q_max) = reduce::extremes(q);
    let c = target_mean;
    let step = S::two() * c + S::one();
    let passes = if controls.is_some() { 2 } else { 1 };
    let mut offset = S::zero();
    let mut lambda2 = S::zero();
    for pass in 0..passes {
        let gap = |l2: S| {
            mean_claim(
                &Multipliers {
                    lambda1,
                    lambda2: l2,
                },
                q,
            ) - offset
                - c
        };
        // every path's claim is at least c at lo; none is funded at hi
        let mut lo = -(S::two() * c + lambda1 * q_max);
        let mut hi = -lambda1 * q_min;
        let mut grew = 0;
        while gap(lo) <= S::zero() {
            lo = lo - step;
            grew += 1;
            if grew > BRACKET_EXPANSIONS {
                return Err(SolverError::BracketFailure(
                    "claim mean stays below the target over the scanned shift range".into(),
                ));
            }
        }
        grew = 0;
        while gap(hi) > S::zero() {
            hi = hi + step;
            grew += 1;
            if grew > BRACKET_EXPANSIONS {
                return Err(SolverError::BracketFailure(
                    "claim mean stays above the target over the scanned shift range".into(),
                ));
            }
        }
        for _ in 0..INNER_BISECTIONS {
            let mid = (lo + hi) * S::half();
            if mid == lo || mid == hi {
                break;
            }
            if gap(mid) > S::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lambda2 = (lo + hi) * S::half();
        if let Some(ctl) = controls {
            if pass + 1 < passes {
                let xi = terminal_wealth(&Multipliers { lambda1, lambda2 }, q);
                offset = ctl.correction(&xi);
            }
        }
    }
    Ok(lambda2)
}

/// One budget evaluation along the inner-solved curve: the mean multiplier
/// matched on the current ensemble, a coupled solve at the pair, and the
/// ensemble refreshed until the adjoint is consistent with the solution it
/// generates. A driver whose adjoint ignores the backward solution settles
/// in one round with zero change.
struct BudgetEval<S: Scalar> {
    lambda2: S,
    /// Time-zero value of the replication, moment-corrected when controls
    /// are available.
    x0: S,
    coupled: CoupledSolution<S>,
    q_terminal: Vec<S>,
    refreshed: bool,
}

fn evaluate_budget<S: Scalar>(
    dr: &dyn WealthDriver<S>,
    lambda1: S,
    base_terminal: &[S],
    target_mean: S,
    controls: Option<&MomentControls<S>>,
    paths: &PathBundle<S>,
    rcfg: &RegressionConfig,
    pcfg: &PicardConfig<S>,
) -> Result<BudgetEval<S>> {
    let mut q = base_terminal.to_vec();
    let mut lambda2 = S::zero();
    let mut coupled: Option<CoupledSolution<S>> = None;
    let mut refreshed = false;
    for _ in 0..ADJOINT_REFRESHES {
        lambda2 = solve_lambda2(lambda1, &q, target_mean, controls)?;
        let lam = Multipliers { lambda1, lambda2 };
        let cs = solve_coupled(dr, &TerminalRule::Dual(lam), paths, rcfg, pcfg)?;
        let q_new = cs.adjoint.terminal();
        let change = reduce::mean_sq_diff(&q, &q_new).sqrt();
        q = q_new;
        coupled = Some(cs);
        if change <= pcfg.tolerance {
            refreshed = true;
            break;
        }
    }
    let coupled = coupled.expect("refresh budget is a positive constant");
    let mut x0 = coupled.solution.x0();
    if let Some(ctl) = controls {
        let p = budget_integrand(ctl.q(), coupled.solution.terminal());
        x0 = x0 - ctl.correction(&p);
    }
    Ok(BudgetEval {
        lambda2,
        x0,
        coupled,
        q_terminal: q,
        refreshed,
    })
}

/// Outcome of the multiplier search with the audit trail needed to judge
/// it: constraint gaps, the pointwise optimality audit, bankruptcy
/// statistics, and the conditioning of the final backward solve.
#[derive(Debug, Clone)]
pub struct SolveReport<S: Scalar> {
    /// None when the instance is degenerate.
    pub multipliers: Option<Multipliers<S>>,
    /// The mean target is reachable risk-free, so the variance floor is
    /// zero and no multiplier pair exists.
    pub degenerate: bool,
    pub variance: S,
    pub mean_wealth: S,
    /// Capital the replication consumes at time zero.
    pub initial_value: S,
    /// initial_value minus the committed wealth.
    pub budget_gap: S,
    pub kkt: Option<KktSummary<S>>,
    pub zero_set_fraction: f64,
    /// Smallest wealth value over every step of every path.
    pub min_wealth: S,
    /// Share of all (step, path) grid points with negative wealth.
    pub negative_fraction: f64,
    pub converged: bool,
    /// Sweeps the final coupled solve needed.
    pub picard_iterations: usize,
    pub outer_evaluations: usize,
    /// Final bracket on the budget multiplier.
    pub bracket: Option<(S, S)>,
    pub max_condition_number: f64,
    pub max_residual_norm: f64,
}

/// Finds the multiplier pair whose claim meets the mean target and whose
/// replication consumes exactly the committed wealth. The mean multiplier
/// is matched by bisection on each ensemble; the budget multiplier by a
/// guarded false-position search on the replication value, which is
/// decreasing along the inner-solved curve. Degenerate instances (target
/// reachable risk-free) short-circuit with zero variance; budgets below
/// the sampled floor of mean-target claims are rejected as infeasible.
pub fn solve_multipliers<S: Scalar>(
    spec: &ProblemSpec<S>,
    paths: &PathBundle<S>,
    rcfg: &RegressionConfig,
    pcfg: &PicardConfig<S>,
) -> Result<SolveReport<S>> {
    spec.validate()?;
    let dr = spec.driver.as_ref();
    let y = spec.initial_wealth;
    let c = spec.target_mean;

    let base = linear_adjoint(dr.base_params(), paths)?;
    let base_terminal = base.terminal();
    let law = dr.adjoint_terminal_law(paths.grid().horizon());
    let controls = law.as_ref().map(|l| MomentControls::new(&base_terminal, l));

    // the flat claim at the target is the cheapest riskless plan
    let riskless_cost = match &law {
        Some(l) => c * l.mean(),
        None => {
            let flat = vec![c; paths.n_paths()];
            solve_coupled(dr, &TerminalRule::Fixed(&flat), paths, rcfg, pcfg)?
                .solution
                .x0()
        }
    };
    if y >= riskless_cost {
        return Ok(SolveReport {
            multipliers: None,
            degenerate: true,
            variance: S::zero(),
            mean_wealth: c,
            initial_value: riskless_cost,
            budget_gap: riskless_cost - y,
            kkt: None,
            zero_set_fraction: 0.0,
            min_wealth: c,
            negative_fraction: 0.0,
            converged: true,
            picard_iterations: 0,
            outer_evaluations: 0,
            bracket: None,
            max_condition_number: 0.0,
            max_residual_norm: 0.0,
        });
    }

    // linear-market floor: concentrating the whole mean on the cheapest
    // sampled state; frictions in the drivers here only raise the cost
    let (q_min, _) = reduce::extremes(&base_terminal);
    let floor = c * q_min;
    if y < floor {
        return Err(SolverError::Infeasible {
            minimal_investment: floor.as_f64(),
            initial_wealth: y.as_f64(),
        });
    }

    // each evaluation keeps only the gap; the heavyweight artifacts of
    // intermediate solves are dropped on the spot
    let evals = std::cell::Cell::new(0usize);
    let all_converged = std::cell::Cell::new(true);
    let eval_gap = |l1: S| -> Result<S> {
        evals.set(evals.get() + 1);
        let ev = evaluate_budget(
            dr,
            l1,
            &base_terminal,
            c,
            controls.as_ref(),
            paths,
            rcfg,
            pcfg,
        )?;
        all_converged.set(all_converged.get() && ev.coupled.converged && ev.refreshed);
        Ok(ev.x0 - y)
    };

    // bracket: the gap is positive for a vanishing budget multiplier (the
    // claim degenerates to the flat plan) and negative for a large one
    let mut a = S::lit(1e-6);
    let mut fa = eval_gap(a)?;
    if fa <= S::zero() {
        a = S::lit(1e-12);
        fa = eval_gap(a)?;
        if fa <= S::zero() {
            return Err(SolverError::BracketFailure(
                "budget gap is not positive even for a vanishing budget multiplier; \
                 the instance sits on the degenerate boundary"
                    .into(),
            ));
        }
    }
    let mean_q = match &law {
        Some(l) => l.mean(),
        None => reduce::mean(&base_terminal),
    };
    let mut b = (S::two() * c / mean_q).max(S::one());
    let mut fb = eval_gap(b)?;
    let mut grew = 0;
    while fb > S::zero() {
        a = b;
        fa = fb;
        b = b * S::lit(4.0);
        grew += 1;
        if grew > BRACKET_EXPANSIONS {
            return Err(SolverError::BracketFailure(format!(
                "no budget sign change up to lambda1 = {:e}",
                b.as_f64()
            )));
        }
        fb = eval_gap(b)?;
    }

    // false position with the Illinois cut, so a retained endpoint cannot
    // pin the iteration to one side of the bracket
    let mut side = 0i8;
    let mut pinched = false;
    while evals.get() + 1 < OUTER_EVALS {
        let width = b - a;
        let scale = a.abs().max(b.abs()).max(S::one());
        if width <= scale * S::lit(OUTER_WIDTH_TOL) {
            break;
        }
        let denom = fb - fa;
        let mut t = if denom == S::zero() {
            (a + b) * S::half()
        } else {
            (a * fb - b * fa) / denom
        };
        if !(t > a && t < b) {
            t = (a + b) * S::half();
        }
        if t == a || t == b {
            pinched = true;
            break;
        }
        let gap = eval_gap(t)?;
        if gap == S::zero() {
            a = t;
            b = t;
            fa = gap;
            fb = gap;
            break;
        }
        if gap > S::zero() {
            if side == 1 {
                fb = fb * S::half();
            }
            a = t;
            fa = gap;
            side = 1;
        } else {
            if side == -1 {
                fa = fa * S::half();
            }
            b = t;
            fb = gap;
            side = -1;
        }
    }
    let scale = a.abs().max(b.abs()).max(S::one());
    let bracket_resolved = pinched || (b - a) <= scale * S::lit(OUTER_WIDTH_TOL);

    // final full evaluation at the best interpolant inside the bracket
    let denom = fb - fa;
    let mut lambda1 = if denom == S::zero() {
        (a + b) * S::half()
    } else {
        (a * fb - b * fa) / denom
    };
    if !(lambda1 >= a && lambda1 <= b) {
        lambda1 = (a + b) * S::half();
    }
    evals.set(evals.get() + 1);
    let final_ev = evaluate_budget(
        dr,
        lambda1,
        &base_terminal,
        c,
        controls.as_ref(),
        paths,
        rcfg,
        pcfg,
    )?;
    all_converged.set(all_converged.get() && final_ev.coupled.converged && final_ev.refreshed);

    let lam = Multipliers {
        lambda1,
        lambda2: final_ev.lambda2,
    };
    let xi = final_ev.coupled.solution.terminal();
    let kkt = kkt_verify(xi, &final_ev.q_terminal, &lam, S::zero())?;
    let mean_wealth = corrected_mean(xi, controls.as_ref());
    let second_raw = budget_integrand(xi, xi);
    let second = corrected_mean(&second_raw, controls.as_ref());
    let variance = second - c * c;
    // wealth-floor stats cover the whole process, every step of every path
    let x_field = &final_ev.coupled.solution.x;
    let (min_wealth, _) = reduce::extremes(x_field);
    let negative_fraction = fraction_below(x_field, S::zero());
    let diag = &final_ev.coupled.solution.diagnostics;
    let max_condition_number = diag.condition_numbers.iter().copied().fold(0.0, f64::max);
    let max_residual_norm = diag.residual_norms.iter().copied().fold(0.0, f64::max);

    Ok(SolveReport {
        multipliers: Some(lam),
        degenerate: false,
        variance,
        mean_wealth,
        initial_value: final_ev.x0,
        budget_gap: final_ev.x0 - y,
        kkt: Some(kkt),
        zero_set_fraction: kkt.zero_set_fraction,
        min_wealth,
        negative_fraction,
        converged: all_converged.get() && bracket_resolved,
        picard_iterations: final_ev.coupled.iterations,
        outer_evaluations: evals.get(),
        bracket: Some((a, b)),
        max_condition_number,
        max_residual_norm,
    })
}

/// Monte Carlo residuals of the two constraints at a given multiplier
/// pair, with standard errors that conservatively treat paths (pairs,
/// when antithetic) as independent and ignore the variance the moment
/// corrections remove.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintResiduals<S: Scalar> {
    pub budget_residual: S,
    pub mean_residual: S,
    pub budget_se: S,
    pub mean_se: S,
}

pub fn constraint_residuals<S: Scalar>(
    lam: &Multipliers<S>,
    spec: &ProblemSpec<S>,
    paths: &PathBundle<S>,
    rcfg: &RegressionConfig,
    pcfg: &PicardConfig<S>,
) -> Result<ConstraintResiduals<S>> {
    spec.validate()?;
    let dr = spec.driver.as_ref();
    let cs = solve_coupled(dr, &TerminalRule::Dual(*lam), paths, rcfg, pcfg)?;
    let q = cs.adjoint.terminal();
    let xi = cs.solution.terminal();
    let law = dr.adjoint_terminal_law(paths.grid().horizon());
    let controls = law.as_ref().map(|l| MomentControls::new(&q, l));

    let p = budget_integrand(&q, xi);
    let mut x0 = cs.solution.x0();
    if let Some(ctl) = &controls {
        x0 = x0 - ctl.correction(&p);
    }
    let mean = corrected_mean(xi, controls.as_ref());

    let n_eff = if paths.antithetic() {
        paths.n_paths() / 2
    } else {
        paths.n_paths()
    };
    let se = |v: &[S]| {
        let m = reduce::mean(v);
        let var = (reduce::dot_mean(v, v) - m * m).max(S::zero());
        (var / S::from_count(n_eff)).sqrt()
    };
    Ok(ConstraintResiduals {
        budget_residual: x0 - spec.initial_wealth,
        mean_residual: mean - spec.target_mean,
        budget_se: se(&p),
        mean_se: se(xi),
    })
}

/// Sample Lagrangian of a terminal claim at fixed multipliers: its second
/// moment plus the multiplier-weighted constraint terms, with the budget
/// term priced by the full backward solve conditioned on the linear-base
/// adjoint. Affine constants of the constraints are dropped; they cancel
/// in any comparison at fixed multipliers.
pub fn lagrangian<S: Scalar>(
    xi: &[S],
    lam: &Multipliers<S>,
    dr: &dyn WealthDriver<S>,
    paths: &PathBundle<S>,
    rcfg: &RegressionConfig,
) -> Result<S> {
    if xi.len() != paths.n_paths() {
        return Err(SolverError::invalid_argument(format!(
            "claim has {} entries for {} paths",
            xi.len(),
            paths.n_paths()
        )));
    }
    let state = Arc::new(linear_adjoint(dr.base_params(), paths)?.state_process()?);
    let sol = solve_bsde(dr, xi, paths, state, rcfg)?;
    Ok(reduce::dot_mean(xi, xi) + lam.lambda1 * sol.x0() + lam.lambda2 * reduce::mean(xi))
}

/// Smallest time-zero capital that can reach the mean target on this
/// ensemble.
#[derive(Debug, Clone, Copy)]
pub struct InvestmentBound<S: Scalar> {
    pub minimal_investment: S,
    /// Maximizing dual variable of the feasibility problem: minus the
    /// per-unit cost of the cheapest mean-target claim.
    pub lambda_star: S,
    /// Sharp on the sampled ensemble; false marks an upper bound.
    pub sharp: bool,
}

/// With an exactly priced adjoint (the frictionless linear market) the
/// infimum concentrates the claim on the cheapest sampled state and the
/// bound is sharp. Otherwise a family of equal-mean indicator claims on
/// the cheapest states is priced through the full solver and the best one
/// is reported as an upper bound.
pub fn min_investment<S: Scalar>(
    spec: &ProblemSpec<S>,
    paths: &PathBundle<S>,
    rcfg: &RegressionConfig,
    pcfg: &PicardConfig<S>,
) -> Result<InvestmentBound<S>> {
    spec.validate()?;
    let dr = spec.driver.as_ref();
    let c = spec.target_mean;
    let base = linear_adjoint(dr.base_params(), paths)?;
    let q = base.terminal();
    if dr.adjoint_terminal_law(paths.grid().horizon()).is_some() {
        let (q_min, _) = reduce::extremes(&q);
        return Ok(InvestmentBound {
            minimal_investment: c * q_min,
            lambda_star: -q_min,
            sharp: true,
        });
    }
    let n = q.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&i, &j| q[i].partial_cmp(&q[j]).expect("adjoint values are finite"));
    let mut best = S::infinity();
    for &kappa in &[0.015625f64, 0.0625, 0.25, 1.0] {
        let m = ((n as f64 * kappa) as usize).clamp(1, n);
        let level = c * S::from_count(n) / S::from_count(m);
        let mut flat = vec![S::zero(); n];
        for &i in &order[..m] {
            flat[i] = level;
        }
        let cost = solve_coupled(dr, &TerminalRule::Fixed(&flat), paths, rcfg, pcfg)?
            .solution
            .x0();
        best = best.min(cost);
    }
    Ok(InvestmentBound {
        minimal_investment: best,
        lambda_star: -best / c,
        sharp: false,
    })
}

/// One solved point of the mean-target sweep.
#[derive(Debug, Clone)]
pub struct FrontierRow<S: Scalar> {
    pub target_mean: S,
    pub variance: S,
    pub multipliers: Option<Multipliers<S>>,
    pub degenerate: bool,
    pub converged: bool,
}

/// Sweeps the mean target and solves each instance on the shared path
/// ensemble. Rows that fail (infeasible target, failed bracket, numerical
/// breakdown) come back as unconverged zero rows instead of aborting the
/// sweep.
pub fn frontier<S: Scalar>(
    spec: &ProblemSpec<S>,
    targets: &[S],
    paths: &PathBundle<S>,
    rcfg: &RegressionConfig,
    pcfg: &PicardConfig<S>,
) -> Vec<FrontierRow<S>> {
    targets
        .iter()
        .map(|&c| {
            let row_spec = ProblemSpec {
                driver: spec.driver.clone(),
                initial_wealth: spec.initial_wealth,
                target_mean: c,
            };
            match solve_multipliers(&row_spec, paths, rcfg, pcfg) {
                Ok(rep) => FrontierRow {
                    target_mean: c,
                    variance: rep.variance,
                    multipliers: rep.multipliers,
                    degenerate: rep.degenerate,
                    converged: rep.converged,
                },
                Err(_) => FrontierRow {
                    target_mean: c,
                    variance: S::zero(),
                    multipliers: None,
                    degenerate: false,
                    converged: false,
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{adjoint_law, linear_driver, tax_driver, LinearParams};
    use crate::paths::{make_grid, simulate_paths};
    use approx::assert_relative_eq;

    fn lam(l1: f64, l2: f64) -> Multipliers<f64> {
        Multipliers {
            lambda1: l1,
            lambda2: l2,
        }
    }

    fn golden_params() -> LinearParams<f64> {
        LinearParams::constant(0.0, vec![0.2], 0.2).unwrap()
    }

    fn golden_spec(y: f64, c: f64) -> ProblemSpec<f64> {
        ProblemSpec::new(Arc::new(linear_driver(golden_params())), y, c).unwrap()
    }

    fn bundle(n: usize, n_steps: usize, seed: u64) -> PathBundle<f64> {
        simulate_paths(&make_grid(1.0, n_steps).unwrap(), 1, n, seed, true).unwrap()
    }

    #[test]
    fn terminal_rule_matches_hand_values() {
        let q = vec![2.0, 2.0, 2.0];
        assert_eq!(terminal_wealth(&lam(1.0, 0.0), &q)[0], 0.0);
        assert_eq!(terminal_wealth(&lam(1.0, -4.0), &q)[1], 1.0);
        assert_eq!(terminal_wealth(&lam(2.0, -4.0), &q)[2], 0.0);
    }

    #[test]
    fn consistent_claims_have_exactly_zero_violations() {
        // deterministic spread of adjoint values across both branches
        let n = 10_000;
        let q: Vec<f64> = (0..n).map(|i| 0.05 + 3.0 * (i as f64) / n as f64).collect();
        let l = lam(2.4571796083847268, -4.4569067113386003);
        let xi = terminal_wealth(&l, &q);
        let s = kkt_verify(&xi, &q, &l, 0.0).unwrap();
        assert_eq!(s.max_violation_zero_set, 0.0);
        assert_eq!(s.max_violation_active_set, 0.0);
        assert_eq!(s.max_negative_wealth, 0.0);
        assert!(s.zero_set_fraction > 0.0 && s.zero_set_fraction < 1.0);
    }

    #[test]
    fn perturbed_claims_are_flagged() {
        let q: Vec<f64> = (0..5000).map(|i| 0.1 + (i as f64) * 1e-3).collect();
        let l = lam(1.0, -2.0);
        let mut xi = terminal_wealth(&l, &q);
        xi[7] += 1e-3;
        xi[4990] += 1e-3;
        let s = kkt_verify(&xi, &q, &l, 0.0).unwrap();
        let active = s.max_violation_active_set;
        let zero = s.max_violation_zero_set;
        assert!(
            active > 1e-4 || zero > 1e-4,
            "active {active} zero {zero}"
        );
        let mut neg = terminal_wealth(&l, &q);
        neg[3] = -0.5;
        let s = kkt_verify(&neg, &q, &l, 0.0).unwrap();
        assert_eq!(s.max_negative_wealth, 0.5);
    }

    #[test]
    fn zero_set_fraction_counts_the_right_paths() {
        // q in {1, 3}, rule active only at q = 1
        let q = vec![1.0, 3.0, 1.0, 3.0];
        let l = lam(1.0, -2.0);
        let xi = terminal_wealth(&l, &q);
        let s = kkt_verify(&xi, &q, &l, 0.0).unwrap();
        assert_eq!(s.zero_set_fraction, 0.5);
    }

    #[test]
    fn verify_rejects_bad_shapes() {
        let l = lam(1.0, 0.0);
        assert!(kkt_verify(&[1.0], &[1.0, 2.0], &l, 0.0).is_err());
        assert!(kkt_verify::<f64>(&[], &[], &l, 0.0).is_err());
        assert!(kkt_verify(&[1.0], &[1.0], &l, -1.0).is_err());
    }

    // Reference values frozen from a high-precision solve of the two
    // constraint equations under the exact lognormal adjoint law.
    const REF_LAMBDA1: f64 = 2.4571796083847268;
    const REF_LAMBDA2: f64 = -4.4569067113386003;
    const REF_VARIANCE: f64 = 0.06129304168655495;

    #[test]
    fn golden_fixture_solve_recovers_the_reference_multipliers() {
        let spec = golden_spec(0.95, 1.0);
        let paths = bundle(100_000, 100, 42);
        let rep = solve_multipliers(
            &spec,
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();

        assert!(rep.converged, "outer search did not resolve");
        assert!(!rep.degenerate);
        let m = rep.multipliers.unwrap();
        assert_relative_eq!(m.lambda1, REF_LAMBDA1, max_relative = 5e-3);
        assert_relative_eq!(m.lambda2, REF_LAMBDA2, max_relative = 5e-3);
        assert_relative_eq!(rep.variance, REF_VARIANCE, max_relative = 5e-3);

        // the claim in the report is the rule applied to its own adjoint,
        // so the optimality audit comes back exactly clean
        let kkt = rep.kkt.unwrap();
        assert_eq!(kkt.max_violation_zero_set, 0.0);
        assert_eq!(kkt.max_violation_active_set, 0.0);
        assert_eq!(kkt.max_negative_wealth, 0.0);
        // intermediate wealth is a conditional-expectation estimate, so the
        // process-wide floor may dip below the exact terminal floor of zero
        assert!(
            rep.min_wealth <= 0.0 && rep.min_wealth >= -1e-2,
            "min {} neg {}",
            rep.min_wealth,
            rep.negative_fraction
        );
        assert!(rep.negative_fraction < 0.01);
        assert!(rep.zero_set_fraction > 0.0 && rep.zero_set_fraction < 0.01);

        assert_relative_eq!(rep.mean_wealth, 1.0, epsilon = 1e-4);
        assert!(rep.budget_gap.abs() < 1e-5, "gap {}", rep.budget_gap);
        assert!(rep.outer_evaluations <= OUTER_EVALS);
        assert!(rep.max_condition_number > 1.0);
        assert!(rep.max_condition_number < 1e9);
    }

    #[test]
    fn residuals_vanish_at_the_reference_multipliers() {
        let spec = golden_spec(0.95, 1.0);
        let paths = bundle(40_000, 60, 11);
        let res = constraint_residuals(
            &lam(REF_LAMBDA1, REF_LAMBDA2),
            &spec,
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();
        assert!(res.budget_se > 0.0 && res.budget_se < 0.02);
        assert!(res.mean_se > 0.0 && res.mean_se < 0.02);
        assert!(
            res.budget_residual.abs() < 3.0 * res.budget_se,
            "budget residual {} vs se {}",
            res.budget_residual,
            res.budget_se
        );
        assert!(
            res.mean_residual.abs() < 3.0 * res.mean_se,
            "mean residual {} vs se {}",
            res.mean_residual,
            res.mean_se
        );
    }

    #[test]
    fn degenerate_target_reports_zero_variance() {
        let spec = golden_spec(1.1, 1.0);
        let paths = bundle(4_000, 10, 2);
        let rep = solve_multipliers(
            &spec,
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();
        assert!(rep.degenerate);
        assert!(rep.multipliers.is_none());
        assert!(rep.kkt.is_none());
        assert_eq!(rep.variance, 0.0);
        assert_eq!(rep.mean_wealth, 1.0);
        assert_relative_eq!(rep.initial_value, 1.0, epsilon = 1e-12);
        assert!(rep.budget_gap < 0.0);
        assert!(rep.converged);
        assert_eq!(rep.outer_evaluations, 0);
    }

    #[test]
    fn infeasible_budget_is_rejected() {
        let spec = golden_spec(0.3, 1.0);
        let paths = bundle(20_000, 10, 3);
        let err = solve_multipliers(
            &spec,
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap_err();
        match err {
            SolverError::Infeasible {
                minimal_investment,
                initial_wealth,
            } => {
                assert!(minimal_investment > 0.3);
                assert!(minimal_investment < 1.0);
                assert_eq!(initial_wealth, 0.3);
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn riskless_market_degenerates_or_rejects_exactly() {
        // no risk premium: the adjoint is identically one, so the target
        // is reachable risk-free iff the budget covers it outright
        let params = LinearParams::constant(0.0, vec![0.0], 0.2).unwrap();
        let driver: Arc<dyn WealthDriver<f64>> = Arc::new(linear_driver(params));
        let paths = bundle(2_000, 5, 4);

        let rich = ProblemSpec::new(driver.clone(), 1.2, 1.0).unwrap();
        let rep = solve_multipliers(
            &rich,
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.variance, 0.0);
        assert_eq!(rep.mean_wealth, 1.0);
        assert_eq!(rep.initial_value, 1.0);

        let poor = ProblemSpec::new(driver, 0.8, 1.0).unwrap();
        let err = solve_multipliers(
            &poor,
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap_err();
        match err {
            SolverError::Infeasible {
                minimal_investment, ..
            } => assert_eq!(minimal_investment, 1.0),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn frontier_sweeps_targets_and_flags_rows() {
        let spec = golden_spec(0.95, 1.0);
        let paths = bundle(20_000, 40, 7);
        let rows = frontier(
            &spec,
            &[0.9, 1.0, 1.05],
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        );
        assert_eq!(rows.len(), 3);
        // 0.9 is reachable risk-free from 0.95
        assert!(rows[0].degenerate);
        assert_eq!(rows[0].variance, 0.0);
        assert!(rows[0].multipliers.is_none());
        assert!(rows[0].converged);
        for row in &rows[1..] {
            assert!(!row.degenerate);
            assert!(row.converged);
            assert!(row.multipliers.is_some());
        }
        assert!(rows[1].variance > 0.0);
        assert!(
            rows[2].variance > rows[1].variance,
            "variance must grow with the target: {} vs {}",
            rows[2].variance,
            rows[1].variance
        );

        // an invalid target cannot abort the sweep
        let small = bundle(2_000, 5, 8);
        let bad = frontier(
            &spec,
            &[-1.0],
            &small,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        );
        assert!(!bad[0].converged);
        assert!(!bad[0].degenerate);
        assert_eq!(bad[0].variance, 0.0);
        assert!(bad[0].multipliers.is_none());
    }

    #[test]
    fn moment_controls_tighten_the_budget_estimate() {
        // at the reference multipliers the exact budget is 0.95; compare
        // raw and corrected estimates of it across independent ensembles
        let params = golden_params();
        let law = adjoint_law(&params, 1.0).unwrap();
        let l = lam(REF_LAMBDA1, REF_LAMBDA2);
        let mut raw_worst: f64 = 0.0;
        let mut corrected_worst: f64 = 0.0;
        for seed in 1..=4 {
            let paths = bundle(50_000, 4, seed);
            let q = linear_adjoint(&params, &paths).unwrap().terminal();
            let xi = terminal_wealth(&l, &q);
            let p = budget_integrand(&q, &xi);
            let ctl = MomentControls::new(&q, &law);
            let raw = reduce::mean(&p);
            let corrected = raw - ctl.correction(&p);
            raw_worst = raw_worst.max((raw - 0.95).abs());
            corrected_worst = corrected_worst.max((corrected - 0.95).abs());
        }
        assert!(
            corrected_worst < raw_worst,
            "corrected {corrected_worst} vs raw {raw_worst}"
        );
        assert!(corrected_worst < 2.5e-3, "corrected {corrected_worst}");
    }

    #[test]
    fn lagrangian_is_minimized_by_the_consistent_claim() {
        let params = golden_params();
        let driver = linear_driver(params.clone());
        let paths = bundle(20_000, 40, 9);
        let l = lam(REF_LAMBDA1, REF_LAMBDA2);
        let q = linear_adjoint(&params, &paths).unwrap().terminal();
        let xi = terminal_wealth(&l, &q);
        let rcfg = RegressionConfig::default();
        let best = lagrangian(&xi, &l, &driver, &paths, &rcfg).unwrap();

        let scaled: Vec<f64> = xi.iter().map(|&v| 1.25 * v).collect();
        let shifted: Vec<f64> = xi.iter().map(|&v| v + 0.1).collect();
        let capped: Vec<f64> = xi.iter().map(|&v| v.min(0.4)).collect();
        let flat = vec![1.0; xi.len()];
        for (name, claim) in [
            ("scaled", &scaled),
            ("shifted", &shifted),
            ("capped", &capped),
            ("flat", &flat),
        ] {
            let val = lagrangian(claim, &l, &driver, &paths, &rcfg).unwrap();
            assert!(
                val > best + 1e-3,
                "{name} claim beat the rule: {val} vs {best}"
            );
        }
    }

    #[test]
    fn taxed_market_solve_satisfies_the_rule() {
        let params = golden_params();
        let driver: Arc<dyn WealthDriver<f64>> =
            Arc::new(tax_driver(params, 0.3).unwrap());
        let spec = ProblemSpec::new(driver, 0.95, 1.0).unwrap();
        let paths = bundle(10_000, 25, 5);
        let rep = solve_multipliers(
            &spec,
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();
        assert!(rep.converged);
        assert!(!rep.degenerate);
        let m = rep.multipliers.unwrap();
        assert!(m.lambda1 > 0.0);
        assert!(m.lambda2 < 0.0);
        assert!(rep.variance > 0.0);
        let kkt = rep.kkt.unwrap();
        assert_eq!(kkt.max_violation_zero_set, 0.0);
        assert_eq!(kkt.max_violation_active_set, 0.0);
        // at this coarse path count the regression extrapolates poorly on
        // tail paths, so the process floor is only required to stay bounded
        assert!(
            rep.min_wealth > -1.0,
            "min {} neg {}",
            rep.min_wealth,
            rep.negative_fraction
        );
        assert!(
            rep.negative_fraction < 0.05,
            "neg {}",
            rep.negative_fraction
        );
        // no moment corrections here: the mean constraint is matched up to
        // the drift of the last adjoint refresh
        assert_relative_eq!(rep.mean_wealth, 1.0, epsilon = 5e-4);
        assert!(rep.budget_gap.abs() < 1e-5, "gap {}", rep.budget_gap);
    }

    #[test]
    fn investment_floor_is_sharp_for_the_linear_market() {
        let spec = golden_spec(0.95, 1.0);
        let paths = bundle(20_000, 10, 6);
        let bound = min_investment(
            &spec,
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();
        assert!(bound.sharp);
        let q = linear_adjoint(&golden_params(), &paths).unwrap().terminal();
        let (q_min, _) = reduce::extremes(&q);
        assert_eq!(bound.minimal_investment, q_min);
    }

    #[test]
    fn investment_bound_for_frictions_is_flagged_as_upper() {
        let params = golden_params();
        let driver: Arc<dyn WealthDriver<f64>> =
            Arc::new(tax_driver(params, 0.3).unwrap());
        let spec = ProblemSpec::new(driver, 0.95, 1.0).unwrap();
        let paths = bundle(5_000, 15, 12);
        let bound = min_investment(
            &spec,
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();
        assert!(!bound.sharp);
        assert!(bound.minimal_investment.is_finite());
        assert!(bound.minimal_investment > 0.4);
        assert!(bound.minimal_investment < 1.05);
    }

    #[test]
    fn spec_validation_rejects_bad_problems() {
        let driver: Arc<dyn WealthDriver<f64>> = Arc::new(linear_driver(golden_params()));
        assert!(ProblemSpec::new(driver.clone(), 0.0, 1.0).is_err());
        assert!(ProblemSpec::new(driver.clone(), 1.0, -1.0).is_err());
        assert!(ProblemSpec::new(driver.clone(), f64::NAN, 1.0).is_err());

        // dimension mismatch between the model and the ensemble
        let wide = LinearParams::constant(0.0, vec![0.1, 0.1], 0.2).unwrap();
        let spec = ProblemSpec::new(Arc::new(linear_driver(wide)), 0.95, 1.0).unwrap();
        let paths = bundle(2_000, 5, 10);
        assert!(solve_multipliers(
            &spec,
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default()
        )
        .is_err());
    }

    #[test]
    fn single_precision_smoke() {
        let params = LinearParams::constant(0.0f32, vec![0.2], 0.2).unwrap();
        let spec = ProblemSpec::new(Arc::new(linear_driver(params)), 0.95f32, 1.0).unwrap();
        let grid = make_grid(1.0f32, 20).unwrap();
        let paths = simulate_paths(&grid, 1, 4_000, 13, true).unwrap();
        let rep = solve_multipliers(
            &spec,
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();
        assert!(rep.converged, "float pinch should count as resolved");
        let m = rep.multipliers.unwrap();
        assert!(m.lambda1.is_finite() && m.lambda1 > 0.0);
        assert!(rep.variance.is_finite() && rep.variance > 0.0);
        assert!(rep.negative_fraction < 0.01);
    }
}
