//! Forward adjoint process and the coupled forward-backward loop. The
//! adjoint is the exponential martingale-like weight driven by the
//! gradient of the wealth driver; it is simulated in log form so paths
//! stay positive by construction. Around it, `solve_coupled` sweeps:
//! simulate the adjoint along the current backward solution, refresh the
//! terminal data through a rule, and re-solve. For a linear driver the
//! gradient never moves, so the loop closes after one sweep with an
//! exactly zero change metric.

use crate::bsde::{solve_bsde, BsdeSolution, RegressionConfig, StateFeatures, StateProcess};
use crate::drivers::{LinearParams, WealthDriver};
use crate::dual::{terminal_wealth, Multipliers};
use crate::error::{Result, SolverError};
use crate::paths::{PathBundle, CHUNK};
use crate::reduce;
use crate::scalar::Scalar;
use rayon::prelude::*;
use std::sync::Arc;

/// Simulated adjoint ensemble, stored as log levels, step-major (N+1, n).
/// Level paths start at exactly one because log starts at exactly zero.
pub struct AdjointPath<S: Scalar> {
    log_q: Vec<S>,
    n_steps: usize,
    n_paths: usize,
}

impl<S: Scalar> std::fmt::Debug for AdjointPath<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AdjointPath")
            .field("n_steps", &self.n_steps)
            .field("n_paths", &self.n_paths)
            .finish_non_exhaustive()
    }
}

impl<S: Scalar> AdjointPath<S> {
    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    #[inline]
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Log levels at one step across paths.
    #[inline]
    pub fn log_levels(&self, step: usize) -> &[S] {
        &self.log_q[step * self.n_paths..(step + 1) * self.n_paths]
    }

    /// Terminal levels, exponentiated on demand.
    pub fn terminal(&self) -> Vec<S> {
        let row = self.log_levels(self.n_steps);
        let mut out = vec![S::zero(); self.n_paths];
        out.par_chunks_mut(CHUNK)
            .zip(row.par_chunks(CHUNK))
            .for_each(|(oc, rc)| {
                for (o, &r) in oc.iter_mut().zip(rc) {
                    *o = r.exp();
                }
            });
        out
    }

    /// Log levels as a one-coordinate conditioning state for regression.
    pub fn state_process(&self) -> Result<StateProcess<S>> {
        StateProcess::new(self.log_q.clone(), 1, self.n_steps, self.n_paths)
    }
}

/// Log-Euler accumulation shared by every adjoint simulation:
/// log q_{k+1} = log q_k + (f_x - ||f_z||^2 / 2) dt + f_z . dW_k, with
/// the per-path coefficients supplied by `coeffs(step, path, fz, ws)`
/// returning f_x. One shared core keeps coefficient-equal simulations
/// bitwise identical regardless of how the coefficients are produced.
fn accumulate<S, P>(paths: &PathBundle<S>, ws_len: usize, coeffs: P) -> Result<AdjointPath<S>>
where
    S: Scalar,
    P: Fn(usize, usize, &mut [S], &mut [S]) -> S + Sync,
{
    let n = paths.n_paths();
    let d = paths.dim();
    let n_steps = paths.grid().n_steps();
    let dt = paths.grid().dt();
    // stay clear of level overflow when the log is exponentiated
    let limit = S::max_value().ln() * S::lit(0.98);
    let mut log_q = vec![S::zero(); (n_steps + 1) * n];
    for k in 0..n_steps {
        let dw: Vec<&[S]> = (0..d).map(|j| paths.dw(k, j)).collect();
        let (head, tail) = log_q.split_at_mut((k + 1) * n);
        let cur = &head[k * n..];
        let ok = tail[..n]
            .par_chunks_mut(CHUNK)
            .enumerate()
            .map(|(c, nc)| {
                let lo = c * CHUNK;
                let mut fz = vec![S::zero(); d];
                let mut ws = vec![S::zero(); ws_len];
                let mut fine = true;
                for (ii, out) in nc.iter_mut().enumerate() {
                    let i = lo + ii;
                    let fx = coeffs(k, i, &mut fz, &mut ws);
                    let mut drift = fx;
                    let mut noise = S::zero();
                    for (j, w) in dw.iter().enumerate() {
                        drift = drift - S::half() * fz[j] * fz[j];
                        noise = noise + fz[j] * w[i];
                    }
                    let v = cur[i] + drift * dt + noise;
                    *out = v;
                    fine &= v.is_finite() && v < limit;
                }
                fine
            })
            .reduce(|| true, |a, b| a && b);
        if !ok {
            return Err(SolverError::NumericalBlowup(format!(
                "adjoint log level overflowed at step {}",
                k + 1
            )));
        }
    }
    Ok(AdjointPath {
        log_q,
        n_steps,
        n_paths: n,
    })
}

/// Adjoint ensemble of the linear market: coefficients f_x = -r(t) and
/// f_z = -theta(t), independent of any backward solution.
pub fn linear_adjoint<S: Scalar>(
    params: &LinearParams<S>,
    paths: &PathBundle<S>,
) -> Result<AdjointPath<S>> {
    if params.dim() != paths.dim() {
        return Err(SolverError::invalid_argument(format!(
            "parameter dimension {} does not match path dimension {}",
            params.dim(),
            paths.dim()
        )));
    }
    let grid = paths.grid();
    accumulate(paths, 0, |k, _i, fz, _ws| {
        let t = grid.time(k);
        params.risk_premium().write_into(t, fz);
        for v in fz.iter_mut() {
            *v = -*v;
        }
        -params.rate().at(t)
    })
}

/// Adjoint ensemble along a backward solution: coefficients are the
/// driver gradient evaluated pathwise at (X_k, Z_k). Kinked drivers are
/// fine here because their gradient selection is still defined. For a
/// linear driver this reproduces `linear_adjoint` bit for bit.
pub fn simulate_adjoint<S: Scalar>(
    dr: &dyn WealthDriver<S>,
    sol: &BsdeSolution<S>,
    paths: &PathBundle<S>,
) -> Result<AdjointPath<S>> {
    if sol.n_paths() != paths.n_paths()
        || sol.grid().n_steps() != paths.grid().n_steps()
        || sol.dim() != paths.dim()
    {
        return Err(SolverError::invalid_argument(
            "backward solution does not match the path bundle",
        ));
    }
    let grid = paths.grid();
    accumulate(paths, dr.workspace_len(), |k, i, fz, ws| {
        dr.grad(grid.time(k), sol.x_at(k)[i], sol.z_row(k, i), fz, ws)
    })
}

/// Sweep control for the coupled forward-backward iteration.
#[derive(Debug, Clone)]
pub struct PicardConfig<S: Scalar> {
    pub max_iterations: usize,
    /// Convergence bound on the sweep-to-sweep change metric.
    pub tolerance: S,
    /// Fraction of the fresh terminal data blended in per sweep; 1 keeps
    /// the update undamped and preserves terminal data bit for bit.
    pub damping: S,
}

impl<S: Scalar> Default for PicardConfig<S> {
    fn default() -> Self {
        PicardConfig {
            max_iterations: 50,
            tolerance: S::lit(1e-4),
            damping: S::one(),
        }
    }
}

impl<S: Scalar> PicardConfig<S> {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(SolverError::invalid_argument(
                "sweep budget must be at least one iteration",
            ));
        }
        if !(self.tolerance > S::zero()) || !self.tolerance.is_finite() {
            return Err(SolverError::invalid_argument(
                "tolerance must be finite and positive",
            ));
        }
        if !(self.damping > S::zero() && self.damping <= S::one()) {
            return Err(SolverError::invalid_argument("damping must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// How terminal wealth is produced from the simulated adjoint each sweep.
pub enum TerminalRule<'a, S: Scalar> {
    /// Exogenous terminal data, identical every sweep.
    Fixed(&'a [S]),
    /// Optimality rule xi = (-(lambda1 q + lambda2))^+ / 2 applied to the
    /// current adjoint terminal values.
    Dual(Multipliers<S>),
}

impl<S: Scalar> TerminalRule<'_, S> {
    fn terminal(&self, adj: &AdjointPath<S>) -> Vec<S> {
        match self {
            TerminalRule::Fixed(xs) => xs.to_vec(),
            TerminalRule::Dual(lam) => terminal_wealth(lam, &adj.terminal()),
        }
    }
}

/// Converged (or stalled) coupled system: the adjoint ensemble and the
/// backward solution are mutually consistent up to `metric`. With
/// undamped sweeps the solution's terminal row equals the rule applied
/// to `adjoint` exactly.
pub struct CoupledSolution<S: Scalar> {
    pub adjoint: AdjointPath<S>,
    pub solution: BsdeSolution<S>,
    pub iterations: usize,
    pub converged: bool,
    /// Final sweep-to-sweep change: sup over steps of the RMS change in
    /// X and in Z.
    pub metric: f64,
}

/// Conditioning variables for one sweep. The adjoint coordinate always
/// comes from the frozen linear base: tying it to the re-simulated
/// adjoint would make the regression basis itself move with the iterate
/// and the sweep map would stall at that jitter's noise floor instead
/// of contracting.
fn regression_state<S: Scalar>(
    features: StateFeatures,
    base: &AdjointPath<S>,
    base_state: &Arc<StateProcess<S>>,
    prior: Option<&BsdeSolution<S>>,
) -> Result<Arc<StateProcess<S>>> {
    let n = base.n_paths;
    let n_steps = base.n_steps;
    match (features, prior) {
        // no wealth iterate exists before the first sweep
        (StateFeatures::AdjointState, _) | (_, None) => Ok(base_state.clone()),
        (StateFeatures::WealthProxy, Some(sol)) => {
            let mut vals = Vec::with_capacity((n_steps + 1) * n);
            for k in 0..=n_steps {
                vals.extend_from_slice(sol.x_at(k));
            }
            Ok(Arc::new(StateProcess::new(vals, 1, n_steps, n)?))
        }
        (StateFeatures::Both, Some(sol)) => {
            let mut vals = Vec::with_capacity((n_steps + 1) * 2 * n);
            for k in 0..=n_steps {
                vals.extend_from_slice(base.log_levels(k));
                vals.extend_from_slice(sol.x_at(k));
            }
            Ok(Arc::new(StateProcess::new(vals, 2, n_steps, n)?))
        }
    }
}

/// Sup over steps of the RMS change between two backward solutions.
fn sweep_change<S: Scalar>(old: &BsdeSolution<S>, new: &BsdeSolution<S>) -> S {
    let n_steps = old.grid().n_steps();
    let mut worst = S::zero();
    for k in 0..=n_steps {
        worst = worst.max(reduce::mean_sq_diff(old.x_at(k), new.x_at(k)).sqrt());
    }
    for k in 0..n_steps {
        worst = worst.max(reduce::mean_sq_diff(old.z_block(k), new.z_block(k)).sqrt());
    }
    worst
}

/// Solves the coupled system by damped Picard sweeps. The first sweep
/// seeds the adjoint from the driver's linear base; each following sweep
/// re-simulates the adjoint along the current backward solution,
/// refreshes the terminal data, and re-solves against the frozen
/// linear-base conditioning state. Exhausting the budget is reported
/// through `converged`, not an error, so callers can inspect the
/// stalled state.
pub fn solve_coupled<S: Scalar>(
    dr: &dyn WealthDriver<S>,
    rule: &TerminalRule<'_, S>,
    paths: &PathBundle<S>,
    rcfg: &RegressionConfig,
    pcfg: &PicardConfig<S>,
) -> Result<CoupledSolution<S>> {
    pcfg.validate()?;
    if let TerminalRule::Fixed(xs) = rule {
        if xs.len() != paths.n_paths() {
            return Err(SolverError::invalid_argument(format!(
                "fixed terminal data has {} entries for {} paths",
                xs.len(),
                paths.n_paths()
            )));
        }
    }

    let base = linear_adjoint(dr.base_params(), paths)?;
    let base_state = Arc::new(base.state_process()?);
    let mut terminal = rule.terminal(&base);
    let state = regression_state(rcfg.state_features, &base, &base_state, None)?;
    let mut sol = solve_bsde(dr, &terminal, paths, state, rcfg)?;

    let mut iterations = 0;
    let mut metric = f64::INFINITY;
    let mut converged = false;
    let mut adj = None;
    for it in 1..=pcfg.max_iterations {
        let adj_new = simulate_adjoint(dr, &sol, paths)?;
        let mut term_new = rule.terminal(&adj_new);
        if pcfg.damping < S::one() {
            let blend = pcfg.damping;
            let keep = S::one() - blend;
            term_new
                .par_chunks_mut(CHUNK)
                .zip(terminal.par_chunks(CHUNK))
                .for_each(|(tn, to)| {
                    for (a, &b) in tn.iter_mut().zip(to) {
                        *a = blend * *a + keep * b;
                    }
                });
        }
        let state = regression_state(rcfg.state_features, &base, &base_state, Some(&sol))?;
        let sol_new = solve_bsde(dr, &term_new, paths, state, rcfg)?;
        let change = sweep_change(&sol, &sol_new);
        adj = Some(adj_new);
        terminal = term_new;
        sol = sol_new;
        iterations = it;
        metric = change.as_f64();
        if change <= pcfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(CoupledSolution {
        adjoint: adj.expect("sweep budget is validated to be at least one"),
        solution: sol,
        iterations,
        converged,
        metric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{linear_driver, tax_driver, LinearParams};
    use crate::paths::{make_grid, simulate_paths};
    use approx::assert_relative_eq;

    fn bundle(n: usize, n_steps: usize, seed: u64) -> PathBundle<f64> {
        simulate_paths(&make_grid(1.0, n_steps).unwrap(), 1, n, seed, true).unwrap()
    }

    #[test]
    fn unit_coefficients_keep_the_adjoint_at_one() {
        let paths = bundle(2048, 10, 7);
        let p = LinearParams::constant(0.0, vec![0.0], 1.0).unwrap();
        let adj = linear_adjoint(&p, &paths).unwrap();
        assert!(adj.terminal().iter().all(|&q| q == 1.0));
        assert!(adj.log_levels(5).iter().all(|&l| l == 0.0));
    }

    #[test]
    fn deterministic_discounting_is_exact() {
        let paths = bundle(512, 50, 3);
        let p = LinearParams::constant(0.05, vec![0.0], 1.0).unwrap();
        let adj = linear_adjoint(&p, &paths).unwrap();
        for &q in &adj.terminal() {
            assert_relative_eq!(q, (-0.05f64).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn lognormal_moments_match_the_closed_form() {
        // r = 0, theta = 0.2, T = 1: E[q] = 1, E[q^2] = e^{0.04}
        let n = 100_000;
        let paths = bundle(n, 100, 41);
        let p = LinearParams::constant(0.0, vec![0.2], 1.0).unwrap();
        let adj = linear_adjoint(&p, &paths).unwrap();
        let q = adj.terminal();
        let mean = q.iter().sum::<f64>() / n as f64;
        let mean2 = q.iter().map(|&v| v * v).sum::<f64>() / n as f64;
        // 4 plain-estimator standard errors; antithetic pairing only helps
        assert!((mean - 1.0).abs() < 4.0 * 6.5e-4, "mean {mean}");
        assert!(
            (mean2 - 0.04f64.exp()).abs() < 4.0 * 1.4e-3,
            "second moment {mean2}"
        );
    }

    #[test]
    fn simulated_and_direct_linear_adjoints_are_bitwise_equal() {
        let paths = bundle(4096, 20, 99);
        let p = LinearParams::constant(0.03, vec![0.25], 1.0).unwrap();
        let dr = linear_driver(p.clone());
        let xi = vec![1.0; 4096];
        let state = Arc::new(StateProcess::from_brownian(&paths));
        let sol = solve_bsde(&dr, &xi, &paths, state, &RegressionConfig::default()).unwrap();
        let direct = linear_adjoint(&p, &paths).unwrap();
        let along = simulate_adjoint(&dr, &sol, &paths).unwrap();
        assert_eq!(direct.log_q, along.log_q);
        // and the state view exposes the same rows
        let sp = direct.state_process().unwrap();
        assert_eq!(sp.coord(7, 0), direct.log_levels(7));
    }

    #[test]
    fn coupled_linear_solve_closes_in_one_sweep() {
        let paths = bundle(8192, 20, 17);
        let p = LinearParams::constant(0.02, vec![0.2], 1.0).unwrap();
        let dr = linear_driver(p);
        let lam = Multipliers {
            lambda1: 2.0,
            lambda2: -4.0,
        };
        let out = solve_coupled(
            &dr,
            &TerminalRule::Dual(lam),
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.metric, 0.0);
        let expected = terminal_wealth(&lam, &out.adjoint.terminal());
        assert_eq!(out.solution.terminal(), &expected[..]);
    }

    #[test]
    fn positive_mean_multiplier_zeroes_everything() {
        // lambda2 > 0 keeps the rule argument positive: xi is identically
        // zero and so is the whole backward solution
        let paths = bundle(2048, 10, 5);
        let p = LinearParams::constant(0.0, vec![0.2], 1.0).unwrap();
        let dr = tax_driver(p, 0.2).unwrap();
        let lam = Multipliers {
            lambda1: 1.0,
            lambda2: 1.0,
        };
        let out = solve_coupled(
            &dr,
            &TerminalRule::Dual(lam),
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.solution.x0(), 0.0);
        assert_eq!(reduce::max_abs(out.solution.x_at(5)), 0.0);
        assert_eq!(reduce::max_abs(out.solution.z_block(5)), 0.0);
    }

    #[test]
    fn coupled_tax_solve_converges() {
        let n = 10_000;
        let paths = bundle(n, 50, 23);
        let p = LinearParams::constant(0.0, vec![0.2], 1.0).unwrap();
        let dr = tax_driver(p.clone(), 0.1).unwrap();
        let lam = Multipliers {
            lambda1: 2.0,
            lambda2: -4.0,
        };
        let out = solve_coupled(
            &dr,
            &TerminalRule::Dual(lam),
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();
        assert!(out.converged, "metric {}", out.metric);
        assert!(out.metric <= 1e-4);
        assert!(out.solution.x0() > 0.0);
        // the nonlinear driver actually moved the adjoint
        let lin = linear_adjoint(&p, &paths).unwrap();
        assert_ne!(lin.log_q, out.adjoint.log_q);
    }

    #[test]
    fn fixed_rule_holds_terminal_data() {
        let n = 4096;
        let paths = bundle(n, 10, 31);
        let p = LinearParams::constant(0.01, vec![0.2], 1.0).unwrap();
        let dr = tax_driver(p, 0.2).unwrap();
        let levels = paths.brownian_levels();
        let xi: Vec<f64> = levels[10 * n..11 * n]
            .iter()
            .map(|&w| (0.5 + 0.2 * w).max(0.0))
            .collect();
        let out = solve_coupled(
            &dr,
            &TerminalRule::Fixed(&xi),
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert_eq!(out.solution.terminal(), &xi[..]);
    }

    #[test]
    fn sweep_config_is_validated() {
        let paths = bundle(256, 5, 1);
        let p = LinearParams::constant(0.0, vec![0.1], 1.0).unwrap();
        let dr = linear_driver(p);
        let xi = vec![1.0; 256];
        let rcfg = RegressionConfig::default();
        for bad in [
            PicardConfig {
                max_iterations: 0,
                ..PicardConfig::default()
            },
            PicardConfig {
                tolerance: 0.0,
                ..PicardConfig::default()
            },
            PicardConfig {
                damping: 0.0,
                ..PicardConfig::default()
            },
            PicardConfig {
                damping: 1.5,
                ..PicardConfig::default()
            },
        ] {
            assert!(solve_coupled(&dr, &TerminalRule::Fixed(&xi), &paths, &rcfg, &bad).is_err());
        }
        assert!(solve_coupled(
            &dr,
            &TerminalRule::Fixed(&vec![1.0; 7]),
            &paths,
            &rcfg,
            &PicardConfig::default()
        )
        .is_err());
    }

    #[test]
    fn damped_sweeps_still_converge() {
        let n = 4096;
        let paths = bundle(n, 20, 13);
        let p = LinearParams::constant(0.0, vec![0.2], 1.0).unwrap();
        let dr = tax_driver(p, 0.15).unwrap();
        let lam = Multipliers {
            lambda1: 2.0,
            lambda2: -4.0,
        };
        let pcfg = PicardConfig {
            damping: 0.5,
            ..PicardConfig::default()
        };
        let out = solve_coupled(
            &dr,
            &TerminalRule::Dual(lam),
            &paths,
            &RegressionConfig::default(),
            &pcfg,
        )
        .unwrap();
        assert!(out.converged, "metric {}", out.metric);
    }

    #[test]
    fn alternate_state_features_stay_solvable() {
        let n = 4096;
        let paths = bundle(n, 20, 57);
        let p = LinearParams::constant(0.0, vec![0.2], 1.0).unwrap();
        let dr = tax_driver(p, 0.1).unwrap();
        let lam = Multipliers {
            lambda1: 2.0,
            lambda2: -4.0,
        };
        let reference = solve_coupled(
            &dr,
            &TerminalRule::Dual(lam),
            &paths,
            &RegressionConfig::default(),
            &PicardConfig::default(),
        )
        .unwrap();
        for features in [StateFeatures::WealthProxy, StateFeatures::Both] {
            let rcfg = RegressionConfig {
                state_features: features,
                ..RegressionConfig::default()
            };
            let out = solve_coupled(
                &dr,
                &TerminalRule::Dual(lam),
                &paths,
                &rcfg,
                &PicardConfig::default(),
            )
            .unwrap();
            assert!(out.metric.is_finite());
            assert_relative_eq!(
                out.solution.x0(),
                reference.solution.x0(),
                max_relative = 0.05
            );
        }
    }

    #[test]
    fn runaway_gradient_is_reported() {
        struct Runaway(LinearParams<f64>);
        impl WealthDriver<f64> for Runaway {
            fn dim(&self) -> usize {
                1
            }
            fn smooth(&self) -> bool {
                true
            }
            fn lipschitz_bound(&self) -> f64 {
                1e7
            }
            fn base_params(&self) -> &LinearParams<f64> {
                &self.0
            }
            fn name(&self) -> &'static str {
                "runaway"
            }
            fn eval(&self, _t: f64, x: f64, _z: &[f64], _ws: &mut [f64]) -> f64 {
                1e7 * x
            }
            fn grad(&self, _t: f64, _x: f64, _z: &[f64], fz: &mut [f64], _ws: &mut [f64]) -> f64 {
                fz.fill(0.0);
                1e7
            }
        }
        let paths = bundle(512, 10, 2);
        let p = LinearParams::constant(0.0, vec![0.0], 1.0).unwrap();
        let dr = linear_driver(p.clone());
        let xi = vec![1.0; 512];
        let state = Arc::new(StateProcess::from_brownian(&paths));
        let sol = solve_bsde(&dr, &xi, &paths, state, &RegressionConfig::default()).unwrap();
        match simulate_adjoint(&Runaway(p), &sol, &paths) {
            Err(SolverError::NumericalBlowup(_)) => {}
            other => panic!("expected NumericalBlowup, got {other:?}"),
        }
    }

    #[test]
    fn single_precision_smoke() {
        let paths = simulate_paths(&make_grid(1.0f32, 10).unwrap(), 1, 512, 5, true).unwrap();
        let p = LinearParams::constant(0.05f32, vec![0.2], 1.0).unwrap();
        let adj = linear_adjoint(&p, &paths).unwrap();
        let mean = adj.terminal().iter().sum::<f32>() / 512.0;
        assert!((mean - (-0.05f32).exp()).abs() < 0.02, "mean {mean}");
    }
}
