//! The consensus-based difference-of-monotone Douglas-Rachford solver,
//! termination, continuation sweeps and coarse-to-fine refinement.
//!
//! One outer iteration of the fixed-point map on the lifted consensus
//! variables `z_1..z_p`:
//!
//! ```text
//! x     <- J_{alpha E}(z_bar)
//! z_i   <- z_i - x + J_{p*alpha*F_i}(2x - z_i + p*alpha*G_i(x))   (parallel)
//! z_bar <- (1/p) * sum_i z_i
//! ```
//!
//! `x` is the shadow sequence and converges to a zero of
//! `E + sum_i (F_i - G_i)` when one exists. Iteration stops on the relative
//! change of `x`; the quality of a solution is reported afterwards as the
//! normalized residual of the zero-finding problem, which is too expensive
//! to evaluate every iteration.
//!
//! Consensus updates run in parallel over pairs; the consensus average is a
//! fixed-order reduction, so results are bit-identical under any schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{split_network, DmSplitting, NetworkSpec, ShiftPolicy};
use crate::error::{Error, Result};
use crate::signal::{LiftedSignal, Signal, TimeGrid};

/// Hyperparameters of the solver. `fs` and `duration_ms` pin the grid the
/// splitting must live on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Step size of the outer iteration.
    pub alpha: f64,
    /// Samples per millisecond.
    pub fs: f64,
    pub duration_ms: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Relative-change termination tolerance.
    #[serde(default = "default_epsilon_tol")]
    pub epsilon_tol: f64,
    /// Relative tolerance of the inner branch resolvents.
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    #[serde(default = "default_inner_max")]
    pub inner_max: usize,
    /// Evaluate the normalized residual every this many iterations;
    /// 0 checks only at termination.
    #[serde(default)]
    pub residual_check_every: usize,
}

fn default_max_iter() -> usize {
    1000
}
fn default_epsilon_tol() -> f64 {
    1e-6
}
fn default_inner_tol() -> f64 {
    crate::operators::INNER_TOL_DEFAULT
}
fn default_inner_max() -> usize {
    crate::operators::INNER_MAX_DEFAULT
}

impl SolverConfig {
    pub fn new(alpha: f64, fs: f64, duration_ms: f64) -> Self {
        SolverConfig {
            alpha,
            fs,
            duration_ms,
            max_iter: default_max_iter(),
            epsilon_tol: default_epsilon_tol(),
            inner_tol: default_inner_tol(),
            inner_max: default_inner_max(),
            residual_check_every: 0,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.duration_ms, self.fs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.epsilon_tol.is_finite() && self.epsilon_tol > 0.0) {
            return Err(Error::config(format!(
                "epsilon_tol must be positive, got {}",
                self.epsilon_tol
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter must be at least 1"));
        }
        if !(self.inner_tol.is_finite() && self.inner_tol > 0.0) || self.inner_max == 0 {
            return Err(Error::config("invalid inner resolvent controls"));
        }
        self.grid()?;
        Ok(())
    }
}

/// Per-iteration convergence record.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub rel_change: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
}

/// Mutable state of the outer iteration: the current estimate `x`, the `p`
/// consensus variables, their average and the convergence history. Warm
/// states for the inner branch resolvents ride along so that restarting the
/// iteration from a state stays deterministic.
#[derive(Debug, Clone)]
pub struct SolverState {
    x: LiftedSignal,
    z: Vec<LiftedSignal>,
    z_bar: LiftedSignal,
    iter: usize,
    history: Vec<IterationRecord>,
    warm: Vec<Option<Signal>>,
}

impl SolverState {
    /// Seeds the state from an initial guess for `x`.
    ///
    /// The consensus variables are placed on the manifold the fixed point
    /// lives on: `z_i = x - p*alpha*(F_i(x) - G_i(x))`. When `init` is an
    /// exact solution this is an exact fixed point of the iteration, so
    /// warm restarts from a converged solution terminate immediately.
    pub fn new(split: &DmSplitting, alpha: f64, init: &LiftedSignal) -> Result<Self> {
        split
            .grid()
            .check_same(&init.grid(), "solver initialization")?;
        if init.num_parts() != split.num_neurons() {
            return Err(Error::config(format!(
                "initial guess has {} parts, the splitting needs {}",
                init.num_parts(),
                split.num_neurons()
            )));
        }
        let p = split.num_pairs();
        let gamma = p as f64 * alpha;
        let z: Vec<LiftedSignal> = split
            .pairs()
            .iter()
            .map(|pair| {
                let mut zi = init.clone();
                zi.axpy(-gamma, &pair.f.apply(init));
                zi.axpy(gamma, &pair.g.apply(init));
                zi
            })
            .collect();
        let z_bar = consensus_average(&z);
        Ok(SolverState {
            x: init.clone(),
            z,
            z_bar,
            iter: 0,
            history: Vec::new(),
            warm: vec![None; p],
        })
    }

    pub fn x(&self) -> &LiftedSignal {
        &self.x
    }

    pub fn z(&self) -> &[LiftedSignal] {
        &self.z
    }

    pub fn z_bar(&self) -> &LiftedSignal {
        &self.z_bar
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    pub fn history(&self) -> &[IterationRecord] {
        &self.history
    }
}

fn consensus_average(z: &[LiftedSignal]) -> LiftedSignal {
    let mut avg = z[0].clone();
    for zi in &z[1..] {
        avg.axpy(1.0, zi);
    }
    avg.scale(1.0 / z.len() as f64);
    avg
}

/// Relative change `||x_new - x_old|| / max(||x_old||, 1e-14)`.
pub fn relative_change(x_new: &LiftedSignal, x_old: &LiftedSignal) -> f64 {
    let diff = x_new.distance(x_old).expect("same shape");
    diff / x_old.norm().max(1e-14)
}

fn step_in_place(state: &mut SolverState, split: &DmSplitting, cfg: &SolverConfig) -> Result<f64> {
    let p = split.num_pairs();
    let gamma = p as f64 * cfg.alpha;
    let outer_iter = state.iter + 1;

    let x_new = split.resolvent_e(cfg.alpha, &state.z_bar);

    let updates: Vec<Result<(LiftedSignal, Option<Signal>)>> = split
        .pairs()
        .par_iter()
        .zip(state.z.par_iter().zip(state.warm.par_iter()))
        .map(|(pair, (zi, warm))| {
            // u = 2x - z_i + p*alpha*G_i(x)
            let mut u = pair.g.apply(&x_new);
            u.scale(gamma);
            u.axpy(2.0, &x_new);
            u.axpy(-1.0, zi);
            let (j, warm_new) = pair
                .f
                .resolvent(gamma, &u, warm.as_ref(), cfg.inner_tol, cfg.inner_max)
                .map_err(|e| match e {
                    Error::InnerNoConvergence {
                        branch,
                        tol,
                        max_iter,
                        last_residual,
                        ..
                    } => Error::InnerNoConvergence {
                        branch: format!("{} ({branch})", pair.provenance),
                        tol,
                        max_iter,
                        last_residual,
                        outer_iter: Some(outer_iter),
                    },
                    other => other,
                })?;
            let mut z_new = zi.clone();
            z_new.axpy(-1.0, &x_new);
            z_new.axpy(1.0, &j);
            Ok((z_new, warm_new))
        })
        .collect();

    for (i, update) in updates.into_iter().enumerate() {
        let (z_new, warm_new) = update?;
        state.z[i] = z_new;
        if warm_new.is_some() {
            state.warm[i] = warm_new;
        }
    }
    state.z_bar = consensus_average(&state.z);

    let rel = relative_change(&x_new, &state.x);
    state.x = x_new;
    state.iter = outer_iter;
    let residual = if cfg.residual_check_every > 0 && outer_iter % cfg.residual_check_every == 0 {
        Some(split.zfp_residual(&state.x).1)
    } else {
        None
    };
    state.history.push(IterationRecord {
        iter: outer_iter,
        rel_change: rel,
        residual,
    });
    Ok(rel)
}

/// One outer iteration, returning the updated state. Deterministic given the
/// state, including under parallel consensus updates.
pub fn dm_dr_step(
    state: &SolverState,
    split: &DmSplitting,
    cfg: &SolverConfig,
) -> Result<SolverState> {
    let mut next = state.clone();
    step_in_place(&mut next, split, cfg)?;
    Ok(next)
}

/// A converged (or truncated) solve.
#[derive(Debug, Clone)]
pub struct Solution {
    /// Membrane voltage trajectories, one per neuron.
    pub voltages: Vec<Signal>,
    pub converged: bool,
    pub iterations: usize,
    pub final_relative_change: f64,
    /// Normalized residual `||E(x) + sum(F_i - G_i)(x)|| / L` of the
    /// returned solution.
    pub final_normalized_residual: f64,
    /// The configuration that produced this solution.
    pub config: SolverConfig,
    pub history: Vec<IterationRecord>,
}

impl Solution {
    pub fn lifted(&self) -> LiftedSignal {
        LiftedSignal::from_raw(self.voltages.clone())
    }
}

/// Runs the iteration until the relative change of `x` drops below
/// `epsilon_tol` or `max_iter` is reached. `init` (when given) seeds the
/// state via [`SolverState::new`]; otherwise the lifted resting potential
/// does.
pub fn solve(split: &DmSplitting, cfg: &SolverConfig, init: Option<&LiftedSignal>) -> Result<Solution> {
    solve_with(split, cfg, init, |_, _| {})
}

/// [`solve`] with an observer called after every iteration with the current
/// iteration number and estimate; used for iterate snapshots.
pub fn solve_with(
    split: &DmSplitting,
    cfg: &SolverConfig,
    init: Option<&LiftedSignal>,
    mut observer: impl FnMut(usize, &LiftedSignal),
) -> Result<Solution> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    split.grid().check_same(&grid, "solver configuration")?;

    let rest_state;
    let init = match init {
        Some(x) => x,
        None => {
            rest_state = split.resting_state();
            &rest_state
        }
    };
    let mut state = SolverState::new(split, cfg.alpha, init)?;
    let guard_scale = state.x.norm().max(1.0);

    let mut converged = false;
    let mut last_rel = f64::INFINITY;
    while state.iter < cfg.max_iter {
        let rel = step_in_place(&mut state, split, cfg)?;
        observer(state.iter, &state.x);
        let x_norm = state.x.norm();
        if !rel.is_finite() || rel > 1e6 || !x_norm.is_finite() || x_norm > 1e6 * guard_scale {
            return Err(Error::Divergence {
                iter: state.iter,
                detail: format!("relative change {rel:.3e}, ||x|| {x_norm:.3e}"),
            });
        }
        last_rel = rel;
        if rel <= cfg.epsilon_tol {
            converged = true;
            break;
        }
    }

    let (_, final_residual) = split.zfp_residual(&state.x);
    if !converged {
        log::warn!(
            "solver stopped at max_iter = {} with relative change {last_rel:.3e}",
            cfg.max_iter
        );
    }
    Ok(Solution {
        voltages: state.x.parts().to_vec(),
        converged,
        iterations: state.iter,
        final_relative_change: last_rel,
        final_normalized_residual: final_residual,
        config: cfg.clone(),
        history: state.history,
    })
}

/// A network parameter addressable by a continuation sweep, e.g.
/// `neurons[0].branches[1].gain` or `synapses[2].offset`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamRef {
    BranchGain { neuron: usize, branch: usize },
    BranchOffset { neuron: usize, branch: usize },
    BranchTau { neuron: usize, branch: usize },
    BranchLambda { neuron: usize, branch: usize },
    NeuronLeak { neuron: usize },
    SynapseGain { index: usize },
    SynapseOffset { index: usize },
}

impl ParamRef {
    /// Parses a dotted path such as `neurons[0].branches[1].gain`.
    pub fn parse(path: &str) -> Result<Self> {
        fn indexed(segment: &str, name: &str) -> Option<usize> {
            segment
                .strip_prefix(name)?
                .strip_prefix('[')?
                .strip_suffix(']')?
                .parse()
                .ok()
        }
        let parts: Vec<&str> = path.split('.').collect();
        let bad = || Error::config(format!("cannot parse parameter reference '{path}'"));
        match parts.as_slice() {
            [n, b, field] => {
                let neuron = indexed(n, "neurons").ok_or_else(bad)?;
                let branch = indexed(b, "branches").ok_or_else(bad)?;
                match *field {
                    "gain" => Ok(ParamRef::BranchGain { neuron, branch }),
                    "offset" => Ok(ParamRef::BranchOffset { neuron, branch }),
                    "tau" => Ok(ParamRef::BranchTau { neuron, branch }),
                    "lambda" => Ok(ParamRef::BranchLambda { neuron, branch }),
                    _ => Err(bad()),
                }
            }
            [s, field] if s.starts_with("synapses") => {
                let index = indexed(s, "synapses").ok_or_else(bad)?;
                match *field {
                    "gain" => Ok(ParamRef::SynapseGain { index }),
                    "offset" => Ok(ParamRef::SynapseOffset { index }),
                    _ => Err(bad()),
                }
            }
            [n, field] if n.starts_with("neurons") => {
                let neuron = indexed(n, "neurons").ok_or_else(bad)?;
                match *field {
                    "leak" => Ok(ParamRef::NeuronLeak { neuron }),
                    _ => Err(bad()),
                }
            }
            _ => Err(bad()),
        }
    }

    /// Writes `value` into the referenced parameter.
    pub fn apply(&self, net: &mut NetworkSpec, value: f64) -> Result<()> {
        let out_of_range = |what: &str| Error::IndexOutOfRange(format!("{self:?}: {what}"));
        match *self {
            ParamRef::BranchGain { neuron, branch }
            | ParamRef::BranchOffset { neuron, branch }
            | ParamRef::BranchTau { neuron, branch }
            | ParamRef::BranchLambda { neuron, branch } => {
                let b = net
                    .neurons_mut()
                    .get_mut(neuron)
                    .ok_or_else(|| out_of_range("neuron"))?
                    .branches
                    .get_mut(branch)
                    .ok_or_else(|| out_of_range("branch"))?;
                match self {
                    ParamRef::BranchGain { .. } => b.gain = value,
                    ParamRef::BranchOffset { .. } => b.offset = value,
                    ParamRef::BranchTau { .. } => b.tau = value,
                    ParamRef::BranchLambda { .. } => b.lambda = Some(value),
                    _ => unreachable!(),
                }
            }
            ParamRef::NeuronLeak { neuron } => {
                net.neurons_mut()
                    .get_mut(neuron)
                    .ok_or_else(|| out_of_range("neuron"))?
                    .leak = value;
            }
            ParamRef::SynapseGain { index } | ParamRef::SynapseOffset { index } => {
                let s = net
                    .synapses_mut()
                    .get_mut(index)
                    .ok_or_else(|| out_of_range("synapse"))?;
                match self {
                    ParamRef::SynapseGain { .. } => s.gain = value,
                    ParamRef::SynapseOffset { .. } => s.offset = value,
                    _ => unreachable!(),
                }
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for ParamRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamRef::BranchGain { neuron, branch } => {
                write!(f, "neurons[{neuron}].branches[{branch}].gain")
            }
            ParamRef::BranchOffset { neuron, branch } => {
                write!(f, "neurons[{neuron}].branches[{branch}].offset")
            }
            ParamRef::BranchTau { neuron, branch } => {
                write!(f, "neurons[{neuron}].branches[{branch}].tau")
            }
            ParamRef::BranchLambda { neuron, branch } => {
                write!(f, "neurons[{neuron}].branches[{branch}].lambda")
            }
            ParamRef::NeuronLeak { neuron } => write!(f, "neurons[{neuron}].leak"),
            ParamRef::SynapseGain { index } => write!(f, "synapses[{index}].gain"),
            ParamRef::SynapseOffset { index } => write!(f, "synapses[{index}].offset"),
        }
    }
}

/// Solves a sequence of parameter points, warm-starting each solve from the
/// previous solution. The first point runs cold.
pub fn continuation_sweep(
    net: &NetworkSpec,
    path: &[(ParamRef, f64)],
    policy: &ShiftPolicy,
    cfg: &SolverConfig,
) -> Result<Vec<Solution>> {
    let grid = cfg.grid()?;
    let mut warm: Option<LiftedSignal> = None;
    let mut out = Vec::with_capacity(path.len());
    for (param, value) in path {
        let step = || -> Result<Solution> {
            let mut net_k = net.clone();
            param.apply(&mut net_k, *value)?;
            let split = split_network(&net_k, grid, policy)?;
            solve(&split, cfg, warm.as_ref())
        };
        let solution = step().map_err(|e| Error::Sweep {
            param: param.to_string(),
            value: *value,
            source: Box::new(e),
        })?;
        warm = Some(solution.lifted());
        out.push(solution);
    }
    Ok(out)
}

/// Outcome of a coarse-to-fine refinement.
#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub coarse: Solution,
    pub fine: Solution,
}

/// Solves at a coarse resolution, resamples the solution onto the fine grid
/// and uses it to warm-start the fine solve.
pub fn coarse_to_fine(
    net: &NetworkSpec,
    policy: &ShiftPolicy,
    coarse_cfg: &SolverConfig,
    fine_cfg: &SolverConfig,
) -> Result<RefineOutcome> {
    if coarse_cfg.fs > fine_cfg.fs {
        return Err(Error::config(format!(
            "coarse fs {} exceeds fine fs {}",
            coarse_cfg.fs, fine_cfg.fs
        )));
    }
    if (coarse_cfg.duration_ms - fine_cfg.duration_ms).abs() > 1e-9 * fine_cfg.duration_ms {
        return Err(Error::config(
            "coarse and fine stages must share one duration",
        ));
    }
    let coarse_grid = coarse_cfg.grid()?;
    let fine_grid = fine_cfg.grid()?;

    let coarse_split = split_network(net, coarse_grid, policy)?;
    let coarse = solve(&coarse_split, coarse_cfg, None).map_err(|e| tag_stage(e, "coarse"))?;

    let init = LiftedSignal::from_raw(
        coarse
            .voltages
            .iter()
            .map(|v| v.resample(fine_grid))
            .collect::<Result<Vec<_>>>()?,
    );
    let fine_split = split_network(net, fine_grid, policy)?;
    let fine =
        solve(&fine_split, fine_cfg, Some(&init)).map_err(|e| tag_stage(e, "fine"))?;
    Ok(RefineOutcome { coarse, fine })
}

fn tag_stage(e: Error, stage: &str) -> Error {
    match e {
        Error::Divergence { iter, detail } => Error::Divergence {
            iter,
            detail: format!("{stage} stage: {detail}"),
        },
        other => other,
    }
}

/// Builds a fine-grid initial guess by pasting a single-event template at
/// each detected coarse event location over the resting baseline.
///
/// `template` is a snippet recorded at the fine sampling rate (from an
/// isolated-neuron solve); its central sample is aligned with each event
/// time in `events` (one list of event times per neuron). Placements must
/// not overlap.
pub fn template_refine(
    coarse: &Solution,
    rests: &[f64],
    template: &Signal,
    events: &[Vec<f64>],
) -> Result<LiftedSignal> {
    let n = coarse.voltages.len();
    if rests.len() != n || events.len() != n {
        return Err(Error::config(format!(
            "template_refine: expected {n} rests and event lists, got {} and {}",
            rests.len(),
            events.len()
        )));
    }
    let duration = coarse.config.duration_ms;
    let fine_grid = TimeGrid::new(duration, template.grid().fs())?;
    let g = fine_grid.len();
    let dt = fine_grid.dt();
    let t_len = template.len();
    let center = (t_len - 1) / 2;

    let mut parts = Vec::with_capacity(n);
    for (k, event_times) in events.iter().enumerate() {
        let mut samples = vec![rests[k]; g];
        let mut sorted = event_times.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite event times"));
        let mut last_end: isize = isize::MIN;
        for &t0 in &sorted {
            if !(0.0..=duration).contains(&t0) {
                return Err(Error::config(format!(
                    "event time {t0} ms outside [0, {duration}] for neuron {k}"
                )));
            }
            let start = (t0 / dt).round() as isize - center as isize;
            if start < last_end {
                return Err(Error::TemplateOverlap { neuron: k, t: t0 });
            }
            for (i, &v) in template.samples().iter().enumerate() {
                let idx = start + i as isize;
                if (0..g as isize).contains(&idx) {
                    samples[idx as usize] = v;
                }
            }
            last_end = start + t_len as isize;
        }
        parts.push(Signal::new(fine_grid, samples)?);
    }
    Ok(LiftedSignal::from_raw(parts))
}
