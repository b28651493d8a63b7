//! Circuit descriptions and their difference-of-monotone splitting.
//!
//! A network couples neurons (capacitive membrane, linear leak, saturating
//! conductance branches at several timescales) through active synaptic
//! connections. Solving the circuit means finding the voltage trajectories
//! `v` with `W(v) = i_ext`, a zero-finding problem on the lifted signal
//! space.
//!
//! `W` is never monotone, but it splits along the circuit topology into
//! `E + sum_i (F_i - G_i)` with every piece monotone:
//!
//! - `E` is the block-diagonal capacitive differentiator;
//! - each positive-conductance branch contributes `(branch + lambda*Id,
//!   lambda*Id)`;
//! - each negative-conductance branch contributes `(lambda*Id, |branch| +
//!   lambda*Id)`, with instantaneous negative branches folded, unshifted,
//!   into the leak pair's G;
//! - the linear leak and the external-current offset form the affine pair
//!   `(leak*Id - i_ext, folded readouts)`;
//! - each synaptic row contributes `(lambda_row*Id + Y_row, lambda_row*Id)`
//!   on the lifted space.
//!
//! The shifts cancel in the sum, so the splitting reproduces `W - i_ext`
//! exactly.

use std::fmt;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{
    CapacitiveDifferentiator, ConductanceBranch, FirstOrderLag, MonotonicityCertificate,
    NonlinearReadout, ReadoutKind,
};
use crate::signal::{LiftedSignal, Signal, TimeGrid};

/// Timescale labels for conductance branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Timescale {
    #[serde(rename = "ins")]
    Instantaneous,
    #[serde(rename = "f")]
    Fast,
    #[serde(rename = "s")]
    Slow,
    #[serde(rename = "us", alias = "µs")]
    UltraSlow,
}

impl fmt::Display for Timescale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Timescale::Instantaneous => "ins",
            Timescale::Fast => "f",
            Timescale::Slow => "s",
            Timescale::UltraSlow => "us",
        };
        f.write_str(s)
    }
}

/// One conductance branch of a neuron, before any splitting concerns.
///
/// `lambda` optionally pins the monotonizing shift used by the splitting;
/// when absent the policy default applies (`|gain|` for lagged branches,
/// zero for instantaneous ones).
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSpec {
    pub timescale: Timescale,
    pub tau: f64,
    pub kind: ReadoutKind,
    pub gain: f64,
    pub offset: f64,
    pub lambda: Option<f64>,
}

impl BranchSpec {
    fn readout(&self) -> NonlinearReadout {
        NonlinearReadout {
            kind: self.kind,
            gain: self.gain,
            offset: self.offset,
            slope: 1.0,
        }
    }

    fn lag(&self) -> FirstOrderLag {
        FirstOrderLag::new(self.tau).expect("validated tau")
    }

    /// Static (DC) current of the branch at constant voltage `v`.
    pub fn static_current(&self, v: f64) -> f64 {
        self.readout().eval(v)
    }
}

/// A neuron: membrane capacitance, linear leak conductance, resting
/// potential and its conductance branches.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronSpec {
    pub capacitance: f64,
    pub leak: f64,
    pub resting_potential: f64,
    pub branches: Vec<BranchSpec>,
}

impl NeuronSpec {
    /// Static (DC) membrane current at constant voltage `v`, excluding any
    /// synaptic contribution.
    pub fn static_current(&self, v: f64) -> f64 {
        self.leak * v + self.branches.iter().map(|b| b.static_current(v)).sum::<f64>()
    }
}

/// A synaptic connection from neuron `pre` to neuron `post`:
/// `gain * sigmoid(slope * (lagged v_pre - offset))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynapseSpec {
    pub pre: usize,
    pub post: usize,
    pub gain: f64,
    pub offset: f64,
    pub tau: f64,
    pub slope: f64,
}

impl SynapseSpec {
    fn readout(&self) -> NonlinearReadout {
        NonlinearReadout {
            kind: ReadoutKind::Sigmoid,
            gain: self.gain,
            offset: self.offset,
            slope: self.slope,
        }
    }

    fn lag(&self) -> FirstOrderLag {
        FirstOrderLag::new(self.tau).expect("validated tau")
    }

    /// Static synaptic current at constant presynaptic voltage.
    pub fn static_current(&self, v_pre: f64) -> f64 {
        self.readout().eval(v_pre)
    }
}

/// External input waveform for one neuron.
#[derive(Debug, Clone, PartialEq)]
pub enum InputWaveform {
    /// `amplitude` on `[t_on, t_off)`, zero elsewhere.
    Pulse {
        t_on: f64,
        t_off: f64,
        amplitude: f64,
    },
    /// Constant holding current over the whole duration.
    Hold { amplitude: f64 },
    /// A recorded waveform, linearly interpolated between its samples and
    /// scaled by `scale`.
    File { signal: Signal, scale: f64 },
}

/// One external input entry targeting a neuron. A neuron's external current
/// is the sum of its entries.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpec {
    pub neuron: usize,
    pub waveform: InputWaveform,
}

impl InputWaveform {
    /// Value at continuous time `t` (ms).
    pub fn value_at(&self, t: f64) -> f64 {
        match self {
            InputWaveform::Pulse {
                t_on,
                t_off,
                amplitude,
            } => {
                if t >= *t_on && t < *t_off {
                    *amplitude
                } else {
                    0.0
                }
            }
            InputWaveform::Hold { amplitude } => *amplitude,
            InputWaveform::File { signal, scale } => {
                let dt = signal.grid().dt();
                let pos = t / dt;
                let k = pos.floor() as isize;
                let frac = pos - k as f64;
                let s = signal.samples();
                let at = |i: isize| {
                    let i = i.clamp(0, s.len() as isize - 1) as usize;
                    s[i]
                };
                scale * (at(k) * (1.0 - frac) + at(k + 1) * frac)
            }
        }
    }

    fn breakpoints(&self, out: &mut Vec<f64>) {
        if let InputWaveform::Pulse { t_on, t_off, .. } = self {
            out.push(*t_on);
            out.push(*t_off);
        }
    }
}

/// The circuit description: neurons, synapses and external inputs.
///
/// Inputs are stored symbolically and materialized onto a grid on demand, so
/// the same network can be solved at several resolutions (and by the
/// reference integrator in continuous time) with one consistent definition
/// of the external current.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    neurons: Vec<NeuronSpec>,
    synapses: Vec<SynapseSpec>,
    inputs: Vec<InputSpec>,
}

impl NetworkSpec {
    pub fn new(
        neurons: Vec<NeuronSpec>,
        synapses: Vec<SynapseSpec>,
        inputs: Vec<InputSpec>,
    ) -> Result<Self> {
        let n = neurons.len();
        if n == 0 {
            return Err(Error::config("network needs at least one neuron"));
        }
        for (k, neuron) in neurons.iter().enumerate() {
            if neuron.branches.is_empty() {
                return Err(Error::config(format!("neuron {k} has no branches")));
            }
            if !(neuron.capacitance.is_finite() && neuron.capacitance > 0.0) {
                return Err(Error::config(format!(
                    "neuron {k}: capacitance must be positive"
                )));
            }
            if !(neuron.leak.is_finite() && neuron.leak >= 0.0) {
                return Err(Error::config(format!(
                    "neuron {k}: leak must be nonnegative"
                )));
            }
            for (j, b) in neuron.branches.iter().enumerate() {
                if !(b.tau.is_finite() && b.tau >= 0.0) {
                    return Err(Error::config(format!(
                        "neuron {k} branch {j}: tau must be nonnegative"
                    )));
                }
                if let Some(l) = b.lambda {
                    if !(l.is_finite() && l >= 0.0) {
                        return Err(Error::config(format!(
                            "neuron {k} branch {j}: lambda must be nonnegative"
                        )));
                    }
                }
            }
        }
        for (s, syn) in synapses.iter().enumerate() {
            if syn.pre >= n || syn.post >= n {
                return Err(Error::IndexOutOfRange(format!(
                    "synapse {s} references neuron {} -> {} in a network of {n}",
                    syn.pre, syn.post
                )));
            }
            if syn.pre == syn.post {
                return Err(Error::config(format!(
                    "synapse {s}: self-connections are not supported (pre == post == {})",
                    syn.pre
                )));
            }
            if !(syn.tau.is_finite() && syn.tau >= 0.0) {
                return Err(Error::config(format!(
                    "synapse {s}: tau must be nonnegative"
                )));
            }
        }
        for (i, input) in inputs.iter().enumerate() {
            if input.neuron >= n {
                return Err(Error::IndexOutOfRange(format!(
                    "input {i} targets neuron {} in a network of {n}",
                    input.neuron
                )));
            }
        }
        Ok(NetworkSpec {
            neurons,
            synapses,
            inputs,
        })
    }

    pub fn num_neurons(&self) -> usize {
        self.neurons.len()
    }

    pub fn neurons(&self) -> &[NeuronSpec] {
        &self.neurons
    }

    pub fn neuron(&self, k: usize) -> &NeuronSpec {
        &self.neurons[k]
    }

    pub fn synapses(&self) -> &[SynapseSpec] {
        &self.synapses
    }

    pub fn inputs(&self) -> &[InputSpec] {
        &self.inputs
    }

    /// Mutable access for continuation sweeps.
    pub(crate) fn neurons_mut(&mut self) -> &mut [NeuronSpec] {
        &mut self.neurons
    }

    pub(crate) fn synapses_mut(&mut self) -> &mut [SynapseSpec] {
        &mut self.synapses
    }

    /// External current of neuron `k` at continuous time `t`.
    pub fn external_current_at(&self, k: usize, t: f64) -> f64 {
        self.inputs
            .iter()
            .filter(|i| i.neuron == k)
            .map(|i| i.waveform.value_at(t))
            .sum()
    }

    /// External currents of all neurons sampled on `grid`.
    pub fn external_currents(&self, grid: TimeGrid) -> Vec<Signal> {
        (0..self.neurons.len())
            .map(|k| Signal::from_fn(grid, |t| self.external_current_at(k, t)))
            .collect()
    }

    /// Times where some input is discontinuous (pulse edges), sorted.
    pub fn input_breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for input in &self.inputs {
            input.waveform.breakpoints(&mut out);
        }
        out.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
        out.dedup();
        out
    }

    /// The lifted constant-rest trajectory, the default initial guess.
    pub fn resting_state(&self, grid: TimeGrid) -> LiftedSignal {
        LiftedSignal::from_raw(
            self.neurons
                .iter()
                .map(|nr| Signal::constant(grid, nr.resting_potential))
                .collect(),
        )
    }
}

/// Internal dynamics of one neuron applied to its own voltage:
/// `C*Dv + leak*v + sum_x readout_x(lag_x(v))` with unshifted branches.
pub fn apply_neuron(spec: &NeuronSpec, v: &Signal) -> Signal {
    let d = CapacitiveDifferentiator::new(spec.capacitance).expect("validated capacitance");
    let mut out = d.apply(v);
    if spec.leak != 0.0 {
        out.axpy(spec.leak, v);
    }
    for b in &spec.branches {
        out.axpy(1.0, &b.readout().apply(&b.lag().apply(v)));
    }
    out
}

/// Synaptic current produced by a presynaptic voltage trajectory.
pub fn apply_synapse(spec: &SynapseSpec, v_pre: &Signal) -> Signal {
    spec.readout().apply(&spec.lag().apply(v_pre))
}

/// The assembled network operator `W`.
pub struct NetworkOp<'a> {
    net: &'a NetworkSpec,
}

/// Assembles the network operator: diagonal neuron dynamics plus
/// off-diagonal synaptic rows.
pub fn assemble_network(net: &NetworkSpec) -> NetworkOp<'_> {
    NetworkOp { net }
}

impl NetworkOp<'_> {
    /// `W(v)_k = N_k(v_k) + sum_{j -> k} I_jk(v_j)`.
    pub fn apply(&self, v: &LiftedSignal) -> Result<LiftedSignal> {
        let n = self.net.num_neurons();
        if v.num_parts() != n {
            return Err(Error::IndexOutOfRange(format!(
                "network has {n} neurons but the input has {} parts",
                v.num_parts()
            )));
        }
        let mut parts: Vec<Signal> = (0..n)
            .map(|k| apply_neuron(&self.net.neurons[k], v.part(k)))
            .collect();
        for syn in &self.net.synapses {
            let current = apply_synapse(syn, v.part(syn.pre));
            parts[syn.post].axpy(1.0, &current);
        }
        Ok(LiftedSignal::from_raw(parts))
    }
}

/// Residual of the zero-finding problem: `r = W(x) - i_ext` together with
/// the normalized norm `||r|| / L`, `L` the total sample count.
pub fn residual(net: &NetworkSpec, x: &LiftedSignal) -> Result<(LiftedSignal, f64)> {
    let mut r = assemble_network(net).apply(x)?;
    let currents = net.external_currents(x.grid());
    for (part, i_ext) in r.parts_mut().iter_mut().zip(&currents) {
        part.axpy(-1.0, i_ext);
    }
    let total_samples = (net.num_neurons() * x.grid().len()) as f64;
    let normalized = r.norm() / total_samples;
    Ok((r, normalized))
}

/// Shift selection for the splitting.
///
/// Per-branch `lambda` values from the circuit description win; otherwise
/// lagged branches get the smallest certified shift `|gain|` and
/// instantaneous branches get zero. `lambda_override` (the CLI `--lambda`)
/// replaces the shift of every lagged branch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShiftPolicy {
    pub lambda_override: Option<f64>,
}

impl ShiftPolicy {
    pub fn branch_lambda(&self, branch: &BranchSpec) -> f64 {
        if branch.tau > 0.0 {
            self.lambda_override
                .or(branch.lambda)
                .unwrap_or_else(|| branch.gain.abs())
        } else {
            branch.lambda.unwrap_or(0.0)
        }
    }

    /// Row shift for the synaptic pair of postsynaptic neuron `post`: the
    /// row Lipschitz bound `sum_j |gain_j,post|`.
    pub fn synapse_row_lambda(&self, net: &NetworkSpec, post: usize) -> f64 {
        net.synapses()
            .iter()
            .filter(|s| s.post == post)
            .map(|s| s.gain.abs())
            .sum()
    }
}

/// Provenance of one operator pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum PairProvenance {
    /// Linear leak, external-current offset and folded instantaneous
    /// negative branches of one neuron.
    Leak { neuron: usize },
    /// One conductance branch of one neuron.
    Branch { neuron: usize, branch: usize },
    /// All synaptic currents into one neuron.
    SynapseRow { post: usize },
}

impl fmt::Display for PairProvenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairProvenance::Leak { neuron } => write!(f, "neuron {neuron} leak"),
            PairProvenance::Branch { neuron, branch } => {
                write!(f, "neuron {neuron} branch {branch}")
            }
            PairProvenance::SynapseRow { post } => write!(f, "synaptic row into neuron {post}"),
        }
    }
}

/// One synaptic term inside a row operator.
#[derive(Debug, Clone)]
pub struct SynTerm {
    pub pre: usize,
    pub lag: FirstOrderLag,
    pub readout: NonlinearReadout,
}

/// The F side of a pair (resolvents required).
#[derive(Debug, Clone)]
pub enum FOp {
    /// `leak * v_k - i_ext,k` on component `k`.
    LeakAffine {
        neuron: usize,
        leak: f64,
        i_ext: Signal,
    },
    /// A shifted conductance branch on component `k`.
    Branch {
        neuron: usize,
        branch: ConductanceBranch,
    },
    /// `lambda * v_k` on component `k`.
    Shift { neuron: usize, lambda: f64 },
    /// `lambda * v + Y_row(v)` on the whole lifted signal.
    SynapseRow {
        post: usize,
        lambda: f64,
        terms: Vec<SynTerm>,
    },
}

/// The G side of a pair (forward evaluations only).
#[derive(Debug, Clone)]
pub enum GOp {
    /// Sum of unshifted static readouts on component `k` (folded
    /// instantaneous negative branches, stored with positive gain).
    Readouts {
        neuron: usize,
        readouts: Vec<NonlinearReadout>,
    },
    /// `lambda * v_k` on component `k`.
    Shift { neuron: usize, lambda: f64 },
    /// A shifted conductance branch on component `k` (negative branches,
    /// stored with positive gain).
    Branch {
        neuron: usize,
        branch: ConductanceBranch,
    },
    /// `lambda * v` on the whole lifted signal.
    LiftedShift { lambda: f64 },
}

impl FOp {
    /// Forward evaluation into a zeroed lifted signal.
    pub fn apply(&self, x: &LiftedSignal) -> LiftedSignal {
        let mut out = x.clone();
        out.fill_zero();
        match self {
            FOp::LeakAffine {
                neuron,
                leak,
                i_ext,
            } => {
                let part = &mut out.parts_mut()[*neuron];
                part.axpy(*leak, x.part(*neuron));
                part.axpy(-1.0, i_ext);
            }
            FOp::Branch { neuron, branch } => {
                out.parts_mut()[*neuron] = branch.apply(x.part(*neuron));
            }
            FOp::Shift { neuron, lambda } => {
                out.parts_mut()[*neuron].axpy(*lambda, x.part(*neuron));
            }
            FOp::SynapseRow { post, lambda, terms } => {
                for (k, part) in out.parts_mut().iter_mut().enumerate() {
                    part.axpy(*lambda, x.part(k));
                }
                let row = &mut out.parts_mut()[*post];
                for term in terms {
                    row.axpy(1.0, &term.readout.apply(&term.lag.apply(x.part(term.pre))));
                }
            }
        }
        out
    }

    /// Resolvent `J_{gamma F}`; `warm` seeds the inner iteration of branch
    /// variants and the refreshed warm state is returned alongside.
    pub fn resolvent(
        &self,
        gamma: f64,
        w: &LiftedSignal,
        warm: Option<&Signal>,
        inner_tol: f64,
        inner_max: usize,
    ) -> Result<(LiftedSignal, Option<Signal>)> {
        let mut out = w.clone();
        match self {
            FOp::LeakAffine {
                neuron,
                leak,
                i_ext,
            } => {
                let part = &mut out.parts_mut()[*neuron];
                part.axpy(gamma, i_ext);
                part.scale(1.0 / (1.0 + gamma * leak));
                Ok((out, None))
            }
            FOp::Branch { neuron, branch } => {
                let q = branch.resolvent(gamma, w.part(*neuron), warm, inner_tol, inner_max)?;
                out.parts_mut()[*neuron] = q.clone();
                Ok((out, Some(q)))
            }
            FOp::Shift { neuron, lambda } => {
                out.parts_mut()[*neuron].scale(1.0 / (1.0 + gamma * lambda));
                Ok((out, None))
            }
            FOp::SynapseRow { post, lambda, terms } => {
                let scale = 1.0 / (1.0 + gamma * lambda);
                // Off-row components are pure shifts; the row component then
                // sees only already-known presynaptic values, so the row
                // resolvent is closed-form.
                for part in out.parts_mut() {
                    part.scale(scale);
                }
                let mut row_current = Signal::zeros(w.grid());
                for term in terms {
                    row_current.axpy(1.0, &term.readout.apply(&term.lag.apply(out.part(term.pre))));
                }
                let row = &mut out.parts_mut()[*post];
                row.axpy(-gamma * scale, &row_current);
                Ok((out, None))
            }
        }
    }

    /// Contraction factor of the inner resolvent at step `gamma`, when the
    /// pair runs one.
    pub fn contraction_factor(&self, gamma: f64) -> Option<f64> {
        match self {
            FOp::Branch { branch, .. } => Some(branch.contraction_factor(gamma)),
            _ => None,
        }
    }
}

impl GOp {
    pub fn apply(&self, x: &LiftedSignal) -> LiftedSignal {
        let mut out = x.clone();
        out.fill_zero();
        match self {
            GOp::Readouts { neuron, readouts } => {
                let part = &mut out.parts_mut()[*neuron];
                for r in readouts {
                    for (o, &v) in part.samples_mut().iter_mut().zip(x.part(*neuron).samples())
                    {
                        *o += r.eval(v);
                    }
                }
            }
            GOp::Shift { neuron, lambda } => {
                out.parts_mut()[*neuron].axpy(*lambda, x.part(*neuron));
            }
            GOp::Branch { neuron, branch } => {
                out.parts_mut()[*neuron] = branch.apply(x.part(*neuron));
            }
            GOp::LiftedShift { lambda } => {
                for (k, part) in out.parts_mut().iter_mut().enumerate() {
                    part.axpy(*lambda, x.part(k));
                }
            }
        }
        out
    }
}

/// One monotone pair of the splitting.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub provenance: PairProvenance,
    pub f: FOp,
    pub g: GOp,
}

/// The block-diagonal operator `E` of a splitting.
#[derive(Debug, Clone)]
pub enum EOp {
    /// Per-neuron capacitive differentiators, the circuit case.
    Capacitive(Vec<CapacitiveDifferentiator>),
    /// `rho * Id` on every part; useful for synthetic splittings.
    Scaled { parts: usize, rho: f64 },
}

impl EOp {
    pub fn num_parts(&self) -> usize {
        match self {
            EOp::Capacitive(cs) => cs.len(),
            EOp::Scaled { parts, .. } => *parts,
        }
    }

    pub fn apply(&self, x: &LiftedSignal) -> LiftedSignal {
        match self {
            EOp::Capacitive(cs) => LiftedSignal::from_raw(
                cs.iter().zip(x.parts()).map(|(c, v)| c.apply(v)).collect(),
            ),
            EOp::Scaled { rho, .. } => {
                let mut out = x.clone();
                out.scale(*rho);
                out
            }
        }
    }

    pub fn resolvent(&self, alpha: f64, x: &LiftedSignal) -> LiftedSignal {
        match self {
            EOp::Capacitive(cs) => LiftedSignal::from_raw(
                cs.iter()
                    .zip(x.parts())
                    .map(|(c, v)| c.resolvent(alpha, v))
                    .collect(),
            ),
            EOp::Scaled { rho, .. } => {
                let mut out = x.clone();
                out.scale(1.0 / (1.0 + alpha * rho));
                out
            }
        }
    }
}

/// The difference-of-monotone decomposition `E + sum_i (F_i - G_i)` of a
/// network on a fixed grid.
#[derive(Debug, Clone)]
pub struct DmSplitting {
    e: EOp,
    pairs: Vec<SplitPair>,
    grid: TimeGrid,
    num_timescales: usize,
    rests: Vec<f64>,
}

impl DmSplitting {
    /// Assembles a splitting from explicit parts. `rests` provides the
    /// default initial guess (one constant per part).
    pub fn from_parts(e: EOp, pairs: Vec<SplitPair>, grid: TimeGrid, rests: Vec<f64>) -> Result<Self> {
        if rests.len() != e.num_parts() {
            return Err(Error::config(format!(
                "expected {} resting values, got {}",
                e.num_parts(),
                rests.len()
            )));
        }
        if pairs.is_empty() {
            return Err(Error::config("a splitting needs at least one pair"));
        }
        Ok(DmSplitting {
            e,
            pairs,
            grid,
            num_timescales: 0,
            rests,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn num_neurons(&self) -> usize {
        self.e.num_parts()
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[SplitPair] {
        &self.pairs
    }

    /// Resting potentials backing the default initial guess.
    pub fn rests(&self) -> &[f64] {
        &self.rests
    }

    /// The lifted constant-rest trajectory.
    pub fn resting_state(&self) -> LiftedSignal {
        LiftedSignal::from_raw(
            self.rests
                .iter()
                .map(|&r| Signal::constant(self.grid, r))
                .collect(),
        )
    }

    /// Actual number of operators in the splitting: `E` plus both sides of
    /// every pair.
    pub fn operator_count(&self) -> usize {
        1 + 2 * self.pairs.len()
    }

    /// The `2n + 2m + 1` bookkeeping formula, `m` counting distinct
    /// (neuron, timescale) groups. The formula and the worked splitting do
    /// not agree in general; both counts are reported side by side.
    pub fn formula_operator_count(&self) -> usize {
        2 * self.num_neurons() + 2 * self.num_timescales + 1
    }

    /// `E(x)`.
    pub fn apply_e(&self, x: &LiftedSignal) -> LiftedSignal {
        self.e.apply(x)
    }

    /// `J_{alpha E}(x)`; exact (spectral division for the capacitive block).
    pub fn resolvent_e(&self, alpha: f64, x: &LiftedSignal) -> LiftedSignal {
        self.e.resolvent(alpha, x)
    }

    /// Residual of the split form `E(x) + sum_i (F_i(x) - G_i(x))` and its
    /// normalized norm `||r|| / L`.
    pub fn zfp_residual(&self, x: &LiftedSignal) -> (LiftedSignal, f64) {
        let mut r = self.apply_e(x);
        for pair in &self.pairs {
            r.axpy(1.0, &pair.f.apply(x));
            r.axpy(-1.0, &pair.g.apply(x));
        }
        let total = (self.num_neurons() * self.grid.len()) as f64;
        let norm = r.norm() / total;
        (r, norm)
    }
}

/// Builds the difference-of-monotone splitting of a network on `grid`.
///
/// Fails when the shift policy cannot certify monotonicity: every lagged
/// branch needs `lambda >= |gain|` (the Lipschitz bound of its readout
/// through the unit-DC-gain lag).
pub fn split_network(
    net: &NetworkSpec,
    grid: TimeGrid,
    policy: &ShiftPolicy,
) -> Result<DmSplitting> {
    let mut violations = Vec::new();
    let currents = net.external_currents(grid);
    let mut pairs = Vec::new();
    let mut num_timescales = 0;

    for (k, neuron) in net.neurons().iter().enumerate() {
        let mut seen = Vec::new();
        for b in &neuron.branches {
            if !seen.contains(&b.timescale) {
                seen.push(b.timescale);
            }
        }
        num_timescales += seen.len();

        let mut folded: Vec<NonlinearReadout> = Vec::new();
        let mut branch_pairs = Vec::new();
        for (j, b) in neuron.branches.iter().enumerate() {
            let lambda = policy.branch_lambda(b);
            if lambda < 0.0 || (b.tau > 0.0 && lambda < b.gain.abs()) {
                violations.push(format!(
                    "neuron {k} branch {j} (gain {}, tau {} ms): lambda {} below the certified shift {}",
                    b.gain,
                    b.tau,
                    lambda,
                    b.gain.abs()
                ));
                continue;
            }
            let provenance = PairProvenance::Branch { neuron: k, branch: j };
            if b.gain < 0.0 && lambda == 0.0 {
                // Instantaneous negative branch: fold the positive-gain
                // readout into the leak pair's G, as the worked single-neuron
                // splitting does.
                folded.push(NonlinearReadout {
                    kind: b.kind,
                    gain: -b.gain,
                    offset: b.offset,
                    slope: 1.0,
                });
            } else if b.gain >= 0.0 {
                let branch = ConductanceBranch::new(b.lag(), b.readout(), lambda)?;
                branch_pairs.push(SplitPair {
                    provenance,
                    f: FOp::Branch { neuron: k, branch },
                    g: GOp::Shift { neuron: k, lambda },
                });
            } else {
                let mut readout = b.readout();
                readout.gain = -readout.gain;
                let branch = ConductanceBranch::new(b.lag(), readout, lambda)?;
                branch_pairs.push(SplitPair {
                    provenance,
                    f: FOp::Shift { neuron: k, lambda },
                    g: GOp::Branch { neuron: k, branch },
                });
            }
        }
        pairs.push(SplitPair {
            provenance: PairProvenance::Leak { neuron: k },
            f: FOp::LeakAffine {
                neuron: k,
                leak: neuron.leak,
                i_ext: currents[k].clone(),
            },
            g: GOp::Readouts {
                neuron: k,
                readouts: folded,
            },
        });
        pairs.extend(branch_pairs);
    }

    for post in 0..net.num_neurons() {
        let terms: Vec<SynTerm> = net
            .synapses()
            .iter()
            .filter(|s| s.post == post)
            .map(|s| SynTerm {
                pre: s.pre,
                lag: s.lag(),
                readout: s.readout(),
            })
            .collect();
        if terms.is_empty() {
            continue;
        }
        let lambda = policy.synapse_row_lambda(net, post);
        pairs.push(SplitPair {
            provenance: PairProvenance::SynapseRow { post },
            f: FOp::SynapseRow {
                post,
                lambda,
                terms,
            },
            g: GOp::LiftedShift { lambda },
        });
    }

    if !violations.is_empty() {
        return Err(Error::InadmissibleShifts {
            pairs: violations,
            message: "increase lambda (per branch or via the shift policy) to certify monotonicity"
                .into(),
        });
    }

    let capacitors = net
        .neurons()
        .iter()
        .map(|nr| CapacitiveDifferentiator::new(nr.capacitance))
        .collect::<Result<Vec<_>>>()?;
    let rests = net.neurons().iter().map(|nr| nr.resting_potential).collect();

    Ok(DmSplitting {
        e: EOp::Capacitive(capacitors),
        pairs,
        grid,
        num_timescales,
        rests,
    })
}

/// Empirical diagnostics for one pair.
#[derive(Debug, Clone, Serialize)]
pub struct PairDiagnostics {
    pub label: String,
    /// Shift carried by the pair, when it has one.
    pub lambda: Option<f64>,
    /// Smallest sampled monotonicity ratio of F.
    pub f_monotone_min: f64,
    /// Sampled sector bounds of G.
    pub g_sector: [f64; 2],
    /// Contraction factor of the inner branch resolvent at step `p*alpha`.
    pub contraction_factor: Option<f64>,
    /// Whether the inner iteration contracts (factor below one).
    pub contraction_ok: bool,
}

/// Empirical certificate of a splitting at step size `alpha`.
///
/// Constants are sampled on random signal pairs, so they describe a
/// neighborhood rather than the whole space; the report warns, it never
/// blocks execution.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub certificate: MonotonicityCertificate,
    pub alpha: f64,
    pub admissible: bool,
    pub all_pairs_monotone: bool,
    pub all_contractions_ok: bool,
    pub operator_count: usize,
    pub formula_operator_count: usize,
    pub pairs: Vec<PairDiagnostics>,
}

fn lifted_inner(a: &LiftedSignal, b: &LiftedSignal) -> f64 {
    a.parts()
        .iter()
        .zip(b.parts())
        .map(|(x, y)| x.inner_product(y).expect("same grid"))
        .sum()
}

/// Estimates sector and monotonicity constants of the splitting on sampled
/// signal pairs and reports per-pair contraction factors at step `p*alpha`.
pub fn validate_certificate(
    split: &DmSplitting,
    alpha: f64,
    seed: u64,
    num_samples: usize,
) -> CertificateReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = split.grid();
    let n = split.num_neurons();
    let p = split.num_pairs();
    let gamma_step = p as f64 * alpha;

    let mut random_lifted = |amp: f64| {
        LiftedSignal::from_raw(
            (0..n)
                .map(|_| {
                    Signal::from_raw(
                        grid,
                        (0..grid.len()).map(|_| rng.gen_range(-amp..amp)).collect(),
                    )
                })
                .collect(),
        )
    };

    let samples: Vec<(LiftedSignal, LiftedSignal)> = (0..num_samples)
        .map(|_| (random_lifted(1.5), random_lifted(1.5)))
        .collect();

    let ratio = |ya: &LiftedSignal, yb: &LiftedSignal, ua: &LiftedSignal, ub: &LiftedSignal| {
        let mut dy = ya.clone();
        dy.axpy(-1.0, yb);
        let mut du = ua.clone();
        du.axpy(-1.0, ub);
        let denom = lifted_inner(&du, &du);
        lifted_inner(&dy, &du) / denom
    };

    let mut rho = f64::INFINITY;
    for (ua, ub) in &samples {
        rho = rho.min(ratio(&split.apply_e(ua), &split.apply_e(ub), ua, ub));
    }

    let mut pair_diags = Vec::with_capacity(p);
    let mut gamma = f64::INFINITY;
    let mut beta = f64::INFINITY;
    let mut sector_upper = f64::NEG_INFINITY;
    for pair in split.pairs() {
        let mut f_min = f64::INFINITY;
        let mut g_min = f64::INFINITY;
        let mut g_max = f64::NEG_INFINITY;
        for (ua, ub) in &samples {
            f_min = f_min.min(ratio(&pair.f.apply(ua), &pair.f.apply(ub), ua, ub));
            let gr = ratio(&pair.g.apply(ua), &pair.g.apply(ub), ua, ub);
            g_min = g_min.min(gr);
            g_max = g_max.max(gr);
        }
        gamma = gamma.min(f_min);
        beta = beta.min(g_min);
        sector_upper = sector_upper.max(g_max);
        let contraction_factor = pair.f.contraction_factor(gamma_step);
        let lambda = match (&pair.f, &pair.g) {
            (FOp::Branch { branch, .. }, _) => Some(branch.lambda),
            (FOp::Shift { lambda, .. }, _) => Some(*lambda),
            (FOp::SynapseRow { lambda, .. }, _) => Some(*lambda),
            _ => None,
        };
        pair_diags.push(PairDiagnostics {
            label: pair.provenance.to_string(),
            lambda,
            f_monotone_min: f_min,
            g_sector: [g_min, g_max],
            contraction_factor,
            contraction_ok: contraction_factor.map_or(true, |c| c < 1.0),
        });
    }

    let eps = if sector_upper > beta {
        1.0 / (sector_upper - beta)
    } else {
        f64::INFINITY
    };
    let certificate = MonotonicityCertificate::from_constants(rho, gamma, beta, eps, alpha);
    let monotone_tol = -1e-9;
    let all_pairs_monotone = pair_diags
        .iter()
        .all(|d| d.f_monotone_min >= monotone_tol && d.g_sector[0] >= monotone_tol);
    let all_contractions_ok = pair_diags.iter().all(|d| d.contraction_ok);
    CertificateReport {
        admissible: certificate.admissible(alpha),
        certificate,
        alpha,
        all_pairs_monotone,
        all_contractions_ok,
        operator_count: split.operator_count(),
        formula_operator_count: split.formula_operator_count(),
        pairs: pair_diags,
    }
}

// ---------------------------------------------------------------------------
// JSON network configuration
// ---------------------------------------------------------------------------

/// JSON schema of a network configuration file. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub neurons: Vec<NeuronConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synapses: Vec<SynapseConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<InputConfig>,
    pub grid: GridConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NeuronConfig {
    #[serde(rename = "C")]
    pub capacitance: f64,
    pub rest: f64,
    /// Linear leak conductance; the worked models all use a unit leak.
    #[serde(default = "default_leak")]
    pub leak: f64,
    pub branches: Vec<BranchConfig>,
}

fn default_leak() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub timescale: Timescale,
    pub tau: f64,
    pub kind: ReadoutKindConfig,
    pub gain: f64,
    pub offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

/// Readout selector in configuration files.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKindConfig {
    Tanh,
    Sigmoid,
}

impl From<ReadoutKindConfig> for ReadoutKind {
    fn from(k: ReadoutKindConfig) -> Self {
        match k {
            ReadoutKindConfig::Tanh => ReadoutKind::Tanh,
            ReadoutKindConfig::Sigmoid => ReadoutKind::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SynapseConfig {
    pub pre: usize,
    pub post: usize,
    pub gain: f64,
    pub offset: f64,
    pub tau: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub neuron: usize,
    pub kind: InputKindConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_on: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_off: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum InputKindConfig {
    Pulse,
    Hold,
    File,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub duration_ms: f64,
    pub fs: f64,
}

impl NetworkConfig {
    /// Parses a configuration from JSON, reporting schema violations with a
    /// JSON pointer to the offending field.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            Error::config_at(json_pointer(&e.path().to_string()), e.inner().to_string())
        })
    }

    /// Builds the validated [`NetworkSpec`] and grid. `base_dir` anchors
    /// relative paths of file inputs.
    pub fn build(&self, base_dir: &Path) -> Result<(NetworkSpec, TimeGrid)> {
        let grid = TimeGrid::new(self.grid.duration_ms, self.grid.fs)?;
        let neurons = self
            .neurons
            .iter()
            .map(|nc| NeuronSpec {
                capacitance: nc.capacitance,
                leak: nc.leak,
                resting_potential: nc.rest,
                branches: nc
                    .branches
                    .iter()
                    .map(|bc| BranchSpec {
                        timescale: bc.timescale,
                        tau: bc.tau,
                        kind: bc.kind.into(),
                        gain: bc.gain,
                        offset: bc.offset,
                        lambda: bc.lambda,
                    })
                    .collect(),
            })
            .collect();
        let synapses = self
            .synapses
            .iter()
            .map(|sc| SynapseSpec {
                pre: sc.pre,
                post: sc.post,
                gain: sc.gain,
                offset: sc.offset,
                tau: sc.tau,
                slope: sc.slope,
            })
            .collect();
        let mut inputs = Vec::new();
        for (i, ic) in self.inputs.iter().enumerate() {
            let at = |field: &str| format!("/inputs/{i}/{field}");
            let waveform = match ic.kind {
                InputKindConfig::Pulse => {
                    let t_on = ic
                        .t_on
                        .ok_or_else(|| Error::config_at(at("t_on"), "pulse needs t_on"))?;
                    let t_off = ic
                        .t_off
                        .ok_or_else(|| Error::config_at(at("t_off"), "pulse needs t_off"))?;
                    let amplitude = ic.amplitude.ok_or_else(|| {
                        Error::config_at(at("amplitude"), "pulse needs amplitude")
                    })?;
                    if ic.path.is_some() {
                        return Err(Error::config_at(at("path"), "pulse takes no path"));
                    }
                    if !(0.0 <= t_on && t_on < t_off && t_off <= self.grid.duration_ms) {
                        return Err(Error::config_at(
                            at("t_on"),
                            format!(
                                "pulse window [{t_on}, {t_off}) must lie inside [0, {}]",
                                self.grid.duration_ms
                            ),
                        ));
                    }
                    InputWaveform::Pulse {
                        t_on,
                        t_off,
                        amplitude,
                    }
                }
                InputKindConfig::Hold => {
                    let amplitude = ic.amplitude.ok_or_else(|| {
                        Error::config_at(at("amplitude"), "hold needs amplitude")
                    })?;
                    if ic.t_on.is_some() || ic.t_off.is_some() || ic.path.is_some() {
                        return Err(Error::config_at(
                            at("kind"),
                            "hold takes only an amplitude",
                        ));
                    }
                    InputWaveform::Hold { amplitude }
                }
                InputKindConfig::File => {
                    let path = ic
                        .path
                        .as_ref()
                        .ok_or_else(|| Error::config_at(at("path"), "file input needs path"))?;
                    if ic.t_on.is_some() || ic.t_off.is_some() {
                        return Err(Error::config_at(
                            at("t_on"),
                            "file input takes no pulse window",
                        ));
                    }
                    let full = base_dir.join(path);
                    let file = std::fs::File::open(&full).map_err(|e| {
                        Error::config_at(at("path"), format!("cannot open {}: {e}", full.display()))
                    })?;
                    let signal = Signal::read_csv(std::io::BufReader::new(file))?;
                    InputWaveform::File {
                        signal,
                        scale: ic.amplitude.unwrap_or(1.0),
                    }
                }
            };
            inputs.push(InputSpec {
                neuron: ic.neuron,
                waveform,
            });
        }
        let spec = NetworkSpec::new(neurons, synapses, inputs)?;
        Ok((spec, grid))
    }
}

/// Loads and validates a network configuration file.
pub fn load_network_config(path: &Path) -> Result<(NetworkConfig, NetworkSpec, TimeGrid)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    let config = NetworkConfig::from_json_str(&text)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let (spec, grid) = config.build(base)?;
    Ok((config, spec, grid))
}

/// Converts a serde path like `neurons[0].branches[2].gain` into a JSON
/// pointer `/neurons/0/branches/2/gain`.
fn json_pointer(serde_path: &str) -> String {
    if serde_path.is_empty() || serde_path == "." {
        return "/".to_string();
    }
    let mut out = String::new();
    for segment in serde_path.split('.') {
        let mut rest = segment;
        while let Some(open) = rest.find('[') {
            let name = &rest[..open];
            if !name.is_empty() {
                out.push('/');
                out.push_str(name);
            }
            let close = rest.find(']').unwrap_or(rest.len());
            out.push('/');
            out.push_str(&rest[open + 1..close]);
            rest = rest.get(close + 1..).unwrap_or("");
        }
        if !rest.is_empty() {
            out.push('/');
            out.push_str(rest);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(duration: f64, fs: f64) -> TimeGrid {
        TimeGrid::new(duration, fs).unwrap()
    }

    fn branch(ts: Timescale, tau: f64, gain: f64, offset: f64) -> BranchSpec {
        BranchSpec {
            timescale: ts,
            tau,
            kind: ReadoutKind::Tanh,
            gain,
            offset,
            lambda: None,
        }
    }

    /// The worked single spiking neuron: unit leak, -2 tanh(v) instantaneous,
    /// +2 tanh(v_f) at tau = 50 ms.
    pub(crate) fn spiking_neuron() -> NeuronSpec {
        NeuronSpec {
            capacitance: 1.0,
            leak: 1.0,
            resting_potential: 0.0,
            branches: vec![
                branch(Timescale::Instantaneous, 0.0, -2.0, 0.0),
                BranchSpec {
                    lambda: Some(4.0),
                    ..branch(Timescale::Fast, 50.0, 2.0, 0.0)
                },
            ],
        }
    }

    #[test]
    fn neuron_equilibrium_residual_is_zero() {
        // For the spiking neuron the instantaneous terms cancel at v = 0 by
        // odd symmetry, so rest is an equilibrium with zero input.
        let g = grid(100.0, 4.0);
        let net = NetworkSpec::new(vec![spiking_neuron()], vec![], vec![]).unwrap();
        let x = net.resting_state(g);
        let (_, norm) = residual(&net, &x).unwrap();
        assert!(norm < 1e-8, "normalized residual {norm}");
    }

    #[test]
    fn neuron_operator_is_nonlinear() {
        let g = grid(50.0, 4.0);
        let neuron = spiking_neuron();
        let v = Signal::from_fn(g, |t| 1.5 * (0.3 * t).sin());
        let mut doubled = v.clone();
        doubled.scale(2.0);
        let lhs = apply_neuron(&neuron, &doubled);
        let mut rhs = apply_neuron(&neuron, &v);
        rhs.scale(2.0);
        let diff: f64 = lhs
            .samples()
            .iter()
            .zip(rhs.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-3, "apply_neuron looks linear (max diff {diff})");
    }

    #[test]
    fn synapse_midpoint_and_saturation() {
        let g = grid(10.0, 4.0);
        let syn = SynapseSpec {
            pre: 0,
            post: 1,
            gain: 0.8,
            offset: 0.0,
            tau: 0.0,
            slope: 1.0,
        };
        // v_pre at the offset: sigmoid(0) = 1/2.
        let out = apply_synapse(&syn, &Signal::constant(g, 0.0));
        for &x in out.samples() {
            assert_abs_diff_eq!(x, 0.4, epsilon = 1e-12);
        }
        // Far below the offset the synapse shuts off.
        let out = apply_synapse(&syn, &Signal::constant(g, -40.0));
        for &x in out.samples() {
            assert!(x.abs() < 1e-12);
        }
        // The half-center-oscillator synapse stays within [0, 0.8].
        let hco = SynapseSpec {
            slope: 2.0,
            offset: 1.0,
            ..syn
        };
        let burst = Signal::from_fn(g, |t| 2.5 * (0.9 * t).sin());
        for &x in apply_synapse(&hco, &burst).samples() {
            assert!((0.0..=0.8).contains(&x));
        }
    }

    #[test]
    fn network_wiring_routes_synapses() {
        let g = grid(20.0, 4.0);
        let neurons = vec![spiking_neuron(), spiking_neuron()];
        let syn = SynapseSpec {
            pre: 1,
            post: 0,
            gain: 0.8,
            offset: 1.0,
            tau: 0.0,
            slope: 2.0,
        };
        let net = NetworkSpec::new(neurons, vec![syn.clone()], vec![]).unwrap();
        let v = LiftedSignal::new(vec![
            Signal::constant(g, 0.2),
            Signal::constant(g, 1.4),
        ])
        .unwrap();
        let w = assemble_network(&net).apply(&v).unwrap();
        let alone = apply_neuron(&net.neuron(0), v.part(0));
        let syn_current = apply_synapse(&syn, v.part(1));
        for ((full, bare), s) in w
            .part(0)
            .samples()
            .iter()
            .zip(alone.samples())
            .zip(syn_current.samples())
        {
            assert_abs_diff_eq!(full - bare, s, epsilon = 1e-12);
        }
        // Neuron 1 receives nothing.
        let alone1 = apply_neuron(&net.neuron(1), v.part(1));
        assert_eq!(w.part(1), &alone1);
    }

    #[test]
    fn single_neuron_network_is_apply_neuron() {
        let g = grid(30.0, 4.0);
        let net = NetworkSpec::new(vec![spiking_neuron()], vec![], vec![]).unwrap();
        let v = LiftedSignal::new(vec![Signal::from_fn(g, |t| (0.21 * t).sin())]).unwrap();
        let w = assemble_network(&net).apply(&v).unwrap();
        assert_eq!(w.part(0), &apply_neuron(&net.neuron(0), v.part(0)));
    }

    #[test]
    fn splitting_matches_worked_example() {
        // E = C D, F1 = Id - i_ext, G1 = 2 tanh, F2 = 2 tanh(lag .) + lambda Id,
        // G2 = lambda Id.
        let g = grid(100.0, 2.0);
        let net = NetworkSpec::new(
            vec![spiking_neuron()],
            vec![],
            vec![InputSpec {
                neuron: 0,
                waveform: InputWaveform::Hold { amplitude: -1.2 },
            }],
        )
        .unwrap();
        let split = split_network(&net, g, &ShiftPolicy::default()).unwrap();
        assert_eq!(split.num_pairs(), 2);

        let p0 = &split.pairs()[0];
        assert_eq!(p0.provenance, PairProvenance::Leak { neuron: 0 });
        match (&p0.f, &p0.g) {
            (FOp::LeakAffine { leak, i_ext, .. }, GOp::Readouts { readouts, .. }) => {
                assert_abs_diff_eq!(*leak, 1.0);
                assert!(i_ext.samples().iter().all(|&x| x == -1.2));
                assert_eq!(readouts.len(), 1);
                assert_abs_diff_eq!(readouts[0].gain, 2.0);
                assert_eq!(readouts[0].kind, ReadoutKind::Tanh);
            }
            other => panic!("unexpected leak pair {other:?}"),
        }
        let p1 = &split.pairs()[1];
        match (&p1.f, &p1.g) {
            (FOp::Branch { branch, .. }, GOp::Shift { lambda, .. }) => {
                assert_abs_diff_eq!(branch.lambda, 4.0);
                assert_abs_diff_eq!(branch.readout.gain, 2.0);
                assert_abs_diff_eq!(branch.lag.tau(), 50.0);
                assert_abs_diff_eq!(*lambda, 4.0);
            }
            other => panic!("unexpected branch pair {other:?}"),
        }
        assert_eq!(split.operator_count(), 5);
        assert_eq!(split.formula_operator_count(), 2 + 4 + 1);
    }

    #[test]
    fn zero_gain_network_reduces_to_capacitor() {
        let g = grid(50.0, 2.0);
        let neuron = NeuronSpec {
            capacitance: 1.0,
            leak: 0.0,
            resting_potential: 0.0,
            branches: vec![
                branch(Timescale::Instantaneous, 0.0, 0.0, 0.0),
                branch(Timescale::Fast, 50.0, 0.0, 0.0),
            ],
        };
        let net = NetworkSpec::new(vec![neuron], vec![], vec![]).unwrap();
        let split = split_network(&net, g, &ShiftPolicy::default()).unwrap();
        let x = LiftedSignal::new(vec![Signal::from_fn(g, |t| (0.4 * t).cos())]).unwrap();
        // All F_i - G_i vanish, so the residual is C*Dv - i_ext = C*Dv.
        let (r, _) = split.zfp_residual(&x);
        let d = CapacitiveDifferentiator::new(1.0).unwrap();
        let dv = d.apply(x.part(0));
        for (a, b) in r.part(0).samples().iter().zip(dv.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn splitting_rejects_undersized_shifts() {
        let g = grid(50.0, 2.0);
        let mut neuron = spiking_neuron();
        neuron.branches[1].lambda = Some(1.0); // below |gain| = 2
        let net = NetworkSpec::new(vec![neuron], vec![], vec![]).unwrap();
        let err = split_network(&net, g, &ShiftPolicy::default()).unwrap_err();
        match err {
            Error::InadmissibleShifts { pairs, .. } => {
                assert_eq!(pairs.len(), 1);
                assert!(pairs[0].contains("neuron 0 branch 1"));
            }
            other => panic!("expected inadmissible shifts, got {other}"),
        }
    }

    #[test]
    fn certificate_flags_large_step_on_unshifted_branch() {
        let g = grid(20.0, 4.0);
        let neuron = NeuronSpec {
            capacitance: 1.0,
            leak: 1.0,
            resting_potential: 0.0,
            branches: vec![BranchSpec {
                lambda: Some(0.0),
                ..branch(Timescale::Instantaneous, 0.0, 2.0, 0.0)
            }],
        };
        let net = NetworkSpec::new(vec![neuron], vec![], vec![]).unwrap();
        let split = split_network(&net, g, &ShiftPolicy::default()).unwrap();
        // p = 2 pairs, alpha = 1: gamma_step = 2, factor = |2*2| / 1 = 4.
        let report = validate_certificate(&split, 1.0, 7, 8);
        assert!(!report.all_contractions_ok);
        let flagged = report
            .pairs
            .iter()
            .find(|d| d.contraction_factor.is_some())
            .unwrap();
        assert!(flagged.contraction_factor.unwrap() >= 1.0);
        assert!(!flagged.contraction_ok);
    }

    #[test]
    fn config_round_trip_and_pointer_errors() {
        let text = r#"{
            "neurons": [{
                "C": 1.0, "rest": 0.0,
                "branches": [
                    {"timescale": "ins", "tau": 0.0, "kind": "tanh", "gain": -2.0, "offset": 0.0},
                    {"timescale": "f", "tau": 50.0, "kind": "tanh", "gain": 2.0, "offset": 0.0, "lambda": 4.0}
                ]
            }],
            "inputs": [{"neuron": 0, "kind": "pulse", "t_on": 100.0, "t_off": 150.0, "amplitude": 0.5}],
            "grid": {"duration_ms": 1200.0, "fs": 10.0}
        }"#;
        let cfg = NetworkConfig::from_json_str(text).unwrap();
        assert_abs_diff_eq!(cfg.neurons[0].leak, 1.0); // default unit leak
        let (net, grid) = cfg.build(Path::new(".")).unwrap();
        assert_eq!(net.num_neurons(), 1);
        assert_eq!(grid.len(), 12000);

        let bad = text.replace("\"gain\": -2.0", "\"gain\": \"big\"");
        let err = NetworkConfig::from_json_str(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("/neurons/0/branches/0/gain"),
            "missing pointer in {msg}"
        );

        let unknown = text.replace("\"rest\": 0.0,", "\"rest\": 0.0, \"colour\": 3,");
        let err = NetworkConfig::from_json_str(&unknown).unwrap_err();
        assert!(err.to_string().contains("colour"), "got {err}");
    }

    #[test]
    fn hold_input_validation() {
        let text = r#"{
            "neurons": [{"C": 1.0, "rest": 0.0,
                "branches": [{"timescale": "ins", "tau": 0.0, "kind": "tanh", "gain": -2.0, "offset": 0.0}]}],
            "inputs": [{"neuron": 0, "kind": "hold", "amplitude": -1.0, "t_on": 3.0}],
            "grid": {"duration_ms": 100.0, "fs": 1.0}
        }"#;
        let cfg = NetworkConfig::from_json_str(text).unwrap();
        let err = cfg.build(Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("/inputs/0"), "got {err}");
    }

    #[test]
    fn json_pointer_conversion() {
        assert_eq!(
            json_pointer("neurons[0].branches[2].gain"),
            "/neurons/0/branches/2/gain"
        );
        assert_eq!(json_pointer("grid.fs"), "/grid/fs");
        assert_eq!(json_pointer("inputs[10]"), "/inputs/10");
    }
}
