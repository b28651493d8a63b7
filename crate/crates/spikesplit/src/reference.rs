//! Numerical-integration baseline: a state-space reformulation of the
//! circuit, an adaptive implicit integrator, event detection and
//! solution-comparison metrics.
//!
//! Each first-order lag `(tau*D + Id)^{-1}` corresponds to the ODE
//! `tau * v_x' = v - v_x`, so a network unrolls into the stiff system
//!
//! ```text
//! C_k * v_k'     = i_ext,k(t) - leak_k*v_k - sum_b readout_b(v_{k,tau_b})
//!                  - sum_{j->k} readout_s(v_{j,tau_s})
//! tau * v_{k,tau}' = v_k - v_{k,tau}
//! ```
//!
//! with one auxiliary state per distinct lag per neuron (synaptic lags count
//! on the presynaptic side). Integration uses TR-BDF2 (trapezoidal stage
//! followed by a BDF2 stage), an L-stable one-step method with an embedded
//! third-order error estimate, solving each implicit stage by a damped
//! Newton iteration on the analytic Jacobian. Explicit schemes are not an
//! option for these multiscale dynamics.

use serde::Serialize;

use crate::circuit::{NetworkSpec, NeuronSpec};
use crate::error::{Error, Result};
use crate::operators::NonlinearReadout;
use crate::signal::{Signal, TimeGrid};
use crate::solver::Solution;

/// Default gap (ms) separating bursts, sized for slow-timescale models.
pub const DEFAULT_BURST_GAP_MS: f64 = 500.0;

/// Default spike threshold: midpoint between the resting potential and the
/// saturation ceiling `rest + max(sum of positive gains, sum of negative
/// gain magnitudes)`.
pub fn default_spike_threshold(neuron: &NeuronSpec) -> f64 {
    let pos: f64 = neuron
        .branches
        .iter()
        .filter(|b| b.gain > 0.0)
        .map(|b| b.gain)
        .sum();
    let neg: f64 = neuron
        .branches
        .iter()
        .filter(|b| b.gain < 0.0)
        .map(|b| -b.gain)
        .sum();
    neuron.resting_potential + 0.5 * pos.max(neg)
}

/// A current source inside the state-space right-hand side: a readout fed by
/// one state-vector entry.
#[derive(Debug, Clone)]
struct CurrentSource {
    readout: NonlinearReadout,
    state_index: usize,
}

#[derive(Debug, Clone)]
struct LagVariable {
    neuron: usize,
    tau: f64,
    index: usize,
}

/// State-space form of a network.
#[derive(Debug, Clone)]
pub struct OdeSystem {
    net: NetworkSpec,
    /// Index of each membrane voltage in the state vector.
    v_index: Vec<usize>,
    lags: Vec<LagVariable>,
    /// Per neuron, the branch and synaptic currents it sinks.
    sources: Vec<Vec<CurrentSource>>,
    dim: usize,
}

/// Unrolls the network into membrane equations plus one lag ODE per distinct
/// `(neuron, tau)` with `tau > 0`, counting synaptic lags on the
/// presynaptic side.
pub fn to_state_space(net: &NetworkSpec) -> OdeSystem {
    let n = net.num_neurons();
    let v_index: Vec<usize> = (0..n).collect();
    let mut lags: Vec<LagVariable> = Vec::new();
    let mut lag_index = |neuron: usize, tau: f64, next: &mut usize| -> usize {
        if let Some(l) = lags.iter().find(|l| l.neuron == neuron && l.tau == tau) {
            return l.index;
        }
        let index = *next;
        *next += 1;
        lags.push(LagVariable { neuron, tau, index });
        index
    };

    let mut next = n;
    let mut sources: Vec<Vec<CurrentSource>> = vec![Vec::new(); n];
    for (k, neuron) in net.neurons().iter().enumerate() {
        for b in &neuron.branches {
            let state_index = if b.tau > 0.0 {
                lag_index(k, b.tau, &mut next)
            } else {
                v_index[k]
            };
            sources[k].push(CurrentSource {
                readout: NonlinearReadout {
                    kind: b.kind,
                    gain: b.gain,
                    offset: b.offset,
                    slope: 1.0,
                },
                state_index,
            });
        }
    }
    for syn in net.synapses() {
        let state_index = if syn.tau > 0.0 {
            lag_index(syn.pre, syn.tau, &mut next)
        } else {
            v_index[syn.pre]
        };
        sources[syn.post].push(CurrentSource {
            readout: NonlinearReadout {
                kind: crate::operators::ReadoutKind::Sigmoid,
                gain: syn.gain,
                offset: syn.offset,
                slope: syn.slope,
            },
            state_index,
        });
    }

    OdeSystem {
        net: net.clone(),
        v_index,
        lags,
        sources,
        dim: next,
    }
}

impl OdeSystem {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_neurons(&self) -> usize {
        self.v_index.len()
    }

    /// Resting initial state: every voltage and every filtered copy at the
    /// neuron's resting potential.
    pub fn initial_state(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for (k, neuron) in self.net.neurons().iter().enumerate() {
            y[self.v_index[k]] = neuron.resting_potential;
        }
        for lag in &self.lags {
            y[lag.index] = self.net.neuron(lag.neuron).resting_potential;
        }
        y
    }

    pub fn rhs(&self, t: f64, y: &[f64], dydt: &mut [f64]) {
        for (k, neuron) in self.net.neurons().iter().enumerate() {
            let v = y[self.v_index[k]];
            let mut current = self.net.external_current_at(k, t) - neuron.leak * v;
            for src in &self.sources[k] {
                current -= src.readout.eval(y[src.state_index]);
            }
            dydt[self.v_index[k]] = current / neuron.capacitance;
        }
        for lag in &self.lags {
            dydt[lag.index] = (y[self.v_index[lag.neuron]] - y[lag.index]) / lag.tau;
        }
    }

    /// Dense Jacobian of the right-hand side (input terms are additive, so
    /// it does not depend on `t`).
    pub fn jacobian(&self, y: &[f64], jac: &mut [f64]) {
        let dim = self.dim;
        jac.fill(0.0);
        for (k, neuron) in self.net.neurons().iter().enumerate() {
            let row = self.v_index[k];
            jac[row * dim + row] -= neuron.leak / neuron.capacitance;
            for src in &self.sources[k] {
                jac[row * dim + src.state_index] -=
                    src.readout.eval_derivative(y[src.state_index]) / neuron.capacitance;
            }
        }
        for lag in &self.lags {
            jac[lag.index * dim + self.v_index[lag.neuron]] += 1.0 / lag.tau;
            jac[lag.index * dim + lag.index] -= 1.0 / lag.tau;
        }
    }
}

/// In-place dense solve by Gaussian elimination with partial pivoting.
/// Sized for state dimensions of a handful of neurons.
fn solve_dense(a: &mut [f64], b: &mut [f64], dim: usize) -> Result<()> {
    for col in 0..dim {
        let mut pivot = col;
        let mut best = a[col * dim + col].abs();
        for row in col + 1..dim {
            let v = a[row * dim + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best < 1e-300 {
            return Err(Error::config("singular Newton matrix in the integrator"));
        }
        if pivot != col {
            for j in 0..dim {
                a.swap(col * dim + j, pivot * dim + j);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * dim + col];
        for row in col + 1..dim {
            let factor = a[row * dim + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for j in col..dim {
                a[row * dim + j] -= factor * a[col * dim + j];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..dim).rev() {
        let mut acc = b[col];
        for j in col + 1..dim {
            acc -= a[col * dim + j] * b[j];
        }
        b[col] = acc / a[col * dim + col];
    }
    Ok(())
}

struct NewtonWorkspace {
    jac: Vec<f64>,
    mat: Vec<f64>,
    rhs: Vec<f64>,
    f: Vec<f64>,
}

/// Solves `y - eta*h*f(t, y) = r` by Newton iteration starting from `guess`.
fn implicit_stage(
    ode: &OdeSystem,
    t: f64,
    eta_h: f64,
    r: &[f64],
    guess: &[f64],
    tol: &[f64],
    ws: &mut NewtonWorkspace,
) -> Option<Vec<f64>> {
    let dim = ode.dim();
    let mut y = guess.to_vec();
    for _ in 0..25 {
        ode.rhs(t, &y, &mut ws.f);
        // residual = y - eta*h*f - r
        let mut res_scale = 0.0f64;
        for i in 0..dim {
            ws.rhs[i] = -(y[i] - eta_h * ws.f[i] - r[i]);
            res_scale = res_scale.max(ws.rhs[i].abs() / tol[i]);
        }
        ode.jacobian(&y, &mut ws.jac);
        for i in 0..dim {
            for j in 0..dim {
                let v = -eta_h * ws.jac[i * dim + j];
                ws.mat[i * dim + j] = if i == j { 1.0 + v } else { v };
            }
        }
        if solve_dense(&mut ws.mat, &mut ws.rhs, dim).is_err() {
            return None;
        }
        let mut step_scale = 0.0f64;
        for i in 0..dim {
            y[i] += ws.rhs[i];
            step_scale = step_scale.max(ws.rhs[i].abs() / tol[i]);
        }
        if !y.iter().all(|v| v.is_finite()) {
            return None;
        }
        if step_scale < 1e-3 && res_scale < 1.0 {
            return Some(y);
        }
    }
    None
}

/// Integrates the stiff system with TR-BDF2 under adaptive step control and
/// resamples the dense output onto `grid` by cubic Hermite interpolation.
///
/// `dt_max` caps the step, `rtol` controls the local error (the absolute
/// tolerance floor is `1e-2 * rtol`, voltages being order one). Integration
/// restarts exactly at every input discontinuity.
pub fn integrate(
    ode: &OdeSystem,
    grid: TimeGrid,
    dt_max: f64,
    rtol: f64,
) -> Result<Vec<Signal>> {
    if !(dt_max > 0.0 && rtol > 0.0) {
        return Err(Error::config("dt_max and rtol must be positive"));
    }
    let dim = ode.dim();
    let n = ode.num_neurons();
    let atol = 1e-2 * rtol;
    let gamma = 2.0 - std::f64::consts::SQRT_2;
    let d = (1.0 - gamma) / (2.0 - gamma);
    let b1 = 1.0 / (2.0 * (2.0 - gamma));
    // Embedded third-order quadrature weights for the error estimate.
    let bh2 = 1.0 / (6.0 * gamma * (1.0 - gamma));
    let bh3 = 0.5 - gamma * bh2;
    let bh1 = 1.0 - bh2 - bh3;
    let (e1, e2, e3) = (b1 - bh1, b1 - bh2, d - bh3);

    let duration = grid.len() as f64 * grid.dt();
    let mut stops: Vec<f64> = ode
        .net
        .input_breakpoints()
        .into_iter()
        .filter(|&t| t > 0.0 && t < duration)
        .collect();
    stops.push(duration);

    let mut ws = NewtonWorkspace {
        jac: vec![0.0; dim * dim],
        mat: vec![0.0; dim * dim],
        rhs: vec![0.0; dim],
        f: vec![0.0; dim],
    };

    let mut t = 0.0;
    let mut y = ode.initial_state();
    let mut f0 = vec![0.0; dim];
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.len()); n];
    let mut next_sample = 0usize;

    // Record the grid samples covered by a completed step using cubic
    // Hermite interpolation between the endpoints.
    let mut emit = |t0: f64,
                    y0: &[f64],
                    f0: &[f64],
                    t1: f64,
                    y1: &[f64],
                    f1: &[f64],
                    next_sample: &mut usize,
                    out: &mut Vec<Vec<f64>>| {
        while *next_sample < grid.len() {
            let ts = grid.time(*next_sample);
            if ts > t1 + 1e-12 {
                break;
            }
            let h = t1 - t0;
            let s = ((ts - t0) / h).clamp(0.0, 1.0);
            let (s2, s3) = (s * s, s * s * s);
            let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
            let h10 = s3 - 2.0 * s2 + s;
            let h01 = -2.0 * s3 + 3.0 * s2;
            let h11 = s3 - s2;
            for k in 0..n {
                let idx = ode.v_index[k];
                out[k].push(
                    h00 * y0[idx] + h10 * h * f0[idx] + h01 * y1[idx] + h11 * h * f1[idx],
                );
            }
            *next_sample += 1;
        }
    };

    for &stop in &stops {
        ode.rhs(t, &y, &mut f0);
        // Sample exactly at segment starts (handles t = 0 and pulse edges
        // landing on grid points).
        {
            let y0 = y.clone();
            let fi = f0.clone();
            emit(t, &y0, &fi, t, &y0, &fi, &mut next_sample, &mut out);
        }
        let mut h = dt_max.min(stop - t);
        while t < stop - 1e-12 {
            h = h.min(stop - t).min(dt_max);
            if h < 1e-12 * duration {
                return Err(Error::Stiffness { t, h });
            }
            let tol: Vec<f64> = y.iter().map(|v| atol + rtol * v.abs()).collect();

            // TR stage to t + gamma*h.
            let mut r = vec![0.0; dim];
            for i in 0..dim {
                r[i] = y[i] + 0.5 * gamma * h * f0[i];
            }
            let Some(y_mid) = implicit_stage(ode, t + gamma * h, 0.5 * gamma * h, &r, &y, &tol, &mut ws)
            else {
                h *= 0.25;
                continue;
            };
            let mut f_mid = vec![0.0; dim];
            ode.rhs(t + gamma * h, &y_mid, &mut f_mid);

            // BDF2 stage to t + h.
            let c1 = 1.0 / (gamma * (2.0 - gamma));
            let c0 = (1.0 - gamma) * (1.0 - gamma) / (gamma * (2.0 - gamma));
            for i in 0..dim {
                r[i] = c1 * y_mid[i] - c0 * y[i];
            }
            let Some(y_new) = implicit_stage(ode, t + h, d * h, &r, &y_mid, &tol, &mut ws) else {
                h *= 0.25;
                continue;
            };
            let mut f_new = vec![0.0; dim];
            ode.rhs(t + h, &y_new, &mut f_new);

            // Embedded error estimate.
            let mut err: f64 = 0.0;
            for i in 0..dim {
                let e = h * (e1 * f0[i] + e2 * f_mid[i] + e3 * f_new[i]);
                let sc = atol + rtol * y[i].abs().max(y_new[i].abs());
                err += (e / sc) * (e / sc);
            }
            let err = (err / dim as f64).sqrt();

            if err <= 1.0 {
                emit(t, &y, &f0, t + h, &y_new, &f_new, &mut next_sample, &mut out);
                t += h;
                y = y_new;
                f0 = f_new;
                let factor = if err > 0.0 {
                    (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0)
                } else {
                    5.0
                };
                h *= factor;
            } else {
                h *= (0.9 * err.powf(-1.0 / 3.0)).clamp(0.1, 0.5);
            }
        }
        t = stop;
    }

    debug_assert_eq!(next_sample, grid.len());
    out.into_iter().map(|s| Signal::new(grid, s)).collect()
}

/// A detected spike: refined peak time (ms) and peak value, plus the
/// threshold-crossing window it came from.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Spike {
    pub time: f64,
    pub peak: f64,
    pub rise: f64,
    pub fall: f64,
}

/// A maximal group of spikes separated by gaps shorter than the burst gap.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Burst {
    pub onset: f64,
    pub offset: f64,
    pub spike_count: usize,
}

/// Spikes and bursts of one trajectory.
#[derive(Debug, Clone, Default, Serialize)]
pub struct EventList {
    pub spikes: Vec<Spike>,
    pub bursts: Vec<Burst>,
}

impl EventList {
    pub fn spike_count(&self) -> usize {
        self.spikes.len()
    }
}

/// Detects spikes as upward threshold crossings refined to the local
/// maximum, and groups them into bursts separated by gaps below `burst_gap`
/// (ms).
pub fn detect_events(v: &Signal, spike_threshold: f64, burst_gap: f64) -> EventList {
    let s = v.samples();
    let dt = v.grid().dt();
    let mut spikes = Vec::new();

    let mut i = 0;
    while i < s.len() {
        if s[i] < spike_threshold {
            i += 1;
            continue;
        }
        // Excursion [i, j) above threshold.
        let rise = if i == 0 {
            0.0
        } else {
            let frac = (spike_threshold - s[i - 1]) / (s[i] - s[i - 1]);
            (i as f64 - 1.0 + frac) * dt
        };
        let mut j = i;
        let mut m = i;
        while j < s.len() && s[j] >= spike_threshold {
            if s[j] > s[m] {
                m = j;
            }
            j += 1;
        }
        let fall = if j == s.len() {
            (s.len() - 1) as f64 * dt
        } else {
            let frac = (s[j - 1] - spike_threshold) / (s[j - 1] - s[j]);
            ((j - 1) as f64 + frac) * dt
        };
        // Parabolic refinement of the peak.
        let (time, peak) = if m > 0 && m + 1 < s.len() {
            let denom = s[m - 1] - 2.0 * s[m] + s[m + 1];
            if denom.abs() > 1e-300 {
                let delta = 0.5 * (s[m - 1] - s[m + 1]) / denom;
                let delta = delta.clamp(-0.5, 0.5);
                (
                    (m as f64 + delta) * dt,
                    s[m] - 0.25 * (s[m - 1] - s[m + 1]) * delta,
                )
            } else {
                (m as f64 * dt, s[m])
            }
        } else {
            (m as f64 * dt, s[m])
        };
        spikes.push(Spike {
            time,
            peak,
            rise,
            fall,
        });
        i = j;
    }

    let mut bursts: Vec<Burst> = Vec::new();
    for spike in &spikes {
        match bursts.last_mut() {
            Some(b) if spike.rise - b.offset < burst_gap => {
                b.offset = spike.fall;
                b.spike_count += 1;
            }
            _ => bursts.push(Burst {
                onset: spike.rise,
                offset: spike.fall,
                spike_count: 1,
            }),
        }
    }
    EventList { spikes, bursts }
}

/// Agreement metrics between a reference trajectory and a candidate
/// solution.
#[derive(Debug, Clone, Serialize)]
pub struct CompareMetrics {
    pub max_abs_error: f64,
    pub rel_l2_error: f64,
    /// Candidate minus reference spike count, per neuron.
    pub spike_count_diff: Vec<i64>,
    /// Largest |candidate - reference| spike-time offset over spikes paired
    /// in order, ms.
    pub max_spike_time_offset: f64,
}

/// Compares a candidate solution against a reference trajectory on the
/// candidate's grid (the reference is resampled if needed).
pub fn compare(
    reference: &[Signal],
    candidate: &Solution,
    spike_threshold: f64,
    burst_gap: f64,
) -> Result<CompareMetrics> {
    if reference.len() != candidate.voltages.len() {
        return Err(Error::config(format!(
            "reference has {} neurons, candidate {}",
            reference.len(),
            candidate.voltages.len()
        )));
    }
    let mut max_abs: f64 = 0.0;
    let mut err_sq = 0.0;
    let mut ref_sq = 0.0;
    let mut count_diff = Vec::new();
    let mut max_offset: f64 = 0.0;
    for (r, c) in reference.iter().zip(&candidate.voltages) {
        let r = if r.grid() == c.grid() {
            r.clone()
        } else {
            r.resample(c.grid())?
        };
        for (a, b) in r.samples().iter().zip(c.samples()) {
            max_abs = max_abs.max((a - b).abs());
            err_sq += (a - b) * (a - b);
            ref_sq += a * a;
        }
        let ev_r = detect_events(&r, spike_threshold, burst_gap);
        let ev_c = detect_events(c, spike_threshold, burst_gap);
        count_diff.push(ev_c.spikes.len() as i64 - ev_r.spikes.len() as i64);
        for (sr, sc) in ev_r.spikes.iter().zip(&ev_c.spikes) {
            max_offset = max_offset.max((sr.time - sc.time).abs());
        }
    }
    Ok(CompareMetrics {
        max_abs_error: max_abs,
        rel_l2_error: (err_sq / ref_sq.max(1e-300)).sqrt(),
        spike_count_diff: count_diff,
        max_spike_time_offset: max_offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{BranchSpec, InputSpec, InputWaveform, NeuronSpec, Timescale};
    use crate::operators::ReadoutKind;
    use approx::assert_abs_diff_eq;

    fn zero_gain_branch(tau: f64) -> BranchSpec {
        BranchSpec {
            timescale: if tau > 0.0 {
                Timescale::Fast
            } else {
                Timescale::Instantaneous
            },
            tau,
            kind: ReadoutKind::Tanh,
            gain: 0.0,
            offset: 0.0,
            lambda: None,
        }
    }

    #[test]
    fn state_space_bookkeeping() {
        // Single neuron with one lagged branch: membrane + one filtered state.
        let neuron = NeuronSpec {
            capacitance: 1.0,
            leak: 1.0,
            resting_potential: 0.0,
            branches: vec![zero_gain_branch(50.0)],
        };
        let net = NetworkSpec::new(vec![neuron.clone()], vec![], vec![]).unwrap();
        assert_eq!(to_state_space(&net).dim(), 2);

        // An instantaneous branch reads the membrane directly: no extra state.
        let neuron_ins = NeuronSpec {
            branches: vec![zero_gain_branch(0.0)],
            ..neuron.clone()
        };
        let net = NetworkSpec::new(vec![neuron_ins], vec![], vec![]).unwrap();
        assert_eq!(to_state_space(&net).dim(), 1);

        // Two neurons, two distinct lags each, instantaneous synapses:
        // 2 + 2*2 states.
        let bursty = NeuronSpec {
            branches: vec![
                zero_gain_branch(0.0),
                zero_gain_branch(50.0),
                zero_gain_branch(50.0),
                zero_gain_branch(2500.0),
            ],
            ..neuron
        };
        let syn = crate::circuit::SynapseSpec {
            pre: 0,
            post: 1,
            gain: 0.8,
            offset: 1.0,
            tau: 0.0,
            slope: 2.0,
        };
        let syn_back = crate::circuit::SynapseSpec {
            pre: 1,
            post: 0,
            ..syn.clone()
        };
        let net =
            NetworkSpec::new(vec![bursty.clone(), bursty], vec![syn, syn_back], vec![]).unwrap();
        assert_eq!(to_state_space(&net).dim(), 2 + 4);
    }

    #[test]
    fn resting_network_stays_at_rest() {
        let neuron = NeuronSpec {
            capacitance: 1.0,
            leak: 0.0,
            resting_potential: 0.75,
            branches: vec![zero_gain_branch(50.0)],
        };
        let net = NetworkSpec::new(vec![neuron], vec![], vec![]).unwrap();
        let grid = TimeGrid::new(200.0, 1.0).unwrap();
        let traj = integrate(&to_state_space(&net), grid, 10.0, 1e-8).unwrap();
        for &v in traj[0].samples() {
            assert_abs_diff_eq!(v, 0.75, epsilon = 1e-10);
        }
    }

    // Linear RC cell under a step input against the closed-form exponential.
    #[test]
    fn rc_cell_matches_analytic_response() {
        let c = 2.0;
        let leak = 0.5;
        let amp = 1.2;
        let neuron = NeuronSpec {
            capacitance: c,
            leak,
            resting_potential: 0.0,
            branches: vec![zero_gain_branch(10.0)],
        };
        let net = NetworkSpec::new(
            vec![neuron],
            vec![],
            vec![InputSpec {
                neuron: 0,
                waveform: InputWaveform::Pulse {
                    t_on: 0.0,
                    t_off: 100.0,
                    amplitude: amp,
                },
            }],
        )
        .unwrap();
        let grid = TimeGrid::new(100.0, 4.0).unwrap();
        let traj = integrate(&to_state_space(&net), grid, 5.0, 1e-8).unwrap();
        for (k, &v) in traj[0].samples().iter().enumerate() {
            let t = grid.time(k);
            let expected = amp / leak * (1.0 - (-leak * t / c).exp());
            assert_abs_diff_eq!(v, expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn constant_signal_has_no_events() {
        let grid = TimeGrid::new(100.0, 1.0).unwrap();
        let ev = detect_events(&Signal::constant(grid, 0.2), 1.0, 50.0);
        assert!(ev.spikes.is_empty());
        assert!(ev.bursts.is_empty());
    }

    #[test]
    fn two_pulses_make_two_single_spike_bursts() {
        let grid = TimeGrid::new(200.0, 1.0).unwrap();
        let bump = |t: f64, t0: f64| (-((t - t0) / 4.0).powi(2)).exp();
        let v = Signal::from_fn(grid, |t| 2.0 * bump(t, 40.0) + 2.0 * bump(t, 160.0));
        let ev = detect_events(&v, 1.0, 50.0);
        assert_eq!(ev.spikes.len(), 2);
        assert_eq!(ev.bursts.len(), 2);
        assert!(ev.bursts.iter().all(|b| b.spike_count == 1));
        assert_abs_diff_eq!(ev.spikes[0].time, 40.0, epsilon = 0.5);
        assert_abs_diff_eq!(ev.spikes[1].time, 160.0, epsilon = 0.5);
        // Same pulses within one gap: a single two-spike burst.
        let ev = detect_events(&v, 1.0, 200.0);
        assert_eq!(ev.bursts.len(), 1);
        assert_eq!(ev.bursts[0].spike_count, 2);
    }

    #[test]
    fn event_detection_ignores_subthreshold_noise() {
        let grid = TimeGrid::new(300.0, 2.0).unwrap();
        let v = Signal::from_fn(grid, |t| 2.0 * (-((t - 150.0) / 5.0).powi(2)).exp());
        let clean = detect_events(&v, 1.0, 50.0);
        // Threshold margin is 1.0; perturb well below a tenth of it.
        let mut noisy = v.clone();
        for (k, s) in noisy.samples_mut().iter_mut().enumerate() {
            *s += 0.05 * ((k as f64) * 0.7).sin();
        }
        let perturbed = detect_events(&noisy, 1.0, 50.0);
        assert_eq!(clean.spikes.len(), perturbed.spikes.len());
        assert_abs_diff_eq!(clean.spikes[0].time, perturbed.spikes[0].time, epsilon = 1.0);
    }

    #[test]
    fn compare_metrics_identity_and_shift() {
        let grid = TimeGrid::new(100.0, 2.0).unwrap();
        let v = Signal::from_fn(grid, |t| 2.0 * (-((t - 50.0) / 3.0).powi(2)).exp());
        let solution = Solution {
            voltages: vec![v.clone()],
            converged: true,
            iterations: 1,
            final_relative_change: 0.0,
            final_normalized_residual: 0.0,
            config: crate::solver::SolverConfig::new(0.5, 2.0, 100.0),
            history: vec![],
        };
        let same = compare(&[v.clone()], &solution, 1.0, 50.0).unwrap();
        assert_eq!(same.max_abs_error, 0.0);
        assert_eq!(same.rel_l2_error, 0.0);
        assert_eq!(same.spike_count_diff, vec![0]);
        assert_eq!(same.max_spike_time_offset, 0.0);

        // Shift the reference by one sample: the spike-time offset is dt.
        let mut shifted = v.samples().to_vec();
        shifted.rotate_right(1);
        let shifted = Signal::new(grid, shifted).unwrap();
        let m = compare(&[shifted], &solution, 1.0, 50.0).unwrap();
        assert_abs_diff_eq!(m.max_spike_time_offset, grid.dt(), epsilon = 1e-9);
    }
}
