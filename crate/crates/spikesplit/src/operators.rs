//! The operator layer: LTI operators applied spectrally, nonlinear
//! conductance branches, resolvents, reflected resolvents and the consensus
//! machinery of the lifted space.
//!
//! LTI operators (differentiator, first-order lags) are diagonal in the
//! Fourier basis and hop between domains via FFT/iFFT; static nonlinearities
//! act pointwise in the time domain. Resolvents `J_{aA} = (Id + aA)^{-1}` of
//! LTI operators are exact spectral divisions. Branch resolvents have no
//! closed form and run an inner fixed-point iteration whose contraction
//! factor is `|gamma * gain| / (1 + lambda * gamma)`; the shift `lambda`
//! both restores monotonicity and buys contraction at large steps.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fft;
use crate::signal::{LiftedSignal, Signal};

/// Default relative tolerance of the inner branch-resolvent iteration.
pub const INNER_TOL_DEFAULT: f64 = 1e-8;
/// Default iteration cap of the inner branch-resolvent iteration.
pub const INNER_MAX_DEFAULT: usize = 200;
/// Below this norm the inner residual test switches from relative to
/// absolute.
pub const ZERO_NORM_GUARD: f64 = 1e-14;

/// First-order lag `(tau*D + Id)^{-1}` with unit DC gain.
///
/// `tau = 0` degenerates to the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderLag {
    tau: f64,
}

impl FirstOrderLag {
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::config(format!(
                "lag time constant must be nonnegative, got {tau}"
            )));
        }
        Ok(FirstOrderLag { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Spectral multiplication by `1/(1 + tau*j*omega)`.
    pub fn apply(&self, u: &Signal) -> Signal {
        if self.tau == 0.0 {
            return u.clone();
        }
        let tau = self.tau;
        let out = fft::apply_symbol(u.samples(), u.grid().dt(), |w| {
            rustfft::num_complex::Complex64::new(1.0, tau * w).inv()
        });
        Signal::from_raw(u.grid(), out)
    }
}

/// The capacitive element `C*D`, with `D` the differentiation operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacitiveDifferentiator {
    capacitance: f64,
}

impl CapacitiveDifferentiator {
    pub fn new(capacitance: f64) -> Result<Self> {
        if !capacitance.is_finite() || capacitance <= 0.0 {
            return Err(Error::config(format!(
                "capacitance must be positive, got {capacitance}"
            )));
        }
        Ok(CapacitiveDifferentiator { capacitance })
    }

    pub fn capacitance(&self) -> f64 {
        self.capacitance
    }

    /// Spectral multiplication by `C*j*omega`; maps constants to zero.
    pub fn apply(&self, u: &Signal) -> Signal {
        let c = self.capacitance;
        let out = fft::apply_symbol(u.samples(), u.grid().dt(), |w| {
            rustfft::num_complex::Complex64::new(0.0, c * w)
        });
        Signal::from_raw(u.grid(), out)
    }

    /// Resolvent `q = (Id + alpha*C*D)^{-1} w` via spectral division by
    /// `1 + alpha*C*j*omega`, which never vanishes for real frequencies.
    pub fn resolvent(&self, alpha: f64, w: &Signal) -> Signal {
        debug_assert!(alpha > 0.0);
        let ac = alpha * self.capacitance;
        let out = fft::apply_symbol(w.samples(), w.grid().dt(), |om| {
            rustfft::num_complex::Complex64::new(1.0, ac * om).inv()
        });
        Signal::from_raw(w.grid(), out)
    }
}

/// Shape of the static nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutKind {
    Tanh,
    Sigmoid,
}

impl ReadoutKind {
    fn eval(&self, x: f64) -> f64 {
        match self {
            ReadoutKind::Tanh => x.tanh(),
            // The logistic function; the source models never pin the exact
            // sigmoid, so the slope knob lives in `NonlinearReadout`.
            ReadoutKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            ReadoutKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ReadoutKind::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
        }
    }
}

/// Static nonlinear readout `gain * f(slope * (x - offset))`.
///
/// The sign of `gain` encodes positive versus negative conductance; the
/// readout is monotone nondecreasing in its argument for `gain > 0` and
/// nonincreasing for `gain < 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearReadout {
    pub kind: ReadoutKind,
    pub gain: f64,
    pub offset: f64,
    pub slope: f64,
}

impl NonlinearReadout {
    pub fn new(kind: ReadoutKind, gain: f64, offset: f64, slope: f64) -> Result<Self> {
        for (name, v) in [("gain", gain), ("offset", offset), ("slope", slope)] {
            if !v.is_finite() {
                return Err(Error::config(format!("readout {name} must be finite")));
            }
        }
        Ok(NonlinearReadout {
            kind,
            gain,
            offset,
            slope,
        })
    }

    pub fn tanh(gain: f64, offset: f64) -> Self {
        NonlinearReadout {
            kind: ReadoutKind::Tanh,
            gain,
            offset,
            slope: 1.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.gain * self.kind.eval(self.slope * (x - self.offset))
    }

    pub fn eval_derivative(&self, x: f64) -> f64 {
        self.gain * self.slope * self.kind.derivative(self.slope * (x - self.offset))
    }

    pub fn apply(&self, u: &Signal) -> Signal {
        let samples = u.samples().iter().map(|&x| self.eval(x)).collect();
        Signal::from_raw(u.grid(), samples)
    }
}

/// A conductance branch: first-order lag composed with a static readout,
/// plus a monotonizing shift `lambda * Id`.
///
/// Represents `u -> readout((tau*D + Id)^{-1} u) + lambda * u`. With
/// `lambda >= |gain|` (the Lipschitz bound of the readout through a lag of
/// unit DC gain) the branch is monotone in the grid inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductanceBranch {
    pub lag: FirstOrderLag,
    pub readout: NonlinearReadout,
    pub lambda: f64,
}

impl ConductanceBranch {
    pub fn new(lag: FirstOrderLag, readout: NonlinearReadout, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::config(format!(
                "branch shift lambda must be nonnegative, got {lambda}"
            )));
        }
        Ok(ConductanceBranch {
            lag,
            readout,
            lambda,
        })
    }

    pub fn describe(&self) -> String {
        format!(
            "{:?} branch (gain {}, tau {} ms, offset {}, lambda {})",
            self.readout.kind, self.readout.gain, self.lag.tau, self.readout.offset, self.lambda
        )
    }

    /// Forward evaluation: readout of the lag-filtered input plus the shift.
    pub fn apply(&self, u: &Signal) -> Signal {
        let mut out = self.readout.apply(&self.lag.apply(u));
        if self.lambda != 0.0 {
            out.axpy(self.lambda, u);
        }
        out
    }

    /// Contraction factor `|gamma * gain| / (1 + lambda * gamma)` of the
    /// inner resolvent iteration at step `gamma_step`.
    pub fn contraction_factor(&self, gamma_step: f64) -> f64 {
        (gamma_step * self.readout.gain).abs() / (1.0 + self.lambda * gamma_step)
    }

    /// Resolvent `q` with `q + gamma*branch(q) = w`, computed by the inner
    /// fixed-point iteration
    /// `q <- w/(1+lambda*gamma) - gamma/(1+lambda*gamma) * readout(lag(q))`.
    ///
    /// Starts from `warm` when given, else from `w/(1+lambda*gamma)`.
    /// Refuses with a configuration error when the contraction factor is not
    /// below one; reports non-convergence with the last residual when
    /// `inner_max` runs out before the relative residual reaches
    /// `inner_tol`. Residuals turn absolute when `||w||` is below
    /// [`ZERO_NORM_GUARD`].
    pub fn resolvent(
        &self,
        gamma_step: f64,
        w: &Signal,
        warm: Option<&Signal>,
        inner_tol: f64,
        inner_max: usize,
    ) -> Result<Signal> {
        let factor = self.contraction_factor(gamma_step);
        if factor >= 1.0 {
            return Err(Error::ResolventNotContractive {
                branch: self.describe(),
                factor,
                gamma_step,
            });
        }
        let denom = 1.0 + self.lambda * gamma_step;
        let coef = -gamma_step / denom;
        let w_norm = w.l2_norm();
        let absolute = w_norm < ZERO_NORM_GUARD;

        let mut base = w.clone();
        base.scale(1.0 / denom);
        let mut q = warm.cloned().unwrap_or_else(|| base.clone());
        let mut last_residual = f64::INFINITY;
        for _ in 0..inner_max {
            let filtered = self.lag.apply(&q);
            let mut next = base.clone();
            for (n, &f) in next.samples_mut().iter_mut().zip(filtered.samples()) {
                *n += coef * self.readout.eval(f);
            }
            // The fixed-point update makes the residual of the previous
            // iterate available for free:
            // q + gamma*branch(q) - w = (1 + lambda*gamma) * (q - next).
            let dt = q.grid().dt();
            let diff: f64 = q
                .samples()
                .iter()
                .zip(next.samples())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let residual_norm = denom * (dt * diff).sqrt();
            last_residual = if absolute {
                residual_norm
            } else {
                residual_norm / w_norm
            };
            q = next;
            if last_residual <= inner_tol {
                return Ok(q);
            }
        }
        Err(Error::InnerNoConvergence {
            branch: self.describe(),
            tol: inner_tol,
            max_iter: inner_max,
            last_residual,
            outer_iter: None,
        })
    }
}

/// An operator on single signals exposing its resolvent. The building block
/// for reflected resolvents and consensus-set resolvents.
pub trait SignalOp: Send + Sync {
    fn apply(&self, u: &Signal) -> Signal;
    fn resolvent(&self, alpha: f64, w: &Signal) -> Result<Signal>;
}

impl SignalOp for CapacitiveDifferentiator {
    fn apply(&self, u: &Signal) -> Signal {
        CapacitiveDifferentiator::apply(self, u)
    }
    fn resolvent(&self, alpha: f64, w: &Signal) -> Result<Signal> {
        Ok(CapacitiveDifferentiator::resolvent(self, alpha, w))
    }
}

impl SignalOp for ConductanceBranch {
    fn apply(&self, u: &Signal) -> Signal {
        ConductanceBranch::apply(self, u)
    }
    fn resolvent(&self, alpha: f64, w: &Signal) -> Result<Signal> {
        ConductanceBranch::resolvent(self, alpha, w, None, INNER_TOL_DEFAULT, INNER_MAX_DEFAULT)
    }
}

/// The zero operator.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroOp;

impl SignalOp for ZeroOp {
    fn apply(&self, u: &Signal) -> Signal {
        Signal::zeros(u.grid())
    }
    fn resolvent(&self, _alpha: f64, w: &Signal) -> Result<Signal> {
        Ok(w.clone())
    }
}

/// Pointwise affine operator `u -> a .* u + b`, monotone when `a >= 0`.
///
/// The scale is either a scalar or one value per sample; the resolvent is a
/// pointwise division.
#[derive(Debug, Clone)]
pub struct DiagonalAffine {
    scale: Vec<f64>,
    offset: Vec<f64>,
}

impl DiagonalAffine {
    pub fn new(scale: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if scale.len() != offset.len() {
            return Err(Error::config(
                "diagonal affine scale and offset lengths differ",
            ));
        }
        Ok(DiagonalAffine { scale, offset })
    }

    /// `u -> s*u + b` with uniform scale.
    pub fn uniform(len: usize, scale: f64, offset: f64) -> Self {
        DiagonalAffine {
            scale: vec![scale; len],
            offset: vec![offset; len],
        }
    }

    pub fn identity(len: usize) -> Self {
        Self::uniform(len, 1.0, 0.0)
    }
}

impl SignalOp for DiagonalAffine {
    fn apply(&self, u: &Signal) -> Signal {
        debug_assert_eq!(u.len(), self.scale.len());
        let samples = u
            .samples()
            .iter()
            .zip(self.scale.iter().zip(&self.offset))
            .map(|(&x, (&a, &b))| a * x + b)
            .collect();
        Signal::from_raw(u.grid(), samples)
    }

    fn resolvent(&self, alpha: f64, w: &Signal) -> Result<Signal> {
        debug_assert_eq!(w.len(), self.scale.len());
        let samples = w
            .samples()
            .iter()
            .zip(self.scale.iter().zip(&self.offset))
            .map(|(&x, (&a, &b))| (x - alpha * b) / (1.0 + alpha * a))
            .collect();
        Ok(Signal::from_raw(w.grid(), samples))
    }
}

/// Reflected resolvent (Cayley operator) `R_{aA} = 2 J_{aA} - Id`.
pub fn reflected_resolvent(op: &dyn SignalOp, alpha: f64, w: &Signal) -> Result<Signal> {
    let mut out = op.resolvent(alpha, w)?;
    out.scale(2.0);
    out.axpy(-1.0, w);
    Ok(out)
}

/// Arithmetic mean of the parts, summed left to right so that results are
/// bit-identical regardless of how the parts were produced.
pub fn consensus_mean(z: &LiftedSignal) -> Signal {
    let p = z.num_parts();
    let mut mean = z.part(0).clone();
    for i in 1..p {
        mean.axpy(1.0, z.part(i));
    }
    mean.scale(1.0 / p as f64);
    mean
}

/// Projection onto the consensus set: every part replaced by the mean.
pub fn project_consensus(z: &LiftedSignal) -> LiftedSignal {
    let mean = consensus_mean(z);
    LiftedSignal::from_raw(vec![mean; z.num_parts()])
}

/// Resolvent of `A + N_C` on the lifted space: the resolvent of `A` applied
/// to the consensus projection, replicated to all parts.
pub fn resolvent_consensus_sum(
    op: &dyn SignalOp,
    alpha: f64,
    z: &LiftedSignal,
) -> Result<LiftedSignal> {
    let common = op.resolvent(alpha, &consensus_mean(z))?;
    Ok(LiftedSignal::from_raw(vec![common; z.num_parts()]))
}

/// Sector and strong-monotonicity constants of a splitting, with the derived
/// averagedness parameter.
///
/// `rho` bounds the first operator, `gamma` the F-side, `[beta, beta+1/eps]`
/// the G-side sector. The splitting is admissible for step `alpha` when
/// `gamma > beta + 1 + 2/eps` and `0 < alpha <= 2/beta^2`, in which case the
/// fixed-point map is `theta`-averaged with `theta = 2/(4 - alpha*beta^2)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MonotonicityCertificate {
    pub rho: f64,
    pub gamma: f64,
    pub beta: f64,
    pub eps: f64,
    pub theta: f64,
}

impl MonotonicityCertificate {
    pub fn from_constants(rho: f64, gamma: f64, beta: f64, eps: f64, alpha: f64) -> Self {
        MonotonicityCertificate {
            rho,
            gamma,
            beta,
            eps,
            theta: Self::theta(alpha, beta),
        }
    }

    pub fn theta(alpha: f64, beta: f64) -> f64 {
        2.0 / (4.0 - alpha * beta * beta)
    }

    /// The sector-gap condition `gamma > beta + 1 + 2/eps`.
    pub fn sector_gap_ok(&self) -> bool {
        self.gamma > self.beta + 1.0 + 2.0 / self.eps
    }

    /// The step-size condition `0 < alpha <= 2/beta^2` together with
    /// `theta` landing in `(0, 1]`.
    pub fn step_ok(&self, alpha: f64) -> bool {
        let beta_sq = self.beta * self.beta;
        alpha > 0.0
            && (beta_sq == 0.0 || alpha <= 2.0 / beta_sq)
            && self.theta > 0.0
            && self.theta <= 1.0
    }

    pub fn admissible(&self, alpha: f64) -> bool {
        self.sector_gap_ok() && self.step_ok(alpha)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::TimeGrid;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(duration: f64, fs: f64) -> TimeGrid {
        TimeGrid::new(duration, fs).unwrap()
    }

    fn random_signal(g: TimeGrid, rng: &mut ChaCha8Rng) -> Signal {
        Signal::from_raw(g, (0..g.len()).map(|_| rng.gen_range(-2.0..2.0)).collect())
    }

    #[test]
    fn lag_preserves_constants_and_degenerates() {
        let g = grid(20.0, 8.0);
        let c = Signal::constant(g, 3.25);
        let lag = FirstOrderLag::new(17.0).unwrap();
        for (a, b) in lag.apply(&c).samples().iter().zip(c.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let id = FirstOrderLag::new(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_signal(g, &mut rng);
        assert_eq!(id.apply(&u), u);
    }

    // Analytic frequency response of the lag on a pure Fourier mode.
    #[test]
    fn lag_frequency_response() {
        let g = grid(64.0, 4.0);
        let mode = 5.0;
        let omega = 2.0 * PI * mode / (g.len() as f64 * g.dt());
        let tau = 12.0;
        let u = Signal::from_fn(g, |t| (omega * t).cos());
        let y = FirstOrderLag::new(tau).unwrap().apply(&u);
        let amp = 1.0 / (1.0 + tau * tau * omega * omega).sqrt();
        let phase = -(tau * omega).atan();
        let expected = Signal::from_fn(g, |t| amp * (omega * t + phase).cos());
        for (a, b) in y.samples().iter().zip(expected.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let g = grid(10.0, 10.0);
        let d = CapacitiveDifferentiator::new(2.0).unwrap();
        let out = d.apply(&Signal::constant(g, -4.0));
        assert!(out.samples().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn derivative_of_sinusoid() {
        let g = grid(32.0, 8.0);
        let omega = 2.0 * PI * 7.0 / (g.len() as f64 * g.dt());
        let d = CapacitiveDifferentiator::new(1.0).unwrap();
        let u = Signal::from_fn(g, |t| (omega * t).sin());
        let out = d.apply(&u);
        let expected = Signal::from_fn(g, |t| omega * (omega * t).cos());
        for (a, b) in out.samples().iter().zip(expected.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn derivative_is_linear() {
        let g = grid(16.0, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = CapacitiveDifferentiator::new(0.7).unwrap();
        let u = random_signal(g, &mut rng);
        let v = random_signal(g, &mut rng);
        let mut mixed = u.clone();
        mixed.scale(1.3);
        mixed.axpy(-0.8, &v);
        let lhs = d.apply(&mixed);
        let mut rhs = d.apply(&u);
        rhs.scale(1.3);
        rhs.axpy(-0.8, &d.apply(&v));
        for (a, b) in lhs.samples().iter().zip(rhs.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn lti_resolvent_trivial_inputs() {
        let g = grid(8.0, 4.0);
        let d = CapacitiveDifferentiator::new(1.5).unwrap();
        let zero = d.resolvent(0.4, &Signal::zeros(g));
        assert!(zero.samples().iter().all(|x| x.abs() < 1e-14));
        let c = d.resolvent(0.4, &Signal::constant(g, 2.0));
        for &x in c.samples() {
            assert_abs_diff_eq!(x, 2.0, epsilon = 1e-12);
        }
    }

    // Inverse property: q + alpha*C*D q recovers w.
    #[test]
    fn lti_resolvent_inverts_the_operator() {
        let g = grid(16.0, 4.0);
        let d = CapacitiveDifferentiator::new(2.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_signal(g, &mut rng);
        let q = d.resolvent(0.3, &w);
        let mut recon = q.clone();
        recon.axpy(0.3, &d.apply(&q));
        for (a, b) in recon.samples().iter().zip(w.samples()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn branch_forward_evaluation() {
        let g = grid(8.0, 8.0);
        // Odd nonlinearity maps zero to zero.
        let b = ConductanceBranch::new(
            FirstOrderLag::new(5.0).unwrap(),
            NonlinearReadout::tanh(1.5, 0.0),
            0.0,
        )
        .unwrap();
        assert!(b
            .apply(&Signal::zeros(g))
            .samples()
            .iter()
            .all(|x| x.abs() < 1e-12));

        // Saturation: static gain-2 tanh at large input.
        let sat = ConductanceBranch::new(
            FirstOrderLag::new(0.0).unwrap(),
            NonlinearReadout::tanh(2.0, 0.0),
            0.0,
        )
        .unwrap();
        let out = sat.apply(&Signal::constant(g, 10.0));
        for &x in out.samples() {
            assert_abs_diff_eq!(x, 2.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn branch_matches_composition() {
        let g = grid(12.0, 6.0);
        let lag = FirstOrderLag::new(9.0).unwrap();
        let readout = NonlinearReadout::tanh(-1.2, 0.3);
        let b = ConductanceBranch::new(lag, readout, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u = random_signal(g, &mut rng);
        let mut expected = readout.apply(&lag.apply(&u));
        expected.axpy(0.8, &u);
        for (a, e) in b.apply(&u).samples().iter().zip(expected.samples()) {
            assert_abs_diff_eq!(a, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn contraction_factor_formula() {
        let mk = |gain: f64, lambda: f64| {
            ConductanceBranch::new(
                FirstOrderLag::new(1.0).unwrap(),
                NonlinearReadout::tanh(gain, 0.0),
                lambda,
            )
            .unwrap()
        };
        assert_abs_diff_eq!(mk(2.0, 4.0).contraction_factor(0.5), 1.0 / 3.0);
        assert_abs_diff_eq!(mk(1.0, 0.0).contraction_factor(0.5), 0.5);
        assert_abs_diff_eq!(mk(0.0, 3.0).contraction_factor(7.0), 0.0);
    }

    #[test]
    fn branch_resolvent_of_zero_is_zero() {
        let g = grid(8.0, 8.0);
        let b = ConductanceBranch::new(
            FirstOrderLag::new(3.0).unwrap(),
            NonlinearReadout::tanh(1.0, 0.0),
            2.0,
        )
        .unwrap();
        let q = b.resolvent(0.5, &Signal::zeros(g), None, 1e-10, 50).unwrap();
        assert!(q.samples().iter().all(|x| x.abs() < 1e-12));
    }

    // Static branch resolvent against a per-sample bisection root-find of
    // the scalar equation q + gamma*(alpha*tanh(q - delta) + lambda*q) = w.
    #[test]
    fn static_branch_resolvent_matches_bisection() {
        let g = grid(6.0, 8.0);
        let gain = 1.7;
        let delta = 0.4;
        let lambda = 2.5;
        let gamma = 0.9;
        let b = ConductanceBranch::new(
            FirstOrderLag::new(0.0).unwrap(),
            NonlinearReadout::tanh(gain, delta),
            lambda,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_signal(g, &mut rng);
        let q = b.resolvent(gamma, &w, None, 1e-12, 200).unwrap();
        for (&wt, &qt) in w.samples().iter().zip(q.samples()) {
            let f = |x: f64| x + gamma * (gain * (x - delta).tanh() + lambda * x) - wt;
            let mut lo = (wt - gamma * gain.abs()) / (1.0 + gamma * lambda) - 1.0;
            let mut hi = (wt + gamma * gain.abs()) / (1.0 + gamma * lambda) + 1.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if f(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let root = 0.5 * (lo + hi);
            assert_abs_diff_eq!(qt, root, epsilon = 1e-8);
        }
    }

    #[test]
    fn branch_resolvent_refuses_without_contraction() {
        let g = grid(4.0, 8.0);
        let b = ConductanceBranch::new(
            FirstOrderLag::new(0.0).unwrap(),
            NonlinearReadout::tanh(2.0, 0.0),
            0.0,
        )
        .unwrap();
        let err = b
            .resolvent(1.0, &Signal::constant(g, 1.0), None, 1e-8, 100)
            .unwrap_err();
        match err {
            Error::ResolventNotContractive { factor, .. } => assert!(factor >= 1.0),
            other => panic!("expected contraction error, got {other}"),
        }
    }

    #[test]
    fn branch_resolvent_reports_non_convergence() {
        let g = grid(4.0, 8.0);
        let b = ConductanceBranch::new(
            FirstOrderLag::new(0.0).unwrap(),
            NonlinearReadout::tanh(0.98, 0.0),
            0.0,
        )
        .unwrap();
        let err = b
            .resolvent(1.0, &Signal::constant(g, 1.0), None, 1e-15, 2)
            .unwrap_err();
        match err {
            Error::InnerNoConvergence { last_residual, .. } => {
                assert!(last_residual.is_finite() && last_residual > 1e-15)
            }
            other => panic!("expected non-convergence, got {other}"),
        }
    }

    #[test]
    fn reflected_resolvent_identities() {
        let g = grid(4.0, 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random_signal(g, &mut rng);
        // Zero operator: reflection is the identity.
        let r = reflected_resolvent(&ZeroOp, 0.7, &w).unwrap();
        assert_eq!(r, w);
        // Identity operator at alpha = 1: 2*(w/2) - w = 0.
        let id = DiagonalAffine::identity(g.len());
        let r = reflected_resolvent(&id, 1.0, &w).unwrap();
        assert!(r.samples().iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn consensus_projection_behaviour() {
        let g = grid(4.0, 8.0);
        let a = Signal::constant(g, 0.0);
        let b = Signal::constant(g, 2.0);
        let z = LiftedSignal::new(vec![a, b]).unwrap();
        let proj = project_consensus(&z);
        for part in proj.parts() {
            for &x in part.samples() {
                assert_abs_diff_eq!(x, 1.0);
            }
        }
        // Idempotent, and exact on consensus elements.
        assert_eq!(project_consensus(&proj), proj);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = LiftedSignal::new(vec![
            random_signal(g, &mut rng),
            random_signal(g, &mut rng),
            random_signal(g, &mut rng),
        ])
        .unwrap();
        assert_eq!(project_consensus(&project_consensus(&z)), project_consensus(&z));
    }

    #[test]
    fn consensus_sum_resolvent_reduces_correctly() {
        let g = grid(4.0, 8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = LiftedSignal::new(vec![
            random_signal(g, &mut rng),
            random_signal(g, &mut rng),
        ])
        .unwrap();
        // Zero operator: the consensus projection itself.
        let out = resolvent_consensus_sum(&ZeroOp, 0.5, &z).unwrap();
        assert_eq!(out, project_consensus(&z));

        // Already-consensus input: the plain resolvent on the common part.
        let common = random_signal(g, &mut rng);
        let zc = LiftedSignal::replicate(&common, 3).unwrap();
        let op = DiagonalAffine::uniform(g.len(), 2.0, 0.3);
        let lifted = resolvent_consensus_sum(&op, 0.25, &zc).unwrap();
        let plain = op.resolvent(0.25, &common).unwrap();
        for part in lifted.parts() {
            assert_eq!(part, &plain);
        }
    }

    #[test]
    fn certificate_admissibility() {
        let cert = MonotonicityCertificate::from_constants(0.0, 3.0, 0.5, 2.0, 1.0);
        assert!(cert.sector_gap_ok());
        assert!(cert.step_ok(1.0));
        assert!(cert.admissible(1.0));
        assert_abs_diff_eq!(cert.theta, 2.0 / (4.0 - 0.25));

        let bad = MonotonicityCertificate::from_constants(0.0, 1.0, 0.5, 2.0, 1.0);
        assert!(!bad.sector_gap_ok());
        // Step too large for the sector bound.
        let cert = MonotonicityCertificate::from_constants(0.0, 3.0, 1.0, 2.0, 3.0);
        assert!(!cert.step_ok(3.0));
    }
}
