//! Drive waveforms: Fourier-parametrized pulses, closed-form analytic
//! pulses, optimization seeds and multiplicative perturbations.
//!
//! The optimizable gate pulse and counter pulse over a gate time `T` are
//!
//! ```text
//! g0(t) = Σ_{n=1..N_f} [ g0[2n-1] sin((2n-1)πt/T) + (g0[2n]/2)(1 - cos(2πnt/T)) ]
//! g1(t) = Σ_{n=1..N_f}   g1[n]   sin(2πnt/T)
//! ```
//!
//! (1-based coefficient labels; storage is 0-based). `g0` is symmetric and
//! `g1` antisymmetric under time reversal `t → T - t` by construction, both
//! vanish at `t = 0, T`, and neither contains frequencies above `N_f/T`.
//! Analytic waveforms are kept as closed forms rather than coefficient
//! vectors because their counter pulses are discontinuous at the gate edges
//! (`∝ cos(πt/T)`), which the sine basis of `g1` cannot represent.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::model::{GateKind, PhysicalConstants};
use crate::{Error, Result, C64};

/// Default number of Fourier orders per waveform.
pub const DEFAULT_N_F: usize = 10;

/// Default bound on `max_t |g_j(t)|/K` accepted by the optimizer.
pub const DEFAULT_AMPLITUDE_BOUND: f64 = 50.0;

/// Tighter amplitude bound used for the fast-Rx working point.
pub const RX_AMPLITUDE_BOUND: f64 = 20.0;

/// Relative slack when evaluating waveforms at nominal boundary times that
/// carry floating-point dust.
const TIME_SLACK: f64 = 1e-9;

/// Fourier coefficients of one gate's pulse pair over `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseCoefficients {
    /// Gate time `T` in units of `1/K`.
    t_total: f64,
    /// Number of Fourier orders `N_f`.
    n_f: usize,
    /// `2·N_f` gate-pulse coefficients: `[g_{0,1}, g_{0,2}, …, g_{0,2N_f}]`.
    g0: Vec<f64>,
    /// `N_f` counter-pulse coefficients: `[g_{1,1}, …, g_{1,N_f}]`.
    g1: Vec<f64>,
}

impl PulseCoefficients {
    pub fn new(t_total: f64, n_f: usize, g0: Vec<f64>, g1: Vec<f64>) -> Result<Self> {
        if !(t_total > 0.0) || !t_total.is_finite() {
            return Err(Error::Invalid(format!("gate time must be positive, got {t_total}")));
        }
        if n_f == 0 {
            return Err(Error::Invalid("N_f must be at least 1".into()));
        }
        if g0.len() != 2 * n_f {
            return Err(Error::DimensionMismatch {
                context: "g0 coefficients",
                left: g0.len(),
                right: 2 * n_f,
            });
        }
        if g1.len() != n_f {
            return Err(Error::DimensionMismatch {
                context: "g1 coefficients",
                left: g1.len(),
                right: n_f,
            });
        }
        if g0.iter().chain(g1.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pulse coefficient".into()));
        }
        Ok(Self { t_total, n_f, g0, g1 })
    }

    pub fn zero(t_total: f64, n_f: usize) -> Result<Self> {
        Self::new(t_total, n_f, vec![0.0; 2 * n_f], vec![0.0; n_f])
    }

    pub fn t_total(&self) -> f64 {
        self.t_total
    }

    pub fn n_f(&self) -> usize {
        self.n_f
    }

    pub fn g0_coeffs(&self) -> &[f64] {
        &self.g0
    }

    pub fn g1_coeffs(&self) -> &[f64] {
        &self.g1
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        let slack = TIME_SLACK * self.t_total.max(1.0);
        if t < -slack || t > self.t_total + slack {
            return Err(Error::TimeOutOfRange {
                t,
                duration: self.t_total,
            });
        }
        Ok(t.clamp(0.0, self.t_total))
    }

    /// Gate-pulse value `g0(t)`.
    pub fn eval_g0(&self, t: f64) -> Result<f64> {
        let t = self.check_time(t)?;
        let u = PI * t / self.t_total;
        let (su, cu) = u.sin_cos();
        // One sin/cos chain over k·u, k = 1..2N_f: odd k feeds the sine
        // terms, even k = 2n the raised-cosine terms.
        let mut sk = su;
        let mut ck = cu;
        let mut acc = self.g0[0] * sk;
        for k in 2..=(2 * self.n_f) {
            let s_next = sk * cu + ck * su;
            let c_next = ck * cu - sk * su;
            sk = s_next;
            ck = c_next;
            if k % 2 == 0 {
                acc += self.g0[k - 1] / 2.0 * (1.0 - ck);
            } else {
                acc += self.g0[k - 1] * sk;
            }
        }
        Ok(acc)
    }

    /// Counter-pulse value `g1(t)`.
    pub fn eval_g1(&self, t: f64) -> Result<f64> {
        let t = self.check_time(t)?;
        let u = 2.0 * PI * t / self.t_total;
        let (su, cu) = u.sin_cos();
        let mut sk = su;
        let mut ck = cu;
        let mut acc = self.g1[0] * sk;
        for n in 2..=self.n_f {
            let s_next = sk * cu + ck * su;
            let c_next = ck * cu - sk * su;
            sk = s_next;
            ck = c_next;
            acc += self.g1[n - 1] * sk;
        }
        Ok(acc)
    }

    /// Flattens to the optimizer's variable layout: `[g0…]` or `[g0…, g1…]`.
    pub fn to_flat(&self, with_counter: bool) -> Vec<f64> {
        let mut v = self.g0.clone();
        if with_counter {
            v.extend_from_slice(&self.g1);
        }
        v
    }

    /// Inverse of [`Self::to_flat`]: rebuilds coefficients from optimizer
    /// variables (counterless layouts leave `g1 = 0`).
    pub fn from_flat(t_total: f64, n_f: usize, flat: &[f64], with_counter: bool) -> Result<Self> {
        let expect = if with_counter { 3 * n_f } else { 2 * n_f };
        if flat.len() != expect {
            return Err(Error::DimensionMismatch {
                context: "flattened pulse variables",
                left: flat.len(),
                right: expect,
            });
        }
        let g0 = flat[..2 * n_f].to_vec();
        let g1 = if with_counter {
            flat[2 * n_f..].to_vec()
        } else {
            vec![0.0; n_f]
        };
        Self::new(t_total, n_f, g0, g1)
    }
}

/// Closed-form adiabatic waveforms per gate.
///
/// * `Rz(φ)`:  `g0 = (πφ / 8Tα) sin(πt/T)`, counter `g1 = ġ0/(4Kα²)`
/// * `Rzz(Θ)`: `g0 = (πΘ / 8Tα²) sin(πt/T)`, counter `g1 = ġ0/(2Kα²)`
/// * `Rx`:     `g0 = (Δ/2)(1 - cos 2πt/T)`, counter `g1 = ġ0/(4Kα²)`,
///   with the detuning `Δ` fixed by fidelity calibration rather than a
///   closed form.
///
/// The counters inherit `cos(πt/T)`-type factors and are therefore nonzero
/// at `t = 0, T` for `Rz`/`Rzz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticWaveform {
    pub kind: GateKind,
    /// Target angle (φ or Θ); carried for bookkeeping in the Rx case.
    pub angle: f64,
    /// Calibrated detuning; only meaningful (and required) for Rx.
    pub delta: Option<f64>,
    /// Gate time in units of `1/K`.
    pub t_total: f64,
    pub with_counter: bool,
    pub constants: PhysicalConstants,
}

impl AnalyticWaveform {
    pub fn new(
        kind: GateKind,
        angle: f64,
        delta: Option<f64>,
        t_total: f64,
        with_counter: bool,
        constants: PhysicalConstants,
    ) -> Result<Self> {
        if !(t_total > 0.0) || !t_total.is_finite() {
            return Err(Error::Invalid(format!("gate time must be positive, got {t_total}")));
        }
        if kind == GateKind::Rx && delta.is_none() {
            return Err(Error::Invalid(
                "the analytic Rx waveform needs a calibrated detuning".into(),
            ));
        }
        Ok(Self {
            kind,
            angle,
            delta,
            t_total,
            with_counter,
            constants,
        })
    }

    fn check_time(&self, t: f64) -> Result<f64> {
        let slack = TIME_SLACK * self.t_total.max(1.0);
        if t < -slack || t > self.t_total + slack {
            return Err(Error::TimeOutOfRange {
                t,
                duration: self.t_total,
            });
        }
        Ok(t.clamp(0.0, self.t_total))
    }

    /// Peak amplitude of `g0`.
    pub fn g0_peak(&self) -> f64 {
        let t = self.t_total;
        let alpha = self.constants.alpha();
        match self.kind {
            GateKind::Rz => PI * self.angle / (8.0 * t * alpha),
            GateKind::RzzTwoModeSqueezing | GateKind::RzzBeamSplitter => {
                PI * self.angle / (8.0 * t * alpha * alpha)
            }
            GateKind::Rx => self.delta.expect("validated in new()"),
        }
    }

    pub fn eval_g0(&self, t: f64) -> Result<f64> {
        let t = self.check_time(t)?;
        let tt = self.t_total;
        Ok(match self.kind {
            GateKind::Rz | GateKind::RzzTwoModeSqueezing | GateKind::RzzBeamSplitter => {
                self.g0_peak() * (PI * t / tt).sin()
            }
            GateKind::Rx => self.g0_peak() / 2.0 * (1.0 - (2.0 * PI * t / tt).cos()),
        })
    }

    pub fn eval_g1(&self, t: f64) -> Result<f64> {
        let t = self.check_time(t)?;
        if !self.with_counter {
            return Ok(0.0);
        }
        let tt = self.t_total;
        let k = self.constants.k;
        let a2 = self.constants.alpha_sq();
        Ok(match self.kind {
            GateKind::Rz => self.g0_peak() * (PI / tt) * (PI * t / tt).cos() / (4.0 * k * a2),
            GateKind::RzzTwoModeSqueezing | GateKind::RzzBeamSplitter => {
                self.g0_peak() * (PI / tt) * (PI * t / tt).cos() / (2.0 * k * a2)
            }
            GateKind::Rx => {
                let d = self.delta.expect("validated in new()");
                d * PI / tt * (2.0 * PI * t / tt).sin() / (4.0 * k * a2)
            }
        })
    }
}

/// A drive waveform pair `(g0, g1)` in any of its concrete forms.
#[derive(Debug, Clone, PartialEq)]
pub enum Waveform {
    Fourier(PulseCoefficients),
    Analytic(AnalyticWaveform),
    /// A waveform with multiplicative factors on each channel, as produced
    /// by [`apply_perturbation`].
    Scaled {
        inner: Box<Waveform>,
        factor_g0: f64,
        factor_g1: f64,
    },
}

impl Waveform {
    pub fn duration(&self) -> f64 {
        match self {
            Waveform::Fourier(c) => c.t_total(),
            Waveform::Analytic(a) => a.t_total,
            Waveform::Scaled { inner, .. } => inner.duration(),
        }
    }

    pub fn eval_g0(&self, t: f64) -> Result<f64> {
        match self {
            Waveform::Fourier(c) => c.eval_g0(t),
            Waveform::Analytic(a) => a.eval_g0(t),
            Waveform::Scaled { inner, factor_g0, .. } => Ok(factor_g0 * inner.eval_g0(t)?),
        }
    }

    pub fn eval_g1(&self, t: f64) -> Result<f64> {
        match self {
            Waveform::Fourier(c) => c.eval_g1(t),
            Waveform::Analytic(a) => a.eval_g1(t),
            Waveform::Scaled { inner, factor_g1, .. } => Ok(factor_g1 * inner.eval_g1(t)?),
        }
    }

    /// Largest `|g0|` and `|g1|` over a uniform scan of `samples` points.
    pub fn max_amplitudes(&self, samples: usize) -> Result<(f64, f64)> {
        let t_total = self.duration();
        let n = samples.max(3);
        let mut m0: f64 = 0.0;
        let mut m1: f64 = 0.0;
        for i in 0..n {
            let t = t_total * i as f64 / (n - 1) as f64;
            m0 = m0.max(self.eval_g0(t)?.abs());
            m1 = m1.max(self.eval_g1(t)?.abs());
        }
        Ok((m0, m1))
    }
}

/// Multiplicative waveform distortion: the evaluated pulses become
/// `λ(1+δ0)·g0` and `λ(1+δ1)·g1`. `λ` is the common scale used for
/// continuous-angle operation; `δ_j` model per-channel amplitude errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulsePerturbation {
    pub lambda: f64,
    pub delta0: f64,
    pub delta1: f64,
}

impl Default for PulsePerturbation {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            delta0: 0.0,
            delta1: 0.0,
        }
    }
}

impl PulsePerturbation {
    pub fn lambda(lambda: f64) -> Self {
        Self {
            lambda,
            delta0: 0.0,
            delta1: 0.0,
        }
    }

    pub fn deltas(delta0: f64, delta1: f64) -> Self {
        Self {
            lambda: 1.0,
            delta0,
            delta1,
        }
    }
}

/// Applies a perturbation, yielding a waveform evaluating to
/// `λ(1+δ0) g0(t)` and `λ(1+δ1) g1(t)`.
pub fn apply_perturbation(waveform: &Waveform, pert: PulsePerturbation) -> Waveform {
    let f0 = pert.lambda * (1.0 + pert.delta0);
    let f1 = pert.lambda * (1.0 + pert.delta1);
    if f0 == 1.0 && f1 == 1.0 {
        return waveform.clone();
    }
    match waveform {
        // Fourier coefficients scale exactly.
        Waveform::Fourier(c) => Waveform::Fourier(
            PulseCoefficients::new(
                c.t_total(),
                c.n_f(),
                c.g0_coeffs().iter().map(|v| f0 * v).collect(),
                c.g1_coeffs().iter().map(|v| f1 * v).collect(),
            )
            .expect("scaling preserves validity"),
        ),
        other => Waveform::Scaled {
            inner: Box::new(other.clone()),
            factor_g0: f0,
            factor_g1: f1,
        },
    }
}

/// The analytic waveform pair for a gate (`delta` required for Rx).
pub fn analytic_pulse(
    kind: GateKind,
    angle: f64,
    delta: Option<f64>,
    t_total: f64,
    with_counter: bool,
    constants: PhysicalConstants,
) -> Result<Waveform> {
    Ok(Waveform::Analytic(AnalyticWaveform::new(
        kind,
        angle,
        delta,
        t_total,
        with_counter,
        constants,
    )?))
}

/// Optimization seeds: the lowest-order raised-cosine pulse whose area
/// matches the analytic waveform, plus (with counter) the matching first
/// sine coefficient of `ġ0/(4Kα²)` (or `/(2Kα²)` for Rzz):
///
/// * `Rz`:  `g0[2] = φ/(2Tα)`,  `g1[1] = π g0[2] / (4KTα²)`
/// * `Rzz`: `g0[2] = Θ/(2Tα²)`, `g1[1] = π g0[2] / (2KTα²)`
/// * `Rx`:  `g0[2] = Δ`,        `g1[1] = π g0[2] / (4KTα²)`
pub fn seed_coefficients(
    kind: GateKind,
    angle: f64,
    delta: Option<f64>,
    t_total: f64,
    n_f: usize,
    with_counter: bool,
    constants: PhysicalConstants,
) -> Result<PulseCoefficients> {
    let alpha = constants.alpha();
    let k = constants.k;
    let g02 = match kind {
        GateKind::Rz => angle / (2.0 * t_total * alpha),
        GateKind::RzzTwoModeSqueezing | GateKind::RzzBeamSplitter => {
            angle / (2.0 * t_total * alpha * alpha)
        }
        GateKind::Rx => delta.ok_or_else(|| {
            Error::Invalid("the Rx seed needs a calibrated detuning".into())
        })?,
    };
    let counter_denominator = match kind {
        GateKind::Rz | GateKind::Rx => 4.0,
        GateKind::RzzTwoModeSqueezing | GateKind::RzzBeamSplitter => 2.0,
    };
    let g11 = PI * g02 / (counter_denominator * k * t_total * alpha * alpha);
    let mut pulse = PulseCoefficients::zero(t_total, n_f)?;
    pulse.g0[1] = g02;
    if with_counter {
        pulse.g1[0] = g11;
    }
    Ok(pulse)
}

/// On-disk pulse description (serialized as JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseFile {
    pub gate: GateKind,
    pub counter: crate::model::CounterVariant,
    /// Target rotation angle in radians.
    pub angle: f64,
    /// Gate time in units of `1/K`.
    #[serde(rename = "T_K")]
    pub t_k: f64,
    #[serde(rename = "N_f")]
    pub n_f: usize,
    pub g0: Vec<f64>,
    pub g1: Vec<f64>,
    pub meta: PulseMeta,
}

/// Provenance and quality metadata embedded in a pulse file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PulseMeta {
    /// Hash of the experiment configuration that produced the pulse.
    pub config_hash: String,
    pub tool_version: String,
    /// Final `1 - F̄` reported by the producer, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infidelity: Option<f64>,
    /// Largest `|g_j(t)|/K` over the gate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_g_over_k: Option<f64>,
    /// Model constants used during optimization.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constants: Option<PhysicalConstants>,
}

impl PulseFile {
    pub fn coefficients(&self) -> Result<PulseCoefficients> {
        PulseCoefficients::new(self.t_k, self.n_f, self.g0.clone(), self.g1.clone())
    }

    pub fn from_coefficients(
        gate: GateKind,
        counter: crate::model::CounterVariant,
        angle: f64,
        coeffs: &PulseCoefficients,
        meta: PulseMeta,
    ) -> Self {
        Self {
            gate,
            counter,
            angle,
            t_k: coeffs.t_total(),
            n_f: coeffs.n_f(),
            g0: coeffs.g0_coeffs().to_vec(),
            g1: coeffs.g1_coeffs().to_vec(),
            meta,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(s)?;
        // Validate coefficient shapes eagerly.
        file.coefficients()?;
        Ok(file)
    }
}

/// DFT helper for the band-limit check (test support): magnitude spectrum of
/// uniform samples.
#[doc(hidden)]
pub fn dft_magnitudes(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    let mut out = Vec::with_capacity(n / 2 + 1);
    for m in 0..=n / 2 {
        let mut acc = C64::new(0.0, 0.0);
        for (k, &v) in samples.iter().enumerate() {
            let phase = -2.0 * PI * (m * k % n) as f64 / n as f64;
            acc += C64::new(v, 0.0) * C64::new(phase.cos(), phase.sin());
        }
        out.push(acc.norm());
    }
    out
}
