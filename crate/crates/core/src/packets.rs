//! Closed-form free evolution of one-dimensional Gaussian wave packets.
//!
//! A packet starts as
//!
//! ```text
//! G(x; σ, l, u) = (2πσ²)^(-1/4) exp[-(x-l)²/4σ² + i m u (x-l)/ħ]
//! ```
//!
//! and evolves without a potential into
//!
//! ```text
//! G_t(x) = (2π s_t²)^(-1/4) exp[-(x-l-ut)²/(4σ s_t)] exp[i (m u/ħ)(x-l-ut/2)]
//! s_t    = σ (1 + i t ħ / (2 m σ²))
//! ```
//!
//! Values are returned as [`ComplexLog`] because products of packets placed
//! thousands of widths apart underflow any floating representation, while the
//! ratios that drive the guidance equation stay perfectly well defined.

use std::f64::consts::PI;
use std::ops::Mul;

use num_complex::Complex64;

use crate::config::HBAR;
use crate::error::ConfigError;

/// A complex number stored as `exp(log_magnitude + i·phase)`.
///
/// Zero is represented by `log_magnitude = -∞`. The phase is not wrapped, so
/// products keep their full accumulated phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexLog {
    pub log_magnitude: f64,
    pub phase: f64,
}

impl ComplexLog {
    pub const ZERO: Self = Self { log_magnitude: f64::NEG_INFINITY, phase: 0.0 };
    pub const ONE: Self = Self { log_magnitude: 0.0, phase: 0.0 };

    pub fn new(log_magnitude: f64, phase: f64) -> Self {
        Self { log_magnitude, phase }
    }

    /// Principal complex logarithm of `z`.
    pub fn from_complex(z: Complex64) -> Self {
        if z == Complex64::new(0.0, 0.0) {
            return Self::ZERO;
        }
        Self { log_magnitude: z.norm().ln(), phase: z.arg() }
    }

    pub fn from_log(z: Complex64) -> Self {
        Self { log_magnitude: z.re, phase: z.im }
    }

    pub fn is_zero(self) -> bool {
        self.log_magnitude == f64::NEG_INFINITY
    }

    /// Plain complex value; underflows to zero in deep tails.
    pub fn to_complex(self) -> Complex64 {
        self.scaled(0.0)
    }

    /// `exp(log_magnitude - reference) · exp(i·phase)`.
    pub fn scaled(self, reference: f64) -> Complex64 {
        if self.is_zero() {
            return Complex64::new(0.0, 0.0);
        }
        Complex64::from_polar((self.log_magnitude - reference).exp(), self.phase)
    }

    pub fn conj(self) -> Self {
        Self { log_magnitude: self.log_magnitude, phase: -self.phase }
    }

    /// `ln |z|²`.
    pub fn log_norm_sqr(self) -> f64 {
        2.0 * self.log_magnitude
    }

    /// Stable sum: the largest term is factored out before exponentiating.
    /// The result's phase is the dominant term's unwrapped phase plus the
    /// argument of the rescaled sum.
    pub fn sum<I>(terms: I) -> Self
    where
        I: IntoIterator<Item = Self>,
        I::IntoIter: Clone,
    {
        let terms = terms.into_iter();
        let Some(lead) = terms
            .clone()
            .filter(|z| !z.is_zero())
            .max_by(|a, b| a.log_magnitude.total_cmp(&b.log_magnitude))
        else {
            return Self::ZERO;
        };
        let acc: Complex64 = terms
            .map(|z| {
                if z.is_zero() {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::from_polar((z.log_magnitude - lead.log_magnitude).exp(), z.phase - lead.phase)
                }
            })
            .sum();
        if acc.norm_sqr() == 0.0 {
            return Self::ZERO;
        }
        Self { log_magnitude: lead.log_magnitude + acc.norm().ln(), phase: lead.phase + acc.arg() }
    }
}

impl Mul for ComplexLog {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        if self.is_zero() || rhs.is_zero() {
            return Self::ZERO;
        }
        Self { log_magnitude: self.log_magnitude + rhs.log_magnitude, phase: self.phase + rhs.phase }
    }
}

/// Parameters of a freely evolving Gaussian packet along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet1D {
    /// Initial width σ (m).
    pub sigma: f64,
    /// Initial center l (m).
    pub center: f64,
    /// Group velocity u (m/s).
    pub velocity: f64,
    /// Particle mass (kg).
    pub mass: f64,
    pub hbar: f64,
}

impl Packet1D {
    pub fn new(sigma: f64, center: f64, velocity: f64, mass: f64) -> Result<Self, ConfigError> {
        Self::with_hbar(sigma, center, velocity, mass, HBAR)
    }

    /// Packet with an explicit ħ, e.g. for dimensionless test problems.
    pub fn with_hbar(sigma: f64, center: f64, velocity: f64, mass: f64, hbar: f64) -> Result<Self, ConfigError> {
        let finite = [sigma, center, velocity, mass, hbar].iter().all(|v| v.is_finite());
        if !finite || sigma <= 0.0 || mass <= 0.0 || hbar <= 0.0 {
            return Err(ConfigError::new(format!(
                "invalid packet: sigma={sigma}, center={center}, velocity={velocity}, mass={mass}, hbar={hbar}"
            )));
        }
        Ok(Self { sigma, center, velocity, mass, hbar })
    }

    /// Dimensionless spreading parameter `τ = tħ/(2mσ²)`.
    pub fn tau(&self, t: f64) -> f64 {
        t * self.hbar / (2.0 * self.mass * self.sigma * self.sigma)
    }

    /// Carrier wavenumber `m u / ħ` (1/m).
    pub fn wavenumber(&self) -> f64 {
        self.mass * self.velocity / self.hbar
    }

    /// Standard deviation of `|G_t|²`, i.e. `|s_t|`.
    pub fn width(&self, t: f64) -> f64 {
        self.sigma * self.tau(t).hypot(1.0)
    }

    /// `s_t = σ(1 + iτ)`.
    pub fn spread(&self, t: f64) -> Complex64 {
        Complex64::new(self.sigma, self.sigma * self.tau(t))
    }

    /// `G_t(x)` in log form.
    pub fn value(&self, x: f64, t: f64) -> ComplexLog {
        self.at(t).value(x)
    }

    /// `∂ₓ ln G_t(x) = -(x-l-ut)/(2σ s_t) + i m u/ħ`.
    pub fn log_derivative(&self, x: f64, t: f64) -> Complex64 {
        self.at(t).log_derivative(x)
    }

    /// Freezes the time-dependent constants for repeated evaluation at `t`.
    pub fn at(&self, t: f64) -> EvolvedPacket {
        EvolvedPacket::with_log_norm(self, t, self.log_norm(t))
    }

    /// `ln (2π s_t²)^(-1/4)`.
    pub(crate) fn log_norm(&self, t: f64) -> Complex64 {
        Complex64::new(-0.25 * (2.0 * PI).ln() - 0.5 * self.width(t).ln(), -0.5 * self.tau(t).atan())
    }
}

/// `s_t` of a packet.
pub fn packet_spread(p: &Packet1D, t: f64) -> Complex64 {
    p.spread(t)
}

pub fn packet_value(p: &Packet1D, x: f64, t: f64) -> ComplexLog {
    p.value(x, t)
}

pub fn packet_log_derivative(p: &Packet1D, x: f64, t: f64) -> Complex64 {
    p.log_derivative(x, t)
}

/// A packet with its time-dependent constants evaluated at one instant.
#[derive(Debug, Clone, Copy)]
pub struct EvolvedPacket {
    /// `l + u t`
    drift_center: f64,
    /// `l + u t / 2`
    phase_center: f64,
    /// `1 / (4 σ s_t)`
    quad: Complex64,
    wavenumber: f64,
    log_norm: Complex64,
}

impl EvolvedPacket {
    pub(crate) fn with_log_norm(p: &Packet1D, t: f64, log_norm: Complex64) -> Self {
        let tau = p.tau(t);
        // 1/(4σ·σ(1+iτ)) = (1 - iτ) / (4σ²(1+τ²))
        let denom = 4.0 * p.sigma * p.sigma * (1.0 + tau * tau);
        Self {
            drift_center: p.center + p.velocity * t,
            phase_center: p.center + 0.5 * p.velocity * t,
            quad: Complex64::new(1.0 / denom, -tau / denom),
            wavenumber: p.wavenumber(),
            log_norm,
        }
    }

    #[inline]
    pub fn log_value(&self, x: f64) -> Complex64 {
        let d = x - self.drift_center;
        let e = -(d * d) * self.quad;
        Complex64::new(
            self.log_norm.re + e.re,
            self.log_norm.im + e.im + self.wavenumber * (x - self.phase_center),
        )
    }

    #[inline]
    pub fn value(&self, x: f64) -> ComplexLog {
        ComplexLog::from_log(self.log_value(x))
    }

    #[inline]
    pub fn log_derivative(&self, x: f64) -> Complex64 {
        // -(x - l - ut)/(2σ s_t) = -2 (x - l - ut) · quad
        let d = x - self.drift_center;
        Complex64::new(-2.0 * d * self.quad.re, -2.0 * d * self.quad.im + self.wavenumber)
    }
}

/// `⟨a|b⟩ = ∫ conj(G_a) G_b dx` for two packets on the same axis.
///
/// Free evolution is unitary, so the overlap of two packets sharing mass and ħ
/// is the same at every time and is evaluated at t = 0.
pub fn packet_overlap(a: &Packet1D, b: &Packet1D) -> ComplexLog {
    debug_assert!(a.mass == b.mass && a.hbar == b.hbar, "overlap needs a common propagator");
    // Shift the origin to the midpoint so the quadratic form stays well scaled.
    let mid = 0.5 * (a.center + b.center);
    let (la, lb) = (a.center - mid, b.center - mid);
    let (ka, kb) = (a.wavenumber(), b.wavenumber());
    let (va, vb) = (a.sigma * a.sigma, b.sigma * b.sigma);
    let quad = 0.25 / va + 0.25 / vb;
    let lin = Complex64::new(0.5 * la / va + 0.5 * lb / vb, kb - ka);
    let constant = Complex64::new(-0.25 * la * la / va - 0.25 * lb * lb / vb, ka * la - kb * lb);
    let log_norm = -0.25 * (2.0 * PI * va).ln() - 0.25 * (2.0 * PI * vb).ln();
    let exponent = lin * lin / (4.0 * quad) + constant + Complex64::new(0.5 * (PI / quad).ln() + log_norm, 0.0);
    ComplexLog::from_log(exponent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HELIUM4_MASS;
    use proptest::prelude::*;

    fn he_x() -> Packet1D {
        Packet1D::new(1e-6, 5e-3, 0.1, HELIUM4_MASS).unwrap()
    }

    /// Composite Simpson rule.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn spread_at_zero_is_sigma() {
        let s = he_x().spread(0.0);
        assert_eq!(s, Complex64::new(1e-6, 0.0));
    }

    #[test]
    fn spread_imaginary_part_at_one_second() {
        // ħ / (2 m σ) with ħ = 1.054571817e-34, m = 6.646e-27, σ = 1e-6.
        let expected = 7.933_883_666_867_289e-3;
        let s = packet_spread(&he_x(), 1.0);
        assert_eq!(s.re, 1e-6);
        assert!((s.im - expected).abs() <= 1e-15 * expected, "{}", s.im);
    }

    #[test]
    fn spread_is_linear_in_time() {
        let p = he_x();
        let sigma = Complex64::new(p.sigma, 0.0);
        for t in [1e-4, 0.3, 2.0] {
            let lhs = p.spread(2.0 * t) - sigma;
            let rhs = 2.0 * (p.spread(t) - sigma);
            assert!((lhs - rhs).norm() <= 1e-15 * rhs.norm());
        }
    }

    #[test]
    fn value_at_zero_is_static_gaussian() {
        let p = Packet1D::new(1e-5, -5e-5, 0.02, HELIUM4_MASS).unwrap();
        let k = p.mass * p.velocity / p.hbar;
        for x in [-8e-5, -5e-5, -1e-5, 3e-5] {
            let n = (2.0 * PI * p.sigma * p.sigma).powf(-0.25);
            let d = x - p.center;
            let direct = n * Complex64::new(-d * d / (4.0 * p.sigma * p.sigma), k * d).exp();
            let got = p.value(x, 0.0).to_complex();
            assert!((got - direct).norm() <= 1e-13 * direct.norm(), "x={x}: {got} vs {direct}");
        }
    }

    #[test]
    fn peak_density_follows_width() {
        let p = he_x();
        for t in [0.0, 1e-3, 0.5, 5.0] {
            let tau = p.tau(t);
            let expected = (2.0 * PI * p.sigma * p.sigma * (1.0 + tau * tau)).powf(-0.5);
            let got = p.value(p.center + p.velocity * t, t).log_norm_sqr().exp();
            assert!((got - expected).abs() <= 1e-12 * expected);
        }
    }

    #[test]
    fn probability_is_normalized_by_quadrature() {
        for p in [he_x(), Packet1D::new(1e-5, 5e-5, 0.0, HELIUM4_MASS).unwrap()] {
            for t in [0.0, 1.0, 5.0] {
                let w = p.width(t);
                let c = p.center + p.velocity * t;
                let total = simpson(|x| p.value(x, t).log_norm_sqr().exp(), c - 14.0 * w, c + 14.0 * w, 4000);
                assert!((total - 1.0).abs() < 1e-9, "t={t}: {total}");
            }
        }
    }

    #[test]
    fn deep_tail_does_not_underflow() {
        let p = he_x();
        let z = p.value(p.center + 1e4 * p.sigma, 0.0);
        assert!(z.log_magnitude.is_finite());
        assert!((z.log_magnitude - (-0.25 * 1e8 - 0.25 * (2.0 * PI).ln() - 0.5 * p.sigma.ln())).abs() < 1e-6);
    }

    #[test]
    fn log_derivative_special_points() {
        let p = he_x();
        let t = 0.7;
        let at_center = p.log_derivative(p.center + p.velocity * t, t);
        assert_eq!(at_center, Complex64::new(0.0, p.wavenumber()));

        let still = Packet1D::new(1e-5, 5e-5, 0.0, HELIUM4_MASS).unwrap();
        let x = 8e-5;
        let d = still.log_derivative(x, 0.0);
        assert_eq!(d.im, 0.0);
        let expected = -(x - still.center) / (2.0 * still.sigma * still.sigma);
        assert!((d.re - expected).abs() <= 1e-15 * expected.abs());
    }

    #[test]
    fn overlap_matches_quadrature() {
        let m = HELIUM4_MASS;
        let pairs = [
            (Packet1D::new(1e-5, 5e-5, 0.0, m).unwrap(), Packet1D::new(1e-5, -5e-5, 0.0, m).unwrap()),
            (Packet1D::new(1e-5, 1e-5, 1e-3, m).unwrap(), Packet1D::new(1e-5, -1e-5, -2e-3, m).unwrap()),
            (Packet1D::new(1e-5, 0.0, 0.0, m).unwrap(), Packet1D::new(1e-5, 0.0, 0.0, m).unwrap()),
        ];
        for (a, b) in pairs {
            for t in [0.0, 0.05] {
                let w = a.width(t).max(b.width(t));
                let f = |x: f64| (a.value(x, t).conj() * b.value(x, t)).to_complex();
                let re = simpson(|x| f(x).re, -20.0 * w, 20.0 * w, 20_000);
                let im = simpson(|x| f(x).im, -20.0 * w, 20.0 * w, 20_000);
                let got = packet_overlap(&a, &b).to_complex();
                assert!((got - Complex64::new(re, im)).norm() < 1e-9, "t={t}: {got} vs {re}+{im}i");
            }
        }
    }

    proptest! {
        #[test]
        fn log_derivative_matches_finite_difference(offset in -3.0f64..3.0, t in 0.0f64..5.0, which in 0usize..2) {
            let p = if which == 0 { he_x() } else { Packet1D::new(1e-5, -5e-5, 0.0, HELIUM4_MASS).unwrap() };
            let w = p.width(t);
            let x = p.center + p.velocity * t + offset * w;
            let h = 1e-6 * w;
            let up = p.value(x + h, t);
            let down = p.value(x - h, t);
            let fd = Complex64::new(up.log_magnitude - down.log_magnitude, up.phase - down.phase) / (2.0 * h);
            let exact = p.log_derivative(x, t);
            prop_assert!((fd - exact).norm() <= 1e-6 * exact.norm(), "fd {} exact {}", fd, exact);
        }

        #[test]
        fn galilean_profile(offset in -4.0f64..4.0, t in 0.0f64..3.0, u in -0.2f64..0.2) {
            let moving = Packet1D::new(1e-6, 5e-3, u, HELIUM4_MASS).unwrap();
            let resting = Packet1D { velocity: 0.0, ..moving };
            let x = moving.center + u * t + offset * moving.width(t);
            let a = moving.value(x, t).log_magnitude;
            let b = resting.value(x - u * t, t).log_magnitude;
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn complex_log_sum_handles_extremes() {
        let big = ComplexLog::new(-1e6, 0.3);
        let tiny = ComplexLog::new(-1e6 - 800.0, 1.0);
        let s = ComplexLog::sum([big, tiny, ComplexLog::ZERO]);
        assert_eq!(s, big);
        assert!(ComplexLog::sum([ComplexLog::ZERO, ComplexLog::ZERO]).is_zero());
        let cancel = ComplexLog::sum([ComplexLog::new(0.0, 0.0), ComplexLog::new(0.0, PI)]);
        assert!(cancel.log_magnitude < -30.0);
        assert!((ComplexLog::ONE * ComplexLog::ZERO).is_zero());
    }
}
