//! Independent oracles for the acceptance suite. They evaluate the packet
//! closed form from scratch and integrate by quadrature, sharing no code
//! paths with the simulator's own overlaps and velocity field.

use std::f64::consts::PI;

use ddslit::packets::Packet1D;
use ddslit::state::TwoParticleState;
use num_complex::Complex64;

/// Packet supports are cut at this many widths.
const REACH: f64 = 12.0;

fn drift(p: &Packet1D, t: f64) -> f64 {
    p.center + p.velocity * t
}

fn window(p: &Packet1D, t: f64) -> (f64, f64) {
    let (c, w) = (drift(p, t), p.width(t));
    (c - REACH * w, c + REACH * w)
}

/// Bound on the wavenumber of `a·conj(b)`: plane-wave part plus the chirp
/// difference from distinct centers.
fn relative_wavenumber(a: &Packet1D, b: &Packet1D, t: f64, lo: f64, hi: f64) -> f64 {
    let chirp = |p: &Packet1D| {
        let tau = p.tau(t);
        tau / (2.0 * p.sigma * p.sigma * (1.0 + tau * tau))
    };
    let span = (lo - drift(a, t)).abs().max((hi - drift(a, t)).abs()) + (lo - drift(b, t)).abs().max((hi - drift(b, t)).abs());
    (a.wavenumber() - b.wavenumber()).abs() + (chirp(a) + chirp(b)) * span
}

/// Composite Simpson rule with at least `n` intervals.
pub fn simpson<F: Fn(f64) -> Complex64>(f: F, a: f64, b: f64, n: usize) -> Complex64 {
    let n = (n.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * (h / 3.0)
}

fn intervals_for(a: &Packet1D, b: &Packet1D, t: f64, lo: f64, hi: f64) -> usize {
    let w = a.width(t).min(b.width(t));
    let k = relative_wavenumber(a, b, t, lo, hi);
    let n = 40.0 * (hi - lo) / w + 24.0 * (hi - lo) * k / (2.0 * PI);
    (n.ceil() as usize).clamp(256, 4_000_000)
}

/// `∫ a(x) conj(b(x)) dx` at time `t` by quadrature.
pub fn overlap(a: &Packet1D, b: &Packet1D, t: f64) -> Complex64 {
    let (a0, a1) = window(a, t);
    let (b0, b1) = window(b, t);
    let (lo, hi) = (a0.max(b0), a1.min(b1));
    if lo >= hi {
        return Complex64::new(0.0, 0.0);
    }
    let n = intervals_for(a, b, t, lo, hi);
    simpson(|x| a.value(x, t).to_complex() * b.value(x, t).to_complex().conj(), lo, hi, n)
}

/// Marginal of `|Ψ_t|²` along one axis, assembled from quadrature overlaps
/// of the other three axes.
pub struct QuadratureMarginal {
    t: f64,
    /// `(weight, packet of term j, packet of term k)` on the kept axis.
    parts: Vec<(Complex64, Packet1D, Packet1D)>,
    norm: f64,
}

impl QuadratureMarginal {
    pub fn new(state: &TwoParticleState, axis: usize, t: f64) -> Self {
        let terms = state.terms();
        let mut parts = Vec::new();
        let mut norm = Complex64::new(0.0, 0.0);
        for tj in terms {
            for tk in terms {
                let mut w = tj.coefficient.to_complex() * tk.coefficient.to_complex().conj();
                for b in (0..4).filter(|b| *b != axis) {
                    w *= overlap(&tj.factors[b], &tk.factors[b], t);
                }
                if w.norm() == 0.0 {
                    continue;
                }
                let (a, b) = (tj.factors[axis], tk.factors[axis]);
                norm += w * overlap(&a, &b, t);
                parts.push((w, a, b));
            }
        }
        Self { t, parts, norm: norm.re }
    }

    pub fn density(&self, z: f64) -> f64 {
        let s: Complex64 = self
            .parts
            .iter()
            .map(|(w, a, b)| w * a.value(z, self.t).to_complex() * b.value(z, self.t).to_complex().conj())
            .sum();
        s.re / self.norm
    }

    /// Probability of each bin, integrating piecewise between packet window
    /// ends so every piece is resolved at its packets' own scale.
    pub fn bin_probabilities(&self, edges: &[f64]) -> Vec<f64> {
        let packets: Vec<Packet1D> = self.parts.iter().flat_map(|(_, a, b)| [*a, *b]).collect();
        let mut cuts: Vec<f64> = packets.iter().flat_map(|p| {
            let (lo, hi) = window(p, self.t);
            [lo, hi]
        }).collect();
        cuts.sort_by(f64::total_cmp);
        edges
            .windows(2)
            .map(|bin| {
                let mut points = vec![bin[0]];
                points.extend(cuts.iter().copied().filter(|c| *c > bin[0] && *c < bin[1]));
                points.push(bin[1]);
                points
                    .windows(2)
                    .map(|piece| {
                        let (lo, hi) = (piece[0], piece[1]);
                        let mid = 0.5 * (lo + hi);
                        let mut n = 0;
                        for (_, a, b) in &self.parts {
                            let (a0, a1) = window(a, self.t);
                            let (b0, b1) = window(b, self.t);
                            if mid > a0 && mid < a1 && mid > b0 && mid < b1 {
                                n = n.max(intervals_for(a, b, self.t, lo, hi));
                            }
                        }
                        if n == 0 {
                            0.0
                        } else {
                            simpson(|z| Complex64::new(self.density(z), 0.0), lo, hi, n).re
                        }
                    })
                    .sum()
            })
            .collect()
    }
}

/// `ln G_t(x)` of a free Gaussian packet, straight from its closed form.
pub fn log_packet(p: &Packet1D, x: f64, t: f64) -> Complex64 {
    let tau = t * p.hbar / (2.0 * p.mass * p.sigma * p.sigma);
    let s = Complex64::new(p.sigma, p.sigma * tau);
    let k = p.mass * p.velocity / p.hbar;
    let a = x - p.center - p.velocity * t;
    -0.25 * (2.0 * PI).ln() - 0.5 * s.ln() - a * a / (4.0 * p.sigma * s)
        + Complex64::i() * k * (x - p.center - 0.5 * p.velocity * t)
}

/// `ln G_t(x + d) − ln G_t(x)`, expanded so no large phase is formed.
fn log_packet_shift(p: &Packet1D, x: f64, d: f64, t: f64) -> Complex64 {
    let tau = t * p.hbar / (2.0 * p.mass * p.sigma * p.sigma);
    let s = Complex64::new(p.sigma, p.sigma * tau);
    let k = p.mass * p.velocity / p.hbar;
    let a = x - p.center - p.velocity * t;
    -(2.0 * a + d) * d / (4.0 * p.sigma * s) + Complex64::i() * k * d
}

/// `arg Ψ(q + d·e_axis) − arg Ψ(q)` for small `d`.
///
/// Absolute phases reach ~1e6 rad, so differencing them directly loses most
/// digits; the ratio of the shifted to the unshifted sum avoids that.
pub fn phase_shift(state: &TwoParticleState, q: [f64; 4], t: f64, axis: usize, d: f64) -> f64 {
    let logs: Vec<Complex64> = state
        .terms()
        .iter()
        .map(|term| {
            let c = Complex64::new(term.coefficient.log_magnitude, term.coefficient.phase);
            c + (0..4).map(|b| log_packet(&term.factors[b], q[b], t)).sum::<Complex64>()
        })
        .collect();
    let lead = logs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<Complex64> = logs.iter().map(|l| (l - lead).exp()).collect();
    let base: Complex64 = weights.iter().sum();
    let shifted: Complex64 = state
        .terms()
        .iter()
        .zip(&weights)
        .map(|(term, w)| w * log_packet_shift(&term.factors[axis], q[axis], d, t).exp())
        .sum();
    (shifted / base).arg()
}

/// Derivative at 0 by Ridders' extrapolation of central differences,
/// starting from step `h0`.
pub fn ridders<F: Fn(f64) -> f64>(f: F, h0: f64) -> f64 {
    const SHRINK: f64 = 1.4;
    const N: usize = 12;
    let central = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    let mut a = [[0.0f64; N]; N];
    let mut h = h0;
    a[0][0] = central(h);
    let (mut err, mut best) = (f64::INFINITY, a[0][0]);
    for i in 1..N {
        h /= SHRINK;
        a[0][i] = central(h);
        let mut fac = SHRINK * SHRINK;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= 2.0 * err {
            break;
        }
    }
    best
}
