//! The entangled two-particle state, its guidance field, and the conditional
//! one-particle state left behind by the first detection.
//!
//! Both states are sums of four products of freely evolving packets, so they
//! are known in closed form at every time. All sums run in the log domain:
//! the four terms of Ψ routinely differ by millions of e-folds.

use num_complex::Complex64;

use crate::config::ExperimentParams;
use crate::error::{ConfigError, FieldError};
use crate::packets::{packet_overlap, ComplexLog, EvolvedPacket, Packet1D};

/// Default node floor in natural-log units.
pub const DEFAULT_NODE_FLOOR: f64 = 60.0;

/// A point `(x₁, y₁, x₂, y₂)` of configuration space (m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConfigPoint4 {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl ConfigPoint4 {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { x1: a[0], y1: a[1], x2: a[2], y2: a[3] }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// The same configuration with the particle labels exchanged.
    pub fn swapped(self) -> Self {
        Self { x1: self.x2, y1: self.y2, x2: self.x1, y2: self.y1 }
    }

    pub fn particle(self, p: Particle) -> (f64, f64) {
        match p {
            Particle::One => (self.x1, self.y1),
            Particle::Two => (self.x2, self.y2),
        }
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Guidance velocities `(vx₁, vy₁, vx₂, vy₂)` (m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Velocity4 {
    pub vx1: f64,
    pub vy1: f64,
    pub vx2: f64,
    pub vy2: f64,
}

impl Velocity4 {
    pub fn from_array(a: [f64; 4]) -> Self {
        Self { vx1: a[0], vy1: a[1], vx2: a[2], vy2: a[3] }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.vx1, self.vy1, self.vx2, self.vy2]
    }

    pub fn particle(self, p: Particle) -> (f64, f64) {
        match p {
            Particle::One => (self.vx1, self.vy1),
            Particle::Two => (self.vx2, self.vy2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Particle {
    One,
    Two,
}

impl Particle {
    pub fn other(self) -> Self {
        match self {
            Particle::One => Particle::Two,
            Particle::Two => Particle::One,
        }
    }

    /// Index of this particle's x axis in a `[x₁, y₁, x₂, y₂]` array.
    pub fn x_axis(self) -> usize {
        match self {
            Particle::One => 0,
            Particle::Two => 2,
        }
    }

    pub fn y_axis(self) -> usize {
        self.x_axis() + 1
    }

    pub fn index(self) -> usize {
        self.x_axis() / 2
    }
}

/// One summand: a coefficient times one packet per configuration axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductTerm<const D: usize> {
    pub coefficient: ComplexLog,
    pub factors: [Packet1D; D],
}

/// Value of a four-term sum together with the gradient ratio `∇Ψ/Ψ`.
struct Evaluation<const D: usize> {
    value: ComplexLog,
    grad: [Complex64; D],
    /// `ln|Ψ|` minus the largest single-term log-magnitude.
    relative_log_magnitude: f64,
}

/// Time-frozen packet constants of all four terms.
struct EvolvedTerms<const D: usize> {
    coefficients: [ComplexLog; 4],
    packets: [[EvolvedPacket; D]; 4],
}

impl<const D: usize> EvolvedTerms<D> {
    fn new(terms: &[ProductTerm<D>; 4], t: f64) -> Self {
        // Packets along one axis almost always share σ and m, so their
        // normalization (a log and an arctangent) is computed once per kind.
        let mut cache: Vec<((f64, f64, f64), Complex64)> = Vec::with_capacity(4);
        let mut norm = |p: &Packet1D| {
            let key = (p.sigma, p.mass, p.hbar);
            if let Some((_, v)) = cache.iter().find(|(k, _)| *k == key) {
                return *v;
            }
            let v = p.log_norm(t);
            cache.push((key, v));
            v
        };
        let packets = terms.map(|term| term.factors.map(|p| EvolvedPacket::with_log_norm(&p, t, norm(&p))));
        Self { coefficients: terms.map(|term| term.coefficient), packets }
    }

    fn evaluate(&self, q: &[f64; D], with_gradient: bool) -> Evaluation<D> {
        let mut logs = [Complex64::new(f64::NEG_INFINITY, 0.0); 4];
        let mut lead = None::<usize>;
        for (k, (coeff, packets)) in self.coefficients.iter().zip(&self.packets).enumerate() {
            if coeff.is_zero() {
                continue;
            }
            let mut acc = Complex64::new(coeff.log_magnitude, coeff.phase);
            for (packet, &x) in packets.iter().zip(q) {
                acc += packet.log_value(x);
            }
            logs[k] = acc;
            if lead.map_or(true, |j| acc.re > logs[j].re) {
                lead = Some(k);
            }
        }
        let Some(lead) = lead else {
            return Evaluation {
                value: ComplexLog::ZERO,
                grad: [Complex64::new(0.0, 0.0); D],
                relative_log_magnitude: f64::NEG_INFINITY,
            };
        };
        let reference = logs[lead];
        let mut sum = Complex64::new(0.0, 0.0);
        let mut grad_sum = [Complex64::new(0.0, 0.0); D];
        for (k, log) in logs.iter().enumerate() {
            if log.re == f64::NEG_INFINITY {
                continue;
            }
            let w = Complex64::from_polar((log.re - reference.re).exp(), log.im - reference.im);
            sum += w;
            if with_gradient {
                for (a, g) in grad_sum.iter_mut().enumerate() {
                    *g += w * self.packets[k][a].log_derivative(q[a]);
                }
            }
        }
        let norm = sum.norm();
        if norm == 0.0 {
            return Evaluation {
                value: ComplexLog::ZERO,
                grad: [Complex64::new(0.0, 0.0); D],
                relative_log_magnitude: f64::NEG_INFINITY,
            };
        }
        let relative = norm.ln();
        let inv = sum.inv();
        Evaluation {
            value: ComplexLog::new(reference.re + relative, reference.im + sum.arg()),
            grad: grad_sum.map(|g| g * inv),
            relative_log_magnitude: relative,
        }
    }
}

fn velocities<const D: usize>(
    eval: &Evaluation<D>,
    hbar: f64,
    masses: &[f64; D],
    node_floor: f64,
) -> Result<[f64; D], FieldError> {
    if !(eval.relative_log_magnitude >= -node_floor) {
        return Err(FieldError::NodeSingularity { relative_log_magnitude: eval.relative_log_magnitude });
    }
    let mut v = [0.0; D];
    for a in 0..D {
        v[a] = hbar / masses[a] * eval.grad[a].im;
    }
    Ok(v)
}

/// The symmetrized two-particle state Ψ_t on axes `(x₁, y₁, x₂, y₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoParticleState {
    terms: [ProductTerm<4>; 4],
    masses: [f64; 2],
    hbar: f64,
    node_floor: f64,
}

impl TwoParticleState {
    pub fn new(terms: [ProductTerm<4>; 4], masses: [f64; 2], hbar: f64) -> Self {
        Self { terms, masses, hbar, node_floor: DEFAULT_NODE_FLOOR }
    }

    pub fn with_node_floor(mut self, node_floor: f64) -> Self {
        self.node_floor = node_floor;
        self
    }

    pub fn terms(&self) -> &[ProductTerm<4>; 4] {
        &self.terms
    }

    pub fn masses(&self) -> [f64; 2] {
        self.masses
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn node_floor(&self) -> f64 {
        self.node_floor
    }

    fn axis_masses(&self) -> [f64; 4] {
        [self.masses[0], self.masses[0], self.masses[1], self.masses[1]]
    }

    /// Every term `(A,B | C,D)` has a partner `(C,D | A,B)` with an equal
    /// coefficient.
    pub fn is_exchange_symmetric(&self) -> bool {
        self.terms.iter().all(|term| {
            let f = term.factors;
            let swapped = [f[2], f[3], f[0], f[1]];
            self.terms.iter().any(|other| other.factors == swapped && other.coefficient == term.coefficient)
        })
    }

    /// Ψ_t(q).
    pub fn value(&self, q: ConfigPoint4, t: f64) -> ComplexLog {
        EvolvedTerms::new(&self.terms, t).evaluate(&q.to_array(), false).value
    }

    /// Guidance velocities `(ħ/mᵢ) Im(∇ᵢΨ/Ψ)`.
    pub fn velocity(&self, q: ConfigPoint4, t: f64) -> Result<Velocity4, FieldError> {
        self.velocity_array(&q.to_array(), t).map(Velocity4::from_array)
    }

    pub fn velocity_array(&self, q: &[f64; 4], t: f64) -> Result<[f64; 4], FieldError> {
        let eval = EvolvedTerms::new(&self.terms, t).evaluate(q, true);
        velocities(&eval, self.hbar, &self.axis_masses(), self.node_floor)
    }

    /// `ln|Ψ|` relative to the largest term at `q`; very negative near nodes.
    pub fn relative_log_magnitude(&self, q: ConfigPoint4, t: f64) -> f64 {
        EvolvedTerms::new(&self.terms, t).evaluate(&q.to_array(), false).relative_log_magnitude
    }

    /// Conditional state of the undetected particle after `detected` was
    /// found at `(x, y)` at time `t_c`.
    ///
    /// Each term's coefficient absorbs the detected particle's factors
    /// evaluated at the detection point; the survivor's packets keep evolving
    /// freely, which solves the one-particle equation exactly.
    pub fn collapse(&self, detected: Particle, x: f64, y: f64, t_c: f64) -> Result<OneParticleState, FieldError> {
        let (ax, ay) = (detected.x_axis(), detected.y_axis());
        let survivor = detected.other();
        let (sx, sy) = (survivor.x_axis(), survivor.y_axis());
        let terms = self.terms.map(|term| ProductTerm {
            coefficient: term.coefficient * term.factors[ax].value(x, t_c) * term.factors[ay].value(y, t_c),
            factors: [term.factors[sx], term.factors[sy]],
        });
        let finite = x.is_finite() && y.is_finite() && t_c.is_finite();
        if !finite || terms.iter().all(|term| term.coefficient.is_zero()) {
            return Err(FieldError::DegenerateCollapse);
        }
        Ok(OneParticleState {
            terms,
            mass: self.masses[survivor.index()],
            hbar: self.hbar,
            collapse_time: t_c,
            survivor,
            node_floor: self.node_floor,
        })
    }

    /// Normalized density of the single-axis marginal of `|Ψ_t|²`.
    ///
    /// Integrating out the other three axes reduces every cross term to a
    /// product of closed-form packet overlaps.
    pub fn marginal_density(&self, axis: usize, z: f64, t: f64) -> f64 {
        MarginalWeights::new(self, axis).density(self, z, t)
    }

    /// Tabulated marginal CDF of `|Ψ_t|²` along one axis.
    pub fn marginal_table(&self, axis: usize, t: f64) -> MarginalTable {
        MarginalTable::new(self, axis, t)
    }
}

/// Pairwise weights `c_j c̄_k Π_{b≠axis} ⟨φ_kb|φ_jb⟩` and the norm of Ψ.
struct MarginalWeights {
    axis: usize,
    pair_weights: Vec<(usize, usize, ComplexLog)>,
    log_norm: ComplexLog,
}

impl MarginalWeights {
    fn new(state: &TwoParticleState, axis: usize) -> Self {
        assert!(axis < 4, "axis index out of range");
        let mut pair_weights = Vec::with_capacity(16);
        let mut totals = Vec::with_capacity(16);
        for (j, tj) in state.terms.iter().enumerate() {
            for (k, tk) in state.terms.iter().enumerate() {
                let mut w = tj.coefficient * tk.coefficient.conj();
                for b in (0..4).filter(|&b| b != axis) {
                    w = w * packet_overlap(&tk.factors[b], &tj.factors[b]);
                }
                totals.push(w * packet_overlap(&tk.factors[axis], &tj.factors[axis]));
                pair_weights.push((j, k, w));
            }
        }
        Self { axis, pair_weights, log_norm: ComplexLog::sum(totals) }
    }

    fn density(&self, state: &TwoParticleState, z: f64, t: f64) -> f64 {
        let evolved = EvolvedTerms::new(&state.terms, t);
        let values: Vec<ComplexLog> = evolved.packets.iter().map(|p| p[self.axis].value(z)).collect();
        let total = ComplexLog::sum(self.pair_weights.iter().map(|&(j, k, w)| w * values[j] * values[k].conj()));
        if total.is_zero() {
            return 0.0;
        }
        let magnitude = (total.log_magnitude - self.log_norm.log_magnitude).exp();
        (magnitude * (total.phase - self.log_norm.phase).cos()).max(0.0)
    }
}

/// A single-axis marginal of `|Ψ_t|²` tabulated on a grid that resolves
/// every packet on that axis.
#[derive(Debug, Clone)]
pub struct MarginalTable {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
}

impl MarginalTable {
    const POINTS_PER_WINDOW: usize = 8001;
    const HALF_WINDOW_WIDTHS: f64 = 12.0;

    fn new(state: &TwoParticleState, axis: usize, t: f64) -> Self {
        let weights = MarginalWeights::new(state, axis);
        let mut nodes = Vec::new();
        for term in &state.terms {
            let p = term.factors[axis];
            let c = p.center + p.velocity * t;
            let half = Self::HALF_WINDOW_WIDTHS * p.width(t);
            let n = Self::POINTS_PER_WINDOW;
            nodes.extend((0..n).map(|i| c - half + 2.0 * half * i as f64 / (n - 1) as f64));
        }
        nodes.sort_by(f64::total_cmp);
        nodes.dedup();
        let density: Vec<f64> = nodes.iter().map(|&z| weights.density(state, z, t)).collect();
        let mut cdf = Vec::with_capacity(nodes.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 1..nodes.len() {
            acc += 0.5 * (density[i] + density[i - 1]) * (nodes[i] - nodes[i - 1]);
            cdf.push(acc);
        }
        // Trapezoid mass differs from one by the discretization error only.
        for v in &mut cdf {
            *v /= acc;
        }
        Self { nodes, cdf }
    }

    pub fn cdf(&self, z: f64) -> f64 {
        let i = self.nodes.partition_point(|&n| n <= z);
        if i == 0 {
            return 0.0;
        }
        if i == self.nodes.len() {
            return 1.0;
        }
        let (z0, z1) = (self.nodes[i - 1], self.nodes[i]);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        c0 + (c1 - c0) * (z - z0) / (z1 - z0)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c < p).clamp(1, self.nodes.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (z0, z1) = (self.nodes[i - 1], self.nodes[i]);
        if c1 <= c0 {
            return z0;
        }
        z0 + (z1 - z0) * (p - c0) / (c1 - c0)
    }

    /// Interior edges splitting the marginal into `bins` equally likely
    /// cells, plus the table's outer limits.
    pub fn equiprobable_edges(&self, bins: usize) -> Vec<f64> {
        let mut edges = Vec::with_capacity(bins + 1);
        edges.push(self.nodes[0]);
        edges.extend((1..bins).map(|i| self.quantile(i as f64 / bins as f64)));
        edges.push(*self.nodes.last().expect("table is never empty"));
        edges
    }

    pub fn bin_probabilities(&self, edges: &[f64]) -> Vec<f64> {
        edges.windows(2).map(|w| self.cdf(w[1]) - self.cdf(w[0])).collect()
    }
}

/// The conditional wave function of the surviving particle on axes `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OneParticleState {
    terms: [ProductTerm<2>; 4],
    mass: f64,
    hbar: f64,
    collapse_time: f64,
    survivor: Particle,
    node_floor: f64,
}

impl OneParticleState {
    pub fn terms(&self) -> &[ProductTerm<2>; 4] {
        &self.terms
    }

    pub fn collapse_time(&self) -> f64 {
        self.collapse_time
    }

    pub fn survivor(&self) -> Particle {
        self.survivor
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Multiplies every coefficient by a common constant; guidance is blind
    /// to this.
    pub fn rescaled(&self, factor: ComplexLog) -> Self {
        let mut out = self.clone();
        for term in &mut out.terms {
            term.coefficient = term.coefficient * factor;
        }
        out
    }

    /// ψ_t(x, y) for t ≥ t_c.
    pub fn value(&self, x: f64, y: f64, t: f64) -> ComplexLog {
        EvolvedTerms::new(&self.terms, t).evaluate(&[x, y], false).value
    }

    pub fn velocity(&self, x: f64, y: f64, t: f64) -> Result<(f64, f64), FieldError> {
        let [vx, vy] = self.velocity_array(&[x, y], t)?;
        Ok((vx, vy))
    }

    pub fn velocity_array(&self, q: &[f64; 2], t: f64) -> Result<[f64; 2], FieldError> {
        let eval = EvolvedTerms::new(&self.terms, t).evaluate(q, true);
        velocities(&eval, self.hbar, &[self.mass; 2], self.node_floor)
    }
}

/// The symmetrized initial state: `f_u⁺(r₁)f_d⁻(r₂) + f_d⁺(r₁)f_u⁻(r₂) + (1↔2)`
/// with `f_{u/d}^±(x, y) = G(x; σx, ±lx, ±ux) · G(y; σy, ±ly, ±uy)` where the y
/// sign is + for u and − for d.
pub fn build_initial_state(params: &ExperimentParams) -> Result<TwoParticleState, ConfigError> {
    params.validate()?;
    let p = params;
    let packet = |sigma: f64, center: f64, velocity: f64, mass: f64| {
        Packet1D::with_hbar(sigma, center, velocity, mass, p.hbar)
    };
    // (x packet, y packet) for the four single-particle wave functions.
    let f = |plus: bool, up: bool, mass: f64| -> Result<[Packet1D; 2], ConfigError> {
        let sx = if plus { 1.0 } else { -1.0 };
        let sy = if up { 1.0 } else { -1.0 };
        Ok([packet(p.sigma_x, sx * p.l_x, sx * p.u_x, mass)?, packet(p.sigma_y, sy * p.l_y, sy * p.u_y, mass)?])
    };
    let (m1, m2) = (p.mass1, p.mass2);
    let product = |a: [Packet1D; 2], b: [Packet1D; 2]| ProductTerm {
        coefficient: ComplexLog::ONE,
        factors: [a[0], a[1], b[0], b[1]],
    };
    let terms = [
        product(f(true, true, m1)?, f(false, false, m2)?),
        product(f(true, false, m1)?, f(false, true, m2)?),
        product(f(false, false, m1)?, f(true, true, m2)?),
        product(f(false, true, m1)?, f(true, false, m2)?),
    ];
    Ok(TwoParticleState::new(terms, [m1, m2], p.hbar).with_node_floor(p.integrator.node_floor))
}

pub fn psi2_value(s: &TwoParticleState, q: ConfigPoint4, t: f64) -> ComplexLog {
    s.value(q, t)
}

pub fn velocity2(s: &TwoParticleState, q: ConfigPoint4, t: f64) -> Result<Velocity4, FieldError> {
    s.velocity(q, t)
}

pub fn collapse(
    s: &TwoParticleState,
    detected: Particle,
    pos: (f64, f64),
    t_c: f64,
) -> Result<OneParticleState, FieldError> {
    s.collapse(detected, pos.0, pos.1, t_c)
}

pub fn psi1_value(s: &OneParticleState, x: f64, y: f64, t: f64) -> ComplexLog {
    s.value(x, y, t)
}

pub fn velocity1(s: &OneParticleState, x: f64, y: f64, t: f64) -> Result<(f64, f64), FieldError> {
    s.velocity(x, y, t)
}

/// Period of the coincidence fringes of `y_R` at fixed `y_L` at time `t`:
/// `2π σ_y² (1 + τ²) / (l_y τ)` with `τ = tħ/(2 m σ_y²)`.
pub fn coincidence_fringe_period(params: &ExperimentParams, t: f64) -> f64 {
    let sigma2 = params.sigma_y * params.sigma_y;
    let tau = t * params.hbar / (2.0 * params.mass1 * sigma2);
    2.0 * std::f64::consts::PI * sigma2 * (1.0 + tau * tau) / (params.l_y * tau)
}
