//! Initial positions: exact `|Ψ₀|²` samples by rejection from the diagonal
//! Gaussian mixture, and the narrowed-mixture non-equilibrium variant.
//!
//! Every sample index owns its own ChaCha stream keyed by the run seed, so a
//! sample depends only on `(seed, index)` and never on how work is split.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{ExperimentParams, SamplerMode, SamplerSpec};
use crate::error::{ConfigError, SamplingError};
use crate::state::{build_initial_state, ConfigPoint4, TwoParticleState};

/// Envelope constant of the rejection step: `|Σ₄ c_k φ_k|² ≤ 4 Σ₄ |φ_k|²`
/// and the proposal density is `¼ Σ₄ |φ_k|²`.
pub const ENVELOPE: f64 = 16.0;

/// Independent random stream for one sample index.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One accepted initial point and the number of proposals it took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub point: ConfigPoint4,
    pub proposals: u64,
}

pub struct Sampler<'a> {
    state: &'a TwoParticleState,
    spec: SamplerSpec,
    /// `(center, standard deviation)` of `|φ_k|²` per term and axis at t = 0.
    components: [[(f64, f64); 4]; 4],
}

impl<'a> Sampler<'a> {
    pub fn new(state: &'a TwoParticleState, spec: SamplerSpec) -> Result<Self, SamplingError> {
        spec.validate()?;
        if state.terms().iter().any(|t| t.coefficient.log_magnitude.abs() > 1e-12) {
            return Err(ConfigError::new("rejection sampling needs unit-modulus term coefficients").into());
        }
        let components = state.terms().map(|term| term.factors.map(|p| (p.center, p.sigma)));
        Ok(Self { state, spec, components })
    }

    pub fn spec(&self) -> SamplerSpec {
        self.spec
    }

    /// Draws sample `index` of the run.
    pub fn draw(&self, index: u64) -> Result<Draw, SamplingError> {
        let mut rng = substream(self.spec.seed, index);
        match self.spec.mode {
            SamplerMode::Narrowed => {
                Ok(Draw { point: self.propose(&mut rng, self.spec.sigma_scale), proposals: 1 })
            }
            SamplerMode::Equilibrium => {
                let mut proposals = 0;
                loop {
                    proposals += 1;
                    let q = self.propose(&mut rng, 1.0);
                    let ratio = self.acceptance_ratio(q)?;
                    if rng.random::<f64>() < ratio {
                        return Ok(Draw { point: q, proposals });
                    }
                }
            }
        }
    }

    /// Draw from the equal-weight mixture of the four diagonal terms with
    /// every width multiplied by `scale`.
    fn propose(&self, rng: &mut ChaCha8Rng, scale: f64) -> ConfigPoint4 {
        let k = rng.random_range(0..4);
        let q = self.components[k].map(|(center, sigma)| {
            let z: f64 = rng.sample(StandardNormal);
            center + scale * sigma * z
        });
        ConfigPoint4::from_array(q)
    }

    /// `|Ψ₀(q)|² / (16·proposal(q))`; exceeding one means the envelope is
    /// broken.
    pub fn acceptance_ratio(&self, q: ConfigPoint4) -> Result<f64, SamplingError> {
        let coords = q.to_array();
        // ln|φ_k|² for each term; packets are normalized, so these are the
        // log densities of the mixture components.
        let log_terms = self.state.terms().map(|term| {
            2.0 * term.factors.iter().zip(coords).map(|(p, x)| p.value(x, 0.0).log_magnitude).sum::<f64>()
        });
        let lead = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lead == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        let log_mixture_sum = lead + log_terms.iter().map(|l| (l - lead).exp()).sum::<f64>().ln();
        let log_psi2 = self.state.value(q, 0.0).log_norm_sqr();
        // 16 · ¼ Σ|φ_k|² = 4 Σ|φ_k|²
        let ratio = (log_psi2 - (ENVELOPE / 4.0).ln() - log_mixture_sum).exp();
        if ratio > 1.0 + 1e-12 {
            return Err(SamplingError::EnvelopeViolation { ratio });
        }
        Ok(ratio)
    }
}

/// `n` exact samples of `|Ψ₀|²`.
pub fn sample_initial(
    state: &TwoParticleState,
    spec: SamplerSpec,
    n: usize,
) -> Result<Vec<ConfigPoint4>, SamplingError> {
    if spec.mode != SamplerMode::Equilibrium {
        return Err(SamplingError::WrongMode("sample_initial draws equilibrium samples"));
    }
    let sampler = Sampler::new(state, spec)?;
    (0..n as u64).map(|i| sampler.draw(i).map(|d| d.point)).collect()
}

/// `n` draws from the narrowed diagonal mixture.
pub fn sample_nonequilibrium(
    params: &ExperimentParams,
    spec: SamplerSpec,
    n: usize,
) -> Result<Vec<ConfigPoint4>, SamplingError> {
    if spec.mode != SamplerMode::Narrowed {
        return Err(SamplingError::WrongMode("sample_nonequilibrium draws from the narrowed mixture"));
    }
    let state = build_initial_state(params)?;
    let sampler = Sampler::new(&state, spec)?;
    (0..n as u64).map(|i| sampler.draw(i).map(|d| d.point)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{chi_square_gof, histogram_with_edges, ks_two_sample};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn state() -> (ExperimentParams, TwoParticleState) {
        let p = ExperimentParams::default();
        let s = build_initial_state(&p).unwrap();
        (p, s)
    }

    #[test]
    fn acceptance_rate_is_about_a_quarter() {
        let (_, s) = state();
        let sampler = Sampler::new(&s, SamplerSpec::equilibrium(9)).unwrap();
        let n = 20_000;
        let proposals: u64 = (0..n).map(|i| sampler.draw(i).unwrap().proposals).sum();
        let rate = n as f64 / proposals as f64;
        assert!((rate - 0.25).abs() < 0.05, "{rate}");
    }

    #[test]
    fn x1_marginal_is_the_two_slit_mixture() {
        let (p, s) = state();
        let samples = sample_initial(&s, SamplerSpec::equilibrium(1), 100_000).unwrap();
        let x1: Vec<f64> = samples.iter().map(|q| q.x1).collect();
        let left = Normal::new(-p.l_x, p.sigma_x).unwrap();
        let right = Normal::new(p.l_x, p.sigma_x).unwrap();
        let cdf = |x: f64| 0.5 * (left.cdf(x) + right.cdf(x));
        // 40 bins: 20 equally likely cells per slit.
        let mut edges = vec![-1.0];
        for c in [-p.l_x, p.l_x] {
            let n = Normal::new(c, p.sigma_x).unwrap();
            edges.extend((1..20).map(|i| n.inverse_cdf(i as f64 / 20.0)));
            edges.push(if c < 0.0 { 0.0 } else { 1.0 });
        }
        let hist = histogram_with_edges(&x1, &edges).unwrap();
        let probs: Vec<f64> = edges.windows(2).map(|w| cdf(w[1]) - cdf(w[0])).collect();
        let chi = chi_square_gof(&hist, &probs).unwrap();
        assert!(chi.p_value > 0.001, "{chi:?}");
    }

    #[test]
    fn samples_are_exchange_symmetric() {
        let (_, s) = state();
        let samples = sample_initial(&s, SamplerSpec::equilibrium(2), 20_000).unwrap();
        let a: Vec<f64> = samples.iter().map(|q| q.x1 - q.x2).collect();
        let b: Vec<f64> = samples.iter().map(|q| q.x2 - q.x1).collect();
        let ks = ks_two_sample(&a, &b).unwrap();
        assert!(ks.p_value > 0.001, "{ks:?}");
    }

    #[test]
    fn same_seed_same_samples_regardless_of_split() {
        let (_, s) = state();
        let spec = SamplerSpec::equilibrium(77);
        let all = sample_initial(&s, spec, 200).unwrap();
        let sampler = Sampler::new(&s, spec).unwrap();
        let tail: Vec<_> = (100..200u64).map(|i| sampler.draw(i).unwrap().point).collect();
        assert_eq!(&all[100..], &tail[..]);
        assert_ne!(all, sample_initial(&s, SamplerSpec::equilibrium(78), 200).unwrap());
    }

    #[test]
    fn envelope_holds_on_every_proposal() {
        let (_, s) = state();
        let sampler = Sampler::new(&s, SamplerSpec::equilibrium(4)).unwrap();
        let mut rng = substream(4, 0);
        for _ in 0..10_000 {
            let q = sampler.propose(&mut rng, 1.0);
            let r = sampler.acceptance_ratio(q).unwrap();
            assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn narrowed_mixture_halves_widths() {
        let (p, _) = state();
        let spec = SamplerSpec::narrowed(5);
        let samples = sample_nonequilibrium(&p, spec, 20_000).unwrap();
        let mut dev = Vec::new();
        let mut x1_centers = [0usize; 2];
        for q in &samples {
            let c = p.l_y * q.y1.signum();
            dev.push(q.y1 - c);
            x1_centers[(q.x1 > 0.0) as usize] += 1;
            assert!((q.x1.abs() - p.l_x).abs() < 10.0 * p.sigma_x);
        }
        let sd = (dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64).sqrt();
        assert!((sd - 5e-6).abs() < 1e-7, "{sd}");
        assert!((x1_centers[0] as f64 / samples.len() as f64 - 0.5).abs() < 0.02);
        assert!(matches!(sample_initial(&build_initial_state(&p).unwrap(), spec, 1), Err(SamplingError::WrongMode(_))));
    }

    #[test]
    fn unit_scale_narrowed_matches_the_proposal_mixture() {
        let (p, s) = state();
        let spec = SamplerSpec { mode: SamplerMode::Narrowed, sigma_scale: 1.0, seed: 8 };
        let direct = sample_nonequilibrium(&p, spec, 10_000).unwrap();
        let sampler = Sampler::new(&s, SamplerSpec::equilibrium(9)).unwrap();
        let mut rng = substream(9, 12345);
        let proposals: Vec<ConfigPoint4> = (0..10_000).map(|_| sampler.propose(&mut rng, 1.0)).collect();
        for axis in 0..4 {
            let a: Vec<f64> = direct.iter().map(|q| q.to_array()[axis]).collect();
            let b: Vec<f64> = proposals.iter().map(|q| q.to_array()[axis]).collect();
            let ks = ks_two_sample(&a, &b).unwrap();
            assert!(ks.p_value > 0.001, "axis {axis}: {ks:?}");
        }
    }
}
