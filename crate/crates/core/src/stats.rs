//! Histograms, goodness-of-fit and two-sample tests, and the detection-record
//! analyses built on them.

use std::fmt::Write as _;
use std::io::{self, Write};

use statrs::function::gamma::gamma_ur;

use crate::dynamics::{DetectionRecord, Side, Status};
use crate::error::StatsError;

/// Minimum sample size accepted by [`ks_two_sample`].
pub const KS_MIN_SAMPLE: usize = 10;
/// Minimum expected count per bin in [`chi_square_gof`].
pub const MIN_EXPECTED: f64 = 5.0;
/// Minimum conditioned sample for [`fringe_visibility`].
pub const MIN_FRINGE_SAMPLE: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram1D {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Number of values offered, in range or not.
    pub total: u64,
    pub below: u64,
    pub above: u64,
}

impl Histogram1D {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn in_range(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Delimited-text export: one `left,right,count` row per bin after `#`
    /// metadata lines.
    pub fn write_csv<W: Write>(&self, mut out: W, label: &str) -> io::Result<()> {
        writeln!(out, "# histogram: {label}")?;
        writeln!(out, "# bins: {}", self.bins())?;
        writeln!(out, "# range: {:.16e} {:.16e}", self.edges[0], self.edges[self.bins()])?;
        writeln!(out, "# total: {} below: {} above: {}", self.total, self.below, self.above)?;
        writeln!(out, "left,right,count")?;
        for (w, c) in self.edges.windows(2).zip(&self.counts) {
            writeln!(out, "{:.16e},{:.16e},{c}", w[0], w[1])?;
        }
        Ok(())
    }
}

fn check_edges(edges: &[f64]) -> Result<(), StatsError> {
    if edges.len() < 2 || edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(StatsError::InvalidRange);
    }
    Ok(())
}

/// Equal-width edges over `[lo, hi]`.
pub fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>, StatsError> {
    if !(lo < hi) || bins == 0 || !lo.is_finite() || !hi.is_finite() {
        return Err(StatsError::InvalidRange);
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
    edges.push(hi);
    Ok(edges)
}

/// Bins are left-closed and right-open except the last, which also holds
/// its right edge.
pub fn histogram_with_edges(values: &[f64], edges: &[f64]) -> Result<Histogram1D, StatsError> {
    check_edges(edges)?;
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let mut h = Histogram1D { edges: edges.to_vec(), counts: vec![0; bins], total: values.len() as u64, below: 0, above: 0 };
    for &v in values {
        if v < lo || v.is_nan() {
            h.below += 1;
        } else if v > hi {
            h.above += 1;
        } else {
            let i = edges.partition_point(|e| *e <= v).saturating_sub(1).min(bins - 1);
            h.counts[i] += 1;
        }
    }
    Ok(h)
}

pub fn histogram1d(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram1D, StatsError> {
    histogram_with_edges(values, &uniform_edges(lo, hi, bins)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2D {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// `counts[i][j]` holds x bin `i` and y bin `j`.
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
    pub outside: u64,
}

impl Histogram2D {
    pub fn write_csv<W: Write>(&self, mut out: W, label: &str) -> io::Result<()> {
        writeln!(out, "# histogram2d: {label}")?;
        writeln!(out, "# x_bins: {} y_bins: {}", self.x_edges.len() - 1, self.y_edges.len() - 1)?;
        writeln!(out, "# total: {} outside: {}", self.total, self.outside)?;
        writeln!(out, "x_left,x_right,y_left,y_right,count")?;
        for (i, xw) in self.x_edges.windows(2).enumerate() {
            for (j, yw) in self.y_edges.windows(2).enumerate() {
                writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e},{}", xw[0], xw[1], yw[0], yw[1], self.counts[i][j])?;
            }
        }
        Ok(())
    }
}

pub fn histogram2d(points: &[(f64, f64)], x_edges: &[f64], y_edges: &[f64]) -> Result<Histogram2D, StatsError> {
    check_edges(x_edges)?;
    check_edges(y_edges)?;
    let (nx, ny) = (x_edges.len() - 1, y_edges.len() - 1);
    let bin = |edges: &[f64], n: usize, v: f64| {
        (v >= edges[0] && v <= edges[n]).then(|| edges.partition_point(|e| *e <= v).saturating_sub(1).min(n - 1))
    };
    let mut h = Histogram2D {
        x_edges: x_edges.to_vec(),
        y_edges: y_edges.to_vec(),
        counts: vec![vec![0; ny]; nx],
        total: points.len() as u64,
        outside: 0,
    };
    for &(x, y) in points {
        match (bin(x_edges, nx, x), bin(y_edges, ny, y)) {
            (Some(i), Some(j)) => h.counts[i][j] += 1,
            _ => h.outside += 1,
        }
    }
    Ok(h)
}

/// `sup |F_a − F_b|` over the pooled sample, with no size requirement.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Theta-function form, fast for small λ.
        let c = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20).map(|k| ((2 * k - 1) as f64).powi(2) * c).map(f64::exp).sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

impl KsResult {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value at
/// effective size `n_a·n_b/(n_a+n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    for s in [a, b] {
        if s.len() < KS_MIN_SAMPLE {
            return Err(StatsError::UndersizedSample { required: KS_MIN_SAMPLE, actual: s.len() });
        }
    }
    let statistic = ks_statistic(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n_eff = na * nb / (na + nb);
    Ok(KsResult { statistic, p_value: kolmogorov_survival(n_eff.sqrt() * statistic), n_a: a.len(), n_b: b.len() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: usize,
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_survival(statistic: f64, dof: usize) -> f64 {
    if statistic <= 0.0 {
        1.0
    } else {
        gamma_ur(dof as f64 / 2.0, statistic / 2.0)
    }
}

/// Pearson goodness-of-fit of the in-range counts against bin probabilities.
///
/// Probabilities are renormalized over the histogram range, so the test is
/// conditional on falling inside it. Adjacent bins are pooled left to right
/// until every group expects at least [`MIN_EXPECTED`] counts.
pub fn chi_square_gof(observed: &Histogram1D, probabilities: &[f64]) -> Result<ChiSquareResult, StatsError> {
    if probabilities.len() != observed.bins() {
        return Err(StatsError::BinningMismatch(format!(
            "{} probabilities for {} bins",
            probabilities.len(),
            observed.bins()
        )));
    }
    if probabilities.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(StatsError::BinningMismatch("probabilities must be finite and non-negative".into()));
    }
    let mass: f64 = probabilities.iter().sum();
    let n = observed.in_range() as f64;
    if mass <= 0.0 || n == 0.0 {
        return Err(StatsError::EmptySelection);
    }
    let mut groups: Vec<(f64, f64)> = Vec::new();
    let mut pending = (0.0, 0.0);
    for (&c, &p) in observed.counts.iter().zip(probabilities) {
        pending.0 += c as f64;
        pending.1 += n * p / mass;
        if pending.1 >= MIN_EXPECTED {
            groups.push(pending);
            pending = (0.0, 0.0);
        }
    }
    if pending.1 > 0.0 || pending.0 > 0.0 {
        match groups.last_mut() {
            Some(last) => {
                last.0 += pending.0;
                last.1 += pending.1;
            }
            None => groups.push(pending),
        }
    }
    if groups.len() < 2 {
        return Err(StatsError::UndersizedSample { required: 2 * MIN_EXPECTED as usize, actual: n as usize });
    }
    let statistic: f64 = groups.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = groups.len() - 1;
    Ok(ChiSquareResult { statistic, p_value: chi_square_survival(statistic, dof), dof })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    /// Position along the screen.
    Y,
    /// Arrival time.
    T,
}

impl Observable {
    pub fn as_str(self) -> &'static str {
        match self {
            Observable::Y => "y",
            Observable::T => "t",
        }
    }
}

/// Observable values of complete records' arrivals on `side`.
pub fn select(records: &[DetectionRecord], side: Side, observable: Observable) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.status == Status::Complete)
        .filter_map(|r| r.arrival_on(side))
        .map(|a| match observable {
            Observable::Y => a.y,
            Observable::T => a.t,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Binning {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Binning {
    /// 80 bins over ±5 cm along the screen.
    pub const SCREEN_Y: Binning = Binning { lo: -0.05, hi: 0.05, bins: 80 };

    /// 80 bins over `[0, t_max]`.
    pub fn arrival_time(t_max: f64) -> Self {
        Self { lo: 0.0, hi: t_max, bins: 80 }
    }

    pub fn edges(&self) -> Result<Vec<f64>, StatsError> {
        uniform_edges(self.lo, self.hi, self.bins)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalComparison {
    pub side: Side,
    pub observable: Observable,
    pub ks: KsResult,
    pub hist_a: Histogram1D,
    pub hist_b: Histogram1D,
}

impl MarginalComparison {
    /// Structured-text report: statistic, p-value, sizes and decisions at
    /// α = 0.01 and 0.001.
    pub fn report(&self, label_a: &str, label_b: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "a = \"{label_a}\"");
        let _ = writeln!(s, "b = \"{label_b}\"");
        let _ = writeln!(s, "side = \"{}\"", self.side);
        let _ = writeln!(s, "observable = \"{}\"", self.observable.as_str());
        let _ = writeln!(s, "n_a = {}", self.ks.n_a);
        let _ = writeln!(s, "n_b = {}", self.ks.n_b);
        let _ = writeln!(s, "ks_statistic = {:.16e}", self.ks.statistic);
        let _ = writeln!(s, "p_value = {:.16e}", self.ks.p_value);
        for (key, alpha) in [("reject_at_0_01", 0.01), ("reject_at_0_001", 0.001)] {
            let _ = writeln!(s, "{key} = {}", self.ks.rejects(alpha));
        }
        s
    }
}

/// Compares the marginal of `observable` on `side` between two record sets.
pub fn marginal_compare(
    records_a: &[DetectionRecord],
    records_b: &[DetectionRecord],
    side: Side,
    observable: Observable,
    binning: Binning,
) -> Result<MarginalComparison, StatsError> {
    let a = select(records_a, side, observable);
    let b = select(records_b, side, observable);
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySelection);
    }
    let edges = binning.edges()?;
    Ok(MarginalComparison {
        side,
        observable,
        ks: ks_two_sample(&a, &b)?,
        hist_a: histogram_with_edges(&a, &edges)?,
        hist_b: histogram_with_edges(&b, &edges)?,
    })
}

/// `(max − min)/(max + min)` over the 3-bin moving average of the interior
/// bins; the two edge bins only feed their neighbours' averages.
pub fn smoothed_visibility(counts: &[u64]) -> f64 {
    if counts.len() < 3 {
        return 0.0;
    }
    let smooth = counts.windows(3).map(|w| w.iter().sum::<u64>() as f64 / 3.0);
    let (lo, hi) = smooth.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi + lo <= 0.0 {
        0.0
    } else {
        (hi - lo) / (hi + lo)
    }
}

/// Fringe visibility of right-screen positions, optionally conditioned on
/// `|y_L| < band`, histogrammed over `window`.
pub fn fringe_visibility(records: &[DetectionRecord], band: Option<f64>, window: Binning) -> Result<f64, StatsError> {
    let values: Vec<f64> = records
        .iter()
        .filter(|r| r.status == Status::Complete)
        .filter_map(|r| {
            let right = r.arrival_on(Side::R)?;
            match band {
                Some(b) => (r.arrival_on(Side::L)?.y.abs() < b).then_some(right.y),
                None => Some(right.y),
            }
        })
        .collect();
    let hist = histogram_with_edges(&values, &window.edges()?)?;
    let n = hist.in_range() as usize;
    if n < MIN_FRINGE_SAMPLE {
        return Err(StatsError::UndersizedSample { required: MIN_FRINGE_SAMPLE, actual: n });
    }
    Ok(smoothed_visibility(&hist.counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Mode;
    use crate::dynamics::Arrival;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn rng(seed: u64) -> impl Rng {
        crate::sampling::substream(seed, 0)
    }

    #[test]
    fn histogram_basics() {
        let h = histogram1d(&[0.5], 0.0, 1.0, 2).unwrap();
        assert_eq!(h.counts, vec![0, 1]);
        let h = histogram1d(&[1.0, 0.0, -0.1, 1.1, f64::NAN], 0.0, 1.0, 4).unwrap();
        assert_eq!(h.counts, vec![1, 0, 0, 1]);
        assert_eq!((h.below, h.above, h.total), (2, 1, 5));
        let h = histogram1d(&[], 0.0, 1.0, 3).unwrap();
        assert_eq!(h.counts, vec![0; 3]);
        assert!(histogram1d(&[], 1.0, 1.0, 3).is_err());
        assert!(histogram1d(&[], 0.0, 1.0, 0).is_err());
        assert!(histogram_with_edges(&[], &[0.0, 1.0, 0.5]).is_err());
    }

    #[test]
    fn uniform_sample_passes_flat_chi_square() {
        let mut r = rng(3);
        let v: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        let h = histogram1d(&v, 0.0, 1.0, 20).unwrap();
        let chi = chi_square_gof(&h, &[0.05; 20]).unwrap();
        assert!(chi.p_value > 0.001, "{chi:?}");
        assert_eq!(chi.dof, 19);
    }

    #[test]
    fn chi_square_hand_cases() {
        let h = Histogram1D { edges: vec![0.0, 1.0, 2.0, 3.0], counts: vec![9, 10, 11], total: 30, below: 0, above: 0 };
        let chi = chi_square_gof(&h, &[1.0 / 3.0; 3]).unwrap();
        assert!((chi.statistic - 0.2).abs() < 1e-12);
        assert_eq!(chi.dof, 2);
        // Two degrees of freedom: the tail is exp(−x/2).
        assert!((chi.p_value - (-0.1f64).exp()).abs() < 1e-12);

        let h = Histogram1D { edges: vec![0.0, 1.0, 2.0, 3.0], counts: vec![10, 20, 30], total: 60, below: 0, above: 0 };
        let chi = chi_square_gof(&h, &[1.0, 2.0, 3.0].map(|x| x / 6.0)).unwrap();
        assert_eq!((chi.statistic, chi.p_value), (0.0, 1.0));
        assert!(matches!(chi_square_gof(&h, &[0.5, 0.5]), Err(StatsError::BinningMismatch(_))));
    }

    #[test]
    fn sparse_bins_are_pooled() {
        let h = Histogram1D { edges: (0..=5).map(f64::from).collect(), counts: vec![1, 2, 40, 2, 1], total: 46, below: 0, above: 0 };
        let probs = [0.02, 0.04, 0.88, 0.04, 0.02];
        // Expected 0.92, 1.84, 40.48, 1.84, 0.92: the first three pool, the
        // last two join them.
        let chi = chi_square_gof(&h, &probs).unwrap_err();
        assert!(matches!(chi, StatsError::UndersizedSample { .. }));
        let h = Histogram1D { counts: vec![10, 20, 400, 20, 10], total: 460, ..h };
        let chi = chi_square_gof(&h, &probs).unwrap();
        assert_eq!(chi.dof, 4);
    }

    #[test]
    fn chi_square_p_is_roughly_uniform() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let edges = uniform_edges(-3.0, 3.0, 24).unwrap();
        let probs: Vec<f64> = edges.windows(2).map(|w| normal.cdf(w[1]) - normal.cdf(w[0])).collect();
        let mut inside = 0;
        let mut below_half = 0;
        for seed in 0..1000 {
            let mut r = crate::sampling::substream(seed, 1);
            let v: Vec<f64> = (0..500).map(|_| r.sample(StandardNormal)).collect();
            let p = chi_square_gof(&histogram_with_edges(&v, &edges).unwrap(), &probs).unwrap().p_value;
            inside += (0.001..=0.999).contains(&p) as usize;
            below_half += (p < 0.5) as usize;
        }
        assert!(inside >= 990, "{inside}");
        assert!((400..600).contains(&below_half), "{below_half}");
    }

    fn brute_force_d(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|v| **v <= x).count() as f64 / s.len() as f64;
        a.iter().chain(b).map(|&x| (ecdf(a, x) - ecdf(b, x)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn ks_hand_cases() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.5, 2.5, 3.5];
        assert!((ks_statistic(&a, &b) - brute_force_d(&a, &b)).abs() < 1e-15);
        assert!((ks_statistic(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(ks_two_sample(&a, &b), Err(StatsError::UndersizedSample { required: 10, actual: 3 })));

        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let r = ks_two_sample(&x, &x).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let y: Vec<f64> = x.iter().map(|v| v + 100.0).collect();
        let r = ks_two_sample(&x, &y).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_series_forms_agree() {
        // Both series converge near λ = 1; compare them just either side.
        let small = |l: f64| {
            let c = -std::f64::consts::PI.powi(2) / (8.0 * l * l);
            1.0 - (2.0 * std::f64::consts::PI).sqrt() / l * (1..=50).map(|k| ((2 * k - 1) as f64).powi(2) * c).map(f64::exp).sum::<f64>()
        };
        for l in [0.6, 0.9, 0.999, 1.0, 1.3, 2.0] {
            let large = 2.0 * (1..=100).map(|k| if k % 2 == 1 { 1.0 } else { -1.0 } * (-2.0 * (k * k) as f64 * l * l).exp()).sum::<f64>();
            assert!((small(l) - large).abs() < 1e-12, "{l}");
            assert!((kolmogorov_survival(l) - large).abs() < 1e-12);
        }
        // Tabulated 5% and 1% critical values.
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 2e-4);
        assert!((kolmogorov_survival(1.628) - 0.01).abs() < 2e-4);
    }

    proptest! {
        #[test]
        fn ks_matches_brute_force_and_is_symmetric(
            a in prop::collection::vec(-5.0f64..5.0, 10..40),
            b in prop::collection::vec(-5.0f64..5.0, 10..40),
        ) {
            let d = ks_statistic(&a, &b);
            prop_assert!((d - brute_force_d(&a, &b)).abs() < 1e-12);
            let (r1, r2) = (ks_two_sample(&a, &b).unwrap(), ks_two_sample(&b, &a).unwrap());
            prop_assert_eq!(r1.statistic, r2.statistic);
            prop_assert_eq!(r1.p_value, r2.p_value);
            let cube = |s: &[f64]| s.iter().map(|v| v * v * v).collect::<Vec<_>>();
            prop_assert_eq!(ks_statistic(&cube(&a), &cube(&b)), d);
        }

        #[test]
        fn histogram_conserves_counts(v in prop::collection::vec(-2.0f64..2.0, 0..200), bins in 1usize..30) {
            let h = histogram1d(&v, -1.0, 1.0, bins).unwrap();
            prop_assert_eq!(h.in_range() + h.below + h.above, v.len() as u64);
            prop_assert_eq!(h.counts.len() + 1, h.edges.len());
        }
    }

    #[test]
    fn visibility_of_synthetic_patterns() {
        assert_eq!(smoothed_visibility(&[100; 40]), 0.0);
        let cos2: Vec<u64> =
            (0..200).map(|i| (1e6 * (std::f64::consts::PI * (i as f64 + 0.5) / 100.0).cos().powi(2)).round() as u64).collect();
        assert!((smoothed_visibility(&cos2) - 1.0).abs() < 0.02);
        // Edge bins only enter through their neighbours' averages.
        assert!((smoothed_visibility(&[0, 50, 50, 50, 1000]) - 1000.0 / 1200.0).abs() < 1e-12);
    }

    fn record(index: u64, y_left: f64, y_right: f64) -> DetectionRecord {
        DetectionRecord {
            trajectory_index: index,
            mode: Mode::Free,
            first: Some(Arrival { side: Side::L, t: 0.1, y: y_left }),
            second: Some(Arrival { side: Side::R, t: 4.9, y: y_right }),
            status: Status::Complete,
        }
    }

    #[test]
    fn selection_skips_incomplete_records() {
        let mut recs = vec![record(0, 1.0, 2.0), record(1, 3.0, 4.0)];
        recs[1].status = Status::AnomalousSameSide;
        assert_eq!(select(&recs, Side::R, Observable::Y), vec![2.0]);
        assert_eq!(select(&recs, Side::L, Observable::T), vec![0.1]);
        assert!(matches!(
            marginal_compare(&recs[1..], &recs, Side::R, Observable::Y, Binning::SCREEN_Y),
            Err(StatsError::EmptySelection)
        ));
    }

    #[test]
    fn identical_sets_compare_equal() {
        let mut r = rng(11);
        let recs: Vec<_> = (0..200).map(|i| record(i, r.sample::<f64, _>(StandardNormal) * 0.01, r.sample::<f64, _>(StandardNormal) * 0.01)).collect();
        let c = marginal_compare(&recs, &recs, Side::R, Observable::Y, Binning::SCREEN_Y).unwrap();
        assert_eq!(c.ks.statistic, 0.0);
        assert_eq!(c.hist_a, c.hist_b);
        let text = c.report("a", "b");
        assert!(text.contains("reject_at_0_01 = false"));
        assert!(text.contains("n_a = 200"));
    }

    #[test]
    fn parity_halves_rarely_reject() {
        let mut rejections = 0;
        for seed in 0..100 {
            let mut r = crate::sampling::substream(seed, 2);
            let recs: Vec<_> = (0..2000).map(|i| record(i, r.sample(StandardNormal), r.sample(StandardNormal))).collect();
            let (even, odd): (Vec<_>, Vec<_>) = recs.iter().partition(|r| r.trajectory_index % 2 == 0);
            let c = marginal_compare(&even, &odd, Side::R, Observable::Y, Binning { lo: -4.0, hi: 4.0, bins: 40 }).unwrap();
            rejections += c.ks.rejects(0.01) as usize;
        }
        assert!(rejections <= 5, "{rejections}");
    }

    #[test]
    fn conditioning_band_filters_left_positions() {
        let recs: Vec<_> = (0..3000).map(|i| record(i, if i % 3 == 0 { 0.0 } else { 0.5 }, (i as f64 / 3000.0) - 0.5)).collect();
        let window = Binning { lo: -0.5, hi: 0.5, bins: 10 };
        assert!(fringe_visibility(&recs, None, window).unwrap() < 0.01);
        assert!(fringe_visibility(&recs, Some(0.1), window).is_ok());
        assert!(matches!(fringe_visibility(&recs, Some(0.0), window), Err(StatsError::UndersizedSample { .. })));
    }

    #[test]
    fn csv_export_has_metadata_and_rows() {
        let h = histogram1d(&[0.1, 0.2, 0.9], 0.0, 1.0, 2).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf, "y_R").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 3);
        assert!(rows[1].ends_with(",2"));
        let h2 = histogram2d(&[(0.1, 0.1), (2.0, 0.0)], &[0.0, 1.0], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(h2.counts, vec![vec![1, 0]]);
        assert_eq!(h2.outside, 1);
    }
}
