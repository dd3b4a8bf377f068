//! Affinity-weighted smoothness over sampled patch pairs.
//!
//! For a source image and its translation, pairs of patches that look alike
//! in the source (high affinity) are penalized for drifting apart in the
//! translation. The mirror term does the same between the translation and its
//! reconstruction.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{pair_distances, Extractor, PatchFeatures, PatchGrid};
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothnessConfig {
    /// Affinity bandwidth: `w = exp(-dist / sigma_sq)`.
    pub sigma_sq: f64,
    /// Pairs sampled per image and term.
    pub n_pairs: usize,
    /// Treat affinity weights as constants.
    pub stop_gradient: bool,
}

impl Default for SmoothnessConfig {
    fn default() -> Self {
        SmoothnessConfig { sigma_sq: 0.1, n_pairs: 256, stop_gradient: true }
    }
}

impl SmoothnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq > 0.0 && self.sigma_sq.is_finite()) {
            return Err(Error::Config(format!("sigma_sq must be positive, got {}", self.sigma_sq)));
        }
        if self.n_pairs == 0 {
            return Err(Error::Config("n_pairs must be positive".into()));
        }
        Ok(())
    }
}

/// `exp(-dist / sigma_sq)` for a normalized distance.
pub fn affinity(dist: f64, sigma_sq: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&dist) {
        return Err(Error::invalid(format!("distance {dist} outside [0, 1]")));
    }
    if sigma_sq.is_nan() || sigma_sq <= 0.0 {
        return Err(Error::invalid(format!("sigma_sq must be positive, got {sigma_sq}")));
    }
    Ok((-dist / sigma_sq).exp())
}

/// Sampled graph edges with their affinity weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Number of unordered pairs among `m` patches.
pub fn max_pairs(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// `k` distinct unordered pairs `(i, j)`, `i < j`, drawn uniformly from `m`
/// patches. Asking for every pair enumerates them in order.
pub fn sample_pair_indices<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let total = max_pairs(m);
    if k > total {
        return Err(Error::invalid(format!("{k} pairs requested but only {total} exist among {m} patches")));
    }
    if k == total {
        return Ok((0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect());
    }
    Ok(index::sample(rng, total, k).into_iter().map(|l| unrank(m, l)).collect())
}

/// Inverse of the row-major upper-triangle enumeration.
fn unrank(m: usize, mut l: usize) -> (usize, usize) {
    let mut i = 0;
    while l >= m - 1 - i {
        l -= m - 1 - i;
        i += 1;
    }
    (i, i + 1 + l)
}

/// Samples pairs for image `n` and weighs them by the affinity of the
/// `source` descriptors.
pub fn sample_pairs<T: Real, R: Rng + ?Sized>(
    tape: &Tape<T>,
    source: &PatchFeatures,
    n: usize,
    cfg: &SmoothnessConfig,
    rng: &mut R,
) -> Result<PairSet> {
    if !source.normalized {
        return Err(Error::NotNormalized("sample_pairs"));
    }
    let s = tape.shape(source.values);
    let (m, d) = (s[1], s[2]);
    let pairs = sample_pair_indices(m, cfg.n_pairs, rng)?;
    let rows = &tape.data(source.values)[n * m * d..(n + 1) * m * d];
    let weights = pairs
        .iter()
        .map(|&(i, j)| {
            let a = &rows[i * d..(i + 1) * d];
            let b = &rows[j * d..(j + 1) * d];
            let dist = a.iter().zip(b).map(|(x, y)| (x.f64() - y.f64()).abs()).sum::<f64>() / d as f64;
            affinity(dist.clamp(0.0, 1.0), cfg.sigma_sq)
        })
        .collect::<Result<_>>()?;
    Ok(PairSet { pairs, weights })
}

/// `Σ w_ij · Dist(target_i, target_j) / K` for image `n` with fixed weights.
pub fn smoothness_term<T: Real>(tape: &mut Tape<T>, target: &PatchFeatures, n: usize, set: &PairSet) -> Result<Var> {
    if set.is_empty() {
        return Err(Error::invalid("empty pair set"));
    }
    let d = pair_distances(tape, target, n, &set.pairs)?;
    let w = tape.constant(Tensor::new(vec![set.len()], set.weights.iter().map(|&w| T::of(w)).collect())?);
    weighted_mean(tape, w, d, set.len())
}

fn weighted_mean<T: Real>(tape: &mut Tape<T>, w: Var, d: Var, k: usize) -> Result<Var> {
    let wd = tape.mul(w, d)?;
    let s = tape.sum(wd)?;
    tape.scalar_mul(s, 1.0 / k as f64)
}

/// As [`smoothness_term`], with weights recomputed on the tape from `source`
/// so gradients also flow through the affinities.
pub fn smoothness_term_through_weights<T: Real>(
    tape: &mut Tape<T>,
    source: &PatchFeatures,
    target: &PatchFeatures,
    n: usize,
    set: &PairSet,
    sigma_sq: f64,
) -> Result<Var> {
    let ds = pair_distances(tape, source, n, &set.pairs)?;
    let e = tape.scalar_mul(ds, -1.0 / sigma_sq)?;
    let w = tape.exp(e)?;
    let d = pair_distances(tape, target, n, &set.pairs)?;
    weighted_mean(tape, w, d, set.len())
}

/// Both directional terms for one translation direction, averaged over the
/// batch: `source -> translated` weighted by the source graph and
/// `translated -> reconstructed` weighted by the translated graph.
///
/// `source` carries no gradient; `translated` and `reconstructed` do.
#[allow(clippy::too_many_arguments)]
pub fn smoothness_loss<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    extractor: &Extractor,
    grid: &PatchGrid,
    cfg: &SmoothnessConfig,
    source: Var,
    translated: Var,
    reconstructed: Var,
    rng: &mut R,
) -> Result<Var> {
    cfg.validate()?;
    for v in [source, translated, reconstructed] {
        grid.check(tape.shape(v))?;
    }
    let src = extractor.features(tape, source, grid)?;
    let mid = extractor.features(tape, translated, grid)?;
    let rec = extractor.features(tape, reconstructed, grid)?;
    let batch = tape.shape(source)[0];
    let mut per_image = Vec::with_capacity(batch);
    for n in 0..batch {
        let term = |tape: &mut Tape<T>, from: &PatchFeatures, to: &PatchFeatures, rng: &mut R| {
            let set = sample_pairs(tape, from, n, cfg, rng)?;
            if cfg.stop_gradient {
                smoothness_term(tape, to, n, &set)
            } else {
                smoothness_term_through_weights(tape, from, to, n, &set, cfg.sigma_sq)
            }
        };
        let t1 = term(tape, &src, &mid, rng)?;
        let t2 = term(tape, &mid, &rec, rng)?;
        per_image.push(tape.add(t1, t2)?);
    }
    let mut total = per_image[0];
    for &v in &per_image[1..] {
        total = tape.add(total, v)?;
    }
    tape.scalar_mul(total, 1.0 / batch as f64)
}

/// `L(G, X, Y)`: pairs from `x`, distances in `G(x)` and `F(G(x))`.
#[allow(clippy::too_many_arguments)]
pub fn smoothness_forward<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    extractor: &Extractor,
    grid: &PatchGrid,
    cfg: &SmoothnessConfig,
    x: Var,
    gx: Var,
    fgx: Var,
    rng: &mut R,
) -> Result<Var> {
    smoothness_loss(tape, extractor, grid, cfg, x, gx, fgx, rng)
}

/// `L(F, Y, X)`: pairs from `y`, distances in `F(y)` and `G(F(y))`.
#[allow(clippy::too_many_arguments)]
pub fn smoothness_backward<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<T>,
    extractor: &Extractor,
    grid: &PatchGrid,
    cfg: &SmoothnessConfig,
    y: Var,
    fy: Var,
    gfy: Var,
    rng: &mut R,
) -> Result<Var> {
    smoothness_loss(tape, extractor, grid, cfg, y, fy, gfy, rng)
}

/// Sum of the two directional terms.
pub fn smoothness_total<T: Real>(tape: &mut Tape<T>, forward: Var, backward: Var) -> Result<Var> {
    tape.add(forward, backward)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::features::{ExtractorKind, HistogramConfig};

    #[test]
    fn affinity_examples() {
        assert_eq!(affinity(0.0, 0.1).unwrap(), 1.0);
        assert!((affinity(0.1, 0.1).unwrap() - (-1f64).exp()).abs() < 1e-15);
        assert!(affinity(1.5, 0.1).is_err());
        assert!(affinity(-0.1, 0.1).is_err());
    }

    #[test]
    fn unrank_enumerates_upper_triangle() {
        let m = 7;
        let all: Vec<_> = (0..max_pairs(m)).map(|l| unrank(m, l)).collect();
        let want: Vec<_> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
        assert_eq!(all, want);
    }

    #[test]
    fn sampling_is_distinct_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let p = sample_pair_indices(64, 256, &mut a).unwrap();
        assert_eq!(p, sample_pair_indices(64, 256, &mut b).unwrap());
        let mut seen = std::collections::HashSet::new();
        assert!(p.iter().all(|&(i, j)| i < j && j < 64 && seen.insert((i, j))));
        assert!(sample_pair_indices(4, 7, &mut a).is_err());
        assert_eq!(sample_pair_indices(4, 6, &mut a).unwrap().len(), 6);
    }

    #[test]
    fn single_pair_term_is_its_distance() {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::new(vec![1, 2, 2], vec![0.2, 0.4, 0.6, 0.0]).unwrap());
        let f = PatchFeatures::normalized_values(v, ExtractorKind::Histogram);
        let set = PairSet { pairs: vec![(0, 1)], weights: vec![1.0] };
        let t = smoothness_term(&mut tape, &f, 0, &set).unwrap();
        assert!((tape.item(t).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn constant_images_give_zero() {
        let mut tape = Tape::<f64>::new();
        let ext = Extractor::Histogram(HistogramConfig::default());
        let grid = PatchGrid::new(16, 16, 8).unwrap();
        let c = |tape: &mut Tape<f64>, v| tape.constant(Tensor::full(vec![2, 1, 16, 16], v));
        let (x, gx, fgx) = (c(&mut tape, 0.3), c(&mut tape, -0.2), c(&mut tape, 0.9));
        let cfg = SmoothnessConfig { n_pairs: 6, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = smoothness_forward(&mut tape, &ext, &grid, &cfg, x, gx, fgx, &mut rng).unwrap();
        assert_eq!(tape.item(l).unwrap(), 0.0);
    }
}
