//! Procedural toy datasets, a nearest-centroid classifier, and harnesses for
//! the class-ablation, convergence, Jacobian-fidelity and coherence studies.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::WeightVector;
use crate::diffusion::NoiseRecord;
use crate::ensemble::EnsembleDenoiser;
use crate::error::{Error, Result};
use crate::influence::{
    approx_counterfactual, baseline_last_step_group, compute_jacobian, euclidean,
    frechet_gaussian, individual_models_estimate, individual_samples, pearson, spearman,
};
use crate::numerics::{derive_seed, RngStream, Tensor};

pub const GLYPH_SIDE: usize = 8;
pub const GLYPH_CLASSES: usize = 7;
pub const DEFAULT_GLYPH_JITTER: f64 = 0.1;

/// Seed purposes for the per-experiment seed block.
pub mod purpose {
    pub const RECORD: u64 = 1;
    pub const PERMUTATION: u64 = 2;
    pub const ABLATION: u64 = 3;
    pub const DATA: u64 = 4;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDescriptor {
    pub family: String,
    pub class_count: usize,
    pub per_class: usize,
    pub jitter: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDataset {
    pub items: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub descriptor: GeneratorDescriptor,
}

impl ToyDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        self.items[0].shape()
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.items.iter().map(Tensor::to_f64).collect()
    }

    /// Regenerates a dataset from its descriptor.
    pub fn from_descriptor(d: &GeneratorDescriptor) -> Result<Self> {
        match d.family.as_str() {
            "glyphs" => gen_glyphs(d.class_count, d.per_class, d.jitter, d.seed),
            f if f.starts_with("gaussian-mixture-") => {
                let dim = f["gaussian-mixture-".len()..]
                    .parse()
                    .map_err(|_| Error::Format(format!("bad family {f}")))?;
                gen_gaussian_mixture(d.class_count, d.per_class, dim, d.jitter, d.seed)
            }
            f => Err(Error::Format(format!("unknown dataset family {f}"))),
        }
    }
}

fn glyph_pixel(class: usize, r: i64, c: i64) -> bool {
    let inside = |lo: i64, hi: i64, v: i64| (lo..hi).contains(&v);
    match class {
        0 => inside(3, 5, r) && inside(1, 7, c),
        1 => inside(3, 5, c) && inside(1, 7, r),
        2 => r == c || r == c + 1,
        3 => (inside(3, 5, r) && inside(1, 7, c)) || (inside(3, 5, c) && inside(1, 7, r)),
        4 => inside(1, 7, r) && inside(1, 7, c) && (r == 1 || r == 6 || c == 1 || c == 6),
        5 => inside(2, 6, r) && inside(2, 6, c),
        _ => inside(2, 6, r) && inside(2, 6, c) && (r + c) % 2 == 0,
    }
}

/// Ink level per class. Dense glyphs are dimmed so that no class prototype
/// sits much further from the dataset mean than the others.
const GLYPH_INK: [f64; GLYPH_CLASSES] = [1.0, 1.0, 0.64, 0.93, 0.35, 0.97, 0.97];

const GLYPH_SHIFT_PROBABILITY: f64 = 0.3;

/// 8×8 glyph images on a background of -1, labels interleaved (`item j` has
/// class `j % class_count`). With `jitter > 0` each glyph is, with
/// probability 0.3, redrawn at an offset of up to one pixel per axis and
/// gets Gaussian noise of standard deviation `jitter`; the checkerboard only
/// moves along the diagonal so its parity is kept.
pub fn gen_glyphs(class_count: usize, per_class: usize, jitter: f64, seed: u64) -> Result<ToyDataset> {
    if class_count == 0 || class_count > GLYPH_CLASSES {
        return Err(Error::invalid(format!(
            "glyph class count must be 1..={GLYPH_CLASSES}, got {class_count}"
        )));
    }
    if !(jitter.is_finite() && jitter >= 0.0) {
        return Err(Error::invalid("jitter must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = RngStream::new(seed, derive_seed(seed, purpose::DATA, 0));
    let total = class_count * per_class;
    let mut items = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for j in 0..total {
        let class = j % class_count;
        let mut offset = || {
            if jitter > 0.0 && rng.random::<f64>() < GLYPH_SHIFT_PROBABILITY {
                rng.random_range(-1i64..=1)
            } else {
                0
            }
        };
        let (dr, dc) = match class {
            6 => {
                let d = offset();
                (d, d)
            }
            _ => (offset(), offset()),
        };
        let (eps, next) = noise.normals(GLYPH_SIDE * GLYPH_SIDE);
        noise = next;
        let pixels: Vec<f64> = (0..GLYPH_SIDE * GLYPH_SIDE)
            .map(|p| {
                let (r, c) = ((p / GLYPH_SIDE) as i64 - dr, (p % GLYPH_SIDE) as i64 - dc);
                let on = (0..8).contains(&r) && (0..8).contains(&c) && glyph_pixel(class, r, c);
                (if on { 2.0 * GLYPH_INK[class] - 1.0 } else { -1.0 }) + jitter * eps[p]
            })
            .collect();
        items.push(Tensor::from_f64(vec![GLYPH_SIDE * GLYPH_SIDE], &pixels)?);
        labels.push(class);
    }
    Ok(ToyDataset {
        items,
        labels,
        descriptor: GeneratorDescriptor {
            family: "glyphs".into(),
            class_count,
            per_class,
            jitter,
            seed,
        },
    })
}

/// Class means of the Gaussian mixture: evenly spaced on a circle of radius
/// `separation` in the first two coordinates.
pub fn mixture_means(class_count: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..class_count)
        .map(|c| {
            let angle = std::f64::consts::TAU * c as f64 / class_count as f64;
            let mut m = vec![0.0; dim];
            m[0] = separation * angle.cos();
            if dim > 1 {
                m[1] = separation * angle.sin();
            }
            m
        })
        .collect()
}

/// Unit-variance isotropic clusters around [`mixture_means`], labels interleaved.
pub fn gen_gaussian_mixture(
    class_count: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<ToyDataset> {
    if class_count == 0 || dim == 0 || !separation.is_finite() {
        return Err(Error::invalid("mixture needs classes, a dimension and finite separation"));
    }
    let means = mixture_means(class_count, dim, separation);
    let mut noise = RngStream::new(seed, derive_seed(seed, purpose::DATA, 1));
    let mut items = Vec::new();
    let mut labels = Vec::new();
    for j in 0..class_count * per_class {
        let class = j % class_count;
        let (eps, next) = noise.normals(dim);
        noise = next;
        let x: Vec<f64> = means[class].iter().zip(&eps).map(|(m, e)| m + e).collect();
        items.push(Tensor::from_f64(vec![dim], &x)?);
        labels.push(class);
    }
    Ok(ToyDataset {
        items,
        labels,
        descriptor: GeneratorDescriptor {
            family: format!("gaussian-mixture-{dim}"),
            class_count,
            per_class,
            jitter: separation,
            seed,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestCentroid {
    pub centroids: Vec<Vec<f64>>,
}

impl NearestCentroid {
    pub fn fit(train: &ToyDataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let classes = train.descriptor.class_count.max(train.labels.iter().max().map_or(0, |m| m + 1));
        let dim = train.items[0].len();
        let mut sums = vec![vec![0.0; dim]; classes];
        let mut counts = vec![0usize; classes];
        for (x, &y) in train.items.iter().zip(&train.labels) {
            sums[y].iter_mut().zip(x.to_f64()).for_each(|(s, v)| *s += v);
            counts[y] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::invalid(format!("class {c} has no training items")));
        }
        let centroids = sums
            .into_iter()
            .zip(counts)
            .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
            .collect();
        Ok(NearestCentroid { centroids })
    }

    /// Closest centroid, ties to the lower class index.
    pub fn classify(&self, x: &[f64]) -> usize {
        let dist = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut best = 0;
        let mut best_d = dist(&self.centroids[0]);
        for (i, c) in self.centroids.iter().enumerate().skip(1) {
            let d = dist(c);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    pub fn accuracy(&self, data: &ToyDataset) -> f64 {
        let hits = data
            .items
            .iter()
            .zip(&data.labels)
            .filter(|(x, &y)| self.classify(&x.to_f64()) == y)
            .count();
        hits as f64 / data.len() as f64
    }
}

pub fn nearest_centroid_classify(train: &ToyDataset, x: &[f64]) -> Result<usize> {
    Ok(NearestCentroid::fit(train)?.classify(x))
}

/// Record `index` of an experiment seeded with `seed`.
pub fn experiment_record(ens: &EnsembleDenoiser, seed: u64, index: usize) -> NoiseRecord {
    NoiseRecord::new(
        seed,
        derive_seed(seed, purpose::RECORD, index as u64),
        ens.schedule().steps,
        vec![ens.sample_dim()],
    )
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    match v.len() % 2 {
        1 => v[mid],
        _ => (v[mid - 1] + v[mid]) / 2.0,
    }
}

/// Counts of classified outputs, without ablation and under each class ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFrequencyMatrix {
    pub classes: usize,
    pub unablated: Vec<u64>,
    /// `ablated[a][c]`: outputs classified `c` with class `a` ablated.
    pub ablated: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAblationResult {
    pub num_samples: usize,
    pub frequency: ClassFrequencyMatrix,
    /// Fraction of samples whose most-changed counterfactual is the
    /// ablation of their predicted class.
    pub argmax_accuracy: f64,
    pub own_class_distances: Vec<f64>,
    pub other_class_distances: Vec<f64>,
    /// Fraction of other-class ablations that change the predicted class.
    pub off_class_change_rate: f64,
}

impl ClassAblationResult {
    /// Classes whose own-ablation frequency exceeds half the unablated one.
    pub fn unsuppressed_classes(&self) -> Vec<usize> {
        let f = &self.frequency;
        (0..f.classes)
            .filter(|&c| 2 * f.ablated[c][c] > f.unablated[c])
            .collect()
    }

    pub fn own_median(&self) -> f64 {
        median(&self.own_class_distances)
    }

    pub fn other_median(&self) -> f64 {
        median(&self.other_class_distances)
    }
}

struct ClassTrial {
    original: usize,
    ablated: Vec<usize>,
    distances: Vec<f64>,
}

/// Generates samples and their class-ablated counterfactuals from a
/// class-coded ensemble (one code group per class) and classifies all of them.
pub fn class_ablation_experiment(
    ens: &EnsembleDenoiser,
    classifier: &NearestCentroid,
    num_samples: usize,
    seed: u64,
) -> Result<ClassAblationResult> {
    let classes = ens.codebook().num_groups();
    if classes != classifier.centroids.len() {
        return Err(Error::invalid(format!(
            "ensemble has {classes} class groups but the classifier knows {}",
            classifier.centroids.len()
        )));
    }
    if num_samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let u0 = WeightVector::uniform(ens.len());
    let ablations = (0..classes)
        .map(|c| ens.codebook().group_weight_vector(c))
        .collect::<Result<Vec<_>>>()?;
    let trials = (0..num_samples)
        .into_par_iter()
        .map(|s| {
            let record = experiment_record(ens, seed, s);
            let y = ens.generate_f64(u0.as_slice(), &record)?;
            let mut ablated = Vec::with_capacity(classes);
            let mut distances = Vec::with_capacity(classes);
            for v in &ablations {
                let cf = ens.generate_f64(v.as_slice(), &record)?;
                ablated.push(classifier.classify(&cf));
                distances.push(euclidean(&cf, &y)?);
            }
            Ok(ClassTrial {
                original: classifier.classify(&y),
                ablated,
                distances,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut frequency = ClassFrequencyMatrix {
        classes,
        unablated: vec![0; classes],
        ablated: vec![vec![0; classes]; classes],
    };
    let mut hits = 0usize;
    let mut own = Vec::new();
    let mut other = Vec::new();
    let mut changes = 0usize;
    for trial in &trials {
        frequency.unablated[trial.original] += 1;
        for (a, &c) in trial.ablated.iter().enumerate() {
            frequency.ablated[a][c] += 1;
            if a != trial.original && c != trial.original {
                changes += 1;
            }
        }
        let most = (0..classes)
            .max_by(|&a, &b| trial.distances[a].total_cmp(&trial.distances[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        hits += usize::from(most == trial.original);
        for (a, &d) in trial.distances.iter().enumerate() {
            match a == trial.original {
                true => own.push(d),
                false => other.push(d),
            }
        }
    }
    Ok(ClassAblationResult {
        num_samples,
        frequency,
        argmax_accuracy: hits as f64 / num_samples as f64,
        own_class_distances: own,
        other_class_distances: other,
        off_class_change_rate: changes as f64 / (num_samples * (classes - 1).max(1)) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub num_records: usize,
    /// Mean distance from the `k`-member output to the full ensemble, `k = 1..=n`.
    pub mean_distance: Vec<f64>,
    /// Mean distance between the `k` and `k+1` member outputs, `k = 1..n`.
    pub mean_increment: Vec<f64>,
}

impl ConvergenceResult {
    pub fn distance_non_increasing(&self) -> bool {
        self.mean_distance.windows(2).all(|w| w[1] <= w[0])
    }

    pub fn increments_decreasing(&self) -> bool {
        self.mean_increment.windows(2).all(|w| w[1] < w[0])
    }
}

/// Nested random sub-ensembles over many records.
pub fn convergence_experiment(
    ens: &EnsembleDenoiser,
    num_records: usize,
    seed: u64,
) -> Result<ConvergenceResult> {
    if num_records == 0 {
        return Err(Error::invalid("need at least one record"));
    }
    let n = ens.len();
    let per_record = (0..num_records)
        .into_par_iter()
        .map(|r| {
            let record = experiment_record(ens, seed, r);
            let outs = ens.nested_ensemble_outputs(&record, derive_seed(seed, purpose::PERMUTATION, r as u64))?;
            let outs: Vec<Vec<f64>> = outs.iter().map(Tensor::to_f64).collect();
            let full = &outs[n - 1];
            let dist = outs.iter().map(|o| euclidean(o, full)).collect::<Result<Vec<_>>>()?;
            let inc = outs.windows(2).map(|w| euclidean(&w[0], &w[1])).collect::<Result<Vec<_>>>()?;
            Ok((dist, inc))
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>, len: usize| {
        (0..len)
            .map(|k| per_record.iter().map(|r| pick(r)[k]).sum::<f64>() / num_records as f64)
            .collect::<Vec<_>>()
    };
    Ok(ConvergenceResult {
        num_records,
        mean_distance: mean(&|r| &r.0, n),
        mean_increment: mean(&|r| &r.1, n - 1),
    })
}

/// Per-sample correlations for the three counterfactual estimators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodTable {
    pub jacobian: Vec<f64>,
    pub last_step: Vec<f64>,
    pub individual: Vec<f64>,
}

impl MethodTable {
    pub fn medians(&self) -> [f64; 3] {
        [median(&self.jacobian), median(&self.last_step), median(&self.individual)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityResult {
    pub num_samples: usize,
    pub num_ablations: usize,
    /// Agreement of estimated and true displacements, per sample.
    pub pearson: MethodTable,
    /// Agreement of estimated and true displacement magnitudes across
    /// ablations, per sample.
    pub spearman: MethodTable,
}

struct SampleFidelity {
    pearson: [f64; 3],
    spearman: [f64; 3],
}

fn sample_fidelity(
    ens: &EnsembleDenoiser,
    record: &NoiseRecord,
    groups: &[usize],
) -> Result<SampleFidelity> {
    let u0 = WeightVector::uniform(ens.len());
    let original = ens.generate(&u0, record)?;
    let y = original.sample.to_f64();
    let jacobian = compute_jacobian(ens, record)?;
    let solo = individual_samples(ens, record)?;
    let mut shifts: [Vec<f64>; 4] = Default::default();
    let mut sizes: [Vec<f64>; 4] = Default::default();
    for &g in groups {
        let v = ens.codebook().group_weight_vector(g)?;
        let truth = ens.generate_f64(v.as_slice(), record)?;
        let approx = approx_counterfactual(&original, &jacobian, &v)?.to_f64();
        let last = baseline_last_step_group(ens, g, record)?.to_f64();
        let models = ens.codebook().group_ablation_models(g)?;
        let indiv = individual_models_estimate(&y, &solo, &models)?;
        for (m, est) in [truth, approx, last, indiv].iter().enumerate() {
            let d: Vec<f64> = est.iter().zip(&y).map(|(a, b)| a - b).collect();
            sizes[m].push(d.iter().map(|x| x * x).sum::<f64>().sqrt());
            shifts[m].extend(d);
        }
    }
    let mut out = SampleFidelity {
        pearson: [0.0; 3],
        spearman: [0.0; 3],
    };
    for m in 0..3 {
        out.pearson[m] = pearson(&shifts[m + 1], &shifts[0])?;
        out.spearman[m] = spearman(&sizes[m + 1], &sizes[0])?;
    }
    Ok(out)
}

/// Compares Jacobian-approximated counterfactuals and two baselines with
/// true counterfactuals over random group ablations.
pub fn jacobian_fidelity_experiment(
    ens: &EnsembleDenoiser,
    num_samples: usize,
    num_ablations: usize,
    seed: u64,
) -> Result<FidelityResult> {
    let groups = ens.codebook().num_groups();
    if num_ablations < 2 || num_ablations > groups {
        return Err(Error::invalid(format!(
            "need 2..={groups} ablations per sample, got {num_ablations}"
        )));
    }
    if num_samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    let rows = (0..num_samples)
        .into_par_iter()
        .map(|s| {
            let record = experiment_record(ens, seed, s);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose::ABLATION, s as u64));
            let chosen = sample_indices(&mut rng, groups, num_ablations).into_vec();
            sample_fidelity(ens, &record, &chosen)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut result = FidelityResult {
        num_samples,
        num_ablations,
        pearson: MethodTable::default(),
        spearman: MethodTable::default(),
    };
    for row in rows {
        for (table, values) in [(&mut result.pearson, row.pearson), (&mut result.spearman, row.spearman)] {
            table.jacobian.push(values[0]);
            table.last_step.push(values[1]);
            table.individual.push(values[2]);
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceResult {
    pub num_samples: usize,
    pub ensemble: f64,
    pub members: Vec<f64>,
}

impl CoherenceResult {
    pub fn worst_member(&self) -> f64 {
        self.members.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Frechet distance from the training set to ensemble samples and to each
/// member's solo samples, all drawn from the same records.
pub fn coherence_experiment(
    ens: &EnsembleDenoiser,
    train: &ToyDataset,
    num_samples: usize,
    seed: u64,
) -> Result<CoherenceResult> {
    if num_samples < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let reference = train.vectors();
    let draw = |v: WeightVector| -> Result<Vec<Vec<f64>>> {
        (0..num_samples)
            .into_par_iter()
            .map(|s| ens.generate_f64(v.as_slice(), &experiment_record(ens, seed, s)))
            .collect()
    };
    let ensemble = frechet_gaussian(&reference, &draw(WeightVector::uniform(ens.len()))?)?;
    let members = (0..ens.len())
        .map(|i| frechet_gaussian(&reference, &draw(WeightVector::unit(ens.len(), i))?))
        .collect::<Result<Vec<_>>>()?;
    Ok(CoherenceResult {
        num_samples,
        ensemble,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_jitter_glyphs_are_identical_per_class() {
        let d = gen_glyphs(7, 3, 0.0, 1).unwrap();
        for j in 7..21 {
            assert_eq!(d.items[j], d.items[j % 7]);
        }
        assert_ne!(d.items[0], d.items[1]);
    }

    #[test]
    fn glyph_classes_are_distinct_shapes() {
        let d = gen_glyphs(7, 1, 0.0, 0).unwrap();
        for a in 0..7 {
            for b in a + 1..7 {
                assert_ne!(d.items[a], d.items[b], "classes {a} and {b} coincide");
            }
        }
    }

    #[test]
    fn glyph_prototypes_are_balanced_around_the_mean() {
        let d = gen_glyphs(7, 1, 0.0, 0).unwrap();
        let v = d.vectors();
        let mean: Vec<f64> = (0..64).map(|p| v.iter().map(|x| x[p]).sum::<f64>() / 7.0).collect();
        for x in &v {
            let r = x.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((4.0..4.7).contains(&r), "{r}");
        }
    }

    #[test]
    fn glyphs_deterministic_and_validated() {
        assert_eq!(gen_glyphs(5, 4, 0.1, 9).unwrap(), gen_glyphs(5, 4, 0.1, 9).unwrap());
        assert!(gen_glyphs(8, 1, 0.1, 0).is_err());
        assert!(gen_glyphs(0, 1, 0.1, 0).is_err());
    }

    #[test]
    fn nearest_centroid_self_accuracy() {
        let d = gen_glyphs(7, 30, DEFAULT_GLYPH_JITTER, 3).unwrap();
        let clf = NearestCentroid::fit(&d).unwrap();
        assert!(clf.accuracy(&d) >= 0.95, "{}", clf.accuracy(&d));
        let held = gen_glyphs(7, 30, DEFAULT_GLYPH_JITTER, 4).unwrap();
        assert!(clf.accuracy(&held) >= 0.95);
    }

    #[test]
    fn classifier_ties_and_centroids() {
        let clf = NearestCentroid {
            centroids: vec![vec![-1.0], vec![1.0]],
        };
        assert_eq!(clf.classify(&[0.0]), 0);
        assert_eq!(clf.classify(&[1.0]), 1);
    }

    #[test]
    fn classifier_rejects_empty_class() {
        let mut d = gen_glyphs(3, 2, 0.0, 0).unwrap();
        d.labels = vec![0, 0, 0, 2, 2, 2];
        assert!(NearestCentroid::fit(&d).is_err());
    }

    #[test]
    fn mixture_counts_and_descriptor_roundtrip() {
        let d = gen_gaussian_mixture(4, 25, 2, 6.0, 11).unwrap();
        for c in 0..4 {
            assert_eq!(d.labels.iter().filter(|&&l| l == c).count(), 25);
        }
        assert_eq!(ToyDataset::from_descriptor(&d.descriptor).unwrap(), d);
        let g = gen_glyphs(3, 2, 0.1, 5).unwrap();
        assert_eq!(ToyDataset::from_descriptor(&g.descriptor).unwrap(), g);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
