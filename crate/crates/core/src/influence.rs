//! Sensitivity of a generated sample to the ensemble weights, linear
//! counterfactual approximation, baselines, metrics and influence ranking.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{Codebook, WeightVector};
use crate::diffusion::{ddpm_step_f64, NoiseRecord};
use crate::ensemble::{EnsembleDenoiser, SampleRecord};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// `m × n` matrix `∂y/∂v` at the uniform weights, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
    pub base: WeightVector,
    pub record: NoiseRecord,
}

impl JacobianMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>, record: NoiseRecord) -> Result<Self> {
        let cols = columns.len();
        if cols == 0 {
            return Err(Error::invalid("jacobian needs at least one column"));
        }
        let rows = columns[0].len();
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::invalid("ragged jacobian columns"));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite jacobian entry".into()));
        }
        let mut entries = vec![0.0; rows * cols];
        for (j, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                entries[i * cols + j] = *v;
            }
        }
        Ok(JacobianMatrix {
            rows,
            cols,
            entries,
            base: WeightVector::uniform(cols),
            record,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.cols + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.entries.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `J · (v − u₀)`.
    pub fn displacement(&self, v: &WeightVector) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch {
                expected: vec![self.cols],
                actual: vec![v.len()],
            });
        }
        let delta: Vec<f64> = v.0.iter().zip(&self.base.0).map(|(a, b)| a - b).collect();
        Ok(self
            .entries
            .chunks(self.cols)
            .map(|row| row.iter().zip(&delta).map(|(j, d)| j * d).sum())
            .collect())
    }
}

/// One full sampling pass with the tangent seeded on weight `col`.
fn jacobian_column(ens: &EnsembleDenoiser, record: &NoiseRecord, col: usize) -> Result<Vec<f64>> {
    let schedule = ens.schedule();
    let v = WeightVector::uniform(ens.len()).0;
    let order = ens.summation_order(&v);
    let mut x = record.initial_noise();
    let mut dx = vec![0.0; x.len()];
    for t in (1..=schedule.steps).rev() {
        let mut eps = vec![0.0; x.len()];
        let mut deps = vec![0.0; x.len()];
        for &i in &order {
            let (val, tan) = ens.members()[i].predict_dual_f64(&x, &dx, t)?;
            for d in 0..x.len() {
                eps[d] += v[i] * val[d];
                deps[d] += v[i] * tan[d];
                if i == col {
                    deps[d] += val[d];
                }
            }
        }
        let (a, b, _) = schedule.step_coefficients(t);
        let z = record.step_noise(t);
        x = ddpm_step_f64(&x, t, &eps, z.as_deref(), schedule);
        dx = dx.iter().zip(&deps).map(|(d, e)| a * (d - b * e)).collect();
    }
    Ok(dx)
}

/// Forward-mode Jacobian of the sample with respect to the ensemble weights,
/// one sampling pass per member with the exogenous noise held fixed.
pub fn compute_jacobian(ens: &EnsembleDenoiser, record: &NoiseRecord) -> Result<JacobianMatrix> {
    if record.dim() != ens.sample_dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![ens.sample_dim()],
            actual: record.shape.clone(),
        });
    }
    if record.steps != ens.schedule().steps {
        return Err(Error::invalid("record and schedule disagree on T"));
    }
    let columns = (0..ens.len())
        .into_par_iter()
        .map(|c| jacobian_column(ens, record, c))
        .collect::<Result<Vec<_>>>()?;
    JacobianMatrix::from_columns(columns, record.clone())
}

/// First-order estimate `y(u₀) + J·(v − u₀)` of the sample under `v`.
pub fn approx_counterfactual(
    original: &SampleRecord,
    jacobian: &JacobianMatrix,
    target: &WeightVector,
) -> Result<Tensor> {
    if original.noise != jacobian.record {
        return Err(Error::invalid("jacobian was computed for a different record"));
    }
    if original.sample.len() != jacobian.rows {
        return Err(Error::ShapeMismatch {
            expected: vec![jacobian.rows],
            actual: original.sample.shape().to_vec(),
        });
    }
    let shift = jacobian.displacement(target)?;
    let out: Vec<f64> = original
        .sample
        .to_f64()
        .iter()
        .zip(&shift)
        .map(|(y, s)| y + s)
        .collect();
    Tensor::from_f64(original.sample.shape().to_vec(), &out)
}

/// `‖J·(u_{−g} − u₀)‖₂`.
pub fn influence_score(jacobian: &JacobianMatrix, codebook: &Codebook, group: usize) -> Result<f64> {
    let v = codebook.group_weight_vector(group)?;
    Ok(norm(&jacobian.displacement(&v)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub sample_id: String,
    /// `(group, score)` for every group, in group order.
    pub scores: Vec<(usize, f64)>,
    /// Top groups by descending score, ties by ascending group.
    pub ranking: Vec<usize>,
}

impl InfluenceReport {
    pub fn from_scores(sample_id: impl Into<String>, scores: Vec<f64>, k: usize) -> Result<Self> {
        if k > scores.len() {
            return Err(Error::invalid(format!(
                "top {k} requested from {} groups",
                scores.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("scores must be finite and non-negative"));
        }
        let mut ranking: Vec<usize> = (0..scores.len()).collect();
        ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        ranking.truncate(k);
        Ok(InfluenceReport {
            sample_id: sample_id.into(),
            scores: scores.into_iter().enumerate().collect(),
            ranking,
        })
    }

    /// Every scored group, best first.
    pub fn full_order(&self) -> Vec<usize> {
        let mut order: Vec<&(usize, f64)> = self.scores.iter().collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        order.into_iter().map(|(g, _)| *g).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,rank,group,score\n");
        for (r, g) in self.ranking.iter().enumerate() {
            let score = self.scores.iter().find(|(x, _)| x == g).map_or(0.0, |s| s.1);
            out.push_str(&format!("{},{},{},{:e}\n", self.sample_id, r + 1, g, score));
        }
        out
    }
}

pub fn rank_all(
    jacobian: &JacobianMatrix,
    codebook: &Codebook,
    k: usize,
    sample_id: impl Into<String>,
) -> Result<InfluenceReport> {
    let scores = (0..codebook.num_groups())
        .map(|g| influence_score(jacobian, codebook, g))
        .collect::<Result<Vec<_>>>()?;
    InfluenceReport::from_scores(sample_id, scores, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupOutcome {
    pub reports: Vec<InfluenceReport>,
    pub removed: Vec<usize>,
    pub iterations: usize,
}

/// Removes groups shared between top-`k` lists, refilling each list from its
/// own ranking, until no group appears in two lists.
pub fn dedup_top_lists(reports: &[InfluenceReport], k: usize) -> Result<DedupOutcome> {
    let orders: Vec<Vec<usize>> = reports.iter().map(InfluenceReport::full_order).collect();
    let universe: BTreeSet<usize> = orders.iter().flatten().copied().collect();
    if universe.len() < k * reports.len() {
        return Err(Error::invalid(format!(
            "{} distinct groups cannot fill {} disjoint top-{k} lists",
            universe.len(),
            reports.len()
        )));
    }
    let mut removed = BTreeSet::new();
    let mut iterations = 0;
    loop {
        let tops = orders
            .iter()
            .map(|o| {
                let top: Vec<usize> = o.iter().copied().filter(|g| !removed.contains(g)).take(k).collect();
                match top.len() == k {
                    true => Ok(top),
                    false => Err(Error::Degenerate(format!(
                        "ranking exhausted after removing {} shared groups",
                        removed.len()
                    ))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        tops.iter().flatten().for_each(|g| *counts.entry(*g).or_default() += 1);
        let shared: Vec<usize> = counts.into_iter().filter(|(_, c)| *c >= 2).map(|(g, _)| g).collect();
        if shared.is_empty() {
            let reports = reports
                .iter()
                .zip(tops)
                .map(|(r, ranking)| InfluenceReport {
                    sample_id: r.sample_id.clone(),
                    scores: r.scores.clone(),
                    ranking,
                })
                .collect();
            return Ok(DedupOutcome {
                reports,
                removed: removed.into_iter().collect(),
                iterations,
            });
        }
        removed.extend(shared);
        iterations += 1;
    }
}

/// Uniform weights for steps `T..2`, ablated weights at the final step only.
pub fn baseline_last_step(ens: &EnsembleDenoiser, item: usize, record: &NoiseRecord) -> Result<Tensor> {
    let ablated = ens.codebook().weight_vector(Some(item))?;
    last_step_with(ens, &ablated, record)
}

pub fn baseline_last_step_group(
    ens: &EnsembleDenoiser,
    group: usize,
    record: &NoiseRecord,
) -> Result<Tensor> {
    let ablated = ens.codebook().group_weight_vector(group)?;
    last_step_with(ens, &ablated, record)
}

fn last_step_with(ens: &EnsembleDenoiser, ablated: &WeightVector, record: &NoiseRecord) -> Result<Tensor> {
    let u0 = WeightVector::uniform(ens.len());
    let x = crate::diffusion::sample_f64(
        |x, t| match t {
            1 => ens.predict_weighted_f64(ablated.as_slice(), x, t),
            _ => ens.predict_weighted_f64(u0.as_slice(), x, t),
        },
        record,
        ens.schedule(),
    )?;
    Tensor::from_f64(record.shape.clone(), &x)
}

/// Samples from every member alone, sharing `record`.
pub fn individual_samples(ens: &EnsembleDenoiser, record: &NoiseRecord) -> Result<Vec<Vec<f64>>> {
    (0..ens.len())
        .into_par_iter()
        .map(|i| ens.generate_f64(&WeightVector::unit(ens.len(), i).0, record))
        .collect()
}

/// `original + mean_i(±(y_i − original))`, negated for ablated members.
pub fn individual_models_estimate(
    original: &[f64],
    solo: &[Vec<f64>],
    ablated: &[usize],
) -> Result<Vec<f64>> {
    if solo.is_empty() {
        return Err(Error::invalid("no member samples"));
    }
    let mut out = original.to_vec();
    for (i, y) in solo.iter().enumerate() {
        if y.len() != original.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![original.len()],
                actual: vec![y.len()],
            });
        }
        let sign = if ablated.contains(&i) { -1.0 } else { 1.0 };
        for (o, (yv, ov)) in out.iter_mut().zip(y.iter().zip(original)) {
            *o += sign * (yv - ov) / solo.len() as f64;
        }
    }
    Ok(out)
}

pub fn baseline_individual_models(
    ens: &EnsembleDenoiser,
    item: usize,
    record: &NoiseRecord,
    original: &Tensor,
) -> Result<Tensor> {
    let ablated = ens.codebook().ablation_models(item)?;
    let solo = individual_samples(ens, record)?;
    let out = individual_models_estimate(&original.to_f64(), &solo, &ablated)?;
    Tensor::from_f64(original.shape().to_vec(), &out)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.len()],
            actual: vec![b.len()],
        });
    }
    Ok(())
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    if a.len() < 2 {
        return Err(Error::Degenerate("pearson needs at least two points".into()));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("zero variance in pearson".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| ranks[k] = avg);
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_lengths(a, b)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Mean and unbiased covariance of a point set.
pub fn moments(points: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if points.len() < 2 {
        return Err(Error::Degenerate("moments need at least two points".into()));
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::invalid("points differ in dimension"));
    }
    let data = DMatrix::from_fn(points.len(), d, |i, j| points[i][j]);
    let mean = data.row_mean().transpose();
    let centered = DMatrix::from_fn(points.len(), d, |i, j| data[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (points.len() - 1) as f64;
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Squared Frechet distance between Gaussians with the given moments.
pub fn frechet_from_moments(
    mean_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mean_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let d = mean_a.len();
    if mean_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(Error::invalid("moment dimensions disagree"));
    }
    let root_a = psd_sqrt(cov_a);
    let cross = psd_sqrt(&(&root_a * cov_b * &root_a));
    let value = (mean_a - mean_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    Ok(value.max(0.0))
}

/// Squared Frechet distance between Gaussian fits of two point sets.
pub fn frechet_gaussian(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = moments(a)?;
    let (mb, cb) = moments(b)?;
    frechet_from_moments(&ma, &ca, &mb, &cb)
}
