//! The encoded ensemble denoiser `f̂_e · v = Σ_i v_i f(x, t, θ_i)`.
//!
//! Weights act on the per-step noise predictions, not on final samples.
//! Ablation reweights survivors to `1/(n−h)` and zeroes the rest. Member
//! contributions are summed in a canonical order keyed by checkpoint digest,
//! so relabeling members together with their weights is bit-exact.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codebook::{Codebook, WeightVector};
use crate::diffusion::{sample_f64, train_model, NoiseRecord, NoiseSchedule, TrainingConfig};
use crate::error::{Error, Result};
use crate::numerics::{checkpoint, derive_seed, DenoiserParams, Tensor};

/// Seed purpose for per-member training seeds.
pub const MEMBER_SEED_PURPOSE: u64 = 0x7472_6169_6e;

#[derive(Debug, Clone)]
pub struct EnsembleDenoiser {
    members: Vec<DenoiserParams>,
    digests: Vec<[u8; 32]>,
    codebook: Codebook,
    schedule: NoiseSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub ensemble_id: String,
    pub schedule_id: String,
}

/// A generated sample with everything needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub noise: NoiseRecord,
    pub weights: WeightVector,
    pub sample: Tensor,
    pub provenance: Provenance,
}

pub fn schedule_id(schedule: &NoiseSchedule) -> String {
    format!(
        "linear-T{}-{:e}-{:e}",
        schedule.steps, schedule.beta_start, schedule.beta_end
    )
}

impl EnsembleDenoiser {
    pub fn new(
        members: Vec<DenoiserParams>,
        codebook: Codebook,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        if members.len() != codebook.n() {
            return Err(Error::invalid(format!(
                "{} members for a length-{} code",
                members.len(),
                codebook.n()
            )));
        }
        if members.iter().any(|m| m.arch != members[0].arch) {
            return Err(Error::invalid("members disagree on architecture"));
        }
        let digests = members
            .iter()
            .map(|m| Sha256::digest(checkpoint::to_bytes(m)).into())
            .collect();
        Ok(EnsembleDenoiser {
            members,
            digests,
            codebook,
            schedule,
        })
    }

    /// Trains member `i` on split `i`. Member seeds derive from `config.seed`.
    pub fn train(
        codebook: Codebook,
        dataset: &[Tensor],
        config: &TrainingConfig,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        let splits = codebook.splits();
        if let Some(i) = splits.iter().position(Vec::is_empty) {
            return Err(Error::EmptySplit(i));
        }
        let members = splits
            .par_iter()
            .enumerate()
            .map(|(i, split)| {
                let cfg = config.with_seed(member_seed(config.seed, i));
                train_model(split, dataset, &cfg, &schedule)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(members, codebook, schedule)
    }

    pub fn members(&self) -> &[DenoiserParams] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn sample_dim(&self) -> usize {
        self.members[0].arch.sample_dim
    }

    pub fn member_digest_hex(&self, i: usize) -> String {
        hex::encode(self.digests[i])
    }

    /// Digest over all member digests in order.
    pub fn ensemble_id(&self) -> String {
        let mut h = Sha256::new();
        self.digests.iter().for_each(|d| h.update(d));
        hex::encode(&h.finalize()[..8])
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            ensemble_id: self.ensemble_id(),
            schedule_id: schedule_id(&self.schedule),
        }
    }

    fn check_weights(&self, v: &WeightVector) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.len()],
                actual: vec![v.len()],
            });
        }
        v.validate()
    }

    /// Members with non-zero weight, in canonical summation order.
    pub(crate) fn summation_order(&self, v: &[f64]) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).filter(|&i| v[i] != 0.0).collect();
        order.sort_by_key(|&i| (self.digests[i], v[i].to_bits()));
        order
    }

    /// `Σ_i v_i f(x, t, θ_i)` in double precision.
    pub fn predict_weighted_f64(&self, v: &[f64], x: &[f64], t: usize) -> Vec<f64> {
        let mut acc = vec![0.0; x.len()];
        for i in self.summation_order(v) {
            let pred = self.members[i].forward(x, t);
            acc.iter_mut().zip(&pred).for_each(|(a, p)| *a += v[i] * p);
        }
        acc
    }

    pub fn predict_noise_weighted(
        &self,
        v: &WeightVector,
        x: &Tensor,
        t: usize,
    ) -> Result<Tensor> {
        if v.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.len()],
                actual: vec![v.len()],
            });
        }
        if x.len() != self.sample_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.sample_dim()],
                actual: x.shape().to_vec(),
            });
        }
        let out = self.predict_weighted_f64(v.as_slice(), &x.to_f64(), t);
        Tensor::from_f64(x.shape().to_vec(), &out)
    }

    fn check_record(&self, record: &NoiseRecord) -> Result<()> {
        if record.dim() != self.sample_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.sample_dim()],
                actual: record.shape.clone(),
            });
        }
        Ok(())
    }

    /// Sample trajectory with weights `v` at every step, in double precision.
    pub fn generate_f64(&self, v: &[f64], record: &NoiseRecord) -> Result<Vec<f64>> {
        self.check_record(record)?;
        sample_f64(
            |x, t| self.predict_weighted_f64(v, x, t),
            record,
            &self.schedule,
        )
    }

    pub fn generate(&self, v: &WeightVector, record: &NoiseRecord) -> Result<SampleRecord> {
        self.check_weights(v)?;
        let x = self.generate_f64(v.as_slice(), record)?;
        Ok(SampleRecord {
            noise: record.clone(),
            weights: v.clone(),
            sample: Tensor::from_f64(record.shape.clone(), &x)?,
            provenance: self.provenance(),
        })
    }

    /// Regenerates `record`'s noise with the models that saw `item` removed.
    pub fn counterfactual(&self, item: usize, record: &NoiseRecord) -> Result<SampleRecord> {
        let v = self.codebook.weight_vector(Some(item))?;
        self.generate(&v, record)
    }

    pub fn group_counterfactual(&self, group: usize, record: &NoiseRecord) -> Result<SampleRecord> {
        let v = self.codebook.group_weight_vector(group)?;
        self.generate(&v, record)
    }

    /// Samples from nested uniform sub-ensembles: the first `k` members of a
    /// random permutation, for `k = 1..=n`, all from the same noise.
    pub fn nested_ensemble_outputs(
        &self,
        record: &NoiseRecord,
        permutation_seed: u64,
    ) -> Result<Vec<Tensor>> {
        let mut perm: Vec<usize> = (0..self.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(permutation_seed));
        (1..=self.len())
            .map(|k| {
                let mut v = vec![0.0; self.len()];
                perm[..k].iter().for_each(|&i| v[i] = 1.0 / k as f64);
                let x = self.generate_f64(&v, record)?;
                Tensor::from_f64(record.shape.clone(), &x)
            })
            .collect()
    }

    /// Same members and weights relabeled by `perm` (new member `j` is old
    /// member `perm[j]`), with codes permuted to match.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("not a permutation"));
        }
        let codes = self
            .codebook
            .codes()
            .iter()
            .map(|c| {
                let bits = (0..n)
                    .filter(|&j| c.has(perm[j]))
                    .fold(0u64, |b, j| b | 1 << j);
                crate::codebook::Code(bits)
            })
            .collect();
        let codebook = Codebook::from_codes(
            n,
            self.codebook.h(),
            codes,
            self.codebook.group_map().to_vec(),
            self.codebook.seed(),
        )?;
        Self::new(
            perm.iter().map(|&p| self.members[p].clone()).collect(),
            codebook,
            self.schedule.clone(),
        )
    }
}

pub fn member_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, MEMBER_SEED_PURPOSE, index as u64)
}

impl SampleRecord {
    /// Regenerates from the stored noise and weights.
    pub fn regenerate(&self, ensemble: &EnsembleDenoiser) -> Result<SampleRecord> {
        ensemble.generate(&self.weights, &self.noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::Code;
    use crate::diffusion::make_schedule;
    use crate::numerics::Architecture;

    fn toy() -> EnsembleDenoiser {
        let codes = vec![
            Code::from_bit_string("110").unwrap(),
            Code::from_bit_string("101").unwrap(),
            Code::from_bit_string("011").unwrap(),
        ];
        let cb = Codebook::from_codes(3, 2, codes, vec![0, 1, 2], 0).unwrap();
        let members = (0..3)
            .map(|i| DenoiserParams::init(Architecture::new(2, vec![6]), 10 + i).unwrap())
            .collect();
        EnsembleDenoiser::new(members, cb, make_schedule(20, 1e-3, 0.1).unwrap()).unwrap()
    }

    #[test]
    fn unit_weights_select_a_member() {
        let e = toy();
        let x = [0.3, -0.2];
        for i in 0..3 {
            let got = e.predict_weighted_f64(&WeightVector::unit(3, i).0, &x, 4);
            assert_eq!(got, e.members()[i].forward(&x, 4));
        }
    }

    #[test]
    fn uniform_weights_average() {
        let e = toy();
        let x = [0.3, -0.2];
        let got = e.predict_weighted_f64(&WeightVector::uniform(3).0, &x, 4);
        for (d, g) in got.iter().enumerate() {
            let mean: f64 = e.members().iter().map(|m| m.forward(&x, 4)[d]).sum::<f64>() / 3.0;
            assert!((g - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn wrong_weight_length() {
        let e = toy();
        let x = Tensor::zeros(vec![2]);
        assert!(e
            .predict_noise_weighted(&WeightVector::uniform(2), &x, 1)
            .is_err());
        let rec = NoiseRecord::new(0, 0, 20, vec![2]);
        assert!(e.generate(&WeightVector(vec![0.0; 3]), &rec).is_err());
    }

    #[test]
    fn counterfactual_with_uniform_weights_is_original() {
        let e = toy();
        let rec = NoiseRecord::new(3, 1, 20, vec![2]);
        let a = e.generate(&WeightVector::uniform(3), &rec).unwrap();
        let b = a.regenerate(&e).unwrap();
        assert_eq!(a, b);
        let cf = e.counterfactual(0, &rec).unwrap();
        assert_eq!(cf.weights.0, vec![0.0, 0.0, 1.0]);
        assert_ne!(cf.sample, a.sample);
    }

    #[test]
    fn nested_full_equals_ensemble() {
        let e = toy();
        let rec = NoiseRecord::new(3, 1, 20, vec![2]);
        let nested = e.nested_ensemble_outputs(&rec, 5).unwrap();
        assert_eq!(nested.len(), 3);
        let full = e.generate(&WeightVector::uniform(3), &rec).unwrap();
        assert_eq!(nested[2], full.sample);
    }

    #[test]
    fn permuting_members_with_weights_is_exact() {
        let e = toy();
        let p = e.permuted(&[2, 0, 1]).unwrap();
        let rec = NoiseRecord::new(8, 4, 20, vec![2]);
        let a = e.generate(&WeightVector::uniform(3), &rec).unwrap();
        let b = p.generate(&WeightVector::uniform(3), &rec).unwrap();
        assert_eq!(a.sample, b.sample);
        let w = [0.5, 0.2, 0.3];
        let wp = WeightVector(vec![w[2], w[0], w[1]]);
        let a = e.generate(&WeightVector(w.to_vec()), &rec).unwrap();
        let b = p.generate(&wp, &rec).unwrap();
        assert_eq!(a.sample, b.sample);
        // item 0 had code 110 = models {0,1}; after relabeling those are {1,2}.
        assert_eq!(p.codebook().ablation_models(0).unwrap(), vec![1, 2]);
        assert_eq!(
            e.counterfactual(0, &rec).unwrap().sample,
            p.counterfactual(0, &rec).unwrap().sample
        );
    }

    #[test]
    fn member_count_must_match_code_length() {
        let e = toy();
        let members = e.members()[..2].to_vec();
        assert!(EnsembleDenoiser::new(members, e.codebook().clone(), e.schedule().clone()).is_err());
    }
}
