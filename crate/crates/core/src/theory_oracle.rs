//! Exact-enumeration checks of the encoded ensemble's guarantees.
//!
//! Training is abstracted into an [`AbstractTrainer`]; every expectation is
//! computed by enumerating subsets, code assignments and a finite noise
//! support, so the measured bias is exact up to the final floating-point
//! weighting. The reference denoiser averages over *all* subsets of the data,
//! the empty set included.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::codebook::binomial;
use crate::error::{Error, Result};

/// Largest dataset for which `2^|X|` subsets are enumerated.
pub const MAX_ITEMS: usize = 12;
/// Largest number of ordered code assignments enumerated.
pub const MAX_ASSIGNMENTS: u128 = 2_000_000;
/// Largest ground set for the balanced-system search.
pub const MAX_GROUND: usize = 4;

/// A training procedure `(subset, noise) → params` paired with an evaluation
/// whose every coordinate lies in `[-bound, bound]`.
pub trait AbstractTrainer {
    type Params;

    fn train(&self, dataset: &[Vec<f64>], subset: &[usize], noise: u64) -> Self::Params;

    fn evaluate(&self, probe: &[f64], params: &Self::Params) -> Vec<f64>;

    fn bound(&self) -> f64;

    /// Finite support of the training noise, averaged uniformly.
    fn noise_support(&self) -> Vec<u64> {
        vec![0]
    }
}

/// Ignores its training subset.
#[derive(Debug, Clone)]
pub struct ConstantTrainer {
    pub value: Vec<f64>,
}

impl AbstractTrainer for ConstantTrainer {
    type Params = ();

    fn train(&self, _: &[Vec<f64>], _: &[usize], _: u64) {}

    fn evaluate(&self, _: &[f64], _: &()) -> Vec<f64> {
        self.value.clone()
    }

    fn bound(&self) -> f64 {
        self.value.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Mean of the first feature over the subset (`empty_value` for ∅), clamped.
#[derive(Debug, Clone)]
pub struct SubsetMeanTrainer {
    pub clamp: f64,
    pub empty_value: f64,
}

impl AbstractTrainer for SubsetMeanTrainer {
    type Params = f64;

    fn train(&self, dataset: &[Vec<f64>], subset: &[usize], _: u64) -> f64 {
        if subset.is_empty() {
            return self.empty_value;
        }
        subset.iter().map(|&i| dataset[i][0]).sum::<f64>() / subset.len() as f64
    }

    fn evaluate(&self, _: &[f64], params: &f64) -> Vec<f64> {
        vec![params.clamp(-self.clamp, self.clamp)]
    }

    fn bound(&self) -> f64 {
        self.clamp
    }
}

/// Pseudo-random response per `(subset, noise, probe)` in `[-clamp, clamp]`:
/// an arbitrary, highly non-linear function of the training subset.
#[derive(Debug, Clone)]
pub struct HashTableTrainer {
    pub seed: u64,
    pub dim: usize,
    pub clamp: f64,
    pub noise_levels: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl AbstractTrainer for HashTableTrainer {
    type Params = u64;

    fn train(&self, _: &[Vec<f64>], subset: &[usize], noise: u64) -> u64 {
        let mask = subset.iter().fold(0u64, |m, &i| m | 1 << i);
        splitmix(self.seed ^ splitmix(mask ^ splitmix(noise.wrapping_add(1))))
    }

    fn evaluate(&self, probe: &[f64], params: &u64) -> Vec<f64> {
        let salt = probe
            .iter()
            .fold(*params, |h, v| splitmix(h ^ v.to_bits()));
        (0..self.dim as u64)
            .map(|j| {
                let u = (splitmix(salt ^ j) >> 11) as f64 / (1u64 << 53) as f64;
                self.clamp * (2.0 * u - 1.0)
            })
            .collect()
    }

    fn bound(&self) -> f64 {
        self.clamp
    }

    fn noise_support(&self) -> Vec<u64> {
        (0..self.noise_levels.max(1)).collect()
    }
}

fn check_dataset(dataset: &[Vec<f64>]) -> Result<()> {
    if dataset.len() > MAX_ITEMS {
        return Err(Error::TooLarge(format!(
            "{} items exceeds the {MAX_ITEMS}-item enumeration cap",
            dataset.len()
        )));
    }
    Ok(())
}

fn mask_items(mask: u64, k: usize) -> Vec<usize> {
    (0..k).filter(|&i| (mask >> i) & 1 == 1).collect()
}

/// Noise-averaged evaluation for the subset encoded by `mask`.
fn mean_evaluation<T: AbstractTrainer>(
    trainer: &T,
    dataset: &[Vec<f64>],
    mask: u64,
    probe: &[f64],
) -> Vec<f64> {
    let subset = mask_items(mask, dataset.len());
    let support = trainer.noise_support();
    let mut acc: Vec<f64> = Vec::new();
    for &r in &support {
        let params = trainer.train(dataset, &subset, r);
        let out = trainer.evaluate(probe, &params);
        if acc.is_empty() {
            acc = vec![0.0; out.len()];
        }
        acc.iter_mut().zip(&out).for_each(|(a, v)| *a += v);
    }
    acc.iter_mut().for_each(|a| *a /= support.len() as f64);
    acc
}

fn average_over_masks<T: AbstractTrainer>(
    trainer: &T,
    dataset: &[Vec<f64>],
    probe: &[f64],
    keep: impl Fn(u64) -> bool,
) -> Vec<f64> {
    let k = dataset.len();
    let mut acc: Vec<f64> = Vec::new();
    let mut count = 0u64;
    for mask in (0..1u64 << k).filter(|&m| keep(m)) {
        let v = mean_evaluation(trainer, dataset, mask, probe);
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
        count += 1;
    }
    acc.iter_mut().for_each(|a| *a /= count as f64);
    acc
}

/// Average of the trainer's output over every subset of `dataset`.
pub fn exact_f_e<T: AbstractTrainer>(
    trainer: &T,
    dataset: &[Vec<f64>],
    probe: &[f64],
) -> Result<Vec<f64>> {
    check_dataset(dataset)?;
    Ok(average_over_masks(trainer, dataset, probe, |_| true))
}

/// Average over every subset that omits `excluded`.
pub fn exact_f_e_ablated<T: AbstractTrainer>(
    trainer: &T,
    dataset: &[Vec<f64>],
    excluded: usize,
    probe: &[f64],
) -> Result<Vec<f64>> {
    check_dataset(dataset)?;
    if excluded >= dataset.len() {
        return Err(Error::IndexOutOfRange {
            index: excluded,
            len: dataset.len(),
        });
    }
    Ok(average_over_masks(trainer, dataset, probe, |m| {
        (m >> excluded) & 1 == 0
    }))
}

/// Measured bias of the encoded ensemble against the exact reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasReport {
    /// Signed per-coordinate difference `E[ensemble] − reference`.
    pub difference: Vec<f64>,
    /// `‖difference‖∞`.
    pub bias: f64,
    pub bound: f64,
    pub assignments: u128,
}

/// Every ordered assignment of distinct weight-`h` codes to `k` items.
fn for_each_assignment(n: usize, h: usize, k: usize, mut visit: impl FnMut(&[u64])) {
    let codes: Vec<u64> = (0u64..1 << n)
        .filter(|c| c.count_ones() as usize == h)
        .collect();
    let mut used = vec![false; codes.len()];
    let mut current = Vec::with_capacity(k);
    fn recurse(
        codes: &[u64],
        used: &mut [bool],
        current: &mut Vec<u64>,
        k: usize,
        visit: &mut dyn FnMut(&[u64]),
    ) {
        if current.len() == k {
            visit(current);
            return;
        }
        for i in 0..codes.len() {
            if !used[i] {
                used[i] = true;
                current.push(codes[i]);
                recurse(codes, used, current, k, visit);
                current.pop();
                used[i] = false;
            }
        }
    }
    recurse(&codes, &mut used, &mut current, k, &mut visit);
}

/// Items whose code has a 1 at `position`, as a subset mask.
fn split_mask(assignment: &[u64], position: usize) -> u64 {
    assignment
        .iter()
        .enumerate()
        .filter(|(_, &c)| (c >> position) & 1 == 1)
        .fold(0u64, |m, (j, _)| m | 1 << j)
}

fn check_theorem_preconditions(n: usize, h: usize, k: usize) -> Result<u128> {
    if n != 2 * h || n == 0 || n > 20 {
        return Err(Error::invalid(format!("need n = 2h (1 <= h <= 10), got n={n}, h={h}")));
    }
    let capacity = binomial(n as u64, h as u64);
    if capacity < 2 * k as u128 {
        return Err(Error::Capacity {
            n,
            h,
            capacity,
            required: 2 * k as u128,
        });
    }
    let assignments = (0..k as u128).map(|i| capacity - i).product::<u128>();
    if assignments > MAX_ASSIGNMENTS {
        return Err(Error::TooLarge(format!("{assignments} code assignments")));
    }
    Ok(assignments)
}

/// `Σ_S numerators[S] · value(S) / denominator`, grouping subsets whose
/// evaluations are bit-identical so exactly cancelling weights give exactly 0.
fn weighted_difference(
    evaluations: &[Vec<f64>],
    numerators: &[i128],
    denominator: i128,
) -> Vec<f64> {
    let dim = evaluations.iter().map(Vec::len).max().unwrap_or(0);
    (0..dim)
        .map(|j| {
            let mut grouped: HashMap<u64, i128> = HashMap::new();
            for (eval, &num) in evaluations.iter().zip(numerators) {
                if num != 0 {
                    *grouped.entry(eval[j].to_bits()).or_default() += num;
                }
            }
            let mut keys: Vec<_> = grouped.into_iter().filter(|&(_, w)| w != 0).collect();
            keys.sort_unstable();
            keys.iter()
                .map(|&(bits, w)| f64::from_bits(bits) * w as f64)
                .sum::<f64>()
                / denominator as f64
        })
        .collect()
}

fn finish(difference: Vec<f64>, bound: f64, assignments: u128) -> Result<BiasReport> {
    let bias = difference.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if bias > bound {
        return Err(Error::BoundViolated(format!("bias {bias} exceeds bound {bound}")));
    }
    Ok(BiasReport {
        difference,
        bias,
        bound,
        assignments,
    })
}

/// Exact expected bias of the `n`-model encoded ensemble over uniformly random
/// code assignments, with bound `ln(16)(|X|−1)²·C / C(n,h)`.
pub fn exact_encoded_bias<T: AbstractTrainer>(
    trainer: &T,
    dataset: &[Vec<f64>],
    n: usize,
    h: usize,
    probe: &[f64],
) -> Result<BiasReport> {
    check_dataset(dataset)?;
    let k = dataset.len();
    let assignments = check_theorem_preconditions(n, h, k)?;
    let subsets = 1usize << k;
    let mut counts = vec![0i128; subsets];
    for_each_assignment(n, h, k, |a| {
        for i in 0..n {
            counts[split_mask(a, i) as usize] += 1;
        }
    });
    // ensemble weight count/(A·n) against reference weight 1/2^k
    let total = assignments as i128 * n as i128;
    let numerators: Vec<i128> = counts.iter().map(|&c| c * subsets as i128 - total).collect();
    let evaluations: Vec<Vec<f64>> = (0..subsets as u64)
        .map(|m| mean_evaluation(trainer, dataset, m, probe))
        .collect();
    let difference = weighted_difference(&evaluations, &numerators, total * subsets as i128);
    let capacity = binomial(n as u64, h as u64) as f64;
    let bound = 16f64.ln() * ((k - 1) as f64).powi(2) * trainer.bound() / capacity;
    finish(difference, bound, assignments)
}

/// Exact expected bias of the ablated ensemble (models that saw `excluded`
/// dropped, survivors averaged) against the reference over `X ∖ {excluded}`,
/// with bound `ln(16)|X|²·C / C(n,h)`.
pub fn exact_ablated_bias<T: AbstractTrainer>(
    trainer: &T,
    dataset: &[Vec<f64>],
    excluded: usize,
    n: usize,
    h: usize,
    probe: &[f64],
) -> Result<BiasReport> {
    check_dataset(dataset)?;
    let k = dataset.len();
    if excluded >= k {
        return Err(Error::IndexOutOfRange {
            index: excluded,
            len: k,
        });
    }
    let assignments = check_theorem_preconditions(n, h, k)?;
    let subsets = 1usize << k;
    let mut counts = vec![0i128; subsets];
    for_each_assignment(n, h, k, |a| {
        let excluded_code = a[excluded];
        for i in (0..n).filter(|&i| (excluded_code >> i) & 1 == 0) {
            counts[split_mask(a, i) as usize] += 1;
        }
    });
    let survivors = (n - h) as i128;
    let total = assignments as i128 * survivors;
    let reference = 1i128 << (k - 1);
    let numerators: Vec<i128> = counts
        .iter()
        .enumerate()
        .map(|(m, &c)| {
            if (m >> excluded) & 1 == 1 {
                0
            } else {
                c * reference - total
            }
        })
        .collect();
    let evaluations: Vec<Vec<f64>> = (0..subsets as u64)
        .map(|m| mean_evaluation(trainer, dataset, m, probe))
        .collect();
    let difference = weighted_difference(&evaluations, &numerators, total * reference);
    let capacity = binomial(n as u64, h as u64) as f64;
    let bound = 16f64.ln() * (k as f64).powi(2) * trainer.bound() / capacity;
    finish(difference, bound, assignments)
}

/// Probability that `num_items` draws with replacement from the `C(n,h)`
/// weight-`h` codes collide, and the bound `ln(4)(|X|−1)²/C(n,h)`.
pub fn collision_probability(n: usize, h: usize, num_items: usize) -> Result<(f64, f64)> {
    let capacity = binomial(n as u64, h as u64);
    if capacity < 2 * num_items as u128 {
        return Err(Error::Capacity {
            n,
            h,
            capacity,
            required: 2 * num_items as u128,
        });
    }
    let cap = capacity as f64;
    // ln( N! / ((N-m)! N^m) ) = Σ_{i<m} ln(1 - i/N)
    let log_no_collision: f64 = (0..num_items).map(|i| (-(i as f64) / cap).ln_1p()).sum();
    let exact = -log_no_collision.exp_m1();
    let bound = 4f64.ln() * (num_items.saturating_sub(1) as f64).powi(2) / cap;
    if exact > bound {
        return Err(Error::BoundViolated(format!(
            "collision probability {exact} exceeds bound {bound}"
        )));
    }
    Ok((exact, bound))
}

/// A family of non-empty subsets of `{0..ground_size}`, each a bitmask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetSystem {
    pub ground_size: usize,
    pub members: Vec<u32>,
}

impl SetSystem {
    /// `(z1, z2)` when every element lies in exactly `z1` members and every
    /// pair of distinct elements in exactly `z2`; `z2` is 0 without pairs.
    pub fn balance(&self) -> Option<(usize, usize)> {
        let e = self.ground_size;
        let occurrences = |mask: u32| self.members.iter().filter(|&&m| m & mask == mask).count();
        let z1 = if e == 0 { 0 } else { occurrences(1) };
        if (0..e).any(|i| occurrences(1 << i) != z1) {
            return None;
        }
        let mut z2 = None;
        for a in 0..e {
            for b in a + 1..e {
                let c = occurrences(1 << a | 1 << b);
                match z2 {
                    None => z2 = Some(c),
                    Some(z) if z != c => return None,
                    _ => {}
                }
            }
        }
        Some((z1, z2.unwrap_or(0)))
    }
}

/// Every balanced set system over a ground set of at most 4 elements.
/// Fails if any has `2 <= |M| < |E|`.
pub fn enumerate_balanced_systems(ground_size: usize) -> Result<Vec<SetSystem>> {
    if ground_size > MAX_GROUND {
        return Err(Error::TooLarge(format!(
            "ground set {ground_size} exceeds {MAX_GROUND}"
        )));
    }
    let nonempty: Vec<u32> = (1u32..1 << ground_size).collect();
    let mut found = Vec::new();
    for selection in 0u64..1 << nonempty.len() {
        let members: Vec<u32> = nonempty
            .iter()
            .enumerate()
            .filter(|(i, _)| (selection >> i) & 1 == 1)
            .map(|(_, &m)| m)
            .collect();
        let system = SetSystem {
            ground_size,
            members,
        };
        if system.balance().is_some() {
            let size = system.members.len();
            if size >= 2 && size < ground_size {
                return Err(Error::BoundViolated(format!(
                    "balanced system {:?} has {size} members over {ground_size} elements",
                    system.members
                )));
            }
            found.push(system);
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn subset_mean_two_items() {
        let t = SubsetMeanTrainer {
            clamp: 1.0,
            empty_value: 0.0,
        };
        let data = items(&[0.0, 1.0]);
        assert_eq!(exact_f_e(&t, &data, &[]).unwrap(), vec![0.375]);
        assert_eq!(exact_f_e_ablated(&t, &data, 1, &[]).unwrap(), vec![0.0]);
    }

    #[test]
    fn constant_trainer_is_constant() {
        let t = ConstantTrainer {
            value: vec![0.3, -0.7],
        };
        let data = items(&[1.0, 2.0, 3.0]);
        let f = exact_f_e(&t, &data, &[]).unwrap();
        assert!((f[0] - 0.3).abs() < 1e-15 && (f[1] + 0.7).abs() < 1e-15);
        let g = exact_f_e_ablated(&t, &data, 0, &[]).unwrap();
        assert!((g[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn rejects_large_datasets() {
        let t = ConstantTrainer { value: vec![1.0] };
        assert!(matches!(
            exact_f_e(&t, &items(&[0.0; 13]), &[]),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn single_item_bias_is_zero() {
        let t = HashTableTrainer {
            seed: 3,
            dim: 4,
            clamp: 1.0,
            noise_levels: 2,
        };
        let r = exact_encoded_bias(&t, &items(&[0.5]), 2, 1, &[0.1]).unwrap();
        assert_eq!(r.bound, 0.0);
        assert_eq!(r.bias, 0.0);
    }

    #[test]
    fn subset_independent_trainer_has_zero_bias() {
        let t = ConstantTrainer {
            value: vec![0.1, 0.7, -0.3],
        };
        let data = items(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(exact_encoded_bias(&t, &data, 6, 3, &[]).unwrap().bias, 0.0);
        assert_eq!(exact_ablated_bias(&t, &data, 2, 6, 3, &[]).unwrap().bias, 0.0);
    }

    #[test]
    fn two_item_ablated_bias_within_bound() {
        let t = HashTableTrainer {
            seed: 11,
            dim: 3,
            clamp: 1.0,
            noise_levels: 1,
        };
        let r = exact_ablated_bias(&t, &items(&[0.0, 1.0]), 0, 6, 3, &[]).unwrap();
        assert!((r.bound - 16f64.ln() * 4.0 / 20.0).abs() < 1e-12);
        assert!(r.bias <= r.bound);
    }

    #[test]
    fn precondition_violations() {
        let t = ConstantTrainer { value: vec![1.0] };
        let data = items(&[0.0; 4]);
        // n != 2h
        assert!(exact_encoded_bias(&t, &data, 6, 2, &[]).is_err());
        // C(4,2) = 6 < 8
        assert!(exact_encoded_bias(&t, &data, 4, 2, &[]).is_err());
        assert!(exact_ablated_bias(&t, &data, 4, 6, 3, &[]).is_err());
    }

    #[test]
    fn collision_examples() {
        assert_eq!(collision_probability(6, 3, 1).unwrap().0, 0.0);
        let (exact, bound) = collision_probability(6, 3, 4).unwrap();
        assert!((exact - 0.27325).abs() < 1e-12);
        assert!((bound - 4f64.ln() * 9.0 / 20.0).abs() < 1e-15);
        assert!(collision_probability(6, 3, 11).is_err());
    }

    #[test]
    fn balance_examples() {
        let whole = SetSystem {
            ground_size: 3,
            members: vec![0b111],
        };
        assert_eq!(whole.balance(), Some((1, 1)));
        let singletons = SetSystem {
            ground_size: 3,
            members: vec![0b001, 0b010, 0b100],
        };
        assert_eq!(singletons.balance(), Some((1, 0)));
        let lopsided = SetSystem {
            ground_size: 3,
            members: vec![0b001, 0b110],
        };
        assert_eq!(lopsided.balance(), None);
    }

    #[test]
    fn ground_three_has_no_two_member_system() {
        let systems = enumerate_balanced_systems(3).unwrap();
        assert!(systems.iter().all(|s| s.members.len() != 2));
        assert!(systems.iter().any(|s| s.members == vec![0b111]));
        assert!(systems.iter().any(|s| s.members == vec![0b001, 0b010, 0b100]));
        assert!(enumerate_balanced_systems(5).is_err());
    }
}
