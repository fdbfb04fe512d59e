//! Constant-weight code assignment and the splits, ablation sets and weight
//! vectors derived from it.
//!
//! Model positions are 0-based in the API. Code strings in the manifest are
//! written position-1-first, i.e. character `i` is model `i`.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MAX_CODE_LEN: usize = 64;

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step.
        let num = u128::from(n - i);
        let den = u128::from(i + 1);
        let g = gcd(acc, den);
        let (a, d) = (acc / g, den / g);
        match (a.checked_mul(num / d), num % d == 0) {
            (Some(v), true) => acc = v,
            _ => match acc.checked_mul(num) {
                Some(v) => acc = v / den,
                None => return u128::MAX,
            },
        }
    }
    acc
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// A length-`n` bit vector; bit `i` of the word is model position `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Code(pub u64);

impl Code {
    pub fn weight(self) -> u32 {
        self.0.count_ones()
    }

    pub fn has(self, position: usize) -> bool {
        position < 64 && (self.0 >> position) & 1 == 1
    }

    pub fn positions(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&i| (self.0 >> i) & 1 == 1)
    }

    pub fn to_bit_string(self, n: usize) -> String {
        (0..n).map(|i| if self.has(i) { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(s: &str) -> Result<Self> {
        if s.len() > MAX_CODE_LEN {
            return Err(Error::invalid(format!("code longer than {MAX_CODE_LEN}")));
        }
        let mut bits = 0u64;
        for (i, c) in s.chars().enumerate() {
            match c {
                '1' => bits |= 1 << i,
                '0' => {}
                _ => return Err(Error::invalid(format!("bad code character {c:?}"))),
            }
        }
        Ok(Code(bits))
    }
}

/// Smallest even `n` with `C(n, n/2)` at least `num_groups` (twice that when
/// `doubled`), returned as `(n, n/2)`.
pub fn min_code_params(num_groups: usize, doubled: bool) -> Result<(usize, usize)> {
    if num_groups == 0 {
        return Err(Error::invalid("num_groups must be positive"));
    }
    let need = num_groups as u128 * if doubled { 2 } else { 1 };
    let mut n = 2u64;
    while binomial(n, n / 2) < need {
        n += 2;
    }
    Ok((n as usize, n as usize / 2))
}

/// The `rank`-th weight-`h` subset of `{0..n}` in colexicographic order.
pub fn unrank_combination(mut rank: u128, n: usize, h: usize) -> Code {
    let mut bits = 0u64;
    let mut k = h as u64;
    let mut pos = n as u64;
    while k > 0 {
        // Largest c < pos with C(c, k) <= rank.
        pos -= 1;
        while binomial(pos, k) > rank {
            pos -= 1;
        }
        bits |= 1 << pos;
        rank -= binomial(pos, k);
        k -= 1;
    }
    Code(bits)
}

/// Uniform sample of `amount` distinct ranks in `[0, range)` (Floyd), in
/// uniformly random order.
fn sample_ranks(rng: &mut ChaCha8Rng, range: u128, amount: usize) -> Vec<u128> {
    let mut chosen = HashSet::with_capacity(amount);
    let mut order = Vec::with_capacity(amount);
    for j in (range - amount as u128)..range {
        let r = rng.random_range(0..=j);
        let pick = if chosen.insert(r) { r } else { j };
        if pick == j {
            chosen.insert(j);
        }
        order.push(pick);
    }
    order.shuffle(rng);
    order
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    n: usize,
    h: usize,
    codes: Vec<Code>,
    group_of: Vec<usize>,
    seed: u64,
}

/// Non-negative per-model mixing weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        WeightVector(vec![1.0 / n as f64; n])
    }

    pub fn unit(n: usize, i: usize) -> Self {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        WeightVector(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        if self.0.iter().all(|&w| w == 0.0) {
            return Err(Error::invalid("weights must not all be zero"));
        }
        Ok(())
    }
}

/// Which pair of groups breaks coverage: every model that saw `covered` also
/// saw `ablated`, so ablating `ablated` erases `covered` too.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverageViolation {
    pub ablated: usize,
    pub covered: usize,
}

impl Codebook {
    /// Draws `num_groups` distinct weight-`h` codes uniformly without
    /// replacement; item `j` belongs to group `j`.
    pub fn assign(num_groups: usize, n: usize, h: usize, seed: u64) -> Result<Self> {
        Self::assign_grouped(num_groups, n, h, seed, (0..num_groups).collect())
    }

    /// As [`Codebook::assign`] with an explicit item → group map.
    pub fn assign_grouped(
        num_groups: usize,
        n: usize,
        h: usize,
        seed: u64,
        group_of: Vec<usize>,
    ) -> Result<Self> {
        if n == 0 || n > MAX_CODE_LEN || h > n {
            return Err(Error::invalid(format!("unsupported code shape n={n}, h={h}")));
        }
        let capacity = binomial(n as u64, h as u64);
        if capacity < num_groups as u128 {
            return Err(Error::Capacity {
                n,
                h,
                capacity,
                required: num_groups as u128,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes = sample_ranks(&mut rng, capacity, num_groups)
            .into_iter()
            .map(|r| unrank_combination(r, n, h))
            .collect();
        Self::from_codes(n, h, codes, group_of, seed)
    }

    /// Validating constructor.
    pub fn from_codes(
        n: usize,
        h: usize,
        codes: Vec<Code>,
        group_of: Vec<usize>,
        seed: u64,
    ) -> Result<Self> {
        if n == 0 || n > MAX_CODE_LEN {
            return Err(Error::invalid(format!("code length {n} unsupported")));
        }
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let mut seen = HashSet::with_capacity(codes.len());
        for (g, code) in codes.iter().enumerate() {
            if code.0 & !mask != 0 || code.weight() as usize != h {
                return Err(Error::invalid(format!(
                    "group {g} code is not length {n} weight {h}"
                )));
            }
            if !seen.insert(*code) {
                return Err(Error::invalid(format!("group {g} repeats a code")));
            }
        }
        if let Some(&g) = group_of.iter().find(|&&g| g >= codes.len()) {
            return Err(Error::IndexOutOfRange {
                index: g,
                len: codes.len(),
            });
        }
        Ok(Self::from_codes_unchecked(n, h, codes, group_of, seed))
    }

    /// Skips invariant checks; used to build adversarial books in tests.
    pub fn from_codes_unchecked(
        n: usize,
        h: usize,
        codes: Vec<Code>,
        group_of: Vec<usize>,
        seed: u64,
    ) -> Self {
        Codebook {
            n,
            h,
            codes,
            group_of,
            seed,
        }
    }

    /// Walsh class codes with items grouped by label.
    pub fn walsh_classes(labels: &[usize]) -> Result<Self> {
        Self::from_codes(7, 3, walsh_class_codes(), labels.to_vec(), 0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn codes(&self) -> &[Code] {
        &self.codes
    }

    pub fn num_groups(&self) -> usize {
        self.codes.len()
    }

    pub fn num_items(&self) -> usize {
        self.group_of.len()
    }

    pub fn group_map(&self) -> &[usize] {
        &self.group_of
    }

    pub fn group_of(&self, item: usize) -> Result<usize> {
        self.group_of
            .get(item)
            .copied()
            .ok_or(Error::IndexOutOfRange {
                index: item,
                len: self.group_of.len(),
            })
    }

    pub fn items_of(&self, group: usize) -> Vec<usize> {
        self.group_of
            .iter()
            .enumerate()
            .filter(|&(_, &g)| g == group)
            .map(|(j, _)| j)
            .collect()
    }

    fn group_code(&self, group: usize) -> Result<Code> {
        self.codes
            .get(group)
            .copied()
            .ok_or(Error::IndexOutOfRange {
                index: group,
                len: self.codes.len(),
            })
    }

    /// Item indices in each of the `n` training splits.
    pub fn splits(&self) -> Vec<Vec<usize>> {
        let mut splits = vec![Vec::new(); self.n];
        for (item, &g) in self.group_of.iter().enumerate() {
            for pos in self.codes[g].positions() {
                splits[pos].push(item);
            }
        }
        splits
    }

    /// Models trained on `item`.
    pub fn ablation_models(&self, item: usize) -> Result<Vec<usize>> {
        self.group_ablation_models(self.group_of(item)?)
    }

    pub fn group_ablation_models(&self, group: usize) -> Result<Vec<usize>> {
        Ok(self.group_code(group)?.positions().collect())
    }

    /// Uniform weights for `None`; otherwise zero on the item's models and
    /// `1/(n-h)` on the survivors.
    pub fn weight_vector(&self, item: Option<usize>) -> Result<WeightVector> {
        match item {
            None => Ok(WeightVector::uniform(self.n)),
            Some(item) => self.group_weight_vector(self.group_of(item)?),
        }
    }

    pub fn group_weight_vector(&self, group: usize) -> Result<WeightVector> {
        let code = self.group_code(group)?;
        let survivors = self.n - code.weight() as usize;
        if survivors == 0 {
            return Err(Error::Degenerate(format!(
                "group {group} was seen by every model"
            )));
        }
        let w = 1.0 / survivors as f64;
        Ok(WeightVector(
            (0..self.n)
                .map(|i| if code.has(i) { 0.0 } else { w })
                .collect(),
        ))
    }

    /// Checks that for every ordered pair of distinct groups `(g, g')`, some
    /// model saw `g'` but not `g`.
    pub fn verify_coverage(&self) -> (bool, Option<CoverageViolation>) {
        for (g, &cg) in self.codes.iter().enumerate() {
            for (g2, &cg2) in self.codes.iter().enumerate() {
                if g != g2 && cg2.0 & !cg.0 == 0 {
                    return (
                        false,
                        Some(CoverageViolation {
                            ablated: g,
                            covered: g2,
                        }),
                    );
                }
            }
        }
        (true, None)
    }

    pub fn to_manifest(&self) -> CodebookManifest {
        CodebookManifest {
            version: MANIFEST_VERSION,
            n: self.n,
            h: self.h,
            seed: self.seed,
            groups: self
                .codes
                .iter()
                .enumerate()
                .map(|(g, code)| GroupEntry {
                    group_id: g,
                    code: code.to_bit_string(self.n),
                    item_indices: self.items_of(g),
                })
                .collect(),
        }
    }

    pub fn from_manifest(m: &CodebookManifest) -> Result<Self> {
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("codebook version {}", m.version)));
        }
        let mut codes = vec![Code(0); m.groups.len()];
        let mut group_of: Vec<Option<usize>> = Vec::new();
        for entry in &m.groups {
            if entry.group_id >= m.groups.len() || entry.code.len() != m.n {
                return Err(Error::Format(format!("bad group entry {}", entry.group_id)));
            }
            codes[entry.group_id] = Code::from_bit_string(&entry.code)?;
            for &item in &entry.item_indices {
                if item >= group_of.len() {
                    group_of.resize(item + 1, None);
                }
                if group_of[item].replace(entry.group_id).is_some() {
                    return Err(Error::Format(format!("item {item} in two groups")));
                }
            }
        }
        let group_of = group_of
            .into_iter()
            .enumerate()
            .map(|(j, g)| g.ok_or_else(|| Error::Format(format!("item {j} has no group"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_codes(m.n, m.h, codes, group_of, m.seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_manifest()).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_manifest(&serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookManifest {
    pub version: u32,
    pub n: usize,
    pub h: usize,
    pub seed: u64,
    pub groups: Vec<GroupEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub group_id: usize,
    /// Bit string, position 1 first.
    pub code: String,
    pub item_indices: Vec<usize>,
}

/// The 7 weight-3 codes of length 7 read off the order-8 Sylvester–Walsh
/// matrix: map -1 to 0 and drop the all-ones row and column. Any two share
/// exactly one 1-position.
pub fn walsh_class_codes() -> Vec<Code> {
    (1u32..8)
        .map(|row| {
            let bits = (1u32..8)
                .filter(|&col| (row & col).count_ones() % 2 == 0)
                .fold(0u64, |acc, col| acc | 1 << (col - 1));
            Code(bits)
        })
        .collect()
}
