//! Per-class sample counts and class priors for long-tailed splits.
//!
//! Counts follow the exponential profile `c_k = head * gamma^(-(k-1)/(K-1))`,
//! rounded half-up and clamped to at least one sample, and are then laid out
//! according to a [`Pattern`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum(probs) == 1` for a valid prior.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Floor applied to prior entries before they enter a logarithm.
pub const PRIOR_FLOOR: f64 = 1e-8;

/// Layout of the class counts across class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// Descending counts, class 0 is the head.
    Consistent,
    /// Every class gets `head_count` samples.
    Uniform,
    /// Ascending counts, the consistent layout reversed.
    Reversed,
    /// Largest counts at the center indices, alternating outward.
    Middle,
    /// Largest counts at both ends, alternating inward.
    HeadTail,
}

impl Pattern {
    pub const ALL: [Pattern; 5] = [
        Pattern::Consistent,
        Pattern::Uniform,
        Pattern::Reversed,
        Pattern::Middle,
        Pattern::HeadTail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Consistent => "consistent",
            Pattern::Uniform => "uniform",
            Pattern::Reversed => "reversed",
            Pattern::Middle => "middle",
            Pattern::HeadTail => "head_tail",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceProfile {
    pub k: usize,
    pub head_count: u64,
    pub gamma: f64,
    pub pattern: Pattern,
}

impl ImbalanceProfile {
    pub fn new(k: usize, head_count: u64, gamma: f64, pattern: Pattern) -> Result<Self> {
        let profile = Self {
            k,
            head_count,
            gamma,
            pattern,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("k", format!("need at least 2 classes, got {}", self.k)));
        }
        if self.head_count < 1 {
            return Err(Error::invalid("head_count", "must be at least 1"));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(
                "gamma",
                format!("must be a finite positive ratio, got {}", self.gamma),
            ));
        }
        Ok(())
    }

    /// Imbalance ratio actually applied: 1 for the uniform pattern.
    pub fn effective_gamma(&self) -> f64 {
        match self.pattern {
            Pattern::Uniform => 1.0,
            _ => self.gamma,
        }
    }
}

/// Unrounded exponential weights `gamma^(-(k-1)/(K-1))` for `k = 1..=K`.
fn exponential_weights(k: usize, gamma: f64) -> Vec<f64> {
    let span = (k - 1) as f64;
    (0..k).map(|i| gamma.powf(-(i as f64) / span)).collect()
}

fn round_half_up(x: f64) -> u64 {
    (x + 0.5).floor() as u64
}

/// Index order (0-based) in which sorted-descending counts are placed.
fn placement_order(k: usize, pattern: Pattern) -> Vec<usize> {
    match pattern {
        Pattern::Consistent | Pattern::Uniform => (0..k).collect(),
        Pattern::Reversed => (0..k).rev().collect(),
        Pattern::Middle => {
            // 1-based center ceil(K/2), then right, left, right, ...
            let center = k.div_ceil(2) - 1;
            let mut order = vec![center];
            let mut step = 1;
            while order.len() < k {
                if center + step < k {
                    order.push(center + step);
                }
                if order.len() < k && step <= center {
                    order.push(center - step);
                }
                step += 1;
            }
            order
        }
        Pattern::HeadTail => {
            let (mut lo, mut hi) = (0usize, k - 1);
            let mut order = Vec::with_capacity(k);
            while order.len() < k {
                order.push(lo);
                if order.len() < k {
                    order.push(hi);
                }
                lo += 1;
                hi = hi.saturating_sub(1);
            }
            order
        }
    }
}

fn apply_pattern<T: Copy + PartialOrd>(base: &[T], pattern: Pattern) -> Vec<T> {
    let k = base.len();
    match pattern {
        Pattern::Consistent | Pattern::Uniform => base.to_vec(),
        Pattern::Reversed => base.iter().rev().copied().collect(),
        Pattern::Middle | Pattern::HeadTail => {
            let mut sorted = base.to_vec();
            sorted.sort_by(|a, b| b.partial_cmp(a).expect("counts are comparable"));
            let mut out = sorted.clone();
            for (value, idx) in sorted.into_iter().zip(placement_order(k, pattern)) {
                out[idx] = value;
            }
            out
        }
    }
}

/// Per-class sample counts for a profile.
pub fn class_counts(profile: &ImbalanceProfile) -> Result<Vec<u64>> {
    profile.validate()?;
    if profile.pattern == Pattern::Uniform {
        return Ok(vec![profile.head_count; profile.k]);
    }
    let base: Vec<u64> = exponential_weights(profile.k, profile.gamma)
        .into_iter()
        .map(|w| round_half_up(profile.head_count as f64 * w).max(1))
        .collect();
    Ok(apply_pattern(&base, profile.pattern))
}

/// A probability vector over `K` classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassPrior(Vec<f64>);

impl TryFrom<Vec<f64>> for ClassPrior {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        ClassPrior::new(probs)
    }
}

impl From<ClassPrior> for Vec<f64> {
    fn from(p: ClassPrior) -> Self {
        p.0
    }
}

impl ClassPrior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("prior", "empty probability vector"));
        }
        if let Some(i) = probs.iter().position(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid(
                "prior",
                format!("entry {i} is {} (must be finite and >= 0)", probs[i]),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid("prior", format!("entries sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// Normalizes nonnegative weights onto the simplex.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid(
                "weights",
                format!("entry {i} is {} (must be finite and >= 0)", weights[i]),
            ));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights", "all weights are zero"));
        }
        Ok(Self(weights.iter().map(|w| w / total).collect()))
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn reversed(&self) -> Self {
        Self(self.0.iter().rev().copied().collect())
    }

    /// Floors every entry at `floor` and renormalizes.
    pub fn floored(&self, floor: f64) -> Self {
        let w: Vec<f64> = self.0.iter().map(|p| p.max(floor)).collect();
        let total: f64 = w.iter().sum();
        Self(w.into_iter().map(|p| p / total).collect())
    }

    /// Element-wise logarithm. Fails on a zero entry.
    pub fn ln(&self) -> Result<Vec<f64>> {
        self.0
            .iter()
            .enumerate()
            .map(|(class, &p)| {
                if p > 0.0 {
                    Ok(p.ln())
                } else {
                    Err(Error::ZeroPrior { class })
                }
            })
            .collect()
    }

    pub fn l1_distance(&self, other: &ClassPrior) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn prior_from_counts(counts: &[u64]) -> Result<ClassPrior> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("counts", "all counts are zero"));
    }
    ClassPrior::from_weights(&counts.iter().map(|&c| c as f64).collect::<Vec<_>>())
}

/// The consistent, uniform and reversed anchor priors used by the anchor-snap variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub consistent: ClassPrior,
    pub uniform: ClassPrior,
    pub reversed: ClassPrior,
}

impl AnchorSet {
    /// Anchors in tie-break order.
    pub fn as_array(&self) -> [&ClassPrior; 3] {
        [&self.consistent, &self.uniform, &self.reversed]
    }
}

/// Anchor priors for `k` classes at ratio `gamma`, from the unrounded exponential profile.
pub fn anchor_priors(k: usize, gamma: f64) -> Result<AnchorSet> {
    ImbalanceProfile::new(k, 1, gamma, Pattern::Consistent)?;
    let consistent = ClassPrior::from_weights(&exponential_weights(k, gamma))?;
    Ok(AnchorSet {
        reversed: consistent.reversed(),
        uniform: ClassPrior::uniform(k),
        consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(k: usize, head: u64, gamma: f64, pattern: Pattern) -> ImbalanceProfile {
        ImbalanceProfile::new(k, head, gamma, pattern).unwrap()
    }

    #[test]
    fn cifar_style_endpoints() {
        let c = class_counts(&profile(10, 500, 100.0, Pattern::Consistent)).unwrap();
        assert_eq!(c[0], 500);
        assert_eq!(c[9], 5);
        // 500 * 100^(-1/9) = 299.74...
        assert_eq!(c[1], 300);
    }

    #[test]
    fn gamma_one_is_flat() {
        let c = class_counts(&profile(3, 8, 1.0, Pattern::Consistent)).unwrap();
        assert_eq!(c, vec![8, 8, 8]);
    }

    #[test]
    fn uniform_uses_head_count() {
        let p = profile(4, 7, 50.0, Pattern::Uniform);
        assert_eq!(class_counts(&p).unwrap(), vec![7; 4]);
        assert_eq!(p.effective_gamma(), 1.0);
    }

    #[test]
    fn rejects_bad_profiles() {
        assert!(ImbalanceProfile::new(1, 10, 2.0, Pattern::Consistent).is_err());
        assert!(ImbalanceProfile::new(3, 0, 2.0, Pattern::Consistent).is_err());
        assert!(ImbalanceProfile::new(3, 10, 0.0, Pattern::Consistent).is_err());
        assert!(ImbalanceProfile::new(3, 10, -1.0, Pattern::Consistent).is_err());
        assert!(ImbalanceProfile::new(3, 10, f64::NAN, Pattern::Consistent).is_err());
    }

    #[test]
    fn tiny_tail_clamps_to_one() {
        let c = class_counts(&profile(5, 2, 1000.0, Pattern::Consistent)).unwrap();
        assert!(c.iter().all(|&x| x >= 1));
        assert_eq!(c[4], 1);
    }

    #[test]
    fn middle_and_head_tail_layouts() {
        let base = class_counts(&profile(5, 16, 16.0, Pattern::Consistent)).unwrap();
        assert_eq!(base, vec![16, 8, 4, 2, 1]);
        // center 3 (1-based), then 4, 2, 5, 1
        let middle = class_counts(&profile(5, 16, 16.0, Pattern::Middle)).unwrap();
        assert_eq!(middle, vec![1, 4, 16, 8, 2]);
        // positions 1, 5, 2, 4, 3
        let ht = class_counts(&profile(5, 16, 16.0, Pattern::HeadTail)).unwrap();
        assert_eq!(ht, vec![16, 4, 1, 2, 8]);

        let middle4 = class_counts(&profile(4, 8, 8.0, Pattern::Middle)).unwrap();
        assert_eq!(middle4, vec![2, 8, 4, 1]);
    }

    #[test]
    fn prior_from_counts_examples() {
        assert_eq!(prior_from_counts(&[5, 5]).unwrap().probs(), &[0.5, 0.5]);
        assert_eq!(prior_from_counts(&[3, 1]).unwrap().probs(), &[0.75, 0.25]);
        assert!(prior_from_counts(&[0, 0]).is_err());
    }

    #[test]
    fn prior_matches_normalized_formula() {
        let counts = class_counts(&profile(10, 500, 100.0, Pattern::Consistent)).unwrap();
        // Independent recomputation of the rounded counts.
        let expected: Vec<f64> = (0..10)
            .map(|i| (500.0 * 100f64.powf(-(i as f64) / 9.0) + 0.5).floor())
            .collect();
        let total: f64 = expected.iter().sum();
        let prior = prior_from_counts(&counts).unwrap();
        for (p, e) in prior.probs().iter().zip(&expected) {
            assert!((p - e / total).abs() < 1e-9);
        }
    }

    #[test]
    fn anchor_examples() {
        let a = anchor_priors(2, 1.0).unwrap();
        for p in a.as_array() {
            assert_eq!(p.probs(), &[0.5, 0.5]);
        }
        let a = anchor_priors(2, 3.0).unwrap();
        assert!((a.consistent.probs()[0] - 0.75).abs() < 1e-12);
        assert!((a.reversed.probs()[1] - 0.75).abs() < 1e-12);
        let a = anchor_priors(10, 150.0).unwrap();
        let rev: Vec<f64> = a.consistent.probs().iter().rev().copied().collect();
        assert_eq!(a.reversed.probs(), rev.as_slice());
        assert!(anchor_priors(1, 2.0).is_err());
    }

    #[test]
    fn prior_validation() {
        assert!(ClassPrior::new(vec![0.5, 0.6]).is_err());
        assert!(ClassPrior::new(vec![-0.1, 1.1]).is_err());
        assert!(ClassPrior::new(vec![]).is_err());
        assert!(ClassPrior::new(vec![0.25, 0.75]).is_ok());
        assert!(ClassPrior::new(vec![1.0, 0.0]).unwrap().ln().is_err());
        let f = ClassPrior::new(vec![1.0, 0.0]).unwrap().floored(PRIOR_FLOOR);
        assert!(f.probs()[1] > 0.0);
    }

    fn arb_profile() -> impl Strategy<Value = ImbalanceProfile> {
        (2usize..12, 1u64..2000, 1.0f64..200.0, 0usize..5).prop_map(|(k, h, g, p)| {
            ImbalanceProfile::new(k, h, g, Pattern::ALL[p]).unwrap()
        })
    }

    fn sorted(mut v: Vec<u64>) -> Vec<u64> {
        v.sort_unstable();
        v
    }

    proptest! {
        #[test]
        fn counts_shape_and_ratio(p in arb_profile()) {
            let c = class_counts(&p).unwrap();
            prop_assert_eq!(c.len(), p.k);
            prop_assert!(c.iter().all(|&x| x >= 1));
            let max = *c.iter().max().unwrap() as f64;
            let min = *c.iter().min().unwrap() as f64;
            let g = p.effective_gamma();
            let tail = p.head_count as f64 / g;
            if tail >= 1.0 {
                // Rounding moves the tail count by at most 0.5.
                prop_assert!(max / (min + 0.5) <= g + 1e-9 && g <= max / (min - 0.5).max(0.5) + 1e-9);
            }
        }

        #[test]
        fn layouts_are_permutations(k in 2usize..12, h in 1u64..2000, g in 1.0f64..200.0) {
            let consistent = class_counts(&ImbalanceProfile::new(k, h, g, Pattern::Consistent).unwrap()).unwrap();
            for pat in [Pattern::Middle, Pattern::HeadTail, Pattern::Reversed] {
                let other = class_counts(&ImbalanceProfile::new(k, h, g, pat).unwrap()).unwrap();
                prop_assert_eq!(sorted(other.clone()), sorted(consistent.clone()));
            }
            let rev = class_counts(&ImbalanceProfile::new(k, h, g, Pattern::Reversed).unwrap()).unwrap();
            let mut expect = consistent.clone();
            expect.reverse();
            prop_assert_eq!(rev, expect);
        }

        #[test]
        fn priors_are_on_simplex(counts in proptest::collection::vec(0u64..1000, 2..10)) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let p = prior_from_counts(&counts).unwrap();
            let total: f64 = p.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < SIMPLEX_TOL);
            prop_assert!(p.probs().iter().all(|&x| x >= 0.0));
        }
    }
}
