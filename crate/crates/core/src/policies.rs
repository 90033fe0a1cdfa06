//! Online hiring policies deciding on ferry offers by delivery delay alone.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::world::BlockProfile;
use crate::Seconds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

impl Decision {
    pub fn is_accept(self) -> bool {
        self == Decision::Accept
    }

    fn from_bool(accept: bool) -> Self {
        if accept {
            Decision::Accept
        } else {
            Decision::Reject
        }
    }
}

/// The four baseline policies. The declaration order is the ensemble's
/// tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKey {
    /// Fixed threshold at the block's low delay percentile.
    Low,
    /// Fixed threshold at the block's high delay percentile.
    High,
    Mean,
    Median,
}

impl PolicyKey {
    pub const ALL: [PolicyKey; 4] = [
        PolicyKey::Low,
        PolicyKey::High,
        PolicyKey::Mean,
        PolicyKey::Median,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKey::Low => "low",
            PolicyKey::High => "high",
            PolicyKey::Mean => "mean",
            PolicyKey::Median => "median",
        }
    }

    /// Fresh state of this policy for a block.
    pub fn fresh(self, profile: &BlockProfile) -> PolicyState {
        match self {
            PolicyKey::Low => PolicyState::fixed_threshold(profile.tau_low),
            PolicyKey::High => PolicyState::fixed_threshold(profile.tau_high),
            PolicyKey::Mean => PolicyState::above_mean(),
            PolicyKey::Median => PolicyState::above_median(),
        }
    }
}

impl fmt::Display for PolicyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKey::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown policy {s:?}"))
    }
}

/// Per-block state of one hiring policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicyState {
    /// Accepts `d <= tau`.
    FixedThreshold { tau: Seconds },
    /// Accepts the first offer, then `d < mean` of accepted delays. The mean
    /// is kept as an exact `sum / accepted` pair.
    AboveMean { accepted: u64, sum: i128 },
    /// Accepts the first offer, then `d < median`. The median is refreshed
    /// only when the accepted count is odd.
    AboveMedian {
        accepted: Vec<Seconds>,
        median: Seconds,
    },
}

impl PolicyState {
    pub fn fixed_threshold(tau: Seconds) -> Self {
        PolicyState::FixedThreshold { tau }
    }

    pub fn above_mean() -> Self {
        PolicyState::AboveMean {
            accepted: 0,
            sum: 0,
        }
    }

    pub fn above_median() -> Self {
        PolicyState::AboveMedian {
            accepted: Vec::new(),
            median: 0,
        }
    }

    /// Decides on an offer with delivery delay `d`, updating the state on
    /// acceptance.
    pub fn decide(&mut self, d: Seconds) -> Decision {
        debug_assert!(d > 0, "delivery delay must be positive");
        match self {
            PolicyState::FixedThreshold { tau } => Decision::from_bool(d <= *tau),
            PolicyState::AboveMean { accepted, sum } => {
                let accept = *accepted == 0 || (d as i128) * (*accepted as i128) < *sum;
                if accept {
                    *accepted += 1;
                    *sum += d as i128;
                }
                Decision::from_bool(accept)
            }
            PolicyState::AboveMedian { accepted, median } => {
                let accept = accepted.is_empty() || d < *median;
                if accept {
                    let at = accepted.partition_point(|&x| x <= d);
                    accepted.insert(at, d);
                    if accepted.len() % 2 == 1 {
                        *median = accepted[accepted.len() / 2];
                    }
                }
                Decision::from_bool(accept)
            }
        }
    }

    pub fn accepted_count(&self) -> Option<u64> {
        match self {
            PolicyState::FixedThreshold { .. } => None,
            PolicyState::AboveMean { accepted, .. } => Some(*accepted),
            PolicyState::AboveMedian { accepted, .. } => Some(accepted.len() as u64),
        }
    }

    /// Current acceptance bar: `tau`, the mean or the median. `None` before
    /// the first acceptance of an adaptive policy.
    pub fn bar(&self) -> Option<f64> {
        match self {
            PolicyState::FixedThreshold { tau } => Some(*tau as f64),
            PolicyState::AboveMean { accepted: 0, .. } => None,
            PolicyState::AboveMean { accepted, sum } => Some(*sum as f64 / *accepted as f64),
            PolicyState::AboveMedian { accepted, .. } if accepted.is_empty() => None,
            PolicyState::AboveMedian { median, .. } => Some(*median as f64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn threshold_is_inclusive() {
        let mut s = PolicyState::fixed_threshold(3000);
        assert_eq!(s.decide(3000), Decision::Accept);
        assert_eq!(s.decide(3001), Decision::Reject);
        assert_eq!(s, PolicyState::fixed_threshold(3000));
    }

    #[test]
    fn mean_examples() {
        let mut s = PolicyState::above_mean();
        assert_eq!(s.decide(600), Decision::Accept);
        assert_eq!(s.bar(), Some(600.0));
        assert_eq!(s.decide(600), Decision::Reject);
        assert_eq!(s.decide(480), Decision::Accept);
        assert_eq!(s.bar(), Some(540.0));
        assert_eq!(s.accepted_count(), Some(2));
    }

    #[test]
    fn median_examples() {
        let mut s = PolicyState::above_median();
        assert_eq!(s.bar(), None);
        assert_eq!(s.decide(600), Decision::Accept);
        assert_eq!(s.bar(), Some(600.0));
        assert_eq!(s.decide(480), Decision::Accept);
        assert_eq!(s.accepted_count(), Some(2));
        assert_eq!(s.bar(), Some(600.0));
        assert_eq!(s.decide(540), Decision::Accept);
        assert_eq!(s.bar(), Some(540.0));
        assert_eq!(s.decide(540), Decision::Reject);
    }

    #[test]
    fn low_percentile_threshold_accepts_about_two_percent() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let delays: Vec<Seconds> = (0..50_000).map(|_| rng.random_range(1..=10_000)).collect();
        let tau = crate::world::percentile_nearest_rank(&delays, 2.0).unwrap();
        let mut s = PolicyState::fixed_threshold(tau);
        let accepted = delays.iter().filter(|&&d| s.decide(d).is_accept()).count();
        let rate = accepted as f64 / delays.len() as f64;
        assert!((rate - 0.02).abs() < 0.002, "rate {rate}");
    }

    #[test]
    fn keys_parse() {
        for k in PolicyKey::ALL {
            assert_eq!(k.as_str().parse::<PolicyKey>().unwrap(), k);
        }
        assert!("max".parse::<PolicyKey>().is_err());
    }

    proptest! {
        #[test]
        fn threshold_is_memoryless(mut ds in proptest::collection::vec(1i64..100, 0..40), tau in 1i64..100, seed in any::<u64>()) {
            let mut s = PolicyState::fixed_threshold(tau);
            let mut before: Vec<_> = ds.iter().copied().filter(|&d| s.decide(d).is_accept()).collect();
            use rand::{seq::SliceRandom, SeedableRng};
            ds.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let mut after: Vec<_> = ds.iter().copied().filter(|&d| s.decide(d).is_accept()).collect();
            before.sort_unstable();
            after.sort_unstable();
            prop_assert_eq!(before, after);
        }

        #[test]
        fn mean_is_exact_and_strictly_decreasing(ds in proptest::collection::vec(1i64..1_000_000, 1..200)) {
            let mut s = PolicyState::above_mean();
            let mut taken = Vec::new();
            let mut last_bar: Option<f64> = None;
            for d in ds {
                let prior = s.bar();
                if s.decide(d).is_accept() {
                    taken.push(d);
                    if let Some(p) = prior {
                        prop_assert!((d as f64) < p);
                        prop_assert!(s.bar().unwrap() < p);
                    }
                    let exact = taken.iter().map(|&x| x as f64).sum::<f64>() / taken.len() as f64;
                    prop_assert!((s.bar().unwrap() - exact).abs() <= exact * f64::EPSILON * 4.0);
                }
                if let (Some(a), Some(b)) = (last_bar, s.bar()) {
                    prop_assert!(b <= a);
                }
                last_bar = s.bar();
            }
        }

        #[test]
        fn median_changes_only_at_odd_counts(ds in proptest::collection::vec(1i64..1000, 1..200)) {
            let mut s = PolicyState::above_median();
            let mut last: Option<f64> = None;
            for d in ds {
                let before = s.bar();
                s.decide(d);
                let count = s.accepted_count().unwrap();
                if before.is_some() && s.bar() != before {
                    prop_assert_eq!(count % 2, 1);
                }
                if let (Some(a), Some(b)) = (last, s.bar()) {
                    prop_assert!(b <= a);
                }
                last = s.bar();
            }
        }
    }
}
