//! Which frames an episode hides.

use std::fmt;
use std::str::FromStr;

use kvae_core::lgssm::ObservationMask;
use rand::Rng;

use crate::error::{HarnessError, Result};

/// Text form: `none`, `random:<p>`, `span:<L>` or `prefix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DropPattern {
    None,
    /// Each frame after the prefix is dropped with probability `p`.
    Random { p: f64 },
    /// `len` consecutive frames centred in the episode, kept clear of the prefix.
    MiddleSpan { len: usize },
    /// Everything after the prefix is dropped.
    PrefixOnly,
}

impl DropPattern {
    /// Draws a mask; the first `prefix` frames are always observed.
    pub fn mask(&self, steps: usize, prefix: usize, rng: &mut impl Rng) -> Result<ObservationMask> {
        if prefix > steps {
            return Err(HarnessError::Config(format!("prefix {prefix} is longer than {steps} steps")));
        }
        let iota = match *self {
            DropPattern::None => vec![true; steps],
            DropPattern::Random { p } => (0..steps).map(|t| t < prefix || rng.random::<f64>() >= p).collect(),
            DropPattern::MiddleSpan { len } => {
                let start = ((steps.saturating_sub(len)) / 2).max(prefix);
                if start + len > steps {
                    return Err(HarnessError::Config(format!(
                        "a span of {len} frames does not fit after a {prefix}-frame prefix in {steps} steps"
                    )));
                }
                (0..steps).map(|t| t < start || t >= start + len).collect()
            }
            DropPattern::PrefixOnly => (0..steps).map(|t| t < prefix).collect(),
        };
        Ok(ObservationMask::new(iota))
    }

    /// Short label and parameter for result tables.
    pub fn label(&self) -> (&'static str, String) {
        match *self {
            DropPattern::None => ("none", String::new()),
            DropPattern::Random { p } => ("random", p.to_string()),
            DropPattern::MiddleSpan { len } => ("span", len.to_string()),
            DropPattern::PrefixOnly => ("prefix", String::new()),
        }
    }
}

impl fmt::Display for DropPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropPattern::None => f.write_str("none"),
            DropPattern::Random { p } => write!(f, "random:{p}"),
            DropPattern::MiddleSpan { len } => write!(f, "span:{len}"),
            DropPattern::PrefixOnly => f.write_str("prefix"),
        }
    }
}

impl FromStr for DropPattern {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || HarnessError::Config(format!("bad drop pattern {s:?}; use none, random:<p>, span:<L> or prefix"));
        match s.split_once(':') {
            None if s == "none" => Ok(DropPattern::None),
            None if s == "prefix" => Ok(DropPattern::PrefixOnly),
            Some(("random", p)) => {
                let p: f64 = p.parse().map_err(|_| bad())?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(bad());
                }
                Ok(DropPattern::Random { p })
            }
            Some(("span", l)) => Ok(DropPattern::MiddleSpan { len: l.parse().map_err(|_| bad())? }),
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn middle_span_is_centred() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = DropPattern::MiddleSpan { len: 4 }.mask(20, 4, &mut rng).unwrap();
        assert_eq!(m.missing(), vec![8, 9, 10, 11]);
        let m = DropPattern::MiddleSpan { len: 16 }.mask(20, 4, &mut rng).unwrap();
        assert_eq!(m.missing(), (4..20).collect::<Vec<_>>());
        assert!(DropPattern::MiddleSpan { len: 17 }.mask(20, 4, &mut rng).is_err());
        assert!(DropPattern::MiddleSpan { len: 0 }.mask(20, 4, &mut rng).unwrap().all());
    }

    #[test]
    fn certain_drop_is_prefix_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DropPattern::Random { p: 1.0 }.mask(20, 4, &mut rng).unwrap();
        let b = DropPattern::PrefixOnly.mask(20, 4, &mut rng).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.observed(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn text_round_trips() {
        for p in [DropPattern::None, DropPattern::Random { p: 0.35 }, DropPattern::MiddleSpan { len: 6 }, DropPattern::PrefixOnly] {
            assert_eq!(p.to_string().parse::<DropPattern>().unwrap(), p);
        }
        for s in ["random", "random:1.5", "span:-1", "gap:3", ""] {
            assert!(s.parse::<DropPattern>().is_err(), "{s}");
        }
    }

    proptest! {
        #[test]
        fn prefix_is_always_observed(p in 0.0f64..=1.0, prefix in 0usize..8, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = DropPattern::Random { p }.mask(12, prefix, &mut rng).unwrap();
            prop_assert_eq!(m.len(), 12);
            prop_assert!((0..prefix).all(|t| m.is_observed(t)));
        }
    }
}
