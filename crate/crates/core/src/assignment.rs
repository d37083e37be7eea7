//! Bump-to-component maps.
//!
//! Bumps are numbered `1..=h` from the origin outwards, components `1..=k`.
//! The double index `(i, m)` names the `m`-th bump (counted outwards) that
//! component `i` carries. Internally pulses are stored in lexicographic
//! `(i, m)` order; [`Assignment::flat_index`] converts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<i64>", into = "Vec<i64>")]
pub struct Assignment {
    sigma: Vec<usize>,
    k: usize,
    h_counts: Vec<usize>,
    sigma_tilde: Vec<(usize, usize)>,
}

pub fn build_assignment(sigma: &[i64]) -> Result<Assignment> {
    Assignment::new(sigma)
}

impl Assignment {
    pub fn new(sigma: &[i64]) -> Result<Self> {
        if sigma.is_empty() {
            return Err(Error::EmptyAssignment);
        }
        if let Some(&bad) = sigma.iter().find(|&&s| s < 1) {
            return Err(Error::InvalidEntry(bad));
        }
        let sigma: Vec<usize> = sigma.iter().map(|&s| s as usize).collect();
        for l in 1..sigma.len() {
            if sigma[l] == sigma[l - 1] {
                return Err(Error::AdjacentRepeat(l, l + 1));
            }
        }
        let k = *sigma.iter().max().expect("nonempty");
        let mut h_counts = vec![0usize; k];
        let mut sigma_tilde = Vec::with_capacity(sigma.len());
        for &i in &sigma {
            h_counts[i - 1] += 1;
            sigma_tilde.push((i, h_counts[i - 1]));
        }
        if let Some(missing) = h_counts.iter().position(|&c| c == 0) {
            return Err(Error::NotSurjective(missing + 1));
        }
        Ok(Self {
            sigma,
            k,
            h_counts,
            sigma_tilde,
        })
    }

    pub fn h(&self) -> usize {
        self.sigma.len()
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }
    pub fn h_counts(&self) -> &[usize] {
        &self.h_counts
    }

    /// `σ̃(l)` for 1-based bump `l`.
    pub fn sigma_tilde(&self, l: usize) -> (usize, usize) {
        self.sigma_tilde[l - 1]
    }

    /// `σ̃⁻¹(i, m)`, 1-based.
    pub fn bump_of(&self, i: usize, m: usize) -> usize {
        self.sigma_tilde
            .iter()
            .position(|&p| p == (i, m))
            .map(|l| l + 1)
            .expect("double index out of range")
    }

    /// Bumps carried by component `i`, increasing.
    pub fn pulses_of(&self, i: usize) -> Result<Vec<usize>> {
        if i == 0 || i > self.k {
            return Err(Error::IndexOutOfRange { index: i, k: self.k });
        }
        Ok(self
            .sigma
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == i)
            .map(|(l, _)| l + 1)
            .collect())
    }

    /// Position of pulse `(i, m)` in lexicographic storage order (0-based).
    pub fn flat_index(&self, i: usize, m: usize) -> usize {
        self.h_counts[..i - 1].iter().sum::<usize>() + (m - 1)
    }

    /// Double index of the pulse stored at `p` (0-based), inverse of [`flat_index`](Self::flat_index).
    pub fn double_index(&self, p: usize) -> (usize, usize) {
        let mut rest = p;
        for (i, &c) in self.h_counts.iter().enumerate() {
            if rest < c {
                return (i + 1, rest + 1);
            }
            rest -= c;
        }
        panic!("pulse position {p} out of range");
    }

    /// 0-based component of each stored pulse.
    pub fn pulse_components(&self) -> Vec<usize> {
        (0..self.h()).map(|p| self.double_index(p).0 - 1).collect()
    }

    /// 0-based bump index of each stored pulse.
    pub fn pulse_bumps(&self) -> Vec<usize> {
        (0..self.h())
            .map(|p| {
                let (i, m) = self.double_index(p);
                self.bump_of(i, m) - 1
            })
            .collect()
    }

    /// Alternating assignment `[1, 2, ..., k, 1, 2, ...]` of length `h`.
    pub fn cyclic(h: usize, k: usize) -> Result<Self> {
        let sigma: Vec<i64> = (0..h).map(|l| (l % k + 1) as i64).collect();
        Self::new(&sigma)
    }
}

impl TryFrom<Vec<i64>> for Assignment {
    type Error = Error;
    fn try_from(v: Vec<i64>) -> Result<Self> {
        Self::new(&v)
    }
}

impl From<Assignment> for Vec<i64> {
    fn from(a: Assignment) -> Self {
        a.sigma.iter().map(|&s| s as i64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn five_bumps_three_components() {
        let a = build_assignment(&[1, 2, 1, 3, 2]).unwrap();
        assert_eq!(a.h(), 5);
        assert_eq!(a.k(), 3);
        assert_eq!(a.h_counts(), &[2, 2, 1]);
        let tilde: Vec<_> = (1..=5).map(|l| a.sigma_tilde(l)).collect();
        assert_eq!(tilde, vec![(1, 1), (2, 1), (1, 2), (3, 1), (2, 2)]);
        assert_eq!(a.pulses_of(1).unwrap(), vec![1, 3]);
        assert_eq!(a.pulses_of(2).unwrap(), vec![2, 5]);
        assert_eq!(a.pulses_of(3).unwrap(), vec![4]);
        assert_eq!(a.pulse_bumps(), vec![0, 2, 1, 4, 3]);
    }

    #[test]
    fn single_bump() {
        let a = build_assignment(&[1]).unwrap();
        assert_eq!((a.h(), a.k()), (1, 1));
        assert_eq!(a.pulses_of(1).unwrap(), vec![1]);
    }

    #[test]
    fn rule_violations() {
        assert_eq!(build_assignment(&[1, 1, 2]).unwrap_err(), Error::AdjacentRepeat(1, 2));
        assert_eq!(build_assignment(&[1, 3, 1]).unwrap_err(), Error::NotSurjective(2));
        assert_eq!(build_assignment(&[]).unwrap_err(), Error::EmptyAssignment);
        assert_eq!(build_assignment(&[0, 1]).unwrap_err(), Error::InvalidEntry(0));
        let a = build_assignment(&[1, 2]).unwrap();
        assert!(matches!(a.pulses_of(3), Err(Error::IndexOutOfRange { .. })));
        assert!(a.pulses_of(0).is_err());
    }

    #[test]
    fn json_field() {
        let a: Assignment = serde_json::from_str("[1,2,1,3,2]").unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), "[1,2,1,3,2]");
        assert!(serde_json::from_str::<Assignment>("[1,1]").is_err());
    }

    fn valid_sigma() -> impl Strategy<Value = Vec<i64>> {
        (1usize..5, 1usize..12).prop_flat_map(|(k, extra)| {
            let h = k + extra;
            proptest::collection::vec(0usize..k, h).prop_map(move |raw| {
                // force surjectivity then repair adjacency by cycling
                let mut s: Vec<usize> = raw;
                for i in 0..k {
                    s[i] = i;
                }
                for l in 1..s.len() {
                    if s[l] == s[l - 1] {
                        s[l] = (s[l] + 1) % k.max(2);
                    }
                }
                s.into_iter().map(|x| x as i64 + 1).collect()
            })
        })
    }

    proptest! {
        #[test]
        fn round_trip_and_permutation(sigma in valid_sigma()) {
            prop_assume!(sigma.windows(2).all(|w| w[0] != w[1]));
            let kmax = *sigma.iter().max().unwrap() as usize;
            prop_assume!((1..=kmax).all(|i| sigma.contains(&(i as i64))));
            let a = build_assignment(&sigma).unwrap();
            let flat: Vec<i64> = (1..=a.h()).map(|l| a.sigma_tilde(l).0 as i64).collect();
            prop_assert_eq!(&flat, &sigma);
            let mut all: Vec<usize> = (1..=a.k()).flat_map(|i| a.pulses_of(i).unwrap()).collect();
            all.sort();
            prop_assert_eq!(all, (1..=a.h()).collect::<Vec<_>>());
            for p in 0..a.h() {
                let (i, m) = a.double_index(p);
                prop_assert_eq!(a.flat_index(i, m), p);
                prop_assert_eq!(a.sigma_tilde(a.bump_of(i, m)), (i, m));
            }
        }
    }
}
