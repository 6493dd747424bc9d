//! Selection and ordering of the neighbour frames fed to the recurrence.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{PfSequence, TemporalOrder};
use crate::error::{Error, Result};

/// Neighbour frames for one target, in the order the recurrence visits them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ContextPlan {
    pub target: usize,
    pub neighbors: Vec<usize>,
    pub order: TemporalOrder,
    /// `true` where a neighbour was replaced by edge replication (only
    /// produced by [`plan_context_clamped`]).
    pub replicated: Vec<bool>,
}

fn signed_indices(n: usize, order: TemporalOrder, pf: PfSequence, seed: u64) -> Vec<isize> {
    let n = n as isize;
    match order {
        TemporalOrder::P => (1..=n).map(|k| -k).collect(),
        TemporalOrder::PR => {
            let mut idx: Vec<isize> = (1..=n).map(|k| -k).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            idx
        }
        TemporalOrder::PF => {
            let half = n / 2;
            match pf {
                PfSequence::Alternating => (1..=half).flat_map(|k| [-k, k]).collect(),
                PfSequence::PastThenFuture => (1..=half).map(|k| -k).chain(1..=half).collect(),
            }
        }
    }
}

/// Plans the context of frame `target` inside a sequence of `seq_len`
/// frames. Every referenced index must exist; boundary handling is the
/// caller's job (see [`plan_context_clamped`]).
pub fn plan_context(
    target: usize,
    n: usize,
    order: TemporalOrder,
    pf: PfSequence,
    seed: u64,
    seq_len: usize,
) -> Result<ContextPlan> {
    if order == TemporalOrder::PF && !n.is_multiple_of(2) {
        return Err(Error::config("order", format!("PF needs an even context length, got {n}")));
    }
    if target >= seq_len {
        return Err(Error::Range(format!("target {target} outside a {seq_len}-frame sequence")));
    }
    let offsets = signed_indices(n, order, pf, seed);
    let neighbors = offsets
        .iter()
        .map(|&o| {
            let i = target as isize + o;
            if i < 0 || i >= seq_len as isize {
                Err(Error::Range(format!(
                    "neighbor {i} of target {target} outside a {seq_len}-frame sequence"
                )))
            } else {
                Ok(i as usize)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContextPlan {
        target,
        replicated: vec![false; neighbors.len()],
        neighbors,
        order,
    })
}

/// Like [`plan_context`] but replaces out-of-range neighbours by the
/// nearest existing frame, marking them as replicated (callers pair them
/// with zero flow).
pub fn plan_context_clamped(
    target: usize,
    n: usize,
    order: TemporalOrder,
    pf: PfSequence,
    seed: u64,
    seq_len: usize,
) -> Result<ContextPlan> {
    if order == TemporalOrder::PF && !n.is_multiple_of(2) {
        return Err(Error::config("order", format!("PF needs an even context length, got {n}")));
    }
    if target >= seq_len {
        return Err(Error::Range(format!("target {target} outside a {seq_len}-frame sequence")));
    }
    let mut neighbors = Vec::with_capacity(n);
    let mut replicated = Vec::with_capacity(n);
    for o in signed_indices(n, order, pf, seed) {
        let i = target as isize + o;
        let clamped = i.clamp(0, seq_len as isize - 1) as usize;
        replicated.push(clamped as isize != i);
        neighbors.push(clamped);
    }
    Ok(ContextPlan {
        target,
        neighbors,
        order,
        replicated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(t: usize, n: usize, order: TemporalOrder, seed: u64) -> Vec<usize> {
        plan_context(t, n, order, PfSequence::Alternating, seed, 100).unwrap().neighbors
    }

    #[test]
    fn past_only() {
        assert_eq!(plan(10, 6, TemporalOrder::P, 0), vec![9, 8, 7, 6, 5, 4]);
    }

    #[test]
    fn past_and_future() {
        let pf = plan(10, 6, TemporalOrder::PF, 0);
        assert_eq!(pf, vec![9, 11, 8, 12, 7, 13]);
        let mut set = pf.clone();
        set.sort();
        assert_eq!(set, vec![7, 8, 9, 11, 12, 13]);
        let chrono = plan_context(10, 6, TemporalOrder::PF, PfSequence::PastThenFuture, 0, 100)
            .unwrap()
            .neighbors;
        assert_eq!(chrono, vec![9, 8, 7, 11, 12, 13]);
    }

    #[test]
    fn random_past_is_a_permutation() {
        let mut pr = plan(10, 6, TemporalOrder::PR, 0);
        assert_eq!(pr, plan(10, 6, TemporalOrder::PR, 0));
        pr.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(pr, vec![9, 8, 7, 6, 5, 4]);
    }

    #[test]
    fn boundaries() {
        assert!(matches!(
            plan_context(2, 6, TemporalOrder::P, PfSequence::Alternating, 0, 10),
            Err(Error::Range(_))
        ));
        let clamped = plan_context_clamped(1, 4, TemporalOrder::PF, PfSequence::Alternating, 0, 4).unwrap();
        assert_eq!(clamped.neighbors, vec![0, 2, 0, 3]);
        assert_eq!(clamped.replicated, vec![false, false, true, false]);
    }

    #[test]
    fn target_never_in_context() {
        for order in [TemporalOrder::P, TemporalOrder::PF, TemporalOrder::PR] {
            for n in [0usize, 2, 4, 6] {
                let p = plan_context(20, n, order, PfSequence::Alternating, 3, 40).unwrap();
                assert_eq!(p.neighbors.len(), n);
                assert!(!p.neighbors.contains(&20));
            }
        }
    }
}
