//! Permutations of sequence positions and their canonical class indices.
//!
//! A permutation of length `n` is identified with its lexicographic rank
//! among all `n!` permutations (Lehmer code), which is the class label used
//! by the order-prediction heads. Only `n ∈ {2, 3, 4}` is supported; longer
//! sequences blow up the class count without adding usable signal.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Sequence lengths the framework supports.
pub const MIN_SEQ_LEN: usize = 2;
pub const MAX_SEQ_LEN: usize = 4;

/// Fixed padded length for the order-verification stream.
pub const PAD_LEN: usize = 4;

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// A reordering of sequence positions together with its canonical class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    order: Vec<usize>,
    class_index: usize,
}

impl Permutation {
    /// Builds a permutation from a position tuple, validating bijectivity.
    pub fn new(order: &[usize]) -> Result<Self> {
        let n = order.len();
        if !(MIN_SEQ_LEN..=MAX_SEQ_LEN).contains(&n) {
            return Err(Error::validation(format!(
                "permutation length must be in {MIN_SEQ_LEN}..={MAX_SEQ_LEN}, got {n}"
            )));
        }
        let mut seen = [false; MAX_SEQ_LEN];
        for &p in order {
            if p >= n || seen[p] {
                return Err(Error::validation(format!(
                    "order {order:?} is not a bijection on 0..{n}"
                )));
            }
            seen[p] = true;
        }
        let class_index = lexicographic_rank(order);
        Ok(Self { order: order.to_vec(), class_index })
    }

    /// Builds the permutation with the given lexicographic rank.
    pub fn from_index(n: usize, class_index: usize) -> Result<Self> {
        if !(MIN_SEQ_LEN..=MAX_SEQ_LEN).contains(&n) {
            return Err(Error::validation(format!(
                "permutation length must be in {MIN_SEQ_LEN}..={MAX_SEQ_LEN}, got {n}"
            )));
        }
        if class_index >= factorial(n) {
            return Err(Error::validation(format!(
                "class index {class_index} out of range for n={n} ({} classes)",
                factorial(n)
            )));
        }
        let mut remaining: Vec<usize> = (0..n).collect();
        let mut order = Vec::with_capacity(n);
        let mut rem = class_index;
        for k in (1..=n).rev() {
            let f = factorial(k - 1);
            let digit = rem / f;
            rem %= f;
            order.push(remaining.remove(digit));
        }
        Ok(Self { order, class_index })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_index(n, 0)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Lexicographic rank in `0..n!`.
    pub fn class_index(&self) -> usize {
        self.class_index
    }

    pub fn is_identity(&self) -> bool {
        self.class_index == 0
    }

    /// The permutation that undoes this one.
    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.order.len()];
        for (k, &p) in self.order.iter().enumerate() {
            inv[p] = k;
        }
        Self::new(&inv).expect("inverse of a bijection is a bijection")
    }

    /// Reorders `items` so that `output[k] = items[order[k]]`.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Result<Vec<T>> {
        if items.len() != self.order.len() {
            return Err(Error::validation(format!(
                "cannot apply length-{} permutation to {} items",
                self.order.len(),
                items.len()
            )));
        }
        Ok(self.order.iter().map(|&p| items[p].clone()).collect())
    }
}

/// Lexicographic rank of a position tuple (Lehmer code).
fn lexicographic_rank(order: &[usize]) -> usize {
    let n = order.len();
    let mut rank = 0;
    for k in 0..n {
        let smaller_later = order[k + 1..].iter().filter(|&&p| p < order[k]).count();
        rank += smaller_later * factorial(n - 1 - k);
    }
    rank
}

/// Rank of a position tuple without constructing a [`Permutation`].
pub fn permutation_to_index(order: &[usize]) -> Result<usize> {
    Ok(Permutation::new(order)?.class_index())
}

/// Position tuple with the given rank; inverse of [`permutation_to_index`].
pub fn index_to_permutation(n: usize, class_index: usize) -> Result<Vec<usize>> {
    Ok(Permutation::from_index(n, class_index)?.order().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_rank_zero() {
        assert_eq!(permutation_to_index(&[0, 1]).unwrap(), 0);
        assert_eq!(index_to_permutation(3, 0).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn known_ranks() {
        assert_eq!(permutation_to_index(&[2, 0, 1]).unwrap(), 4);
        assert_eq!(permutation_to_index(&[3, 2, 1, 0]).unwrap(), 23);
        assert_eq!(index_to_permutation(2, 1).unwrap(), vec![1, 0]);
        assert_eq!(index_to_permutation(4, 23).unwrap(), vec![3, 2, 1, 0]);
    }

    #[test]
    fn round_trip_exhaustive() {
        for n in MIN_SEQ_LEN..=MAX_SEQ_LEN {
            for i in 0..factorial(n) {
                let p = Permutation::from_index(n, i).unwrap();
                assert_eq!(p.class_index(), i);
                assert_eq!(permutation_to_index(p.order()).unwrap(), i);
            }
        }
    }

    #[test]
    fn apply_matches_definition() {
        let p = Permutation::new(&[2, 0, 3, 1]).unwrap();
        let out = p.apply(&['a', 'b', 'c', 'd']).unwrap();
        assert_eq!(out, vec!['c', 'a', 'd', 'b']);

        let id = Permutation::identity(3).unwrap();
        assert_eq!(id.apply(&['a', 'b', 'c']).unwrap(), vec!['a', 'b', 'c']);

        let swap = Permutation::new(&[1, 0]).unwrap();
        assert_eq!(swap.apply(&['a', 'b']).unwrap(), vec!['b', 'a']);
    }

    #[test]
    fn inverse_restores_input() {
        for n in MIN_SEQ_LEN..=MAX_SEQ_LEN {
            let items: Vec<usize> = (100..100 + n).collect();
            for i in 0..factorial(n) {
                let p = Permutation::from_index(n, i).unwrap();
                let shuffled = p.apply(&items).unwrap();
                let restored = p.inverse().apply(&shuffled).unwrap();
                assert_eq!(restored, items);
            }
        }
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(permutation_to_index(&[0, 0]).is_err());
        assert!(permutation_to_index(&[0, 2]).is_err());
        assert!(permutation_to_index(&[0]).is_err());
        assert!(permutation_to_index(&[0, 1, 2, 3, 4]).is_err());
        assert!(Permutation::from_index(3, 6).is_err());
        assert!(Permutation::from_index(5, 0).is_err());
    }
}
