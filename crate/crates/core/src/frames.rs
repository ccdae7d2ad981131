//! Frame index sets and the in-memory frame block convention.
//!
//! Frame blocks are `ndarray::Array4<f32>` laid out as
//! `(frames, height, width, channels)`.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A set of frame indices, kept sorted and free of duplicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "Vec<usize>", into = "Vec<usize>")]
pub struct FrameIndexSet(Vec<usize>);

impl FrameIndexSet {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// `start..end`, half open.
    pub fn range(start: usize, end: usize) -> Self {
        Self((start..end).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }

    pub fn insert(&mut self, index: usize) -> bool {
        match self.0.binary_search(&index) {
            Ok(_) => false,
            Err(pos) => {
                self.0.insert(pos, index);
                true
            }
        }
    }

    pub fn extend_from(&mut self, other: &FrameIndexSet) {
        for &i in other.iter() {
            self.insert(i);
        }
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &usize> + ExactSizeIterator {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn first(&self) -> Option<usize> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn is_disjoint(&self, other: &FrameIndexSet) -> bool {
        self.0.iter().all(|i| !other.contains(*i))
    }

    pub fn is_subset(&self, other: &FrameIndexSet) -> bool {
        self.0.iter().all(|i| other.contains(*i))
    }

    pub fn union(&self, other: &FrameIndexSet) -> FrameIndexSet {
        let mut out = self.clone();
        out.extend_from(other);
        out
    }

    pub fn intersection(&self, other: &FrameIndexSet) -> FrameIndexSet {
        self.0
            .iter()
            .copied()
            .filter(|i| other.contains(*i))
            .collect()
    }

    pub fn difference(&self, other: &FrameIndexSet) -> FrameIndexSet {
        self.0
            .iter()
            .copied()
            .filter(|i| !other.contains(*i))
            .collect()
    }

    /// True when the set is exactly `0..len`.
    pub fn is_prefix(&self) -> bool {
        self.0.iter().enumerate().all(|(pos, &i)| pos == i)
    }
}

impl FromIterator<usize> for FrameIndexSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut v: Vec<usize> = iter.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }
}

impl From<Vec<usize>> for FrameIndexSet {
    fn from(v: Vec<usize>) -> Self {
        v.into_iter().collect()
    }
}

impl From<FrameIndexSet> for Vec<usize> {
    fn from(s: FrameIndexSet) -> Self {
        s.0
    }
}

impl<const N: usize> From<[usize; N]> for FrameIndexSet {
    fn from(a: [usize; N]) -> Self {
        a.into_iter().collect()
    }
}

impl<'a> IntoIterator for &'a FrameIndexSet {
    type Item = &'a usize;
    type IntoIter = std::slice::Iter<'a, usize>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for FrameIndexSet {
    /// `[1,2,3]`, the notation used by plan files.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (n, i) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str(",")?;
            }
            write!(f, "{i}")?;
        }
        f.write_str("]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_and_dedup() {
        let s: FrameIndexSet = vec![5, 1, 5, 3].into();
        assert_eq!(s.as_slice(), &[1, 3, 5]);
        assert_eq!(s.to_string(), "[1,3,5]");
    }

    #[test]
    fn prefix_detection() {
        assert!(FrameIndexSet::range(0, 4).is_prefix());
        assert!(FrameIndexSet::new().is_prefix());
        assert!(!FrameIndexSet::from([0, 2]).is_prefix());
        assert!(!FrameIndexSet::from([1, 2]).is_prefix());
    }

    #[test]
    fn set_algebra() {
        let a = FrameIndexSet::range(0, 5);
        let b = FrameIndexSet::from([3, 4, 7]);
        assert_eq!(a.difference(&b).as_slice(), &[0, 1, 2]);
        assert_eq!(a.union(&b).as_slice(), &[0, 1, 2, 3, 4, 7]);
        assert!(!a.is_disjoint(&b));
        assert!(FrameIndexSet::from([3]).is_subset(&b));
    }
}
