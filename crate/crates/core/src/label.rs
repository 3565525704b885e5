//! Taint labels and label sets.
//!
//! A label names one performance parameter (e.g. `size`, `p`). Every value the
//! interpreter touches carries a [`LabelSet`]; propagation is set union, so the
//! algebra is commutative, associative, and idempotent by construction.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// An ordered set of parameter labels. Ordering makes serialized output stable.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(BTreeSet<String>);

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn singleton(label: impl Into<String>) -> Self {
        let mut s = BTreeSet::new();
        s.insert(label.into());
        LabelSet(s)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.0.contains(label)
    }

    pub fn insert(&mut self, label: impl Into<String>) {
        self.0.insert(label.into());
    }

    /// In-place union; the workhorse of taint propagation.
    pub fn union_with(&mut self, other: &LabelSet) {
        for l in &other.0 {
            if !self.0.contains(l) {
                self.0.insert(l.clone());
            }
        }
    }

    pub fn union(mut self, other: &LabelSet) -> LabelSet {
        self.union_with(other);
        self
    }

    /// Labels in `self` but not in `other`.
    pub fn difference(&self, other: &LabelSet) -> LabelSet {
        LabelSet(self.0.difference(&other.0).cloned().collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|s| s.as_str())
    }

    /// Sorted owned labels, convenient for reports.
    pub fn to_vec(&self) -> Vec<String> {
        self.0.iter().cloned().collect()
    }

    pub fn is_subset(&self, other: &LabelSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromIterator<String> for LabelSet {
    fn from_iter<T: IntoIterator<Item = String>>(iter: T) -> Self {
        LabelSet(iter.into_iter().collect())
    }
}

impl<'a> FromIterator<&'a str> for LabelSet {
    fn from_iter<T: IntoIterator<Item = &'a str>>(iter: T) -> Self {
        LabelSet(iter.into_iter().map(|s| s.to_string()).collect())
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(labels: &[&str]) -> LabelSet {
        labels.iter().copied().collect()
    }

    #[test]
    fn union_is_idempotent() {
        let mut a = set(&["size", "p"]);
        let before = a.clone();
        let b = a.clone();
        a.union_with(&b);
        assert_eq!(a, before);
    }

    #[test]
    fn union_is_commutative_and_associative() {
        let a = set(&["a"]);
        let b = set(&["b", "c"]);
        let c = set(&["c", "d"]);
        assert_eq!(a.clone().union(&b), b.clone().union(&a));
        assert_eq!(
            a.clone().union(&b).union(&c),
            a.clone().union(&c.clone().union(&b))
        );
    }

    #[test]
    fn display_is_sorted() {
        let s = set(&["step", "size"]);
        assert_eq!(s.to_string(), "{size,step}");
    }

    #[test]
    fn serializes_as_sorted_array() {
        let s = set(&["b", "a"]);
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"["a","b"]"#);
    }
}
