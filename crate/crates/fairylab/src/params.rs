//! Named shared tensors and their binding onto a tape.
//!
//! Adapter factors can alias one another (the motion adapter reuses the
//! identity adapter's up factor), so parameters are `Rc<RefCell<_>>` and the
//! binder dedupes by pointer identity: binding the same tensor twice yields
//! one leaf, so gradients from every use accumulate into one slot.

use crate::autodiff::{NodeId, Scalar, Tape};
use indexmap::IndexMap;
use ndarray::Array2;
use std::cell::RefCell;
use std::rc::Rc;

pub type SharedTensor<T> = Rc<RefCell<Array2<T>>>;

pub fn shared<T: Scalar>(arr: Array2<T>) -> SharedTensor<T> {
    Rc::new(RefCell::new(arr))
}

/// Ordered collection of named parameters. Iteration order is insertion
/// order, which keeps optimizer traversal and checkpoint layout stable.
#[derive(Clone, Default)]
pub struct ParamSet<T: Scalar> {
    entries: IndexMap<String, SharedTensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: SharedTensor<T>) {
        let name = name.into();
        debug_assert!(
            !self.entries.contains_key(&name),
            "duplicate param name {name}"
        );
        self.entries.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> Option<&SharedTensor<T>> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &SharedTensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count across all tensors.
    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|t| t.borrow().len()).sum()
    }
}

/// Binds shared tensors to tape leaves for one forward build.
pub struct ParamBinder<T: Scalar> {
    by_ptr: IndexMap<usize, (String, NodeId, SharedTensor<T>)>,
}

impl<T: Scalar> Default for ParamBinder<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamBinder<T> {
    pub fn new() -> Self {
        ParamBinder {
            by_ptr: IndexMap::new(),
        }
    }

    /// Bind a tensor as a leaf, or return its existing leaf if this tensor
    /// (by pointer identity) was bound before under any name.
    pub fn bind(&mut self, tape: &mut Tape<T>, name: &str, tensor: &SharedTensor<T>) -> NodeId {
        let key = Rc::as_ptr(tensor) as usize;
        if let Some((_, id, _)) = self.by_ptr.get(&key) {
            return *id;
        }
        let id = tape.leaf(tensor.borrow().clone());
        self.by_ptr
            .insert(key, (name.to_string(), id, Rc::clone(tensor)));
        id
    }

    /// All bound parameters: (first-bound name, leaf id, tensor).
    pub fn bound(&self) -> impl Iterator<Item = (&str, NodeId, &SharedTensor<T>)> {
        self.by_ptr
            .values()
            .map(|(name, id, tensor)| (name.as_str(), *id, tensor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn binder_dedupes_aliased_tensors() {
        let t = shared(array![[1.0_f64, 2.0]]);
        let alias = Rc::clone(&t);
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let id1 = binder.bind(&mut tape, "a", &t);
        let id2 = binder.bind(&mut tape, "b", &alias);
        assert_eq!(id1, id2);
        assert_eq!(binder.bound().count(), 1);
    }

    #[test]
    fn aliased_gradient_accumulates_across_uses() {
        // loss = sum(x * x_alias) with x == alias => d/dx = 2x
        let t = shared(array![[3.0_f64]]);
        let alias = Rc::clone(&t);
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new();
        let a = binder.bind(&mut tape, "x", &t);
        let b = binder.bind(&mut tape, "x_alias", &alias);
        let prod = tape.mul(a, b);
        let loss = tape.sum_all(prod);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(a).unwrap()[[0, 0]], 6.0);
    }
}
