//! Growable Fenwick (binary indexed) tree over nonnegative masses, used for
//! weight-proportional sampling with O(log n) insertion and lookup.

#[derive(Debug, Clone, Default)]
pub struct FenwickTree {
    values: Vec<f64>,
    // 1-based; tree.len() == capacity + 1 with capacity a power of two.
    tree: Vec<f64>,
}

#[inline(always)]
fn lsb(i: usize) -> usize {
    i & i.wrapping_neg()
}

impl FenwickTree {
    pub fn new() -> Self {
        Self::from_values(Vec::new())
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        let capacity = values.len().next_power_of_two().max(1);
        let mut tree = vec![0.0; capacity + 1];
        tree[1..=values.len()].copy_from_slice(&values);
        for i in 1..=capacity {
            let j = i + lsb(i);
            if j <= capacity {
                tree[j] += tree[i];
            }
        }
        Self { values, tree }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    fn capacity(&self) -> usize {
        self.tree.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn push(&mut self, value: f64) {
        debug_assert!(value >= 0.0);
        self.values.push(value);
        if self.values.len() > self.capacity() {
            *self = Self::from_values(std::mem::take(&mut self.values));
            return;
        }
        let cap = self.capacity();
        let mut i = self.values.len();
        while i <= cap {
            self.tree[i] += value;
            i += lsb(i);
        }
    }

    /// Sum of the first `n` values.
    pub fn prefix_sum(&self, n: usize) -> f64 {
        let mut i = n.min(self.len());
        let mut sum = 0.0;
        while i > 0 {
            sum += self.tree[i];
            i -= lsb(i);
        }
        sum
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.tree[self.capacity()]
    }

    /// Index `i` such that `prefix_sum(i) <= target < prefix_sum(i + 1)`,
    /// clamped to the last element when rounding pushes `target` past the
    /// total. Returns `None` for an empty tree.
    pub fn find(&self, target: f64) -> Option<usize> {
        if self.is_empty() {
            return None;
        }
        let cap = self.capacity();
        let mut pos = 0;
        let mut rem = target;
        let mut bit = cap;
        while bit > 0 {
            let next = pos + bit;
            if next <= cap && self.tree[next] <= rem {
                rem -= self.tree[next];
                pos = next;
            }
            bit >>= 1;
        }
        Some(pos.min(self.len() - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear_find(values: &[f64], target: f64) -> usize {
        let mut acc = 0.0;
        for (i, v) in values.iter().enumerate() {
            acc += v;
            if target < acc {
                return i;
            }
        }
        values.len() - 1
    }

    #[test]
    fn prefix_sums_after_pushes() {
        let mut t = FenwickTree::new();
        for v in [2.0, 4.0, 1.0, 0.5, 1.25] {
            t.push(v);
        }
        assert_eq!(t.len(), 5);
        assert_eq!(t.prefix_sum(0), 0.0);
        assert_eq!(t.prefix_sum(3), 7.0);
        assert_eq!(t.total(), 8.75);
        assert_eq!(t.find(0.0), Some(0));
        assert_eq!(t.find(6.99), Some(2));
        assert_eq!(t.find(7.0), Some(3));
        assert_eq!(t.find(100.0), Some(4));
    }

    #[test]
    fn empty_tree() {
        let t = FenwickTree::new();
        assert_eq!(t.find(0.0), None);
        assert_eq!(t.total(), 0.0);
    }

    proptest! {
        #[test]
        fn find_matches_linear_scan(values in prop::collection::vec(0.01f64..10.0, 1..200), u in 0.0f64..1.0) {
            let mut t = FenwickTree::new();
            for &v in &values {
                t.push(v);
            }
            let target = u * t.total();
            let a = t.find(target).unwrap();
            // Rounding of the two summation orders can only matter within an
            // ulp-scale band around a boundary.
            let b = linear_find(&values, target);
            if a != b {
                let boundary = t.prefix_sum(a.max(b));
                prop_assert!((boundary - target).abs() < 1e-9 * t.total());
            }
            let total: f64 = values.iter().sum();
            prop_assert!((t.total() - total).abs() < 1e-12 * total);
        }
    }
}
