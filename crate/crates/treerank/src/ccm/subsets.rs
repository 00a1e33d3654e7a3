//! Subset enumeration and ranking for the context cache.
//!
//! The cache stores one summary per item subset of each block size the tree
//! uses (m, m/2, ..., 2). Keys are sorted index tuples; slots are dense and
//! ordered size-major (largest size first), lexicographic within a size, so
//! a (subset → slot) lookup is an offset plus a combination rank.

use crate::error::{Error, Result};
use crate::tcem::TreeLayout;

/// Pascal's triangle up to row `n`, in u64 with overflow checks.
#[derive(Debug, Clone)]
pub struct BinomialTable {
    rows: Vec<Vec<u64>>,
}

impl BinomialTable {
    pub fn new(n: usize) -> Result<Self> {
        let mut rows: Vec<Vec<u64>> = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let mut row = vec![1u64; i + 1];
            for j in 1..i {
                row[j] = rows[i - 1][j - 1]
                    .checked_add(rows[i - 1][j])
                    .ok_or_else(|| Error::Resource(format!("C({i},{j}) overflows u64")))?;
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    /// C(n, k); zero when k > n.
    pub fn get(&self, n: usize, k: usize) -> u64 {
        if k > n {
            0
        } else {
            self.rows[n][k]
        }
    }
}

/// Number of ordered length-m arrangements of n items, if it fits in u64.
pub fn arrangement_count(n: usize, m: usize) -> Result<u64> {
    if m > n {
        return Err(Error::Input(format!(
            "cannot arrange {m} of only {n} candidates"
        )));
    }
    let mut p: u64 = 1;
    for i in 0..m {
        p = p
            .checked_mul((n - i) as u64)
            .ok_or_else(|| Error::Resource(format!("A({n},{m}) overflows u64")))?;
    }
    Ok(p)
}

fn check_sizes(n: usize, m: usize) -> Result<()> {
    if m > n {
        return Err(Error::Input(format!(
            "slate length {m} exceeds candidate count {n}"
        )));
    }
    Ok(())
}

/// All item-index subsets of each block size in `layout`, size-major
/// (largest first) then lexicographic. These are exactly the sets whose
/// summaries any permutation's blocks can need.
pub fn enumerate_subsets_for_layout(n: usize, layout: &TreeLayout) -> Result<Vec<Vec<u32>>> {
    check_sizes(n, layout.m())?;
    let mut out = Vec::new();
    for level in 0..layout.level_count() {
        let k = layout.block_size(level);
        emit_combinations(n, k, &mut out);
    }
    Ok(out)
}

/// As `enumerate_subsets_for_layout` with the standard tree for slate
/// length m (sizes m, m/2, ..., 2).
pub fn enumerate_subsets(n: usize, m: usize) -> Result<Vec<Vec<u32>>> {
    let layout = TreeLayout::new(m)?;
    enumerate_subsets_for_layout(n, &layout)
}

fn emit_combinations(n: usize, k: usize, out: &mut Vec<Vec<u32>>) {
    // Lexicographic combinations by successor: bump the rightmost index
    // that can still grow, then reset the tail.
    let mut cur: Vec<u32> = (0..k as u32).collect();
    loop {
        out.push(cur.clone());
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if cur[i] < (n - k + i) as u32 {
                break;
            }
            if i == 0 {
                return;
            }
        }
        cur[i] += 1;
        for j in i + 1..k {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

/// Dense (subset → slot) addressing for one (n, layout) pair.
#[derive(Debug, Clone)]
pub struct SubsetIndex {
    n: usize,
    /// (block size, slot offset of that size's first subset), level order.
    offsets: Vec<(usize, u64)>,
    binom: BinomialTable,
    total: u64,
}

impl SubsetIndex {
    pub fn for_layout(n: usize, layout: &TreeLayout) -> Result<Self> {
        check_sizes(n, layout.m())?;
        let binom = BinomialTable::new(n)?;
        let mut offsets = Vec::with_capacity(layout.level_count());
        let mut total: u64 = 0;
        for level in 0..layout.level_count() {
            let size = layout.block_size(level);
            offsets.push((size, total));
            total = total
                .checked_add(binom.get(n, size))
                .ok_or_else(|| Error::Resource("subset count overflows u64".into()))?;
        }
        Ok(Self {
            n,
            offsets,
            binom,
            total,
        })
    }

    pub fn new(n: usize, m: usize) -> Result<Self> {
        Self::for_layout(n, &TreeLayout::new(m)?)
    }

    /// Total number of cached subset summaries: Σ over levels of C(n, size).
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn level_count(&self) -> usize {
        self.offsets.len()
    }

    pub fn size_at_level(&self, level: usize) -> usize {
        self.offsets[level].0
    }

    /// Half-open slot range `[start, end)` holding level `level`'s subsets.
    pub fn span(&self, level: usize) -> (u64, u64) {
        let start = self.offsets[level].1;
        let end = self
            .offsets
            .get(level + 1)
            .map(|(_, o)| *o)
            .unwrap_or(self.total);
        (start, end)
    }

    /// Slot of a sorted subset. The subset's length must be one of the
    /// layout's block sizes.
    pub fn slot_of(&self, subset: &[u32]) -> Result<u64> {
        let size = subset.len();
        let offset = self
            .offsets
            .iter()
            .find(|(s, _)| *s == size)
            .map(|(_, o)| *o)
            .ok_or_else(|| {
                Error::Input(format!("subset size {size} is not a tree block size"))
            })?;
        debug_assert!(subset.windows(2).all(|w| w[0] < w[1]), "subset must be sorted");
        // Lexicographic rank: count combinations that precede `subset`.
        let mut rank: u64 = 0;
        let mut prev: i64 = -1;
        for (i, &c) in subset.iter().enumerate() {
            for j in (prev + 1) as u32..c {
                rank += self.binom.get(self.n - 1 - j as usize, size - 1 - i);
            }
            prev = c as i64;
        }
        Ok(offset + rank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;

    #[test]
    fn binomials_match_direct_formula() {
        let t = BinomialTable::new(12).unwrap();
        assert_eq!(t.get(8, 4), 70);
        assert_eq!(t.get(8, 2), 28);
        assert_eq!(t.get(8, 8), 1);
        assert_eq!(t.get(5, 6), 0);
        assert_eq!(t.get(12, 6), 924);
    }

    #[test]
    fn arrangement_counts() {
        assert_eq!(arrangement_count(8, 8).unwrap(), 40320);
        assert_eq!(arrangement_count(5, 4).unwrap(), 120);
        assert_eq!(arrangement_count(2, 2).unwrap(), 2);
        assert_eq!(arrangement_count(10, 1).unwrap(), 10);
        assert!(arrangement_count(3, 4).is_err());
    }

    #[test]
    fn eight_of_eight_yields_ninety_nine_keys() {
        let keys = enumerate_subsets(8, 8).unwrap();
        assert_eq!(keys.len(), 99); // 1 + 70 + 28
        // Counting the 8 per-item rows stored alongside: 107 embeddings.
        assert_eq!(keys.len() + 8, 107);
    }

    #[test]
    fn tiny_cases() {
        let keys = enumerate_subsets(2, 2).unwrap();
        assert_eq!(keys, vec![vec![0, 1]]);
        let keys = enumerate_subsets(4, 4).unwrap();
        assert_eq!(keys.len(), 7); // C(4,4) + C(4,2) = 1 + 6
    }

    #[test]
    fn oversized_slate_is_rejected() {
        assert!(enumerate_subsets(4, 8).is_err());
    }

    #[test]
    fn enumeration_matches_power_set_filter() {
        // Independent oracle: filter the full power set by size.
        for (n, m) in [(4usize, 2usize), (5, 4), (8, 8), (10, 4), (10, 8)] {
            let keys = enumerate_subsets(n, m).unwrap();
            let layout = TreeLayout::new(m).unwrap();
            let wanted: Vec<usize> = (0..layout.level_count())
                .map(|l| layout.block_size(l))
                .collect();
            let mut expected = 0usize;
            for mask in 0u32..(1 << n) {
                if wanted.contains(&(mask.count_ones() as usize)) {
                    expected += 1;
                }
            }
            assert_eq!(keys.len(), expected, "n={n} m={m}");
            // Every key sorted, unique, in range.
            let unique: std::collections::HashSet<_> = keys.iter().cloned().collect();
            assert_eq!(unique.len(), keys.len());
            for key in &keys {
                assert!(key.windows(2).all(|w| w[0] < w[1]));
                assert!(key.iter().all(|&i| (i as usize) < n));
            }
        }
    }

    #[test]
    fn enumeration_is_size_major_then_lexicographic() {
        let keys = enumerate_subsets(4, 4).unwrap();
        assert_eq!(keys[0], vec![0, 1, 2, 3]);
        let pairs: Vec<Vec<u32>> = (0..4u32).combinations(2).collect();
        assert_eq!(&keys[1..], pairs.as_slice());
    }

    #[test]
    fn slots_are_dense_and_match_enumeration_order() {
        for (n, m) in [(4usize, 4usize), (8, 8), (6, 4)] {
            let keys = enumerate_subsets(n, m).unwrap();
            let index = SubsetIndex::new(n, m).unwrap();
            assert_eq!(index.total(), keys.len() as u64);
            for (slot, key) in keys.iter().enumerate() {
                assert_eq!(index.slot_of(key).unwrap(), slot as u64, "key {key:?}");
            }
        }
    }

    #[test]
    fn level_spans_partition_the_slots() {
        let index = SubsetIndex::new(8, 8).unwrap();
        assert_eq!(index.level_count(), 3);
        assert_eq!(index.span(0), (0, 1)); // C(8,8)
        assert_eq!(index.span(1), (1, 71)); // C(8,4) = 70
        assert_eq!(index.span(2), (71, 99)); // C(8,2) = 28
        assert_eq!(index.size_at_level(0), 8);
        assert_eq!(index.size_at_level(2), 2);
    }

    #[test]
    fn wrong_size_subset_is_rejected() {
        let index = SubsetIndex::new(8, 8).unwrap();
        assert!(index.slot_of(&[0, 1, 2]).is_err());
    }
}
