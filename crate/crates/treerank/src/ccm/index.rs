//! Permutation enumeration and the precomputed slot-index matrix.
//!
//! For a fixed (n, m) the set of length-m orderings and the cache slots each
//! ordering's blocks touch are request-independent, so both are built once
//! and reused across requests. The index matrix maps (permutation, position,
//! level) to the cache slot holding that block's summary.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tcem::TreeLayout;

use super::subsets::{arrangement_count, SubsetIndex};

/// All length-m orderings of candidate indices 0..n, lexicographic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationTable {
    n: usize,
    m: usize,
    rows: Vec<u32>, // count × m, row-major
}

impl PermutationTable {
    /// Enumerates every ordering; refuses when the count exceeds
    /// `max_permutations` (exhaustive scoring would not be feasible —
    /// use sampled scoring instead).
    pub fn build(n: usize, m: usize, max_permutations: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Input("slate length must be positive".into()));
        }
        let count = arrangement_count(n, m)?;
        if count > max_permutations {
            return Err(Error::Resource(format!(
                "{count} permutations of {m} from {n} exceed the limit {max_permutations}; \
                 use sampled scoring instead of exhaustive enumeration"
            )));
        }
        let mut rows = Vec::with_capacity(count as usize * m);
        let mut cur: Vec<u32> = Vec::with_capacity(m);
        let mut used = vec![false; n];
        fill(n, m, &mut cur, &mut used, &mut rows);
        debug_assert_eq!(rows.len(), count as usize * m);
        Ok(Self { n, m, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn count(&self) -> u64 {
        (self.rows.len() / self.m) as u64
    }

    pub fn row(&self, p: usize) -> &[u32] {
        &self.rows[p * self.m..(p + 1) * self.m]
    }

    /// Lexicographic rank of one ordering; the inverse of `row`.
    pub fn rank_of(&self, perm: &[u32]) -> Result<u64> {
        if perm.len() != self.m {
            return Err(Error::Input(format!(
                "ordering has {} positions, table holds length-{} orderings",
                perm.len(),
                self.m
            )));
        }
        let mut used = vec![false; self.n];
        let mut rank: u64 = 0;
        for (t, &item) in perm.iter().enumerate() {
            let i = item as usize;
            if i >= self.n || used[i] {
                return Err(Error::Input(format!(
                    "ordering {perm:?} is not a valid arrangement of 0..{}",
                    self.n
                )));
            }
            let smaller_unused = (0..i).filter(|&j| !used[j]).count() as u64;
            rank += smaller_unused * arrangement_count(self.n - 1 - t, self.m - 1 - t)?;
            used[i] = true;
        }
        Ok(rank)
    }
}

fn fill(n: usize, m: usize, cur: &mut Vec<u32>, used: &mut [bool], rows: &mut Vec<u32>) {
    if cur.len() == m {
        rows.extend_from_slice(cur);
        return;
    }
    for i in 0..n {
        if !used[i] {
            used[i] = true;
            cur.push(i as u32);
            fill(n, m, cur, used, rows);
            cur.pop();
            used[i] = false;
        }
    }
}

/// Cache slots touched by every (permutation, position, level) triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMatrix {
    n: usize,
    m: usize,
    block_sizes: Vec<usize>, // per level, outermost first
    slots: Vec<u32>,         // count × m × levels, row-major
}

impl IndexMatrix {
    /// Builds the matrix for `table`'s orderings under `layout`.
    pub fn build(table: &PermutationTable, layout: &TreeLayout) -> Result<Self> {
        if layout.m() != table.m() {
            return Err(Error::Input(format!(
                "tree is for slates of {}, permutation table holds length {}",
                layout.m(),
                table.m()
            )));
        }
        let n = table.n();
        let m = table.m();
        let levels = layout.level_count();
        let subsets = SubsetIndex::for_layout(n, layout)?;
        let count = table.count() as usize;
        let mut slots = vec![0u32; count * m * levels];
        let mut key: Vec<u32> = Vec::with_capacity(m);
        for p in 0..count {
            let perm = table.row(p);
            for level in 0..levels {
                let size = layout.block_size(level);
                for block_start in (0..m).step_by(size) {
                    key.clear();
                    key.extend_from_slice(&perm[block_start..block_start + size]);
                    key.sort_unstable();
                    let slot = subsets.slot_of(&key)?;
                    let slot = u32::try_from(slot).map_err(|_| {
                        Error::Resource("cache slot index exceeds u32".into())
                    })?;
                    for t in block_start..block_start + size {
                        slots[(p * m + t) * levels + level] = slot;
                    }
                }
            }
        }
        Ok(Self {
            n,
            m,
            block_sizes: (0..levels).map(|l| layout.block_size(l)).collect(),
            slots,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn levels(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn count(&self) -> u64 {
        (self.slots.len() / (self.m * self.levels())) as u64
    }

    /// Slots for one permutation: m × levels, row-major by position.
    pub fn row(&self, p: usize) -> &[u32] {
        let stride = self.m * self.levels();
        &self.slots[p * stride..(p + 1) * stride]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        f.write_all(&FORMAT_VERSION.to_le_bytes())?;
        f.write_all(&(self.n as u32).to_le_bytes())?;
        f.write_all(&(self.m as u32).to_le_bytes())?;
        f.write_all(&(self.levels() as u32).to_le_bytes())?;
        for &s in &self.block_sizes {
            f.write_all(&(s as u32).to_le_bytes())?;
        }
        f.write_all(&self.count().to_le_bytes())?;
        for &slot in &self.slots {
            f.write_all(&slot.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic)
            .map_err(|_| Error::Format("slot index file too short for header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Format(format!(
                "bad slot index magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = read_u32(&mut f)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "slot index format version {version} unsupported (expected {FORMAT_VERSION})"
            )));
        }
        let n = read_u32(&mut f)? as usize;
        let m = read_u32(&mut f)? as usize;
        let levels = read_u32(&mut f)? as usize;
        if m == 0 || levels == 0 || levels > 32 || m > 64 || n > 4096 {
            return Err(Error::Format(format!(
                "implausible slot index header: n={n} m={m} levels={levels}"
            )));
        }
        let mut block_sizes = Vec::with_capacity(levels);
        for _ in 0..levels {
            block_sizes.push(read_u32(&mut f)? as usize);
        }
        let count = read_u64(&mut f)?;
        let expected = arrangement_count(n, m)?;
        if count != expected {
            return Err(Error::Format(format!(
                "slot index declares {count} orderings, {expected} exist for ({n},{m})"
            )));
        }
        let total = (count as usize)
            .checked_mul(m)
            .and_then(|v| v.checked_mul(levels))
            .ok_or_else(|| Error::Resource("slot index too large".into()))?;
        let mut slots = vec![0u32; total];
        let mut buf = vec![0u8; total * 4];
        f.read_exact(&mut buf)
            .map_err(|_| Error::Format("slot index file truncated".into()))?;
        for (i, chunk) in buf.chunks_exact(4).enumerate() {
            slots[i] = u32::from_le_bytes(chunk.try_into().unwrap());
        }
        let mut tail = [0u8; 1];
        if f.read(&mut tail)? != 0 {
            return Err(Error::Format("slot index file has trailing bytes".into()));
        }
        Ok(Self {
            n,
            m,
            block_sizes,
            slots,
        })
    }
}

const MAGIC: &[u8; 4] = b"TRIX";
const FORMAT_VERSION: u32 = 1;

fn read_u32(f: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    f.read_exact(&mut b)
        .map_err(|_| Error::Format("slot index file truncated".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(f: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    f.read_exact(&mut b)
        .map_err(|_| Error::Format("slot index file truncated".into()))?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccm::subsets::enumerate_subsets;

    fn table(n: usize, m: usize) -> PermutationTable {
        PermutationTable::build(n, m, 1_000_000).unwrap()
    }

    #[test]
    fn full_slate_of_eight_has_forty_thousand_rows() {
        let t = table(8, 8);
        assert_eq!(t.count(), 40_320);
        assert_eq!(t.row(0), &[0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(t.row(1), &[0, 1, 2, 3, 4, 5, 7, 6]);
        let last = t.count() as usize - 1;
        assert_eq!(t.row(last), &[7, 6, 5, 4, 3, 2, 1, 0]);
    }

    #[test]
    fn four_from_five_has_one_hundred_twenty_rows() {
        let t = table(5, 4);
        assert_eq!(t.count(), 120);
        assert_eq!(t.row(0), &[0, 1, 2, 3]);
        assert_eq!(t.row(1), &[0, 1, 2, 4]);
        assert_eq!(t.row(119), &[4, 3, 2, 1]);
    }

    #[test]
    fn rank_round_trips_every_row() {
        for (n, m) in [(2usize, 2usize), (4, 4), (5, 4), (6, 3)] {
            let t = table(n, m);
            for p in 0..t.count() as usize {
                assert_eq!(t.rank_of(t.row(p)).unwrap(), p as u64);
            }
        }
    }

    #[test]
    fn rank_rejects_malformed_orderings() {
        let t = table(4, 4);
        assert!(t.rank_of(&[0, 1, 2]).is_err()); // wrong length
        assert!(t.rank_of(&[0, 1, 2, 2]).is_err()); // repeat
        assert!(t.rank_of(&[0, 1, 2, 4]).is_err()); // out of range
    }

    #[test]
    fn over_limit_enumeration_is_refused() {
        let err = PermutationTable::build(10, 8, 1_000_000).unwrap_err();
        assert!(matches!(err, Error::Resource(_)));
        assert!(err.to_string().contains("sampled"));
    }

    #[test]
    fn index_matrix_shapes_match_expectations() {
        let layout = TreeLayout::new(8).unwrap();
        let t = table(8, 8);
        let ix = IndexMatrix::build(&t, &layout).unwrap();
        assert_eq!(ix.count(), 40_320);
        assert_eq!(ix.m(), 8);
        assert_eq!(ix.levels(), 3);
        assert_eq!(ix.row(0).len(), 8 * 3);

        let layout = TreeLayout::new(4).unwrap();
        let t = table(5, 4);
        let ix = IndexMatrix::build(&t, &layout).unwrap();
        assert_eq!(ix.count(), 120);
        assert_eq!(ix.levels(), 2);
    }

    #[test]
    fn two_item_slate_points_both_rows_at_the_single_pair_slot() {
        let layout = TreeLayout::new(2).unwrap();
        let t = table(2, 2);
        let ix = IndexMatrix::build(&t, &layout).unwrap();
        assert_eq!(ix.count(), 2);
        assert_eq!(ix.levels(), 1);
        // Sole subset {0,1} occupies slot 0; both orderings reference it
        // at both positions.
        assert_eq!(ix.row(0), &[0, 0]);
        assert_eq!(ix.row(1), &[0, 0]);
    }

    #[test]
    fn every_slot_is_in_range_and_every_key_is_referenced() {
        let layout = TreeLayout::new(4).unwrap();
        let t = table(4, 4);
        let ix = IndexMatrix::build(&t, &layout).unwrap();
        let total = enumerate_subsets(4, 4).unwrap().len() as u32;
        let mut seen = vec![false; total as usize];
        for p in 0..ix.count() as usize {
            for &slot in ix.row(p) {
                assert!(slot < total);
                seen[slot as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s), "every cached subset must be used");
    }

    #[test]
    fn slots_agree_with_direct_subset_ranking() {
        let layout = TreeLayout::new(4).unwrap();
        let t = table(6, 4);
        let ix = IndexMatrix::build(&t, &layout).unwrap();
        let subsets = SubsetIndex::for_layout(6, &layout).unwrap();
        for p in [0usize, 17, 99, ix.count() as usize - 1] {
            let perm = t.row(p);
            let row = ix.row(p);
            for t_pos in 0..4 {
                // Level 0: whole slate; level 1: the size-2 block.
                let mut whole: Vec<u32> = perm.to_vec();
                whole.sort_unstable();
                assert_eq!(row[t_pos * 2], subsets.slot_of(&whole).unwrap() as u32);
                let b = t_pos / 2 * 2;
                let mut pair = vec![perm[b], perm[b + 1]];
                pair.sort_unstable();
                assert_eq!(row[t_pos * 2 + 1], subsets.slot_of(&pair).unwrap() as u32);
            }
        }
    }

    #[test]
    fn file_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("slots.bin");
        let layout = TreeLayout::new(4).unwrap();
        let t = table(5, 4);
        let ix = IndexMatrix::build(&t, &layout).unwrap();
        ix.save(&path).unwrap();
        let back = IndexMatrix::load(&path).unwrap();
        assert_eq!(back, ix);
    }

    #[test]
    fn corrupt_files_are_rejected_with_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let layout = TreeLayout::new(2).unwrap();
        let t = table(2, 2);
        let ix = IndexMatrix::build(&t, &layout).unwrap();

        let good = dir.path().join("good.bin");
        ix.save(&good).unwrap();
        let bytes = std::fs::read(&good).unwrap();

        let bad_magic = dir.path().join("bad_magic.bin");
        let mut b = bytes.clone();
        b[0] = b'X';
        std::fs::write(&bad_magic, &b).unwrap();
        assert!(matches!(IndexMatrix::load(&bad_magic), Err(Error::Format(_))));

        let truncated = dir.path().join("truncated.bin");
        std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(IndexMatrix::load(&truncated), Err(Error::Format(_))));

        let trailing = dir.path().join("trailing.bin");
        let mut b = bytes.clone();
        b.push(0);
        std::fs::write(&trailing, &b).unwrap();
        assert!(matches!(IndexMatrix::load(&trailing), Err(Error::Format(_))));

        let bad_version = dir.path().join("bad_version.bin");
        let mut b = bytes;
        b[4] = 99;
        std::fs::write(&bad_version, &b).unwrap();
        let err = IndexMatrix::load(&bad_version).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
