// SPDX-License-Identifier: Apache-2.0

//! Stable counting sort of item indices by grid cell.
//!
//! Splatting and pillarization reduce every cell over its members in input
//! order. Grouping first lets cells reduce independently (and in parallel)
//! while performing exactly the floating-point operations of a sequential
//! scatter, so both paths agree bit for bit.

pub(crate) const DROPPED: u32 = u32::MAX;

pub(crate) struct CellBuckets {
    offsets: Vec<usize>,
    members: Vec<u32>,
}

impl CellBuckets {
    /// `cells[i]` is the cell of item `i`, or [`DROPPED`].
    pub(crate) fn build(cells: &[u32], n_cells: usize) -> Self {
        let mut offsets = vec![0usize; n_cells + 1];
        for &c in cells {
            if c != DROPPED {
                offsets[c as usize + 1] += 1;
            }
        }
        for i in 0..n_cells {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut members = vec![0u32; offsets[n_cells]];
        for (i, &c) in cells.iter().enumerate() {
            if c != DROPPED {
                let slot = &mut cursor[c as usize];
                members[*slot] = i as u32;
                *slot += 1;
            }
        }
        CellBuckets { offsets, members }
    }

    #[inline]
    pub(crate) fn members(&self, cell: usize) -> &[u32] {
        &self.members[self.offsets[cell]..self.offsets[cell + 1]]
    }

    pub(crate) fn retained(&self) -> usize {
        self.members.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_preserve_input_order() {
        let cells = [2, 0, DROPPED, 2, 1, 0];
        let b = CellBuckets::build(&cells, 3);
        assert_eq!(b.members(0), &[1, 5]);
        assert_eq!(b.members(1), &[4]);
        assert_eq!(b.members(2), &[0, 3]);
        assert_eq!(b.retained(), 5);
    }
}
