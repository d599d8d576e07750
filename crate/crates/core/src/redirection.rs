//! Register redirection state: the redirection table (TR) that maps physical
//! registers to slice locations, the USR occupancy bitmap with its two
//! priority encoders, preemptive allocation held across the pipeline, and
//! the LDS spill partition of last resort.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::compression::RegisterEntry;
use crate::faultmap::{EntryClass, FaultMap};
use crate::{BLOCKS_PER_ENTRY, ENTRY_BYTES, SLICE_ENTRIES};

/// TR geometry: one row per physical register.
pub const TR_ROWS: usize = SLICE_ENTRIES;
/// v + c + m + 8-bit entry index + 2-bit block index.
pub const TR_ROW_BITS: usize = 13;

/// Total TR storage in bytes.
pub const fn tr_storage_bytes() -> usize {
    TR_ROWS * TR_ROW_BITS / 8
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RedirError {
    #[error("spill partition exhausted")]
    SpillExhausted,
    #[error("spill slot {0} is not allocated")]
    SpillSlotUnallocated(u16),
    #[error("spill slot {0} freed twice")]
    SpillDoubleFree(u16),
    #[error("spill slot {0} read before write")]
    SpillReadBeforeWrite(u16),
    #[error("invariant breach: {0}")]
    Invariant(String),
}

/// One 13-bit redirection row. For spilled registers `entry_index` holds the
/// spill slot and `compressed` still records the value's compression state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrRow {
    pub valid: bool,
    pub compressed: bool,
    pub spilled: bool,
    pub entry_index: u8,
    pub block_index: u8,
}

impl TrRow {
    pub fn pack(&self) -> u16 {
        debug_assert!(self.block_index < BLOCKS_PER_ENTRY as u8);
        (self.valid as u16) << 12
            | (self.compressed as u16) << 11
            | (self.spilled as u16) << 10
            | (self.entry_index as u16) << 2
            | self.block_index as u16
    }

    pub fn unpack(bits: u16) -> TrRow {
        TrRow {
            valid: bits >> 12 & 1 != 0,
            compressed: bits >> 11 & 1 != 0,
            spilled: bits >> 10 & 1 != 0,
            entry_index: (bits >> 2) as u8,
            block_index: (bits & 0b11) as u8,
        }
    }
}

/// The redirection table: 256 rows indexed by physical register.
#[derive(Clone, Debug)]
pub struct RedirectionTable {
    rows: [TrRow; TR_ROWS],
}

impl RedirectionTable {
    pub fn new() -> Self {
        Self { rows: [TrRow::default(); TR_ROWS] }
    }

    pub fn lookup(&self, phys: u8) -> TrRow {
        self.rows[phys as usize]
    }

    pub fn set(&mut self, phys: u8, row: TrRow) {
        self.rows[phys as usize] = row;
    }

    pub fn valid_rows(&self) -> impl Iterator<Item = (u8, TrRow)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.valid)
            .map(|(i, r)| (i as u8, *r))
    }
}

impl Default for RedirectionTable {
    fn default() -> Self {
        Self::new()
    }
}

/// Occupancy bitmap over every block of the slice. Faulty blocks are
/// permanently occupied so the encoders can never hand them out.
#[derive(Clone, Debug)]
pub struct UsrBitmap {
    occupied: [[bool; BLOCKS_PER_ENTRY]; SLICE_ENTRIES],
    classes: [EntryClass; SLICE_ENTRIES],
    faulty: [[bool; BLOCKS_PER_ENTRY]; SLICE_ENTRIES],
}

impl UsrBitmap {
    pub fn new(faults: &FaultMap) -> Self {
        let mut occupied = [[false; BLOCKS_PER_ENTRY]; SLICE_ENTRIES];
        let mut faulty = [[false; BLOCKS_PER_ENTRY]; SLICE_ENTRIES];
        for e in 0..SLICE_ENTRIES {
            for b in 0..BLOCKS_PER_ENTRY {
                if faults.is_block_faulty(e, b) {
                    occupied[e][b] = true;
                    faulty[e][b] = true;
                }
            }
        }
        let classes = core::array::from_fn(|e| faults.entry_class(e));
        Self { occupied, classes, faulty }
    }

    pub fn is_occupied(&self, entry: usize, block: usize) -> bool {
        self.occupied[entry][block]
    }

    pub fn is_faulty(&self, entry: usize, block: usize) -> bool {
        self.faulty[entry][block]
    }

    pub fn entry_class(&self, entry: usize) -> EntryClass {
        self.classes[entry]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().flatten().filter(|&&o| o).count()
    }

    pub fn occupy(&mut self, entry: usize, block: usize) -> Result<(), RedirError> {
        if self.occupied[entry][block] {
            return Err(RedirError::Invariant(format!(
                "occupying already-occupied block ({entry}, {block})"
            )));
        }
        self.occupied[entry][block] = true;
        Ok(())
    }

    pub fn free(&mut self, entry: usize, block: usize) -> Result<(), RedirError> {
        if self.faulty[entry][block] {
            return Err(RedirError::Invariant(format!(
                "freeing faulty block ({entry}, {block})"
            )));
        }
        if !self.occupied[entry][block] {
            return Err(RedirError::Invariant(format!(
                "freeing free block ({entry}, {block})"
            )));
        }
        self.occupied[entry][block] = false;
        Ok(())
    }

    fn free_blocks(&self, entry: usize) -> usize {
        self.occupied[entry].iter().filter(|&&o| !o).count()
    }

    /// Slot for one compressed register. Priority: a free block inside a
    /// faulty entry, then a free block of a partially occupied reliable
    /// entry, then the first block of a fully free reliable entry. Lowest
    /// index wins at every step, as a priority encoder would resolve it.
    pub fn select_compressed_slot(&self) -> Option<(u8, u8)> {
        for e in 0..SLICE_ENTRIES {
            if self.classes[e].is_faulty() {
                if let Some(b) = self.occupied[e].iter().position(|&o| !o) {
                    return Some((e as u8, b as u8));
                }
            }
        }
        for e in 0..SLICE_ENTRIES {
            if !self.classes[e].is_faulty() {
                let free = self.free_blocks(e);
                if free > 0 && free < BLOCKS_PER_ENTRY {
                    let b = self.occupied[e].iter().position(|&o| !o).unwrap();
                    return Some((e as u8, b as u8));
                }
            }
        }
        for e in 0..SLICE_ENTRIES {
            if !self.classes[e].is_faulty() && self.free_blocks(e) == BLOCKS_PER_ENTRY {
                return Some((e as u8, 0));
            }
        }
        None
    }

    /// Lowest fully free reliable entry, for one uncompressed register.
    pub fn select_reliable_entry(&self) -> Option<u8> {
        (0..SLICE_ENTRIES)
            .find(|&e| !self.classes[e].is_faulty() && self.free_blocks(e) == BLOCKS_PER_ENTRY)
            .map(|e| e as u8)
    }
}

/// Spill storage: one half of the LDS, one uncompressed register image per
/// 256-byte slot, slot k at byte offset 256 * k inside the partition.
#[derive(Clone, Debug)]
pub struct SpillPartition {
    capacity: usize,
    free: BTreeSet<u16>,
    data: Vec<Option<RegisterEntry>>,
}

/// Slots in half of a 64 KB LDS.
pub const DEFAULT_SPILL_SLOTS: usize = 64 * 1024 / 2 / ENTRY_BYTES;

impl SpillPartition {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity <= 256, "spill slots must fit the 8-bit TR entry field");
        Self {
            capacity,
            free: (0..capacity as u16).collect(),
            data: vec![None; capacity],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn in_use(&self) -> usize {
        self.capacity - self.free.len()
    }

    pub fn used_slots(&self) -> impl Iterator<Item = u16> + '_ {
        (0..self.capacity as u16).filter(|s| !self.free.contains(s))
    }

    pub fn slot_offset_bytes(slot: u16) -> u32 {
        slot as u32 * ENTRY_BYTES as u32
    }

    /// Lowest free slot.
    pub fn alloc(&mut self) -> Option<u16> {
        let slot = *self.free.iter().next()?;
        self.free.remove(&slot);
        Some(slot)
    }

    pub fn release(&mut self, slot: u16) -> Result<(), RedirError> {
        if slot as usize >= self.capacity {
            return Err(RedirError::SpillSlotUnallocated(slot));
        }
        if !self.free.insert(slot) {
            return Err(RedirError::SpillDoubleFree(slot));
        }
        self.data[slot as usize] = None;
        Ok(())
    }

    pub fn write(&mut self, slot: u16, entry: &RegisterEntry) -> Result<(), RedirError> {
        if slot as usize >= self.capacity || self.free.contains(&slot) {
            return Err(RedirError::SpillSlotUnallocated(slot));
        }
        self.data[slot as usize] = Some(*entry);
        Ok(())
    }

    pub fn read(&self, slot: u16) -> Result<RegisterEntry, RedirError> {
        if slot as usize >= self.capacity || self.free.contains(&slot) {
            return Err(RedirError::SpillSlotUnallocated(slot));
        }
        self.data[slot as usize].ok_or(RedirError::SpillReadBeforeWrite(slot))
    }
}

/// Allocations a destination register holds from issue to writeback. Both
/// encoder results are captured against the same pre-issue state, so the
/// held block set is their union; a spill slot is reserved when a needed
/// slice candidate is missing.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PreemptiveRedirection {
    pub compressed_slot: Option<(u8, u8)>,
    pub reliable_entry: Option<u8>,
    pub spill_slot: Option<u16>,
    held: BTreeSet<(u8, u8)>,
}

impl PreemptiveRedirection {
    pub fn held_blocks(&self) -> &BTreeSet<(u8, u8)> {
        &self.held
    }
}

/// Where a committed write landed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Location {
    Compressed { entry: u8, block: u8 },
    Uncompressed { entry: u8 },
    Spilled { slot: u16 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WriteKind {
    Regular,
    RedirectReliable,
    RedirectFaulty,
    Spill,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CommitOutcome {
    pub location: Location,
    pub kind: WriteKind,
    /// A new redirection was selected (rsel); false for in-place writes.
    pub redirected: bool,
    pub tr_written: bool,
}

/// TR, bitmap and spill partition operated together under the writeback
/// protocol.
#[derive(Clone, Debug)]
pub struct RedirectionUnit {
    pub table: RedirectionTable,
    pub bitmap: UsrBitmap,
    pub spill: SpillPartition,
}

impl RedirectionUnit {
    pub fn new(faults: &FaultMap, spill_slots: usize) -> Self {
        Self {
            table: RedirectionTable::new(),
            bitmap: UsrBitmap::new(faults),
            spill: SpillPartition::new(spill_slots),
        }
    }

    /// Reserve, at issue, everything the writeback of `phys` could need:
    /// both kinds of slice location for a first write or a spilled row, the
    /// complementary kind otherwise. Reserved blocks are marked occupied at
    /// once so concurrent in-flight writes cannot double-book them.
    pub fn prealloc(&mut self, phys: u8) -> PreemptiveRedirection {
        let row = self.table.lookup(phys);
        let (want_compressed, want_reliable) = if !row.valid || row.spilled {
            (true, true)
        } else if row.compressed {
            (false, true)
        } else {
            (true, false)
        };
        let compressed_slot =
            if want_compressed { self.bitmap.select_compressed_slot() } else { None };
        let reliable_entry = if want_reliable { self.bitmap.select_reliable_entry() } else { None };
        let mut held = BTreeSet::new();
        if let Some((e, b)) = compressed_slot {
            held.insert((e, b));
        }
        if let Some(e) = reliable_entry {
            for b in 0..BLOCKS_PER_ENTRY as u8 {
                held.insert((e, b));
            }
        }
        for &(e, b) in &held {
            self.bitmap
                .occupy(e as usize, b as usize)
                .expect("encoder selected a free block");
        }
        let missing_candidate = (want_compressed && compressed_slot.is_none())
            || (want_reliable && reliable_entry.is_none());
        let spill_slot =
            if !row.spilled && missing_candidate { self.spill.alloc() } else { None };
        PreemptiveRedirection { compressed_slot, reliable_entry, spill_slot, held }
    }

    fn release_held(&mut self, pre: &PreemptiveRedirection, keep: &BTreeSet<(u8, u8)>) {
        for &(e, b) in pre.held.difference(keep) {
            self.bitmap
                .free(e as usize, b as usize)
                .expect("held blocks stay occupied until release");
        }
    }

    fn release_spill_hold(&mut self, pre: &PreemptiveRedirection) {
        if let Some(slot) = pre.spill_slot {
            self.spill.release(slot).expect("held spill slot stays allocated");
        }
    }

    fn free_old_location(&mut self, row: TrRow) -> Result<(), RedirError> {
        if !row.valid {
            return Ok(());
        }
        if row.spilled {
            self.spill.release(row.entry_index as u16)
        } else if row.compressed {
            self.bitmap.free(row.entry_index as usize, row.block_index as usize)
        } else {
            for b in 0..BLOCKS_PER_ENTRY {
                self.bitmap.free(row.entry_index as usize, b)?;
            }
            Ok(())
        }
    }

    /// Resolve the write of `phys` once its compression state `c_compr` is
    /// known. In-place when the state matches a valid slice row; otherwise
    /// consume the matching preemptive allocation, falling back to the spill
    /// partition, and release whatever else was held.
    pub fn commit(
        &mut self,
        phys: u8,
        c_compr: bool,
        pre: PreemptiveRedirection,
    ) -> Result<CommitOutcome, RedirError> {
        let row = self.table.lookup(phys);

        if row.valid && !row.spilled && row.compressed == c_compr {
            self.release_held(&pre, &BTreeSet::new());
            self.release_spill_hold(&pre);
            let location = if c_compr {
                Location::Compressed { entry: row.entry_index, block: row.block_index }
            } else {
                Location::Uncompressed { entry: row.entry_index }
            };
            return Ok(CommitOutcome {
                location,
                kind: WriteKind::Regular,
                redirected: false,
                tr_written: false,
            });
        }

        if c_compr {
            if let Some((e, b)) = pre.compressed_slot {
                let keep = BTreeSet::from([(e, b)]);
                self.release_held(&pre, &keep);
                self.release_spill_hold(&pre);
                self.free_old_location(row)?;
                self.table.set(
                    phys,
                    TrRow {
                        valid: true,
                        compressed: true,
                        spilled: false,
                        entry_index: e,
                        block_index: b,
                    },
                );
                let kind = if self.bitmap.entry_class(e as usize).is_faulty() {
                    WriteKind::RedirectFaulty
                } else {
                    WriteKind::RedirectReliable
                };
                return Ok(CommitOutcome {
                    location: Location::Compressed { entry: e, block: b },
                    kind,
                    redirected: true,
                    tr_written: true,
                });
            }
        } else if let Some(e) = pre.reliable_entry {
            let keep: BTreeSet<_> = (0..BLOCKS_PER_ENTRY as u8).map(|b| (e, b)).collect();
            self.release_held(&pre, &keep);
            self.release_spill_hold(&pre);
            self.free_old_location(row)?;
            self.table.set(
                phys,
                TrRow {
                    valid: true,
                    compressed: false,
                    spilled: false,
                    entry_index: e,
                    block_index: 0,
                },
            );
            return Ok(CommitOutcome {
                location: Location::Uncompressed { entry: e },
                kind: WriteKind::RedirectReliable,
                redirected: true,
                tr_written: true,
            });
        }

        // No slice candidate for this state. A spilled row stays in its slot;
        // anything else falls back to the spill partition.
        self.release_held(&pre, &BTreeSet::new());
        if row.valid && row.spilled {
            self.release_spill_hold(&pre);
            let tr_written = row.compressed != c_compr;
            if tr_written {
                self.table.set(phys, TrRow { compressed: c_compr, ..row });
            }
            return Ok(CommitOutcome {
                location: Location::Spilled { slot: row.entry_index as u16 },
                kind: WriteKind::Spill,
                redirected: false,
                tr_written,
            });
        }
        let slot = match pre.spill_slot {
            Some(slot) => slot,
            None => self.spill.alloc().ok_or(RedirError::SpillExhausted)?,
        };
        self.free_old_location(row)?;
        self.table.set(
            phys,
            TrRow {
                valid: true,
                compressed: c_compr,
                spilled: true,
                entry_index: slot as u8,
                block_index: 0,
            },
        );
        Ok(CommitOutcome {
            location: Location::Spilled { slot },
            kind: WriteKind::Spill,
            redirected: true,
            tr_written: true,
        })
    }

    /// Invalidate every row of a released register window and free whatever
    /// it occupied. Returns (rows scanned, rows that were valid).
    pub fn release_window(
        &mut self,
        base: u8,
        len: usize,
    ) -> Result<(usize, usize), RedirError> {
        let mut freed = 0;
        for offset in 0..len {
            let phys = base as usize + offset;
            debug_assert!(phys < TR_ROWS);
            let row = self.table.lookup(phys as u8);
            if row.valid {
                self.free_old_location(row)?;
                freed += 1;
            }
            self.table.set(phys as u8, TrRow::default());
        }
        Ok((len, freed))
    }

    /// Exact conservation check: occupied blocks must be the disjoint union
    /// of faulty blocks, blocks held by in-flight writes and blocks of valid
    /// non-spilled TR rows; spill slots in use must be the valid spilled
    /// rows plus held slots.
    pub fn check_conservation<'a>(
        &self,
        holds: impl IntoIterator<Item = &'a PreemptiveRedirection>,
    ) -> Result<(), RedirError> {
        let breach = |msg: String| Err(RedirError::Invariant(msg));
        let mut expected = [[0u8; BLOCKS_PER_ENTRY]; SLICE_ENTRIES];
        for e in 0..SLICE_ENTRIES {
            for b in 0..BLOCKS_PER_ENTRY {
                expected[e][b] = self.bitmap.is_faulty(e, b) as u8;
            }
        }
        let mut held_spill = BTreeSet::new();
        for pre in holds {
            for &(e, b) in pre.held_blocks() {
                expected[e as usize][b as usize] += 1;
            }
            if let Some(slot) = pre.spill_slot {
                if !held_spill.insert(slot) {
                    return breach(format!("spill slot {slot} held twice"));
                }
            }
        }
        let mut row_spill = BTreeSet::new();
        for (phys, row) in self.table.valid_rows() {
            if row.spilled {
                if !row_spill.insert(row.entry_index as u16) {
                    return breach(format!("spill slot {} referenced twice", row.entry_index));
                }
                continue;
            }
            if row.compressed {
                expected[row.entry_index as usize][row.block_index as usize] += 1;
            } else {
                for b in 0..BLOCKS_PER_ENTRY {
                    expected[row.entry_index as usize][b] += 1;
                }
            }
            let _ = phys;
        }
        for e in 0..SLICE_ENTRIES {
            for b in 0..BLOCKS_PER_ENTRY {
                match (expected[e][b], self.bitmap.is_occupied(e, b)) {
                    (0, false) | (1, true) => {}
                    (n, occupied) => {
                        return breach(format!(
                            "block ({e}, {b}): {n} owners, occupied={occupied}"
                        ))
                    }
                }
            }
        }
        if row_spill.intersection(&held_spill).next().is_some() {
            return breach("spill slot both held and referenced by a row".into());
        }
        let expected_spill: BTreeSet<u16> =
            row_spill.union(&held_spill).copied().collect();
        let actual_spill: BTreeSet<u16> = self.spill.used_slots().collect();
        if expected_spill != actual_spill {
            return breach(format!(
                "spill usage mismatch: expected {expected_spill:?}, in use {actual_spill:?}"
            ));
        }
        Ok(())
    }

    /// Terminal condition once every window is released.
    pub fn is_quiescent(&self) -> bool {
        self.table.valid_rows().next().is_none()
            && self.spill.in_use() == 0
            && (0..SLICE_ENTRIES).all(|e| {
                (0..BLOCKS_PER_ENTRY)
                    .all(|b| self.bitmap.is_occupied(e, b) == self.bitmap.is_faulty(e, b))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faultmap::{ReliabilityScenario, ScenarioKind};

    fn custom_map(mut f: impl FnMut(usize) -> [bool; 4]) -> FaultMap {
        let blocks: [[bool; 4]; SLICE_ENTRIES] = core::array::from_fn(&mut f);
        FaultMap::from_blocks(blocks, ScenarioKind::Comun, Some(419), 0).unwrap()
    }

    fn all_reliable() -> FaultMap {
        FaultMap::fault_free()
    }

    #[test]
    fn tr_storage_is_416_bytes() {
        assert_eq!(TR_ROW_BITS, 13);
        assert_eq!(TR_ROWS, 256);
        assert_eq!(tr_storage_bytes(), 416);
    }

    #[test]
    fn tr_row_packs_into_13_bits() {
        let row = TrRow {
            valid: true,
            compressed: false,
            spilled: true,
            entry_index: 0xA5,
            block_index: 2,
        };
        let bits = row.pack();
        assert!(bits < 1 << TR_ROW_BITS);
        assert_eq!(TrRow::unpack(bits), row);
        assert_eq!(TrRow::unpack(TrRow::default().pack()), TrRow::default());
    }

    #[test]
    fn selector_prefers_faulty_entries() {
        // Entry 3 is Faulty2 with blocks 0 and 1 bad; its block 2 must win
        // over every reliable entry.
        let map = custom_map(|e| [e == 3, e == 3, false, false]);
        let bitmap = UsrBitmap::new(&map);
        assert_eq!(bitmap.select_compressed_slot(), Some((3, 2)));
        assert_eq!(bitmap.select_reliable_entry(), Some(0));
    }

    #[test]
    fn selector_prefers_partial_reliable_over_free_reliable() {
        let map = all_reliable();
        let mut bitmap = UsrBitmap::new(&map);
        bitmap.occupy(5, 0).unwrap();
        assert_eq!(bitmap.select_compressed_slot(), Some((5, 1)));
        assert_eq!(bitmap.select_reliable_entry(), Some(0));
    }

    #[test]
    fn selector_exhaustion() {
        let map = custom_map(|_| [true; 4]);
        let bitmap = UsrBitmap::new(&map);
        assert_eq!(bitmap.select_compressed_slot(), None);
        assert_eq!(bitmap.select_reliable_entry(), None);
    }

    #[test]
    fn prealloc_first_write_on_empty_reliable_slice() {
        let mut unit = RedirectionUnit::new(&all_reliable(), DEFAULT_SPILL_SLOTS);
        let pre = unit.prealloc(0);
        // Both encoders ran against the empty state, so both land on entry 0.
        assert_eq!(pre.compressed_slot, Some((0, 0)));
        assert_eq!(pre.reliable_entry, Some(0));
        assert_eq!(pre.spill_slot, None);
        assert_eq!(pre.held_blocks().len(), 4);
        assert_eq!(unit.bitmap.occupied_count(), 4);
        unit.check_conservation([&pre]).unwrap();
    }

    #[test]
    fn prealloc_complement_of_current_state() {
        let mut unit = RedirectionUnit::new(&all_reliable(), DEFAULT_SPILL_SLOTS);
        unit.bitmap.occupy(9, 1).unwrap();
        unit.table.set(
            7,
            TrRow { valid: true, compressed: true, spilled: false, entry_index: 9, block_index: 1 },
        );
        let pre = unit.prealloc(7);
        assert_eq!(pre.compressed_slot, None);
        assert!(pre.reliable_entry.is_some());

        unit.table.set(
            8,
            TrRow { valid: true, compressed: false, spilled: false, entry_index: 3, block_index: 0 },
        );
        for b in 0..4 {
            unit.bitmap.occupy(3, b).unwrap();
        }
        let pre = unit.prealloc(8);
        assert!(pre.compressed_slot.is_some());
        assert_eq!(pre.reliable_entry, None);
    }

    #[test]
    fn commit_in_place_when_state_matches() {
        let mut unit = RedirectionUnit::new(&all_reliable(), DEFAULT_SPILL_SLOTS);
        unit.bitmap.occupy(9, 1).unwrap();
        let row =
            TrRow { valid: true, compressed: true, spilled: false, entry_index: 9, block_index: 1 };
        unit.table.set(7, row);
        let pre = unit.prealloc(7);
        let out = unit.commit(7, true, pre).unwrap();
        assert_eq!(out.kind, WriteKind::Regular);
        assert_eq!(out.location, Location::Compressed { entry: 9, block: 1 });
        assert!(!out.redirected);
        assert!(!out.tr_written);
        assert_eq!(unit.table.lookup(7), row);
        assert_eq!(unit.bitmap.occupied_count(), 1);
        unit.check_conservation([]).unwrap();
    }

    #[test]
    fn commit_state_change_frees_one_block_occupies_four() {
        let mut unit = RedirectionUnit::new(&all_reliable(), DEFAULT_SPILL_SLOTS);
        unit.bitmap.occupy(9, 1).unwrap();
        unit.table.set(
            7,
            TrRow { valid: true, compressed: true, spilled: false, entry_index: 9, block_index: 1 },
        );
        let before = unit.bitmap.occupied_count();
        let pre = unit.prealloc(7);
        let out = unit.commit(7, false, pre).unwrap();
        assert_eq!(out.kind, WriteKind::RedirectReliable);
        assert!(matches!(out.location, Location::Uncompressed { .. }));
        assert_eq!(unit.bitmap.occupied_count(), before + 3);
        let row = unit.table.lookup(7);
        assert!(row.valid && !row.compressed && !row.spilled);
        unit.check_conservation([]).unwrap();
    }

    #[test]
    fn commit_first_compressed_write_lands_on_faulty_entry() {
        // Entry 200 is the only faulty entry (blocks 1 and 2 bad), so the
        // first compressed write must take its block 0.
        let map = custom_map(|e| [false, e == 200, e == 200, false]);
        let mut unit = RedirectionUnit::new(&map, DEFAULT_SPILL_SLOTS);
        let pre = unit.prealloc(0);
        assert_eq!(pre.compressed_slot, Some((200, 0)));
        let out = unit.commit(0, true, pre).unwrap();
        assert_eq!(out.kind, WriteKind::RedirectFaulty);
        assert_eq!(
            unit.table.lookup(0),
            TrRow { valid: true, compressed: true, spilled: false, entry_index: 200, block_index: 0 }
        );
        unit.check_conservation([]).unwrap();
    }

    #[test]
    fn commit_spills_when_slice_is_full() {
        let map = custom_map(|_| [true; 4]);
        let mut unit = RedirectionUnit::new(&map, 4);
        let pre = unit.prealloc(0);
        assert_eq!(pre.compressed_slot, None);
        assert_eq!(pre.reliable_entry, None);
        assert_eq!(pre.spill_slot, Some(0));
        let out = unit.commit(0, true, pre).unwrap();
        assert_eq!(out.kind, WriteKind::Spill);
        assert_eq!(out.location, Location::Spilled { slot: 0 });
        let row = unit.table.lookup(0);
        assert!(row.valid && row.spilled && row.compressed);
        assert_eq!(row.entry_index, 0);
        assert_eq!(unit.spill.in_use(), 1);
        unit.check_conservation([]).unwrap();
    }

    #[test]
    fn commit_spill_exhaustion_is_an_error() {
        let map = custom_map(|_| [true; 4]);
        let mut unit = RedirectionUnit::new(&map, 1);
        let pre = unit.prealloc(0);
        unit.commit(0, true, pre).unwrap();
        let pre = unit.prealloc(1);
        assert_eq!(pre.spill_slot, None);
        assert_eq!(unit.commit(1, false, pre), Err(RedirError::SpillExhausted));
    }

    #[test]
    fn spilled_row_unspills_once_a_slot_frees_up() {
        let map = custom_map(|_| [true; 4]);
        let mut unit = RedirectionUnit::new(&map, 4);
        let pre = unit.prealloc(0);
        unit.commit(0, true, pre).unwrap();
        assert_eq!(unit.spill.in_use(), 1);

        // Nothing freed yet: the rewrite keeps its slot and only the c bit
        // may change.
        let pre = unit.prealloc(0);
        assert_eq!(pre.spill_slot, None);
        let out = unit.commit(0, false, pre).unwrap();
        assert_eq!(out.kind, WriteKind::Spill);
        assert!(!out.redirected);
        assert!(out.tr_written);
        let row = unit.table.lookup(0);
        assert!(row.spilled && !row.compressed);
        assert_eq!(unit.spill.in_use(), 1);
        unit.check_conservation([]).unwrap();
    }

    #[test]
    fn spill_partition_layout_and_lifecycle() {
        assert_eq!(DEFAULT_SPILL_SLOTS, 128);
        assert_eq!(SpillPartition::slot_offset_bytes(0), 0);
        assert_eq!(SpillPartition::slot_offset_bytes(5), 1280);
        let mut spill = SpillPartition::new(2);
        assert_eq!(spill.alloc(), Some(0));
        assert_eq!(spill.alloc(), Some(1));
        assert_eq!(spill.alloc(), None);
        let entry = RegisterEntry::splat(0x77);
        spill.write(0, &entry).unwrap();
        assert_eq!(spill.read(0).unwrap(), entry);
        assert_eq!(spill.read(1), Err(RedirError::SpillReadBeforeWrite(1)));
        spill.release(0).unwrap();
        assert_eq!(spill.release(0), Err(RedirError::SpillDoubleFree(0)));
        assert_eq!(spill.write(0, &entry), Err(RedirError::SpillSlotUnallocated(0)));
        assert_eq!(spill.alloc(), Some(0));
    }

    #[test]
    fn release_window_returns_to_fault_only_occupancy() {
        let map = custom_map(|e| if e % 5 == 0 { [true, true, false, false] } else { [false; 4] });
        let mut unit = RedirectionUnit::new(&map, DEFAULT_SPILL_SLOTS);
        for phys in 0..32u8 {
            let pre = unit.prealloc(phys);
            unit.commit(phys, phys % 3 != 0, pre).unwrap();
        }
        unit.check_conservation([]).unwrap();
        assert!(!unit.is_quiescent());
        let (scanned, freed) = unit.release_window(0, 32).unwrap();
        assert_eq!((scanned, freed), (32, 32));
        assert!(unit.is_quiescent());
        let (_, freed) = unit.release_window(0, 32).unwrap();
        assert_eq!(freed, 0);
    }

    #[test]
    fn conservation_catches_corruption() {
        let mut unit = RedirectionUnit::new(&all_reliable(), DEFAULT_SPILL_SLOTS);
        let pre = unit.prealloc(0);
        unit.commit(0, true, pre).unwrap();
        unit.bitmap.occupy(100, 0).unwrap();
        assert!(matches!(unit.check_conservation([]), Err(RedirError::Invariant(_))));
    }

    #[test]
    fn commit_consumes_overlapping_hold_cleanly() {
        // Empty reliable slice: both encoders pick entry 0. Whichever state
        // the write resolves to, the other hold must release without
        // double-freeing the shared block.
        for c_compr in [true, false] {
            let mut unit = RedirectionUnit::new(&all_reliable(), DEFAULT_SPILL_SLOTS);
            let pre = unit.prealloc(0);
            let out = unit.commit(0, c_compr, pre).unwrap();
            let expect = if c_compr { 1 } else { 4 };
            assert_eq!(unit.bitmap.occupied_count(), expect);
            assert_eq!(out.redirected, true);
            unit.check_conservation([]).unwrap();
        }
    }
}
