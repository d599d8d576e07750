//! The 64 KB slice storage array: 256 entries of four 64-byte blocks.
//! Reads of faulty blocks return corrupted data; the redirection layer is
//! what keeps traffic away from them.

use thiserror::Error;

use crate::faultmap::FaultMap;
use crate::{BLOCKS_PER_ENTRY, BLOCK_BYTES, SLICE_ENTRIES};

pub type BlockData = [u8; BLOCK_BYTES];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SliceError {
    #[error("entry {entry} block {block} out of range")]
    OutOfRange { entry: usize, block: usize },
}

pub struct SliceArray {
    storage: Vec<BlockData>,
    written: Vec<bool>,
    faults: FaultMap,
    /// Panic on writes to faulty blocks instead of just counting them.
    pub strict_faulty_writes: bool,
    pub faulty_write_count: u64,
    pub uninitialized_read_count: u64,
}

impl SliceArray {
    pub fn new(faults: FaultMap) -> Self {
        Self {
            storage: vec![[0; BLOCK_BYTES]; SLICE_ENTRIES * BLOCKS_PER_ENTRY],
            written: vec![false; SLICE_ENTRIES * BLOCKS_PER_ENTRY],
            faults,
            strict_faulty_writes: false,
            faulty_write_count: 0,
            uninitialized_read_count: 0,
        }
    }

    pub fn faults(&self) -> &FaultMap {
        &self.faults
    }

    fn index(entry: usize, block: usize) -> Result<usize, SliceError> {
        if entry >= SLICE_ENTRIES || block >= BLOCKS_PER_ENTRY {
            return Err(SliceError::OutOfRange { entry, block });
        }
        Ok(entry * BLOCKS_PER_ENTRY + block)
    }

    /// Read one block. Uninitialized blocks read as zeros; a faulty block
    /// returns its contents with byte 0 inverted, modelling a stuck cell
    /// past the repair pointer.
    pub fn read_block(&mut self, entry: usize, block: usize) -> Result<BlockData, SliceError> {
        let idx = Self::index(entry, block)?;
        if !self.written[idx] {
            self.uninitialized_read_count += 1;
        }
        let mut data = self.storage[idx];
        if self.faults.is_block_faulty(entry, block) {
            data[0] ^= 0xFF;
        }
        Ok(data)
    }

    pub fn write_block(
        &mut self,
        entry: usize,
        block: usize,
        data: &BlockData,
    ) -> Result<(), SliceError> {
        let idx = Self::index(entry, block)?;
        if self.faults.is_block_faulty(entry, block) {
            self.faulty_write_count += 1;
            assert!(
                !self.strict_faulty_writes,
                "write to faulty block ({entry}, {block})"
            );
        }
        self.storage[idx] = *data;
        self.written[idx] = true;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faultmap::{ReliabilityScenario, ScenarioKind};
    use crate::SLICE_BYTES;

    fn faulty_map() -> FaultMap {
        // Deterministic map with at least one faulty block somewhere.
        let map = FaultMap::generate(&ReliabilityScenario::preset(ScenarioKind::Comun), 1).unwrap();
        assert!(map.total_faulty_blocks() > 0);
        map
    }

    fn first_faulty(map: &FaultMap) -> (usize, usize) {
        for e in 0..SLICE_ENTRIES {
            for b in 0..BLOCKS_PER_ENTRY {
                if map.is_block_faulty(e, b) {
                    return (e, b);
                }
            }
        }
        unreachable!()
    }

    #[test]
    fn capacity_is_64_kib() {
        assert_eq!(SLICE_BYTES, 64 * 1024);
    }

    #[test]
    fn write_read_identity_on_reliable_block() {
        let mut slice = SliceArray::new(FaultMap::fault_free());
        let data: BlockData = core::array::from_fn(|i| i as u8);
        slice.write_block(3, 2, &data).unwrap();
        assert_eq!(slice.read_block(3, 2).unwrap(), data);
        assert_eq!(slice.faulty_write_count, 0);
    }

    #[test]
    fn faulty_block_reads_corrupted() {
        let map = faulty_map();
        let (e, b) = first_faulty(&map);
        let mut slice = SliceArray::new(map);
        let data: BlockData = [0xAB; 64];
        slice.write_block(e, b, &data).unwrap();
        let got = slice.read_block(e, b).unwrap();
        assert_ne!(got, data);
        assert_eq!(got[0], 0xAB ^ 0xFF);
        assert_eq!(&got[1..], &data[1..]);
        assert_eq!(slice.faulty_write_count, 1);
    }

    #[test]
    #[should_panic(expected = "write to faulty block")]
    fn strict_mode_asserts_on_faulty_write() {
        let map = faulty_map();
        let (e, b) = first_faulty(&map);
        let mut slice = SliceArray::new(map);
        slice.strict_faulty_writes = true;
        let _ = slice.write_block(e, b, &[0; 64]);
    }

    #[test]
    fn uninitialized_reads_zero_and_count() {
        let mut slice = SliceArray::new(FaultMap::fault_free());
        assert_eq!(slice.read_block(0, 0).unwrap(), [0; 64]);
        assert_eq!(slice.uninitialized_read_count, 1);
    }

    #[test]
    fn out_of_range_rejected() {
        let mut slice = SliceArray::new(FaultMap::fault_free());
        assert_eq!(
            slice.read_block(256, 0),
            Err(SliceError::OutOfRange { entry: 256, block: 0 })
        );
        assert_eq!(
            slice.write_block(0, 4, &[0; 64]),
            Err(SliceError::OutOfRange { entry: 0, block: 4 })
        );
    }
}
