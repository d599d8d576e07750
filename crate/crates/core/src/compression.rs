//! Base-delta register compression: pattern detection, the 8-byte encoding
//! stored in a slice block, and the streaming compressor that produces the
//! speculative and final compressibility signals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{BLOCKS_PER_ENTRY, COMPONENTS_PER_BLOCK, COMPONENTS_PER_ENTRY, ENTRY_BYTES};

/// One register: 64 components of 32 bits, stored little-endian when
/// serialized to bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegisterEntry {
    components: [u32; COMPONENTS_PER_ENTRY],
}

impl RegisterEntry {
    pub fn new(components: [u32; COMPONENTS_PER_ENTRY]) -> Self {
        Self { components }
    }

    pub fn zeroed() -> Self {
        Self { components: [0; COMPONENTS_PER_ENTRY] }
    }

    /// All components equal to `value`.
    pub fn splat(value: u32) -> Self {
        Self { components: [value; COMPONENTS_PER_ENTRY] }
    }

    pub fn from_fn(f: impl FnMut(usize) -> u32) -> Self {
        Self { components: core::array::from_fn(f) }
    }

    pub fn components(&self) -> &[u32; COMPONENTS_PER_ENTRY] {
        &self.components
    }

    pub fn component(&self, index: usize) -> u32 {
        self.components[index]
    }

    /// Components of block `index` (16 of them).
    pub fn block(&self, index: usize) -> [u32; COMPONENTS_PER_BLOCK] {
        assert!(index < BLOCKS_PER_ENTRY, "block index {index} out of range");
        let start = index * COMPONENTS_PER_BLOCK;
        core::array::from_fn(|i| self.components[start + i])
    }

    pub fn from_blocks(blocks: [[u32; COMPONENTS_PER_BLOCK]; BLOCKS_PER_ENTRY]) -> Self {
        Self::from_fn(|k| blocks[k / COMPONENTS_PER_BLOCK][k % COMPONENTS_PER_BLOCK])
    }

    pub fn to_bytes(&self) -> [u8; ENTRY_BYTES] {
        let mut out = [0u8; ENTRY_BYTES];
        for (k, c) in self.components.iter().enumerate() {
            out[k * 4..k * 4 + 4].copy_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8; ENTRY_BYTES]) -> Self {
        Self::from_fn(|k| u32::from_le_bytes(bytes[k * 4..k * 4 + 4].try_into().unwrap()))
    }
}

impl std::fmt::Debug for RegisterEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "RegisterEntry[{:#010x} {:#010x} .. {:#010x}]",
            self.components[0], self.components[1], self.components[63]
        )
    }
}

/// Group lengths a TwoDelta pattern may use.
pub const GROUP_LENGTHS: [usize; 5] = [2, 4, 8, 16, 32];

/// Serialized size of a compressed register inside a slice block.
pub const COMPRESSED_BYTES: usize = 8;

/// A compressed register. `Scalar` wins over `Stride`, which wins over
/// `TwoDelta`; all arithmetic is modulo 2^32 and deltas must fit in a
/// signed byte.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompressedReg {
    Scalar { base: u32 },
    Stride { base: u32, delta: i8 },
    TwoDelta { base: u32, delta1: i8, delta2: i8, group_len: u8 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed pattern tag {0}")]
    BadTag(u8),
    #[error("bad group length exponent {0}")]
    BadGroupLen(u8),
    #[error("compressed image shorter than {COMPRESSED_BYTES} bytes")]
    Truncated,
}

impl CompressedReg {
    fn expand(&self, k: usize) -> u32 {
        let k = k as u32;
        match *self {
            CompressedReg::Scalar { base } => base,
            CompressedReg::Stride { base, delta } => {
                base.wrapping_add(k.wrapping_mul(delta as u32))
            }
            CompressedReg::TwoDelta { base, delta1, delta2, group_len } => {
                let g = group_len as u32;
                base.wrapping_add((k % g).wrapping_mul(delta1 as u32))
                    .wrapping_add((k / g).wrapping_mul(delta2 as u32))
            }
        }
    }

    /// Reconstruct the full register.
    pub fn decompress(&self) -> RegisterEntry {
        RegisterEntry::from_fn(|k| self.expand(k))
    }

    /// Reconstruct only block `index`, as the streaming decompressor emits it.
    pub fn block(&self, index: usize) -> [u32; COMPONENTS_PER_BLOCK] {
        assert!(index < BLOCKS_PER_ENTRY, "block index {index} out of range");
        core::array::from_fn(|i| self.expand(index * COMPONENTS_PER_BLOCK + i))
    }

    /// The four blocks in emission order, one per cycle in hardware.
    pub fn stream_blocks(&self) -> [[u32; COMPONENTS_PER_BLOCK]; BLOCKS_PER_ENTRY] {
        core::array::from_fn(|i| self.block(i))
    }

    /// Encoding: tag and group-length exponent in byte 0, base in bytes 1..5
    /// little-endian, deltas in bytes 5 and 6, byte 7 reserved.
    pub fn to_bytes(&self) -> [u8; COMPRESSED_BYTES] {
        let mut out = [0u8; COMPRESSED_BYTES];
        let (tag, base, d1, d2, log_g) = match *self {
            CompressedReg::Scalar { base } => (0u8, base, 0i8, 0i8, 0u8),
            CompressedReg::Stride { base, delta } => (1, base, delta, 0, 0),
            CompressedReg::TwoDelta { base, delta1, delta2, group_len } => {
                (2, base, delta1, delta2, group_len.trailing_zeros() as u8)
            }
        };
        out[0] = tag | (log_g << 2);
        out[1..5].copy_from_slice(&base.to_le_bytes());
        out[5] = d1 as u8;
        out[6] = d2 as u8;
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        if bytes.len() < COMPRESSED_BYTES {
            return Err(CodecError::Truncated);
        }
        let tag = bytes[0] & 0b11;
        let log_g = (bytes[0] >> 2) & 0b11111;
        let base = u32::from_le_bytes(bytes[1..5].try_into().unwrap());
        let d1 = bytes[5] as i8;
        let d2 = bytes[6] as i8;
        match tag {
            0 => Ok(CompressedReg::Scalar { base }),
            1 => Ok(CompressedReg::Stride { base, delta: d1 }),
            2 => {
                if !(1..=5).contains(&log_g) {
                    return Err(CodecError::BadGroupLen(log_g));
                }
                Ok(CompressedReg::TwoDelta { base, delta1: d1, delta2: d2, group_len: 1 << log_g })
            }
            t => Err(CodecError::BadTag(t)),
        }
    }
}

/// A wrapped u32 difference representable as a signed byte.
fn as_i8_delta(diff: u32) -> Option<i8> {
    let low = diff as u8 as i8;
    (low as i32 as u32 == diff).then_some(low)
}

fn matches_stride(c: &[u32], base: u32, delta: i8) -> bool {
    c.iter()
        .enumerate()
        .all(|(k, &v)| v == base.wrapping_add((k as u32).wrapping_mul(delta as u32)))
}

fn matches_two_delta(c: &[u32], base: u32, d1: i8, d2: i8, g: usize) -> bool {
    c.iter().enumerate().all(|(k, &v)| {
        v == base
            .wrapping_add(((k % g) as u32).wrapping_mul(d1 as u32))
            .wrapping_add(((k / g) as u32).wrapping_mul(d2 as u32))
    })
}

fn detect(c: &[u32]) -> Option<CompressedReg> {
    let base = c[0];
    if c.iter().all(|&v| v == base) {
        return Some(CompressedReg::Scalar { base });
    }
    if let Some(delta) = as_i8_delta(c[1].wrapping_sub(base)) {
        if matches_stride(c, base, delta) {
            return Some(CompressedReg::Stride { base, delta });
        }
    }
    for g in GROUP_LENGTHS {
        if g >= c.len() {
            break;
        }
        let d1 = as_i8_delta(c[1].wrapping_sub(base));
        let d2 = as_i8_delta(c[g].wrapping_sub(base));
        if let (Some(d1), Some(d2)) = (d1, d2) {
            if matches_two_delta(c, base, d1, d2, g) {
                return Some(CompressedReg::TwoDelta {
                    base,
                    delta1: d1,
                    delta2: d2,
                    group_len: g as u8,
                });
            }
        }
    }
    None
}

/// Pattern detection over a full register. Returns `None` when the value is
/// incompressible under all three patterns.
pub fn try_compress(entry: &RegisterEntry) -> Option<CompressedReg> {
    detect(entry.components())
}

/// Speculative compressibility from block 0 alone: the 16-component prefix
/// of every full-register pattern is itself scalar, stride or two-delta
/// with a group shorter than the block.
pub fn block0_speculation(block: &[u32; COMPONENTS_PER_BLOCK]) -> bool {
    detect(block).is_some()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StreamError {
    #[error("block {got} pushed where block {expected} was expected")]
    OutOfOrder { expected: usize, got: usize },
    #[error("block pushed after the verdict")]
    Finished,
}

/// What the compressor reports after consuming a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamEvent {
    /// After block 0: the speculative compressibility signal.
    Speculation { compressible: bool },
    /// Blocks 1 and 2.
    Progress,
    /// After block 3: the final verdict. `mispeculated` is set when the
    /// speculation and the verdict disagree.
    Verdict { result: Option<CompressedReg>, mispeculated: bool },
}

/// Streaming compressor fed one block per cycle, matching the hardware
/// unit that sits past the SIMD lanes.
#[derive(Debug, Clone)]
pub struct StreamingCompressor {
    lanes: [u32; COMPONENTS_PER_ENTRY],
    filled: usize,
    speculation: bool,
}

impl StreamingCompressor {
    pub fn new() -> Self {
        Self { lanes: [0; COMPONENTS_PER_ENTRY], filled: 0, speculation: false }
    }

    pub fn push_block(
        &mut self,
        index: usize,
        block: &[u32; COMPONENTS_PER_BLOCK],
    ) -> Result<StreamEvent, StreamError> {
        if self.filled >= BLOCKS_PER_ENTRY {
            return Err(StreamError::Finished);
        }
        if index != self.filled {
            return Err(StreamError::OutOfOrder { expected: self.filled, got: index });
        }
        self.lanes[index * COMPONENTS_PER_BLOCK..(index + 1) * COMPONENTS_PER_BLOCK]
            .copy_from_slice(block);
        self.filled += 1;
        Ok(match self.filled {
            1 => {
                self.speculation = block0_speculation(block);
                StreamEvent::Speculation { compressible: self.speculation }
            }
            4 => {
                let result = detect(&self.lanes);
                let mispeculated = self.speculation != result.is_some();
                StreamEvent::Verdict { result, mispeculated }
            }
            _ => StreamEvent::Progress,
        })
    }
}

impl Default for StreamingCompressor {
    fn default() -> Self {
        Self::new()
    }
}
