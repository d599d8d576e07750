//! Cycle-level model of one GPU SIMD register-file slice with runtime
//! base-delta register compression, redirection around faulty entries and
//! an LDS spill path, plus the conventional and voltage-smoothing baselines
//! it is measured against.

pub mod compression;
pub mod energy;
pub mod faultmap;
pub mod pipeline;
pub mod redirection;
pub mod slice;
pub mod trace;
pub mod tracegen;

/// Entries in one slice.
pub const SLICE_ENTRIES: usize = 256;
/// 64-byte blocks per entry.
pub const BLOCKS_PER_ENTRY: usize = 4;
/// 32-bit components per entry (one per thread of a full wavefront).
pub const COMPONENTS_PER_ENTRY: usize = 64;
/// Components per block.
pub const COMPONENTS_PER_BLOCK: usize = COMPONENTS_PER_ENTRY / BLOCKS_PER_ENTRY;
/// Bytes per block.
pub const BLOCK_BYTES: usize = 64;
/// Bytes per entry.
pub const ENTRY_BYTES: usize = BLOCKS_PER_ENTRY * BLOCK_BYTES;
/// Slice capacity in bytes.
pub const SLICE_BYTES: usize = SLICE_ENTRIES * ENTRY_BYTES;
