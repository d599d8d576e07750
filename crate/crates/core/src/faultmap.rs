//! Fault-map generation for a slice operating below Vmin. Each entry draws a
//! faulty-bit class from the scenario distribution; with one repair pointer
//! per entry, classes 0 and 1 stay reliable and a class of i >= 2 renders i
//! blocks unusable (4 at most).

use std::io::{BufRead, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{BLOCKS_PER_ENTRY, SLICE_ENTRIES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Comun,
    Agrupado,
    Disperso,
    Conventional,
    Smoothing,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Comun,
        ScenarioKind::Agrupado,
        ScenarioKind::Disperso,
        ScenarioKind::Conventional,
        ScenarioKind::Smoothing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Comun => "comun",
            ScenarioKind::Agrupado => "agrupado",
            ScenarioKind::Disperso => "disperso",
            ScenarioKind::Conventional => "conventional",
            ScenarioKind::Smoothing => "smoothing",
        }
    }

    pub fn parse(name: &str) -> Option<ScenarioKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FaultMapError {
    #[error("class distribution sums to {0}, expected 1.0")]
    BadDistribution(f64),
    #[error("negative probability in class distribution")]
    NegativeProbability,
    #[error("missing fault map header")]
    MissingHeader,
    #[error("bad fault map header: {0}")]
    BadHeader(String),
    #[error("row {row}: expected {expected} block flags, got {got}")]
    BadRowLength { row: usize, expected: usize, got: usize },
    #[error("row {row}: invalid flag character {ch:?}")]
    BadFlag { row: usize, ch: char },
    #[error("row {row}: {count} faulty blocks is not reachable with one repair pointer")]
    UnreachableRow { row: usize, count: usize },
    #[error("expected {SLICE_ENTRIES} rows, got {0}")]
    BadRowCount(usize),
    #[error("io: {0}")]
    Io(String),
}

/// Faulty-bit class of one entry after post-fabrication test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitClass {
    Bits0,
    Bits1,
    Bits2,
    Bits3,
    Bits4Plus,
}

impl BitClass {
    pub const ALL: [BitClass; 5] =
        [BitClass::Bits0, BitClass::Bits1, BitClass::Bits2, BitClass::Bits3, BitClass::Bits4Plus];

    /// Blocks lost once the single repair pointer is spent.
    pub fn faulty_blocks(self) -> usize {
        match self {
            BitClass::Bits0 | BitClass::Bits1 => 0,
            BitClass::Bits2 => 2,
            BitClass::Bits3 => 3,
            BitClass::Bits4Plus => 4,
        }
    }

    pub fn entry_class(self) -> EntryClass {
        EntryClass::from_faulty_blocks(self.faulty_blocks()).unwrap()
    }
}

/// Entry classification as the redirection hardware sees it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryClass {
    Reliable,
    Faulty2,
    Faulty3,
    Dead,
}

impl EntryClass {
    pub fn from_faulty_blocks(count: usize) -> Option<EntryClass> {
        match count {
            0 => Some(EntryClass::Reliable),
            2 => Some(EntryClass::Faulty2),
            3 => Some(EntryClass::Faulty3),
            4 => Some(EntryClass::Dead),
            _ => None,
        }
    }

    pub fn faulty_blocks(self) -> usize {
        match self {
            EntryClass::Reliable => 0,
            EntryClass::Faulty2 => 2,
            EntryClass::Faulty3 => 3,
            EntryClass::Dead => 4,
        }
    }

    pub fn is_faulty(self) -> bool {
        self != EntryClass::Reliable
    }
}

/// A voltage operating point with its faulty-bit class distribution
/// (probabilities for 0, 1, 2, 3 and >=4 faulty bits per entry).
#[derive(Clone, Debug, PartialEq)]
pub struct ReliabilityScenario {
    pub kind: ScenarioKind,
    /// Supply voltage; `None` means nominal (set by the energy config).
    pub vdd_mv: Option<u32>,
    class_distribution: [f64; 5],
}

impl ReliabilityScenario {
    pub fn preset(kind: ScenarioKind) -> Self {
        let (vdd_mv, class_distribution) = match kind {
            ScenarioKind::Comun => (Some(419), [0.34, 0.33, 0.20, 0.10, 0.03]),
            ScenarioKind::Agrupado => (Some(497), [0.43, 0.20, 0.12, 0.10, 0.15]),
            ScenarioKind::Disperso => (Some(371), [0.26, 0.35, 0.23, 0.12, 0.04]),
            ScenarioKind::Conventional => (None, [1.0, 0.0, 0.0, 0.0, 0.0]),
            ScenarioKind::Smoothing => (Some(600), [1.0, 0.0, 0.0, 0.0, 0.0]),
        };
        Self { kind, vdd_mv, class_distribution }
    }

    pub fn with_distribution(
        kind: ScenarioKind,
        vdd_mv: Option<u32>,
        class_distribution: [f64; 5],
    ) -> Result<Self, FaultMapError> {
        let s = Self { kind, vdd_mv, class_distribution };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), FaultMapError> {
        if self.class_distribution.iter().any(|&p| p < 0.0) {
            return Err(FaultMapError::NegativeProbability);
        }
        let sum: f64 = self.class_distribution.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FaultMapError::BadDistribution(sum));
        }
        Ok(())
    }

    pub fn class_distribution(&self) -> [f64; 5] {
        self.class_distribution
    }

    /// Probability that an entry ends up with at least one faulty block.
    pub fn expected_faulty_fraction(&self) -> f64 {
        self.class_distribution[2..].iter().sum()
    }

    pub fn is_fault_free(&self) -> bool {
        self.expected_faulty_fraction() == 0.0
    }

    /// One draw from the class distribution.
    pub fn sample_bit_class(&self, rng: &mut impl Rng) -> BitClass {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (p, class) in self.class_distribution.iter().zip(BitClass::ALL) {
            acc += p;
            if r < acc {
                return class;
            }
        }
        BitClass::Bits4Plus
    }
}

/// Per-block fault flags for one slice, plus the provenance recorded in the
/// map file header.
#[derive(Clone, Debug, PartialEq)]
pub struct FaultMap {
    blocks: [[bool; BLOCKS_PER_ENTRY]; SLICE_ENTRIES],
    pub scenario: ScenarioKind,
    pub vdd_mv: Option<u32>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct MapHeader {
    scenario: ScenarioKind,
    vdd_mv: Option<u32>,
    seed: u64,
}

impl FaultMap {
    /// Deterministic generation for a `(scenario, seed)` pair: sample a bit
    /// class per entry, then place the corresponding number of faulty blocks
    /// uniformly without replacement.
    pub fn generate(scenario: &ReliabilityScenario, seed: u64) -> Result<FaultMap, FaultMapError> {
        scenario.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = [[false; BLOCKS_PER_ENTRY]; SLICE_ENTRIES];
        for row in blocks.iter_mut() {
            let n = scenario.sample_bit_class(&mut rng).faulty_blocks();
            for i in rand::seq::index::sample(&mut rng, BLOCKS_PER_ENTRY, n) {
                row[i] = true;
            }
        }
        Ok(FaultMap { blocks, scenario: scenario.kind, vdd_mv: scenario.vdd_mv, seed })
    }

    /// Build a map from explicit block flags, validating that every row is
    /// reachable with one repair pointer.
    pub fn from_blocks(
        blocks: [[bool; BLOCKS_PER_ENTRY]; SLICE_ENTRIES],
        scenario: ScenarioKind,
        vdd_mv: Option<u32>,
        seed: u64,
    ) -> Result<FaultMap, FaultMapError> {
        for (row, flags) in blocks.iter().enumerate() {
            let count = flags.iter().filter(|&&f| f).count();
            if EntryClass::from_faulty_blocks(count).is_none() {
                return Err(FaultMapError::UnreachableRow { row, count });
            }
        }
        Ok(FaultMap { blocks, scenario, vdd_mv, seed })
    }

    /// All-reliable map, as the fault-free baselines use.
    pub fn fault_free() -> FaultMap {
        FaultMap {
            blocks: [[false; BLOCKS_PER_ENTRY]; SLICE_ENTRIES],
            scenario: ScenarioKind::Conventional,
            vdd_mv: None,
            seed: 0,
        }
    }

    pub fn is_block_faulty(&self, entry: usize, block: usize) -> bool {
        self.blocks[entry][block]
    }

    pub fn faulty_blocks_of(&self, entry: usize) -> usize {
        self.blocks[entry].iter().filter(|&&f| f).count()
    }

    pub fn entry_class(&self, entry: usize) -> EntryClass {
        EntryClass::from_faulty_blocks(self.faulty_blocks_of(entry))
            .expect("fault map rows always hold 0, 2, 3 or 4 faulty blocks")
    }

    pub fn stats(&self) -> FaultStats {
        let mut s = FaultStats::default();
        for entry in 0..SLICE_ENTRIES {
            match self.entry_class(entry) {
                EntryClass::Reliable => s.reliable += 1,
                EntryClass::Faulty2 => s.faulty2 += 1,
                EntryClass::Faulty3 => s.faulty3 += 1,
                EntryClass::Dead => s.dead += 1,
            }
        }
        s
    }

    pub fn total_faulty_blocks(&self) -> usize {
        (0..SLICE_ENTRIES).map(|e| self.faulty_blocks_of(e)).sum()
    }

    /// One JSON header line, then one row of '0'/'1' block flags per entry.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = MapHeader { scenario: self.scenario, vdd_mv: self.vdd_mv, seed: self.seed };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for row in &self.blocks {
            for &f in row {
                w.write_all(if f { b"1" } else { b"0" })?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<FaultMap, FaultMapError> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or(FaultMapError::MissingHeader)?
            .map_err(|e| FaultMapError::Io(e.to_string()))?;
        let header: MapHeader = serde_json::from_str(&header_line)
            .map_err(|e| FaultMapError::BadHeader(e.to_string()))?;
        let mut blocks = [[false; BLOCKS_PER_ENTRY]; SLICE_ENTRIES];
        let mut row = 0;
        for line in lines {
            let line = line.map_err(|e| FaultMapError::Io(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            if row >= SLICE_ENTRIES {
                return Err(FaultMapError::BadRowCount(row + 1));
            }
            if line.chars().count() != BLOCKS_PER_ENTRY {
                return Err(FaultMapError::BadRowLength {
                    row,
                    expected: BLOCKS_PER_ENTRY,
                    got: line.chars().count(),
                });
            }
            for (i, ch) in line.chars().enumerate() {
                blocks[row][i] = match ch {
                    '0' => false,
                    '1' => true,
                    ch => return Err(FaultMapError::BadFlag { row, ch }),
                };
            }
            let count = blocks[row].iter().filter(|&&f| f).count();
            if EntryClass::from_faulty_blocks(count).is_none() {
                return Err(FaultMapError::UnreachableRow { row, count });
            }
            row += 1;
        }
        if row != SLICE_ENTRIES {
            return Err(FaultMapError::BadRowCount(row));
        }
        Ok(FaultMap { blocks, scenario: header.scenario, vdd_mv: header.vdd_mv, seed: header.seed })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultStats {
    pub reliable: usize,
    pub faulty2: usize,
    pub faulty3: usize,
    pub dead: usize,
}

impl FaultStats {
    pub fn total(&self) -> usize {
        self.reliable + self.faulty2 + self.faulty3 + self.dead
    }

    pub fn faulty_entries(&self) -> usize {
        self.faulty2 + self.faulty3 + self.dead
    }

    pub fn faulty_fraction(&self) -> f64 {
        self.faulty_entries() as f64 / self.total() as f64
    }
}
