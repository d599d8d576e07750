//! Energy and area accounting at 28 nm / 1 GHz. Per-event dynamic energies
//! and per-cycle static power come from the component constants table; the
//! pipeline only counts events and cycles, and `finalize` turns the ledger
//! into the reported categories: Static (slice), Read, Write, Com/Des,
//! Redirections and LDS. The compression and redirection units keep running
//! at nominal voltage, so their static share stays inside their own
//! categories rather than shrinking with the slice supply.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::faultmap::ScenarioKind;
use crate::pipeline::SimMode;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentConstants {
    pub read_pj: f64,
    pub write_pj: f64,
    pub static_mw: f64,
    pub area_mm2: f64,
    pub access_ns: f64,
}

#[derive(Debug, Error)]
pub enum EnergyConfigError {
    #[error("nominal vdd must be positive, got {0}")]
    BadNominalVdd(f64),
    #[error("clock must be positive, got {0}")]
    BadClock(f64),
    #[error("unit counts must be at least 1")]
    BadUnitCount,
}

/// The constants table plus the knobs that shape how it is applied. The
/// smoothing baseline has no measured slice row; it is scaled from the
/// conventional one (dynamic by the square of 600 mV over nominal, static
/// linearly).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConstants {
    pub slice_conv: ComponentConstants,
    pub slice_comun: ComponentConstants,
    pub slice_agrupado: ComponentConstants,
    pub slice_disperso: ComponentConstants,
    pub com: ComponentConstants,
    pub des: ComponentConstants,
    pub tr: ComponentConstants,
    pub usr: ComponentConstants,
    pub clock_ghz: f64,
    pub nominal_vdd_mv: f64,
    pub smoothing_vdd_mv: f64,
    pub com_units: u32,
    pub des_units: u32,
    /// Energy per 64-byte LDS beat of a spill access. Unmodeled by default.
    pub lds_spill_pj_per_beat: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        let slice_area = 0.680;
        let slice_ns = 0.85;
        Self {
            slice_conv: ComponentConstants {
                read_pj: 247.38,
                write_pj: 302.23,
                static_mw: 58.58,
                area_mm2: slice_area,
                access_ns: slice_ns,
            },
            slice_comun: ComponentConstants {
                read_pj: 84.38,
                write_pj: 97.68,
                static_mw: 30.79,
                area_mm2: slice_area,
                access_ns: slice_ns,
            },
            slice_agrupado: ComponentConstants {
                read_pj: 84.90,
                write_pj: 99.76,
                static_mw: 35.18,
                area_mm2: slice_area,
                access_ns: slice_ns,
            },
            slice_disperso: ComponentConstants {
                read_pj: 68.25,
                write_pj: 78.33,
                static_mw: 27.73,
                area_mm2: slice_area,
                access_ns: slice_ns,
            },
            com: ComponentConstants {
                read_pj: 0.0,
                write_pj: 0.72,
                static_mw: 6.67,
                area_mm2: 0.005,
                access_ns: 0.95,
            },
            des: ComponentConstants {
                read_pj: 0.62,
                write_pj: 0.0,
                static_mw: 7.14,
                area_mm2: 0.007,
                access_ns: 0.95,
            },
            tr: ComponentConstants {
                read_pj: 0.54,
                write_pj: 0.50,
                static_mw: 0.41,
                area_mm2: 0.005,
                access_ns: 0.09,
            },
            usr: ComponentConstants {
                read_pj: 0.0,
                write_pj: 0.22,
                static_mw: 15.41,
                area_mm2: 0.014,
                access_ns: 0.11,
            },
            clock_ghz: 1.0,
            nominal_vdd_mv: 1000.0,
            smoothing_vdd_mv: 600.0,
            com_units: 1,
            des_units: 2,
            lds_spill_pj_per_beat: 0.0,
        }
    }
}

impl EnergyConstants {
    pub fn validate(&self) -> Result<(), EnergyConfigError> {
        if !(self.nominal_vdd_mv > 0.0) {
            return Err(EnergyConfigError::BadNominalVdd(self.nominal_vdd_mv));
        }
        if !(self.clock_ghz > 0.0) {
            return Err(EnergyConfigError::BadClock(self.clock_ghz));
        }
        if self.com_units == 0 || self.des_units == 0 {
            return Err(EnergyConfigError::BadUnitCount);
        }
        Ok(())
    }

    /// Slice constants for the smoothing baseline, scaled from conventional.
    pub fn suav_slice(&self) -> ComponentConstants {
        let ratio = self.smoothing_vdd_mv / self.nominal_vdd_mv;
        ComponentConstants {
            read_pj: self.slice_conv.read_pj * ratio * ratio,
            write_pj: self.slice_conv.write_pj * ratio * ratio,
            static_mw: self.slice_conv.static_mw * ratio,
            area_mm2: self.slice_conv.area_mm2,
            access_ns: self.slice_conv.access_ns,
        }
    }

    pub fn slice_for(&self, mode: SimMode, scenario: ScenarioKind) -> ComponentConstants {
        match mode {
            SimMode::Conv => self.slice_conv,
            SimMode::Suav => self.suav_slice(),
            SimMode::Rrcd => match scenario {
                ScenarioKind::Comun => self.slice_comun,
                ScenarioKind::Agrupado => self.slice_agrupado,
                ScenarioKind::Disperso => self.slice_disperso,
                ScenarioKind::Conventional => self.slice_conv,
                ScenarioKind::Smoothing => self.suav_slice(),
            },
        }
    }

    /// Static power of every always-on redirection-path unit, in mW.
    pub fn rrcd_units_static_mw(&self) -> f64 {
        self.com.static_mw * self.com_units as f64
            + self.des.static_mw * self.des_units as f64
            + self.tr.static_mw
            + self.usr.static_mw
    }

    pub fn ns_per_cycle(&self) -> f64 {
        1.0 / self.clock_ghz
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnergyEvent {
    SliceBlockRead,
    SliceBlockWrite,
    DesBlock,
    ComBlock,
    TrRead,
    TrWrite,
    UsrAlloc,
    LdsSpillBeat,
    MispeculationExtraWrite,
}

/// Event counters accumulated during a run. Counts are pure bookkeeping, so
/// the same ledger can be priced under different constant sets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub cycles: u64,
    pub slice_block_read: u64,
    pub slice_block_write: u64,
    pub des_block: u64,
    pub com_block: u64,
    pub tr_read: u64,
    pub tr_write: u64,
    pub usr_alloc: u64,
    pub lds_spill_beats: u64,
    /// Writeback blocks replayed from the destination buffer after a failed
    /// speculation; these are already counted in `slice_block_write`.
    pub mispeculation_extra_writes: u64,
}

impl EnergyLedger {
    pub fn record(&mut self, event: EnergyEvent) {
        self.add(event, 1);
    }

    pub fn add(&mut self, event: EnergyEvent, count: u64) {
        let slot = match event {
            EnergyEvent::SliceBlockRead => &mut self.slice_block_read,
            EnergyEvent::SliceBlockWrite => &mut self.slice_block_write,
            EnergyEvent::DesBlock => &mut self.des_block,
            EnergyEvent::ComBlock => &mut self.com_block,
            EnergyEvent::TrRead => &mut self.tr_read,
            EnergyEvent::TrWrite => &mut self.tr_write,
            EnergyEvent::UsrAlloc => &mut self.usr_alloc,
            EnergyEvent::LdsSpillBeat => &mut self.lds_spill_beats,
            EnergyEvent::MispeculationExtraWrite => &mut self.mispeculation_extra_writes,
        };
        *slot += count;
    }

    pub fn merge(&self, other: &EnergyLedger) -> EnergyLedger {
        EnergyLedger {
            cycles: self.cycles + other.cycles,
            slice_block_read: self.slice_block_read + other.slice_block_read,
            slice_block_write: self.slice_block_write + other.slice_block_write,
            des_block: self.des_block + other.des_block,
            com_block: self.com_block + other.com_block,
            tr_read: self.tr_read + other.tr_read,
            tr_write: self.tr_write + other.tr_write,
            usr_alloc: self.usr_alloc + other.usr_alloc,
            lds_spill_beats: self.lds_spill_beats + other.lds_spill_beats,
            mispeculation_extra_writes: self.mispeculation_extra_writes
                + other.mispeculation_extra_writes,
        }
    }
}

/// Energy by reported category, all in pJ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub static_pj: f64,
    pub read_pj: f64,
    pub write_pj: f64,
    pub comdes_pj: f64,
    pub redirections_pj: f64,
    pub lds_pj: f64,
    pub total_pj: f64,
}

impl EnergyReport {
    pub fn categories(&self) -> [(&'static str, f64); 6] {
        [
            ("Static", self.static_pj),
            ("Read", self.read_pj),
            ("Write", self.write_pj),
            ("Com/Des", self.comdes_pj),
            ("Redirections", self.redirections_pj),
            ("LDS", self.lds_pj),
        ]
    }
}

pub fn finalize(
    ledger: &EnergyLedger,
    constants: &EnergyConstants,
    mode: SimMode,
    scenario: ScenarioKind,
) -> EnergyReport {
    let ns = constants.ns_per_cycle();
    let cycle_ns = ledger.cycles as f64 * ns;
    let slice = constants.slice_for(mode, scenario);
    let static_pj = slice.static_mw * cycle_ns;
    let read_pj = ledger.slice_block_read as f64 * slice.read_pj;
    let write_pj = ledger.slice_block_write as f64 * slice.write_pj;
    let (comdes_pj, redirections_pj) = if mode == SimMode::Rrcd {
        let comdes_static = (constants.com.static_mw * constants.com_units as f64
            + constants.des.static_mw * constants.des_units as f64)
            * cycle_ns;
        let comdes = ledger.des_block as f64 * constants.des.read_pj
            + ledger.com_block as f64 * constants.com.write_pj
            + comdes_static;
        let redir_static = (constants.tr.static_mw + constants.usr.static_mw) * cycle_ns;
        let redir = ledger.tr_read as f64 * constants.tr.read_pj
            + ledger.tr_write as f64 * constants.tr.write_pj
            + ledger.usr_alloc as f64 * constants.usr.write_pj
            + redir_static;
        (comdes, redir)
    } else {
        (0.0, 0.0)
    };
    let lds_pj = ledger.lds_spill_beats as f64 * constants.lds_spill_pj_per_beat;
    EnergyReport {
        static_pj,
        read_pj,
        write_pj,
        comdes_pj,
        redirections_pj,
        lds_pj,
        total_pj: static_pj + read_pj + write_pj + comdes_pj + redirections_pj + lds_pj,
    }
}

/// True when a run spilled but the LDS energy knob is still zero, so the
/// LDS category understates reality.
pub fn lds_energy_unmodeled(ledger: &EnergyLedger, constants: &EnergyConstants) -> bool {
    ledger.lds_spill_beats > 0 && constants.lds_spill_pj_per_beat == 0.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaReport {
    pub slice_mm2: f64,
    pub com_mm2: f64,
    pub des_mm2: f64,
    pub tr_mm2: f64,
    pub usr_mm2: f64,
    pub com_units: u32,
    pub des_units: u32,
    /// One instance of each unit.
    pub unit_sum_mm2: f64,
    /// All instances, as deployed.
    pub total_mm2: f64,
    pub overhead_fraction: f64,
}

impl AreaReport {
    pub fn overhead_percent(&self) -> f64 {
        (self.overhead_fraction * 1000.0).round() / 10.0
    }
}

pub fn area_report(constants: &EnergyConstants) -> AreaReport {
    let unit_sum = constants.com.area_mm2
        + constants.des.area_mm2
        + constants.tr.area_mm2
        + constants.usr.area_mm2;
    let total = constants.com.area_mm2 * constants.com_units as f64
        + constants.des.area_mm2 * constants.des_units as f64
        + constants.tr.area_mm2
        + constants.usr.area_mm2;
    AreaReport {
        slice_mm2: constants.slice_conv.area_mm2,
        com_mm2: constants.com.area_mm2,
        des_mm2: constants.des.area_mm2,
        tr_mm2: constants.tr.area_mm2,
        usr_mm2: constants.usr.area_mm2,
        com_units: constants.com_units,
        des_units: constants.des_units,
        unit_sum_mm2: unit_sum,
        total_mm2: total,
        overhead_fraction: total / constants.slice_conv.area_mm2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-6;

    #[test]
    fn conventional_uncompressed_read_costs() {
        let ledger = EnergyLedger { slice_block_read: 4, ..Default::default() };
        let report = finalize(
            &ledger,
            &EnergyConstants::default(),
            SimMode::Conv,
            ScenarioKind::Conventional,
        );
        assert!((report.read_pj - 989.52).abs() < EPS);
        assert_eq!(report.static_pj, 0.0);
        assert!((report.total_pj - 989.52).abs() < EPS);
    }

    #[test]
    fn rrcd_compressed_read_costs() {
        let ledger = EnergyLedger {
            slice_block_read: 1,
            des_block: 1,
            tr_read: 1,
            ..Default::default()
        };
        let report =
            finalize(&ledger, &EnergyConstants::default(), SimMode::Rrcd, ScenarioKind::Comun);
        assert!((report.total_pj - 85.54).abs() < EPS);
        assert!((report.read_pj - 84.38).abs() < EPS);
        assert!((report.comdes_pj - 0.62).abs() < EPS);
        assert!((report.redirections_pj - 0.54).abs() < EPS);
    }

    #[test]
    fn idle_conventional_static() {
        let ledger = EnergyLedger { cycles: 1000, ..Default::default() };
        let report = finalize(
            &ledger,
            &EnergyConstants::default(),
            SimMode::Conv,
            ScenarioKind::Conventional,
        );
        assert!((report.static_pj - 58_580.0).abs() < EPS);
    }

    #[test]
    fn suav_scaling() {
        let constants = EnergyConstants::default();
        let suav = constants.suav_slice();
        assert!((suav.read_pj - 247.38 * 0.36).abs() < EPS);
        assert!((suav.write_pj - 302.23 * 0.36).abs() < EPS);
        assert!((suav.static_mw - 58.58 * 0.6).abs() < EPS);
    }

    #[test]
    fn rrcd_units_static_power() {
        assert!((EnergyConstants::default().rrcd_units_static_mw() - 36.77).abs() < 1e-9);
    }

    #[test]
    fn baseline_modes_never_charge_unit_statics() {
        let ledger = EnergyLedger { cycles: 100, ..Default::default() };
        let constants = EnergyConstants::default();
        for mode in [SimMode::Conv, SimMode::Suav] {
            let report = finalize(&ledger, &constants, mode, ScenarioKind::Conventional);
            assert_eq!(report.comdes_pj, 0.0);
            assert_eq!(report.redirections_pj, 0.0);
        }
    }

    #[test]
    fn area_overhead() {
        let report = area_report(&EnergyConstants::default());
        assert!((report.unit_sum_mm2 - 0.031).abs() < 1e-12);
        assert!((report.total_mm2 - 0.038).abs() < 1e-12);
        assert_eq!(report.overhead_percent(), 5.6);
    }

    #[test]
    fn static_power_follows_vdd_order() {
        let c = EnergyConstants::default();
        assert!(c.slice_disperso.static_mw < c.slice_comun.static_mw);
        assert!(c.slice_comun.static_mw < c.slice_agrupado.static_mw);
    }

    #[test]
    fn ledger_linearity() {
        let a = EnergyLedger {
            cycles: 10,
            slice_block_read: 3,
            slice_block_write: 2,
            des_block: 1,
            com_block: 4,
            tr_read: 5,
            tr_write: 1,
            usr_alloc: 2,
            lds_spill_beats: 4,
            mispeculation_extra_writes: 0,
        };
        let b = EnergyLedger { cycles: 7, slice_block_read: 9, tr_read: 1, ..Default::default() };
        let constants =
            EnergyConstants { lds_spill_pj_per_beat: 1.5, ..EnergyConstants::default() };
        let ra = finalize(&a, &constants, SimMode::Rrcd, ScenarioKind::Disperso);
        let rb = finalize(&b, &constants, SimMode::Rrcd, ScenarioKind::Disperso);
        let rm = finalize(&a.merge(&b), &constants, SimMode::Rrcd, ScenarioKind::Disperso);
        assert!((rm.total_pj - (ra.total_pj + rb.total_pj)).abs() < 1e-9);
    }

    #[test]
    fn config_json_round_trip_and_partial_override() {
        let constants = EnergyConstants::default();
        let json = serde_json::to_string(&constants).unwrap();
        let back: EnergyConstants = serde_json::from_str(&json).unwrap();
        assert_eq!(constants, back);
        let partial: EnergyConstants =
            serde_json::from_str(r#"{"nominal_vdd_mv": 900.0, "des_units": 1}"#).unwrap();
        assert_eq!(partial.nominal_vdd_mv, 900.0);
        assert_eq!(partial.des_units, 1);
        assert_eq!(partial.slice_conv, constants.slice_conv);
    }

    #[test]
    fn validation_rejects_bad_knobs() {
        let mut c = EnergyConstants::default();
        c.nominal_vdd_mv = 0.0;
        assert!(c.validate().is_err());
        let mut c = EnergyConstants::default();
        c.des_units = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unmodeled_lds_flag() {
        let constants = EnergyConstants::default();
        let ledger = EnergyLedger { lds_spill_beats: 8, ..Default::default() };
        assert!(lds_energy_unmodeled(&ledger, &constants));
        assert!(!lds_energy_unmodeled(&EnergyLedger::default(), &constants));
        let priced = EnergyConstants { lds_spill_pj_per_beat: 2.0, ..constants };
        assert!(!lds_energy_unmodeled(&ledger, &priced));
    }
}
