//! Bit-serial lookup-table execution under a flash/SRAM access-count model.
//!
//! Every modeled load and store is classified by residency: the lookup
//! table and index arrays live in flash, activations, bit rows, cached
//! table blocks and precompute buffers in SRAM. Cycles are the dot product
//! of the counters with the [`MemoryModel`] latencies.

mod conv;
mod network;
mod trace;

pub use conv::{cache_active_lut, conv_bitserial, precompute_block, ActiveCache, ConvOutcome};
pub use network::{calibrate, prepare_lut, run_network, ExecPath, LayerReport, NetworkRun};
pub use trace::{AccessTrace, Phase, Recorder, Region, TraceEvent};

use std::fmt;
use std::ops::AddAssign;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::check_act_bits;
use crate::quant::LutOrder;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecomputeMode {
    /// Precompute exactly when the layer has more filters than pool vectors.
    Auto,
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CacheMode {
    /// Cache active table blocks when they fit, otherwise warn and skip.
    Auto,
    /// Cache, failing with a capacity error when SRAM is too small.
    Force,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EngineConfig {
    /// Bit rows executed per activation, MSB first.
    pub act_bits: u32,
    /// Lookup table entry width `B_l`.
    pub lut_bits: u32,
    pub precompute: PrecomputeMode,
    pub cache: CacheMode,
    pub order: LutOrder,
    /// Keep a per-access trace (slow; for small layers).
    pub trace: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            act_bits: 8,
            lut_bits: 8,
            precompute: PrecomputeMode::Auto,
            cache: CacheMode::Auto,
            order: LutOrder::InputOriented,
            trace: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        check_act_bits(self.act_bits)
    }

    /// Whether a layer with `filters` filters takes the precompute branch.
    pub fn uses_precompute(&self, filters: usize, pool_size: usize) -> bool {
        match self.precompute {
            PrecomputeMode::Auto => filters > pool_size,
            PrecomputeMode::On => true,
            PrecomputeMode::Off => false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Board {
    McLarge,
    McSmall,
    Custom,
}

impl FromStr for Board {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc-large" => Ok(Board::McLarge),
            "mc-small" => Ok(Board::McSmall),
            "custom" => Ok(Board::Custom),
            other => Err(Error::InvalidConfig(format!(
                "unknown board {other:?} (expected mc-large, mc-small or custom)"
            ))),
        }
    }
}

impl fmt::Display for Board {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Board::McLarge => "mc-large",
            Board::McSmall => "mc-small",
            Board::Custom => "custom",
        })
    }
}

/// Access latencies in cycles plus memory capacities in bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MemoryModel {
    pub flash_read_cycles: u64,
    pub sram_read_cycles: u64,
    pub sram_write_cycles: u64,
    pub alu_op_cycles: u64,
    pub sram_bytes: usize,
    pub flash_bytes: usize,
    /// Bytes delivered by one flash read when copying contiguous blocks.
    pub flash_burst_bytes: usize,
}

const KB: usize = 1024;

impl MemoryModel {
    pub fn for_board(board: Board) -> Self {
        let (sram, flash) = match board {
            Board::McLarge => (128 * KB, 1024 * KB),
            Board::McSmall => (20 * KB, 128 * KB),
            Board::Custom => (usize::MAX / 2, usize::MAX / 2),
        };
        MemoryModel {
            flash_read_cycles: 4,
            sram_read_cycles: 1,
            sram_write_cycles: 1,
            alu_op_cycles: 1,
            sram_bytes: sram,
            flash_bytes: flash,
            flash_burst_bytes: 4,
        }
    }

    pub fn mc_large() -> Self {
        Self::for_board(Board::McLarge)
    }

    pub fn mc_small() -> Self {
        Self::for_board(Board::McSmall)
    }

    pub fn validate(&self) -> Result<()> {
        let lat = [
            self.flash_read_cycles,
            self.sram_read_cycles,
            self.sram_write_cycles,
            self.alu_op_cycles,
        ];
        if lat.contains(&0) || self.flash_burst_bytes == 0 {
            return Err(Error::InvalidConfig("memory latencies and burst size must be positive".into()));
        }
        if self.flash_read_cycles < self.sram_read_cycles {
            return Err(Error::InvalidConfig(format!(
                "flash reads ({}) cannot be faster than SRAM reads ({})",
                self.flash_read_cycles, self.sram_read_cycles
            )));
        }
        Ok(())
    }

    /// Applies `flash=4,sram=1,alu=1` style overrides. `sram` sets both
    /// read and write latency; `sram-read` / `sram-write` set one.
    pub fn with_latencies(mut self, spec: &str) -> Result<Self> {
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("latency {part:?} is not key=value")))?;
            let v: u64 = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("latency {part:?} is not a positive integer")))?;
            match key.trim() {
                "flash" => self.flash_read_cycles = v,
                "sram" => {
                    self.sram_read_cycles = v;
                    self.sram_write_cycles = v;
                }
                "sram-read" => self.sram_read_cycles = v,
                "sram-write" => self.sram_write_cycles = v,
                "alu" => self.alu_op_cycles = v,
                other => return Err(Error::InvalidConfig(format!("unknown latency key {other:?}"))),
            }
        }
        self.validate()?;
        Ok(self)
    }
}

/// Modeled access counters for one layer or a whole run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ExecStats {
    pub flash_reads: u64,
    pub sram_reads: u64,
    pub sram_writes: u64,
    pub lut_lookups: u64,
    pub shifts: u64,
    pub accumulates: u64,
    pub unpack_ops: u64,
    /// Multiply-accumulates on the integer reference path.
    pub macs: u64,
    pub modeled_cycles: u64,
    /// Table reads served from flash inside the lookup loops.
    pub lut_flash_reads: u64,
    pub index_reads: u64,
    /// Table blocks and entries copied into SRAM.
    pub cache_blocks: u64,
    pub cache_entries: u64,
    /// Largest active cache held at once, in bytes.
    pub peak_cache_bytes: u64,
    pub groups_direct: u64,
    pub groups_precompute: u64,
}

impl ExecStats {
    pub fn alu_ops(&self) -> u64 {
        self.shifts + self.accumulates + self.unpack_ops + self.macs
    }

    pub fn cycles(&self, mem: &MemoryModel) -> u64 {
        self.flash_reads * mem.flash_read_cycles
            + self.sram_reads * mem.sram_read_cycles
            + self.sram_writes * mem.sram_write_cycles
            + self.alu_ops() * mem.alu_op_cycles
    }

    /// Sets `modeled_cycles` from the counters.
    pub fn finish(&mut self, mem: &MemoryModel) {
        self.modeled_cycles = self.cycles(mem);
    }
}

impl AddAssign for ExecStats {
    fn add_assign(&mut self, o: Self) {
        self.flash_reads += o.flash_reads;
        self.sram_reads += o.sram_reads;
        self.sram_writes += o.sram_writes;
        self.lut_lookups += o.lut_lookups;
        self.shifts += o.shifts;
        self.accumulates += o.accumulates;
        self.unpack_ops += o.unpack_ops;
        self.macs += o.macs;
        self.modeled_cycles += o.modeled_cycles;
        self.lut_flash_reads += o.lut_flash_reads;
        self.index_reads += o.index_reads;
        self.cache_blocks += o.cache_blocks;
        self.cache_entries += o.cache_entries;
        self.peak_cache_bytes = self.peak_cache_bytes.max(o.peak_cache_bytes);
        self.groups_direct += o.groups_direct;
        self.groups_precompute += o.groups_precompute;
    }
}
