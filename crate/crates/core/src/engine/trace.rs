use std::fmt;
use std::io::{self, Write};

use super::ExecStats;

/// Where in the per-group schedule an access happens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Unpack,
    CacheFill,
    Precompute,
    Filter,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Unpack => "unpack",
            Phase::CacheFill => "cache-fill",
            Phase::Precompute => "precompute",
            Phase::Filter => "filter",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    /// The full table in flash.
    Lut,
    Index,
    Activation,
    BitRow,
    /// Active table blocks copied to SRAM.
    Cache,
    Precomputed,
    Output,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Lut => "lut",
            Region::Index => "index",
            Region::Activation => "act",
            Region::BitRow => "bitrow",
            Region::Cache => "cache",
            Region::Precomputed => "precomputed",
            Region::Output => "output",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub phase: Phase,
    pub flash: bool,
    pub write: bool,
    pub region: Region,
    pub addr: u64,
}

impl fmt::Display for TraceEvent {
    /// `<phase> <flash|sram>-<read|write> <region> <addr>`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mem = if self.flash { "flash" } else { "sram" };
        let op = if self.write { "write" } else { "read" };
        write!(f, "{} {mem}-{op} {} {}", self.phase, self.region, self.addr)
    }
}

/// Ordered memory accesses of one layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccessTrace {
    pub events: Vec<TraceEvent>,
}

impl AccessTrace {
    pub fn write_lines(&self, out: &mut impl Write, prefix: &str) -> io::Result<()> {
        for e in &self.events {
            writeln!(out, "{prefix}{e}")?;
        }
        Ok(())
    }
}

/// Counts accesses and optionally records them.
#[derive(Debug, Default)]
pub struct Recorder {
    pub stats: ExecStats,
    pub trace: Option<AccessTrace>,
    pub(crate) phase: Option<Phase>,
}

impl Recorder {
    pub fn new(trace: bool) -> Self {
        Recorder {
            stats: ExecStats::default(),
            trace: trace.then(AccessTrace::default),
            phase: None,
        }
    }

    pub(crate) fn set_phase(&mut self, phase: Phase) {
        self.phase = Some(phase);
    }

    fn log(&mut self, flash: bool, write: bool, region: Region, addr: u64) {
        if let Some(t) = &mut self.trace {
            t.events.push(TraceEvent {
                phase: self.phase.unwrap_or(Phase::Filter),
                flash,
                write,
                region,
                addr,
            });
        }
    }

    #[inline]
    pub(crate) fn flash_read(&mut self, region: Region, addr: u64) {
        self.stats.flash_reads += 1;
        self.log(true, false, region, addr);
    }

    #[inline]
    pub(crate) fn sram_read(&mut self, region: Region, addr: u64) {
        self.stats.sram_reads += 1;
        self.log(false, false, region, addr);
    }

    #[inline]
    pub(crate) fn sram_write(&mut self, region: Region, addr: u64) {
        self.stats.sram_writes += 1;
        self.log(false, true, region, addr);
    }
}
