//! Destinations for per-step diagnostics and snapshots.

use std::io;

use crate::diagnostics::{DiagnosticsRecord, DissipationLedger};
use crate::model::SimState;

pub trait OutputSink {
    /// One diagnostics row after each step (and once for the initial state).
    fn record(&mut self, record: &DiagnosticsRecord, ledger: &DissipationLedger) -> io::Result<()>;
    /// A full snapshot; `index` counts snapshots from 0.
    fn snapshot(&mut self, index: usize, state: &SimState) -> io::Result<()>;
}

/// Discards everything.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullSink;

impl OutputSink for NullSink {
    fn record(&mut self, _: &DiagnosticsRecord, _: &DissipationLedger) -> io::Result<()> {
        Ok(())
    }

    fn snapshot(&mut self, _: usize, _: &SimState) -> io::Result<()> {
        Ok(())
    }
}

/// Keeps rows in memory.
#[derive(Clone, Debug, Default)]
pub struct MemorySink {
    pub rows: Vec<(DiagnosticsRecord, DissipationLedger)>,
    pub snapshots: usize,
}

impl OutputSink for MemorySink {
    fn record(&mut self, record: &DiagnosticsRecord, ledger: &DissipationLedger) -> io::Result<()> {
        self.rows.push((*record, *ledger));
        Ok(())
    }

    fn snapshot(&mut self, _: usize, _: &SimState) -> io::Result<()> {
        self.snapshots += 1;
        Ok(())
    }
}
