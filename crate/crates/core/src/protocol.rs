//! Transmission schedules: who emits which information bit in which
//! interval, and where each bit is detected.
//!
//! Full-duplex kinds use `L + 1` intervals. The relay forwards its decision
//! on bit `k` at the start of interval `k + 1`, so the destination resolves
//! bit `k` one interval late. Half-duplex uses `2L` intervals, with the
//! source in even slots (0-based) and the relay in odd ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProtocolKind;

/// Entries hold the information-bit index involved, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IntervalAction {
    pub interval: usize,
    pub source_emits: Option<usize>,
    pub relay_emits: Option<usize>,
    pub relay_detects: Option<usize>,
    pub destination_detects: Option<usize>,
}

/// Where one information bit travels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitSlots {
    pub source: usize,
    pub relay_detect: Option<usize>,
    pub relay_emit: Option<usize>,
    pub destination: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ProtocolKind,
    pub length: usize,
    pub actions: Vec<IntervalAction>,
    bits: Vec<BitSlots>,
}

impl Schedule {
    /// Total number of bit intervals `K`.
    pub fn intervals(&self) -> usize {
        self.actions.len()
    }

    pub fn bit(&self, k: usize) -> BitSlots {
        self.bits[k]
    }

    pub fn bits(&self) -> &[BitSlots] {
        &self.bits
    }

    /// Intervals in which the relay samples.
    pub fn relay_detect_intervals(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().filter_map(|b| b.relay_detect)
    }

    /// Intervals in which the destination samples.
    pub fn destination_intervals(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().map(|b| b.destination)
    }
}

pub fn build_schedule(kind: ProtocolKind, length: usize) -> Result<Schedule> {
    if length == 0 {
        return Err(Error::Usage("sequence length must be >= 1".into()));
    }
    let bits: Vec<BitSlots> = (0..length)
        .map(|k| match kind {
            ProtocolKind::Baseline => BitSlots { source: k, relay_detect: None, relay_emit: None, destination: k },
            ProtocolKind::Hd => BitSlots {
                source: 2 * k,
                relay_detect: Some(2 * k),
                relay_emit: Some(2 * k + 1),
                destination: 2 * k + 1,
            },
            _ => BitSlots { source: k, relay_detect: Some(k), relay_emit: Some(k + 1), destination: k + 1 },
        })
        .collect();
    let intervals = match kind {
        ProtocolKind::Baseline => length,
        ProtocolKind::Hd => 2 * length,
        _ => length + 1,
    };
    let mut actions: Vec<IntervalAction> =
        (0..intervals).map(|interval| IntervalAction { interval, ..Default::default() }).collect();
    for (k, b) in bits.iter().enumerate() {
        actions[b.source].source_emits = Some(k);
        actions[b.destination].destination_detects = Some(k);
        if let Some(j) = b.relay_detect {
            actions[j].relay_detects = Some(k);
        }
        if let Some(j) = b.relay_emit {
            actions[j].relay_emits = Some(k);
        }
    }
    Ok(Schedule { kind, length, actions, bits })
}

/// Decode-and-forward with ON/OFF keying re-emits the detected bit.
pub fn relay_forward(detected: bool, _kind: ProtocolKind) -> bool {
    detected
}

/// Realized bits of one transmission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitTimeline {
    pub actions: Vec<IntervalAction>,
    /// Information bits W_S.
    pub source_bits: Vec<bool>,
    /// Per-interval source emissions.
    pub source_tx: Vec<bool>,
    /// Per-interval relay emissions W_R; silent until a decision is recorded.
    pub relay_tx: Vec<bool>,
    pub relay_detected: Vec<Option<bool>>,
    pub destination_detected: Vec<Option<bool>>,
}

impl BitTimeline {
    pub fn new(schedule: &Schedule, source_bits: Vec<bool>) -> Result<Self> {
        if source_bits.len() != schedule.length {
            return Err(Error::Usage(format!(
                "expected {} source bits, got {}",
                schedule.length,
                source_bits.len()
            )));
        }
        let k = schedule.intervals();
        let mut source_tx = vec![false; k];
        for (bit, slots) in source_bits.iter().zip(schedule.bits()) {
            source_tx[slots.source] = *bit;
        }
        Ok(Self {
            actions: schedule.actions.clone(),
            source_bits,
            source_tx,
            relay_tx: vec![false; k],
            relay_detected: vec![None; schedule.length],
            destination_detected: vec![None; schedule.length],
        })
    }

    pub fn intervals(&self) -> usize {
        self.actions.len()
    }

    /// Records the relay's decision on bit `k` and schedules its forwarding.
    pub fn record_relay(&mut self, schedule: &Schedule, k: usize, detected: bool) -> Result<()> {
        let emit = schedule
            .bits
            .get(k)
            .ok_or(Error::OutOfRange { index: k, limit: schedule.length })?
            .relay_emit
            .ok_or_else(|| Error::Usage(format!("{} has no relay", schedule.kind)))?;
        self.relay_detected[k] = Some(detected);
        self.relay_tx[emit] = relay_forward(detected, schedule.kind);
        Ok(())
    }

    pub fn record_destination(&mut self, k: usize, detected: bool) -> Result<()> {
        let limit = self.destination_detected.len();
        let slot = self.destination_detected.get_mut(k).ok_or(Error::OutOfRange { index: k, limit })?;
        *slot = Some(detected);
        Ok(())
    }

    /// Per-bit error indicators; undecided bits count as errors.
    pub fn errors(&self) -> Vec<bool> {
        self.source_bits
            .iter()
            .zip(&self.destination_detected)
            .map(|(s, d)| *d != Some(*s))
            .collect()
    }
}
