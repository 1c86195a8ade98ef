//! The attack-success probability model: per-slot statistics over a
//! reconnaissance period, per-slot and total ASP, the conditional ASP under
//! an obfuscation plan, and the attack-unaware randomization lower bound.
//!
//! Slots are successful transmissions only; idle gaps separate attack
//! windows but consume no slot index.

use std::io::Write;

use crate::bus::{frame_time, BusTrace, Frame, MessageId, Micros};
use crate::error::{Error, Result};

/// One successful transmission inside the analyzed window.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotStats {
    /// 1-based slot index within the analyzed reconnaissance period.
    pub slot: usize,
    /// 0-based hyper-period within the period.
    pub hyper_period: usize,
    /// 1-based ordinal among the hyper-period's transmissions.
    pub base_index: usize,
    pub id: MessageId,
    pub time: Micros,
    /// Victim transmits at this slot.
    pub ct: bool,
    /// 1-based victim instance ordinal within its hyper-period, when `ct`.
    pub instance: Option<usize>,
    /// Length of the contiguous higher-priority run immediately preceding.
    pub n: u64,
    /// Slot indices composing that run.
    pub window_slots: Vec<usize>,
    /// Transmissions between this and the previous victim instance.
    pub tbi: u64,
}

/// Scans backwards from the transmission at position `idx` (0-based into
/// `txs`) and returns the contiguous run of strictly higher-priority frames
/// immediately preceding it, as (length, 0-based positions).
///
/// Contiguity is exact in time: a frame belongs to the run only if it ends
/// at the instant its successor starts. Idle gaps, error frames (which
/// occupy bus time without producing a transmission) and lower-priority
/// frames all terminate the run.
pub(crate) fn preceding_hp_run(
    txs: &[(Micros, &Frame)],
    idx: usize,
    victim: MessageId,
    bitrate: u32,
) -> (u64, Vec<usize>) {
    let mut run = Vec::new();
    let mut next_start = txs[idx].0;
    let mut j = idx;
    while j > 0 {
        j -= 1;
        let (start, frame) = txs[j];
        if start + frame_time(frame, bitrate) != next_start {
            break;
        }
        if frame.id >= victim {
            break;
        }
        run.push(j);
        next_start = start;
    }
    run.reverse();
    (run.len() as u64, run)
}

/// Builds per-slot statistics for the reconnaissance window
/// `[base, base + recon * hyperperiod)`. Windows and inter-instance counts
/// look back across the window start into earlier trace history, so period
/// boundaries introduce no artifacts. An absent victim yields empty stats.
pub fn slot_stats(
    trace: &BusTrace,
    victim: MessageId,
    recon: usize,
    hyperperiod: Micros,
    base: Micros,
) -> Vec<SlotStats> {
    let txs: Vec<(Micros, &Frame)> = trace
        .transmissions()
        .map(|(_, e)| (e.time, e.frame.as_ref().unwrap()))
        .collect();
    let end = base + recon as Micros * hyperperiod;

    let mut out = Vec::new();
    let mut slot_in_window = 0usize;
    let mut per_period_count = vec![0usize; recon];
    let mut victim_ordinal = vec![0usize; recon];

    for (i, &(start, frame)) in txs.iter().enumerate() {
        if start < base || start >= end {
            continue;
        }
        let k = ((start - base) / hyperperiod) as usize;
        slot_in_window += 1;
        per_period_count[k] += 1;

        let ct = frame.id == victim;
        let (instance, n, window_slots, tbi) = if ct {
            victim_ordinal[k] += 1;
            let (n, run_positions) = preceding_hp_run(&txs, i, victim, trace.bitrate);
            // positions are trace-global; convert to window slot indices
            let window_slots: Vec<usize> = run_positions
                .iter()
                .filter_map(|&p| {
                    let t = txs[p].0;
                    if t >= base {
                        Some(slot_in_window - (i - p))
                    } else {
                        None
                    }
                })
                .collect();
            let prev_victim = txs[..i]
                .iter()
                .rposition(|(_, f)| f.id == victim);
            let tbi = match prev_victim {
                Some(p) => (i - p - 1) as u64,
                None => i as u64,
            };
            (Some(victim_ordinal[k]), n, window_slots, tbi)
        } else {
            (None, 0, Vec::new(), 0)
        };

        out.push(SlotStats {
            slot: slot_in_window,
            hyper_period: k,
            base_index: per_period_count[k],
            id: frame.id,
            time: start,
            ct,
            instance,
            n,
            window_slots,
            tbi,
        });
    }
    out
}

/// Per-occurrence ASP contribution: `(ct / recon) * (n / tbi)`, with empty
/// inter-instance spans contributing zero.
pub fn occurrence_contribution(s: &SlotStats, recon: usize) -> f64 {
    if !s.ct || s.tbi == 0 {
        return 0.0;
    }
    (1.0 / recon as f64) * (s.n as f64 / s.tbi as f64)
}

/// `P(AS_j)` for one base slot index: the ceiling-free average of the
/// favorable ratios over the reconnaissance hyper-periods.
pub fn slot_asp(occurrences: &[&SlotStats], recon: usize) -> f64 {
    occurrences
        .iter()
        .map(|s| occurrence_contribution(s, recon))
        .sum()
}

/// Sum of per-slot ASPs. The events are treated as mutually exclusive, so
/// the raw sum is reported; a sum above one is flagged as saturated rather
/// than silently normalised.
pub fn total_asp(per_slot: &[f64]) -> (f64, bool) {
    let sum: f64 = per_slot.iter().sum();
    (sum, sum > 1.0)
}

/// How an applied obfuscation rule transforms one victim occurrence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObfEffect {
    /// No action at this instance.
    Unchanged,
    /// The victim instance is skipped outright: `ct` becomes 0.
    Silenced,
    /// The attack window shrinks by `reduction` frames.
    WindowReduced(u64),
}

impl ObfEffect {
    pub fn label(&self) -> &'static str {
        match self {
            ObfEffect::Unchanged => "none",
            ObfEffect::Silenced => "obf1",
            ObfEffect::WindowReduced(_) => "window_reduced",
        }
    }
}

/// Conditional contribution of one victim occurrence under an effect.
pub fn conditional_contribution(s: &SlotStats, effect: ObfEffect, recon: usize) -> f64 {
    if !s.ct || s.tbi == 0 {
        return 0.0;
    }
    let n = match effect {
        ObfEffect::Unchanged => s.n,
        ObfEffect::Silenced => return 0.0,
        ObfEffect::WindowReduced(r) => s.n.saturating_sub(r),
    };
    (1.0 / recon as f64) * (n as f64 / s.tbi as f64)
}

/// Attack-unaware randomization can at best pull the victim ahead of its
/// equal-priority contemporaries, so its per-slot ASP cannot drop below
/// `(n - |group in window|) / tbi`.
pub fn randomization_bound(n: u64, eq_pri_in_window: u64, tbi: u64) -> f64 {
    if tbi == 0 {
        return 0.0;
    }
    n.saturating_sub(eq_pri_in_window) as f64 / tbi as f64
}

/// One victim-slot row of the ASP report.
#[derive(Debug, Clone, PartialEq)]
pub struct AspRow {
    pub stats: SlotStats,
    pub asp: f64,
    pub obf_rule: String,
    pub asp_conditional: f64,
    pub randomization_bound: f64,
}

/// Per-slot and total ASP for one reconnaissance period, with the applied
/// obfuscation decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct AspBreakdown {
    pub rows: Vec<AspRow>,
    pub total: f64,
    pub saturated: bool,
    pub conditional_total: f64,
    /// Empirical application frequency of each rule label over victim slots.
    pub rule_frequency: Vec<(String, f64)>,
}

/// Evaluates the plan's analytic effect on every victim occurrence.
/// `effect_of(hyper_period, instance)` must cover every victim occurrence;
/// `rule_of` supplies the report label, `group_of` the equal-priority
/// window membership used for the randomization bound.
pub fn conditional_asp(
    stats: &[SlotStats],
    recon: usize,
    mut effect_of: impl FnMut(usize, usize) -> Option<(ObfEffect, String)>,
    mut group_of: impl FnMut(usize, usize) -> u64,
) -> Result<AspBreakdown> {
    let mut rows = Vec::new();
    let mut total = 0.0;
    let mut conditional_total = 0.0;
    let mut freq: Vec<(String, usize)> = Vec::new();
    let mut victim_slots = 0usize;

    for s in stats.iter().filter(|s| s.ct) {
        let inst = s.instance.unwrap();
        let Some((effect, rule)) = effect_of(s.hyper_period, inst) else {
            return Err(Error::NonExhaustivePlan {
                id: s.id.raw(),
                instance: inst,
            });
        };
        victim_slots += 1;
        let base = occurrence_contribution(s, recon);
        let cond = conditional_contribution(s, effect, recon);
        total += base;
        conditional_total += cond;
        let bound = randomization_bound(s.n, group_of(s.hyper_period, inst), s.tbi) / recon as f64;
        match freq.iter_mut().find(|(r, _)| *r == rule) {
            Some((_, c)) => *c += 1,
            None => freq.push((rule.clone(), 1)),
        }
        rows.push(AspRow {
            stats: s.clone(),
            asp: base,
            obf_rule: rule,
            asp_conditional: cond,
            randomization_bound: bound,
        });
    }

    let saturated = total > 1.0;
    let rule_frequency = freq
        .into_iter()
        .map(|(r, c)| (r, c as f64 / victim_slots.max(1) as f64))
        .collect();
    Ok(AspBreakdown {
        rows,
        total,
        saturated,
        conditional_total,
        rule_frequency,
    })
}

/// Writes the full per-slot table (victim and non-victim slots) as CSV.
/// Victim rows carry the ASP columns; other slots show zeros and an empty
/// rule.
pub fn write_asp_csv<W: Write>(
    w: &mut W,
    stats: &[SlotStats],
    breakdown: &AspBreakdown,
) -> Result<()> {
    writeln!(
        w,
        "slot_index,instance,ct,n,tbi,asp,obf_rule,asp_conditional,randomization_bound"
    )?;
    for s in stats {
        if s.ct {
            let row = breakdown
                .rows
                .iter()
                .find(|r| r.stats.slot == s.slot)
                .expect("breakdown covers every victim slot");
            writeln!(
                w,
                "{},{},1,{},{},{},{},{},{}",
                s.slot,
                s.instance.unwrap(),
                s.n,
                s.tbi,
                row.asp,
                row.obf_rule,
                row.asp_conditional,
                row.randomization_bound
            )?;
        } else {
            writeln!(w, "{},,0,0,0,0,,0,0", s.slot)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{run_bus, Frame, MessageId};

    fn frame(id: u16, source: usize, release: Micros) -> Frame {
        Frame::new(MessageId::new(id).unwrap(), vec![0x55; 8], source, release).unwrap()
    }

    /// One hyper-period, hand-placed: two higher-priority frames packed
    /// immediately before the victim, one stray frame earlier.
    fn four_slot_trace() -> BusTrace {
        // 540 us frames at 250 kbps
        let stray = vec![frame(0x300, 0, 0)];
        let hp1 = vec![frame(0x100, 1, 5_000)];
        let hp2 = vec![frame(0x110, 2, 5_000)];
        let victim = vec![frame(0x200, 3, 5_500)];
        run_bus(vec![stray, hp1, hp2, victim], 10_000, 250_000)
    }

    #[test]
    fn hand_counted_slot_stats() {
        let trace = four_slot_trace();
        let victim = MessageId::new(0x200).unwrap();
        let stats = slot_stats(&trace, victim, 1, 10_000, 0);
        assert_eq!(stats.len(), 4);
        let v = stats.iter().find(|s| s.ct).unwrap();
        assert_eq!(v.n, 2);
        assert_eq!(v.tbi, 3);
        assert_eq!(v.instance, Some(1));
        // non-victim slots have ct = 0
        assert!(stats.iter().filter(|s| !s.ct).all(|s| s.n == 0));
    }

    #[test]
    fn victim_preceded_by_idle_has_zero_window() {
        let hp = vec![frame(0x100, 0, 0)];
        let victim = vec![frame(0x200, 1, 2_000)]; // idle gap after hp ends at 540
        let trace = run_bus(vec![hp, victim], 10_000, 250_000);
        let stats = slot_stats(&trace, MessageId::new(0x200).unwrap(), 1, 10_000, 0);
        let v = stats.iter().find(|s| s.ct).unwrap();
        assert_eq!(v.n, 0);
        assert_eq!(v.tbi, 1);
    }

    #[test]
    fn slot_asp_direct_formula() {
        let trace = four_slot_trace();
        let stats = slot_stats(&trace, MessageId::new(0x200).unwrap(), 1, 10_000, 0);
        let v: Vec<&SlotStats> = stats.iter().filter(|s| s.ct).collect();
        let p = slot_asp(&v, 1);
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn slot_asp_averages_over_periods() {
        // recon = 2 with (n/tbi) = (1/2, 1/2) and ct = 1 both
        let s1 = SlotStats {
            slot: 1,
            hyper_period: 0,
            base_index: 2,
            id: MessageId::new(0x200).unwrap(),
            time: 0,
            ct: true,
            instance: Some(1),
            n: 1,
            window_slots: vec![],
            tbi: 2,
        };
        let mut s2 = s1.clone();
        s2.hyper_period = 1;
        let p = slot_asp(&[&s1, &s2], 2);
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn total_asp_sums_and_flags_saturation() {
        assert_eq!(total_asp(&[]), (0.0, false));
        let (t, sat) = total_asp(&[0.1, 0.2]);
        assert!((t - 0.3).abs() < 1e-15 && !sat);
        let (_, sat) = total_asp(&[0.7, 0.7]);
        assert!(sat);
    }

    #[test]
    fn conditional_effects_match_the_decomposition() {
        let base = SlotStats {
            slot: 1,
            hyper_period: 0,
            base_index: 1,
            id: MessageId::new(0x200).unwrap(),
            time: 0,
            ct: true,
            instance: Some(1),
            n: 2,
            window_slots: vec![],
            tbi: 3,
        };
        // rule 1 zeroes the slot
        assert_eq!(
            conditional_contribution(&base, ObfEffect::Silenced, 1),
            0.0
        );
        // rule 3 with one same-priority member in the window: 1/3
        let c = conditional_contribution(&base, ObfEffect::WindowReduced(1), 1);
        assert!((c - 1.0 / 3.0).abs() < 1e-15);
        // rule 2 shrinking the window 3 -> 1 with tbi 4: 1/4 < 3/4
        let mut s = base.clone();
        s.n = 3;
        s.tbi = 4;
        let c = conditional_contribution(&s, ObfEffect::WindowReduced(2), 1);
        assert!((c - 0.25).abs() < 1e-15);
    }

    #[test]
    fn randomization_bound_examples() {
        assert!((randomization_bound(5, 2, 8) - 3.0 / 8.0).abs() < 1e-15);
        assert_eq!(randomization_bound(4, 4, 8), 0.0);
        assert!((randomization_bound(4, 0, 8) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn non_exhaustive_plan_is_an_error() {
        let trace = four_slot_trace();
        let stats = slot_stats(&trace, MessageId::new(0x200).unwrap(), 1, 10_000, 0);
        let res = conditional_asp(&stats, 1, |_, _| None, |_, _| 0);
        assert!(matches!(res, Err(Error::NonExhaustivePlan { .. })));
    }

    #[test]
    fn probability_bounds_hold() {
        let trace = four_slot_trace();
        let stats = slot_stats(&trace, MessageId::new(0x200).unwrap(), 1, 10_000, 0);
        for s in &stats {
            let c = occurrence_contribution(s, 1);
            assert!((0.0..=1.0).contains(&c));
            assert!(s.n <= s.tbi || !s.ct);
        }
    }
}
