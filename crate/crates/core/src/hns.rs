//! Hide and Seek: per-reconnaissance-period schedule obfuscation planning
//! and schedule-aware bus-off attempt detection.

use crate::bus::{MessageId, Micros};

/// Physical effect of the plan on one schedule slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlotAction {
    None,
    /// The victim instance itself is skipped (rule 1).
    Skip,
    /// Skipped because it precedes a victim instance (rule 2 target).
    SkipPredecessor,
    /// The victim is pulled ahead of its equal-priority block (rule 3);
    /// `block` lists the block's slot indices.
    Reorder { block: Vec<usize> },
}

impl SlotAction {
    pub fn label(&self) -> &'static str {
        match self {
            SlotAction::None => "none",
            SlotAction::Skip => "obf1",
            SlotAction::SkipPredecessor => "obf2_pred",
            SlotAction::Reorder { .. } => "obf3",
        }
    }
}

/// Why an instance with a non-zero window received no action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoneReason {
    ZeroWindow,
    /// Both skip paths blocked and no eligible equal-priority group.
    RulesExhausted,
    /// A reorder was found but would miss a deadline.
    ReorderUnsafe,
}

impl NoneReason {
    pub fn label(&self) -> &'static str {
        match self {
            NoneReason::ZeroWindow => "zero_window",
            NoneReason::RulesExhausted => "rules_exhausted",
            NoneReason::ReorderUnsafe => "reorder_unsafe",
        }
    }
}

/// The rule recorded against one victim instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppliedRule {
    Obf1,
    /// Skipped a higher-priority predecessor; payload is its task index
    /// and slot.
    Obf2 { predecessor_task: usize, predecessor_slot: usize },
    /// Reordered ahead of the block slots.
    Obf3 { group: Vec<usize> },
    /// This instance's slot was emptied while serving as another victim's
    /// predecessor, which zeroes its own transmission as well.
    CollateralSkip,
    None(NoneReason),
}

impl AppliedRule {
    pub fn label(&self) -> &'static str {
        match self {
            AppliedRule::Obf1 => "obf1",
            AppliedRule::Obf2 { .. } => "obf2",
            AppliedRule::Obf3 { .. } => "obf3",
            AppliedRule::CollateralSkip => "obf2_pred",
            AppliedRule::None(_) => "none",
        }
    }

    /// Whether the instance's own transmission disappears from the bus.
    pub fn silences_instance(&self) -> bool {
        matches!(self, AppliedRule::Obf1 | AppliedRule::CollateralSkip)
    }
}

/// One per-victim-instance planning decision.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceDecision {
    pub id: MessageId,
    pub task: usize,
    /// 1-based instance ordinal within one CAN hyper-period.
    pub ordinal: usize,
    /// Schedule slot indices of this ordinal, one per hyper-period covered
    /// by the plan.
    pub slots: Vec<usize>,
    /// Ceiling-averaged attack window length observed during recon.
    pub avg_window: u64,
    pub rule: AppliedRule,
}

/// Complete obfuscation plan for one ECU over one reconnaissance period.
#[derive(Debug, Clone, PartialEq)]
pub struct ObfPlan {
    pub ecu: usize,
    /// Action per schedule slot, aligned with `Schedule::slots`.
    pub slot_actions: Vec<SlotAction>,
    pub decisions: Vec<InstanceDecision>,
}

impl ObfPlan {
    pub fn empty(ecu: usize, num_slots: usize) -> Self {
        ObfPlan {
            ecu,
            slot_actions: vec![SlotAction::None; num_slots],
            decisions: Vec::new(),
        }
    }

    /// True when no slot is touched by any rule.
    pub fn is_identity(&self) -> bool {
        self.slot_actions.iter().all(|a| *a == SlotAction::None)
    }
}

/// Evidence row behind a raised alarm.
#[derive(Debug, Clone, PartialEq)]
pub struct AlarmEvidence {
    pub time: Micros,
    pub bus_slot: usize,
    pub observed_id: MessageId,
    pub planned_action: &'static str,
}

/// Outcome of one Seek pass. `raised` implies non-empty evidence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Alarm {
    pub evidence: Vec<AlarmEvidence>,
}

impl Alarm {
    pub fn raised(&self) -> bool {
        !self.evidence.is_empty()
    }
}
