//! ECU task sets and execution schedules: hyper-period arithmetic,
//! non-preemptive static/EDF schedule generation with equal-priority
//! groups, bus-slot/ECU-slot mapping, and application of obfuscation plans.
//!
//! Tasks run to completion once dispatched. When two or more ready tasks
//! tie under the active policy they are dispatched back to back as one
//! block, FIFO by task name; those blocks are the equal-priority groups the
//! reorder rule may permute.

use std::io::Write;

use rand::Rng;

use crate::bus::{BusEventKind, BusTrace, Frame, MessageId, Micros};
use crate::error::{Error, Result};
use crate::hns::{ObfPlan, SlotAction};

/// Static description of one periodic ECU task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub period: Micros,
    /// Release offset of the first instance.
    pub offset: Micros,
    pub wcet: Micros,
    /// Smaller value = higher priority; consulted by the static policy.
    pub ecu_priority: u32,
    /// Message transmitted on completion, if the task talks to the bus.
    pub msg_id: Option<MessageId>,
    pub dlc: u8,
    pub is_control: bool,
    /// Consecutive-skip bound; present on every control task.
    pub skip_limit: Option<u32>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::scenario("task.period", "period must be positive"));
        }
        if self.wcet > self.period {
            return Err(Error::scenario(
                "task.wcet",
                format!("wcet exceeds period for task `{}`", self.name),
            ));
        }
        if self.offset >= self.period {
            return Err(Error::scenario(
                "task.offset",
                format!("offset must be below the period for task `{}`", self.name),
            ));
        }
        if self.is_control && (self.msg_id.is_none() || self.skip_limit.is_none()) {
            return Err(Error::scenario(
                "task.control",
                format!(
                    "control task `{}` needs both a message id and a skip limit",
                    self.name
                ),
            ));
        }
        Ok(())
    }

    /// Release time of the 1-based `instance`.
    pub fn release(&self, instance: usize) -> Micros {
        self.offset + (instance as Micros - 1) * self.period
    }

    /// Absolute deadline of the 1-based `instance` (next release).
    pub fn deadline(&self, instance: usize) -> Micros {
        self.release(instance) + self.period
    }
}

/// Scheduling policy for [`build_schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Fixed priorities from `ecu_priority`.
    StaticTable,
    /// Non-preemptive earliest deadline first.
    Edf,
}

/// Whether a slot executes its task instance or was emptied by a skip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKind {
    Run,
    Skipped,
}

/// One execution slot of the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub index: usize,
    pub start: Micros,
    pub task: usize,
    /// 1-based instance number of the task within the schedule horizon.
    pub instance: usize,
    pub kind: SlotKind,
}

/// A decision point at which two or more ready tasks tied and were
/// dispatched as one block.
#[derive(Debug, Clone, PartialEq)]
pub struct EqPriGroup {
    pub decision_time: Micros,
    /// Slot indices of the block in dispatch order.
    pub slots: Vec<usize>,
}

/// Deadline-respecting execution schedule over a whole number of
/// hyper-periods.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub tasks: Vec<TaskSpec>,
    pub slots: Vec<Slot>,
    pub hyperperiod: Micros,
    pub horizon: Micros,
    pub groups: Vec<EqPriGroup>,
}

fn gcd(a: Micros, b: Micros) -> Micros {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Least common multiple of the task periods.
pub fn hyperperiod(tasks: &[TaskSpec]) -> Result<Micros> {
    let mut acc: Micros = 1;
    for t in tasks {
        assert!(t.period > 0, "periods must be positive");
        let g = gcd(acc, t.period);
        acc = acc
            .checked_mul(t.period / g)
            .ok_or(Error::HyperperiodOverflow)?;
    }
    Ok(acc)
}

/// Builds the execution schedule and the equal-priority groups over
/// `horizon`, which must be a whole multiple of the hyper-period.
pub fn build_schedule(tasks: &[TaskSpec], horizon: Micros, policy: Policy) -> Result<Schedule> {
    for t in tasks {
        t.validate()?;
    }
    let h = hyperperiod(tasks)?;
    assert!(
        horizon % h == 0 && horizon > 0,
        "horizon must be a positive multiple of the hyper-period"
    );

    // (release, deadline, task, instance) for every instance in the horizon
    let mut remaining: Vec<(Micros, Micros, usize, usize)> = Vec::new();
    for (ti, t) in tasks.iter().enumerate() {
        let mut inst = 1usize;
        while t.release(inst) < horizon {
            remaining.push((t.release(inst), t.deadline(inst), ti, inst));
            inst += 1;
        }
    }

    let mut slots: Vec<Slot> = Vec::new();
    let mut groups: Vec<EqPriGroup> = Vec::new();
    let mut now: Micros = 0;

    while !remaining.is_empty() {
        let earliest = remaining.iter().map(|&(r, ..)| r).min().unwrap();
        if earliest > now {
            now = earliest;
        }
        let mut ready: Vec<usize> = remaining
            .iter()
            .enumerate()
            .filter(|(_, &(r, ..))| r <= now)
            .map(|(i, _)| i)
            .collect();

        let key = |i: usize| -> (u64, &str) {
            let (_, d, ti, _) = remaining[i];
            match policy {
                Policy::Edf => (d, tasks[ti].name.as_str()),
                Policy::StaticTable => (tasks[ti].ecu_priority as u64, tasks[ti].name.as_str()),
            }
        };
        ready.sort_by(|&a, &b| key(a).cmp(&key(b)));
        let best_key = key(ready[0]).0;
        let block: Vec<usize> = ready
            .iter()
            .copied()
            .take_while(|&i| key(i).0 == best_key)
            .collect();

        let block_start = now;
        let mut block_slots = Vec::new();
        for &i in &block {
            let (_, d, ti, inst) = remaining[i];
            let end = now + tasks[ti].wcet;
            if end > d {
                return Err(Error::Infeasible {
                    task: tasks[ti].name.clone(),
                    missed_at: d,
                });
            }
            let idx = slots.len();
            slots.push(Slot {
                index: idx,
                start: now,
                task: ti,
                instance: inst,
                kind: SlotKind::Run,
            });
            block_slots.push(idx);
            now = end;
        }
        if block_slots.len() >= 2 {
            groups.push(EqPriGroup {
                decision_time: block_start,
                slots: block_slots,
            });
        }
        let mut dispatched = block;
        dispatched.sort_unstable_by(|a, b| b.cmp(a));
        for i in dispatched {
            remaining.swap_remove(i);
        }
    }

    // `now` only moves forward, so slots are already in start order.
    debug_assert!(slots.windows(2).all(|w| w[0].start <= w[1].start));

    Ok(Schedule {
        tasks: tasks.to_vec(),
        slots,
        hyperperiod: h,
        horizon,
        groups,
    })
}

impl Schedule {
    /// Sum of wcet/period over the task set.
    pub fn utilization(tasks: &[TaskSpec]) -> f64 {
        tasks.iter().map(|t| t.wcet as f64 / t.period as f64).sum()
    }

    /// Execution end (frame release instant) of a slot.
    pub fn slot_end(&self, slot: &Slot) -> Micros {
        slot.start + self.tasks[slot.task].wcet
    }

    /// Run slots of `task`, in instance order.
    pub fn run_slots_of(&self, task: usize) -> Vec<&Slot> {
        let mut v: Vec<&Slot> = self
            .slots
            .iter()
            .filter(|s| s.task == task && s.kind == SlotKind::Run)
            .collect();
        v.sort_by_key(|s| s.instance);
        v
    }

    /// All slots of `task` (run or skipped), in instance order.
    pub fn slots_of(&self, task: usize) -> Vec<&Slot> {
        let mut v: Vec<&Slot> = self.slots.iter().filter(|s| s.task == task).collect();
        v.sort_by_key(|s| s.instance);
        v
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTask(name.to_string()))
    }

    /// Frames this schedule releases on the bus, shifted by `base_time`,
    /// with optional uniform release jitter in `[0, jitter_max]`.
    pub fn release_frames(
        &self,
        source: usize,
        base_time: Micros,
        jitter_max: Micros,
        rng: &mut impl Rng,
    ) -> Vec<Frame> {
        let mut frames: Vec<Frame> = Vec::new();
        for slot in &self.slots {
            if slot.kind != SlotKind::Run {
                continue;
            }
            let t = &self.tasks[slot.task];
            let Some(id) = t.msg_id else { continue };
            let jitter = if jitter_max == 0 {
                0
            } else {
                rng.random_range(0..=jitter_max)
            };
            let release = base_time + self.slot_end(slot) + jitter;
            frames.push(
                Frame::new(id, vec![0x55; t.dlc as usize], source, release)
                    .expect("task frames are valid by construction"),
            );
        }
        frames.sort_by_key(|f| f.release_time);
        frames
    }

    /// Writes the schedule as CSV, annotating each slot with the plan's
    /// action when a plan is given.
    pub fn write_csv<W: Write>(&self, w: &mut W, plan: Option<&ObfPlan>) -> Result<()> {
        writeln!(w, "slot_index,start_us,task,instance,obf_action")?;
        for s in &self.slots {
            let action = match plan {
                Some(p) => p.slot_actions[s.index].label(),
                None => {
                    if s.kind == SlotKind::Skipped {
                        "skip"
                    } else {
                        "none"
                    }
                }
            };
            writeln!(
                w,
                "{},{},{},{},{}",
                s.index, s.start, self.tasks[s.task].name, s.instance, action
            )?;
        }
        Ok(())
    }
}

/// Direction of a [`SlotMap`] lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapDirection {
    BusToEcu,
    EcuToBus,
}

/// Correspondence between bus transmission slots and the ECU execution
/// slots that produced them, built from one observation window.
///
/// Matching is ordinal per message id: the k-th transmission of id `v` in
/// the window maps to the k-th run slot of the task owning `v`.
#[derive(Debug, Clone)]
pub struct SlotMap {
    /// bus slot (1-based) -> ECU slot index
    bus_to_ecu: Vec<Option<usize>>,
    /// ECU slot index -> bus slot (1-based)
    ecu_to_bus: Vec<Option<usize>>,
}

impl SlotMap {
    pub fn build(schedule: &Schedule, trace: &BusTrace) -> Self {
        let n_bus = trace
            .events
            .iter()
            .filter(|e| e.kind == BusEventKind::TxSuccess)
            .count();
        let mut bus_to_ecu = vec![None; n_bus + 1];
        let mut ecu_to_bus = vec![None; schedule.slots.len()];

        for (ti, task) in schedule.tasks.iter().enumerate() {
            let Some(id) = task.msg_id else { continue };
            let bus_slots: Vec<usize> = trace
                .transmissions()
                .filter(|(_, e)| e.frame.as_ref().unwrap().id == id)
                .map(|(i, _)| i)
                .collect();
            let run_slots = schedule.run_slots_of(ti);
            for (b, s) in bus_slots.iter().zip(run_slots.iter()) {
                bus_to_ecu[*b] = Some(s.index);
                ecu_to_bus[s.index] = Some(*b);
            }
        }
        SlotMap {
            bus_to_ecu,
            ecu_to_bus,
        }
    }

    /// Maps a slot index in the given direction. `Ok(None)` when the slot
    /// exists but has no counterpart (idle or another ECU's transmission).
    pub fn lookup(&self, slot: usize, direction: MapDirection) -> Result<Option<usize>> {
        match direction {
            MapDirection::BusToEcu => {
                if slot == 0 || slot >= self.bus_to_ecu.len() {
                    return Err(Error::UnknownSlot(slot));
                }
                Ok(self.bus_to_ecu[slot])
            }
            MapDirection::EcuToBus => {
                if slot >= self.ecu_to_bus.len() {
                    return Err(Error::UnknownSlot(slot));
                }
                Ok(self.ecu_to_bus[slot])
            }
        }
    }
}

/// Applies an obfuscation plan to a schedule: skip actions empty their slot
/// (the gap is preserved, nothing is released), reorder actions permute the
/// victim ahead of its block. Untouched slots are preserved verbatim.
pub fn apply_obf(schedule: &Schedule, plan: &ObfPlan) -> Result<Schedule> {
    assert_eq!(
        plan.slot_actions.len(),
        schedule.slots.len(),
        "plan must cover the schedule horizon"
    );
    let mut out = schedule.clone();

    // Reorders first: they re-time whole blocks; skips then empty slots.
    for (idx, action) in plan.slot_actions.iter().enumerate() {
        if let SlotAction::Reorder { block } = action {
            reorder_block(&mut out, idx, block)?;
        }
    }
    for (idx, action) in plan.slot_actions.iter().enumerate() {
        if matches!(action, SlotAction::Skip | SlotAction::SkipPredecessor) {
            out.slots[idx].kind = SlotKind::Skipped;
        }
    }
    Ok(out)
}

fn reorder_block(schedule: &mut Schedule, victim_slot: usize, block: &[usize]) -> Result<()> {
    debug_assert!(block.contains(&victim_slot));
    let mut order: Vec<usize> = Vec::with_capacity(block.len());
    order.push(victim_slot);
    let mut rest: Vec<usize> = block.iter().copied().filter(|&s| s != victim_slot).collect();
    rest.sort_by_key(|&s| schedule.slots[s].start);
    order.extend(rest);

    let block_start = block
        .iter()
        .map(|&s| schedule.slots[s].start)
        .min()
        .unwrap();
    let mut positions: Vec<usize> = block.to_vec();
    positions.sort_by_key(|&s| schedule.slots[s].start);

    let assignments: Vec<(usize, usize)> = order
        .iter()
        .map(|&s| (schedule.slots[s].task, schedule.slots[s].instance))
        .collect();

    // Re-pack the block's task instances into its positions in the new
    // order, keeping the block's starting instant.
    let mut now = block_start;
    for (pos, (task, instance)) in positions.iter().zip(assignments) {
        let end = now + schedule.tasks[task].wcet;
        let deadline = schedule.tasks[task].deadline(instance);
        if end > deadline {
            return Err(Error::PlanDeadlineMiss {
                task: schedule.tasks[task].name.clone(),
                instance,
            });
        }
        let slot = &mut schedule.slots[*pos];
        slot.task = task;
        slot.instance = instance;
        slot.start = now;
        now = end;
    }
    Ok(())
}
