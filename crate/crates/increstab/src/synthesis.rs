//! Reach-avoid-stay synthesis on finite abstractions under scheduling
//! constraints.
//!
//! The plant's abstract transition system is composed with a cyclic
//! *scheduler automaton* whose slots either allow actuation (`a`: the
//! controller picks any grid input) or deny it (`u`: the input is forced to
//! zero). On the product arena the solver computes, in two classic passes:
//!
//! 1. the largest controlled-invariant core of the target region — a
//!    counter-based worklist that deletes states until every survivor keeps
//!    an admissible move back into the set; then
//! 2. the backward attractor of that core through the obstacle-free states —
//!    a level-synchronous breadth-first sweep over the reversed arena. Each
//!    state's entry records a slot-admissible input that moves one level
//!    closer, so the strategy is memoryless and minimal in steps. Among the
//!    valid inputs both passes pick the one whose successor lands nearest
//!    the target's midpoint (ties: lowest input index) — a deterministic
//!    rule that keeps abstract runs, and with them the continuous replays
//!    trailing a quantization error behind, away from the target boundary.
//!
//! A winning entry at `(state, slot)` therefore drives the abstraction into
//! the target in `depth` slots, never touches an obstacle on the way, and
//! keeps it inside the target forever after. [`closed_loop_replay`] checks
//! the same promise against the *continuous* loop: it snaps the true state at
//! every sampling instant, looks the input up in the table, and reports the
//! slot at which the promise would break, if ever.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::abstraction::Abstraction;
use crate::domain::BoxDomain;
use crate::dynamics::{integrate_endpoint, Rk4Scratch, VectorField};
use crate::error::{Error, Result};

/// One phase of the scheduler cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// The controller may apply any grid input.
    Actuate,
    /// Actuation is unavailable; the zero input is applied.
    Hold,
}

/// A cyclic scheduler: a fixed word over `{a, u}` stepped once per sampling
/// period, starting from a chosen phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulerAutomaton {
    slots: Vec<Slot>,
    initial: usize,
}

impl SchedulerAutomaton {
    /// Parses a cycle like `"auu"` (`a` = actuate, `u` = hold) with the
    /// 0-based initial phase.
    pub fn parse(cycle: &str, initial: usize) -> Result<Self> {
        let mut slots = Vec::with_capacity(cycle.len());
        for c in cycle.chars() {
            slots.push(match c {
                'a' => Slot::Actuate,
                'u' => Slot::Hold,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "scheduler cycle may only contain 'a' and 'u', got '{other}'"
                    )))
                }
            });
        }
        if slots.is_empty() {
            return Err(Error::InvalidArgument("scheduler cycle is empty".into()));
        }
        if initial >= slots.len() {
            return Err(Error::InvalidArgument(format!(
                "initial phase {initial} out of range for a {}-slot cycle",
                slots.len()
            )));
        }
        Ok(Self { slots, initial })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn slot(&self, phase: usize) -> Slot {
        self.slots[phase % self.slots.len()]
    }

    pub fn next(&self, phase: usize) -> usize {
        (phase + 1) % self.slots.len()
    }

    /// The first `n` slot characters emitted from the initial phase.
    pub fn word(&self, n: usize) -> String {
        let mut q = self.initial;
        let mut out = String::with_capacity(n);
        for _ in 0..n {
            out.push(match self.slot(q) {
                Slot::Actuate => 'a',
                Slot::Hold => 'u',
            });
            q = self.next(q);
        }
        out
    }
}

/// The objective: reach `target`, never touch an `obstacle`, stay in
/// `target` once inside. Membership of a grid state is decided by its center
/// point.
#[derive(Debug, Clone)]
pub struct GameRegions {
    pub target: BoxDomain,
    pub obstacles: Vec<BoxDomain>,
}

/// A winning product state's strategy entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControllerEntry {
    /// Grid input to apply (for hold slots, necessarily the zero input).
    pub input: u32,
    /// Slots to the invariance core; 0 inside the core.
    pub depth: u32,
}

/// A memoryless strategy over the product of grid states and scheduler
/// phases, plus the sizes needed to index it: `entry(state, phase)` is
/// `Some` exactly on the winning set.
#[derive(Debug, Clone)]
pub struct Controller {
    scheduler: SchedulerAutomaton,
    n_states: usize,
    entries: Vec<Option<ControllerEntry>>,
}

impl Controller {
    pub fn scheduler(&self) -> &SchedulerAutomaton {
        &self.scheduler
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    fn pid(&self, state: usize, phase: usize) -> usize {
        state * self.scheduler.len() + phase
    }

    pub fn entry(&self, state: usize, phase: usize) -> Option<ControllerEntry> {
        self.entries[self.pid(state, phase)]
    }

    pub fn is_winning(&self, state: usize, phase: usize) -> bool {
        self.entry(state, phase).is_some()
    }

    /// Number of winning product states.
    pub fn n_winning(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    /// Number of product states in the invariance core.
    pub fn n_core(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, Some(e) if e.depth == 0)).count()
    }

    pub fn max_depth(&self) -> u32 {
        self.entries.iter().flatten().map(|e| e.depth).max().unwrap_or(0)
    }

    /// CSV dump, one row per winning product state in index order:
    /// `state_index,automaton_state,input_index,input_value,bfs_depth`.
    /// Multi-axis input values are joined with `;`.
    pub fn to_csv(&self, abstraction: &Abstraction) -> Result<String> {
        if abstraction.n_states() != self.n_states {
            return Err(Error::DimensionMismatch(format!(
                "controller covers {} states, abstraction has {}",
                self.n_states,
                abstraction.n_states()
            )));
        }
        let p = self.scheduler.len();
        let mut out = String::new();
        out.push_str("state_index,automaton_state,input_index,input_value,bfs_depth\n");
        let mut value = vec![0.0; abstraction.input_grid().dim()];
        for (pid, entry) in self.entries.iter().enumerate() {
            let Some(entry) = entry else { continue };
            abstraction.input_grid().center(entry.input as usize, &mut value);
            let joined = value
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(";");
            writeln!(
                out,
                "{},{},{},{joined},{}",
                pid / p,
                pid % p,
                entry.input,
                entry.depth
            )
            .expect("writing to String cannot fail");
        }
        Ok(out)
    }

    /// Inverse of [`Controller::to_csv`]: rebuilds the strategy table from a
    /// dump, validating every index against the abstraction and scheduler.
    pub fn from_csv(
        text: &str,
        abstraction: &Abstraction,
        scheduler: &SchedulerAutomaton,
    ) -> Result<Self> {
        let corrupt = |msg: String| Error::CorruptFile(format!("controller csv: {msg}"));
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| corrupt("empty file".into()))?;
        if header.trim() != "state_index,automaton_state,input_index,input_value,bfs_depth" {
            return Err(corrupt(format!("unexpected header {header:?}")));
        }
        let p = scheduler.len();
        let n_states = abstraction.n_states();
        let mut entries: Vec<Option<ControllerEntry>> = vec![None; n_states * p];
        for (k, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = k + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(corrupt(format!("row {row}: expected 5 fields, got {}", fields.len())));
            }
            let parse_idx = |s: &str, what: &str| -> Result<usize> {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| corrupt(format!("row {row}: bad {what} {s:?}")))
            };
            let state = parse_idx(fields[0], "state index")?;
            let phase = parse_idx(fields[1], "automaton state")?;
            let input = parse_idx(fields[2], "input index")?;
            let depth = parse_idx(fields[4], "depth")?;
            if state >= n_states || phase >= p || input >= abstraction.n_inputs() {
                return Err(corrupt(format!("row {row}: index out of range")));
            }
            let slot = entries
                .get_mut(state * p + phase)
                .expect("index checked above");
            if slot.is_some() {
                return Err(corrupt(format!("row {row}: duplicate entry for ({state}, {phase})")));
            }
            *slot = Some(ControllerEntry { input: input as u32, depth: depth as u32 });
        }
        Ok(Self { scheduler: scheduler.clone(), n_states, entries })
    }
}

/// Grid states whose center lies in `b`.
fn mask_of(abstraction: &Abstraction, b: &BoxDomain) -> Result<Vec<bool>> {
    if b.dim() != abstraction.state_grid().dim() {
        return Err(Error::DimensionMismatch(format!(
            "region box has {} axes, state grid has {}",
            b.dim(),
            abstraction.state_grid().dim()
        )));
    }
    let mut center = vec![0.0; b.dim()];
    Ok((0..abstraction.n_states())
        .map(|s| {
            abstraction.state_grid().center(s, &mut center);
            b.contains(&center)
        })
        .collect())
}

/// Index of the exact zero input on the grid.
fn zero_input_index(abstraction: &Abstraction) -> Result<usize> {
    let m = abstraction.input_grid().dim();
    let j = abstraction
        .input_grid()
        .snap(&vec![0.0; m])
        .filter(|&j| abstraction.input_grid().center_vec(j).iter().all(|&v| v == 0.0))
        .ok_or_else(|| {
            Error::InvalidArgument(
                "the input grid does not contain the zero input, so hold slots cannot be \
                 scheduled"
                    .into(),
            )
        })?;
    Ok(j)
}

struct Arena<'a> {
    abstraction: &'a Abstraction,
    scheduler: &'a SchedulerAutomaton,
    target: Vec<bool>,
    obstacle: Vec<bool>,
    zero_input: usize,
    /// Midpoint of the target box, the anchor of the strategy tie-break.
    target_mid: Vec<f64>,
}

impl<'a> Arena<'a> {
    fn new(
        abstraction: &'a Abstraction,
        scheduler: &'a SchedulerAutomaton,
        regions: &GameRegions,
    ) -> Result<Self> {
        let target = mask_of(abstraction, &regions.target)?;
        let mut obstacle = vec![false; abstraction.n_states()];
        for b in &regions.obstacles {
            for (slot, hit) in obstacle.iter_mut().zip(mask_of(abstraction, b)?) {
                *slot |= hit;
            }
        }
        if !target.iter().any(|&t| t) {
            return Err(Error::InvalidArgument(
                "the target region contains no grid point".into(),
            ));
        }
        if target.iter().zip(&obstacle).any(|(&t, &o)| t && o) {
            return Err(Error::InvalidArgument(
                "the target region overlaps an obstacle on the grid".into(),
            ));
        }
        let zero_input = zero_input_index(abstraction)?;
        let target_mid =
            regions.target.bounds().iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
        Ok(Self { abstraction, scheduler, target, obstacle, zero_input, target_mid })
    }

    fn p(&self) -> usize {
        self.scheduler.len()
    }

    fn n_product(&self) -> usize {
        self.abstraction.n_states() * self.p()
    }

    /// Admissible input indices in a phase, as a range-or-singleton.
    fn admissible(&self, phase: usize) -> std::ops::Range<usize> {
        match self.scheduler.slot(phase) {
            Slot::Actuate => 0..self.abstraction.n_inputs(),
            Slot::Hold => self.zero_input..self.zero_input + 1,
        }
    }

    /// Product successor under input `j`, if the abstract move exists.
    fn step(&self, pid: usize, j: usize) -> Option<usize> {
        let (s, q) = (pid / self.p(), pid % self.p());
        self.abstraction
            .successor(s, j)
            .map(|s2| s2 * self.p() + self.scheduler.next(q))
    }

    fn is_obstacle(&self, pid: usize) -> bool {
        self.obstacle[pid / self.p()]
    }

    /// Squared distance from a product state's grid center to the target's
    /// midpoint. Among equally valid strategy inputs the solvers prefer the
    /// successor of least score: an abstract run then heads for the middle
    /// of the target rather than hugging its boundary, which keeps the
    /// continuous replay — always a quantization error away — inside.
    fn centering(&self, pid: usize, buf: &mut [f64]) -> f64 {
        self.abstraction.state_grid().center(pid / self.p(), buf);
        buf.iter().zip(&self.target_mid).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// The admissible input whose allowed successor lands most centrally in
    /// the target (ties: lowest input index), or `None` when no input
    /// satisfies `allowed`.
    fn best_input(
        &self,
        pid: usize,
        allowed: impl Fn(usize) -> bool,
        buf: &mut [f64],
    ) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for j in self.admissible(pid % self.p()) {
            if let Some(t) = self.step(pid, j) {
                if allowed(t) {
                    let score = self.centering(t, buf);
                    if best.is_none_or(|(s, _)| score < s) {
                        best = Some((score, j));
                    }
                }
            }
        }
        best.map(|(_, j)| j)
    }
}

/// Largest controlled-invariant subset of the target region on the product
/// arena, as strategy entries of depth 0. Worklist over support counters:
/// a product state survives while at least one admissible move stays inside
/// the surviving set.
fn invariance_core(arena: &Arena<'_>) -> Vec<Option<ControllerEntry>> {
    let p = arena.p();
    // Candidates: target states (never obstacles, checked at arena build),
    // all phases, in product-id order.
    let candidates: Vec<u32> = (0..arena.abstraction.n_states())
        .filter(|&s| arena.target[s])
        .flat_map(|s| (0..p).map(move |q| (s * p + q) as u32))
        .collect();
    let local_of = |pid: u32| candidates.binary_search(&pid).ok();

    // One support unit per admissible edge that lands inside the candidate
    // set; reverse edges mirror them for the deletion cascade.
    let mut support = vec![0u32; candidates.len()];
    let mut rev: Vec<Vec<u32>> = vec![Vec::new(); candidates.len()];
    for (li, &pid) in candidates.iter().enumerate() {
        for j in arena.admissible(pid as usize % p) {
            if let Some(t) = arena.step(pid as usize, j) {
                if let Some(lt) = local_of(t as u32) {
                    support[li] += 1;
                    rev[lt].push(li as u32);
                }
            }
        }
    }

    let mut alive = vec![true; candidates.len()];
    let mut queue: VecDeque<u32> = (0..candidates.len() as u32)
        .filter(|&li| support[li as usize] == 0)
        .collect();
    while let Some(li) = queue.pop_front() {
        if !alive[li as usize] {
            continue;
        }
        alive[li as usize] = false;
        for &src in &rev[li as usize] {
            if alive[src as usize] {
                support[src as usize] -= 1;
                if support[src as usize] == 0 {
                    queue.push_back(src);
                }
            }
        }
    }

    let mut entries = vec![None; arena.n_product()];
    let mut buf = vec![0.0; arena.abstraction.state_grid().dim()];
    for (li, &pid) in candidates.iter().enumerate() {
        if !alive[li] {
            continue;
        }
        // Most centering input that stays in the core.
        let input = arena
            .best_input(
                pid as usize,
                |t| local_of(t as u32).is_some_and(|lt| alive[lt]),
                &mut buf,
            )
            .expect("a surviving state keeps a move into the core");
        entries[pid as usize] = Some(ControllerEntry { input: input as u32, depth: 0 });
    }
    entries
}

/// Solves the pure invariance game: stay in the target forever under the
/// scheduler. The result's winning set is exactly the invariance core.
pub fn solve_invariance(
    abstraction: &Abstraction,
    scheduler: &SchedulerAutomaton,
    regions: &GameRegions,
) -> Result<Controller> {
    let arena = Arena::new(abstraction, scheduler, regions)?;
    Ok(Controller {
        scheduler: scheduler.clone(),
        n_states: abstraction.n_states(),
        entries: invariance_core(&arena),
    })
}

/// Solves the reach-avoid-stay game: the winning entries drive the
/// abstraction into the invariance core of the target in `depth` slots
/// without touching an obstacle, then hold it there.
pub fn solve_reach_avoid_stay(
    abstraction: &Abstraction,
    scheduler: &SchedulerAutomaton,
    regions: &GameRegions,
) -> Result<Controller> {
    let arena = Arena::new(abstraction, scheduler, regions)?;
    let mut entries = invariance_core(&arena);
    let n_product = arena.n_product();

    // Reverse arena over obstacle-free product states, in compressed form.
    let mut indegree = vec![0u32; n_product];
    let mut edge_count = 0usize;
    for pid in 0..n_product {
        if arena.is_obstacle(pid) {
            continue;
        }
        for j in arena.admissible(pid % arena.p()) {
            if let Some(t) = arena.step(pid, j) {
                if !arena.is_obstacle(t) {
                    indegree[t] += 1;
                    edge_count += 1;
                }
            }
        }
    }
    let mut offsets = vec![0usize; n_product + 1];
    for pid in 0..n_product {
        offsets[pid + 1] = offsets[pid] + indegree[pid] as usize;
    }
    let mut sources = vec![0u32; edge_count];
    let mut cursor = offsets.clone();
    for pid in 0..n_product {
        if arena.is_obstacle(pid) {
            continue;
        }
        for j in arena.admissible(pid % arena.p()) {
            if let Some(t) = arena.step(pid, j) {
                if !arena.is_obstacle(t) {
                    sources[cursor[t]] = pid as u32;
                    cursor[t] += 1;
                }
            }
        }
    }

    // Level-synchronous backward sweep from the core. `stamp` dedups the
    // candidate list of the level being built.
    let mut frontier: Vec<u32> =
        (0..n_product as u32).filter(|&pid| entries[pid as usize].is_some()).collect();
    let mut stamp = vec![0u32; n_product];
    let mut depth = 0u32;
    while !frontier.is_empty() {
        depth += 1;
        let mut candidates: Vec<u32> = Vec::new();
        for &t in &frontier {
            for &src in &sources[offsets[t as usize]..offsets[t as usize + 1]] {
                if entries[src as usize].is_none() && stamp[src as usize] != depth {
                    stamp[src as usize] = depth;
                    candidates.push(src);
                }
            }
        }
        candidates.sort_unstable();
        let mut next = Vec::with_capacity(candidates.len());
        let mut buf = vec![0.0; abstraction.state_grid().dim()];
        for &pid in &candidates {
            // Most centering input that moves strictly closer to the core.
            let input = arena.best_input(
                pid as usize,
                |t| entries[t].is_some_and(|e| e.depth < depth),
                &mut buf,
            );
            let input = input.expect("a frontier predecessor has a move into the previous level");
            entries[pid as usize] = Some(ControllerEntry { input: input as u32, depth });
            next.push(pid);
        }
        frontier = next;
    }

    Ok(Controller {
        scheduler: scheduler.clone(),
        n_states: abstraction.n_states(),
        entries,
    })
}

/// State of the replay at one sampling instant.
#[derive(Debug, Clone, Copy)]
pub struct ReplaySlot {
    /// Snapped grid state at the instant.
    pub state: usize,
    /// Scheduler phase governing the upcoming period.
    pub phase: usize,
    /// Whether the snapped state lies in the target region.
    pub in_target: bool,
    /// Depth of the controller entry used next (0 once inside the core).
    pub depth: u32,
}

/// Dense record of a closed-loop replay.
#[derive(Debug, Clone)]
pub struct ReplayLog {
    state_dim: usize,
    input_dim: usize,
    /// Time stamps at integration resolution.
    pub times: Vec<f64>,
    /// States, flattened row-major along `times`.
    pub states: Vec<f64>,
    /// Input held at each time stamp (the final stamp repeats the last one).
    pub inputs: Vec<f64>,
    /// Slot character ('a'/'u') governing each time stamp.
    pub slot_chars: Vec<char>,
    /// Per-sampling-instant summary, length `n_slots + 1`.
    pub slots: Vec<ReplaySlot>,
    /// First sampling instant whose snapped state lies in the target.
    pub entered_target_at: Option<usize>,
    /// Number of trailing sampling instants continuously inside the target.
    pub target_tail: usize,
}

impl ReplayLog {
    /// CSV dump: `t,x1,..,xn,u1,..,um,slot` at integration resolution.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push('t');
        for i in 1..=self.state_dim {
            write!(out, ",x{i}").expect("write to String");
        }
        for i in 1..=self.input_dim {
            write!(out, ",u{i}").expect("write to String");
        }
        out.push_str(",slot\n");
        for (k, &t) in self.times.iter().enumerate() {
            write!(out, "{t:.16e}").expect("write to String");
            for i in 0..self.state_dim {
                write!(out, ",{:.16e}", self.states[k * self.state_dim + i])
                    .expect("write to String");
            }
            for i in 0..self.input_dim {
                write!(out, ",{:.16e}", self.inputs[k * self.input_dim + i])
                    .expect("write to String");
            }
            writeln!(out, ",{}", self.slot_chars[k]).expect("write to String");
        }
        out
    }
}

/// Replays a synthesized controller against the continuous loop for
/// `n_slots` sampling periods from `x0`.
///
/// At every instant the true state is snapped to the grid and the entry at
/// `(snapped state, phase)` supplies the input for the next period — hold
/// phases thus apply the zero input by construction. The replay fails (with
/// the offending slot) when the state leaves `domain`, hits an obstacle, or
/// the controller has no entry for the snapped state.
#[allow(clippy::too_many_arguments)]
pub fn closed_loop_replay(
    field: &VectorField,
    abstraction: &Abstraction,
    controller: &Controller,
    regions: &GameRegions,
    domain: &BoxDomain,
    x0: &[f64],
    n_slots: usize,
    inner_step: f64,
) -> Result<ReplayLog> {
    let n = field.state_dim();
    let m = field.input_dim();
    if x0.len() != n || domain.dim() != n || abstraction.state_grid().dim() != n {
        return Err(Error::DimensionMismatch(
            "field, domain, abstraction, and initial state disagree on the dimension".into(),
        ));
    }
    if abstraction.input_grid().dim() != m {
        return Err(Error::DimensionMismatch(
            "field and abstraction disagree on the input dimension".into(),
        ));
    }
    if controller.n_states() != abstraction.n_states() {
        return Err(Error::DimensionMismatch(format!(
            "controller covers {} states, abstraction has {}",
            controller.n_states(),
            abstraction.n_states()
        )));
    }
    if n_slots == 0 {
        return Err(Error::InvalidArgument("need at least one slot to replay".into()));
    }
    let tau = abstraction.tau();
    let steps_f = (tau / inner_step).round();
    if !(inner_step.is_finite() && inner_step > 0.0)
        || (steps_f * inner_step - tau).abs() > 1e-9 * tau.max(1.0)
    {
        return Err(Error::InvalidArgument(format!(
            "period {tau} is not a whole number of steps of {inner_step}"
        )));
    }
    let steps_per_slot = steps_f as usize;

    let target_mask = mask_of(abstraction, &regions.target)?;
    let mut obstacle_mask = vec![false; abstraction.n_states()];
    for b in &regions.obstacles {
        for (slot, hit) in obstacle_mask.iter_mut().zip(mask_of(abstraction, b)?) {
            *slot |= hit;
        }
    }

    let scheduler = controller.scheduler();
    let total_rows = n_slots * steps_per_slot + 1;
    let mut log = ReplayLog {
        state_dim: n,
        input_dim: m,
        times: Vec::with_capacity(total_rows),
        states: Vec::with_capacity(total_rows * n),
        inputs: Vec::with_capacity(total_rows * m),
        slot_chars: Vec::with_capacity(total_rows),
        slots: Vec::with_capacity(n_slots + 1),
        entered_target_at: None,
        target_tail: 0,
    };

    let mut x = x0.to_vec();
    let mut u = vec![0.0; m];
    let mut phase = scheduler.initial();
    let mut scratch = Rk4Scratch::new(n);

    for slot in 0..=n_slots {
        if !domain.contains(&x) {
            return Err(Error::ReplayFailed {
                slot,
                reason: format!("state {x:?} left the region of interest"),
            });
        }
        let state = abstraction.state_grid().snap(&x).ok_or_else(|| Error::ReplayFailed {
            slot,
            reason: format!("state {x:?} has no grid point"),
        })?;
        if obstacle_mask[state] {
            return Err(Error::ReplayFailed { slot, reason: "entered an obstacle".into() });
        }
        let entry =
            controller.entry(state, phase).ok_or_else(|| Error::ReplayFailed {
                slot,
                reason: format!("grid state {state} in phase {phase} is outside the winning set"),
            })?;
        let in_target = target_mask[state];
        if in_target && log.entered_target_at.is_none() {
            log.entered_target_at = Some(slot);
        }
        log.slots.push(ReplaySlot { state, phase, in_target, depth: entry.depth });
        if slot == n_slots {
            break;
        }

        abstraction.input_grid().center(entry.input as usize, &mut u);
        let slot_char = match scheduler.slot(phase) {
            Slot::Actuate => 'a',
            Slot::Hold => 'u',
        };
        // Dense rows for this period (the closing boundary row is written by
        // the next iteration, or after the loop for the final slot).
        for step in 0..steps_per_slot {
            log.times.push((slot * steps_per_slot + step) as f64 * inner_step);
            log.states.extend_from_slice(&x);
            log.inputs.extend_from_slice(&u);
            log.slot_chars.push(slot_char);
            integrate_endpoint(field, &mut x, &u, 1, inner_step, &mut scratch).map_err(|e| {
                Error::ReplayFailed { slot, reason: e.to_string() }
            })?;
        }
        phase = scheduler.next(phase);
    }
    // Closing boundary row; the last held input is repeated.
    log.times.push((n_slots * steps_per_slot) as f64 * inner_step);
    log.states.extend_from_slice(&x);
    let last_u = if log.inputs.len() >= m {
        log.inputs[log.inputs.len() - m..].to_vec()
    } else {
        vec![0.0; m]
    };
    log.inputs.extend_from_slice(&last_u);
    log.slot_chars.push(*log.slot_chars.last().unwrap_or(&'a'));

    log.target_tail = log.slots.iter().rev().take_while(|s| s.in_target).count();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::build_abstraction;

    /// dx/dt = u on [-1, 1]: with eta = tau = 0.25 and inputs {-1, 0, 1},
    /// every period moves exactly one cell (or none), so the game is
    /// hand-checkable.
    fn toy() -> Abstraction {
        let drift = VectorField::new(1, 1, |_x, u, out| out[0] = u[0]);
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        let inputs = BoxDomain::symmetric(1, 1.0).unwrap();
        build_abstraction(&drift, &domain, 0.25, &inputs, 1.0, 0.25, 0.025).unwrap()
    }

    fn toy_regions() -> GameRegions {
        GameRegions {
            target: BoxDomain::symmetric(1, 0.25).unwrap(),
            obstacles: Vec::new(),
        }
    }

    fn alternating() -> SchedulerAutomaton {
        SchedulerAutomaton::parse("au", 0).unwrap()
    }

    #[test]
    fn scheduler_parses_and_emits_its_word() {
        let s = SchedulerAutomaton::parse("auu", 1).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.word(8), "uuauuauu");
        assert_eq!(s.slot(0), Slot::Actuate);
        assert_eq!(s.slot(1), Slot::Hold);
        assert!(SchedulerAutomaton::parse("axu", 0).is_err());
        assert!(SchedulerAutomaton::parse("", 0).is_err());
        assert!(SchedulerAutomaton::parse("au", 2).is_err());
    }

    #[test]
    fn invariance_core_of_the_toy_is_the_full_target_product() {
        // Holding u = 0 keeps any state in place, so every (target state,
        // phase) pair survives.
        let abs = toy();
        let ctrl = solve_invariance(&abs, &alternating(), &toy_regions()).unwrap();
        assert_eq!(ctrl.n_winning(), 6); // 3 states x 2 phases
        assert_eq!(ctrl.n_core(), 6);
        // k = -1, 0, 1 are states 3, 4, 5 on the 9-point grid.
        for state in [3, 4, 5] {
            for phase in [0, 1] {
                assert!(ctrl.is_winning(state, phase), "({state}, {phase})");
            }
        }
        assert!(!ctrl.is_winning(6, 0));
    }

    #[test]
    fn reach_depths_match_hand_counting() {
        // From the right edge (k = 4) under the a,u alternation the plant
        // can move one cell left only in 'a' phases, so depths grow by 2 per
        // cell plus the phase parity.
        let abs = toy();
        let ctrl = solve_reach_avoid_stay(&abs, &alternating(), &toy_regions()).unwrap();
        assert_eq!(ctrl.n_winning(), 18); // everything wins
        let depth = |state: usize, phase: usize| ctrl.entry(state, phase).unwrap().depth;
        // Core.
        assert_eq!(depth(4, 0), 0);
        assert_eq!(depth(3, 1), 0);
        // k = 2 (state 6): one move in 'a', a forced wait first in 'u'.
        assert_eq!(depth(6, 0), 1);
        assert_eq!(depth(6, 1), 2);
        // k = 3, 4 (states 7, 8): two and three more slots per parity.
        assert_eq!(depth(7, 0), 3);
        assert_eq!(depth(7, 1), 4);
        assert_eq!(depth(8, 0), 5);
        assert_eq!(depth(8, 1), 6);
        // Strategies move toward the target: at (6, 'a') the least input
        // into the previous level is u = -1, index 0.
        assert_eq!(ctrl.entry(6, 0).unwrap().input, 0);
        // Hold phases store the zero input, index 1.
        assert_eq!(ctrl.entry(6, 1).unwrap().input, 1);
    }

    #[test]
    fn obstacles_cut_the_winning_set() {
        // An obstacle on k = 2 (center 0.5) seals the right side off: with
        // |u| <= 1 a period moves at most one cell, so k = 3, 4 cannot pass.
        let abs = toy();
        let regions = GameRegions {
            target: BoxDomain::symmetric(1, 0.25).unwrap(),
            obstacles: vec![BoxDomain::new(vec![(0.4, 0.6)]).unwrap()],
        };
        let ctrl = solve_reach_avoid_stay(&abs, &alternating(), &regions).unwrap();
        for state in [6, 7, 8] {
            for phase in [0, 1] {
                assert!(!ctrl.is_winning(state, phase), "({state}, {phase}) should be cut off");
            }
        }
        // The left side still wins.
        for state in [0, 1, 2, 3, 4, 5] {
            for phase in [0, 1] {
                assert!(ctrl.is_winning(state, phase), "({state}, {phase}) should win");
            }
        }
    }

    #[test]
    fn games_need_the_zero_input_on_the_grid() {
        let drift = VectorField::new(1, 1, |_x, u, out| out[0] = u[0]);
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        let inputs = BoxDomain::new(vec![(0.3, 1.3)]).unwrap();
        let abs = build_abstraction(&drift, &domain, 0.25, &inputs, 0.5, 0.25, 0.025).unwrap();
        let err = solve_reach_avoid_stay(&abs, &alternating(), &toy_regions());
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn target_validation_is_enforced() {
        let abs = toy();
        let off_grid = GameRegions {
            target: BoxDomain::new(vec![(0.30, 0.35)]).unwrap(),
            obstacles: Vec::new(),
        };
        assert!(solve_reach_avoid_stay(&abs, &alternating(), &off_grid).is_err());
        let overlapping = GameRegions {
            target: BoxDomain::symmetric(1, 0.25).unwrap(),
            obstacles: vec![BoxDomain::new(vec![(-0.1, 0.1)]).unwrap()],
        };
        assert!(solve_reach_avoid_stay(&abs, &alternating(), &overlapping).is_err());
    }

    #[test]
    fn controller_csv_is_ordered_and_complete() {
        let abs = toy();
        let ctrl = solve_reach_avoid_stay(&abs, &alternating(), &toy_regions()).unwrap();
        let csv = ctrl.to_csv(&abs).unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "state_index,automaton_state,input_index,input_value,bfs_depth"
        );
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 18);
        // First row: state 0, phase 0, depth from hand counting = 2 cells
        // below the target... state 0 is k = -4, symmetric to k = 4.
        assert_eq!(rows[0], "0,0,2,1.0000000000000000e0,5");
        // Deterministic across runs.
        let again = solve_reach_avoid_stay(&abs, &alternating(), &toy_regions()).unwrap();
        assert_eq!(csv, again.to_csv(&abs).unwrap());
    }

    #[test]
    fn controller_csv_round_trips() {
        let abs = toy();
        let sched = alternating();
        let ctrl = solve_reach_avoid_stay(&abs, &sched, &toy_regions()).unwrap();
        let csv = ctrl.to_csv(&abs).unwrap();
        let back = Controller::from_csv(&csv, &abs, &sched).unwrap();
        assert_eq!(back.to_csv(&abs).unwrap(), csv);
        assert_eq!(back.n_winning(), ctrl.n_winning());
        assert_eq!(back.max_depth(), ctrl.max_depth());

        assert!(Controller::from_csv("", &abs, &sched).is_err());
        assert!(Controller::from_csv("bogus header\n", &abs, &sched).is_err());
        let mut bad_state = csv.lines().take(2).collect::<Vec<_>>().join("\n");
        bad_state.push_str("\n99,0,2,1.0,5\n");
        assert!(Controller::from_csv(&bad_state, &abs, &sched).is_err());
        let header = csv.lines().next().unwrap();
        let dup = format!("{header}\n0,0,2,1.0,5\n0,0,2,1.0,5\n");
        assert!(Controller::from_csv(&dup, &abs, &sched).is_err());
    }

    #[test]
    fn replay_follows_the_controller_into_the_target_and_stays() {
        let abs = toy();
        let drift = VectorField::new(1, 1, |_x, u, out| out[0] = u[0]);
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        let regions = toy_regions();
        let ctrl = solve_reach_avoid_stay(&abs, &alternating(), &regions).unwrap();
        // 0.9 snaps to k = 4 (the right edge), depth 5 in phase 'a'; every
        // later boundary (0.65, 0.4, 0.15, ...) sits well clear of the cell
        // midpoints, so the hand count below is immune to rounding.
        let log = closed_loop_replay(
            &drift,
            &abs,
            &ctrl,
            &regions,
            &domain,
            &[0.9],
            20,
            0.025,
        )
        .unwrap();
        assert_eq!(log.slots.len(), 21);
        assert_eq!(log.entered_target_at, Some(5));
        assert!(log.target_tail >= 16, "tail {}", log.target_tail);
        // Hold slots applied exactly zero input.
        for (k, &c) in log.slot_chars.iter().enumerate() {
            if c == 'u' {
                assert_eq!(log.inputs[k], 0.0, "row {k}");
            }
        }
        // Dense rows cover every integration step.
        assert_eq!(log.times.len(), 20 * 10 + 1);
        let csv = log.to_csv();
        assert!(csv.starts_with("t,x1,u1,slot\n"));
        assert_eq!(csv.lines().count(), 202);
    }

    #[test]
    fn replay_reports_the_failing_slot() {
        let abs = toy();
        let drift = VectorField::new(1, 1, |_x, u, out| out[0] = u[0]);
        let domain = BoxDomain::symmetric(1, 1.0).unwrap();
        // Obstacle variant: starting on the sealed-off side fails at slot 0.
        let regions = GameRegions {
            target: BoxDomain::symmetric(1, 0.25).unwrap(),
            obstacles: vec![BoxDomain::new(vec![(0.4, 0.6)]).unwrap()],
        };
        let ctrl = solve_reach_avoid_stay(&abs, &alternating(), &regions).unwrap();
        let err = closed_loop_replay(
            &drift,
            &abs,
            &ctrl,
            &regions,
            &domain,
            &[0.9],
            10,
            0.025,
        );
        match err {
            Err(Error::ReplayFailed { slot: 0, .. }) => {}
            other => panic!("expected a slot-0 failure, got {other:?}"),
        }
        // Starting outside the domain fails immediately too.
        let err = closed_loop_replay(
            &drift,
            &abs,
            &ctrl,
            &regions,
            &domain,
            &[1.5],
            10,
            0.025,
        );
        assert!(matches!(err, Err(Error::ReplayFailed { slot: 0, .. })));
    }
}
