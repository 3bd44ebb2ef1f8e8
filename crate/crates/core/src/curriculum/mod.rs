//! Length schedule: curriculum learning (CL), variable length (VL) and
//! teacher helping (TH).

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchedulePolicy {
    pub cl: bool,
    pub vl: bool,
    pub th: bool,
    pub max_len: usize,
    /// Number of `advance` calls spent at each cap while CL is on.
    pub iters_per_stage: u64,
    pub start_len: usize,
}

impl Default for SchedulePolicy {
    fn default() -> Self {
        SchedulePolicy { cl: false, vl: false, th: false, max_len: 32, iters_per_stage: 1000, start_len: 1 }
    }
}

impl SchedulePolicy {
    pub fn new(cl: bool, vl: bool, th: bool) -> Self {
        SchedulePolicy { cl, vl, th, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_len < 1 || self.start_len > self.max_len {
            return Err(Error::Config(format!(
                "start_len must lie in 1..={}, got {}",
                self.max_len, self.start_len
            )));
        }
        if self.iters_per_stage < 1 {
            return Err(Error::Config("iters_per_stage must be at least 1".into()));
        }
        Ok(())
    }

    /// Short label such as `CL+VL+TH`, or `base` with every extension off.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.cl, "CL"), (self.vl, "VL"), (self.th, "TH")]
            .iter()
            .filter(|p| p.0)
            .map(|p| p.1)
            .collect();
        if parts.is_empty() { "base".into() } else { parts.join("+") }
    }

    /// The cap reached after `global_iter` calls to [`advance`].
    pub fn cap_at(&self, global_iter: u64) -> usize {
        if !self.cl {
            return self.max_len;
        }
        let stages = global_iter / self.iters_per_stage;
        let room = (self.max_len - self.start_len) as u64;
        self.start_len + stages.min(room) as usize
    }

    /// Number of `advance` calls after which the cap stops growing.
    pub fn saturation_iter(&self) -> u64 {
        if self.cl { (self.max_len - self.start_len) as u64 * self.iters_per_stage } else { 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleState {
    pub current_cap: usize,
    pub global_iter: u64,
}

impl ScheduleState {
    pub fn new(policy: &SchedulePolicy) -> Self {
        ScheduleState { current_cap: policy.cap_at(0), global_iter: 0 }
    }

    pub fn validate(&self, policy: &SchedulePolicy) -> Result<()> {
        if self.current_cap < policy.start_len.min(policy.max_len) || self.current_cap > policy.max_len {
            return Err(Error::Config(format!(
                "schedule cap {} outside {}..={}",
                self.current_cap, policy.start_len, policy.max_len
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepPlan {
    pub lengths: Vec<usize>,
    pub th_active: Vec<bool>,
}

impl StepPlan {
    pub fn iter(&self) -> impl Iterator<Item = (usize, bool)> + '_ {
        self.lengths.iter().copied().zip(self.th_active.iter().copied())
    }

    pub fn longest(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }

    /// Rows per length when `batch` rows are split evenly, at least one each.
    pub fn rows_per_length(&self, batch: usize) -> usize {
        (batch / self.lengths.len().max(1)).max(1)
    }
}

/// Lengths trained during the current iteration.
pub fn plan_step(policy: &SchedulePolicy, state: &ScheduleState) -> StepPlan {
    let cap = if policy.cl { state.current_cap } else { policy.max_len };
    let lengths: Vec<usize> = if policy.vl { (1..=cap).collect() } else { vec![cap] };
    let th_active = vec![policy.th; lengths.len()];
    StepPlan { lengths, th_active }
}

/// Moves the schedule one iteration forward.
pub fn advance(policy: &SchedulePolicy, state: &ScheduleState) -> ScheduleState {
    let global_iter = state.global_iter + 1;
    let current_cap = if policy.cl {
        let crossed = global_iter.is_multiple_of(policy.iters_per_stage);
        if crossed { (state.current_cap + 1).min(policy.max_len) } else { state.current_cap }
    } else {
        policy.max_len
    };
    ScheduleState { current_cap, global_iter }
}

/// One row of the ablation grid: a policy plus the length used at evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Preset {
    pub row: usize,
    pub policy: SchedulePolicy,
    pub eval_len: usize,
}

/// `(cl, vl, th, eval_len)` for rows 1 to 7.
const ROWS: [(bool, bool, bool, usize); 7] = [
    (false, false, false, 32),
    (false, true, false, 32),
    (true, false, false, 32),
    (true, true, false, 32),
    (false, true, true, 32),
    (true, true, true, 32),
    (true, true, true, 64),
];

pub fn presets() -> Vec<Preset> {
    (1..=ROWS.len()).map(|r| preset(r).unwrap()).collect()
}

pub fn preset(row: usize) -> Result<Preset> {
    let &(cl, vl, th, eval_len) = row
        .checked_sub(1)
        .and_then(|i| ROWS.get(i))
        .ok_or_else(|| Error::Config(format!("no preset row {row}, expected 1..={}", ROWS.len())))?;
    Ok(Preset { row, policy: SchedulePolicy::new(cl, vl, th), eval_len })
}

/// Parses names of the form `table2-row<k>`.
pub fn preset_by_name(name: &str) -> Result<Preset> {
    let row = name
        .strip_prefix("table2-row")
        .and_then(|k| k.parse().ok())
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}`")))?;
    preset(row)
}
