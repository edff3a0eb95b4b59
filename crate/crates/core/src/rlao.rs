//! Rewards, best-of-m selection, trajectory assembly and dataset export.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::domain::{AgentAction, Feedback, Provenance, Trajectory, TrajectoryStep};
use crate::util::neg_inf_as_null;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RlaoError {
    #[error("no viable candidate: every candidate was skipped or filtered")]
    NoViableCandidate,
    #[error("tau must be positive, got {0}")]
    NonpositiveTau(f64),
    #[error("no trajectories to export")]
    EmptyDataset,
    #[error("cannot write dataset: {0}")]
    Io(#[from] std::io::Error),
}

/// Piecewise reward: 1 for a new window best, 0.5 for beating the previous
/// score only, else 0. Both comparisons are strict.
pub fn compute_reward(v: f64, v_prev: Option<f64>, v_max: f64) -> f64 {
    if v > v_max {
        1.0
    } else if v_prev.is_some_and(|p| v > p) {
        0.5
    } else {
        0.0
    }
}

pub fn rwr_weight(reward: f64, tau: f64) -> Result<f64, RlaoError> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(RlaoError::NonpositiveTau(tau));
    }
    Ok((reward / tau).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub index: usize,
    /// Exact response text as sampled (with any corrected program spliced in).
    pub raw_response: String,
    /// Absent when the response never yielded a runnable program.
    pub action: Option<AgentAction>,
    /// Absent iff the candidate was skipped.
    pub feedback: Option<Feedback>,
    pub reward: Option<f64>,
    pub selected: bool,
    pub filtered: bool,
    pub correction_attempts: u8,
    /// Error of the last failed attempt, for skipped candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
}

impl CandidateRecord {
    pub fn skipped(&self) -> bool {
        self.feedback.is_none()
    }

    pub fn score(&self) -> Option<f64> {
        self.feedback.as_ref().map(|f| f.score)
    }

    fn viable(&self) -> bool {
        !self.skipped() && !self.filtered
    }
}

/// One iteration of the loop: the shared state it sampled from and its
/// candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub iteration: usize,
    /// 1 or 2: position inside its two-iteration window.
    pub turn: usize,
    /// Flattened prompt the candidates were sampled from.
    pub state_render: String,
    /// History entries in the state the candidates were sampled from.
    pub history_len: usize,
    pub v_prev: Option<f64>,
    #[serde(with = "neg_inf_as_null")]
    pub v_max: f64,
    pub candidates: Vec<CandidateRecord>,
    pub selected: Option<usize>,
}

impl IterationRecord {
    pub fn selected_candidate(&self) -> Option<&CandidateRecord> {
        self.selected.and_then(|i| self.candidates.iter().find(|c| c.index == i))
    }
}

/// Highest score among viable candidates; ties go to the lowest index.
pub fn select_best(candidates: &[CandidateRecord]) -> Result<usize, RlaoError> {
    let mut best: Option<(usize, f64)> = None;
    for c in candidates.iter().filter(|c| c.viable()) {
        let s = c.score().expect("viable candidates have feedback");
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c.index, s));
        }
    }
    best.map(|(i, _)| i).ok_or(RlaoError::NoViableCandidate)
}

/// Assigns rewards against the shared pre-iteration (v_prev, v_max), marks
/// candidates below `filter_threshold` (when given) as filtered, and selects
/// the best. Returns the selected index.
pub fn settle_candidates(
    candidates: &mut [CandidateRecord],
    v_prev: Option<f64>,
    v_max: f64,
    filter_threshold: Option<f64>,
) -> Option<usize> {
    for c in candidates.iter_mut() {
        c.selected = false;
        c.reward = c.score().map(|v| compute_reward(v, v_prev, v_max));
        c.filtered = match (c.score(), filter_threshold) {
            (Some(v), Some(t)) => v < t,
            _ => false,
        };
    }
    let chosen = select_best(candidates).ok();
    if let Some(i) = chosen {
        candidates.iter_mut().filter(|c| c.index == i).for_each(|c| c.selected = true);
    }
    chosen
}

fn step(state_render: &str, c: &CandidateRecord) -> TrajectoryStep {
    TrajectoryStep {
        state_render: state_render.to_string(),
        action_text: c.raw_response.clone(),
        reward: c.reward.unwrap_or(0.0),
        score: c.score().unwrap_or(0.0),
    }
}

fn singles(task: &str, it: &IterationRecord, provenance: Provenance, out: &mut Vec<Trajectory>) {
    for c in it.candidates.iter().filter(|c| c.viable() && !c.selected) {
        out.push(Trajectory {
            id: format!("{task}/i{:02}/c{}", it.iteration, c.index),
            task: task.to_string(),
            iteration: it.iteration,
            candidate: c.index,
            provenance,
            steps: vec![step(&it.state_render, c)],
        });
    }
}

/// Builds trajectories window by window: every unselected viable candidate
/// becomes a one-turn trajectory on its iteration's state, and the selected
/// turn-1 and turn-2 actions form one two-turn trajectory. A selected action
/// without a selected partner is left out.
pub fn assemble_trajectories(task: &str, iterations: &[IterationRecord]) -> Vec<Trajectory> {
    let mut out = Vec::new();
    for it in iterations {
        let provenance = if it.turn == 1 { Provenance::UnselectedTurn1 } else { Provenance::UnselectedTurn2 };
        singles(task, it, provenance, &mut out);
        if it.turn != 2 {
            continue;
        }
        let Some(first) = iterations.iter().find(|p| p.iteration + 1 == it.iteration && p.turn == 1) else { continue };
        if let (Some(a1), Some(a2)) = (first.selected_candidate(), it.selected_candidate()) {
            out.push(Trajectory {
                id: format!("{task}/i{:02}/c{}/pair", first.iteration, a1.index),
                task: task.to_string(),
                iteration: first.iteration,
                candidate: a1.index,
                provenance: Provenance::SelectedPair,
                steps: vec![step(&first.state_render, a1), step(&it.state_render, a2)],
            });
        }
    }
    out.sort_by_key(|a| (a.iteration, a.candidate));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub task: String,
    pub iteration: usize,
    pub candidate: usize,
    pub provenance: Provenance,
}

/// One line of the exported dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RwrRecord {
    pub trajectory_id: String,
    /// 1-based position inside the trajectory.
    pub turn: usize,
    pub context: String,
    pub target: String,
    pub reward: f64,
    pub weight: f64,
    pub meta: RecordMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportCounts {
    pub trajectories: usize,
    pub one_turn: usize,
    pub two_turn: usize,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub tau: f64,
    pub config_hash: String,
    pub counts: ExportCounts,
}

/// Flattens trajectories into records ordered by (task, iteration,
/// candidate, turn). Second steps of pairs carry the next iteration and
/// the turn-2 candidate index in their metadata.
pub fn to_records(
    trajectories: &[Trajectory],
    pair_partners: &dyn Fn(&Trajectory) -> usize,
    tau: f64,
) -> Result<Vec<RwrRecord>, RlaoError> {
    let mut records = Vec::new();
    for t in trajectories {
        for (k, s) in t.steps.iter().enumerate() {
            let (iteration, candidate) = if k == 0 { (t.iteration, t.candidate) } else { (t.iteration + 1, pair_partners(t)) };
            records.push(RwrRecord {
                trajectory_id: t.id.clone(),
                turn: k + 1,
                context: s.state_render.clone(),
                target: s.action_text.clone(),
                reward: s.reward,
                weight: rwr_weight(s.reward, tau)?,
                meta: RecordMeta { task: t.task.clone(), iteration, candidate, provenance: t.provenance },
            });
        }
    }
    records.sort_by(|a, b| {
        (&a.meta.task, a.meta.iteration, a.meta.candidate, a.turn).cmp(&(&b.meta.task, b.meta.iteration, b.meta.candidate, b.turn))
    });
    Ok(records)
}

/// Candidate index of each pair's second step, looked up in the run log.
pub fn partner_lookup(iterations: &[IterationRecord]) -> impl Fn(&Trajectory) -> usize + '_ {
    move |t: &Trajectory| {
        iterations
            .iter()
            .find(|it| it.iteration == t.iteration + 1)
            .and_then(|it| it.selected)
            .unwrap_or(0)
    }
}

/// Renders the dataset file: a header line, then one record per line.
pub fn render_dataset(records: &[RwrRecord], trajectories: &[Trajectory], tau: f64, config_hash: &str) -> Result<String, RlaoError> {
    if trajectories.is_empty() {
        return Err(RlaoError::EmptyDataset);
    }
    let two_turn = trajectories.iter().filter(|t| t.steps.len() == 2).count();
    let header = DatasetHeader {
        schema_version: SCHEMA_VERSION,
        tau,
        config_hash: config_hash.to_string(),
        counts: ExportCounts {
            trajectories: trajectories.len(),
            one_turn: trajectories.len() - two_turn,
            two_turn,
            records: records.len(),
        },
    };
    let mut out = serde_json::to_string(&json!({ "header": header })).expect("serializable header");
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("serializable record"));
        out.push('\n');
    }
    Ok(out)
}

/// Writes the dataset for a run log. Nothing is written when there are no
/// trajectories.
pub fn export_dataset(
    task: &str,
    iterations: &[IterationRecord],
    tau: f64,
    config_hash: &str,
    path: &Path,
) -> Result<ExportCounts, RlaoError> {
    rwr_weight(0.0, tau)?;
    let trajectories = assemble_trajectories(task, iterations);
    let lookup = partner_lookup(iterations);
    let records = to_records(&trajectories, &lookup, tau)?;
    let text = render_dataset(&records, &trajectories, tau, config_hash)?;
    std::fs::write(path, text)?;
    let two_turn = trajectories.iter().filter(|t| t.steps.len() == 2).count();
    Ok(ExportCounts {
        trajectories: trajectories.len(),
        one_turn: trajectories.len() - two_turn,
        two_turn,
        records: records.len(),
    })
}

/// Reads an exported dataset back: header and records.
pub fn read_dataset(path: &Path) -> std::io::Result<(DatasetHeader, Vec<RwrRecord>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let bad = |e: serde_json::Error| std::io::Error::new(std::io::ErrorKind::InvalidData, e);
    let first = lines
        .next()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidData, "empty dataset file"))?;
    #[derive(Deserialize)]
    struct HeaderLine {
        header: DatasetHeader,
    }
    let header = serde_json::from_str::<HeaderLine>(first).map_err(bad)?.header;
    let records = lines.map(|l| serde_json::from_str(l).map_err(bad)).collect::<Result<_, _>>()?;
    Ok((header, records))
}
