//! Expert demonstration datasets in JSON Lines.
//!
//! File layout: one header object `{"format":"skillgrid-v1","seed":..,"n":..}`
//! followed by one object per trajectory with keys `template_id`, `split`,
//! `instruction`, `states`, `actions`. Floats are written with 17
//! significant digits so files are byte-identical across runs and round-trip
//! exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use crate::env::{
    self, Action, Instruction, Split, Subtask, WorldState, STEPS_PER_SUBTASK,
};
use crate::error::{Error, Result};
use crate::rng::{Rng, StreamKey};

pub const DATASET_FORMAT: &str = "skillgrid-v1";

/// One demonstration: `states.len() == actions.len() + 1` and each
/// transition replays exactly through `env::step`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<WorldState>,
    pub actions: Vec<Action>,
    pub instruction: Instruction,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub format: String,
    pub seed: u64,
    pub n: usize,
}

/// Counters from dataset generation; `resampled` counts expert rollouts that
/// missed the horizon and were redrawn.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GenReport {
    pub resampled: usize,
}

/// Roll the expert on a freshly sampled task. Returns `None` when the
/// horizon expires before every subtask latches.
pub fn expert_rollout(rng: &mut Rng, instruction: &Instruction, noise: bool) -> Option<Trajectory> {
    let mut state = env::reset(rng, instruction);
    let mut latched = vec![false; instruction.subtasks.len()];
    let mut states = vec![state];
    let mut actions = Vec::new();
    for _ in 0..instruction.horizon() {
        let noise_rng = if noise { Some(&mut *rng) } else { None };
        let action = env::expert_action(&state, instruction, &latched, noise_rng)
            .expect("unlatched subtask exists");
        state = env::step(&state, &action);
        states.push(state);
        actions.push(action);
        if env::update_latches(&state, instruction, &mut latched) {
            return Some(Trajectory {
                states,
                actions,
                instruction: instruction.clone(),
            });
        }
    }
    None
}

/// Generate `n` successful expert trajectories and write them as JSONL.
/// Each trajectory slot draws from its own sub-stream, so failed rollouts
/// are resampled within the slot without disturbing the others.
pub fn generate_dataset(
    path: &Path,
    n: usize,
    seed: u64,
    split: Split,
    noise: bool,
) -> Result<GenReport> {
    if n < 1 {
        return Err(Error::contract("generate_dataset requires n >= 1"));
    }
    let data_stream = StreamKey::root(seed).child("data");
    let mut report = GenReport::default();
    let mut lines = Vec::with_capacity(n + 1);
    lines.push(format!(
        "{{\"format\":\"{DATASET_FORMAT}\",\"seed\":{seed},\"n\":{n}}}"
    ));
    for slot in 0..n {
        let slot_stream = data_stream.child_idx(slot as u64);
        let mut attempt = 0u64;
        let traj = loop {
            let mut rng = slot_stream.child_idx(attempt).rng();
            let instruction = env::sample_task(&mut rng, split);
            match expert_rollout(&mut rng, &instruction, noise) {
                Some(t) => break t,
                None => {
                    report.resampled += 1;
                    attempt += 1;
                }
            }
        };
        lines.push(render_record(&traj));
    }

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in &lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(report)
}

fn fmt_f64(x: f64) -> String {
    // 17 significant digits: enough to round-trip any f64 exactly.
    format!("{x:.16e}")
}

fn fmt_floats(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|&x| fmt_f64(x)).collect();
    format!("[{}]", parts.join(","))
}

fn render_record(traj: &Trajectory) -> String {
    let states: Vec<String> = traj.states.iter().map(|s| fmt_floats(&s.to_vec())).collect();
    let actions: Vec<String> = traj.actions.iter().map(|a| fmt_floats(&a.to_vec())).collect();
    format!(
        "{{\"template_id\":{},\"split\":\"{}\",\"instruction\":{},\"states\":[{}],\"actions\":[{}]}}",
        traj.instruction.template_id,
        traj.instruction.split.as_str(),
        serde_json::to_string(&traj.instruction.text).expect("string encodes"),
        states.join(","),
        actions.join(","),
    )
}

#[derive(Deserialize)]
struct HeaderJson {
    format: String,
    seed: u64,
    n: usize,
}

#[derive(Deserialize)]
struct RecordJson {
    template_id: usize,
    split: String,
    instruction: String,
    states: Vec<[f64; env::STATE_DIM]>,
    actions: Vec<[f64; env::ACTION_DIM]>,
}

/// Read a dataset file back into trajectories.
pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Trajectory>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::malformed(path, "empty dataset file"))?;
    let first = first.map_err(|e| Error::io(path, e))?;
    let header: HeaderJson = serde_json::from_str(&first)
        .map_err(|e| Error::malformed(path, format!("bad header: {e}")))?;
    if header.format != DATASET_FORMAT {
        return Err(Error::malformed(
            path,
            format!("unknown dataset format '{}'", header.format),
        ));
    }

    let templates = env::all_templates();
    let mut trajectories = Vec::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordJson = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(path, format!("line {}: {e}", lineno + 1)))?;
        if rec.template_id >= templates.len() {
            return Err(Error::malformed(
                path,
                format!("line {}: template_id {} out of range", lineno + 1, rec.template_id),
            ));
        }
        if rec.states.len() != rec.actions.len() + 1 || rec.actions.is_empty() {
            return Err(Error::malformed(
                path,
                format!(
                    "line {}: {} states for {} actions",
                    lineno + 1,
                    rec.states.len(),
                    rec.actions.len()
                ),
            ));
        }
        let split = Split::parse(&rec.split)
            .map_err(|e| Error::malformed(path, format!("line {}: {e}", lineno + 1)))?;
        let subtasks: Vec<Subtask> = templates[rec.template_id].clone();
        trajectories.push(Trajectory {
            states: rec.states.into_iter().map(WorldState::from_vec).collect(),
            actions: rec.actions.into_iter().map(Action::from_vec).collect(),
            instruction: Instruction {
                subtasks,
                text: rec.instruction,
                template_id: rec.template_id,
                split,
            },
        });
    }
    Ok((
        DatasetHeader {
            format: header.format,
            seed: header.seed,
            n: header.n,
        },
        trajectories,
    ))
}

/// Longest horizon any stored trajectory may have.
pub fn max_trajectory_len() -> usize {
    2 * STEPS_PER_SUBTASK
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn generation_is_byte_identical_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        generate_dataset(&p1, 5, 77, Split::Seen, true).unwrap();
        generate_dataset(&p2, 5, 77, Split::Seen, true).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        let text = fs::read_to_string(&p1).unwrap();
        assert_eq!(text.lines().count(), 6); // header + 5 records
        assert!(text.lines().next().unwrap().contains("skillgrid-v1"));
    }

    #[test]
    fn stored_trajectories_replay_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        generate_dataset(&p, 20, 3, Split::Seen, true).unwrap();
        let (header, trajs) = load_dataset(&p).unwrap();
        assert_eq!(header.n, 20);
        assert_eq!(trajs.len(), 20);
        for t in &trajs {
            assert!(t.len() <= max_trajectory_len());
            let mut s = t.states[0];
            for (i, a) in t.actions.iter().enumerate() {
                s = env::step(&s, a);
                assert_eq!(s, t.states[i + 1], "replay diverged at step {i}");
            }
            // stored trajectories succeeded
            let mut latched = vec![false; t.instruction.subtasks.len()];
            for st in &t.states {
                env::update_latches(st, &t.instruction, &mut latched);
            }
            assert!(latched.iter().all(|&l| l));
        }
    }

    #[test]
    fn noisy_expert_rarely_needs_resampling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let report = generate_dataset(&p, 300, 11, Split::Seen, true).unwrap();
        // sigma 0.02 noise leaves the expert near-optimal
        assert!(report.resampled <= 3, "resampled {}", report.resampled);
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        fs::write(&p, "{\"format\":\"other\",\"seed\":1,\"n\":0}\n").unwrap();
        assert!(load_dataset(&p).is_err());
        fs::write(&p, "not json\n").unwrap();
        assert!(load_dataset(&p).is_err());
    }

    #[test]
    fn float_format_has_17_significant_digits() {
        assert_eq!(fmt_f64(0.2), "2.0000000000000001e-1");
        assert_eq!(fmt_f64(0.0), "0.0000000000000000e0");
        assert_eq!(fmt_f64(-1.0), "-1.0000000000000000e0");
        // exact round trip
        for &x in &[0.1, -0.7, 1.0 / 3.0, 0.9999999999999999] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
