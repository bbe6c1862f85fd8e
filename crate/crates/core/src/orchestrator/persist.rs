//! Output files, advantage export, ground-truth leak scan and replay checks.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{MetricsReport, RolloutPlan, SessionTranscript};
use crate::chat::MessageRole;
use crate::env::{Env, EnvConfig, EnvError, Ports};
use crate::gyms;
use crate::reward::{export_records, group_advantages, AdvantageRecord, RolloutGroup, ShapingSpec, Trajectory};
use crate::task::TaskSpec;

/// Write one JSON document per line to `path` via a temporary file and rename,
/// so readers never see a partial file.
pub fn write_jsonl_atomic<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> io::Result<()> {
    write_atomic(path, |w| {
        for item in items {
            serde_json::to_writer(&mut *w, &item)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()
    })();
    match result {
        Ok(()) => fs::rename(&tmp, path),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

/// One line of `trajectories.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub group_index: usize,
    pub trajectory_index: usize,
    #[serde(flatten)]
    pub trajectory: Trajectory,
}

impl TrajectoryRecord {
    pub fn flatten(groups: &[RolloutGroup]) -> Vec<TrajectoryRecord> {
        groups
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| {
                g.trajectories.iter().enumerate().map(move |(ti, t)| TrajectoryRecord {
                    group_index: gi,
                    trajectory_index: ti,
                    trajectory: t.clone(),
                })
            })
            .collect()
    }

    /// Rebuild groups from records, ordered by group then trajectory index.
    pub fn regroup(mut records: Vec<TrajectoryRecord>) -> Vec<RolloutGroup> {
        records.sort_by_key(|r| (r.group_index, r.trajectory_index));
        let mut groups: Vec<(usize, RolloutGroup)> = Vec::new();
        for r in records {
            match groups.last_mut() {
                Some((gi, g)) if *gi == r.group_index => g.trajectories.push(r.trajectory),
                _ => groups.push((
                    r.group_index,
                    RolloutGroup { task_id: r.trajectory.task_id.clone(), trajectories: vec![r.trajectory] },
                )),
            }
        }
        groups.into_iter().map(|(_, g)| g).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdvantageExport {
    pub records: Vec<AdvantageRecord>,
    /// `(task_id, reason)` for every group left out.
    pub refused: Vec<(String, String)>,
}

/// Advantage records for every exportable group. Groups with fewer than two
/// trajectories are refused; so are groups with aborted episodes unless
/// `allow_aborted`.
pub fn export_advantages(groups: &[RolloutGroup], spec: &ShapingSpec, allow_aborted: bool) -> AdvantageExport {
    let mut out = AdvantageExport::default();
    for g in groups {
        if g.has_aborted() && !allow_aborted {
            out.refused.push((g.task_id.clone(), "group has aborted episodes".into()));
            continue;
        }
        match group_advantages(g, spec) {
            Ok(adv) => out.records.extend(export_records(g, &adv, spec)),
            Err(e) => out.refused.push((g.task_id.clone(), e.to_string())),
        }
    }
    out
}

/// A ground-truth string found in a message sent to the policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leak {
    pub task_id: String,
    pub trajectory_index: usize,
    pub message_index: usize,
    pub secret: String,
}

/// Case-insensitive substring scan of every non-assistant message.
pub fn leak_scan<'a>(transcripts: &[SessionTranscript], lookup: impl Fn(&str) -> Option<&'a TaskSpec>) -> Vec<Leak> {
    let mut leaks = Vec::new();
    for tr in transcripts {
        let Some(task) = lookup(&tr.task_id) else { continue };
        let secrets: Vec<String> =
            gyms::secrets(task).into_iter().map(|s| s.to_lowercase()).filter(|s| !s.trim().is_empty()).collect();
        for (i, m) in tr.messages.iter().enumerate() {
            if m.role == MessageRole::Assistant {
                continue;
            }
            let text = m.text().to_lowercase();
            for s in &secrets {
                if text.contains(s.as_str()) {
                    leaks.push(Leak {
                        task_id: tr.task_id.clone(),
                        trajectory_index: tr.trajectory_index,
                        message_index: i,
                        secret: s.clone(),
                    });
                }
            }
        }
    }
    leaks
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub trajectories: usize,
    pub advantage_records: usize,
    pub refused_groups: Vec<(String, String)>,
    pub leaks: usize,
    pub metrics: MetricsReport,
}

/// Write `trajectories.jsonl`, `transcripts.jsonl`, `advantages.jsonl`,
/// `metrics.json` and `metrics.txt` under `out_dir`.
pub fn persist_run<'a>(
    out_dir: &Path,
    plan: &RolloutPlan,
    groups: &[RolloutGroup],
    transcripts: &[SessionTranscript],
    allow_aborted: bool,
    lookup: impl Fn(&str) -> Option<&'a TaskSpec> + Copy,
) -> io::Result<RunSummary> {
    fs::create_dir_all(out_dir)?;
    let records = TrajectoryRecord::flatten(groups);
    write_jsonl_atomic(&out_dir.join("trajectories.jsonl"), &records)?;
    write_jsonl_atomic(&out_dir.join("transcripts.jsonl"), transcripts)?;
    let export = export_advantages(groups, &plan.shaping, allow_aborted);
    for (task, why) in &export.refused {
        log::info!("advantage export skipped group `{task}`: {why}");
    }
    write_jsonl_atomic(&out_dir.join("advantages.jsonl"), &export.records)?;
    let metrics = MetricsReport::compute(groups, lookup);
    let leaks = leak_scan(transcripts, lookup);
    for l in &leaks {
        log::error!(
            "ground truth reached the policy: task `{}` #{} message {}",
            l.task_id,
            l.trajectory_index,
            l.message_index
        );
    }
    let summary = RunSummary {
        trajectories: records.len(),
        advantage_records: export.records.len(),
        refused_groups: export.refused,
        leaks: leaks.len(),
        metrics,
    };
    write_atomic(&out_dir.join("metrics.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary)?;
        w.write_all(b"\n")
    })?;
    let table = summary.metrics.to_table();
    write_atomic(&out_dir.join("metrics.txt"), |w| w.write_all(table.as_bytes()))?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayCheck {
    pub recorded: Vec<f64>,
    pub replayed: Vec<f64>,
}

impl ReplayCheck {
    pub fn matches(&self) -> bool {
        self.recorded.len() == self.replayed.len()
            && self.recorded.iter().zip(&self.replayed).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Re-run the recorded choices through a fresh session and compare rewards.
pub fn replay_trajectory(
    trajectory: &Trajectory,
    task: &TaskSpec,
    config: &EnvConfig,
    ports: Ports,
) -> Result<ReplayCheck, EnvError> {
    let choices: Vec<_> = trajectory.turns.iter().map(|t| t.choice.clone()).collect();
    let session = Env::replay(task.clone(), config.clone(), ports, &choices)?;
    Ok(ReplayCheck {
        recorded: trajectory.rewards(),
        replayed: session.history.iter().map(|h| h.outcome.reward).collect(),
    })
}
