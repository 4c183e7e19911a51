// SPDX-License-Identifier: MIT OR Apache-2.0

//! Interaction logs as JSON Lines: a header record, one record per executed
//! step, and an end record carrying the termination reason.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandit::{feedback_text, BanditConfig, Reward};
use crate::error::{Error, Result};
use crate::numeric::entropy_from_counts;
use crate::prompting::{ScenarioKind, Transcript};

pub const RUNLOG_SCHEMA: u32 = 1;

/// Identifies the steering applied during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringRef {
    pub layer: usize,
    pub multiplier: f64,
    /// Dataset hash recorded in the vector's metadata.
    pub vector_hash: String,
    pub control: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub schema: u32,
    pub run_id: String,
    pub scenario: ScenarioKind,
    /// Bandit configuration including the effective environment seed.
    pub bandit: BanditConfig,
    pub backend_id: String,
    pub steering: Option<SteeringRef>,
    pub system_text: String,
    pub run_seed: u64,
    pub m: usize,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub capture_layer: Option<usize>,
    /// Activation sidecar file name, relative to the log's directory.
    pub activation_file: Option<String>,
    /// Set when activations were captured by a different backend than the
    /// one that generated the completions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture_backend_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u32,
    pub chosen_action: usize,
    /// Index into `completions` of the completion appended to the transcript.
    pub chosen_completion: usize,
    pub reward: f64,
    pub counts: Vec<u32>,
    pub n_valid: u32,
    pub n_total: u32,
    pub entropy_nats: f64,
    pub completions: Vec<String>,
    pub parsed: Vec<Option<usize>>,
    /// Byte offset of this step's activation row in the sidecar.
    pub activation_offset: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// No completion parsed at step `t`; the step was not executed.
    AllInvalid { t: u32, n_total: u32 },
    /// The backend failed at step `t`.
    Aborted { t: u32, message: String },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(RunHeader),
    Step(StepRecord),
    End { termination: Termination },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub steps: Vec<StepRecord>,
    pub termination: Termination,
}

fn bad(path: &Path, detail: impl Into<String>) -> Error {
    Error::RunLog {
        path: path.to_owned(),
        detail: detail.into(),
    }
}

impl RunLog {
    pub fn actions(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.chosen_action).collect()
    }

    pub fn is_aborted(&self) -> bool {
        matches!(self.termination, Termination::Aborted { .. })
    }

    /// Transcript as presented to the agent before step `t` (1-based).
    pub fn transcript_at(&self, t: u32) -> Result<Transcript> {
        let n = self.steps.len() as u32;
        let max_t = match self.termination {
            Termination::Completed => n,
            _ => n + 1,
        };
        if t == 0 || t > max_t.min(self.header.bandit.horizon) {
            return Err(Error::InvalidArgument(format!(
                "step {t} not in run {} (1..={max_t})",
                self.header.run_id
            )));
        }
        let mut tr = Transcript::with_system_text(
            self.header.scenario,
            self.header.bandit.horizon,
            self.header.system_text.clone(),
        )?;
        for s in &self.steps[..(t - 1) as usize] {
            let reward = Reward {
                value: s.reward,
                arm: s.chosen_action,
                timestep: s.t,
            };
            tr.push_turn(
                &s.completions[s.chosen_completion],
                &feedback_text(&reward, self.header.scenario),
            )?;
        }
        Ok(tr)
    }

    /// Check the structural invariants of a log.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n_arms = self.header.bandit.means.len();
        for (i, s) in self.steps.iter().enumerate() {
            let ctx = |m: &str| format!("step {}: {m}", s.t);
            if s.t as usize != i + 1 {
                return Err(format!("steps not contiguous at record {} (t = {})", i + 1, s.t));
            }
            if s.counts.len() != n_arms || s.chosen_action >= n_arms {
                return Err(ctx("arm index or counts length out of range"));
            }
            if s.counts[s.chosen_action] == 0 {
                return Err(ctx("chosen action has zero count"));
            }
            if s.counts.iter().sum::<u32>() != s.n_valid || s.n_valid > s.n_total {
                return Err(ctx("counts inconsistent with n_valid/n_total"));
            }
            if s.completions.len() != s.n_total as usize || s.parsed.len() != s.completions.len() {
                return Err(ctx("completion count differs from n_total"));
            }
            if s.parsed.get(s.chosen_completion) != Some(&Some(s.chosen_action)) {
                return Err(ctx("chosen completion does not parse to the chosen action"));
            }
            let h = entropy_from_counts(&s.counts).unwrap_or(f64::NAN);
            if !((h - s.entropy_nats).abs() <= 1e-9) {
                return Err(ctx(&format!("entropy {} does not match counts ({h})", s.entropy_nats)));
            }
        }
        if self.steps.len() > self.header.bandit.horizon as usize {
            return Err("more steps than the horizon".into());
        }
        let next = self.steps.len() as u32 + 1;
        match &self.termination {
            Termination::Completed if self.steps.len() != self.header.bandit.horizon as usize => {
                Err("completed run shorter than its horizon".into())
            }
            Termination::AllInvalid { t, .. } | Termination::Aborted { t, .. } if *t != next => {
                Err(format!("termination at step {t}, expected {next}"))
            }
            _ => Ok(()),
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let mut push = |line: &Line| -> Result<()> {
            out.push_str(&serde_json::to_string(line)?);
            out.push('\n');
            Ok(())
        };
        push(&Line::Header(self.header.clone()))?;
        for s in &self.steps {
            push(&Line::Step(s.clone()))?;
        }
        push(&Line::End {
            termination: self.termination.clone(),
        })?;
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(self.to_jsonl()?.as_bytes())?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        Self::parse_lines(reader.lines(), path)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::parse_lines(text.lines().map(|l| Ok(l.to_owned())), Path::new("<memory>"))
    }

    fn parse_lines<I>(lines: I, path: &Path) -> Result<Self>
    where
        I: Iterator<Item = std::io::Result<String>>,
    {
        let mut header = None;
        let mut steps = Vec::new();
        let mut termination = None;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if termination.is_some() {
                return Err(bad(path, format!("line {}: record after end", i + 1)));
            }
            let rec: Line =
                serde_json::from_str(&line).map_err(|e| bad(path, format!("line {}: {e}", i + 1)))?;
            match rec {
                Line::Header(h) if header.is_none() && i == 0 => {
                    if h.schema != RUNLOG_SCHEMA {
                        return Err(bad(path, format!("schema {} (expected {RUNLOG_SCHEMA})", h.schema)));
                    }
                    header = Some(h);
                }
                Line::Header(_) => return Err(bad(path, format!("line {}: unexpected header", i + 1))),
                Line::Step(_) | Line::End { .. } if header.is_none() => {
                    return Err(bad(path, "missing header"));
                }
                Line::Step(s) => steps.push(s),
                Line::End { termination: t } => termination = Some(t),
            }
        }
        let log = Self {
            header: header.ok_or_else(|| bad(path, "missing header"))?,
            steps,
            termination: termination.ok_or_else(|| bad(path, "missing end record"))?,
        };
        log.validate().map_err(|d| bad(path, d))?;
        Ok(log)
    }
}

/// Read every `*.jsonl` run log in `dir`, sorted by file name.
pub fn read_dir(dir: &Path) -> Result<Vec<(PathBuf, RunLog)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl") && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("run-")))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| RunLog::read(&p).map(|l| (p, l)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::render_system_prompt;

    fn step(t: u32, arm: usize, counts: [u32; 2]) -> StepRecord {
        let mut completions = Vec::new();
        let mut parsed = Vec::new();
        for (a, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                completions.push(format!("Action: I choose Button {}.", a + 1));
                parsed.push(Some(a));
            }
        }
        completions.push("Action: unsure".into());
        parsed.push(None);
        let chosen_completion = parsed.iter().position(|p| *p == Some(arm)).unwrap();
        StepRecord {
            t,
            chosen_action: arm,
            chosen_completion,
            reward: 100.25 + f64::from(t),
            counts: counts.to_vec(),
            n_valid: counts.iter().sum(),
            n_total: counts.iter().sum::<u32>() + 1,
            entropy_nats: entropy_from_counts(&counts).unwrap(),
            completions,
            parsed,
            activation_offset: Some(12 + 16 * u64::from(t - 1)),
        }
    }

    pub(crate) fn example() -> RunLog {
        RunLog {
            header: RunHeader {
                schema: RUNLOG_SCHEMA,
                run_id: "r0".into(),
                scenario: ScenarioKind::Buttons,
                bandit: BanditConfig::new(vec![100.0, 100.0], vec![10.0, 10.0], 3, 42),
                backend_id: "scripted".into(),
                steering: None,
                system_text: render_system_prompt(ScenarioKind::Buttons).into(),
                run_seed: 9,
                m: 4,
                temperature: 1.0,
                max_new_tokens: 64,
                capture_layer: Some(2),
                activation_file: Some("run-0000.eact".into()),
                capture_backend_id: None,
            },
            steps: vec![step(1, 0, [2, 1]), step(2, 1, [1, 2]), step(3, 1, [0, 3])],
            termination: Termination::Completed,
        }
    }

    #[test]
    fn jsonl_round_trip_is_exact() {
        let log = example();
        let text = log.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().next().unwrap().contains("\"record\":\"header\""));
        let back = RunLog::from_jsonl(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_jsonl().unwrap(), text);
    }

    #[test]
    fn transcript_reconstruction() {
        let log = example();
        let t1 = log.transcript_at(1).unwrap();
        assert!(t1.is_empty());
        let t3 = log.transcript_at(3).unwrap();
        assert_eq!(t3.len(), 2);
        assert_eq!(t3.turns[1].completion, "Action: I choose Button 2.");
        assert_eq!(t3.turns[0].feedback, "Result: You received 101.25 points.");
        assert!(log.transcript_at(4).is_err());
        assert!(log.transcript_at(0).is_err());
    }

    #[test]
    fn invariant_violations_are_reported() {
        let mut log = example();
        log.steps[1].t = 5;
        assert!(log.validate().is_err());

        let mut log = example();
        log.steps[2].chosen_action = 0;
        assert!(log.validate().unwrap_err().contains("zero count"));

        let mut log = example();
        log.steps[0].entropy_nats += 1e-6;
        assert!(log.validate().unwrap_err().contains("entropy"));

        let mut log = example();
        log.steps.pop();
        assert!(log.validate().is_err());
        log.termination = Termination::AllInvalid { t: 3, n_total: 4 };
        log.validate().unwrap();
        assert_eq!(log.transcript_at(3).unwrap().len(), 2);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let text = example().to_jsonl().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(RunLog::from_jsonl(&lines[..4].join("\n")).is_err());
        assert!(RunLog::from_jsonl(&lines[1..].join("\n")).is_err());
        assert!(RunLog::from_jsonl(&text.replace("\"schema\":1", "\"schema\":2")).is_err());
        let dup = format!("{text}{}\n", lines[4]);
        assert!(RunLog::from_jsonl(&dup).is_err());
    }
}
