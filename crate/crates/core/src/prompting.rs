// SPDX-License-Identifier: MIT OR Apache-2.0

//! Scenario prompts and the growing agent transcript.
//!
//! The transcript is the agent's entire observable state: the task
//! description followed by alternating completions and environment
//! feedback. Chat-template markup is not part of it; backends render the
//! neutral [`ChatMessage`] list however their model expects.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Task description for the buttons scenario.
pub const BUTTONS_PROMPT: &str = include_str!("../prompts/buttons.txt");
/// Task description for the slot-machines scenario.
pub const SLOT_MACHINES_PROMPT: &str = include_str!("../prompts/slot_machines.txt");

/// Surface story the bandit is presented in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Buttons,
    SlotMachines,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 2] = [ScenarioKind::Buttons, ScenarioKind::SlotMachines];

    /// Name of one arm as the agent refers to it, without the number.
    pub fn entity(self) -> &'static str {
        match self {
            ScenarioKind::Buttons => "Button",
            ScenarioKind::SlotMachines => "Slot Machine",
        }
    }

    /// Reward unit used in feedback lines.
    pub fn unit(self) -> &'static str {
        match self {
            ScenarioKind::Buttons => "points",
            ScenarioKind::SlotMachines => "dollars",
        }
    }

    /// One-byte code used by the binary vector format.
    pub fn code(self) -> u8 {
        match self {
            ScenarioKind::Buttons => 0,
            ScenarioKind::SlotMachines => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ScenarioKind::Buttons),
            1 => Some(ScenarioKind::SlotMachines),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Buttons => "buttons",
            ScenarioKind::SlotMachines => "slot_machines",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "buttons" => Ok(ScenarioKind::Buttons),
            "slot_machines" | "slot-machines" => Ok(ScenarioKind::SlotMachines),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

/// The task description shown to the agent before the first turn.
pub fn render_system_prompt(scenario: ScenarioKind) -> &'static str {
    match scenario {
        ScenarioKind::Buttons => BUTTONS_PROMPT,
        ScenarioKind::SlotMachines => SLOT_MACHINES_PROMPT,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub completion: String,
    pub feedback: String,
}

/// Dialogue state `P_t`: task text plus the turns taken so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub scenario: ScenarioKind,
    pub horizon: u32,
    pub system_text: String,
    pub turns: Vec<Turn>,
}

impl Transcript {
    /// Empty transcript opening with the bundled scenario prompt.
    pub fn new(scenario: ScenarioKind, horizon: u32) -> Self {
        Self {
            scenario,
            horizon,
            system_text: render_system_prompt(scenario).to_owned(),
            turns: Vec::new(),
        }
    }

    /// Empty transcript with a custom opening text.
    pub fn with_system_text(
        scenario: ScenarioKind,
        horizon: u32,
        system_text: impl Into<String>,
    ) -> Result<Self> {
        let system_text = system_text.into();
        if system_text.is_empty() {
            return Err(Error::InvalidArgument("system text must be nonempty".into()));
        }
        Ok(Self {
            scenario,
            horizon,
            system_text,
            turns: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// `P_{t+1} = (P_t, C_t, F_t)`. The receiver is left untouched.
    pub fn append_turn(&self, completion: &str, feedback: &str) -> Result<Transcript> {
        let mut next = self.clone();
        next.push_turn(completion, feedback)?;
        Ok(next)
    }

    /// In-place variant of [`Transcript::append_turn`].
    pub fn push_turn(&mut self, completion: &str, feedback: &str) -> Result<()> {
        if self.turns.len() >= self.horizon as usize {
            return Err(Error::HorizonExceeded {
                horizon: self.horizon,
            });
        }
        self.turns.push(Turn {
            completion: completion.to_owned(),
            feedback: feedback.to_owned(),
        });
        Ok(())
    }

    /// Transcript truncated to its first `n` turns.
    pub fn prefix(&self, n: usize) -> Transcript {
        Transcript {
            scenario: self.scenario,
            horizon: self.horizon,
            system_text: self.system_text.clone(),
            turns: self.turns[..n.min(self.turns.len())].to_vec(),
        }
    }

    /// Neutral chat form: the task text as the first user message, then
    /// assistant/user pairs for each turn.
    pub fn to_chat_messages(&self) -> Vec<ChatMessage> {
        let mut out = Vec::with_capacity(1 + 2 * self.turns.len());
        out.push(ChatMessage::user(&self.system_text));
        for turn in &self.turns {
            out.push(ChatMessage::assistant(&turn.completion));
            out.push(ChatMessage::user(&turn.feedback));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: Transcript = serde_json::from_str(s)?;
        if t.system_text.is_empty() {
            return Err(Error::InvalidArgument("system text must be nonempty".into()));
        }
        if t.turns.len() > t.horizon as usize {
            return Err(Error::HorizonExceeded { horizon: t.horizon });
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}
