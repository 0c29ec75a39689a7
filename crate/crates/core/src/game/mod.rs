//! Quests, points and badges, event-sourced per user.

mod engine;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{BankAccess, Detection, DetectionId};
use crate::SpeciesId;

pub use engine::{GameEngine, RewardOutcome};

/// Rules shipped with the crate, loaded when no rules file is configured.
pub const DEFAULT_RULES_TOML: &str = include_str!("../../rules/default.toml");

#[derive(Debug, Error)]
pub enum GameError {
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown quest {0}")]
    UnknownQuest(String),
    #[error("quest {0} is locked")]
    QuestLocked(String),
    #[error("quest {0} is already active")]
    AlreadyActive(String),
    #[error("quest {0} was already completed")]
    AlreadyCompleted(String),
    #[error("invalid user id {0:?}")]
    InvalidUser(String),
    #[error("invalid rules: {0}")]
    InvalidRules(String),
    #[error("event log: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt event log: {0}")]
    Corrupt(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quest {
    pub id: String,
    #[serde(default)]
    pub title: String,
    /// Required count per target species.
    pub targets: BTreeMap<SpeciesId, u32>,
    /// Seconds from acceptance within which submissions count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_limit_s: Option<i64>,
    pub reward_points: u64,
    /// Badge that unlocks this quest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires: Option<String>,
}

impl Quest {
    pub fn time_limit(&self) -> Option<Duration> {
        self.time_limit_s.map(Duration::seconds)
    }

    fn validate(&self) -> Result<(), GameError> {
        let bad = |m: &str| Err(GameError::InvalidRules(format!("quest {}: {m}", self.id)));
        if self.id.is_empty() {
            return bad("empty id");
        }
        if self.targets.is_empty() {
            return bad("no target species");
        }
        if self.targets.values().any(|&n| n == 0) {
            return bad("required counts must be at least 1");
        }
        if self.reward_points == 0 {
            return bad("reward_points must be positive");
        }
        if self.time_limit_s.is_some_and(|s| s <= 0) {
            return bad("time_limit_s must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BadgeCriterion {
    TotalDetections { threshold: u32 },
    DistinctSpecies { threshold: u32 },
    QuestsCompleted { threshold: u32 },
}

impl BadgeCriterion {
    fn threshold(&self) -> u32 {
        match *self {
            Self::TotalDetections { threshold }
            | Self::DistinctSpecies { threshold }
            | Self::QuestsCompleted { threshold } => threshold,
        }
    }

    pub fn satisfied_by(&self, profile: &UserProfile) -> bool {
        match *self {
            Self::TotalDetections { threshold } => profile.submissions.len() >= threshold as usize,
            Self::DistinctSpecies { threshold } => profile.species_seen.len() >= threshold as usize,
            Self::QuestsCompleted { threshold } => profile.completed_quests.len() >= threshold as usize,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BadgeGrants {
    pub species_bank: bool,
    pub unlock_quests: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BadgeRule {
    pub id: String,
    #[serde(default)]
    pub name: String,
    pub criterion: BadgeCriterion,
    #[serde(default)]
    pub grants: BadgeGrants,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleBook {
    pub base_points: u64,
    #[serde(default)]
    pub badges: Vec<BadgeRule>,
    #[serde(default)]
    pub quests: Vec<Quest>,
}

impl Default for RuleBook {
    fn default() -> Self {
        Self::from_toml(DEFAULT_RULES_TOML).expect("bundled rules are valid")
    }
}

impl RuleBook {
    pub fn from_toml(text: &str) -> Result<Self, GameError> {
        let rules: RuleBook = toml::from_str(text).map_err(|e| GameError::InvalidRules(e.to_string()))?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, GameError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let mut quest_ids = BTreeSet::new();
        for q in &self.quests {
            q.validate()?;
            if !quest_ids.insert(q.id.as_str()) {
                return Err(GameError::InvalidRules(format!("duplicate quest {}", q.id)));
            }
        }
        let mut badge_ids = BTreeSet::new();
        for b in &self.badges {
            if b.criterion.threshold() == 0 {
                return Err(GameError::InvalidRules(format!("badge {}: threshold must be at least 1", b.id)));
            }
            if !badge_ids.insert(b.id.as_str()) {
                return Err(GameError::InvalidRules(format!("duplicate badge {}", b.id)));
            }
            if let Some(q) = b.grants.unlock_quests.iter().find(|q| !quest_ids.contains(q.as_str())) {
                return Err(GameError::InvalidRules(format!("badge {} unlocks unknown quest {q}", b.id)));
            }
        }
        if let Some(q) = self.quests.iter().find(|q| q.requires.as_ref().is_some_and(|b| !badge_ids.contains(b.as_str()))) {
            return Err(GameError::InvalidRules(format!("quest {} requires unknown badge", q.id)));
        }
        Ok(())
    }

    pub fn quest(&self, id: &str) -> Option<&Quest> {
        self.quests.iter().find(|q| q.id == id)
    }

    pub fn badge(&self, id: &str) -> Option<&BadgeRule> {
        self.badges.iter().find(|b| b.id == id)
    }

    /// A quest is open when it names no required badge and no badge lists it
    /// as an unlock; otherwise one of those badges must be held.
    pub fn is_available(&self, quest: &Quest, badges: &BTreeSet<String>) -> bool {
        let unlocking: Vec<&str> = self
            .badges
            .iter()
            .filter(|b| b.grants.unlock_quests.contains(&quest.id))
            .map(|b| b.id.as_str())
            .chain(quest.requires.as_deref())
            .collect();
        unlocking.is_empty() || unlocking.iter().any(|b| badges.contains(*b))
    }

    /// Available quests sorted by id.
    pub fn available_quests(&self, profile: &UserProfile) -> Vec<Quest> {
        let mut out: Vec<Quest> = self.quests.iter().filter(|q| self.is_available(q, &profile.badges)).cloned().collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointsReason {
    Detection,
    Quest,
}

/// What can happen to a profile. The profile is the left fold of its events.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GameEvent {
    QuestAccepted { quest_id: String, at: DateTime<Utc>, deadline: Option<DateTime<Utc>> },
    SubmissionRecorded { detection_id: DetectionId, species_id: SpeciesId, at: DateTime<Utc> },
    PointsAwarded { points: u64, reason: PointsReason, source: String, at: DateTime<Utc> },
    QuestProgressed { quest_id: String, species_id: SpeciesId, progress: u32, at: DateTime<Utc> },
    QuestCompleted { quest_id: String, at: DateTime<Utc> },
    QuestExpired { quest_id: String, at: DateTime<Utc> },
    BadgeGranted { badge_id: String, species_bank: bool, at: DateTime<Utc> },
}

/// One observation as seen by the game.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub detection_id: DetectionId,
    pub species_id: SpeciesId,
    /// Observation time; quest windows and lazy expiry are evaluated against it.
    pub at: DateTime<Utc>,
}

impl From<&Detection> for Submission {
    fn from(d: &Detection) -> Self {
        Self { detection_id: d.id.clone(), species_id: d.species_id.clone(), at: d.timestamp }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveQuest {
    pub accepted_at: DateTime<Utc>,
    pub deadline: Option<DateTime<Utc>>,
    pub progress: BTreeMap<SpeciesId, u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub points: u64,
    pub badges: BTreeSet<String>,
    pub bank_unlocked: bool,
    pub active_quests: BTreeMap<String, ActiveQuest>,
    pub completed_quests: BTreeSet<String>,
    pub expired_quests: BTreeSet<String>,
    pub submissions: Vec<DetectionId>,
    pub species_seen: BTreeSet<SpeciesId>,
}

impl UserProfile {
    pub fn new(user_id: &str) -> Self {
        Self {
            user_id: user_id.to_owned(),
            points: 0,
            badges: BTreeSet::new(),
            bank_unlocked: false,
            active_quests: BTreeMap::new(),
            completed_quests: BTreeSet::new(),
            expired_quests: BTreeSet::new(),
            submissions: Vec::new(),
            species_seen: BTreeSet::new(),
        }
    }

    /// Applies one event. Pure: no rule lookups, so replay needs only the log.
    pub fn apply(&mut self, event: &GameEvent) {
        match event {
            GameEvent::QuestAccepted { quest_id, at, deadline } => {
                self.expired_quests.remove(quest_id);
                self.active_quests.insert(
                    quest_id.clone(),
                    ActiveQuest { accepted_at: *at, deadline: *deadline, progress: BTreeMap::new() },
                );
            }
            GameEvent::SubmissionRecorded { detection_id, species_id, .. } => {
                self.submissions.push(detection_id.clone());
                self.species_seen.insert(species_id.clone());
            }
            GameEvent::PointsAwarded { points, .. } => self.points += points,
            GameEvent::QuestProgressed { quest_id, species_id, progress, .. } => {
                if let Some(q) = self.active_quests.get_mut(quest_id) {
                    q.progress.insert(species_id.clone(), *progress);
                }
            }
            GameEvent::QuestCompleted { quest_id, .. } => {
                self.active_quests.remove(quest_id);
                self.completed_quests.insert(quest_id.clone());
            }
            GameEvent::QuestExpired { quest_id, .. } => {
                self.active_quests.remove(quest_id);
                self.expired_quests.insert(quest_id.clone());
            }
            GameEvent::BadgeGranted { badge_id, species_bank, .. } => {
                self.badges.insert(badge_id.clone());
                self.bank_unlocked |= species_bank;
            }
        }
    }

    /// Folds a whole log from the empty profile.
    pub fn replay<'a>(user_id: &str, events: impl IntoIterator<Item = &'a GameEvent>) -> Self {
        let mut p = Self::new(user_id);
        events.into_iter().for_each(|e| p.apply(e));
        p
    }
}

impl BankAccess for UserProfile {
    fn bank_unlocked(&self) -> bool {
        self.bank_unlocked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_rules_parse() {
        let rules = RuleBook::default();
        assert_eq!(rules.base_points, 10);
        assert!(rules.badge("fledgling").unwrap().grants.species_bank);
        assert!(matches!(rules.badge("spotter").unwrap().criterion, BadgeCriterion::DistinctSpecies { threshold: 5 }));
        assert_eq!(rules.quest("pair-up").unwrap().targets.len(), 2);
    }

    #[test]
    fn availability_follows_badges() {
        let rules = RuleBook::default();
        let mut p = UserProfile::new("u");
        let ids = |qs: Vec<Quest>| qs.into_iter().map(|q| q.id).collect::<Vec<_>>();
        assert_eq!(ids(rules.available_quests(&p)), ["first-call", "pair-up"]);
        p.badges.insert("spotter".into());
        assert_eq!(ids(rules.available_quests(&p)), ["dawn-chorus", "first-call", "pair-up"]);
        p.badges.insert("fledgling".into());
        assert_eq!(rules.available_quests(&p).len(), 4);

        let gated = RuleBook::from_toml(
            r#"
            base_points = 10
            [[badges]]
            id = "b"
            criterion = { kind = "total_detections", threshold = 1 }
            [[quests]]
            id = "q"
            targets = { "x" = 1 }
            reward_points = 1
            requires = "b"
            "#,
        )
        .unwrap();
        assert!(gated.available_quests(&UserProfile::new("u")).is_empty());
    }

    #[test]
    fn invalid_rules_rejected() {
        let no_targets = "base_points = 1\n[[quests]]\nid = \"q\"\ntargets = {}\nreward_points = 1\n";
        assert!(RuleBook::from_toml(no_targets).is_err());
        let zero_reward = "base_points = 1\n[[quests]]\nid = \"q\"\ntargets = { a = 1 }\nreward_points = 0\n";
        assert!(RuleBook::from_toml(zero_reward).is_err());
        let bad_limit = "base_points = 1\n[[quests]]\nid = \"q\"\ntargets = { a = 1 }\nreward_points = 1\ntime_limit_s = 0\n";
        assert!(RuleBook::from_toml(bad_limit).is_err());
        let zero_threshold =
            "base_points = 1\n[[badges]]\nid = \"b\"\ncriterion = { kind = \"distinct_species\", threshold = 0 }\n";
        assert!(RuleBook::from_toml(zero_threshold).is_err());
    }
}
