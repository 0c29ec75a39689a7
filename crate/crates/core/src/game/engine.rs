use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{GameError, GameEvent, PointsReason, Quest, RuleBook, Submission, UserProfile};

/// Result of one recorded submission.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub points_delta: u64,
    pub badges_earned: Vec<String>,
    pub quests_progressed: Vec<String>,
    pub quests_completed: Vec<String>,
    pub quests_expired: Vec<String>,
    /// The detection was already counted; nothing changed.
    pub duplicate: bool,
}

struct Slot {
    profile: UserProfile,
    events: Vec<GameEvent>,
    log: Option<File>,
}

impl Slot {
    fn commit(&mut self, events: Vec<GameEvent>) -> Result<(), GameError> {
        if events.is_empty() {
            return Ok(());
        }
        if let Some(log) = self.log.as_mut() {
            let mut buf = Vec::new();
            for e in &events {
                serde_json::to_writer(&mut buf, e).map_err(|e| GameError::Corrupt(e.to_string()))?;
                buf.push(b'\n');
            }
            log.write_all(&buf)?;
            log.flush()?;
        }
        for e in &events {
            self.profile.apply(e);
        }
        self.events.extend(events);
        Ok(())
    }
}

/// Staged events applied to a scratch copy so later rules see earlier effects.
struct Draft {
    profile: UserProfile,
    events: Vec<GameEvent>,
}

impl Draft {
    fn new(profile: &UserProfile) -> Self {
        Self { profile: profile.clone(), events: Vec::new() }
    }

    fn push(&mut self, e: GameEvent) {
        self.profile.apply(&e);
        self.events.push(e);
    }

    fn expire(&mut self, at: DateTime<Utc>) -> Vec<String> {
        let overdue: Vec<String> = self
            .profile
            .active_quests
            .iter()
            .filter(|(_, q)| q.deadline.is_some_and(|d| at > d))
            .map(|(id, _)| id.clone())
            .collect();
        for id in &overdue {
            self.push(GameEvent::QuestExpired { quest_id: id.clone(), at });
        }
        overdue
    }
}

/// Per-user event-sourced game state. Mutations of one user are serialized;
/// different users proceed concurrently.
pub struct GameEngine {
    rules: RuleBook,
    dir: Option<PathBuf>,
    users: RwLock<HashMap<String, Arc<Mutex<Slot>>>>,
}

impl GameEngine {
    pub fn in_memory(rules: RuleBook) -> Self {
        Self { rules, dir: None, users: RwLock::default() }
    }

    /// Loads every `profiles/<user>.log` below `dir`.
    pub fn open(dir: &Path, rules: RuleBook) -> Result<Self, GameError> {
        let profiles = dir.join("profiles");
        fs::create_dir_all(&profiles)?;
        let mut users = HashMap::new();
        for entry in fs::read_dir(&profiles)? {
            let path = entry?.path();
            let Some(user) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".log")) else {
                continue;
            };
            if validate_user(user).is_err() {
                continue;
            }
            let events = read_events(&path)?;
            let log = OpenOptions::new().append(true).open(&path)?;
            let profile = UserProfile::replay(user, &events);
            users.insert(user.to_owned(), Arc::new(Mutex::new(Slot { profile, events, log: Some(log) })));
        }
        Ok(Self { rules, dir: Some(dir.to_owned()), users: RwLock::new(users) })
    }

    pub fn rules(&self) -> &RuleBook {
        &self.rules
    }

    /// Creates an empty profile; registering an existing user is a no-op.
    pub fn register(&self, user: &str) -> Result<(), GameError> {
        validate_user(user)?;
        let mut users = self.users.write().expect("user table poisoned");
        if users.contains_key(user) {
            return Ok(());
        }
        let log = match &self.dir {
            Some(dir) => Some(OpenOptions::new().create(true).append(true).open(log_path(dir, user))?),
            None => None,
        };
        let slot = Slot { profile: UserProfile::new(user), events: Vec::new(), log };
        users.insert(user.to_owned(), Arc::new(Mutex::new(slot)));
        Ok(())
    }

    pub fn is_registered(&self, user: &str) -> bool {
        self.users.read().expect("user table poisoned").contains_key(user)
    }

    fn slot(&self, user: &str) -> Result<Arc<Mutex<Slot>>, GameError> {
        self.users
            .read()
            .expect("user table poisoned")
            .get(user)
            .cloned()
            .ok_or_else(|| GameError::UnknownUser(user.to_owned()))
    }

    fn with_slot<T>(&self, user: &str, f: impl FnOnce(&mut Slot) -> Result<T, GameError>) -> Result<T, GameError> {
        let slot = self.slot(user)?;
        let mut guard = slot.lock().expect("profile lock poisoned");
        f(&mut guard)
    }

    /// Current profile, expiring overdue quests as of `now`.
    pub fn profile(&self, user: &str, now: DateTime<Utc>) -> Result<UserProfile, GameError> {
        self.with_slot(user, |slot| {
            let mut draft = Draft::new(&slot.profile);
            draft.expire(now);
            slot.commit(draft.events)?;
            Ok(slot.profile.clone())
        })
    }

    pub fn available_quests(&self, user: &str, now: DateTime<Utc>) -> Result<Vec<Quest>, GameError> {
        Ok(self.rules.available_quests(&self.profile(user, now)?))
    }

    pub fn accept_quest(&self, user: &str, quest_id: &str, now: DateTime<Utc>) -> Result<UserProfile, GameError> {
        let quest = self.rules.quest(quest_id).ok_or_else(|| GameError::UnknownQuest(quest_id.to_owned()))?;
        self.with_slot(user, |slot| {
            let mut draft = Draft::new(&slot.profile);
            draft.expire(now);
            let p = &draft.profile;
            if !self.rules.is_available(quest, &p.badges) {
                return Err(GameError::QuestLocked(quest_id.to_owned()));
            }
            if p.completed_quests.contains(quest_id) {
                return Err(GameError::AlreadyCompleted(quest_id.to_owned()));
            }
            if p.active_quests.contains_key(quest_id) {
                return Err(GameError::AlreadyActive(quest_id.to_owned()));
            }
            draft.push(GameEvent::QuestAccepted {
                quest_id: quest_id.to_owned(),
                at: now,
                deadline: quest.time_limit().map(|l| now + l),
            });
            slot.commit(draft.events)?;
            Ok(slot.profile.clone())
        })
    }

    /// Awards base points, advances matching quests, completes or expires
    /// quests and grants newly earned badges.
    pub fn record_submission(&self, user: &str, submission: &Submission) -> Result<RewardOutcome, GameError> {
        self.with_slot(user, |slot| {
            if slot.profile.submissions.contains(&submission.detection_id) {
                return Ok(RewardOutcome { duplicate: true, ..RewardOutcome::default() });
            }
            let at = submission.at;
            let mut draft = Draft::new(&slot.profile);
            let mut outcome = RewardOutcome { quests_expired: draft.expire(at), ..RewardOutcome::default() };
            draft.push(GameEvent::SubmissionRecorded {
                detection_id: submission.detection_id.clone(),
                species_id: submission.species_id.clone(),
                at,
            });
            if self.rules.base_points > 0 {
                draft.push(GameEvent::PointsAwarded {
                    points: self.rules.base_points,
                    reason: PointsReason::Detection,
                    source: submission.detection_id.to_string(),
                    at,
                });
                outcome.points_delta += self.rules.base_points;
            }

            let candidates: Vec<String> = draft.profile.active_quests.keys().cloned().collect();
            for quest_id in candidates {
                let Some(quest) = self.rules.quest(&quest_id) else { continue };
                let Some(&required) = quest.targets.get(&submission.species_id) else { continue };
                let active = &draft.profile.active_quests[&quest_id];
                let in_window = at >= active.accepted_at && active.deadline.is_none_or(|d| at <= d);
                let current = active.progress.get(&submission.species_id).copied().unwrap_or(0);
                if !in_window || current >= required {
                    continue;
                }
                draft.push(GameEvent::QuestProgressed {
                    quest_id: quest_id.clone(),
                    species_id: submission.species_id.clone(),
                    progress: current + 1,
                    at,
                });
                outcome.quests_progressed.push(quest_id.clone());
                let progress = &draft.profile.active_quests[&quest_id].progress;
                if quest.targets.iter().all(|(s, &n)| progress.get(s).copied().unwrap_or(0) >= n) {
                    draft.push(GameEvent::QuestCompleted { quest_id: quest_id.clone(), at });
                    draft.push(GameEvent::PointsAwarded {
                        points: quest.reward_points,
                        reason: PointsReason::Quest,
                        source: quest_id.clone(),
                        at,
                    });
                    outcome.points_delta += quest.reward_points;
                    outcome.quests_completed.push(quest_id);
                }
            }

            for rule in &self.rules.badges {
                if !draft.profile.badges.contains(&rule.id) && rule.criterion.satisfied_by(&draft.profile) {
                    draft.push(GameEvent::BadgeGranted {
                        badge_id: rule.id.clone(),
                        species_bank: rule.grants.species_bank,
                        at,
                    });
                    outcome.badges_earned.push(rule.id.clone());
                }
            }
            slot.commit(draft.events)?;
            Ok(outcome)
        })
    }

    /// The user's full event log.
    pub fn events(&self, user: &str) -> Result<Vec<GameEvent>, GameError> {
        self.with_slot(user, |slot| Ok(slot.events.clone()))
    }
}

fn log_path(dir: &Path, user: &str) -> PathBuf {
    dir.join("profiles").join(format!("{user}.log"))
}

/// User ids double as file names: 1 to 64 of `[A-Za-z0-9_.-]`, not starting with a dot.
pub(crate) fn validate_user(user: &str) -> Result<(), GameError> {
    let ok = !user.is_empty()
        && user.len() <= 64
        && !user.starts_with('.')
        && user.bytes().all(|b| b.is_ascii_alphanumeric() || b"_.-".contains(&b));
    if ok {
        Ok(())
    } else {
        Err(GameError::InvalidUser(user.to_owned()))
    }
}

/// Reads a profile log, truncating an unterminated trailing line left by a crash.
fn read_events(path: &Path) -> Result<Vec<GameEvent>, GameError> {
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut valid = 0u64;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        if buf.last() != Some(&b'\n') {
            break;
        }
        let event = serde_json::from_slice(&buf)
            .map_err(|e| GameError::Corrupt(format!("{} entry {}: {e}", path.display(), events.len() + 1)))?;
        events.push(event);
        valid += n as u64;
    }
    if valid < fs::metadata(path)?.len() {
        OpenOptions::new().write(true).open(path)?.set_len(valid)?;
    }
    Ok(events)
}
