//! Two-stage consensus over independent agent proposals.
//!
//! Stage one is a majority vote over the primary intent ([`ActionKind`]).
//! Stage two aggregates parameters among the proposals of the winning kind:
//!
//! | kind                        | rule                                           |
//! |-----------------------------|------------------------------------------------|
//! | click / swipe / long press  | candidate point nearest the centroid           |
//! | press, status               | most frequent value                            |
//! | type                        | most frequent text, compared after NFC         |
//! | wait (and long-press time)  | original duration nearest the mean             |
//!
//! The reasoning string is taken from the agent whose proposal supplied the
//! adopted parameters. Every tie is broken toward the lowest agent index.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::action::{Action, ActionError, ActionKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnsembleError {
    #[error("no proposals to vote on")]
    EmptyProposalSet,
    #[error("no proposal of kind {0}")]
    NoMatchingProposals(ActionKind),
    #[error("agent index {0} appears twice in one round")]
    DuplicateAgent(usize),
    #[error("agent {agent} proposed an invalid action: {source}")]
    InvalidAction { agent: usize, source: ActionError },
}

/// One agent's answer for the current step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub agent_index: usize,
    pub action: Action,
    #[serde(default)]
    pub thought: String,
}

impl Proposal {
    pub fn new(agent_index: usize, action: Action, thought: impl Into<String>) -> Self {
        Self {
            agent_index,
            action,
            thought: thought.into(),
        }
    }
}

pub type Tally = BTreeMap<ActionKind, usize>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleDecision {
    pub action: Action,
    pub source_agent: usize,
    pub thought: String,
    pub vote_tally: Tally,
}

fn check_round(proposals: &[Proposal]) -> Result<(), EnsembleError> {
    if proposals.is_empty() {
        return Err(EnsembleError::EmptyProposalSet);
    }
    let mut seen = BTreeSet::new();
    for p in proposals {
        if !seen.insert(p.agent_index) {
            return Err(EnsembleError::DuplicateAgent(p.agent_index));
        }
        p.action
            .validate()
            .map_err(|source| EnsembleError::InvalidAction {
                agent: p.agent_index,
                source,
            })?;
    }
    Ok(())
}

/// Most frequent key; ties go to the key whose earliest proposer has the
/// lowest agent index. Returns the key and that earliest proposer.
fn frequency_winner<'a, K, F>(proposals: &[&'a Proposal], key: F) -> Option<(K, &'a Proposal)>
where
    K: Ord + Clone,
    F: Fn(&Proposal) -> K,
{
    let mut groups: BTreeMap<K, (usize, &'a Proposal)> = BTreeMap::new();
    for &p in proposals {
        groups
            .entry(key(p))
            .and_modify(|(count, first)| {
                *count += 1;
                if p.agent_index < first.agent_index {
                    *first = p;
                }
            })
            .or_insert((1, p));
    }
    groups
        .into_iter()
        .max_by(|(_, (ca, fa)), (_, (cb, fb))| {
            ca.cmp(cb).then(fb.agent_index.cmp(&fa.agent_index))
        })
        .map(|(k, (_, first))| (k, first))
}

/// Stage one: the modal action kind and the full tally.
pub fn vote_action_type(proposals: &[Proposal]) -> Result<(ActionKind, Tally), EnsembleError> {
    check_round(proposals)?;
    let mut tally = Tally::new();
    for p in proposals {
        *tally.entry(p.action.kind()).or_default() += 1;
    }
    let refs: Vec<&Proposal> = proposals.iter().collect();
    let (kind, _) = frequency_winner(&refs, |p| p.action.kind())
        .ok_or(EnsembleError::EmptyProposalSet)?;
    Ok((kind, tally))
}

// n * |value - mean| compared exactly in integers.
fn nearest_to_mean<'a>(candidates: &[&'a Proposal], value: impl Fn(&Proposal) -> i128) -> &'a Proposal {
    let n = candidates.len() as i128;
    let sum: i128 = candidates.iter().map(|p| value(p)).sum();
    candidates
        .iter()
        .min_by_key(|p| ((n * value(p) - sum).abs(), p.agent_index))
        .copied()
        .expect("candidates is non-empty")
}

fn centroid_nearest<'a>(candidates: &[&'a Proposal]) -> &'a Proposal {
    let n = candidates.len() as i128;
    let point = |p: &Proposal| p.action.point.expect("coordinate kinds carry a point");
    let sx: i128 = candidates.iter().map(|p| i128::from(point(p).x)).sum();
    let sy: i128 = candidates.iter().map(|p| i128::from(point(p).y)).sum();
    candidates
        .iter()
        .min_by_key(|p| {
            let q = point(p);
            let dx = n * i128::from(q.x) - sx;
            let dy = n * i128::from(q.y) - sy;
            (dx * dx + dy * dy, p.agent_index)
        })
        .copied()
        .expect("candidates is non-empty")
}

/// Stage two: aggregate the parameters of `winning` among matching
/// proposals.
pub fn aggregate_parameters(
    winning: ActionKind,
    proposals: &[Proposal],
) -> Result<EnsembleDecision, EnsembleError> {
    check_round(proposals)?;
    let mut tally = Tally::new();
    for p in proposals {
        *tally.entry(p.action.kind()).or_default() += 1;
    }
    let matching: Vec<&Proposal> = proposals
        .iter()
        .filter(|p| p.action.kind() == winning)
        .collect();
    if matching.is_empty() {
        return Err(EnsembleError::NoMatchingProposals(winning));
    }

    let (source, action) = match winning {
        ActionKind::Click | ActionKind::Swipe => {
            let src = centroid_nearest(&matching);
            (src, src.action.clone())
        }
        ActionKind::LongPress => {
            let src = centroid_nearest(&matching);
            let dur = nearest_to_mean(&matching, |p| i128::from(p.action.duration.unwrap_or(0)));
            let mut action = src.action.clone();
            action.duration = dur.action.duration;
            (src, action)
        }
        ActionKind::Wait => {
            let src = nearest_to_mean(&matching, |p| i128::from(p.action.duration.unwrap_or(0)));
            (src, src.action.clone())
        }
        ActionKind::Press => {
            let (_, src) = frequency_winner(&matching, |p| p.action.press)
                .expect("matching is non-empty");
            (src, src.action.clone())
        }
        ActionKind::Status => {
            let (_, src) = frequency_winner(&matching, |p| p.action.status)
                .expect("matching is non-empty");
            (src, src.action.clone())
        }
        ActionKind::Type => {
            let (_, src) = frequency_winner(&matching, |p| {
                p.action
                    .type_text
                    .as_deref()
                    .unwrap_or_default()
                    .nfc()
                    .collect::<String>()
            })
            .expect("matching is non-empty");
            (src, src.action.clone())
        }
    };

    Ok(EnsembleDecision {
        action,
        source_agent: source.agent_index,
        thought: source.thought.clone(),
        vote_tally: tally,
    })
}

/// Runs both stages.
pub fn decide(proposals: &[Proposal]) -> Result<EnsembleDecision, EnsembleError> {
    let (kind, _) = vote_action_type(proposals)?;
    aggregate_parameters(kind, proposals)
}

/// Loggable record of one decision round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRound {
    pub proposals: Vec<Proposal>,
    pub tally: Tally,
    pub decision: EnsembleDecision,
    pub source_agent: usize,
}

impl DecisionRound {
    pub fn run(proposals: Vec<Proposal>) -> Result<Self, EnsembleError> {
        let decision = decide(&proposals)?;
        Ok(Self {
            tally: decision.vote_tally.clone(),
            source_agent: decision.source_agent,
            proposals,
            decision,
        })
    }
}
