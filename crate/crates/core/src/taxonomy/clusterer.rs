use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::TaxonomyError;

/// A coarser-level class and the finer labels it groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub members: Vec<String>,
}

/// Raw clustering output: proposed parent name to child labels, in the order
/// the clusterer produced them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterProposal {
    pub groups: IndexMap<String, Vec<String>>,
}

impl ClusterProposal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_group<S: Into<String>>(mut self, parent: &str, children: impl IntoIterator<Item = S>) -> Self {
        self.groups
            .entry(parent.to_string())
            .or_default()
            .extend(children.into_iter().map(Into::into));
        self
    }
}

/// Proposes a grouping of labels into coarser classes.
///
/// `stage` counts grouping passes from the leaves (0 groups the leaf labels).
/// `reference` holds the groups accepted so far for this level; a proposal may
/// extend them by reusing their names or open new groups.
pub trait Clusterer {
    fn propose(
        &mut self,
        stage: usize,
        labels: &[String],
        reference: &[Group],
    ) -> Result<ClusterProposal, TaxonomyError>;
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Per-call behavior of [`DeterministicMock`].
#[derive(Debug, Clone, PartialEq)]
pub enum MockBehavior {
    /// Groups every submitted label.
    CoverAll,
    /// Groups the first ⌈k/2⌉ of the k submitted labels (hash order).
    CoverHalf,
    /// Groups everything except this label, forever.
    OmitAlways(String),
    /// Groups everything and slips in labels that were never submitted.
    Invent(Vec<String>),
    /// Groups everything but also places this label in a second group.
    AssignTwice(String),
}

/// Offline clusterer: orders labels by a seeded hash and chunks them into
/// groups of at most `branching` members. Omitted labels resubmitted with a
/// reference are first packed into reference groups that still have room.
#[derive(Debug, Clone)]
pub struct DeterministicMock {
    branching: usize,
    seed: u64,
    default: MockBehavior,
    script: Vec<MockBehavior>,
    calls: usize,
}

impl DeterministicMock {
    pub fn new(branching: usize, seed: u64) -> Self {
        assert!(branching >= 1, "branching must be positive");
        DeterministicMock {
            branching,
            seed,
            default: MockBehavior::CoverAll,
            script: Vec::new(),
            calls: 0,
        }
    }

    pub fn with_behavior(mut self, behavior: MockBehavior) -> Self {
        self.default = behavior;
        self
    }

    /// Behavior for the first calls, in order; later calls use the default.
    pub fn with_script(mut self, script: Vec<MockBehavior>) -> Self {
        self.script = script;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls
    }

    fn order(&self, labels: &[String]) -> Vec<String> {
        let mut keyed: Vec<(u64, &String)> = labels
            .iter()
            .map(|l| {
                let mut bytes = self.seed.to_le_bytes().to_vec();
                bytes.extend_from_slice(l.as_bytes());
                (fnv1a(&bytes), l)
            })
            .collect();
        keyed.sort();
        keyed.into_iter().map(|(_, l)| l.clone()).collect()
    }
}

impl Clusterer for DeterministicMock {
    fn propose(
        &mut self,
        stage: usize,
        labels: &[String],
        reference: &[Group],
    ) -> Result<ClusterProposal, TaxonomyError> {
        let behavior = self.script.get(self.calls).cloned().unwrap_or_else(|| self.default.clone());
        self.calls += 1;

        let mut ordered = self.order(labels);
        match &behavior {
            MockBehavior::CoverHalf => ordered.truncate(labels.len().div_ceil(2)),
            MockBehavior::OmitAlways(skip) => ordered.retain(|l| l != skip),
            _ => {}
        }

        let mut groups: IndexMap<String, Vec<String>> = IndexMap::new();
        let mut pending = ordered.into_iter().peekable();
        for g in reference {
            let room = self.branching.saturating_sub(g.members.len());
            let take: Vec<String> = pending.by_ref().take(room).collect();
            if !take.is_empty() {
                groups.insert(g.name.clone(), take);
            }
        }
        let mut next = reference.len();
        while pending.peek().is_some() {
            let chunk: Vec<String> = pending.by_ref().take(self.branching).collect();
            groups.insert(format!("C{stage}_{next}"), chunk);
            next += 1;
        }

        match behavior {
            MockBehavior::Invent(extra) => {
                let name = groups
                    .keys()
                    .next()
                    .cloned()
                    .unwrap_or_else(|| format!("C{stage}_{next}"));
                groups.entry(name).or_default().extend(extra);
            }
            MockBehavior::AssignTwice(dup) => {
                groups.insert(format!("C{stage}_dup"), vec![dup]);
            }
            _ => {}
        }
        Ok(ClusterProposal { groups })
    }
}

/// Replays a fixed hierarchy: at stage `s` every label is mapped to its
/// recorded parent. Labels without a recorded parent are omitted. With
/// `flaky` set, the first call of each stage drops every seventh label and
/// invents one, exercising the critic loop.
#[derive(Debug, Clone)]
pub struct ScriptedClusterer {
    stages: Vec<BTreeMap<String, String>>,
    flaky: bool,
    seen_stage: Option<usize>,
}

impl ScriptedClusterer {
    /// `paths` are root-to-leaf name paths, all of the same length.
    pub fn from_paths<S: AsRef<str>>(paths: &[Vec<S>]) -> Self {
        let depth = paths.first().map(|p| p.len()).unwrap_or(0);
        let mut stages = vec![BTreeMap::new(); depth.saturating_sub(1)];
        for path in paths {
            for s in 0..depth.saturating_sub(1) {
                let child = path[depth - 1 - s].as_ref().to_string();
                let parent = path[depth - 2 - s].as_ref().to_string();
                stages[s].insert(child, parent);
            }
        }
        ScriptedClusterer {
            stages,
            flaky: false,
            seen_stage: None,
        }
    }

    pub fn flaky(mut self, flaky: bool) -> Self {
        self.flaky = flaky;
        self
    }

    pub fn stages(&self) -> usize {
        self.stages.len()
    }
}

impl Clusterer for ScriptedClusterer {
    fn propose(
        &mut self,
        stage: usize,
        labels: &[String],
        _reference: &[Group],
    ) -> Result<ClusterProposal, TaxonomyError> {
        let first_call = self.seen_stage != Some(stage);
        self.seen_stage = Some(stage);
        let Some(map) = self.stages.get(stage) else {
            return Err(TaxonomyError::Clusterer(format!("no script for stage {stage}")));
        };
        let mut groups: IndexMap<String, Vec<String>> = IndexMap::new();
        for (i, label) in labels.iter().enumerate() {
            if self.flaky && first_call && i % 7 == 3 {
                continue;
            }
            if let Some(parent) = map.get(label) {
                groups.entry(parent.clone()).or_default().push(label.clone());
            }
        }
        if self.flaky && first_call {
            if let Some((_, members)) = groups.iter_mut().next() {
                members.push(format!("Invented{stage}"));
            }
        }
        Ok(ClusterProposal { groups })
    }
}
