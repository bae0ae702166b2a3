//! Loop-based critic: a clusterer proposes groups, a validator splits the
//! submitted labels into success / unseen / omitted, and omitted labels are
//! resubmitted together with the groups accepted so far.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use indexmap::IndexMap;

use super::{ClusterProposal, Clusterer, Group, SemanticTree, TaxonomyError, DEFAULT_MAX_ROUNDS, DEFAULT_THETA};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    /// Input labels placed in exactly one proposed group.
    pub success: BTreeSet<String>,
    /// Proposed labels that were never submitted.
    pub unseen: BTreeSet<String>,
    /// Input labels not successfully placed.
    pub omitted: BTreeSet<String>,
    /// Input labels the proposal placed in more than one group (also omitted).
    pub conflicted: BTreeSet<String>,
}

/// Splits `input` against `proposal`. Labels assigned to two different groups
/// (or to a group with a blank name) are not accepted and count as omitted.
pub fn validate_clustering(input: &[String], proposal: &ClusterProposal) -> ValidationReport {
    let input_set: BTreeSet<&str> = input.iter().map(String::as_str).collect();
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    let mut report = ValidationReport::default();
    for (parent, members) in &proposal.groups {
        for m in members {
            if !input_set.contains(m.as_str()) {
                report.unseen.insert(m.clone());
                continue;
            }
            if parent.trim().is_empty() {
                report.conflicted.insert(m.clone());
                continue;
            }
            match owner.get(m.as_str()) {
                Some(prev) if *prev != parent.as_str() => {
                    report.conflicted.insert(m.clone());
                }
                _ => {
                    owner.insert(m.as_str(), parent.as_str());
                }
            }
        }
    }
    for label in &input_set {
        if owner.contains_key(label) && !report.conflicted.contains(*label) {
            report.success.insert(label.to_string());
        } else {
            report.omitted.insert(label.to_string());
        }
    }
    report
}

/// Groups one level of labels into coarser classes, looping until every
/// label has been placed. Returned groups keep first-appearance order; members
/// keep the order of `labels`.
pub fn build_level(
    labels: &[String],
    clusterer: &mut dyn Clusterer,
    stage: usize,
    existing: &[Group],
    max_rounds: usize,
) -> Result<Vec<Group>, TaxonomyError> {
    if labels.is_empty() {
        return Err(TaxonomyError::InvalidInput("no labels to cluster".into()));
    }
    let mut groups: IndexMap<String, Vec<String>> = existing
        .iter()
        .map(|g| (g.name.clone(), g.members.clone()))
        .collect();
    let mut pending: Vec<String> = labels.to_vec();
    for round in 1..=max_rounds {
        let reference: Vec<Group> = groups
            .iter()
            .map(|(name, members)| Group {
                name: name.clone(),
                members: members.clone(),
            })
            .collect();
        let proposal = clusterer.propose(stage, &pending, &reference)?;
        let report = validate_clustering(&pending, &proposal);
        log::debug!(
            "stage {stage} round {round}: {} grouped, {} unseen, {} omitted",
            report.success.len(),
            report.unseen.len(),
            report.omitted.len()
        );
        let mut placed = HashSet::new();
        for (name, members) in &proposal.groups {
            for m in members {
                if report.success.contains(m) && placed.insert(m.clone()) {
                    groups.entry(name.clone()).or_default().push(m.clone());
                }
            }
        }
        pending.retain(|l| report.omitted.contains(l));
        if pending.is_empty() {
            let order: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
            return Ok(groups
                .into_iter()
                .filter(|(_, m)| !m.is_empty())
                .map(|(name, mut members)| {
                    members.sort_by_key(|m| order.get(m.as_str()).copied().unwrap_or(usize::MAX));
                    Group { name, members }
                })
                .collect());
        }
    }
    Err(TaxonomyError::NonTermination {
        rounds: max_rounds,
        remaining: pending.len(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct TreeBuildOptions {
    /// Generation stops once the top level has fewer than `theta` nodes.
    pub theta: usize,
    pub max_rounds: usize,
    /// Optional cap on the number of levels (including the leaf level).
    pub max_levels: Option<usize>,
}

impl Default for TreeBuildOptions {
    fn default() -> Self {
        TreeBuildOptions {
            theta: DEFAULT_THETA,
            max_rounds: DEFAULT_MAX_ROUNDS,
            max_levels: None,
        }
    }
}

/// Builds the taxonomy leaf-to-root. The leaf level keeps the order of
/// `leaf_labels`, so leaf positions equal input positions.
pub fn build_tree(
    leaf_labels: &[String],
    clusterer: &mut dyn Clusterer,
    options: TreeBuildOptions,
) -> Result<SemanticTree, TaxonomyError> {
    if leaf_labels.is_empty() {
        return Err(TaxonomyError::InvalidInput("no leaf labels".into()));
    }
    if options.theta < 2 {
        return Err(TaxonomyError::InvalidInput("theta must be at least 2".into()));
    }
    let unique: BTreeSet<&String> = leaf_labels.iter().collect();
    if unique.len() != leaf_labels.len() {
        return Err(TaxonomyError::InvalidInput("leaf labels must be unique".into()));
    }

    // built leaf-first, reversed at the end
    let mut levels = vec![leaf_labels.to_vec()];
    let mut links: Vec<Vec<usize>> = Vec::new();
    let mut stage = 0;
    loop {
        let current = levels.last().unwrap();
        if current.len() < options.theta {
            break;
        }
        if options.max_levels.is_some_and(|m| levels.len() >= m) {
            break;
        }
        let groups = build_level(current, clusterer, stage, &[], options.max_rounds)?;
        if groups.len() >= current.len() {
            return Err(TaxonomyError::Clusterer(format!(
                "stage {stage} produced {} groups from {} labels",
                groups.len(),
                current.len()
            )));
        }
        let mut parent_of: BTreeMap<&str, usize> = BTreeMap::new();
        for (gi, g) in groups.iter().enumerate() {
            for m in &g.members {
                parent_of.insert(m.as_str(), gi);
            }
        }
        let link: Vec<usize> = current.iter().map(|l| parent_of[l.as_str()]).collect();
        links.push(link);
        levels.push(groups.into_iter().map(|g| g.name).collect());
        stage += 1;
    }
    levels.reverse();
    links.reverse();
    SemanticTree::new(levels, links)
}
