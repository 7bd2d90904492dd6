//! Skeleton extraction, oracle plans, permutation enumeration and plans
//! derived from a planner draft.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ConceptSet, Instance, Plan, Skeleton, MAX_CONCEPTS};
use crate::textmatch::LemmatizedSentence;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("instance {id:?} has {count} references, index {index} out of range")]
    ReferenceOutOfRange { id: String, index: usize, count: usize },
    #[error("{0} concepts exceeds the enumeration limit of {MAX_CONCEPTS}")]
    TooManyConcepts(usize),
}

/// Training pair: the reference with its concepts re-ordered to match it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePair {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub plan: Plan,
    pub target: String,
    /// Concepts the reference misses, appended to the plan in canonical order.
    pub appended: Vec<String>,
}

impl OraclePair {
    pub fn has_warning(&self) -> bool {
        !self.appended.is_empty()
    }
}

/// Orders the concepts by their first occurrence in `sentence`.
pub fn extract_skeleton(sentence: &str, concepts: &ConceptSet) -> Skeleton {
    skeleton_of(&LemmatizedSentence::new(sentence), concepts)
}

pub(crate) fn skeleton_of(sentence: &LemmatizedSentence, concepts: &ConceptSet) -> Skeleton {
    let mut found = Vec::new();
    let mut uncovered = Vec::new();
    for concept in concepts.iter() {
        match sentence.first_position(concept) {
            Some(pos) => found.push((pos, concept.to_string())),
            None => uncovered.push(concept.to_string()),
        }
    }
    // canonical iteration makes the (pos, lemma) sort tie-break lexicographic
    found.sort();
    Skeleton {
        ordered: found.into_iter().map(|(_, c)| c).collect(),
        uncovered,
    }
}

fn plan_with_tail(skeleton: Skeleton) -> (Plan, Vec<String>) {
    let mut order = skeleton.ordered;
    order.extend(skeleton.uncovered.iter().cloned());
    (Plan::from_trusted(order), skeleton.uncovered)
}

/// Oracle plan for one reference of `instance`.
pub fn oracle_plan(instance: &Instance, reference_index: usize) -> Result<OraclePair, PlanError> {
    let target = instance
        .references
        .get(reference_index)
        .ok_or_else(|| PlanError::ReferenceOutOfRange {
            id: instance.id.clone(),
            index: reference_index,
            count: instance.references.len(),
        })?;
    let (plan, appended) = plan_with_tail(extract_skeleton(target, &instance.concept_set));
    if !appended.is_empty() {
        log::warn!(
            "instance {}: reference {} misses {:?}; appended to plan",
            instance.id,
            reference_index,
            appended
        );
    }
    Ok(OraclePair {
        instance_id: instance.id.clone(),
        plan,
        target: target.clone(),
        appended,
    })
}

/// One oracle pair per reference.
pub fn oracle_pairs(instance: &Instance) -> Vec<OraclePair> {
    (0..instance.references.len())
        .map(|i| oracle_plan(instance, i).expect("index in range"))
        .collect()
}

/// The planner draft's skeleton, with uncovered concepts appended.
pub fn plan_from_draft(draft: &str, concepts: &ConceptSet) -> Plan {
    plan_with_tail(extract_skeleton(draft, concepts)).0
}

/// All m! plans in lexicographic order.
pub fn enumerate_plans(concepts: &ConceptSet) -> Result<Vec<Plan>, PlanError> {
    if concepts.len() > MAX_CONCEPTS {
        return Err(PlanError::TooManyConcepts(concepts.len()));
    }
    let mut current: Vec<String> = concepts.iter().map(str::to_string).collect();
    let mut out = vec![Plan::from_trusted(current.clone())];
    while next_permutation(&mut current) {
        out.push(Plan::from_trusted(current.clone()));
    }
    Ok(out)
}

/// Advances to the next lexicographic permutation; false once the last is reached.
fn next_permutation<T: Ord>(items: &mut [T]) -> bool {
    if items.len() < 2 {
        return false;
    }
    let mut i = items.len() - 1;
    while i > 0 && items[i - 1] >= items[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = items.len() - 1;
    while items[j] <= items[i - 1] {
        j -= 1;
    }
    items.swap(i - 1, j);
    items[i..].reverse();
    true
}
