//! Consumer-group coordination: membership, generation-fenced assignment and
//! committed offsets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TopicPartition {
    pub topic: String,
    pub partition: u32,
}

impl TopicPartition {
    pub fn new(topic: impl Into<String>, partition: u32) -> Self {
        TopicPartition { topic: topic.into(), partition }
    }
}

impl std::fmt::Display for TopicPartition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.topic, self.partition)
    }
}

/// What a member holds after a rebalance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership {
    pub generation: u64,
    pub assignment: Vec<TopicPartition>,
}

/// Distributes every subscribed partition over the members.
///
/// Members are taken in lexicographic order and partitions in (topic, partition)
/// order; each partition goes to the next member, cycling, that subscribes to its
/// topic. With identical subscriptions partition `i` lands on member `i mod n`.
pub fn assign(
    members: &BTreeMap<String, Vec<String>>,
    partitions_of: &dyn Fn(&str) -> u32,
) -> BTreeMap<String, Vec<TopicPartition>> {
    let ids: Vec<&String> = members.keys().collect();
    let mut out: BTreeMap<String, Vec<TopicPartition>> = ids.iter().map(|m| ((*m).clone(), Vec::new())).collect();
    if ids.is_empty() {
        return out;
    }
    let topics: BTreeSet<&String> = members.values().flatten().collect();
    let mut cursor = 0usize;
    for topic in topics {
        for p in 0..partitions_of(topic) {
            let pick = (0..ids.len()).map(|k| (cursor + k) % ids.len()).find(|&i| members[ids[i]].contains(topic));
            if let Some(i) = pick {
                out.get_mut(ids[i]).unwrap().push(TopicPartition::new(topic.clone(), p));
                cursor = i + 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PersistedGroup {
    pub group_id: String,
    pub generation: u64,
    pub committed: Vec<(TopicPartition, u64)>,
}

#[derive(Debug)]
pub struct Group {
    pub id: String,
    members: BTreeMap<String, Vec<String>>,
    assignment: BTreeMap<String, Vec<TopicPartition>>,
    committed: BTreeMap<TopicPartition, u64>,
    generation: u64,
}

impl Group {
    pub fn new(id: impl Into<String>) -> Self {
        Group {
            id: id.into(),
            members: BTreeMap::new(),
            assignment: BTreeMap::new(),
            committed: BTreeMap::new(),
            generation: 0,
        }
    }

    pub fn restore(state: PersistedGroup) -> Self {
        let mut g = Group::new(state.group_id);
        g.generation = state.generation;
        g.committed = state.committed.into_iter().collect();
        g
    }

    pub fn persisted(&self) -> PersistedGroup {
        PersistedGroup {
            group_id: self.id.clone(),
            generation: self.generation,
            committed: self.committed.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn members(&self) -> impl Iterator<Item = &String> {
        self.members.keys()
    }

    pub fn has_member(&self, member: &str) -> bool {
        self.members.contains_key(member)
    }

    fn rebalance(&mut self, partitions_of: &dyn Fn(&str) -> u32) {
        self.generation += 1;
        self.assignment = assign(&self.members, partitions_of);
    }

    pub fn join(&mut self, member: &str, topics: Vec<String>, partitions_of: &dyn Fn(&str) -> u32) -> Membership {
        self.members.insert(member.to_string(), topics);
        self.rebalance(partitions_of);
        self.membership(member).expect("member just joined")
    }

    /// Returns false when `member` was not in the group.
    pub fn leave(&mut self, member: &str, partitions_of: &dyn Fn(&str) -> u32) -> bool {
        if self.members.remove(member).is_none() {
            return false;
        }
        self.rebalance(partitions_of);
        true
    }

    pub fn membership(&self, member: &str) -> Option<Membership> {
        self.assignment
            .get(member)
            .map(|a| Membership { generation: self.generation, assignment: a.clone() })
    }

    /// Fencing check applied to fetches and commits.
    pub fn check(&self, member: &str, generation: u64, tp: &TopicPartition) -> Result<()> {
        if generation != self.generation || !self.members.contains_key(member) {
            return Err(Error::StaleGeneration(format!(
                "group {} member {member}: generation {generation}, current {}",
                self.id, self.generation
            )));
        }
        if !self.assignment.get(member).is_some_and(|a| a.contains(tp)) {
            return Err(Error::NotAssigned(format!("group {} member {member} does not hold {tp}", self.id)));
        }
        Ok(())
    }

    /// Records `offset` as committed; the stored value never decreases.
    pub fn commit(&mut self, member: &str, generation: u64, tp: TopicPartition, offset: u64) -> Result<u64> {
        self.check(member, generation, &tp)?;
        let slot = self.committed.entry(tp).or_insert(0);
        *slot = (*slot).max(offset);
        Ok(*slot)
    }

    pub fn committed(&self, tp: &TopicPartition) -> Option<u64> {
        self.committed.get(tp).copied()
    }

    pub fn committed_all(&self) -> &BTreeMap<TopicPartition, u64> {
        &self.committed
    }
}
