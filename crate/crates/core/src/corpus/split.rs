use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use super::{CorpusError, DatasetSplit, RephrasePair, UserMemory};
use crate::rng::{stream, Stream};

/// Partitions users (not pairs) with a seeded shuffle; `ratio` of the users go
/// to training.
pub fn split_by_user(
    pairs: Vec<RephrasePair>,
    mut memories: BTreeMap<String, UserMemory>,
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut users: Vec<String> = memories
        .keys()
        .cloned()
        .chain(pairs.iter().map(|p| p.user_id.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if users.len() < 2 {
        return Err(CorpusError::TooFewUsers(users.len()));
    }
    users.shuffle(&mut stream(seed, Stream::Split));
    let n_train = ((ratio * users.len() as f64).round() as usize).clamp(1, users.len() - 1);
    let train_users: BTreeSet<&str> = users[..n_train].iter().map(String::as_str).collect();
    for u in &users {
        memories
            .entry(u.clone())
            .or_insert_with(|| UserMemory::empty(u.clone()));
    }
    let (train, test) = pairs
        .into_iter()
        .partition(|p| train_users.contains(p.user_id.as_str()));
    Ok(DatasetSplit {
        train,
        test,
        memories,
    })
}
