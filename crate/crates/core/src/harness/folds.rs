//! Leave-one-subject-out folds over four subject groups.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PulseError, Result};

pub const N_GROUPS: usize = 4;

/// Roles of each subject in one LOSO iteration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub iteration: usize,
    pub test: String,
    /// Group-mates of the test subject. Empty when the held-out group has
    /// no other members, in which case validation windows are split off
    /// the training subjects instead.
    pub validation: Vec<String>,
    pub train: Vec<String>,
    /// Group index of every subject, in input order.
    pub groups: Vec<usize>,
}

impl FoldSpec {
    pub fn needs_validation_split(&self) -> bool {
        self.validation.len() < 2
    }
}

/// Assigns subjects to [`N_GROUPS`] groups by seeded shuffle and builds one
/// iteration per subject, in input order.
pub fn loso_folds(subjects: &[String], seed: u64) -> Result<Vec<FoldSpec>> {
    if subjects.len() < N_GROUPS {
        return Err(PulseError::InvalidArgument(format!(
            "LOSO needs at least {N_GROUPS} subjects, got {}",
            subjects.len()
        )));
    }
    for (i, s) in subjects.iter().enumerate() {
        if subjects[..i].contains(s) {
            return Err(PulseError::InvalidArgument(format!("duplicate subject id {s}")));
        }
    }
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut groups = vec![0; subjects.len()];
    for (rank, &i) in order.iter().enumerate() {
        groups[i] = rank % N_GROUPS;
    }

    Ok(subjects
        .iter()
        .enumerate()
        .map(|(k, test)| {
            let g = groups[k];
            let pick = |f: &dyn Fn(usize) -> bool| -> Vec<String> {
                (0..subjects.len()).filter(|&i| f(i)).map(|i| subjects[i].clone()).collect()
            };
            FoldSpec {
                iteration: k,
                test: test.clone(),
                validation: pick(&|i| groups[i] == g && i != k),
                train: pick(&|i| groups[i] != g),
                groups: groups.clone(),
            }
        })
        .collect())
}
