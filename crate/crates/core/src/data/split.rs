use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ManifestRecord, Split};
use crate::error::{Error, Result};

/// Patient-level split stratified by label.
///
/// Per class of `n` patients: `ceil(f_train·n)` train, `round(f_val·n)` val,
/// the remainder test. Patients are shuffled with `seed` first.
pub fn split_dataset(
    records: &[ManifestRecord],
    fractions: [f64; 3],
    seed: u64,
) -> Result<Vec<ManifestRecord>> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-6
    {
        return Err(Error::config(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let mut patients: BTreeMap<&str, u8> = BTreeMap::new();
    for r in records {
        match patients.get(r.patient_id.as_str()) {
            Some(&l) if l != r.label => {
                return Err(Error::config(format!(
                    "patient {} has clips with different labels",
                    r.patient_id
                )))
            }
            _ => {
                patients.insert(&r.patient_id, r.label);
            }
        }
    }
    let mut by_class: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    for (id, label) in &patients {
        by_class.entry(*label).or_default().push(id);
    }
    let needed = fractions.iter().filter(|f| **f > 0.0).count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: BTreeMap<&str, Split> = BTreeMap::new();
    for (label, ids) in &mut by_class {
        let n = ids.len();
        if n < needed {
            return Err(Error::config(format!(
                "class {label} has {n} patients, too few to stratify over {needed} splits"
            )));
        }
        ids.shuffle(&mut rng);
        let n_train = ((fractions[0] * n as f64) - 1e-9).ceil().max(0.0) as usize;
        let n_train = n_train.min(n);
        let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
        for (i, id) in ids.iter().enumerate() {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            assignment.insert(id, split);
        }
    }
    Ok(records
        .iter()
        .map(|r| ManifestRecord {
            split: assignment[r.patient_id.as_str()],
            ..r.clone()
        })
        .collect())
}
