use std::collections::HashMap;

use super::Manifest;
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// One cross-validation fold.
#[derive(Clone, Debug, PartialEq)]
pub struct Fold {
    pub train: Manifest,
    pub validation: Manifest,
}

fn records_by_patient(m: &Manifest) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for r in m.records() {
        *counts.entry(r.patient_id.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Patient-disjoint train/test split.
///
/// Patients (first-appearance order) are shuffled with `SplitMix64(seed)` and
/// moved to the test side one at a time until the test record count first
/// reaches `test_fraction * total`. The last remaining patient always stays
/// in training. Record order within each side follows the input manifest.
pub fn patient_aware_split(m: &Manifest, test_fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::param(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut patients = m.patients();
    if patients.len() < 2 {
        return Err(Error::Constraint(format!(
            "patient-aware split needs at least 2 patients, found {}",
            patients.len()
        )));
    }
    let counts = records_by_patient(m);
    SplitMix64::new(seed).shuffle(&mut patients);

    let target = test_fraction * m.len() as f64;
    let mut test_patients = std::collections::HashSet::new();
    let mut taken = 0usize;
    for p in &patients[..patients.len() - 1] {
        if taken as f64 >= target {
            break;
        }
        test_patients.insert(*p);
        taken += counts[p];
    }
    let (test, train): (Vec<_>, Vec<_>) = m
        .records()
        .iter()
        .cloned()
        .partition(|r| test_patients.contains(r.patient_id.as_str()));
    Ok((m.with_records(train), m.with_records(test)))
}

/// k-fold partition.
///
/// Without `patient_aware`, record indices are shuffled and index `i` of the
/// shuffled order goes to fold `i % k`. With it, patients are shuffled and
/// patient `j` goes to fold `j % k`, so fold patient counts differ by at most
/// one. Each fold's training side is every record outside its validation side.
pub fn kfold(m: &Manifest, k: usize, seed: u64, patient_aware: bool) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::param(format!("k must be >= 2, got {k}")));
    }
    let mut rng = SplitMix64::new(seed);
    let fold_of: Vec<usize> = if patient_aware {
        let mut patients = m.patients();
        if patients.len() < k {
            return Err(Error::Constraint(format!(
                "{k} patient-aware folds need at least {k} patients, found {}",
                patients.len()
            )));
        }
        rng.shuffle(&mut patients);
        let assign: HashMap<&str, usize> =
            patients.iter().enumerate().map(|(j, p)| (*p, j % k)).collect();
        m.records().iter().map(|r| assign[r.patient_id.as_str()]).collect()
    } else {
        if m.len() < k {
            return Err(Error::Constraint(format!(
                "{k} folds need at least {k} records, found {}",
                m.len()
            )));
        }
        let mut order: Vec<usize> = (0..m.len()).collect();
        rng.shuffle(&mut order);
        let mut fold_of = vec![0; m.len()];
        for (i, &idx) in order.iter().enumerate() {
            fold_of[idx] = i % k;
        }
        fold_of
    };
    Ok((0..k)
        .map(|f| {
            let (validation, train): (Vec<_>, Vec<_>) = m
                .records()
                .iter()
                .zip(&fold_of)
                .map(|(r, &g)| (r.clone(), g))
                .partition(|(_, g)| *g == f);
            Fold {
                train: m.with_records(train.into_iter().map(|(r, _)| r).collect()),
                validation: m.with_records(validation.into_iter().map(|(r, _)| r).collect()),
            }
        })
        .collect())
}
