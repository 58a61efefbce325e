use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::Manifest;
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor_id: String,
    pub positive_id: String,
    pub negative_id: String,
}

impl Triplet {
    /// Checks the class constraints against `m`.
    pub fn validate(&self, m: &Manifest) -> Result<()> {
        let label = |id: &str| {
            m.get(id)
                .map(|r| r.label)
                .ok_or_else(|| Error::MissingSample(id.to_string()))
        };
        let (a, p, n) = (
            label(&self.anchor_id)?,
            label(&self.positive_id)?,
            label(&self.negative_id)?,
        );
        if self.anchor_id == self.positive_id {
            return Err(Error::Constraint(format!("anchor `{}` reused as positive", self.anchor_id)));
        }
        if a != p {
            return Err(Error::Constraint(format!(
                "positive `{}` not in anchor class",
                self.positive_id
            )));
        }
        if a == n {
            return Err(Error::Constraint(format!(
                "negative `{}` shares the anchor class",
                self.negative_id
            )));
        }
        Ok(())
    }
}

/// Draws `n` triplets by seeded uniform sampling.
///
/// Per triplet: an anchor uniformly among eligible records, a positive
/// uniformly among the other records of its class (restricted to the anchor's
/// patient when `same_patient_positive`), and a negative uniformly among
/// records of every other class. Classes without records are ignored; a
/// present class with a single record is an error.
pub fn sample_triplets(m: &Manifest, n: usize, seed: u64, same_patient_positive: bool) -> Result<Vec<Triplet>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in m.records().iter().enumerate() {
        by_class.entry(r.label).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::Constraint(format!(
            "triplets need at least 2 populated classes, found {}",
            by_class.len()
        )));
    }
    if let Some((c, _)) = by_class.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::Constraint(format!(
            "class `{}` has fewer than 2 samples",
            m.classes()[*c]
        )));
    }

    // Positive candidates for each record, by position in the manifest.
    let mut group: BTreeMap<(usize, &str), Vec<usize>> = BTreeMap::new();
    if same_patient_positive {
        for (i, r) in m.records().iter().enumerate() {
            group.entry((r.label, r.patient_id.as_str())).or_default().push(i);
        }
    }
    let positives_of = |i: usize| -> &Vec<usize> {
        let r = &m.records()[i];
        if same_patient_positive {
            &group[&(r.label, r.patient_id.as_str())]
        } else {
            &by_class[&r.label]
        }
    };
    let anchors: Vec<usize> = (0..m.len()).filter(|&i| positives_of(i).len() >= 2).collect();
    if anchors.is_empty() {
        return Err(Error::Constraint(
            "no patient has two samples of the same class for a same-patient positive".into(),
        ));
    }

    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let a = anchors[rng.below(anchors.len())];
        let pool = positives_of(a);
        let mut p = pool[rng.below(pool.len() - 1)];
        if p == a {
            // Skip the anchor itself: map it to the last pool entry.
            p = *pool.last().unwrap();
        }
        let label = m.records()[a].label;
        let negatives = m.len() - by_class[&label].len();
        let mut k = rng.below(negatives);
        let mut neg = 0;
        for (&c, members) in &by_class {
            if c == label {
                continue;
            }
            if k < members.len() {
                neg = members[k];
                break;
            }
            k -= members.len();
        }
        out.push(Triplet {
            anchor_id: m.records()[a].id.clone(),
            positive_id: m.records()[p].id.clone(),
            negative_id: m.records()[neg].id.clone(),
        });
    }
    Ok(out)
}

pub fn write_triplets<W: Write>(triplets: &[Triplet], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    if triplets.is_empty() {
        wtr.write_record(["anchor_id", "positive_id", "negative_id"])?;
    }
    for t in triplets {
        wtr.serialize(t)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_triplets<R: Read>(reader: R) -> Result<Vec<Triplet>> {
    let mut rdr = csv::Reader::from_reader(reader);
    rdr.deserialize().map(|t| t.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::SampleRecord;

    fn balanced(classes: usize, per_class: usize, patients: usize) -> Manifest {
        let records = (0..classes * per_class)
            .map(|i| SampleRecord {
                id: format!("s{i:04}"),
                path: format!("{i}.png"),
                label: i % classes,
                patient_id: format!("p{}", i % patients),
            })
            .collect();
        Manifest::new((0..classes).map(|c| format!("c{c}")).collect(), records).unwrap()
    }

    #[test]
    fn single_class_has_no_negative() {
        let m = balanced(1, 10, 2);
        assert!(matches!(sample_triplets(&m, 5, 1, false), Err(Error::Constraint(_))));
    }

    #[test]
    fn singleton_class_rejected() {
        let mut records = balanced(2, 4, 2).records().to_vec();
        records.push(SampleRecord {
            id: "lonely".into(),
            path: "x".into(),
            label: 2,
            patient_id: "p9".into(),
        });
        let m = Manifest::new(vec!["a".into(), "b".into(), "c".into()], records).unwrap();
        let err = sample_triplets(&m, 3, 1, false).unwrap_err();
        assert!(err.to_string().contains("`c`"));
    }

    #[test]
    fn six_hundred_valid_triplets() {
        let m = balanced(3, 200, 40);
        let ts = sample_triplets(&m, 600, 42, false).unwrap();
        assert_eq!(ts.len(), 600);
        for t in &ts {
            t.validate(&m).unwrap();
        }
        // Every class shows up as an anchor.
        let labels: std::collections::HashSet<usize> =
            ts.iter().map(|t| m.get(&t.anchor_id).unwrap().label).collect();
        assert_eq!(labels.len(), 3);
    }

    #[test]
    fn same_patient_positive() {
        let m = balanced(3, 60, 10);
        let ts = sample_triplets(&m, 300, 3, true).unwrap();
        for t in &ts {
            t.validate(&m).unwrap();
            assert_eq!(
                m.get(&t.anchor_id).unwrap().patient_id,
                m.get(&t.positive_id).unwrap().patient_id
            );
        }
    }

    #[test]
    fn same_patient_unsatisfiable() {
        // Every patient contributes one sample per class.
        let m = balanced(2, 5, 10);
        assert!(sample_triplets(&m, 1, 3, true).is_err());
    }

    #[test]
    fn deterministic_and_csv_round_trip() {
        let m = balanced(3, 10, 4);
        let a = sample_triplets(&m, 50, 8, false).unwrap();
        assert_eq!(a, sample_triplets(&m, 50, 8, false).unwrap());
        assert_ne!(a, sample_triplets(&m, 50, 9, false).unwrap());
        let mut buf = Vec::new();
        write_triplets(&a, &mut buf).unwrap();
        assert!(buf.starts_with(b"anchor_id,positive_id,negative_id\n"));
        assert_eq!(read_triplets(buf.as_slice()).unwrap(), a);
    }
}
