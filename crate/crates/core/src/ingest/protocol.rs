use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::{Label, SampleRecord};
use crate::error::{PadError, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolName {
    Known,
    UnknownMaterial,
    UnknownSensor,
    CrossDatabase,
}

fn half() -> f64 {
    0.5
}

/// Which samples go to training and which to testing.
///
/// For the hold-out protocols `held_out` lists the attribute values (attack
/// materials, sensors or datasets) reserved for testing. `train`, when given,
/// restricts training to those values; otherwise every other value trains.
/// Values are compared case-insensitively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolSpec {
    Known {
        #[serde(default = "half")]
        test_fraction: f64,
    },
    UnknownMaterial {
        held_out: Vec<String>,
        #[serde(default)]
        train: Option<Vec<String>>,
        #[serde(default = "half")]
        bonafide_test_fraction: f64,
    },
    UnknownSensor {
        held_out: Vec<String>,
        #[serde(default)]
        train: Option<Vec<String>>,
    },
    CrossDatabase {
        held_out: Vec<String>,
        #[serde(default)]
        train: Option<Vec<String>>,
    },
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        ProtocolSpec::Known { test_fraction: 0.5 }
    }
}

impl ProtocolSpec {
    pub fn name(&self) -> ProtocolName {
        match self {
            ProtocolSpec::Known { .. } => ProtocolName::Known,
            ProtocolSpec::UnknownMaterial { .. } => ProtocolName::UnknownMaterial,
            ProtocolSpec::UnknownSensor { .. } => ProtocolName::UnknownSensor,
            ProtocolSpec::CrossDatabase { .. } => ProtocolName::CrossDatabase,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSplit {
    pub name: ProtocolName,
    pub train: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
    /// Manifest row of each training record.
    pub train_rows: Vec<usize>,
    /// Manifest row of each test record.
    pub test_rows: Vec<usize>,
}

impl ProtocolSplit {
    pub fn attack_materials(records: &[SampleRecord]) -> BTreeSet<String> {
        records
            .iter()
            .filter(|r| r.label == Label::Attack)
            .map(|r| norm(&r.material))
            .collect()
    }
}

fn norm(s: &str) -> String {
    s.trim().to_lowercase()
}

fn value_set(values: &[String]) -> BTreeSet<String> {
    values.iter().map(|v| norm(v)).collect()
}

#[derive(Clone, Copy)]
enum Side {
    Train,
    Test,
    Drop,
}

/// Partitions manifest rows according to `spec`. Stratified random choices
/// use `seed`; the result is deterministic for a given manifest order.
pub fn build_split(records: &[SampleRecord], spec: &ProtocolSpec, seed: u64) -> Result<ProtocolSplit> {
    let sides: Vec<Side> = match spec {
        ProtocolSpec::Known { test_fraction } => {
            check_fraction(*test_fraction)?;
            let strata = records.iter().map(|r| (r.label, norm(&r.material))).collect::<Vec<_>>();
            stratified_sides(&strata, *test_fraction, seed)
        }
        ProtocolSpec::UnknownMaterial { held_out, train, bonafide_test_fraction } => {
            check_fraction(*bonafide_test_fraction)?;
            let held = value_set(held_out);
            let allowed = train.as_deref().map(value_set);
            check_disjoint("material", &held, allowed.as_ref())?;
            let strata = records
                .iter()
                .map(|r| (r.label, String::new()))
                .collect::<Vec<_>>();
            let bona = stratified_sides(&strata, *bonafide_test_fraction, seed);
            records
                .iter()
                .zip(bona)
                .map(|(r, bona_side)| match r.label {
                    Label::BonaFide => bona_side,
                    Label::Attack => route(&r.material, &held, allowed.as_ref()),
                })
                .collect()
        }
        ProtocolSpec::UnknownSensor { held_out, train } => {
            let held = value_set(held_out);
            let allowed = train.as_deref().map(value_set);
            check_disjoint("sensor", &held, allowed.as_ref())?;
            records.iter().map(|r| route(&r.sensor, &held, allowed.as_ref())).collect()
        }
        ProtocolSpec::CrossDatabase { held_out, train } => {
            let held = value_set(held_out);
            let allowed = train.as_deref().map(value_set);
            check_disjoint("dataset", &held, allowed.as_ref())?;
            records.iter().map(|r| route(&r.dataset, &held, allowed.as_ref())).collect()
        }
    };

    let mut split = ProtocolSplit {
        name: spec.name(),
        train: Vec::new(),
        test: Vec::new(),
        train_rows: Vec::new(),
        test_rows: Vec::new(),
    };
    for (row, (rec, side)) in records.iter().zip(sides).enumerate() {
        match side {
            Side::Train => {
                split.train.push(rec.clone());
                split.train_rows.push(row);
            }
            Side::Test => {
                split.test.push(rec.clone());
                split.test_rows.push(row);
            }
            Side::Drop => {}
        }
    }
    for (role, set) in [("train", &split.train), ("test", &split.test)] {
        for label in [Label::BonaFide, Label::Attack] {
            if !set.iter().any(|r| r.label == label) {
                return Err(PadError::Protocol(format!("empty {role} class: {label}")));
            }
        }
    }
    Ok(split)
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(PadError::InvalidInput(format!("split fraction {f} must lie in (0, 1)")))
    }
}

fn check_disjoint(what: &str, held: &BTreeSet<String>, train: Option<&BTreeSet<String>>) -> Result<()> {
    if held.is_empty() {
        return Err(PadError::Protocol(format!("no held-out {what} configured")));
    }
    if let Some(common) = train.and_then(|t| t.intersection(held).next()) {
        return Err(PadError::Protocol(format!(
            "{what} `{common}` is both held out and used for training"
        )));
    }
    Ok(())
}

fn route(value: &str, held: &BTreeSet<String>, train: Option<&BTreeSet<String>>) -> Side {
    let v = norm(value);
    if held.contains(&v) {
        Side::Test
    } else if train.map_or(true, |t| t.contains(&v)) {
        Side::Train
    } else {
        Side::Drop
    }
}

/// Within every stratum, sends `round(n * fraction)` randomly chosen members
/// to the test side and the rest to training.
fn stratified_sides<K: Ord + Clone>(strata: &[K], fraction: f64, seed_value: u64) -> Vec<Side> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, key) in strata.iter().enumerate() {
        groups.entry(key.clone()).or_default().push(i);
    }
    let mut rng = seed::rng(seed_value);
    let mut sides = vec![Side::Train; strata.len()];
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * fraction).round() as usize;
        for &i in &members[..n_test] {
            sides[i] = Side::Test;
        }
    }
    sides
}

/// Splits indices `0..labels.len()` into `(kept, held)` with a per-label
/// stratified random fraction held out; both lists keep ascending order.
pub fn stratified_holdout(labels: &[Label], fraction: f64, seed_value: u64) -> (Vec<usize>, Vec<usize>) {
    let sides = stratified_sides(labels, fraction, seed_value);
    let mut kept = Vec::new();
    let mut held = Vec::new();
    for (i, s) in sides.into_iter().enumerate() {
        match s {
            Side::Test => held.push(i),
            _ => kept.push(i),
        }
    }
    (kept, held)
}
