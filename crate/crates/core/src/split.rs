//! Train/validation/test manifests: tight knots are held out for testing and
//! the rest is split by stratified holdout.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{parse_csv_rows, read_text};
use crate::rng::substream;
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Lighting {
    DL,
    SLA,
    SLS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tightness {
    Set,
    Loose,
    VeryLoose,
}

pub const LIGHTINGS: [Lighting; 3] = [Lighting::DL, Lighting::SLA, Lighting::SLS];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub path: String,
    pub class_code: String,
    pub lighting: Lighting,
    pub tightness: Tightness,
    pub instance: u32,
}

/// Columns `path,class_code,lighting,tightness,instance`.
pub fn parse_metadata_csv(text: &str, origin: &Path) -> Result<Vec<SampleMetadata>> {
    let rows: Vec<SampleMetadata> = parse_csv_rows(text, origin)?;
    if rows.is_empty() {
        return Err(Error::file(origin, "no metadata rows"));
    }
    Ok(rows)
}

pub fn read_metadata_csv(path: &Path) -> Result<Vec<SampleMetadata>> {
    parse_metadata_csv(&read_text(path)?, path)
}

pub fn validate_metadata(meta: &[SampleMetadata], tax: &Taxonomy) -> Result<()> {
    let mut paths = HashSet::new();
    for m in meta {
        if tax.index_of(&m.class_code).is_none() {
            return Err(Error::UnknownCode(m.class_code.clone()));
        }
        if m.instance < 1 {
            return Err(Error::InvalidArgument(format!("`{}` has instance 0", m.path)));
        }
        if !paths.insert(m.path.as_str()) {
            return Err(Error::InvalidArgument(format!("duplicate path `{}`", m.path)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

type Stratum = (String, Lighting, Tightness);

/// Test gets every `Set` sample. The other samples are grouped by
/// (class, lighting, tightness); the validation total `round(holdout * n)` is
/// apportioned over strata by largest remainder, with equal remainders
/// ordered by a seeded shuffle, and each stratum's members are drawn by a
/// seeded shuffle. Output lists keep input order.
pub fn build_split_manifest(
    meta: &[SampleMetadata],
    tax: &Taxonomy,
    holdout: f64,
    seed: u64,
) -> Result<SplitManifest> {
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(Error::InvalidArgument(format!("holdout must lie in (0, 1), got {holdout}")));
    }
    validate_metadata(meta, tax)?;

    let mut strata: BTreeMap<Stratum, Vec<usize>> = BTreeMap::new();
    let mut is_test = vec![false; meta.len()];
    for (i, m) in meta.iter().enumerate() {
        if m.tightness == Tightness::Set {
            is_test[i] = true;
        } else {
            strata
                .entry((m.class_code.clone(), m.lighting, m.tightness))
                .or_default()
                .push(i);
        }
    }
    warn_missing_strata(meta, &strata);

    let remaining: usize = strata.values().map(Vec::len).sum();
    let target = (holdout * remaining as f64).round() as usize;
    let quotas: Vec<f64> = strata.values().map(|v| holdout * v.len() as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();

    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.shuffle(&mut substream(seed, u64::MAX));
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    for &s in order.iter().take(target.saturating_sub(assigned)) {
        counts[s] += 1;
    }

    let mut is_val = vec![false; meta.len()];
    for (s, members) in strata.values().enumerate() {
        let mut members = members.clone();
        members.shuffle(&mut substream(seed, s as u64));
        for &i in members.iter().take(counts[s].min(members.len())) {
            is_val[i] = true;
        }
    }

    let mut manifest = SplitManifest { train: vec![], val: vec![], test: vec![], seed };
    for (i, m) in meta.iter().enumerate() {
        let bucket = if is_test[i] {
            &mut manifest.test
        } else if is_val[i] {
            &mut manifest.val
        } else {
            &mut manifest.train
        };
        bucket.push(m.path.clone());
    }
    Ok(manifest)
}

fn warn_missing_strata(meta: &[SampleMetadata], strata: &BTreeMap<Stratum, Vec<usize>>) {
    let classes: std::collections::BTreeSet<&str> = meta.iter().map(|m| m.class_code.as_str()).collect();
    for class in classes {
        for lighting in LIGHTINGS {
            for tightness in [Tightness::Loose, Tightness::VeryLoose] {
                if !strata.contains_key(&(class.to_string(), lighting, tightness)) {
                    log::warn!("empty stratum ({class}, {lighting:?}, {tightness:?})");
                }
            }
        }
    }
}

/// Full factorial metadata: every class x lighting x tightness cell holds
/// `instances` samples.
pub fn factorial_metadata(tax: &Taxonomy, instances: u32) -> Vec<SampleMetadata> {
    let mut out = Vec::new();
    for class in tax.classes() {
        for lighting in LIGHTINGS {
            for tightness in [Tightness::Set, Tightness::Loose, Tightness::VeryLoose] {
                for instance in 1..=instances {
                    out.push(SampleMetadata {
                        path: format!("{}/{lighting:?}_{tightness:?}_{instance:02}.jpg", class.code),
                        class_code: class.code.clone(),
                        lighting,
                        tightness,
                        instance,
                    });
                }
            }
        }
    }
    out
}
