//! Retrieval metrics: mean average precision and the UKB top-4 score.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::retrieval::RankedList;

/// Whether a query image counts as a result for itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// The query is removed from its own ranking (Holidays, Oxford, Paris).
    #[default]
    ExcludeQuery,
    /// The query stays in the database and is relevant to itself (UKB).
    IncludeQuery,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub protocol: Protocol,
    pub relevant: BTreeMap<String, BTreeSet<String>>,
    pub junk: BTreeMap<String, BTreeSet<String>>,
}

impl GroundTruth {
    pub fn new(protocol: Protocol) -> Self {
        Self {
            protocol,
            ..Default::default()
        }
    }

    pub fn insert<I, S>(&mut self, query_id: impl Into<String>, relevant: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.relevant.insert(
            query_id.into(),
            relevant.into_iter().map(Into::into).collect(),
        );
    }

    /// Relevant images of each query are the other entries of its class
    /// (plus the query itself under `IncludeQuery`).
    pub fn from_manifest(m: &DatasetManifest) -> Result<Self> {
        let mut by_class: HashMap<&str, Vec<&str>> = HashMap::new();
        for e in &m.entries {
            by_class.entry(&e.class_id).or_default().push(&e.image_id);
        }
        let mut gt = Self::new(m.protocol);
        for q in m.queries() {
            let rel: BTreeSet<String> = by_class[q.class_id.as_str()]
                .iter()
                .filter(|&&id| m.protocol == Protocol::IncludeQuery || id != q.image_id)
                .map(|&id| id.to_owned())
                .collect();
            if rel.is_empty() {
                return Err(Error::EmptyRelevant(q.image_id.clone()));
            }
            gt.relevant.insert(q.image_id.clone(), rel);
            if let Some(j) = m.junk.get(&q.image_id) {
                gt.junk
                    .insert(q.image_id.clone(), j.iter().cloned().collect());
            }
        }
        Ok(gt)
    }
}

/// Discrete average precision: mean of precision@r over the ranks of relevant
/// hits, divided by the total number of relevant images. Junk hits are dropped
/// before ranks are counted.
pub fn average_precision(
    ranked: &RankedList,
    relevant: &BTreeSet<String>,
    junk: Option<&BTreeSet<String>>,
) -> Result<f64> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevant(ranked.query_id.clone()));
    }
    let mut rank = 0usize;
    let mut found = 0usize;
    let mut sum = 0.0;
    for hit in &ranked.hits {
        if junk.is_some_and(|j| j.contains(&hit.image_id)) {
            continue;
        }
        rank += 1;
        if relevant.contains(&hit.image_id) {
            found += 1;
            sum += found as f64 / rank as f64;
        }
    }
    if rank == 0 {
        return Err(Error::EmptyRanking(ranked.query_id.clone()));
    }
    Ok(sum / relevant.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub value: f64,
    pub per_query: BTreeMap<String, f64>,
}

fn gt_for<'a>(gt: &'a GroundTruth, query_id: &str) -> Result<&'a BTreeSet<String>> {
    gt.relevant
        .get(query_id)
        .ok_or_else(|| Error::MissingGroundTruth(query_id.to_owned()))
}

/// Unweighted mean of per-query AP. The mean is taken in sorted query-id order.
pub fn mean_ap(all: &[RankedList], gt: &GroundTruth) -> Result<MetricReport> {
    let mut per_query = BTreeMap::new();
    for r in all {
        let rel = gt_for(gt, &r.query_id)?;
        per_query.insert(
            r.query_id.clone(),
            average_precision(r, rel, gt.junk.get(&r.query_id))?,
        );
    }
    Ok(MetricReport {
        value: mean(&per_query),
        per_query,
    })
}

/// Mean number of relevant images among the first four results.
pub fn ukb_score(all: &[RankedList], gt: &GroundTruth) -> Result<MetricReport> {
    if gt.protocol != Protocol::IncludeQuery {
        return Err(Error::InvalidConfig(
            "ukb score requires the include_query protocol".into(),
        ));
    }
    let mut per_query = BTreeMap::new();
    for r in all {
        let rel = gt_for(gt, &r.query_id)?;
        if r.hits.len() < 4 {
            return Err(Error::TooFewResults {
                query_id: r.query_id.clone(),
                found: r.hits.len(),
            });
        }
        let count = r.hits[..4]
            .iter()
            .filter(|h| rel.contains(&h.image_id))
            .count();
        per_query.insert(r.query_id.clone(), count as f64);
    }
    Ok(MetricReport {
        value: mean(&per_query),
        per_query,
    })
}

fn mean(per_query: &BTreeMap<String, f64>) -> f64 {
    if per_query.is_empty() {
        return 0.0;
    }
    per_query.values().sum::<f64>() / per_query.len() as f64
}
