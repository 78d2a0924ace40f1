//! Penultimate-layer embeddings and nearest-neighbour comparison of the
//! projected feature space against the learned one.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cohortgen::Participant;
use crate::error::{Error, Result};
use crate::models::{Estimator, ModelBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    /// Transform-projected input features.
    Original,
    /// Last hidden layer activations.
    Latent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub space: Space,
}

impl Embedding {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>, space: Space) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Data(format!("{} ids for {} embedding rows", ids.len(), rows.len())));
        }
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::Data("embedding rows differ in width".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("embedding contains non-finite values".into()));
        }
        Ok(Embedding { ids, rows, space })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }
}

/// Inference-mode activations of the last hidden layer of a dense bundle.
/// Works for the classifier too (its only hidden layer is the last one).
pub fn extract_latent(bundle: &ModelBundle, ids: &[String], layout_version: &str, raw: &[&[f64]]) -> Result<Embedding> {
    let Estimator::Dense(trained) = &bundle.estimator else {
        return Err(Error::Unsupported(format!("{} models have no hidden layers", bundle.estimator.name())));
    };
    let z = bundle.project(layout_version, raw)?;
    let flat: Vec<f64> = z.iter().flatten().copied().collect();
    let width = trained.net.latent_dim();
    let acts = trained.net.penultimate(&flat, raw.len());
    let rows = acts.chunks(width).map(<[f64]>::to_vec).collect();
    Embedding::new(ids.to_vec(), rows, Space::Latent)
}

/// Transform-projected features as the "original" comparison space.
pub fn project_original(bundle: &ModelBundle, ids: &[String], layout_version: &str, raw: &[&[f64]]) -> Result<Embedding> {
    Embedding::new(ids.to_vec(), bundle.project(layout_version, raw)?, Space::Original)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbours {
    pub query: String,
    pub ids: Vec<String>,
    pub distances: Vec<f64>,
    pub total_distance: f64,
}

/// Euclidean k nearest neighbours of `query_id`, excluding the query row
/// itself. Equal distances are ordered by ascending id.
pub fn knn_query(e: &Embedding, query_id: &str, k: usize) -> Result<Neighbours> {
    let q = e.position(query_id).ok_or_else(|| Error::Data(format!("unknown id {query_id}")))?;
    if k == 0 || k >= e.len() {
        return Err(Error::Data(format!("k = {k} must lie in 1..{}", e.len())));
    }
    let mut cands: Vec<(f64, usize)> =
        (0..e.len()).filter(|&i| i != q).map(|i| (euclidean(&e.rows[q], &e.rows[i]), i)).collect();
    let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering { a.0.total_cmp(&b.0).then_with(|| e.ids[a.1].cmp(&e.ids[b.1])) };
    if k < cands.len() {
        cands.select_nth_unstable_by(k - 1, order);
        cands.truncate(k);
    }
    cands.sort_by(order);
    let distances: Vec<f64> = cands.iter().map(|c| c.0).collect();
    Ok(Neighbours {
        query: query_id.to_string(),
        ids: cands.iter().map(|c| e.ids[c.1].clone()).collect(),
        total_distance: distances.iter().sum(),
        distances,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub id: String,
    pub age: f64,
    pub sex: String,
    pub bmi: f64,
    pub rhr_bpm: f64,
    pub vo2max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub query: CovariateRow,
    pub original: Neighbours,
    pub latent: Neighbours,
    pub original_neighbours: Vec<CovariateRow>,
    pub latent_neighbours: Vec<CovariateRow>,
}

/// Neighbours of each query in both spaces with the covariates of everyone
/// involved. Participants missing from `cohort` get NaN covariates.
pub fn subtype_case_study(
    original: &Embedding,
    latent: &Embedding,
    cohort: &[Participant],
    query_ids: &[String],
    k: usize,
) -> Result<Vec<CaseStudy>> {
    let mut a = original.ids.clone();
    let mut b = latent.ids.clone();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::Data("original and latent embeddings cover different ids".into()));
    }
    let by_id: HashMap<&str, &Participant> = cohort.iter().map(|p| (p.id.as_str(), p)).collect();
    let row = |id: &str| match by_id.get(id) {
        Some(p) => CovariateRow {
            id: id.to_string(),
            age: p.age,
            sex: p.sex.as_str().to_string(),
            bmi: p.bmi,
            rhr_bpm: p.rhr_bpm,
            vo2max: p.vo2max_current,
        },
        None => CovariateRow { id: id.to_string(), age: f64::NAN, sex: String::new(), bmi: f64::NAN, rhr_bpm: f64::NAN, vo2max: f64::NAN },
    };
    query_ids
        .iter()
        .map(|q| {
            let o = knn_query(original, q, k)?;
            let l = knn_query(latent, q, k)?;
            Ok(CaseStudy {
                query: row(q),
                original_neighbours: o.ids.iter().map(|i| row(i)).collect(),
                latent_neighbours: l.ids.iter().map(|i| row(i)).collect(),
                original: o,
                latent: l,
            })
        })
        .collect()
}

pub fn write_case_study_csv<W: Write>(w: W, studies: &[CaseStudy]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["query", "space", "rank", "id", "distance", "total_distance", "age", "sex", "bmi", "rhr_bpm", "vo2max"])?;
    for s in studies {
        let q = &s.query;
        wr.write_record([
            q.id.clone(),
            "query".into(),
            "0".into(),
            q.id.clone(),
            "0".into(),
            "".into(),
            q.age.to_string(),
            q.sex.clone(),
            q.bmi.to_string(),
            q.rhr_bpm.to_string(),
            q.vo2max.to_string(),
        ])?;
        for (space, nb, rows) in
            [("original", &s.original, &s.original_neighbours), ("latent", &s.latent, &s.latent_neighbours)]
        {
            for (rank, (r, d)) in rows.iter().zip(&nb.distances).enumerate() {
                wr.write_record([
                    q.id.clone(),
                    space.into(),
                    (rank + 1).to_string(),
                    r.id.clone(),
                    d.to_string(),
                    nb.total_distance.to_string(),
                    r.age.to_string(),
                    r.sex.clone(),
                    r.bmi.to_string(),
                    r.rhr_bpm.to_string(),
                    r.vo2max.to_string(),
                ])?;
            }
        }
    }
    wr.flush().map_err(|e| Error::io("<case study csv>", e))?;
    Ok(())
}

/// `id,a000..` for latent embeddings, `id,c000..` for projected features.
pub fn write_embedding_csv<W: Write>(w: W, e: &Embedding) -> Result<()> {
    let prefix = match e.space {
        Space::Latent => 'a',
        Space::Original => 'c',
    };
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string()];
    header.extend((0..e.width()).map(|i| format!("{prefix}{i:03}")));
    wr.write_record(&header)?;
    for (id, row) in e.ids.iter().zip(&e.rows) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(f64::to_string));
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|e| Error::io("<embedding csv>", e))?;
    Ok(())
}

pub fn read_embedding_csv<R: Read>(r: R) -> Result<Embedding> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let space = match headers.get(1).and_then(|h| h.chars().next()) {
        Some('c') => Space::Original,
        _ => Space::Latent,
    };
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        ids.push(rec.get(0).unwrap_or_default().to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| Error::Data(format!("embedding value {v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Embedding::new(ids, rows, space)
}
