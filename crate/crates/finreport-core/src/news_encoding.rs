//! Pooled semantic-role and dependency-edge features for news items, plus
//! a deterministic hashed bag-of-tokens fallback encoder so the pipeline
//! runs without any pretrained NLP stack.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pooled word embeddings for the verb, proto-agent, and proto-patient
/// roles of one news item. All three share the same dimension `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleEmbeddings {
    #[serde(rename = "e_v")]
    pub verb: Vec<f64>,
    #[serde(rename = "e_a0")]
    pub agent: Vec<f64>,
    #[serde(rename = "e_a1")]
    pub patient: Vec<f64>,
}

impl RoleEmbeddings {
    pub fn zeros(d: usize) -> Self {
        Self {
            verb: vec![0.0; d],
            agent: vec![0.0; d],
            patient: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.verb.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.verb.len();
        if self.agent.len() != d || self.patient.len() != d {
            return Err(Error::Dimension(format!(
                "role embeddings must share one dimension, got {}/{}/{}",
                d,
                self.agent.len(),
                self.patient.len()
            )));
        }
        for v in self.verb.iter().chain(&self.agent).chain(&self.patient) {
            if !v.is_finite() {
                return Err(Error::Validation("non-finite role embedding entry".into()));
            }
        }
        Ok(())
    }
}

/// Edge features between role pairs in the semantic dependency graph,
/// all of dimension `d_e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeFeatures {
    #[serde(rename = "g_va0")]
    pub verb_agent: Vec<f64>,
    #[serde(rename = "g_va1")]
    pub verb_patient: Vec<f64>,
    #[serde(rename = "g_a0a1")]
    pub agent_patient: Vec<f64>,
}

impl EdgeFeatures {
    pub fn zeros(d_e: usize) -> Self {
        Self {
            verb_agent: vec![0.0; d_e],
            verb_patient: vec![0.0; d_e],
            agent_patient: vec![0.0; d_e],
        }
    }

    pub fn dim(&self) -> usize {
        self.verb_agent.len()
    }
}

/// Feature vector of one news item: three pooled role embeddings plus
/// three edge features. Flattened length is `3d + 3d_e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsFeatureVector {
    #[serde(flatten)]
    pub roles: RoleEmbeddings,
    #[serde(flatten)]
    pub edges: EdgeFeatures,
}

impl NewsFeatureVector {
    pub fn zeros(d: usize, d_e: usize) -> Self {
        Self {
            roles: RoleEmbeddings::zeros(d),
            edges: EdgeFeatures::zeros(d_e),
        }
    }

    pub fn role_dim(&self) -> usize {
        self.roles.dim()
    }

    pub fn edge_dim(&self) -> usize {
        self.edges.dim()
    }

    pub fn flat_len(&self) -> usize {
        3 * self.role_dim() + 3 * self.edge_dim()
    }

    /// Row-block order: e_V, e_A0, e_A1, G_VA0, G_VA1, G_A0A1.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        out.extend_from_slice(&self.roles.verb);
        out.extend_from_slice(&self.roles.agent);
        out.extend_from_slice(&self.roles.patient);
        out.extend_from_slice(&self.edges.verb_agent);
        out.extend_from_slice(&self.edges.verb_patient);
        out.extend_from_slice(&self.edges.agent_patient);
        out
    }

    pub fn from_flat(d: usize, d_e: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 3 * d + 3 * d_e {
            return Err(Error::Dimension(format!(
                "expected flat length {}, got {}",
                3 * d + 3 * d_e,
                flat.len()
            )));
        }
        let seg = |a: usize, b: usize| flat[a..b].to_vec();
        Ok(Self {
            roles: RoleEmbeddings {
                verb: seg(0, d),
                agent: seg(d, 2 * d),
                patient: seg(2 * d, 3 * d),
            },
            edges: EdgeFeatures {
                verb_agent: seg(3 * d, 3 * d + d_e),
                verb_patient: seg(3 * d + d_e, 3 * d + 2 * d_e),
                agent_patient: seg(3 * d + 2 * d_e, 3 * d + 3 * d_e),
            },
        })
    }
}

/// Element-wise mean across SRL frames, per role slot.
pub fn pool_roles(frames: &[RoleEmbeddings]) -> Result<RoleEmbeddings> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Validation("no SRL frames to pool".into()))?;
    first.validate()?;
    let d = first.dim();
    let mut pooled = RoleEmbeddings::zeros(d);
    for (i, frame) in frames.iter().enumerate() {
        frame.validate()?;
        if frame.dim() != d {
            return Err(Error::Dimension(format!(
                "frame {i} has dimension {}, expected {d}",
                frame.dim()
            )));
        }
        for j in 0..d {
            pooled.verb[j] += frame.verb[j];
            pooled.agent[j] += frame.agent[j];
            pooled.patient[j] += frame.patient[j];
        }
    }
    let n = frames.len() as f64;
    for j in 0..d {
        pooled.verb[j] /= n;
        pooled.agent[j] /= n;
        pooled.patient[j] /= n;
    }
    Ok(pooled)
}

// FNV-1a, kept local so hashes are stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn hash_slot(tokens: &[String], slot: u8, dim: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if tokens.is_empty() {
        return out;
    }
    for token in tokens {
        let mut key = Vec::with_capacity(token.len() + 9);
        key.push(slot);
        key.extend_from_slice(&seed.to_le_bytes());
        key.extend_from_slice(token.as_bytes());
        let h = fnv1a(&key);
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        out[bucket] += sign;
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut out {
            *v /= norm;
        }
    }
    out
}

/// Deterministic hashed bag-of-tokens encoder. Each of the six slots is
/// hashed independently and L2-normalized; an empty headline yields an
/// all-zero vector. Total function: same inputs, same bytes out.
pub fn fallback_hash_encoder(headline: &str, d: usize, d_e: usize, seed: u64) -> NewsFeatureVector {
    let tokens = tokenize(headline);
    NewsFeatureVector {
        roles: RoleEmbeddings {
            verb: hash_slot(&tokens, 0, d, seed),
            agent: hash_slot(&tokens, 1, d, seed),
            patient: hash_slot(&tokens, 2, d, seed),
        },
        edges: EdgeFeatures {
            verb_agent: hash_slot(&tokens, 3, d_e, seed),
            verb_patient: hash_slot(&tokens, 4, d_e, seed),
            agent_patient: hash_slot(&tokens, 5, d_e, seed),
        },
    }
}

/// Stack flattened items as columns: shape (3d + 3d_e) x N.
pub fn build_news_matrix(items: &[NewsFeatureVector]) -> Result<DMatrix<f64>> {
    let (d, d_e) = match items.first() {
        Some(first) => (first.role_dim(), first.edge_dim()),
        None => return Ok(DMatrix::zeros(0, 0)),
    };
    let rows = 3 * d + 3 * d_e;
    let mut matrix = DMatrix::zeros(rows, items.len());
    for (n, item) in items.iter().enumerate() {
        if item.role_dim() != d || item.edge_dim() != d_e {
            return Err(Error::Dimension(format!(
                "item {n} has dims (d={}, d_e={}), expected (d={d}, d_e={d_e})",
                item.role_dim(),
                item.edge_dim()
            )));
        }
        for (r, v) in item.flatten().into_iter().enumerate() {
            matrix[(r, n)] = v;
        }
    }
    Ok(matrix)
}

#[derive(Serialize, Deserialize)]
struct StoredEmbedding {
    id: String,
    #[serde(flatten)]
    vector: NewsFeatureVector,
}

/// Write an embeddings store as JSON lines, sorted by id.
pub fn save_embeddings(store: &BTreeMap<String, NewsFeatureVector>, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    for (id, vector) in store {
        let rec = StoredEmbedding {
            id: id.clone(),
            vector: vector.clone(),
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::Numeric(format!("embedding serialization failed: {e}")))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

pub fn load_embeddings(path: &Path) -> Result<BTreeMap<String, NewsFeatureVector>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path)?;
    let mut store = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StoredEmbedding = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: display.clone(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        rec.vector.roles.validate()?;
        store.insert(rec.id, rec.vector);
    }
    Ok(store)
}

/// Ids referenced by the panel but absent from the store. Non-empty
/// results are also logged as a warning.
pub fn missing_ids<'a, I: IntoIterator<Item = &'a str>>(
    referenced: I,
    store: &BTreeMap<String, NewsFeatureVector>,
) -> Vec<String> {
    let missing: Vec<String> = referenced
        .into_iter()
        .filter(|id| !store.contains_key(*id))
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        log::warn!("embedding ids missing from store: {missing:?}");
    }
    missing
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_single_frame_is_identity() {
        let frame = RoleEmbeddings {
            verb: vec![1.0, 2.0],
            agent: vec![3.0, 4.0],
            patient: vec![5.0, 6.0],
        };
        assert_eq!(pool_roles(&[frame.clone()]).unwrap(), frame);
    }

    #[test]
    fn pool_two_frames_means_elementwise() {
        let a = RoleEmbeddings {
            verb: vec![1.0, 0.0],
            agent: vec![0.0, 0.0],
            patient: vec![2.0, 2.0],
        };
        let b = RoleEmbeddings {
            verb: vec![0.0, 1.0],
            agent: vec![0.0, 0.0],
            patient: vec![0.0, 0.0],
        };
        let pooled = pool_roles(&[a, b]).unwrap();
        assert_eq!(pooled.verb, vec![0.5, 0.5]);
        assert_eq!(pooled.patient, vec![1.0, 1.0]);
    }

    #[test]
    fn pool_identical_frames_idempotent() {
        let frame = RoleEmbeddings {
            verb: vec![0.25, -1.5],
            agent: vec![0.0, 4.0],
            patient: vec![1.0, 1.0],
        };
        let pooled = pool_roles(&[frame.clone(), frame.clone(), frame.clone()]).unwrap();
        for (a, b) in pooled.verb.iter().zip(&frame.verb) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_empty_errors() {
        assert!(pool_roles(&[]).is_err());
    }

    #[test]
    fn pool_dimension_mismatch_errors() {
        let a = RoleEmbeddings::zeros(2);
        let b = RoleEmbeddings::zeros(3);
        assert!(pool_roles(&[a, b]).is_err());
    }

    #[test]
    fn encoder_deterministic() {
        let a = fallback_hash_encoder("Acme beats earnings estimates", 64, 16, 42);
        let b = fallback_hash_encoder("Acme beats earnings estimates", 64, 16, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_empty_headline_is_zero() {
        let v = fallback_hash_encoder("", 8, 4, 1);
        assert!(v.flatten().iter().all(|x| *x == 0.0));
        let v2 = fallback_hash_encoder("  ...  ", 8, 4, 1);
        assert!(v2.flatten().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn encoder_distinct_headlines_differ() {
        let a = fallback_hash_encoder("Acme profits surge on record demand", 64, 16, 42);
        let b = fallback_hash_encoder("Acme shares plunge after recall", 64, 16, 42);
        assert_ne!(a.flatten(), b.flatten());
    }

    #[test]
    fn encoder_slots_unit_norm() {
        let v = fallback_hash_encoder("one two three four", 32, 8, 9);
        for slot in [
            &v.roles.verb,
            &v.roles.agent,
            &v.roles.patient,
            &v.edges.verb_agent,
            &v.edges.verb_patient,
            &v.edges.agent_patient,
        ] {
            let norm = slot.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9, "norm {norm}");
        }
    }

    #[test]
    fn matrix_single_column_equals_flatten() {
        let item = fallback_hash_encoder("headline text", 4, 2, 0);
        let m = build_news_matrix(std::slice::from_ref(&item)).unwrap();
        assert_eq!(m.nrows(), 3 * 4 + 3 * 2);
        assert_eq!(m.ncols(), 1);
        assert_eq!(m.column(0).iter().copied().collect::<Vec<_>>(), item.flatten());
    }

    #[test]
    fn matrix_empty_input() {
        let m = build_news_matrix(&[]).unwrap();
        assert_eq!(m.ncols(), 0);
    }

    #[test]
    fn matrix_permutation_permutes_columns() {
        let a = fallback_hash_encoder("alpha", 4, 2, 0);
        let b = fallback_hash_encoder("beta", 4, 2, 0);
        let m1 = build_news_matrix(&[a.clone(), b.clone()]).unwrap();
        let m2 = build_news_matrix(&[b, a]).unwrap();
        assert_eq!(m1.column(0), m2.column(1));
        assert_eq!(m1.column(1), m2.column(0));
    }

    #[test]
    fn matrix_dimension_mismatch_names_index() {
        let a = fallback_hash_encoder("alpha", 4, 2, 0);
        let b = fallback_hash_encoder("beta", 5, 2, 0);
        let err = build_news_matrix(&[a, b]).unwrap_err();
        assert!(err.to_string().contains("item 1"), "{err}");
    }

    #[test]
    fn store_round_trip_and_missing_ids() {
        let mut store = BTreeMap::new();
        store.insert("n1".to_string(), fallback_hash_encoder("one", 4, 2, 0));
        store.insert("n2".to_string(), fallback_hash_encoder("two", 4, 2, 0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.jsonl");
        save_embeddings(&store, &path).unwrap();
        let loaded = load_embeddings(&path).unwrap();
        assert_eq!(store, loaded);
        assert_eq!(loaded.len(), 2);
        let missing = missing_ids(["n1", "n3"], &loaded);
        assert_eq!(missing, vec!["n3".to_string()]);
    }

    #[test]
    fn store_corrupt_record_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embeddings.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"e_v\":[0.0],\"e_a0\":[0.0],\"e_a1\":[0.0],\"g_va0\":[],\"g_va1\":[],\"g_a0a1\":[]}\nnot json\n").unwrap();
        match load_embeddings(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn flatten_round_trip() {
        let v = fallback_hash_encoder("gamma delta", 6, 3, 3);
        let flat = v.flatten();
        let back = NewsFeatureVector::from_flat(6, 3, &flat).unwrap();
        assert_eq!(v, back);
    }
}
