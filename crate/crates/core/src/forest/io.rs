//! Binary model format.
//!
//! ```text
//! "PDFOR1"                      6 bytes
//! version                       u16 LE (currently 1)
//! metadata length               u32 LE
//! metadata                      UTF-8 JSON (task, params, feature names,
//!                               schema hash, OOB statistics)
//! tree count                    u32 LE
//! per tree: node count          u32 LE
//!   per node: tag u8            0 = split, 1 = leaf
//!     split: feature u32, threshold f64, left u32, right u32
//!     leaf:  n u32, n x f64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ForestModel, ForestParams, Node, Task, Tree};
use crate::dataset::formats::{atomic_write, ByteReader};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 6] = b"PDFOR1";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    task: Task,
    n_features: usize,
    params: ForestParams,
    feature_names: Vec<String>,
    schema_hash: String,
    oob_raw_importance: Option<Vec<f64>>,
    oob_error: Option<f64>,
}

pub fn schema_hash(names: &[String]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub fn encode_model(m: &ForestModel) -> Result<Vec<u8>> {
    let meta = Metadata {
        task: m.task,
        n_features: m.n_features,
        params: m.params,
        feature_names: m.feature_names.clone(),
        schema_hash: schema_hash(&m.feature_names),
        oob_raw_importance: m.oob_raw_importance.clone(),
        oob_error: m.oob_error,
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(m.trees.len() as u32).to_le_bytes());
    for t in &m.trees {
        out.extend_from_slice(&(t.nodes.len() as u32).to_le_bytes());
        for n in &t.nodes {
            match n {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(0);
                    out.extend_from_slice(&feature.to_le_bytes());
                    out.extend_from_slice(&threshold.to_le_bytes());
                    out.extend_from_slice(&left.to_le_bytes());
                    out.extend_from_slice(&right.to_le_bytes());
                }
                Node::Leaf { values } => {
                    out.push(1);
                    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
                    for v in values {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ForestModel> {
    const FMT: &str = "PDFOR1 model";
    let mut r = ByteReader::new(bytes, FMT);
    if r.take(6)? != MODEL_MAGIC {
        return Err(Error::format(FMT, "bad magic"));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(FMT, format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let meta: Metadata = serde_json::from_slice(r.take(len)?)?;
    if meta.schema_hash != schema_hash(&meta.feature_names) {
        return Err(Error::format(FMT, "feature schema hash does not match feature names"));
    }
    if meta.feature_names.len() != meta.n_features {
        return Err(Error::format(FMT, "feature name count differs from n_features"));
    }
    let leaf_width = match meta.task {
        Task::Regression => 1,
        Task::Classification { n_classes } => n_classes,
    };
    let n_trees = r.u32()? as usize;
    let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
    for _ in 0..n_trees {
        let n_nodes = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
        for _ in 0..n_nodes {
            match r.u8()? {
                0 => {
                    let feature = r.u32()?;
                    let threshold = r.f64()?;
                    let left = r.u32()?;
                    let right = r.u32()?;
                    if feature as usize >= meta.n_features
                        || left as usize >= n_nodes
                        || right as usize >= n_nodes
                    {
                        return Err(Error::format(FMT, "split node references out of range"));
                    }
                    nodes.push(Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    });
                }
                1 => {
                    let n = r.u32()? as usize;
                    if n != leaf_width {
                        return Err(Error::format(FMT, format!("leaf has {n} values, expected {leaf_width}")));
                    }
                    let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                    nodes.push(Node::Leaf { values });
                }
                tag => return Err(Error::format(FMT, format!("unknown node tag {tag}"))),
            }
        }
        if nodes.is_empty() {
            return Err(Error::format(FMT, "tree without nodes"));
        }
        trees.push(Tree { nodes });
    }
    if !r.is_empty() {
        return Err(Error::format(FMT, "trailing bytes"));
    }
    Ok(ForestModel {
        task: meta.task,
        n_features: meta.n_features,
        params: meta.params,
        trees,
        feature_names: meta.feature_names,
        oob_raw_importance: meta.oob_raw_importance,
        oob_error: meta.oob_error,
    })
}

pub fn write_model(path: &Path, m: &ForestModel) -> Result<()> {
    atomic_write(path, &encode_model(m)?)
}

pub fn read_model(path: &Path) -> Result<ForestModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{train, FeatureMatrix, Targets};

    #[test]
    fn model_round_trip() {
        let x = FeatureMatrix::new(40, 2, (0..80).map(|i| ((i * 7) % 13) as f64).collect()).unwrap();
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let m = train(
            &x,
            &Targets::Classification {
                labels,
                n_classes: 2,
            },
            &ForestParams {
                n_trees: 5,
                min_samples_leaf: 1,
                ..Default::default()
            },
        )
        .unwrap()
        .with_feature_names(vec!["a".into(), "b".into()])
        .unwrap();
        let bytes = encode_model(&m).unwrap();
        assert_eq!(&bytes[..6], MODEL_MAGIC);
        assert_eq!(decode_model(&bytes).unwrap(), m);
    }

    #[test]
    fn rejects_corrupt_model() {
        assert!(decode_model(b"NOTAMODEL").is_err());
        let x = FeatureMatrix::new(10, 1, (0..10).map(f64::from).collect()).unwrap();
        let m = train(&x, &Targets::Regression((0..10).map(f64::from).collect()), &ForestParams {
            n_trees: 2,
            ..Default::default()
        })
        .unwrap();
        let bytes = encode_model(&m).unwrap();
        assert!(decode_model(&bytes[..bytes.len() - 3]).is_err());
    }
}
