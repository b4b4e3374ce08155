//! Checkpoint layout: a text manifest (model, layer specs, parameter
//! shapes, free-form metadata, blob hash) next to a flat blob of
//! little-endian `f64` parameter values in registry order.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Result, TensorError};
use crate::graph::ModelGraph;

const HEADER: &str = "# gazegest checkpoint v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: String,
    pub blob: Vec<u8>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn ck_err(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Serializes `graph`; `meta` pairs are recorded verbatim (values must be single-line).
    pub fn from_graph(graph: &ModelGraph, meta: &[(&str, String)]) -> Self {
        let mut blob = Vec::with_capacity(graph.count_params() * 8);
        for p in graph.parameters() {
            for v in p.value.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut m = String::new();
        m.push_str(HEADER);
        m.push('\n');
        m.push_str(&format!("model {}\n", graph.name()));
        m.push_str(&format!("input {} {}\n", graph.window(), graph.dims()));
        m.push_str(&format!("classes {}\n", graph.classes()));
        for (k, v) in meta {
            m.push_str(&format!("meta {k} {v}\n"));
        }
        for d in graph.layer_descriptions() {
            m.push_str(&format!("layer {d}\n"));
        }
        for p in graph.parameters() {
            let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            m.push_str(&format!("param {} {}\n", p.name, dims.join("x")));
        }
        m.push_str(&format!("params_total {}\n", graph.count_params()));
        m.push_str(&format!("blob_sha256 {}\n", sha256_hex(&blob)));
        Self { manifest: m, blob }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.manifest.lines().find_map(|l| {
            let rest = l.strip_prefix("meta ")?;
            let (k, v) = rest.split_once(' ')?;
            (k == key).then_some(v)
        })
    }

    fn field(&self, key: &str) -> Option<&str> {
        self.manifest
            .lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
    }

    pub fn write(&self, manifest_path: &Path, blob_path: &Path) -> std::io::Result<()> {
        fs::write(manifest_path, &self.manifest)?;
        fs::write(blob_path, &self.blob)
    }

    pub fn read(manifest_path: &Path, blob_path: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(manifest_path)
            .map_err(|e| ck_err(format!("{}: {e}", manifest_path.display())))?;
        let blob =
            fs::read(blob_path).map_err(|e| ck_err(format!("{}: {e}", blob_path.display())))?;
        if manifest.lines().next() != Some(HEADER) {
            return Err(ck_err("missing checkpoint header"));
        }
        Ok(Self { manifest, blob })
    }

    /// Copies the stored values into a graph with identical parameter layout.
    pub fn load_into(&self, graph: &mut ModelGraph) -> Result<()> {
        let expected = self
            .field("blob_sha256")
            .ok_or_else(|| ck_err("manifest lacks blob_sha256"))?;
        if sha256_hex(&self.blob) != expected {
            return Err(ck_err("blob hash does not match manifest"));
        }
        let stored: Vec<(&str, &str)> = self
            .manifest
            .lines()
            .filter_map(|l| l.strip_prefix("param ")?.split_once(' '))
            .collect();
        let params = graph.parameters();
        if stored.len() != params.len() {
            return Err(ck_err(format!(
                "checkpoint has {} parameters, graph has {}",
                stored.len(),
                params.len()
            )));
        }
        for ((name, dims), p) in stored.iter().zip(&params) {
            let shape: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
            if *name != p.name || *dims != shape.join("x") {
                return Err(ck_err(format!(
                    "parameter {name} {dims} does not match {} {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        if self.blob.len() != graph.count_params() * 8 {
            return Err(ck_err("blob length does not match parameter count"));
        }
        let mut values = self
            .blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        for p in graph.parameters_mut() {
            for v in p.value.data_mut() {
                *v = values.next().expect("length checked");
            }
        }
        Ok(())
    }
}
