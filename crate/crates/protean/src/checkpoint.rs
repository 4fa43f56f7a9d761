//! Binary checkpoints of federation state.
//!
//! Layout: the 8-byte magic, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then every scalar as
//! little-endian `f64` in header order: global weights, global prototypes,
//! and per participant its local weights, local prototypes and uploaded
//! prototypes.

use std::path::Path;

use protean_core::fed::{RoundState, StrategyKind};
use protean_core::nn::ModelParams;
use protean_core::prototype::PrototypeSet;
use serde::{Deserialize, Serialize};

use crate::records::Cell;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PROTEAN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    strategy: StrategyKind,
    cell: Cell,
    /// Rounds completed; 0 is the initial state.
    round: usize,
    /// Model layout with empty `weights`.
    model: ModelParams,
    param_count: usize,
    prototype_dim: usize,
    global_support: Vec<usize>,
    local_support: Vec<Vec<usize>>,
    uploaded_support: Vec<Vec<usize>>,
}

/// Everything a participant or the server holds after a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub strategy: StrategyKind,
    pub cell: Cell,
    pub round: usize,
    pub global: ModelParams,
    pub global_prototypes: PrototypeSet,
    pub locals: Vec<ModelParams>,
    pub local_prototypes: Vec<PrototypeSet>,
    pub uploaded_prototypes: Vec<PrototypeSet>,
}

impl Checkpoint {
    pub fn from_state(strategy: StrategyKind, cell: Cell, state: &RoundState) -> Self {
        Checkpoint {
            strategy,
            cell,
            round: state.round,
            global: state.global.clone(),
            global_prototypes: state.global_prototypes.clone(),
            locals: state.locals.clone(),
            local_prototypes: state.local_prototypes.clone(),
            uploaded_prototypes: state.uploaded_prototypes.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            strategy: self.strategy,
            cell: self.cell,
            round: self.round,
            model: ModelParams {
                weights: Vec::new(),
                ..self.global.clone()
            },
            param_count: self.global.len(),
            prototype_dim: self.global_prototypes.dim(),
            global_support: self.global_prototypes.support().to_vec(),
            local_support: self.local_prototypes.iter().map(|p| p.support().to_vec()).collect(),
            uploaded_support: self.uploaded_prototypes.iter().map(|p| p.support().to_vec()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |values: &[f64]| {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        put(&self.global.weights);
        put(self.global_prototypes.as_matrix());
        for i in 0..self.locals.len() {
            put(&self.locals[i].weights);
            put(self.local_prototypes[i].as_matrix());
            put(self.uploaded_prototypes[i].as_matrix());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: &str| Error::format(path, message.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..header_len]).map_err(|e| bad(&format!("header: {e}")))?;
        let payload = &body[header_len..];
        if payload.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of scalars"));
        }
        let mut scalars = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = scalars.by_ref().take(n).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(bad("truncated payload"))
            }
        };
        let d = header.prototype_dim;
        let model = |weights: Vec<f64>| ModelParams {
            weights,
            ..header.model.clone()
        };
        let protos = |vectors: Vec<f64>, support: &[usize]| PrototypeSet::from_parts(d, vectors, support.to_vec());
        let global = model(take(header.param_count)?);
        let global_prototypes = protos(take(d * header.global_support.len())?, &header.global_support)?;
        let m = header.local_support.len();
        if header.uploaded_support.len() != m {
            return Err(bad("participant count differs between sections"));
        }
        let mut locals = Vec::with_capacity(m);
        let mut local_prototypes = Vec::with_capacity(m);
        let mut uploaded_prototypes = Vec::with_capacity(m);
        for i in 0..m {
            locals.push(model(take(header.param_count)?));
            local_prototypes.push(protos(take(d * header.local_support[i].len())?, &header.local_support[i])?);
            uploaded_prototypes.push(protos(take(d * header.uploaded_support[i].len())?, &header.uploaded_support[i])?);
        }
        if scalars.next().is_some() {
            return Err(bad("trailing data after payload"));
        }
        Ok(Checkpoint {
            strategy: header.strategy,
            cell: header.cell,
            round: header.round,
            global,
            global_prototypes,
            locals,
            local_prototypes,
            uploaded_prototypes,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }
}

/// JSON export of a prototype set: `null` rows for absent classes.
pub fn prototypes_json(class_names: &[String], protos: &PrototypeSet) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = (0..protos.num_classes())
        .map(|j| {
            serde_json::json!({
                "class": class_names.get(j),
                "support": protos.support()[j],
                "prototype": protos.get(j),
            })
        })
        .collect();
    serde_json::json!({ "dim": protos.dim(), "classes": rows })
}
