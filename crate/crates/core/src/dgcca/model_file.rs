//! Binary container for trained models.
//!
//! Layout: magic `PSRM`, u16 version, u32 header length, a JSON header, then
//! the f64 little-endian payload of every tensor listed in the header, in
//! header order. Matrices are stored column-major.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::network::{BlockLayout, ViewNetwork};
use super::train::{DgccaTrainConfig, TrainedDgcca};
use crate::error::{Error, Result};
use crate::gcca::GccaSolution;
use crate::layer_agg::LayerWeights;

pub const MODEL_MAGIC: [u8; 4] = *b"PSRM";
pub const MODEL_VERSION: u16 = 1;

/// A trained model plus the layer weights used to build any stacked view.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: TrainedDgcca,
    /// `(view name, weights)` for views aggregated from layer stacks.
    pub layer_weights: Vec<(String, LayerWeights)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    view_names: Vec<String>,
    layout: BlockLayout,
    config: DgccaTrainConfig,
    layer_weights: Vec<(String, LayerWeights)>,
    tensors: Vec<TensorEntry>,
}

#[derive(Default)]
struct Payload {
    entries: Vec<TensorEntry>,
    data: Vec<f64>,
}

impl Payload {
    fn push(&mut self, name: String, shape: Vec<usize>, values: &[f64]) {
        self.entries.push(TensorEntry { name, shape });
        self.data.extend_from_slice(values);
    }

    fn matrix(&mut self, name: String, m: &DMatrix<f64>) {
        self.push(name, vec![m.nrows(), m.ncols()], m.as_slice());
    }

    fn vector(&mut self, name: String, v: &[f64]) {
        self.push(name, vec![v.len()], v);
    }
}

struct Reader<'a> {
    entries: std::slice::Iter<'a, TensorEntry>,
    data: &'a [f64],
}

impl Reader<'_> {
    fn next(&mut self, name: &str) -> Result<(&[usize], &[f64])> {
        let entry = self
            .entries
            .next()
            .ok_or_else(|| Error::Shape(format!("model file ends before tensor {name}")))?;
        if entry.name != name {
            return Err(Error::Shape(format!(
                "expected tensor {name}, found {}",
                entry.name
            )));
        }
        let count: usize = entry.shape.iter().product();
        if self.data.len() < count {
            return Err(Error::TruncatedPayload {
                expected: count * 8,
                found: self.data.len() * 8,
            });
        }
        let (head, rest) = self.data.split_at(count);
        self.data = rest;
        Ok((&entry.shape, head))
    }

    fn matrix(&mut self, name: String) -> Result<DMatrix<f64>> {
        let (shape, values) = self.next(&name)?;
        match *shape {
            [r, c] => Ok(DMatrix::from_column_slice(r, c, values)),
            _ => Err(Error::Shape(format!("{name} is not a matrix"))),
        }
    }

    fn vector(&mut self, name: String) -> Result<Vec<f64>> {
        Ok(self.next(&name)?.1.to_vec())
    }
}

fn encode(file: &ModelFile) -> Result<Vec<u8>> {
    let m = &file.model;
    let mut p = Payload::default();
    for (j, net) in m.networks.iter().enumerate() {
        p.matrix(format!("net{j}.weight"), &net.weight);
        p.vector(format!("net{j}.bias"), net.bias.as_slice());
        p.vector(format!("net{j}.gamma"), net.gamma.as_slice());
        p.vector(format!("net{j}.beta"), net.beta.as_slice());
        p.vector(format!("net{j}.running_mean"), net.running_mean.as_slice());
        p.vector(format!("net{j}.running_var"), net.running_var.as_slice());
    }
    let s = &m.solution;
    p.matrix("solution.g".into(), &s.g);
    for (j, (u, mean)) in s.projections.iter().zip(&s.means).enumerate() {
        p.matrix(format!("solution.u{j}"), u);
        p.vector(format!("solution.mean{j}"), mean.as_slice());
    }
    p.vector("solution.eigenvalues".into(), &s.eigenvalues);
    p.vector("solution.objective_eps".into(), &[s.objective, s.eps]);
    p.vector("initial_loss".into(), &[m.initial_loss]);
    p.vector("loss_history".into(), &m.loss_history);

    let header = Header {
        view_names: m.view_names.clone(),
        layout: m.networks.first().map(|n| n.layout).unwrap_or_default(),
        config: m.config.clone(),
        layer_weights: file.layer_weights.clone(),
        tensors: p.entries,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(10 + json.len() + 8 * p.data.len());
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in &p.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<ModelFile> {
    if bytes.len() < 10 {
        return Err(Error::TruncatedPayload {
            expected: 10,
            found: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != MODEL_MAGIC {
        return Err(Error::BadMagic {
            expected: MODEL_MAGIC,
            found,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    if bytes.len() < 10 + len {
        return Err(Error::TruncatedPayload {
            expected: 10 + len,
            found: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[10..10 + len])?;
    let raw = &bytes[10 + len..];
    if raw.len() % 8 != 0 {
        return Err(Error::Shape("model payload is not a whole number of f64".into()));
    }
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut r = Reader {
        entries: header.tensors.iter(),
        data: &data,
    };

    let j_views = header.view_names.len();
    let mut networks = Vec::with_capacity(j_views);
    for j in 0..j_views {
        let weight = r.matrix(format!("net{j}.weight"))?;
        let mut vec = |name: &str| r.vector(format!("net{j}.{name}")).map(DVector::from_vec);
        let net = ViewNetwork {
            bias: vec("bias")?,
            gamma: vec("gamma")?,
            beta: vec("beta")?,
            running_mean: vec("running_mean")?,
            running_var: vec("running_var")?,
            weight,
            layout: header.layout,
            bn_momentum: header.config.bn_momentum,
            bn_eps: header.config.bn_eps,
        };
        networks.push(net);
    }
    let g = r.matrix("solution.g".into())?;
    let mut projections = Vec::with_capacity(j_views);
    let mut means = Vec::with_capacity(j_views);
    for j in 0..j_views {
        projections.push(r.matrix(format!("solution.u{j}"))?);
        means.push(DVector::from_vec(r.vector(format!("solution.mean{j}"))?));
    }
    let eigenvalues = r.vector("solution.eigenvalues".into())?;
    let scalars = r.vector("solution.objective_eps".into())?;
    let initial = r.vector("initial_loss".into())?;
    let loss_history = r.vector("loss_history".into())?;
    if scalars.len() != 2 || initial.len() != 1 {
        return Err(Error::Shape("malformed scalar tensors".into()));
    }
    if !r.data.is_empty() || r.entries.next().is_some() {
        return Err(Error::Shape("unexpected trailing tensors in model file".into()));
    }
    Ok(ModelFile {
        model: TrainedDgcca {
            view_names: header.view_names,
            networks,
            solution: GccaSolution {
                g,
                projections,
                means,
                eigenvalues,
                objective: scalars[0],
                eps: scalars[1],
            },
            initial_loss: initial[0],
            loss_history,
            config: header.config,
        },
        layer_weights: header.layer_weights,
    })
}

pub fn write_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(file)?).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
