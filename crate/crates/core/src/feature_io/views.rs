use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{read_feature_file, FeatureTensor, Manifest};
use crate::error::{Error, Result};
use crate::layer_agg::{aggregate_layers, LayerWeights};

/// Reduction of a variable-length frame sequence to one vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
}

/// One view at utterance level: `dims x n_utts`, one column per utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrix {
    pub name: String,
    pub matrix: DMatrix<f64>,
    pub utt_ids: Vec<String>,
}

impl ViewMatrix {
    pub fn new(name: impl Into<String>, matrix: DMatrix<f64>, utt_ids: Vec<String>) -> Result<Self> {
        let name = name.into();
        if matrix.ncols() != utt_ids.len() {
            return Err(Error::Shape(format!(
                "view {name}: {} columns but {} utterance ids",
                matrix.ncols(),
                utt_ids.len()
            )));
        }
        if matrix.nrows() == 0 || matrix.ncols() == 0 {
            return Err(Error::Shape(format!("view {name} is empty")));
        }
        if utt_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Shape(format!(
                "view {name}: utterance ids must be strictly sorted"
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("view {name} has non-finite values")));
        }
        Ok(Self {
            name,
            matrix,
            utt_ids,
        })
    }

    pub fn dims(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_utts(&self) -> usize {
        self.matrix.ncols()
    }

    /// Keeps only the listed columns; `ids` must be sorted.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let cols: Vec<usize> = ids
            .iter()
            .map(|id| {
                self.utt_ids
                    .binary_search(id)
                    .map_err(|_| Error::Invalid(format!("view {} lacks utterance {id}", self.name)))
            })
            .collect::<Result<_>>()?;
        let matrix = self.matrix.select_columns(cols.iter());
        Self::new(self.name.clone(), matrix, ids.to_vec())
    }
}

/// `J >= 2` views sharing the same ordered utterance ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetViews {
    views: Vec<ViewMatrix>,
}

impl DatasetViews {
    pub fn new(views: Vec<ViewMatrix>) -> Result<Self> {
        if views.len() < 2 {
            return Err(Error::Invalid(format!("need at least 2 views, got {}", views.len())));
        }
        let first = &views[0].utt_ids;
        for v in &views[1..] {
            if &v.utt_ids != first {
                return Err(Error::Invalid(format!(
                    "view {} is not aligned with view {}",
                    v.name, views[0].name
                )));
            }
        }
        let mut names = BTreeSet::new();
        for v in &views {
            if !names.insert(v.name.as_str()) {
                return Err(Error::Invalid(format!("duplicate view {}", v.name)));
            }
        }
        Ok(Self { views })
    }

    pub fn views(&self) -> &[ViewMatrix] {
        &self.views
    }

    pub fn view(&self, name: &str) -> Option<&ViewMatrix> {
        self.views.iter().find(|v| v.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.views.iter().position(|v| v.name == name)
    }

    pub fn utt_ids(&self) -> &[String] {
        &self.views[0].utt_ids
    }

    pub fn n_utts(&self) -> usize {
        self.views[0].n_utts()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.views.iter().map(|v| v.name.clone()).collect()
    }

    pub fn matrices(&self) -> Vec<&DMatrix<f64>> {
        self.views.iter().map(|v| &v.matrix).collect()
    }

    /// Sub-dataset with the named views, in the given order.
    pub fn subset(&self, names: &[&str]) -> Result<Self> {
        let views = names
            .iter()
            .map(|n| {
                self.view(n)
                    .cloned()
                    .ok_or_else(|| Error::Invalid(format!("no view named {n}")))
            })
            .collect::<Result<_>>()?;
        Self::new(views)
    }
}

/// Mean over the `T` rows of a `T x D` frame matrix.
pub fn pool_time(seq: &FeatureTensor, method: Pooling) -> Result<Vec<f64>> {
    let (frames, dims) = match *seq.shape() {
        [t, d] => (t, d),
        [d] => (1, d),
        ref s => return Err(Error::Shape(format!("cannot pool shape {s:?}"))),
    };
    if frames == 0 {
        return Err(Error::Shape("cannot pool an empty sequence".into()));
    }
    match method {
        Pooling::Mean => {
            let mut acc = vec![0.0f64; dims];
            for t in 0..frames {
                for (a, &v) in acc.iter_mut().zip(&seq.data()[t * dims..(t + 1) * dims]) {
                    *a += f64::from(v);
                }
            }
            let n = frames as f64;
            Ok(acc.into_iter().map(|a| a / n).collect())
        }
    }
}

fn columns_to_view(name: &str, ids: Vec<String>, columns: Vec<Vec<f64>>) -> Result<ViewMatrix> {
    let dims = columns.first().map_or(0, Vec::len);
    let n = columns.len();
    if n == 0 {
        return Err(Error::Manifest(format!("view {name} has no utterances")));
    }
    let matrix = DMatrix::from_fn(dims, n, |r, c| columns[c][r]);
    ViewMatrix::new(name, matrix, ids)
}

fn check_dims(name: &str, id: &str, expected: &mut Option<usize>, got: usize) -> Result<()> {
    match *expected {
        Some(d) if d != got => Err(Error::Shape(format!(
            "view {name}: utterance {id} has dimension {got}, expected {d}"
        ))),
        _ => {
            *expected = Some(got);
            Ok(())
        }
    }
}

/// Loads one view: 2-D files are pooled over time, 1-D files used as is.
/// 3-D layer stacks are rejected; see [`load_view_aggregated`].
pub fn load_view(manifest: &Manifest, view_name: &str, pooling: Pooling) -> Result<ViewMatrix> {
    let files = manifest.files_for_view(view_name)?;
    let mut ids = Vec::with_capacity(files.len());
    let mut columns = Vec::with_capacity(files.len());
    let mut dims = None;
    for (id, path) in files {
        let t = read_feature_file(&path)?;
        if t.ndim() == 3 {
            return Err(Error::Shape(format!(
                "view {view_name}: {} is a 3-D layer stack; aggregate layers first",
                path.display()
            )));
        }
        let col = pool_time(&t, pooling)?;
        check_dims(view_name, &id, &mut dims, col.len())?;
        ids.push(id);
        columns.push(col);
    }
    columns_to_view(view_name, ids, columns)
}

/// Loads a view of `L x T x D` layer stacks, collapsing layers with `weights`
/// before pooling over time.
pub fn load_view_aggregated(
    manifest: &Manifest,
    view_name: &str,
    weights: &LayerWeights,
    pooling: Pooling,
) -> Result<ViewMatrix> {
    let files = manifest.files_for_view(view_name)?;
    let mut ids = Vec::with_capacity(files.len());
    let mut columns = Vec::with_capacity(files.len());
    let mut dims = None;
    for (id, path) in files {
        let t = read_feature_file(&path)?;
        if t.ndim() != 3 {
            return Err(Error::Shape(format!(
                "view {view_name}: {} is not a 3-D layer stack",
                path.display()
            )));
        }
        let col = pool_time(&aggregate_layers(&t, weights)?, pooling)?;
        check_dims(view_name, &id, &mut dims, col.len())?;
        ids.push(id);
        columns.push(col);
    }
    columns_to_view(view_name, ids, columns)
}

/// Reads every `L x T x D` stack of a view, keyed by sorted utterance id.
/// All stacks must share `L` and `D`.
pub fn load_layer_stacks(manifest: &Manifest, view_name: &str) -> Result<Vec<(String, FeatureTensor)>> {
    let files = manifest.files_for_view(view_name)?;
    let mut out: Vec<(String, FeatureTensor)> = Vec::with_capacity(files.len());
    for (id, path) in files {
        let t = read_feature_file(&path)?;
        if t.ndim() != 3 {
            return Err(Error::Shape(format!(
                "view {view_name}: {} is not a 3-D layer stack",
                path.display()
            )));
        }
        if let Some((_, first)) = out.first() {
            let (a, b) = (first.shape(), t.shape());
            if a[0] != b[0] || a[2] != b[2] {
                return Err(Error::Shape(format!(
                    "view {view_name}: utterance {id} has shape {b:?}, expected [{}, _, {}]",
                    a[0], a[2]
                )));
            }
        }
        out.push((id, t));
    }
    Ok(out)
}

/// Intersects utterance ids across already-loaded views.
pub fn intersect_views(views: Vec<ViewMatrix>) -> Result<DatasetViews> {
    if views.len() < 2 {
        return Err(Error::Invalid("alignment needs at least 2 views".into()));
    }
    let mut shared: BTreeSet<&String> = views[0].utt_ids.iter().collect();
    for v in &views[1..] {
        let ids: BTreeSet<&String> = v.utt_ids.iter().collect();
        shared = shared.intersection(&ids).copied().collect();
    }
    if shared.is_empty() {
        return Err(Error::Manifest("views share no utterances".into()));
    }
    if shared.len() < 2 {
        return Err(Error::Manifest(format!(
            "views share only {} utterance; need at least 2",
            shared.len()
        )));
    }
    let ids: Vec<String> = shared.into_iter().cloned().collect();
    let aligned = views
        .iter()
        .map(|v| v.select(&ids))
        .collect::<Result<Vec<_>>>()?;
    DatasetViews::new(aligned)
}

/// Loads the named views and keeps only utterances present in all of them.
pub fn align_views(manifest: &Manifest, view_names: &[&str], pooling: Pooling) -> Result<DatasetViews> {
    if view_names.len() < 2 {
        return Err(Error::InvalidConfig("alignment needs at least 2 views".into()));
    }
    let views = view_names
        .iter()
        .map(|name| load_view(manifest, name, pooling))
        .collect::<Result<Vec<_>>>()?;
    intersect_views(views)
}
