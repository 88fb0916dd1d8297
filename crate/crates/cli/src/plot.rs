//! Plot-ready CSV tables.

use std::fmt::Write as _;

use psr_core::layer_agg::LayerWeights;
use psr_core::psr::PsrReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    LossCurve,
    LayerWeights,
    PsrScores,
}

/// A result that can be rendered as a plot table.
#[derive(Debug, Clone, Copy)]
pub enum PlotSource<'a> {
    /// Full-dataset objective after each epoch.
    LossHistory(&'a [f64]),
    LayerWeights {
        weights: &'a LayerWeights,
        labels: &'a [String],
    },
    Psr(&'a PsrReport),
}

impl PlotSource<'_> {
    pub fn kind(&self) -> PlotKind {
        match self {
            PlotSource::LossHistory(_) => PlotKind::LossCurve,
            PlotSource::LayerWeights { .. } => PlotKind::LayerWeights,
            PlotSource::Psr(_) => PlotKind::PsrScores,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PlotError {
    #[error("cannot render {found:?} data as a {requested:?} table")]
    KindMismatch { requested: PlotKind, found: PlotKind },
    #[error("{labels} labels for {layers} layers")]
    LabelCount { labels: usize, layers: usize },
}

/// Headered CSV with one row per point and a fixed column order.
pub fn emit_plot_data(source: &PlotSource<'_>, kind: PlotKind) -> Result<String, PlotError> {
    if source.kind() != kind {
        return Err(PlotError::KindMismatch {
            requested: kind,
            found: source.kind(),
        });
    }
    let mut out = String::new();
    match *source {
        PlotSource::LossHistory(history) => {
            out.push_str("epoch,objective\n");
            for (i, v) in history.iter().enumerate() {
                writeln!(out, "{},{v}", i + 1).unwrap();
            }
        }
        PlotSource::LayerWeights { weights, labels } => {
            if labels.len() != weights.len() {
                return Err(PlotError::LabelCount {
                    labels: labels.len(),
                    layers: weights.len(),
                });
            }
            out.push_str("layer,label,weight\n");
            for (i, (w, label)) in weights.normalized().iter().zip(labels).enumerate() {
                writeln!(out, "{i},{},{w}", csv_field(label)).unwrap();
            }
        }
        PlotSource::Psr(report) => {
            out.push_str("utt_id,phonetic,syntax,ratio\n");
            let ratios = report.ratios();
            let s = &report.scores;
            for i in 0..s.phonetic.len() {
                let id = s.utt_ids.get(i).map(String::as_str).unwrap_or("");
                writeln!(out, "{},{},{},{}", csv_field(id), s.phonetic[i], s.syntax[i], ratios[i]).unwrap();
            }
        }
    }
    Ok(out)
}

/// Quotes a field when it contains a delimiter, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
