//! Phonetic-syntax ratio.
//!
//! `PSR = (mean_i(phonetic_i / syntax_i) - 1) * 100`, where the phonetic
//! score compares the speech features with the acoustic view and the syntax
//! score compares them with the text view. Positive values mean the speech
//! features agree more with acoustics than with text.

use serde::{Deserialize, Serialize};

use crate::dgcca::{per_utterance_scores, train, DgccaTrainConfig, TrainedDgcca};
use crate::error::{Error, Result};
use crate::feature_io::{intersect_views, load_view, load_view_aggregated, DatasetViews, Manifest, Pooling};
use crate::layer_agg::LayerWeights;

pub const DEFAULT_EPS_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVectors {
    #[serde(default)]
    pub utt_ids: Vec<String>,
    pub phonetic: Vec<f64>,
    pub syntax: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    pub ssl_view: String,
    pub mel_view: String,
    pub text_view: String,
    pub pairwise_runs: bool,
    pub eps_floor: f64,
    pub train_config: DgccaTrainConfig,
    /// Epochs actually run by each training (one, or two with pairwise runs).
    pub epochs_run: Vec<usize>,
    pub final_objectives: Vec<f64>,
    /// Utterances scored 0 because a canonical vector had zero norm.
    pub zero_norm_utterances: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssl_layer_weights: Option<LayerWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsrReport {
    pub psr_percent: f64,
    pub n: usize,
    /// Scores (across both vectors) raised to the floor before dividing.
    pub n_floored: usize,
    /// Scores after flooring.
    pub scores: ScoreVectors,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

impl PsrReport {
    /// Per-utterance `phonetic / syntax` ratios of the stored scores.
    pub fn ratios(&self) -> Vec<f64> {
        self.scores
            .phonetic
            .iter()
            .zip(&self.scores.syntax)
            .map(|(p, s)| p / s)
            .collect()
    }
}

fn psr_from_ratios(ratios: &[f64]) -> f64 {
    (ratios.iter().sum::<f64>() / ratios.len() as f64 - 1.0) * 100.0
}

/// Floors both score vectors at `eps_floor` and averages their ratios.
pub fn compute_psr(phonetic: &[f64], syntax: &[f64], eps_floor: f64) -> Result<PsrReport> {
    if phonetic.len() != syntax.len() {
        return Err(Error::Shape(format!(
            "{} phonetic scores vs {} syntax scores",
            phonetic.len(),
            syntax.len()
        )));
    }
    if phonetic.is_empty() {
        return Err(Error::Invalid("PSR needs at least one utterance".into()));
    }
    if !(eps_floor > 0.0) || !eps_floor.is_finite() {
        return Err(Error::InvalidConfig(format!("eps_floor must be > 0, got {eps_floor}")));
    }
    if phonetic.iter().chain(syntax).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite score".into()));
    }
    let mut n_floored = 0;
    let mut floor = |v: f64| {
        if v < eps_floor {
            n_floored += 1;
            eps_floor
        } else {
            v
        }
    };
    let phonetic: Vec<f64> = phonetic.iter().map(|&v| floor(v)).collect();
    let syntax: Vec<f64> = syntax.iter().map(|&v| floor(v)).collect();
    let mut report = PsrReport {
        psr_percent: 0.0,
        n: phonetic.len(),
        n_floored,
        scores: ScoreVectors {
            utt_ids: Vec::new(),
            phonetic,
            syntax,
        },
        provenance: None,
    };
    report.psr_percent = psr_from_ratios(&report.ratios());
    Ok(report)
}

/// View names for the three roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsrViews {
    pub ssl: String,
    pub mel: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsrConfig {
    pub train: DgccaTrainConfig,
    pub eps_floor: f64,
    /// Train separate ssl/mel and ssl/text models instead of one joint model.
    pub pairwise_runs: bool,
}

impl Default for PsrConfig {
    fn default() -> Self {
        Self {
            train: DgccaTrainConfig::default(),
            eps_floor: DEFAULT_EPS_FLOOR,
            pairwise_runs: false,
        }
    }
}

impl PsrConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.eps_floor > 0.0) || !self.eps_floor.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "eps_floor must be > 0, got {}",
                self.eps_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PsrRun {
    pub report: PsrReport,
    /// One joint model, or the ssl/mel and ssl/text models.
    pub models: Vec<TrainedDgcca>,
}

/// Trains on aligned views and scores every utterance.
pub fn run_psr(dataset: &DatasetViews, views: &PsrViews, config: &PsrConfig) -> Result<PsrRun> {
    config.validate()?;
    let (ssl, mel, text) = (views.ssl.as_str(), views.mel.as_str(), views.text.as_str());
    if ssl == mel || ssl == text || mel == text {
        return Err(Error::InvalidConfig("ssl, mel and text views must be distinct".into()));
    }
    let (models, phon, syn) = if config.pairwise_runs {
        let acoustic = dataset.subset(&[ssl, mel])?;
        let textual = dataset.subset(&[ssl, text])?;
        let m1 = train(&acoustic, &config.train)?;
        let m2 = train(&textual, &config.train)?;
        let phon = per_utterance_scores(&m1, &acoustic, (ssl, mel))?;
        let syn = per_utterance_scores(&m2, &textual, (ssl, text))?;
        (vec![m1, m2], phon, syn)
    } else {
        let joint = dataset.subset(&[ssl, mel, text])?;
        let model = train(&joint, &config.train)?;
        let phon = per_utterance_scores(&model, &joint, (ssl, mel))?;
        let syn = per_utterance_scores(&model, &joint, (ssl, text))?;
        (vec![model], phon, syn)
    };
    let mut report = compute_psr(&phon.scores, &syn.scores, config.eps_floor)?;
    report.scores.utt_ids = dataset.utt_ids().to_vec();
    report.provenance = Some(Provenance {
        toolkit_version: crate::VERSION.to_string(),
        ssl_view: views.ssl.clone(),
        mel_view: views.mel.clone(),
        text_view: views.text.clone(),
        pairwise_runs: config.pairwise_runs,
        eps_floor: config.eps_floor,
        train_config: config.train.clone(),
        epochs_run: models.iter().map(|m| m.loss_history.len()).collect(),
        final_objectives: models.iter().map(|m| m.solution.objective).collect(),
        zero_norm_utterances: phon.zero_norm + syn.zero_norm,
        ssl_layer_weights: None,
    });
    Ok(PsrRun { report, models })
}

/// Loads the three views from a manifest (aggregating the ssl layer stacks
/// when weights are given), aligns them, and runs [`run_psr`].
pub fn run_psr_pipeline(
    manifest: &Manifest,
    views: &PsrViews,
    config: &PsrConfig,
    ssl_layer_weights: Option<&LayerWeights>,
) -> Result<PsrRun> {
    config.validate()?;
    let ssl = match ssl_layer_weights {
        Some(w) => load_view_aggregated(manifest, &views.ssl, w, Pooling::Mean)?,
        None => load_view(manifest, &views.ssl, Pooling::Mean)?,
    };
    let mel = load_view(manifest, &views.mel, Pooling::Mean)?;
    let text = load_view(manifest, &views.text, Pooling::Mean)?;
    let dataset = intersect_views(vec![ssl, mel, text])?;
    if dataset.n_utts() < config.train.batch_size {
        return Err(Error::Invalid(format!(
            "only {} utterances have all three views; need at least {}",
            dataset.n_utts(),
            config.train.batch_size
        )));
    }
    let mut run = run_psr(&dataset, views, config)?;
    if let Some(p) = run.report.provenance.as_mut() {
        p.ssl_layer_weights = ssl_layer_weights.cloned();
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn arithmetic_examples() {
        assert_eq!(compute_psr(&[1.0, 1.0], &[1.0, 1.0], 1e-3).unwrap().psr_percent, 0.0);
        assert_eq!(compute_psr(&[2.0, 2.0], &[1.0, 1.0], 1e-3).unwrap().psr_percent, 100.0);
        let r = compute_psr(&[0.3, 0.6], &[0.2, 0.4], 1e-3).unwrap();
        assert!((r.psr_percent - 50.0).abs() < 1e-12, "{}", r.psr_percent);
        assert_eq!(r.n, 2);
        assert_eq!(r.n_floored, 0);
    }

    #[test]
    fn floor_is_counted() {
        let r = compute_psr(&[0.5, -0.2], &[0.0, 0.5], 1e-3).unwrap();
        assert_eq!(r.n_floored, 2);
        assert_eq!(r.scores.phonetic, vec![0.5, 1e-3]);
        assert_eq!(r.scores.syntax, vec![1e-3, 0.5]);
        let expected = ((0.5 / 1e-3 + 1e-3 / 0.5) / 2.0 - 1.0) * 100.0;
        assert_eq!(r.psr_percent, expected);
    }

    #[test]
    fn errors() {
        assert!(compute_psr(&[1.0], &[1.0, 2.0], 1e-3).is_err());
        assert!(compute_psr(&[], &[], 1e-3).is_err());
        assert!(compute_psr(&[1.0], &[1.0], 0.0).is_err());
        assert!(compute_psr(&[f64::NAN], &[1.0], 1e-3).is_err());
    }

    #[test]
    fn report_json_schema() {
        let r = compute_psr(&[0.5], &[0.25], 1e-3).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        for key in ["psr_percent", "n", "n_floored", "scores", "provenance"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v["scores"]["phonetic"].is_array());
        assert!(v["scores"]["syntax"].is_array());
        let back: PsrReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    fn scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|n| {
            (
                prop::collection::vec(0.01f64..1.0, n),
                prop::collection::vec(0.01f64..1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn stored_vectors_reproduce_psr((p, s) in scores()) {
            let r = compute_psr(&p, &s, 1e-3).unwrap();
            let again = (r.ratios().iter().sum::<f64>() / r.n as f64 - 1.0) * 100.0;
            prop_assert!((again - r.psr_percent).abs() <= 1e-9);
        }

        #[test]
        fn common_scale_cancels((p, s) in scores(), c in 0.1f64..10.0) {
            let a = compute_psr(&p, &s, 1e-3).unwrap().psr_percent;
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let ss: Vec<f64> = s.iter().map(|v| v * c).collect();
            let b = compute_psr(&ps, &ss, 1e-3).unwrap().psr_percent;
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn monotone_in_each_score((p, s) in scores(), i in 0usize..12, bump in 0.01f64..0.5) {
            let i = i % p.len();
            let base = compute_psr(&p, &s, 1e-3).unwrap().psr_percent;
            let mut p2 = p.clone();
            p2[i] += bump;
            prop_assert!(compute_psr(&p2, &s, 1e-3).unwrap().psr_percent > base);
            let mut s2 = s.clone();
            s2[i] += bump;
            prop_assert!(compute_psr(&p, &s2, 1e-3).unwrap().psr_percent < base);
        }

        #[test]
        fn equal_scores_give_zero(p in prop::collection::vec(0.01f64..1.0, 1..12)) {
            prop_assert_eq!(compute_psr(&p, &p, 1e-3).unwrap().psr_percent, 0.0);
        }
    }
}
