use nalgebra::DMatrix;
use psr_core::dgcca::DgccaTrainConfig;
use psr_core::feature_io::{DatasetViews, Manifest, ViewMatrix};
use psr_core::psr::{run_psr, run_psr_pipeline, PsrConfig, PsrViews};
use psr_core::synthetic::{psr_mixture, write_dataset};

/// Defaults with the learning rate raised for unit-scale synthetic data and
/// a canonical width matched to 8-dimensional views.
fn config() -> PsrConfig {
    PsrConfig {
        train: DgccaTrainConfig {
            learning_rate: 1e-3,
            rank: 4,
            output_dim: 8,
            epochs: 30,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn views() -> PsrViews {
    PsrViews {
        ssl: "ssl".into(),
        mel: "mel".into(),
        text: "text".into(),
    }
}

fn with_ssl(base: &DatasetViews, ssl: &DMatrix<f64>) -> DatasetViews {
    let ids = base.utt_ids().to_vec();
    DatasetViews::new(vec![
        ViewMatrix::new("ssl", ssl.clone(), ids.clone()).unwrap(),
        base.views()[1].clone(),
        base.views()[2].clone(),
    ])
    .unwrap()
}

fn psr(ds: &DatasetViews) -> f64 {
    run_psr(ds, &views(), &config()).unwrap().report.psr_percent
}

#[test]
fn ssl_equal_to_mel_is_phonetic() {
    for seed in 0..3 {
        let base = psr_mixture(300, 8, 0.5, 0.1, seed);
        let p = psr(&with_ssl(&base, &base.views()[1].matrix));
        assert!(p > 0.0, "seed {seed}: {p}");
    }
}

#[test]
fn ssl_equal_to_text_is_syntactic() {
    for seed in 0..3 {
        let base = psr_mixture(300, 8, 0.5, 0.1, seed);
        let p = psr(&with_ssl(&base, &base.views()[2].matrix));
        assert!(p < 0.0, "seed {seed}: {p}");
    }
}

#[test]
fn psr_increases_with_phonetic_share() {
    for seed in 0..5 {
        let values: Vec<f64> = [0.1, 0.5, 0.9].iter().map(|&a| psr(&psr_mixture(400, 8, a, 0.1, seed))).collect();
        assert!(values.windows(2).all(|w| w[0] < w[1]), "seed {seed}: {values:?}");
    }
}

#[test]
fn balanced_mixture_sits_between_extremes() {
    for seed in 0..3 {
        let base = psr_mixture(300, 8, 0.5, 0.1, seed);
        let mix = psr(&base);
        let phonetic = psr(&with_ssl(&base, &base.views()[1].matrix));
        let syntactic = psr(&with_ssl(&base, &base.views()[2].matrix));
        assert!(syntactic < mix && mix < phonetic, "seed {seed}: {syntactic} {mix} {phonetic}");
    }
}

/// The mean of per-utterance ratios is bounded below by -100% but unbounded
/// above, and floored near-zero syntax cosines inflate it, so a balanced
/// mixture lands far above the magnitude of the syntactic extreme.
#[test]
#[ignore = "mean-of-ratios is asymmetric; see the magnitude analysis in the doc comment"]
fn balanced_mixture_magnitude_below_both_extremes() {
    let base = psr_mixture(300, 8, 0.5, 0.1, 0);
    let mix = psr(&base).abs();
    let phonetic = psr(&with_ssl(&base, &base.views()[1].matrix)).abs();
    let syntactic = psr(&with_ssl(&base, &base.views()[2].matrix)).abs();
    assert!(mix < phonetic && mix < syntactic, "{mix} vs {phonetic}, {syntactic}");
}

#[test]
fn pairwise_runs_keep_the_sign() {
    let base = psr_mixture(300, 8, 0.5, 0.1, 1);
    let cfg = PsrConfig {
        pairwise_runs: true,
        ..config()
    };
    let run = run_psr(&with_ssl(&base, &base.views()[1].matrix), &views(), &cfg).unwrap();
    assert_eq!(run.models.len(), 2);
    assert!(run.report.psr_percent > 0.0);
}

#[test]
fn pipeline_from_manifest_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let ds = psr_mixture(120, 6, 0.7, 0.1, 3);
    write_dataset(dir.path(), &ds).unwrap();
    let manifest = Manifest::load(dir.path().join("manifest.json")).unwrap();
    let a = run_psr_pipeline(&manifest, &views(), &config(), None).unwrap().report;
    let b = run_psr_pipeline(&manifest, &views(), &config(), None).unwrap().report;
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.n, 120);
    assert!(a.psr_percent.is_finite());
    assert_eq!(a.scores.utt_ids.len(), 120);
}
