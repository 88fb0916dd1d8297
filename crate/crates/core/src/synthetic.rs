//! Seeded synthetic datasets with known structure, used by tests, the
//! acceptance suite, and the CLI fixture.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::feature_io::{write_feature_file, DatasetViews, FeatureTensor, Manifest, UtteranceEntry, ViewMatrix};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn utt_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("utt{i:05}")).collect()
}

fn views_from(names: &[&str], mats: Vec<DMatrix<f64>>) -> DatasetViews {
    let ids = utt_ids(mats[0].ncols());
    DatasetViews::new(
        names
            .iter()
            .zip(mats)
            .map(|(n, m)| ViewMatrix::new(*n, m, ids.clone()).expect("synthetic view"))
            .collect(),
    )
    .expect("synthetic dataset")
}

/// Views `Y_j = A_j G* + noise * E_j` sharing a Gaussian latent `G*`
/// (`latent x n`). Returns the views (named `view0`, `view1`, ...) and `G*`.
pub fn shared_latent(n: usize, latent: usize, dims: &[usize], noise: f64, seed: u64) -> (DatasetViews, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = gaussian(latent, n, &mut rng);
    let mats = dims
        .iter()
        .map(|&d| {
            let a = gaussian(d, latent, &mut rng);
            &a * &g + gaussian(d, n, &mut rng) * noise
        })
        .collect();
    let names: Vec<String> = (0..dims.len()).map(|j| format!("view{j}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    (views_from(&refs, mats), g)
}

/// Three views `ssl`, `mel`, `text` over independent phonetic and syntactic
/// sources. `mel` observes the phonetic source, `text` the syntactic one,
/// and `ssl` the mixture `alpha * phonetic + (1 - alpha) * syntactic`, each
/// through its own random map plus noise.
pub fn psr_mixture(n: usize, dim: usize, alpha: f64, noise: f64, seed: u64) -> DatasetViews {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phon = gaussian(dim, n, &mut rng);
    let syn = gaussian(dim, n, &mut rng);
    let maps: Vec<DMatrix<f64>> = (0..3).map(|_| gaussian(dim, dim, &mut rng)).collect();
    let noise_terms: Vec<DMatrix<f64>> = (0..3).map(|_| gaussian(dim, n, &mut rng) * noise).collect();
    let mixed = &phon * alpha + &syn * (1.0 - alpha);
    let ssl = &maps[0] * mixed + &noise_terms[0];
    let mel = &maps[1] * &phon + &noise_terms[1];
    let text = &maps[2] * &syn + &noise_terms[2];
    views_from(&["ssl", "mel", "text"], vec![ssl, mel, text])
}

/// Layer stacks (`layers x frames x dims`) where layer `planted` carries the
/// target signal at the given power SNR and every other layer is
/// independent noise. Frames jitter around the utterance vector with
/// zero mean, so time pooling recovers it.
pub fn planted_layer_stacks(
    n: usize,
    layers: usize,
    frames: usize,
    dims: usize,
    planted: usize,
    snr: f64,
    seed: u64,
) -> (Vec<FeatureTensor>, ViewMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = gaussian(dims, n, &mut rng);
    let mix = gaussian(dims, dims, &mut rng);
    let signal = &mix * &target;
    let signal_power = signal.norm_squared() / signal.len() as f64;
    let noise_sd = (signal_power / snr).sqrt();
    let mut per_layer: Vec<DMatrix<f64>> = Vec::with_capacity(layers);
    for l in 0..layers {
        let m = if l == planted {
            &signal + gaussian(dims, n, &mut rng) * noise_sd
        } else {
            gaussian(dims, n, &mut rng) * signal_power.sqrt()
        };
        per_layer.push(m);
    }
    let frames = frames.max(2) & !1;
    let stacks = (0..n)
        .map(|i| {
            let mut data = Vec::with_capacity(layers * frames * dims);
            for layer in &per_layer {
                for t in 0..frames {
                    let jitter = if t % 2 == 0 { 0.25 } else { -0.25 };
                    for d in 0..dims {
                        data.push((layer[(d, i)] + jitter) as f32);
                    }
                }
            }
            FeatureTensor::new(vec![layers, frames, dims], data).expect("stack shape")
        })
        .collect();
    let target = ViewMatrix::new("target", target, utt_ids(n)).expect("target view");
    (stacks, target)
}

/// Writes each view as 1-D PSRF vectors under `dir` and returns the
/// manifest (also saved as `dir/manifest.json`).
pub fn write_dataset(dir: &Path, dataset: &DatasetViews) -> Result<Manifest> {
    let mut manifest = Manifest {
        views: dataset.names(),
        root: dir.to_path_buf(),
        ..Default::default()
    };
    for view in dataset.views() {
        let sub = dir.join(&view.name);
        std::fs::create_dir_all(&sub).map_err(|e| crate::Error::io(&sub, e))?;
        for (i, id) in view.utt_ids.iter().enumerate() {
            let data: Vec<f32> = view.matrix.column(i).iter().map(|&v| v as f32).collect();
            let rel = format!("{}/{id}.psrf", view.name);
            write_feature_file(dir.join(&rel), &FeatureTensor::new(vec![data.len()], data)?)?;
            manifest
                .utterances
                .entry(id.clone())
                .or_insert_with(UtteranceEntry::default)
                .paths
                .insert(view.name.clone(), rel);
        }
    }
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}
