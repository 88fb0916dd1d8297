use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};

use psr_core::dgcca::{read_model, train, write_model, DgccaTrainConfig, ModelFile};
use psr_core::feature_io::{
    intersect_views, load_layer_stacks, load_view, load_view_aggregated, read_feature_file, write_feature_file,
    FeatureTensor, Manifest, Pooling, UtteranceEntry, ViewMatrix,
};
use psr_core::gcca::{solve_gcca, GccaSolution};
use psr_core::layer_agg::{fit_layer_weights, report_csv, weight_report, LayerFitConfig, LayerWeights};
use psr_core::lingdist::{ldn_by_concept, ldnd, WordList};
use psr_core::mel::{extract_mel, MelConfig};
use psr_core::psr::{run_psr_pipeline, PsrConfig, PsrViews};

use crate::args::*;
use crate::config::{FileConfig, GccaSettings};
use crate::plot::{csv_field, emit_plot_data, PlotKind, PlotSource};
use crate::UsageError;

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Refuses to write `out` over any of `inputs`.
fn ensure_not_input(out: &Path, inputs: &[&Path]) -> Result<()> {
    let canon = |p: &Path| fs::canonicalize(p).ok();
    if let Some(o) = canon(out) {
        if inputs.iter().any(|i| canon(i).as_deref() == Some(o.as_path())) {
            return Err(UsageError(format!("output {} would overwrite an input", out.display())).into());
        }
    }
    Ok(())
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

/// Loads `names` from the manifest, aggregating `stack` with its weights.
fn load_aligned(
    manifest: &Manifest,
    names: &[String],
    stack: Option<(&str, &LayerWeights)>,
) -> Result<psr_core::feature_io::DatasetViews> {
    let mut views = Vec::with_capacity(names.len());
    for name in names {
        let v = match stack {
            Some((s, w)) if s == name => load_view_aggregated(manifest, name, w, Pooling::Mean)?,
            _ => load_view(manifest, name, Pooling::Mean)?,
        };
        views.push(v);
    }
    if let Some((s, _)) = stack {
        if !names.iter().any(|n| n == s) {
            return Err(UsageError(format!("stack view {s} is not among --views")).into());
        }
    }
    Ok(intersect_views(views)?)
}

pub fn mel_extract(args: &MelExtractArgs, file: &FileConfig) -> Result<()> {
    let mut config: MelConfig = file.mel.clone();
    if let Some(v) = args.sample_rate {
        config.sample_rate = v;
    }
    if let Some(v) = args.win_length {
        config.win_length = v;
    }
    if let Some(v) = args.hop_length {
        config.hop_length = v;
    }
    if let Some(v) = args.n_fft {
        config.n_fft = v;
    }
    if let Some(v) = args.n_mels {
        config.n_mels = v;
    }
    config.validate()?;
    psr_core::mel::mel_filterbank(&config)?;
    ensure_not_input(&args.out_dir, &[&args.wav_dir])?;

    let mut wavs: Vec<PathBuf> = fs::read_dir(&args.wav_dir)
        .map_err(|e| UsageError(format!("cannot read {}: {e}", args.wav_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| x.eq_ignore_ascii_case("wav"))
        })
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(UsageError(format!("no .wav files in {}", args.wav_dir.display())).into());
    }
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;

    let mut manifest = Manifest {
        views: vec![args.view.clone()],
        root: args.out_dir.clone(),
        ..Default::default()
    };
    for wav in &wavs {
        let id = wav.file_stem().and_then(|s| s.to_str()).context("non-UTF-8 file name")?.to_string();
        let tensor = extract_mel(wav, &config).with_context(|| format!("extracting {}", wav.display()))?;
        let rel = format!("{id}.psrf");
        write_feature_file(args.out_dir.join(&rel), &tensor)?;
        let mut entry = UtteranceEntry::default();
        entry.paths.insert(args.view.clone(), rel);
        manifest.utterances.insert(id, entry);
    }
    manifest.save(args.out_dir.join("manifest.json"))?;
    write_json(&args.out_dir.join("mel_config.json"), &config)?;
    println!("extracted {} files into {}", wavs.len(), args.out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct GccaOutput<'a> {
    toolkit_version: &'a str,
    config: &'a GccaSettings,
    views: &'a [String],
    n_utterances: usize,
    rank: usize,
    eigenvalues: &'a [f64],
    objective: f64,
    eigen_objective: f64,
    orthonormality_error: f64,
    /// Column order of `G`.
    utt_ids: &'a [String],
    means: BTreeMap<&'a str, Vec<f64>>,
    g_file: String,
    projection_files: BTreeMap<&'a str, String>,
}

fn matrix_tensor(m: &nalgebra::DMatrix<f64>) -> Result<FeatureTensor> {
    let rows: Vec<Vec<f32>> = m.row_iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect();
    Ok(FeatureTensor::new(vec![m.nrows(), m.ncols()], rows.concat())?)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("solution");
    out.with_file_name(format!("{stem}.{suffix}"))
}

pub fn gcca(args: &GccaArgs, file: &FileConfig) -> Result<()> {
    let mut settings = file.gcca.clone();
    if let Some(r) = args.rank {
        settings.rank = r;
    }
    if let Some(e) = args.eps {
        settings.eps = e;
    }
    if settings.rank == 0 {
        return Err(UsageError("rank must be >= 1".into()).into());
    }
    if !(settings.eps >= 0.0) || !settings.eps.is_finite() {
        return Err(UsageError(format!("eps must be >= 0, got {}", settings.eps)).into());
    }
    if args.views.len() < 2 {
        return Err(UsageError("gcca needs at least 2 views".into()).into());
    }
    ensure_not_input(&args.out, &[&args.manifest])?;
    let manifest = load_manifest(&args.manifest)?;
    let ds = load_aligned(&manifest, &args.views, None)?;
    info!("gcca over {} utterances, rank {}", ds.n_utts(), settings.rank);
    let sol: GccaSolution = solve_gcca(&ds, settings.rank, settings.eps)?;

    create_parent(&args.out)?;
    let g_path = sibling(&args.out, "G.psrf");
    write_feature_file(&g_path, &matrix_tensor(&sol.g)?)?;
    let mut projection_files = BTreeMap::new();
    let mut means = BTreeMap::new();
    for (j, view) in ds.views().iter().enumerate() {
        let p = sibling(&args.out, &format!("U.{}.psrf", view.name));
        write_feature_file(&p, &matrix_tensor(&sol.projections[j])?)?;
        projection_files.insert(view.name.as_str(), file_name(&p));
        means.insert(view.name.as_str(), sol.means[j].iter().copied().collect());
    }
    let names = ds.names();
    let out = GccaOutput {
        toolkit_version: psr_core::VERSION,
        config: &settings,
        views: &names,
        n_utterances: ds.n_utts(),
        rank: sol.rank(),
        eigenvalues: &sol.eigenvalues,
        objective: sol.objective,
        eigen_objective: sol.eigen_objective(),
        orthonormality_error: sol.orthonormality_error(),
        utt_ids: ds.utt_ids(),
        means,
        g_file: file_name(&g_path),
        projection_files,
    };
    write_json(&args.out, &out)?;
    println!(
        "gcca: {} views, {} utterances, rank {}, objective {:.6}",
        names.len(),
        ds.n_utts(),
        sol.rank(),
        sol.objective
    );
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Output of `layer-fit`, also accepted by `layer-report`, `dgcca-train`
/// and `psr`.
#[derive(Debug, Serialize, Deserialize)]
pub struct LayerFitOutput {
    pub toolkit_version: String,
    pub stack_view: String,
    pub target_view: String,
    pub n_utterances: usize,
    pub config: LayerFitConfig,
    pub weights: LayerWeights,
    pub history: Vec<f64>,
}

fn read_layer_weights(path: &Path) -> Result<LayerWeights> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let out: LayerFitOutput = serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("{} is not a layer-fit weights file: {e}", path.display())))?;
    out.weights.validate()?;
    Ok(out.weights)
}

fn train_and_save(
    manifest: &Manifest,
    views: &[String],
    config: &DgccaTrainConfig,
    stack: Option<(String, LayerWeights)>,
) -> Result<ModelFile> {
    let ds = load_aligned(manifest, views, stack.as_ref().map(|(s, w)| (s.as_str(), w)))?;
    info!("training on {} utterances", ds.n_utts());
    let model = train(&ds, config)?;
    Ok(ModelFile {
        model,
        layer_weights: stack.into_iter().collect(),
    })
}

pub fn dgcca_train(args: &DgccaTrainArgs, file: &FileConfig, seed: Option<u64>) -> Result<()> {
    let config = file.train_config(seed, &args.train);
    config.validate()?;
    if args.views.len() < 2 {
        return Err(UsageError("dgcca-train needs at least 2 views".into()).into());
    }
    ensure_not_input(&args.out, &[&args.manifest])?;
    let stack = match (&args.stack_view, &args.layer_weights) {
        (Some(v), Some(p)) => Some((v.clone(), read_layer_weights(p)?)),
        _ => None,
    };
    let manifest = load_manifest(&args.manifest)?;
    let saved = train_and_save(&manifest, &args.views, &config, stack)?;
    write_model(&args.out, &saved)?;
    if let Some(p) = &args.loss_curve {
        let csv = emit_plot_data(&PlotSource::LossHistory(&saved.model.loss_history), PlotKind::LossCurve)?;
        write_text(p, &csv)?;
    }
    println!(
        "dgcca-train: {} epochs, objective {:.6} -> {:.6}",
        saved.model.loss_history.len(),
        saved.model.initial_loss,
        saved.model.solution.objective
    );
    Ok(())
}

pub fn psr(args: &PsrArgs, file: &FileConfig, seed: Option<u64>) -> Result<()> {
    let config = PsrConfig {
        train: file.train_config(seed, &args.train),
        eps_floor: args.eps_floor.unwrap_or(file.psr.eps_floor),
        pairwise_runs: args.pairwise_runs || file.psr.pairwise_runs,
    };
    config.validate()?;
    ensure_not_input(&args.out, &[&args.manifest])?;
    let weights = args.layer_weights.as_deref().map(read_layer_weights).transpose()?;
    let manifest = load_manifest(&args.manifest)?;
    let views = PsrViews {
        ssl: args.ssl_view.clone(),
        mel: args.mel_view.clone(),
        text: args.text_view.clone(),
    };
    info!(
        "psr over {} utterances, {} training",
        manifest.utterances.len(),
        if config.pairwise_runs { "pairwise" } else { "joint" }
    );
    let run = run_psr_pipeline(&manifest, &views, &config, weights.as_ref())?;
    write_json(&args.out, &run.report)?;
    if let Some(p) = &args.scores_csv {
        write_text(p, &emit_plot_data(&PlotSource::Psr(&run.report), PlotKind::PsrScores)?)?;
    }
    println!(
        "psr: {:.4}% over {} utterances ({} floored)",
        run.report.psr_percent, run.report.n, run.report.n_floored
    );
    Ok(())
}

pub fn layer_fit(args: &LayerFitArgs, file: &FileConfig) -> Result<()> {
    let mut config = file.layer_fit.clone();
    if let Some(v) = args.rank {
        config.rank = v;
    }
    if let Some(v) = args.step_size {
        config.step_size = v;
    }
    if let Some(v) = args.steps {
        config.steps = v;
    }
    config.validate()?;
    ensure_not_input(&args.out, &[&args.manifest])?;
    let manifest = load_manifest(&args.manifest)?;
    let target = load_view(&manifest, &args.target_view, Pooling::Mean)?;
    let stacks = load_layer_stacks(&manifest, &args.stack_view)?;
    let mut ids: Vec<String> = stacks
        .iter()
        .map(|(id, _)| id.clone())
        .filter(|id| target.utt_ids.binary_search(id).is_ok())
        .collect();
    ids.sort();
    let target: ViewMatrix = target.select(&ids)?;
    let by_id: BTreeMap<String, FeatureTensor> = stacks.into_iter().collect();
    let aligned: Vec<FeatureTensor> = ids.iter().map(|id| by_id[id].clone()).collect();
    let fit = fit_layer_weights(&aligned, &target, &config)?;
    let out = LayerFitOutput {
        toolkit_version: psr_core::VERSION.into(),
        stack_view: args.stack_view.clone(),
        target_view: args.target_view.clone(),
        n_utterances: ids.len(),
        config,
        weights: fit.weights,
        history: fit.history,
    };
    write_json(&args.out, &out)?;
    if let Some(p) = &args.plot {
        let labels: Vec<String> = (0..out.weights.len()).map(|i| i.to_string()).collect();
        let source = PlotSource::LayerWeights {
            weights: &out.weights,
            labels: &labels,
        };
        write_text(p, &emit_plot_data(&source, PlotKind::LayerWeights)?)?;
    }
    println!(
        "layer-fit: {} layers, argmax {}, objective {:.6} -> {:.6}",
        out.weights.len(),
        out.weights.argmax(),
        out.history.first().copied().unwrap_or(f64::NAN),
        out.history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

/// `a..b` (inclusive, integer labels) or a comma-separated list.
pub fn parse_labels(text: &str) -> Result<Vec<String>> {
    if let Some((a, b)) = text.split_once("..") {
        let parse = |s: &str| {
            s.trim()
                .parse::<i64>()
                .map_err(|_| UsageError(format!("bad label range {text:?}")))
        };
        let (a, b) = (parse(a)?, parse(b)?);
        if b < a {
            return Err(UsageError(format!("empty label range {text:?}")).into());
        }
        return Ok((a..=b).map(|i| i.to_string()).collect());
    }
    Ok(text.split(',').map(|s| s.trim().to_string()).collect())
}

pub fn layer_report(args: &LayerReportArgs) -> Result<()> {
    ensure_not_input(&args.out, &[&args.weights])?;
    let is_model = args.weights.extension().and_then(|e| e.to_str()) == Some("psrm");
    let weights = if is_model {
        let model = read_model(&args.weights)?;
        let mut sets = model.layer_weights;
        match &args.view {
            Some(v) => sets
                .into_iter()
                .find(|(name, _)| name == v)
                .map(|(_, w)| w)
                .ok_or_else(|| UsageError(format!("model holds no layer weights for view {v}")))?,
            None if sets.len() == 1 => sets.remove(0).1,
            None if sets.is_empty() => bail!(UsageError(format!(
                "{} holds no layer weights",
                args.weights.display()
            ))),
            None => bail!(UsageError("model holds several weight sets; pass --view".into())),
        }
    } else {
        read_layer_weights(&args.weights)?
    };
    let labels = match &args.labels {
        Some(s) => parse_labels(s)?,
        None => (0..weights.len()).map(|i| i.to_string()).collect(),
    };
    let labels: Vec<String> = labels.iter().map(|l| csv_field(l)).collect();
    let rows = weight_report(&weights, &labels)?;
    write_text(&args.out, &report_csv(&rows))?;
    let top = &rows[weights.argmax()];
    println!("layer-report: {} layers, max at {} ({:.4})", rows.len(), top.label, top.weight);
    Ok(())
}

pub fn lingdist(args: &LingdistArgs) -> Result<()> {
    let inputs: Vec<&Path> = args.lists.iter().map(PathBuf::as_path).collect();
    ensure_not_input(&args.out, &inputs)?;
    let mut lists = Vec::with_capacity(args.lists.len());
    for p in &args.lists {
        let l = WordList::load(p).map_err(|e| UsageError(format!("{}: {e}", p.display())))?;
        lists.push(if args.fold_case { l.fold_case() } else { l });
    }
    let mut out = String::new();
    match args.metric {
        Metric::Ldn => {
            out.push_str("list_a,list_b,concept,word_a,word_b,ldn\n");
            for (i, a) in lists.iter().enumerate() {
                for b in &lists[i + 1..] {
                    for (concept, d) in ldn_by_concept(a, b)? {
                        out.push_str(&format!(
                            "{},{},{},{},{},{d}\n",
                            csv_field(&a.language_id),
                            csv_field(&b.language_id),
                            csv_field(&concept),
                            csv_field(&a.entries[&concept]),
                            csv_field(&b.entries[&concept]),
                        ));
                    }
                }
            }
        }
        Metric::Ldnd => {
            out.push_str("list_a,list_b,ldnd\n");
            for (i, a) in lists.iter().enumerate() {
                for b in &lists[i + 1..] {
                    out.push_str(&format!(
                        "{},{},{}\n",
                        csv_field(&a.language_id),
                        csv_field(&b.language_id),
                        ldnd(a, b)?
                    ));
                }
            }
        }
    }
    write_text(&args.out, &out)?;
    println!("lingdist: {} lists compared", lists.len());
    Ok(())
}

/// Every failure here is a validation failure.
pub fn validate_manifest(args: &ValidateManifestArgs) -> Result<()> {
    let check = || -> Result<(Manifest, usize)> {
        let manifest = load_manifest(&args.manifest)?;
        let mut files = 0;
        for view in &manifest.views {
            let mut first: Option<Vec<usize>> = None;
            for (id, path) in manifest.files_for_view(view)? {
                let t = read_feature_file(&path).with_context(|| format!("view {view}, utterance {id}"))?;
                let mut key = t.shape().to_vec();
                // time axis may vary; everything else must agree
                if key.len() >= 2 {
                    let time = key.len() - 2;
                    key[time] = 0;
                }
                match &first {
                    None => first = Some(key),
                    Some(k) if *k != key => bail!(
                        "view {view}, utterance {id}: shape {:?} is inconsistent with the view",
                        t.shape()
                    ),
                    _ => {}
                }
                files += 1;
            }
        }
        Ok((manifest, files))
    };
    let (manifest, files) = check().map_err(|e| UsageError(format!("{e:#}")))?;
    println!(
        "manifest OK: views={} utterances={} files={}",
        manifest.views.join(","),
        manifest.utterances.len(),
        files
    );
    Ok(())
}
