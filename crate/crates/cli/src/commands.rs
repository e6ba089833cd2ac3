//! Subcommand bodies. Each takes a parsed config and an output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Context;
use fedsim::corpus_io;
use fedsim::heterogeneity::{analyze_corpus, labelled_purity, CorpusAnalysis, Recording, Waveform};
use fedsim::model::ModelShape;
use fedsim::partition;
use fedsim::synthcorpus::{generate, generate_audio, histogram, sample_count_histogram, SAMPLE_COUNT_BINS};
use log::{info, warn};
use serde::Serialize;

use crate::config::{AnalyzeConfig, ExperimentConfig, GenerateConfig, PartitionConfig, WarmupConfig};
use crate::error::{config_error, data_error};
use crate::experiment::{self, ExperimentManifest, RunOutput};
use crate::report::{self, num, write_file};

fn create_out(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write_file(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn histogram_csv(bins: &[usize]) -> anyhow::Result<Vec<u8>> {
    let rows = bins.iter().enumerate().map(|(i, n)| {
        vec![
            SAMPLE_COUNT_BINS[i].to_string(),
            SAMPLE_COUNT_BINS.get(i + 1).map(|e| e.to_string()).unwrap_or_default(),
            n.to_string(),
        ]
    });
    report::to_csv(&["bin_lo", "bin_hi", "speakers"], rows)
}

/// Writes the corpus, its config snapshot and a per-speaker table. Returns
/// the histogram of utterances per speaker as CSV (`bin_hi` is exclusive,
/// empty for the open last bin).
pub fn cmd_generate(cfg: &GenerateConfig, out: &Path) -> anyhow::Result<Vec<u8>> {
    create_out(out)?;
    let hist = match cfg {
        GenerateConfig::Features(spec) => {
            let generated = generate(spec)?;
            corpus_io::write_corpus(out, &generated.corpus)?;
            let rows = generated.speakers.iter().map(|s| {
                vec![
                    s.id.clone(),
                    s.sample_count.to_string(),
                    s.typical_length.to_string(),
                    num(s.noise_std),
                    num(s.gain_db),
                    s.noisy.to_string(),
                ]
            });
            let header = ["speaker_id", "samples", "typical_tokens", "noise_std", "gain_db", "noisy"];
            write_file(&out.join("speakers.csv"), &report::to_csv(&header, rows)?)?;
            histogram_csv(&sample_count_histogram(&generated.corpus, &SAMPLE_COUNT_BINS)?)?
        }
        GenerateConfig::Audio(spec) => {
            let audio = generate_audio(spec)?;
            corpus_io::write_audio_corpus(out, &audio)?;
            let rows = audio.utterances.iter().map(|u| {
                vec![
                    u.id.clone(),
                    u.speaker.clone(),
                    u.waveform.len().to_string(),
                    num(u.f0_hz),
                    num(u.snr_db),
                    num(u.gain_db),
                ]
            });
            let header = ["utterance_id", "speaker_id", "samples", "f0_hz", "snr_db", "gain_db"];
            write_file(&out.join("utterances.csv"), &report::to_csv(&header, rows)?)?;
            let mut per_speaker: BTreeMap<&str, usize> = BTreeMap::new();
            for u in &audio.utterances {
                *per_speaker.entry(&u.speaker).or_default() += 1;
            }
            let counts: Vec<usize> = per_speaker.into_values().collect();
            histogram_csv(&histogram(&counts, &SAMPLE_COUNT_BINS)?)?
        }
    };
    write_json(&out.join("generate.json"), cfg)?;
    write_file(&out.join("histogram.csv"), &hist)?;
    Ok(hist)
}

/// Writes `partition.json` and a per-client size table.
pub fn cmd_partition(cfg: &PartitionConfig, out: &Path) -> anyhow::Result<partition::PartitionPlan> {
    let corpus = corpus_io::read_corpus(&cfg.corpus).with_context(|| format!("reading corpus {}", cfg.corpus.display()))?;
    let plan = experiment::make_plan(&corpus, &cfg.partition, cfg.seed)?;
    plan.validate(&corpus)?;
    create_out(out)?;
    write_json(&out.join("partition.json"), &plan)?;
    let rows = plan.clients.iter().map(|c| {
        vec![
            c.client_id.to_string(),
            c.speakers.join(" "),
            c.train.len().to_string(),
            c.test.len().to_string(),
            c.no_local_test.to_string(),
        ]
    });
    let header = ["client_id", "speakers", "train_samples", "test_samples", "no_local_test"];
    write_file(&out.join("clients.csv"), &report::to_csv(&header, rows)?)?;
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WarmupReport {
    pub warmup_speakers: Vec<String>,
    pub federated_speakers: Vec<String>,
    pub train_utterances: usize,
    pub holdout_ids: Vec<String>,
    pub untrained_wer: Option<f64>,
    pub warmup_wer: Option<f64>,
}

/// Splits off the warm-up speakers, trains on them and saves `weights.f32`.
pub fn cmd_warmup(cfg: &WarmupConfig, out: &Path) -> anyhow::Result<WarmupReport> {
    let corpus = corpus_io::read_corpus(&cfg.corpus).with_context(|| format!("reading corpus {}", cfg.corpus.display()))?;
    let (warm, rest) = partition::split_warmup(&corpus, cfg.fraction, cfg.seed)?;
    let shape = ModelShape {
        vocab: corpus.vocab_size,
        dim: corpus.feature_dim,
    };
    let init = experiment::initial_weights(&cfg.init, shape, cfg.seed)?;
    if cfg.local.local_epochs > 0 {
        cfg.local.validate()?;
    }
    let (train, holdout) = experiment::split_holdout(&warm.utterances, cfg.holdout_utterances, cfg.seed);
    let (weights, untrained_wer, warmup_wer) = experiment::warmup_train(&init, &train, &holdout, &cfg.local, cfg.seed)?;
    create_out(out)?;
    corpus_io::write_weights(&out.join("weights.f32"), &weights)?;
    let report = WarmupReport {
        warmup_speakers: warm.by_speaker().into_keys().map(str::to_string).collect(),
        federated_speakers: rest.by_speaker().into_keys().map(str::to_string).collect(),
        train_utterances: train.len(),
        holdout_ids: holdout.iter().map(|u| u.id.clone()).collect(),
        untrained_wer,
        warmup_wer,
    };
    write_json(&out.join("warmup.json"), &report)?;
    Ok(report)
}

fn write_experiment(out: &Path, manifest: &ExperimentManifest, outputs: &[RunOutput]) -> anyhow::Result<()> {
    create_out(out)?;
    write_json(&out.join("manifest.json"), manifest)?;
    write_file(&out.join("rounds.csv"), &report::rounds_csv(&manifest.runs)?)?;
    write_file(&out.join("clients.csv"), &report::clients_csv(&manifest.runs)?)?;
    write_file(&out.join("summary.csv"), &report::summary_csv(&manifest.runs)?)?;
    for o in outputs {
        let name = format!("weights-{}-k{}.f32", o.record.strategy.short_name(), o.record.clients_per_round);
        corpus_io::write_weights(&out.join(name), &o.final_weights)?;
    }
    Ok(())
}

/// Runs the experiment and writes the manifest, CSVs and final weights.
pub fn cmd_federate(cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<ExperimentManifest> {
    let (manifest, outputs) = experiment::execute(cfg)?;
    write_experiment(out, &manifest, &outputs)?;
    Ok(manifest)
}

/// Reruns the experiment recorded in a manifest and fails unless the new
/// manifest is byte-identical to the recorded one.
pub fn cmd_replay(manifest_path: &Path, out: &Path) -> anyhow::Result<ExperimentManifest> {
    let recorded_text = fs::read_to_string(manifest_path)
        .map_err(|e| config_error(format!("cannot read manifest {}: {e}", manifest_path.display())))?;
    let recorded: ExperimentManifest =
        serde_json::from_str(&recorded_text).map_err(|e| config_error(format!("{}: {e}", manifest_path.display())))?;
    if recorded.tool_version != experiment::TOOL_VERSION {
        warn!(
            "manifest written by version {}, replaying with {}",
            recorded.tool_version,
            experiment::TOOL_VERSION
        );
    }
    let manifest = cmd_federate(&recorded.config, out)?;
    let replayed_text = serde_json::to_string_pretty(&manifest)? + "\n";
    if replayed_text != recorded_text {
        anyhow::bail!("replay of {} diverged from the recorded results", manifest_path.display());
    }
    Ok(manifest)
}

pub struct CorpusSide {
    pub analysis: CorpusAnalysis,
    pub recordings: usize,
    pub skipped: Vec<(String, String)>,
    pub embedding_purity: Option<f64>,
}

/// Profiles one audio corpus. Unreadable recordings are skipped and listed;
/// the call fails only if none could be read.
pub fn analyze_side(dir: &Path, cfg: &AnalyzeConfig, embeddings: Option<&Path>) -> anyhow::Result<CorpusSide> {
    let loaded = corpus_io::read_audio_corpus(dir).with_context(|| format!("reading corpus {}", dir.display()))?;
    let mut ok: Vec<(String, String, Waveform)> = Vec::new();
    let mut skipped = Vec::new();
    for r in loaded {
        match r.waveform {
            Ok(w) => ok.push((r.utterance_id, r.speaker_id, w)),
            Err(e) => {
                warn!("{}: skipping {}: {e}", dir.display(), r.utterance_id);
                skipped.push((r.utterance_id, e.to_string()));
            }
        }
    }
    if ok.is_empty() {
        return Err(data_error(format!("no readable recordings in {}", dir.display())));
    }
    let recordings: Vec<Recording<'_>> = ok
        .iter()
        .map(|(id, client, w)| Recording {
            id,
            client,
            waveform: w,
        })
        .collect();
    let analysis = analyze_corpus(&recordings, &cfg.profile)?;
    let embedding_purity = match embeddings {
        None => None,
        Some(path) => {
            let rows = corpus_io::read_embeddings(path)?;
            let points: Vec<Vec<f64>> = rows.iter().map(|r| r.vector.clone()).collect();
            let clients: Vec<&str> = rows.iter().map(|r| r.client_id.as_str()).collect();
            Some(labelled_purity(&points, &clients, cfg.profile.seed)?)
        }
    };
    info!("{}: profiled {} recordings, skipped {}", dir.display(), ok.len(), skipped.len());
    Ok(CorpusSide {
        analysis,
        recordings: ok.len(),
        skipped,
        embedding_purity,
    })
}

fn comparison_rows(a: &CorpusSide, b: &CorpusSide) -> Vec<Vec<String>> {
    let (x, y) = (&a.analysis, &b.analysis);
    let mut rows = Vec::new();
    rows.extend(report::variation_rows("loudness_db", x.loudness.as_ref(), y.loudness.as_ref()));
    rows.extend(report::variation_rows("log_hnr_db", x.log_hnr.as_ref(), y.log_hnr.as_ref()));
    rows.extend(report::variation_rows("perm_entropy", x.perm_entropy.as_ref(), y.perm_entropy.as_ref()));
    rows.extend(report::variation_rows("blind_snr_db", x.blind_snr.as_ref(), y.blind_snr.as_ref()));
    let pair = |f: &str, s: &str, u: Option<f64>, v: Option<f64>| vec![f.to_string(), s.to_string(), report::opt(u), report::opt(v)];
    rows.push(pair("clustering", "purity", x.purity, y.purity));
    rows.push(pair("clustering", "points", Some(x.purity_points as f64), Some(y.purity_points as f64)));
    rows.push(pair("clustering", "embedding_purity", a.embedding_purity, b.embedding_purity));
    rows.push(pair("corpus", "recordings", Some(a.recordings as f64), Some(b.recordings as f64)));
    rows.push(pair("corpus", "skipped", Some(a.skipped.len() as f64), Some(b.skipped.len() as f64)));
    rows
}

pub struct AnalyzeOutput {
    pub a: CorpusSide,
    pub b: CorpusSide,
    pub comparison_csv: Vec<u8>,
}

/// Writes `comparison.csv`, `profiles.csv` and `skipped.csv`.
pub fn cmd_analyze(cfg: &AnalyzeConfig, out: &Path) -> anyhow::Result<AnalyzeOutput> {
    let a = analyze_side(&cfg.corpus_a, cfg, cfg.embeddings_a.as_deref())?;
    let b = analyze_side(&cfg.corpus_b, cfg, cfg.embeddings_b.as_deref())?;
    create_out(out)?;
    let comparison_csv = report::to_csv(&report::COMPARISON_HEADER, comparison_rows(&a, &b))?;
    write_file(&out.join("comparison.csv"), &comparison_csv)?;
    let profiles = report::profile_rows("a", &a.analysis.profiles).chain(report::profile_rows("b", &b.analysis.profiles));
    write_file(&out.join("profiles.csv"), &report::to_csv(&report::PROFILES_HEADER, profiles)?)?;
    let skipped = a
        .skipped
        .iter()
        .map(|s| ("a", s))
        .chain(b.skipped.iter().map(|s| ("b", s)))
        .map(|(c, (id, e))| vec![c.to_string(), id.clone(), e.clone()]);
    write_file(&out.join("skipped.csv"), &report::to_csv(&["corpus", "utterance_id", "error"], skipped)?)?;
    Ok(AnalyzeOutput { a, b, comparison_csv })
}
