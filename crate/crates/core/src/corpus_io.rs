//! On-disk corpus layout.
//!
//! A corpus directory holds `corpus.json` (kind, vocabulary, feature
//! dimension or sample rate), `manifest.jsonl` with one utterance per line,
//! and the referenced data files. Matrices are flat little-endian `f32`,
//! row-major, with a `.json` sidecar `{"shape": [rows, cols]}`. Audio is
//! 16-bit PCM mono WAV.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::heterogeneity::Waveform;
use crate::model::{FeatureSequence, FrameAlignment, ModelShape, ParameterVector, Transcript};
use crate::synthcorpus::AudioCorpus;

pub const META_FILE: &str = "corpus.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Features,
    Audio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusMeta {
    pub kind: CorpusKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<u32>,
}

/// One manifest line. Paths are relative to the corpus directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub speaker_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav_path: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ShapeSidecar {
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct WeightsSidecar {
    shape: Vec<usize>,
    vocab: usize,
    dim: usize,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn data_err(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {what}", path.display()))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| data_err(path, e))
}

fn write_f32_file(path: &Path, values: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for v in values {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn read_f32_file(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| data_err(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(data_err(path, format!("{} bytes is not a whole number of f32 values", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes a row-major matrix and its shape sidecar. Values are narrowed to `f32`.
pub fn write_matrix(path: &Path, values: &[f64], shape: &[usize]) -> Result<()> {
    if shape.iter().product::<usize>() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: shape.iter().product(),
            got: values.len(),
        });
    }
    write_f32_file(path, values)?;
    let sidecar = ShapeSidecar { shape: shape.to_vec() };
    fs::write(sidecar_path(path), serde_json::to_string(&sidecar)?)?;
    Ok(())
}

/// Reads a matrix written by [`write_matrix`], checking it against the sidecar.
pub fn read_matrix(path: &Path) -> Result<(Vec<f64>, Vec<usize>)> {
    let side = sidecar_path(path);
    let sidecar: ShapeSidecar =
        serde_json::from_str(&read_to_string(&side)?).map_err(|e| data_err(&side, e))?;
    let values = read_f32_file(path)?;
    let expected: usize = sidecar.shape.iter().product();
    if expected != values.len() {
        return Err(data_err(path, format!("shape {:?} needs {expected} values, found {}", sidecar.shape, values.len())));
    }
    Ok((values, sidecar.shape))
}

/// Saves weights as `f32` with a sidecar recording the model shape.
pub fn write_weights(path: &Path, weights: &ParameterVector) -> Result<()> {
    let shape = weights.shape();
    write_f32_file(path, weights.values())?;
    let sidecar = WeightsSidecar {
        shape: vec![weights.len()],
        vocab: shape.vocab,
        dim: shape.dim,
    };
    fs::write(sidecar_path(path), serde_json::to_string(&sidecar)?)?;
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<ParameterVector> {
    let side = sidecar_path(path);
    let sidecar: WeightsSidecar =
        serde_json::from_str(&read_to_string(&side)?).map_err(|e| data_err(&side, e))?;
    let values = read_f32_file(path)?;
    let shape = ModelShape {
        vocab: sidecar.vocab,
        dim: sidecar.dim,
    };
    if sidecar.shape != [values.len()] || values.len() != shape.param_count() {
        return Err(data_err(
            path,
            format!(
                "{} values do not fit a {}x{} model with biases",
                values.len(),
                shape.vocab,
                shape.dim
            ),
        ));
    }
    ParameterVector::from_values(shape, values)
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in w.samples() {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Reads a 16-bit PCM mono WAV, scaling by 1/32767 so samples written by
/// [`write_wav`] come back exactly.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(data_err(
            path,
            format!("expected 16-bit PCM mono, got {} channel(s) of {}-bit", spec.channels, spec.bits_per_sample),
        ));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| (v as f64 / 32767.0).max(-1.0)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate).map_err(|e| data_err(path, e))
}

fn write_meta_and_manifest(dir: &Path, meta: &CorpusMeta, entries: &[ManifestEntry]) -> Result<()> {
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(meta)? + "\n")?;
    let mut out = BufWriter::new(File::create(dir.join(MANIFEST_FILE))?);
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<CorpusMeta> {
    let path = dir.join(META_FILE);
    serde_json::from_str(&read_to_string(&path)?).map_err(|e| data_err(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST_FILE);
    let file = File::open(&path).map_err(|e| data_err(&path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| data_err(&path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(entries)
}

/// Writes a feature corpus under `dir`, one matrix per utterance in `features/`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir.join("features"))?;
    let mut entries = Vec::with_capacity(corpus.len());
    for u in &corpus.utterances {
        let rel = format!("features/{}.f32", u.id);
        write_matrix(&dir.join(&rel), u.features.as_flat(), &[u.features.len(), u.features.dim()])?;
        entries.push(ManifestEntry {
            utterance_id: u.id.clone(),
            speaker_id: u.speaker.clone(),
            transcript: Some(u.transcript.tokens().to_vec()),
            alignment: Some(u.alignment.labels().to_vec()),
            feature_path: Some(rel),
            wav_path: None,
        });
    }
    let meta = CorpusMeta {
        kind: CorpusKind::Features,
        vocab_size: Some(corpus.vocab_size),
        feature_dim: Some(corpus.feature_dim),
        sample_rate: None,
    };
    write_meta_and_manifest(dir, &meta, &entries)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let meta = read_meta(dir)?;
    let missing = |field: &str| data_err(&dir.join(META_FILE), format!("feature corpus lacks `{field}`"));
    if meta.kind != CorpusKind::Features {
        return Err(data_err(dir, "not a feature corpus"));
    }
    let vocab = meta.vocab_size.ok_or_else(|| missing("vocab_size"))?;
    let dim = meta.feature_dim.ok_or_else(|| missing("feature_dim"))?;
    let mut utterances = Vec::new();
    for e in read_manifest(dir)? {
        let need = |field: &str| Error::Data(format!("utterance {}: missing `{field}`", e.utterance_id));
        let rel = e.feature_path.as_deref().ok_or_else(|| need("feature_path"))?;
        let (values, shape) = read_matrix(&dir.join(rel))?;
        if shape.len() != 2 || shape[1] != dim {
            return Err(Error::Data(format!("utterance {}: feature shape {shape:?}, corpus dim {dim}", e.utterance_id)));
        }
        utterances.push(Utterance {
            features: FeatureSequence::from_flat(values, dim)?,
            transcript: Transcript::new(e.transcript.clone().ok_or_else(|| need("transcript"))?)?,
            alignment: FrameAlignment::new(e.alignment.clone().ok_or_else(|| need("alignment"))?),
            id: e.utterance_id,
            speaker: e.speaker_id,
        });
    }
    Corpus::new(vocab, dim, utterances)
}

/// Writes an audio corpus as WAV files under `dir/wav`.
pub fn write_audio_corpus(dir: &Path, corpus: &AudioCorpus) -> Result<()> {
    fs::create_dir_all(dir.join("wav"))?;
    let mut entries = Vec::with_capacity(corpus.utterances.len());
    for u in &corpus.utterances {
        let rel = format!("wav/{}.wav", u.id);
        write_wav(&dir.join(&rel), &u.waveform)?;
        entries.push(ManifestEntry {
            utterance_id: u.id.clone(),
            speaker_id: u.speaker.clone(),
            transcript: None,
            alignment: None,
            feature_path: None,
            wav_path: Some(rel),
        });
    }
    let meta = CorpusMeta {
        kind: CorpusKind::Audio,
        vocab_size: None,
        feature_dim: None,
        sample_rate: Some(corpus.sample_rate),
    };
    write_meta_and_manifest(dir, &meta, &entries)
}

/// One audio recording as listed in a manifest, loaded or failed.
#[derive(Debug)]
pub struct LoadedRecording {
    pub utterance_id: String,
    pub speaker_id: String,
    pub waveform: Result<Waveform>,
}

/// Loads every recording of an audio corpus. A line may point at a WAV file
/// or at a one-column `f32` matrix sampled at the corpus rate. Failures are
/// returned per recording rather than aborting the whole read.
pub fn read_audio_corpus(dir: &Path) -> Result<Vec<LoadedRecording>> {
    let meta = read_meta(dir)?;
    if meta.kind != CorpusKind::Audio {
        return Err(data_err(dir, "not an audio corpus"));
    }
    let rate = meta.sample_rate;
    let load = |e: &ManifestEntry| -> Result<Waveform> {
        if let Some(rel) = &e.wav_path {
            return read_wav(&dir.join(rel));
        }
        let rel = e
            .feature_path
            .as_ref()
            .ok_or_else(|| Error::Data(format!("utterance {}: no wav_path or feature_path", e.utterance_id)))?;
        let (values, shape) = read_matrix(&dir.join(rel))?;
        if shape.len() > 2 || shape.get(1).is_some_and(|&c| c != 1) {
            return Err(Error::Data(format!("utterance {}: waveform shape {shape:?} is not one column", e.utterance_id)));
        }
        let rate = rate.ok_or_else(|| data_err(&dir.join(META_FILE), "audio corpus lacks `sample_rate`"))?;
        Waveform::new(values, rate)
    };
    Ok(read_manifest(dir)?
        .into_iter()
        .map(|e| LoadedRecording {
            waveform: load(&e),
            utterance_id: e.utterance_id,
            speaker_id: e.speaker_id,
        })
        .collect())
}

/// Externally computed per-utterance vector, e.g. a speaker embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRow {
    pub utterance_id: String,
    pub client_id: String,
    pub vector: Vec<f64>,
}

/// Reads JSONL embeddings; every vector must have the same, non-zero length.
pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let file = File::open(path).map_err(|e| data_err(path, e))?;
    let mut rows: Vec<EmbeddingRow> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: EmbeddingRow =
            serde_json::from_str(&line).map_err(|e| data_err(path, format!("line {}: {e}", i + 1)))?;
        let dim = rows.first().map_or(row.vector.len(), |r| r.vector.len());
        if row.vector.is_empty() || row.vector.len() != dim {
            return Err(data_err(path, format!("line {}: vector length {} (expected {dim})", i + 1, row.vector.len())));
        }
        if row.vector.iter().any(|v| !v.is_finite()) {
            return Err(data_err(path, format!("line {}: non-finite value", i + 1)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(data_err(path, "no embeddings"));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcorpus::{generate, generate_audio, AudioSpec, CorpusSpec, SamplesLaw};

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("fedsim-io-{}-{name}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            speakers: 3,
            samples_law: SamplesLaw::Uniform { lo: 2, hi: 4 },
            vocab_size: 4,
            feature_dim: 3,
            frames_per_token: [2, 3],
            tokens_per_utterance: [1, 3],
            per_speaker_noise_std: [0.1, 0.5],
            per_speaker_gain_db: [-2.0, 2.0],
            token_skew: 1.0,
            noisy_client_fraction: 0.0,
            noisy_client_noise_multiplier: 1.0,
            speaker_offset: 0,
            seed: 4,
        }
    }

    #[test]
    fn feature_corpus_round_trip() {
        let dir = tmp("features");
        let corpus = generate(&small_spec()).unwrap().corpus;
        write_corpus(&dir, &corpus).unwrap();
        assert_eq!(read_corpus(&dir).unwrap(), corpus);
        let first = read_manifest(&dir).unwrap().remove(0);
        assert_eq!(first.utterance_id, corpus.utterances[0].id);
    }

    #[test]
    fn weights_round_trip_at_f32() {
        let dir = tmp("weights");
        let shape = ModelShape { vocab: 3, dim: 2 };
        let w = ParameterVector::random(shape, 1.0, 9);
        let path = dir.join("w.f32");
        write_weights(&path, &w).unwrap();
        let back = read_weights(&path).unwrap();
        assert_eq!(back.shape(), shape);
        for (a, b) in w.values().iter().zip(back.values()) {
            assert_eq!(*b, *a as f32 as f64);
        }
        // Reloading an already narrowed vector is exact.
        write_weights(&path, &back).unwrap();
        assert_eq!(read_weights(&path).unwrap(), back);
    }

    #[test]
    fn mismatched_sidecar_is_a_data_error() {
        let dir = tmp("sidecar");
        let path = dir.join("m.f32");
        write_matrix(&path, &[1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        fs::write(sidecar_path(&path), r#"{"shape":[3,2]}"#).unwrap();
        assert!(matches!(read_matrix(&path), Err(Error::Data(_))));
    }

    #[test]
    fn audio_corpus_round_trip_is_exact() {
        let dir = tmp("audio");
        let spec = AudioSpec {
            utterances_per_speaker: [1, 1],
            duration_s: [0.1, 0.1],
            ..AudioSpec::cv_like(2, 3)
        };
        let audio = generate_audio(&spec).unwrap();
        write_audio_corpus(&dir, &audio).unwrap();
        let back = read_audio_corpus(&dir).unwrap();
        assert_eq!(back.len(), audio.utterances.len());
        for (r, u) in back.iter().zip(&audio.utterances) {
            assert_eq!(r.waveform.as_ref().unwrap(), &u.waveform);
        }
    }

    #[test]
    fn unreadable_recording_is_reported_per_file() {
        let dir = tmp("broken");
        let spec = AudioSpec {
            utterances_per_speaker: [2, 2],
            duration_s: [0.1, 0.1],
            ..AudioSpec::ls_like(1, 3)
        };
        write_audio_corpus(&dir, &generate_audio(&spec).unwrap()).unwrap();
        let first = &read_manifest(&dir).unwrap()[0];
        fs::write(dir.join(first.wav_path.as_ref().unwrap()), b"not a wav").unwrap();
        let loaded = read_audio_corpus(&dir).unwrap();
        assert!(loaded[0].waveform.is_err());
        assert!(loaded[1].waveform.is_ok());
    }

    #[test]
    fn embeddings_require_consistent_length() {
        let dir = tmp("emb");
        let path = dir.join("e.jsonl");
        fs::write(
            &path,
            "{\"utterance_id\":\"a\",\"client_id\":\"c\",\"vector\":[1,2]}\n{\"utterance_id\":\"b\",\"client_id\":\"d\",\"vector\":[3,4]}\n",
        )
        .unwrap();
        assert_eq!(read_embeddings(&path).unwrap().len(), 2);
        fs::write(&path, "{\"utterance_id\":\"a\",\"client_id\":\"c\",\"vector\":[1,2]}\n{\"utterance_id\":\"b\",\"client_id\":\"d\",\"vector\":[3]}\n").unwrap();
        assert!(read_embeddings(&path).is_err());
    }
}
