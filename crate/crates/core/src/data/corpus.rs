//! Corpus scanning for `prepare-data`.
//!
//! Layout: `vocab.txt` at the root (one symbol per line) and
//! `speakers/<name>/<utt>.wav` with a matching `<utt>.phn` holding the
//! space-separated phoneme symbols. Speaker ids follow the sorted speaker
//! directory names.

use std::path::{Path, PathBuf};

use super::{DatasetManifest, ManifestEntry, Vocab};
use crate::{Result, TtsError};

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub clips: usize,
    pub speakers: usize,
    pub hours: f64,
    pub sample_rate: u32,
}

#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub manifest: DatasetManifest,
    pub vocab: Vocab,
    pub speaker_names: Vec<String>,
    pub summary: CorpusSummary,
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| TtsError::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

/// Validates every clip and builds a manifest whose paths are relative to
/// `manifest_dir` when possible. All invalid files are reported together.
pub fn prepare_corpus(corpus: impl AsRef<Path>, manifest_dir: impl AsRef<Path>) -> Result<PreparedCorpus> {
    let corpus = corpus.as_ref();
    let corpus = corpus.canonicalize().map_err(|e| TtsError::io(corpus, e))?;
    let corpus = corpus.as_path();
    let vocab = Vocab::read(corpus.join("vocab.txt"))?;
    let spk_root = corpus.join("speakers");
    let speakers: Vec<PathBuf> = sorted_dir(&spk_root)?.into_iter().filter(|p| p.is_dir()).collect();
    let mut entries = Vec::new();
    let mut problems = Vec::new();
    let mut samples = 0usize;
    let mut rate: Option<u32> = None;
    let mut names = Vec::new();
    for (sid, dir) in speakers.iter().enumerate() {
        names.push(dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
        for wav in sorted_dir(dir)?.into_iter().filter(|p| p.extension().is_some_and(|e| e == "wav")) {
            let phn = wav.with_extension("phn");
            let symbols = match std::fs::read_to_string(&phn) {
                Ok(t) => t,
                Err(e) => {
                    problems.push(format!("{}: {e}", phn.display()));
                    continue;
                }
            };
            let symbols: Vec<&str> = symbols.split_whitespace().collect();
            let phonemes = match vocab.encode(&symbols) {
                Ok(p) if !p.is_empty() => p,
                Ok(_) => {
                    problems.push(format!("{}: no phonemes", phn.display()));
                    continue;
                }
                Err(e) => {
                    problems.push(format!("{}: {e}", phn.display()));
                    continue;
                }
            };
            match hound::WavReader::open(&wav) {
                Ok(r) => {
                    let spec = r.spec();
                    if spec.channels != 1 {
                        problems.push(format!("{}: {} channels, expected mono", wav.display(), spec.channels));
                        continue;
                    }
                    if *rate.get_or_insert(spec.sample_rate) != spec.sample_rate {
                        problems.push(format!("{}: sample rate {} differs from the corpus", wav.display(), spec.sample_rate));
                        continue;
                    }
                    samples += r.duration() as usize;
                }
                Err(e) => {
                    problems.push(format!("{}: {e}", wav.display()));
                    continue;
                }
            }
            entries.push(ManifestEntry {
                audio_path: wav,
                speaker_id: sid as u32,
                phonemes,
            });
        }
    }
    if !problems.is_empty() {
        return Err(TtsError::Dataset(format!("invalid corpus entries: {}", problems.join("; "))));
    }
    if entries.is_empty() {
        return Err(TtsError::Dataset(format!("{}: no entries", corpus.display())));
    }
    let sample_rate = rate.unwrap_or(0);
    let manifest_dir = manifest_dir.as_ref();
    let manifest_dir = manifest_dir.canonicalize().unwrap_or_else(|_| manifest_dir.to_path_buf());
    let manifest_dir = manifest_dir.as_path();
    let root = if entries.iter().all(|e| e.audio_path.starts_with(manifest_dir)) {
        manifest_dir.to_path_buf()
    } else {
        PathBuf::new()
    };
    let used: std::collections::BTreeSet<u32> = entries.iter().map(|e| e.speaker_id).collect();
    Ok(PreparedCorpus {
        summary: CorpusSummary {
            clips: entries.len(),
            speakers: used.len(),
            hours: samples as f64 / sample_rate.max(1) as f64 / 3600.0,
            sample_rate,
        },
        manifest: DatasetManifest { entries, root },
        vocab,
        speaker_names: names,
    })
}
