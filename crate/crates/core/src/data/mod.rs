//! Manifests, datasets and batching.
//!
//! A manifest is UTF-8 text with one utterance per line:
//! `audio_path TAB speaker_id TAB space-separated phoneme ids`. Relative
//! audio paths are resolved against the manifest's directory.

mod corpus;
mod toy;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use fnh_dsp::Waveform;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use corpus::{prepare_corpus, CorpusSummary, PreparedCorpus};
pub use toy::{generate_toy_corpus, ToyCorpusConfig, ToyUtterance, TOY_SYMBOLS};

use crate::audio::read_wav;
use crate::textgrid::{parse_textgrid, TextGridOptions};
use crate::{Result, TtsError};

/// Phoneme inventory: one symbol per line, id = line index.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    symbols: Vec<String>,
}

impl Vocab {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(TtsError::Dataset("empty vocabulary".into()));
        }
        let unique: BTreeSet<&String> = symbols.iter().collect();
        if unique.len() != symbols.len() {
            return Err(TtsError::Dataset("vocabulary has duplicate symbols".into()));
        }
        Ok(Self { symbols })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TtsError::io(path, e))?;
        Self::new(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = self.symbols.join("\n");
        s.push('\n');
        std::fs::write(path, s).map_err(|e| TtsError::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.symbols.iter().position(|s| s == symbol).map(|i| i as u32)
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, symbols: &[&str]) -> Result<Vec<u32>> {
        symbols
            .iter()
            .map(|s| self.id(s).ok_or_else(|| TtsError::Dataset(format!("symbol {s:?} is not in the vocabulary"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub audio_path: PathBuf,
    pub speaker_id: u32,
    pub phonemes: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(TtsError::Dataset(format!(
                    "manifest line {}: expected 3 tab-separated fields, found {}",
                    n + 1,
                    fields.len()
                )));
            }
            let speaker_id = fields[1]
                .trim()
                .parse::<u32>()
                .map_err(|_| TtsError::Dataset(format!("manifest line {}: bad speaker id {:?}", n + 1, fields[1])))?;
            let phonemes = fields[2]
                .split_whitespace()
                .map(|t| t.parse::<u32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| TtsError::Dataset(format!("manifest line {}: bad phoneme id list", n + 1)))?;
            if phonemes.is_empty() {
                return Err(TtsError::Dataset(format!("manifest line {}: no phonemes", n + 1)));
            }
            let p = PathBuf::from(fields[0]);
            let audio_path = if p.is_absolute() { p } else { root.join(p) };
            entries.push(ManifestEntry {
                audio_path,
                speaker_id,
                phonemes,
            });
        }
        if entries.is_empty() {
            return Err(TtsError::Dataset("manifest has no entries".into()));
        }
        Ok(Self {
            entries,
            root: root.to_path_buf(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TtsError::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &root)
    }

    pub fn format(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            let rel = e.audio_path.strip_prefix(&self.root).unwrap_or(&e.audio_path);
            let ids: Vec<String> = e.phonemes.iter().map(u32::to_string).collect();
            s.push_str(&format!("{}\t{}\t{}\n", rel.display(), e.speaker_id, ids.join(" ")));
        }
        s
    }

    pub fn speakers(&self) -> usize {
        self.entries.iter().map(|e| e.speaker_id).collect::<BTreeSet<_>>().len()
    }
}

/// One decoded utterance, trimmed to a whole number of frames.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub audio_path: PathBuf,
    pub speaker_id: u32,
    pub phonemes: Vec<u32>,
    pub audio: Waveform,
    /// Per-phoneme frame counts from a sibling `.TextGrid`, if present.
    pub reference_durations: Option<Vec<u32>>,
}

impl Utterance {
    pub fn frames(&self, hop: usize) -> usize {
        self.audio.len() / hop
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<Utterance>,
    pub sample_rate: u32,
    pub hop: usize,
    pub speakers: usize,
}

/// Frame counts of an unfiltered TextGrid, one per interval.
fn reference_durations(path: &Path, sample_rate: u32, hop: usize, phonemes: usize) -> Result<Option<Vec<u32>>> {
    if !path.exists() {
        return Ok(None);
    }
    let grid = parse_textgrid(path, &TextGridOptions::unfiltered())?;
    if grid.intervals.len() != phonemes {
        return Err(TtsError::Dataset(format!(
            "{}: {} intervals for {phonemes} phonemes",
            path.display(),
            grid.intervals.len()
        )));
    }
    let rate = sample_rate as f64 / hop as f64;
    Ok(Some(
        grid.intervals
            .iter()
            .map(|iv| ((iv.end * rate).round() - (iv.start * rate).round()).max(1.0) as u32)
            .collect(),
    ))
}

impl Dataset {
    pub fn from_manifest(m: &DatasetManifest, sample_rate: u32, hop: usize) -> Result<Self> {
        let speakers = m.speakers();
        let max = m.entries.iter().map(|e| e.speaker_id).max().unwrap_or(0) as usize;
        if max + 1 != speakers {
            return Err(TtsError::Dataset(format!(
                "speaker ids must be dense from 0; found {speakers} distinct ids with maximum {max}"
            )));
        }
        let mut items = Vec::with_capacity(m.entries.len());
        for e in &m.entries {
            let audio = read_wav(&e.audio_path)?;
            if audio.sample_rate() != sample_rate {
                return Err(TtsError::Dataset(format!(
                    "{}: sample rate {} differs from the expected {sample_rate}",
                    e.audio_path.display(),
                    audio.sample_rate()
                )));
            }
            let audio = audio.truncate_to_multiple(hop);
            if audio.is_empty() {
                return Err(TtsError::Dataset(format!("{}: shorter than one frame", e.audio_path.display())));
            }
            let reference_durations =
                reference_durations(&e.audio_path.with_extension("TextGrid"), sample_rate, hop, e.phonemes.len())?;
            items.push(Utterance {
                audio_path: e.audio_path.clone(),
                speaker_id: e.speaker_id,
                phonemes: e.phonemes.clone(),
                audio,
                reference_durations,
            });
        }
        Ok(Self {
            items,
            sample_rate,
            hop,
            speakers,
        })
    }

    pub fn load(manifest: impl AsRef<Path>, sample_rate: u32, hop: usize) -> Result<Self> {
        Self::from_manifest(&DatasetManifest::read(manifest)?, sample_rate, hop)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Shuffled, length-bucketed batches for one epoch. The order depends
    /// only on `(seed, epoch)`.
    pub fn epoch_batches(&self, seed: u64, epoch: u64, batch_size: usize) -> Vec<Vec<usize>> {
        let batch_size = batch_size.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut idx: Vec<usize> = (0..self.items.len()).collect();
        idx.shuffle(&mut rng);
        let mut batches = Vec::new();
        for bucket in idx.chunks(batch_size * 4) {
            let mut b = bucket.to_vec();
            b.sort_by_key(|&i| (self.items[i].audio.len(), i));
            batches.extend(b.chunks(batch_size).map(<[usize]>::to_vec));
        }
        batches.shuffle(&mut rng);
        batches
    }
}
