//! Praat TextGrid (long text format) reading and writing.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::{Result, TtsError};

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub label: String,
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Intervals of one tier, sorted and non-overlapping.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentIntervals {
    pub intervals: Vec<Interval>,
    pub source: PathBuf,
    pub speaker_id: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct TextGridOptions {
    pub tier: String,
    /// Labels removed after parsing.
    pub silence_labels: BTreeSet<String>,
}

impl Default for TextGridOptions {
    fn default() -> Self {
        Self {
            tier: "phones".into(),
            silence_labels: default_silence_labels(),
        }
    }
}

impl TextGridOptions {
    /// Keeps every interval, silence included.
    pub fn unfiltered() -> Self {
        Self {
            silence_labels: BTreeSet::new(),
            ..Self::default()
        }
    }
}

pub fn default_silence_labels() -> BTreeSet<String> {
    ["", "sil", "sp", "spn"].into_iter().map(String::from).collect()
}

#[derive(Debug, Default)]
struct Tier {
    name: String,
    class: String,
    intervals: Vec<Interval>,
}

fn unquote(v: &str) -> String {
    let v = v.trim();
    let inner = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
    inner.replace("\"\"", "\"")
}

fn number(v: &str, line: usize) -> Result<f64> {
    v.trim()
        .parse::<f64>()
        .map_err(|_| TtsError::TextGrid(format!("line {line}: expected a number, found {v:?}")))
}

fn parse_tiers(text: &str) -> Result<Vec<Tier>> {
    if !text.contains("ooTextFile") {
        return Err(TtsError::TextGrid("not a TextGrid text file".into()));
    }
    let mut tiers: Vec<Tier> = Vec::new();
    let mut current: Option<Interval> = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with("item [") && line.ends_with(':') && !line.starts_with("item []") {
            tiers.push(Tier::default());
            continue;
        }
        if line.starts_with("intervals [") {
            current = Some(Interval {
                label: String::new(),
                start: f64::NAN,
                end: f64::NAN,
            });
            continue;
        }
        if line.starts_with("points [") {
            current = None;
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let key = key.trim();
        let Some(tier) = tiers.last_mut() else {
            continue;
        };
        match (key, current.as_mut()) {
            ("class", None) => tier.class = unquote(value),
            ("name", None) => tier.name = unquote(value),
            ("xmin", Some(iv)) => iv.start = number(value, n + 1)?,
            ("xmax", Some(iv)) => iv.end = number(value, n + 1)?,
            ("text", Some(iv)) => {
                iv.label = unquote(value);
                tier.intervals.push(current.take().expect("checked"));
            }
            _ => {}
        }
    }
    Ok(tiers)
}

/// Parses the configured interval tier of a TextGrid document.
pub fn parse_textgrid_str(text: &str, source: &Path, opts: &TextGridOptions) -> Result<AlignmentIntervals> {
    let tiers = parse_tiers(text)?;
    let tier = tiers
        .into_iter()
        .find(|t| t.name == opts.tier && t.class == "IntervalTier")
        .ok_or_else(|| TtsError::TextGrid(format!("{}: no phone tier named {:?}", source.display(), opts.tier)))?;
    let mut intervals = tier.intervals;
    for iv in &intervals {
        if !(iv.start.is_finite() && iv.end.is_finite()) || iv.end <= iv.start {
            return Err(TtsError::TextGrid(format!(
                "{}: interval {:?} has invalid bounds [{}, {}]",
                source.display(),
                iv.label,
                iv.start,
                iv.end
            )));
        }
    }
    intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
    for w in intervals.windows(2) {
        if w[1].start < w[0].end - 1e-9 {
            return Err(TtsError::TextGrid(format!(
                "{}: intervals {:?} and {:?} overlap",
                source.display(),
                w[0].label,
                w[1].label
            )));
        }
    }
    intervals.retain(|iv| !opts.silence_labels.contains(iv.label.trim()));
    Ok(AlignmentIntervals {
        intervals,
        source: source.to_path_buf(),
        speaker_id: None,
    })
}

pub fn parse_textgrid(path: impl AsRef<Path>, opts: &TextGridOptions) -> Result<AlignmentIntervals> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TtsError::io(path, e))?;
    parse_textgrid_str(&text, path, opts)
}

/// Long-format TextGrid with a single interval tier.
pub fn format_textgrid(intervals: &[Interval], tier: &str) -> String {
    let xmin = intervals.first().map_or(0.0, |i| i.start.min(0.0));
    let xmax = intervals.last().map_or(0.0, |i| i.end);
    let mut s = String::new();
    let _ = writeln!(s, "File type = \"ooTextFile\"\nObject class = \"TextGrid\"\n");
    let _ = writeln!(s, "xmin = {xmin}\nxmax = {xmax}\ntiers? <exists>\nsize = 1\nitem []:");
    let _ = writeln!(s, "    item [1]:\n        class = \"IntervalTier\"\n        name = \"{tier}\"");
    let _ = writeln!(s, "        xmin = {xmin}\n        xmax = {xmax}\n        intervals: size = {}", intervals.len());
    for (i, iv) in intervals.iter().enumerate() {
        let _ = writeln!(s, "        intervals [{}]:", i + 1);
        let _ = writeln!(s, "            xmin = {}\n            xmax = {}", iv.start, iv.end);
        let _ = writeln!(s, "            text = \"{}\"", iv.label.replace('"', "\"\""));
    }
    s
}

pub fn write_textgrid(path: impl AsRef<Path>, intervals: &[Interval], tier: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_textgrid(intervals, tier)).map_err(|e| TtsError::io(path, e))
}

/// Intervals from per-phoneme frame counts.
pub fn intervals_from_frames(labels: &[String], frames: &[u32], hop: usize, sample_rate: u32) -> Vec<Interval> {
    let sec = hop as f64 / sample_rate as f64;
    let mut t = 0u64;
    labels
        .iter()
        .zip(frames)
        .map(|(l, &f)| {
            let iv = Interval {
                label: l.clone(),
                start: t as f64 * sec,
                end: (t + f as u64) as f64 * sec,
            };
            t += f as u64;
            iv
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"File type = "ooTextFile"
Object class = "TextGrid"

xmin = 0
xmax = 0.1
tiers? <exists>
size = 1
item []:
    item [1]:
        class = "IntervalTier"
        name = "phones"
        xmin = 0
        xmax = 0.1
        intervals: size = 1
        intervals [1]:
            xmin = 0.0
            xmax = 0.1
            text = "AH"
"#;

    #[test]
    fn minimal_grid() {
        let a = parse_textgrid_str(MINIMAL, Path::new("m"), &TextGridOptions::default()).unwrap();
        assert_eq!(a.intervals.len(), 1);
        assert_eq!(a.intervals[0].label, "AH");
        assert!((a.intervals[0].duration() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn word_tier_only_is_rejected() {
        let words = MINIMAL.replace("\"phones\"", "\"words\"");
        let err = parse_textgrid_str(&words, Path::new("w"), &TextGridOptions::default()).unwrap_err();
        assert!(err.to_string().contains("no phone tier"));
    }

    #[test]
    fn overlap_is_rejected() {
        let ivs = vec![
            Interval { label: "a".into(), start: 0.0, end: 0.2 },
            Interval { label: "b".into(), start: 0.1, end: 0.3 },
        ];
        let text = format_textgrid(&ivs, "phones");
        assert!(parse_textgrid_str(&text, Path::new("o"), &TextGridOptions::default()).is_err());
    }

    #[test]
    fn silence_is_filtered_and_round_trip_holds() {
        let labels: Vec<String> = ["sil", "a", "sp", "b\"q", ""].iter().map(|s| s.to_string()).collect();
        let ivs = intervals_from_frames(&labels, &[3, 5, 2, 7, 1], 256, 22050);
        let text = format_textgrid(&ivs, "phones");
        let all = parse_textgrid_str(&text, Path::new("r"), &TextGridOptions::unfiltered()).unwrap();
        assert_eq!(all.intervals, ivs);
        let speech = parse_textgrid_str(&text, Path::new("r"), &TextGridOptions::default()).unwrap();
        let got: Vec<&str> = speech.intervals.iter().map(|i| i.label.as_str()).collect();
        assert_eq!(got, vec!["a", "b\"q"]);
    }
}
