use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::textgrid::{AlignmentIntervals, TextGridOptions};
use crate::{Result, TtsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProsodyCategory {
    Low,
    Normal,
    High,
}

impl fmt::Display for ProsodyCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Low => "low",
            Self::Normal => "normal",
            Self::High => "high",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProsodyThresholds {
    pub t_low: f64,
    pub t_high: f64,
}

impl ProsodyThresholds {
    pub fn new(t_low: f64, t_high: f64) -> Result<Self> {
        if t_low.is_nan() || t_high.is_nan() || t_low >= t_high {
            return Err(TtsError::InvalidInput(format!("thresholds ({t_low}, {t_high}) are not increasing")));
        }
        Ok(Self { t_low, t_high })
    }
}

pub const THRESHOLD_NOTE: &str = "prosody thresholds: per-speaker ground-truth tertiles of mean phone duration";

/// Mean duration in seconds of the non-silence intervals.
pub fn phone_mean_duration(a: &AlignmentIntervals, opts: &TextGridOptions) -> Result<f64> {
    let kept: Vec<f64> = a
        .intervals
        .iter()
        .filter(|i| !opts.silence_labels.contains(i.label.as_str()))
        .map(|i| i.duration())
        .collect();
    if kept.is_empty() {
        return Err(TtsError::InvalidInput(format!(
            "{}: every interval is silence",
            a.source.display()
        )));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Linear-interpolation 1/3 and 2/3 quantiles.
pub fn tertile_thresholds(values: &[f64]) -> Result<ProsodyThresholds> {
    if values.len() < 3 {
        return Err(TtsError::InvalidInput(format!(
            "{} values; tertiles need at least 3",
            values.len()
        )));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    ProsodyThresholds::new(quantile(&v, 1.0 / 3.0), quantile(&v, 2.0 / 3.0))
}

pub fn categorize_prosody(mean_dur: f64, t: &ProsodyThresholds) -> ProsodyCategory {
    if mean_dur < t.t_low {
        ProsodyCategory::Low
    } else if mean_dur > t.t_high {
        ProsodyCategory::High
    } else {
        ProsodyCategory::Normal
    }
}

pub fn prosody_accuracy(pred: &[ProsodyCategory], gt: &[ProsodyCategory]) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(TtsError::InvalidInput("empty category set".into()));
    }
    if pred.len() != gt.len() {
        return Err(TtsError::InvalidInput(format!(
            "{} predictions for {} references",
            pred.len(),
            gt.len()
        )));
    }
    let hits = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// One utterance of the prosody comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsodyItem {
    pub speaker: u32,
    pub gt_mean: f64,
    pub pred_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProsodyResult {
    pub accuracy: f64,
    pub thresholds: BTreeMap<u32, ProsodyThresholds>,
    pub gt: Vec<ProsodyCategory>,
    pub pred: Vec<ProsodyCategory>,
}

/// Thresholds from each speaker's ground truth, applied to both sides.
pub fn prosody_evaluation(items: &[ProsodyItem]) -> Result<ProsodyResult> {
    if items.is_empty() {
        return Err(TtsError::InvalidInput("empty category set".into()));
    }
    let mut by_speaker: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for it in items {
        by_speaker.entry(it.speaker).or_default().push(it.gt_mean);
    }
    let thresholds = by_speaker
        .into_iter()
        .map(|(s, v)| {
            tertile_thresholds(&v)
                .map(|t| (s, t))
                .map_err(|e| TtsError::InvalidInput(format!("speaker {s}: {e}")))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let gt: Vec<_> = items.iter().map(|i| categorize_prosody(i.gt_mean, &thresholds[&i.speaker])).collect();
    let pred: Vec<_> = items.iter().map(|i| categorize_prosody(i.pred_mean, &thresholds[&i.speaker])).collect();
    Ok(ProsodyResult {
        accuracy: prosody_accuracy(&pred, &gt)?,
        thresholds,
        gt,
        pred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textgrid::Interval;
    use std::path::PathBuf;

    fn grid(spans: &[(&str, f64)]) -> AlignmentIntervals {
        let mut t = 0.0;
        let intervals = spans
            .iter()
            .map(|&(l, d)| {
                let i = Interval {
                    label: l.into(),
                    start: t,
                    end: t + d,
                };
                t += d;
                i
            })
            .collect();
        AlignmentIntervals {
            intervals,
            source: PathBuf::from("x.TextGrid"),
            speaker_id: None,
        }
    }

    #[test]
    fn mean_duration() {
        let o = TextGridOptions::default();
        let m = phone_mean_duration(&grid(&[("a", 0.1), ("b", 0.2), ("c", 0.3)]), &o).unwrap();
        assert!((m - 0.2).abs() < 1e-12);
        assert!((phone_mean_duration(&grid(&[("a", 0.25)]), &o).unwrap() - 0.25).abs() < 1e-12);
        let m = phone_mean_duration(&grid(&[("sil", 1.0), ("a", 0.1), ("sp", 2.0), ("b", 0.3)]), &o).unwrap();
        assert!((m - 0.2).abs() < 1e-12);
        assert!(phone_mean_duration(&grid(&[("sil", 1.0)]), &o).is_err());
    }

    #[test]
    fn categories_and_accuracy() {
        let t = ProsodyThresholds::new(0.1, 0.2).unwrap();
        assert_eq!(categorize_prosody(0.05, &t), ProsodyCategory::Low);
        assert_eq!(categorize_prosody(0.1, &t), ProsodyCategory::Normal);
        assert_eq!(categorize_prosody(0.25, &t), ProsodyCategory::High);
        assert!(ProsodyThresholds::new(0.2, 0.2).is_err());
        assert!(prosody_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn tertiles_split_in_thirds() {
        let gt_means: Vec<f64> = (0..9).map(|i| 0.05 + 0.01 * i as f64).collect();
        let items: Vec<ProsodyItem> = gt_means
            .iter()
            .map(|&m| ProsodyItem {
                speaker: 0,
                gt_mean: m,
                pred_mean: m,
            })
            .collect();
        let r = prosody_evaluation(&items).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for c in [ProsodyCategory::Low, ProsodyCategory::Normal, ProsodyCategory::High] {
            assert_eq!(r.gt.iter().filter(|&&g| g == c).count(), 3);
        }
        let normal = vec![ProsodyCategory::Normal; 9];
        assert!((prosody_accuracy(&normal, &r.gt).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }
}
