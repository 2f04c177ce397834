//! Monotonic alignment search and duration bookkeeping.

use candle_core::{DType, Tensor};

use crate::{Result, TtsError};

/// Hard monotonic text-to-frame alignment, stored as the phoneme index of
/// every frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMatrix {
    text_len: usize,
    assignment: Vec<usize>,
}

impl AlignmentMatrix {
    /// Validates that frames start at phoneme 0, end at the last phoneme and
    /// advance by at most one phoneme per frame.
    pub fn from_assignment(text_len: usize, assignment: Vec<usize>) -> Result<Self> {
        let bad = |why: &str| TtsError::InvalidInput(format!("invalid alignment: {why}"));
        if text_len == 0 || assignment.len() < text_len {
            return Err(bad("fewer frames than phonemes"));
        }
        if assignment[0] != 0 || *assignment.last().expect("non-empty") != text_len - 1 {
            return Err(bad("must start at the first and end at the last phoneme"));
        }
        for w in assignment.windows(2) {
            if w[1] < w[0] || w[1] > w[0] + 1 {
                return Err(bad("non-monotone step"));
            }
        }
        Ok(Self { text_len, assignment })
    }

    pub fn text_len(&self) -> usize {
        self.text_len
    }

    pub fn frames(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Binary `text_len x frames` matrix.
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut a = vec![vec![0u8; self.frames()]; self.text_len];
        for (j, &i) in self.assignment.iter().enumerate() {
            a[i][j] = 1;
        }
        a
    }

    pub fn from_durations(d: &DurationSequence) -> Self {
        let assignment = d
            .values()
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| std::iter::repeat_n(i, n as usize))
            .collect();
        Self {
            text_len: d.len(),
            assignment,
        }
    }
}

/// Frames per phoneme, all at least one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DurationSequence {
    d: Vec<u32>,
}

impl DurationSequence {
    pub fn new(d: Vec<u32>) -> Result<Self> {
        if d.is_empty() {
            return Err(TtsError::InvalidInput("empty duration sequence".into()));
        }
        if let Some(pos) = d.iter().position(|&v| v == 0) {
            return Err(TtsError::InvalidInput(format!("duration {pos} is zero")));
        }
        Ok(Self { d })
    }

    pub fn values(&self) -> &[u32] {
        &self.d
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn total(&self) -> usize {
        self.d.iter().map(|&v| v as usize).sum()
    }

    /// Inference rule: `ceil(exp(log_d))`, at least 1.
    pub fn from_log_durations(log_d: &[f64]) -> Result<Self> {
        let d = log_d
            .iter()
            .map(|&l| {
                if !l.is_finite() {
                    return Err(TtsError::NonFinite("log duration".into()));
                }
                // guard against exp(ln n) landing a hair above the integer n
                let e = l.exp();
                let r = e.round();
                let v = if (e - r).abs() < 1e-9 { r } else { e.ceil() };
                Ok(v.clamp(1.0, u32::MAX as f64) as u32)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(d)
    }
}

pub fn durations_from_alignment(a: &AlignmentMatrix) -> DurationSequence {
    let mut d = vec![0u32; a.text_len()];
    for &i in a.assignment() {
        d[i] += 1;
    }
    DurationSequence { d }
}

/// Sum of `log_lik[i][j]` over aligned cells.
pub fn alignment_score(log_lik: &[Vec<f64>], a: &AlignmentMatrix) -> f64 {
    a.assignment().iter().enumerate().map(|(j, &i)| log_lik[i][j]).sum()
}

/// Best monotone, surjective alignment of `log_lik` (`text_len x frames`).
/// On exact ties the frame goes to the later phoneme.
pub fn mas_align(log_lik: &[Vec<f64>]) -> Result<AlignmentMatrix> {
    let text_len = log_lik.len();
    let frames = log_lik.first().map_or(0, |r| r.len());
    if text_len == 0 || frames < text_len {
        return Err(TtsError::NoAlignment { text_len, frames });
    }
    if log_lik.iter().any(|r| r.len() != frames) {
        return Err(TtsError::Shape("ragged log-likelihood matrix".into()));
    }
    let neg = f64::NEG_INFINITY;
    let mut q = vec![vec![neg; frames]; text_len];
    for j in 0..frames {
        let lo = (text_len + j).saturating_sub(frames);
        let hi = j.min(text_len - 1);
        for i in lo..=hi {
            let best_prev = if j == 0 {
                0.0
            } else {
                let stay = q[i][j - 1];
                let advance = if i > 0 { q[i - 1][j - 1] } else { neg };
                stay.max(advance)
            };
            q[i][j] = best_prev + log_lik[i][j];
        }
    }
    let mut assignment = vec![0usize; frames];
    let mut i = text_len - 1;
    for j in (0..frames).rev() {
        assignment[j] = i;
        if j == 0 {
            break;
        }
        if i > 0 && (i == j || q[i - 1][j - 1] > q[i][j - 1]) {
            i -= 1;
        }
    }
    let a = AlignmentMatrix::from_assignment(text_len, assignment)?;
    debug_assert_eq!(durations_from_alignment(&a).total(), frames);
    Ok(a)
}

/// Gaussian log-density of every latent frame under every phoneme's prior,
/// `text_len x frames`. Inputs are `(1, channels, len)` and detached.
pub fn gaussian_log_likelihood(z_p: &Tensor, m_p: &Tensor, logs_p: &Tensor) -> Result<Vec<Vec<f64>>> {
    let z = z_p.detach().to_dtype(DType::F64)?.squeeze(0)?;
    let m = m_p.detach().to_dtype(DType::F64)?.squeeze(0)?;
    let ls = logs_p.detach().to_dtype(DType::F64)?.squeeze(0)?;
    if z.dim(0)? != m.dim(0)? || m.dims() != ls.dims() {
        return Err(TtsError::Shape(format!(
            "latent {:?} vs prior {:?}/{:?}",
            z.dims(),
            m.dims(),
            ls.dims()
        )));
    }
    let inv_var = (ls.affine(-2.0, 0.0)?).exp()?;
    let c1 = (ls.neg()? - 0.5 * (2.0 * std::f64::consts::PI).ln())?.sum(0)?.unsqueeze(1)?;
    let c2 = inv_var.t()?.matmul(&z.sqr()?)?.affine(-0.5, 0.0)?;
    let c3 = (&m * &inv_var)?.t()?.matmul(&z)?;
    let c4 = (m.sqr()? * &inv_var)?.sum(0)?.affine(-0.5, 0.0)?.unsqueeze(1)?;
    let ll = c2.broadcast_add(&c1)?.add(&c3)?.broadcast_add(&c4)?;
    Ok(ll.to_vec2::<f64>()?)
}

/// Repeats position `i` of `h` (`(batch, channels, len)`) `d_i` times.
pub fn expand_by_durations(h: &Tensor, d: &DurationSequence) -> Result<Tensor> {
    let len = h.dims3()?.2;
    if len != d.len() {
        return Err(TtsError::Shape(format!(
            "sequence of length {len} with {} durations",
            d.len()
        )));
    }
    let idx: Vec<u32> = AlignmentMatrix::from_durations(d)
        .assignment()
        .iter()
        .map(|&i| i as u32)
        .collect();
    let n = idx.len();
    Ok(h.contiguous()?.index_select(&Tensor::from_vec(idx, n, h.device())?, 2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn two_by_three_example() {
        let ll = vec![vec![0.0, -0.5, -5.0], vec![-3.0, -1.0, 0.0]];
        let a = mas_align(&ll).unwrap();
        assert_eq!(durations_from_alignment(&a).values(), &[2, 1]);
        assert_eq!(alignment_score(&ll, &a), -0.5);
        assert_eq!(a.to_dense(), vec![vec![1, 1, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn single_phoneme_takes_everything() {
        let ll = vec![vec![-1.0, 2.0, 0.3, -4.0]];
        let a = mas_align(&ll).unwrap();
        assert_eq!(durations_from_alignment(&a).values(), &[4]);
    }

    #[test]
    fn too_few_frames() {
        assert!(matches!(
            mas_align(&[vec![0.0], vec![0.0]]),
            Err(TtsError::NoAlignment { text_len: 2, frames: 1 })
        ));
    }

    #[test]
    fn ties_go_to_the_later_phoneme() {
        let ll = vec![vec![0.0; 3], vec![0.0; 3]];
        let a = mas_align(&ll).unwrap();
        assert_eq!(durations_from_alignment(&a).values(), &[1, 2]);
    }

    #[test]
    fn square_alignment_is_diagonal() {
        let ll = vec![vec![1.0; 4]; 4];
        let a = mas_align(&ll).unwrap();
        assert_eq!(durations_from_alignment(&a).values(), &[1, 1, 1, 1]);
    }

    #[test]
    fn log_duration_conversion() {
        let d = DurationSequence::from_log_durations(&[0.0, 2f64.ln(), 3.2f64.ln(), -5.0]).unwrap();
        assert_eq!(d.values(), &[1, 2, 4, 1]);
        assert!(DurationSequence::new(vec![1, 0]).is_err());
    }

    #[test]
    fn expand_and_recover() {
        let h = Tensor::new(&[[[1.0f32, 2.0]]], &Device::Cpu).unwrap();
        let d = DurationSequence::new(vec![2, 1]).unwrap();
        let e = expand_by_durations(&h, &d).unwrap();
        assert_eq!(e.to_vec3::<f32>().unwrap(), vec![vec![vec![1.0, 1.0, 2.0]]]);
        let a = AlignmentMatrix::from_durations(&d);
        assert_eq!(durations_from_alignment(&a), d);
        let ones = DurationSequence::new(vec![1, 1]).unwrap();
        assert_eq!(expand_by_durations(&h, &ones).unwrap().to_vec3::<f32>().unwrap(), h.to_vec3::<f32>().unwrap());
    }

    #[test]
    fn log_likelihood_matches_direct_sum() {
        let z = Tensor::new(&[[[0.3f64, -1.0, 2.0], [0.1, 0.5, -0.2]]], &Device::Cpu).unwrap();
        let m = Tensor::new(&[[[0.0f64, 1.0], [0.5, -0.5]]], &Device::Cpu).unwrap();
        let ls = Tensor::new(&[[[0.1f64, -0.3], [0.2, 0.0]]], &Device::Cpu).unwrap();
        let ll = gaussian_log_likelihood(&z, &m, &ls).unwrap();
        let (zv, mv, lv) = (
            z.to_vec3::<f64>().unwrap()[0].clone(),
            m.to_vec3::<f64>().unwrap()[0].clone(),
            ls.to_vec3::<f64>().unwrap()[0].clone(),
        );
        for i in 0..2 {
            for j in 0..3 {
                let mut acc = 0.0;
                for c in 0..2 {
                    let s = lv[c][i].exp();
                    acc += -0.5 * (2.0 * std::f64::consts::PI).ln() - lv[c][i]
                        - 0.5 * ((zv[c][j] - mv[c][i]) / s).powi(2);
                }
                assert!((ll[i][j] - acc).abs() < 1e-12);
            }
        }
    }
}
