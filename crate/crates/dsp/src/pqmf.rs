//! Pseudo-QMF cosine-modulated filterbank.
//!
//! A Kaiser-windowed lowpass prototype is modulated into `num_bands`
//! analysis and synthesis filters. Filtering is centered (the input is
//! zero-padded by `taps / 2` on both sides before correlation), so an
//! analysis/synthesis round trip has zero net delay.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use crate::{DspError, Matrix, Result, Waveform};

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(len: usize, beta: f64) -> Vec<f64> {
    let m = (len - 1) as f64;
    let denom = bessel_i0(beta);
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqmfBank {
    pub num_bands: usize,
    /// Filter order; every filter has `taps + 1` coefficients.
    pub taps: usize,
    pub cutoff_ratio: f64,
    pub beta: f64,
    analysis: Matrix<f64>,
    synthesis: Matrix<f64>,
}

impl Default for PqmfBank {
    /// 16 bands: the classic 4-band prototype (order 62, cutoff 0.142,
    /// beta 9) stretched by four, order 248 and cutoff 0.0355.
    fn default() -> Self {
        Self::new(16, 248, 0.0355, 9.0).expect("static config")
    }
}

impl PqmfBank {
    pub fn new(num_bands: usize, taps: usize, cutoff_ratio: f64, beta: f64) -> Result<Self> {
        if num_bands == 0 || taps == 0 || !taps.is_multiple_of(2) {
            return Err(DspError::InvalidConfig(format!(
                "num_bands ({num_bands}) must be positive and taps ({taps}) positive and even"
            )));
        }
        if !(cutoff_ratio > 0.0 && cutoff_ratio < 1.0) {
            return Err(DspError::InvalidConfig(format!(
                "cutoff ratio {cutoff_ratio} must lie in (0, 1)"
            )));
        }
        if !num_bands.is_power_of_two() {
            log::warn!("PQMF with {num_bands} bands: non power-of-two band counts are untested");
        }
        let len = taps + 1;
        let omega = PI * cutoff_ratio;
        let window = kaiser(len, beta);
        let prototype: Vec<f64> = (0..len)
            .map(|i| {
                let n = i as f64 - taps as f64 / 2.0;
                let ideal = if i == taps / 2 {
                    cutoff_ratio
                } else {
                    (omega * n).sin() / (PI * n)
                };
                ideal * window[i]
            })
            .collect();
        let mut analysis = Matrix::zeros(num_bands, len);
        let mut synthesis = Matrix::zeros(num_bands, len);
        for k in 0..num_bands {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let freq = (2 * k + 1) as f64 * PI / (2 * num_bands) as f64;
            for (i, &h) in prototype.iter().enumerate() {
                let n = i as f64 - taps as f64 / 2.0;
                analysis[(k, i)] = 2.0 * h * (freq * n + sign * PI / 4.0).cos();
                synthesis[(k, i)] = 2.0 * h * (freq * n - sign * PI / 4.0).cos();
            }
        }
        Ok(Self {
            num_bands,
            taps,
            cutoff_ratio,
            beta,
            analysis,
            synthesis,
        })
    }

    /// `num_bands x (taps + 1)` analysis coefficients.
    pub fn analysis_filters(&self) -> &Matrix<f64> {
        &self.analysis
    }

    pub fn synthesis_filters(&self) -> &Matrix<f64> {
        &self.synthesis
    }

    /// Net delay of analysis followed by synthesis, in samples.
    pub fn round_trip_delay(&self) -> usize {
        0
    }

    /// Centered correlation: `y[n] = sum_j h[j] x[n + j - taps/2]`.
    fn correlate(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let half = self.taps / 2;
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut acc = 0.0;
                for (j, &c) in h.iter().enumerate() {
                    let idx = i as isize + j as isize - half as isize;
                    if idx >= 0 && (idx as usize) < n {
                        acc += c * x[idx as usize];
                    }
                }
                acc
            })
            .collect()
    }

    /// Splits `w` into critically decimated bands, `num_bands x len/num_bands`.
    /// Inputs whose length is not a multiple of `num_bands` are zero-padded at
    /// the end.
    pub fn analysis(&self, w: &Waveform) -> Matrix<f64> {
        let k = self.num_bands;
        let mut x = w.samples().to_vec();
        let len = x.len().div_ceil(k) * k;
        x.resize(len, 0.0);
        let sub_len = len / k;
        let mut out = Matrix::zeros(k, sub_len);
        for band in 0..k {
            let y = self.correlate(&x, self.analysis.row(band));
            for (t, v) in out.row_mut(band).iter_mut().enumerate() {
                *v = y[t * k];
            }
        }
        out
    }

    /// Recombines bands produced by [`PqmfBank::analysis`].
    pub fn synthesis(&self, bands: &Matrix<f64>, sample_rate: u32) -> Result<Waveform> {
        let k = self.num_bands;
        if bands.rows() != k {
            return Err(DspError::ShapeMismatch(format!(
                "got {} bands, filterbank has {k}",
                bands.rows()
            )));
        }
        let len = bands.cols() * k;
        let mut out = vec![0.0; len];
        let mut up = vec![0.0; len];
        for band in 0..k {
            up.iter_mut().for_each(|v| *v = 0.0);
            for (t, &v) in bands.row(band).iter().enumerate() {
                up[t * k] = v * k as f64;
            }
            let y = self.correlate(&up, self.synthesis.row(band));
            for (o, v) in out.iter_mut().zip(y) {
                *o += v;
            }
        }
        Waveform::new(out, sample_rate)
    }

    /// Writes analysis then synthesis coefficients as raw little-endian `f64`.
    pub fn write_coefficients(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for v in self.analysis.as_slice().iter().chain(self.synthesis.as_slice()) {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    /// Reads a file written by [`PqmfBank::write_coefficients`] and returns
    /// `(analysis, synthesis)`.
    pub fn read_coefficients(
        path: impl AsRef<Path>,
        num_bands: usize,
        taps: usize,
    ) -> Result<(Matrix<f64>, Matrix<f64>)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let per = num_bands * (taps + 1);
        if bytes.len() != 2 * per * 8 {
            return Err(DspError::ShapeMismatch(format!(
                "coefficient file has {} bytes, expected {}",
                bytes.len(),
                2 * per * 8
            )));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let analysis = Matrix::from_vec(num_bands, taps + 1, vals[..per].to_vec()).expect("sized");
        let synthesis = Matrix::from_vec(num_bands, taps + 1, vals[per..].to_vec()).expect("sized");
        Ok((analysis, synthesis))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kaiser_is_symmetric_and_peaks_at_one() {
        let w = kaiser(257, 10.0);
        assert!((w[128] - 1.0).abs() < 1e-12);
        for i in 0..257 {
            assert!((w[i] - w[256 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn shapes() {
        let bank = PqmfBank::default();
        let w = Waveform::silence(16000, 16000);
        let bands = bank.analysis(&w);
        assert_eq!(bands.shape(), (16, 1000));
        assert!(bands.as_slice().iter().all(|&v| v == 0.0));
        let back = bank.synthesis(&bands, 16000).unwrap();
        assert_eq!(back.len(), 16000);
        assert!(back.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ragged_length_is_zero_padded() {
        let bank = PqmfBank::default();
        let bands = bank.analysis(&Waveform::silence(1001, 16000));
        assert_eq!(bands.shape(), (16, 63));
    }

    #[test]
    fn band_count_mismatch() {
        let bank = PqmfBank::default();
        assert!(bank.synthesis(&Matrix::zeros(4, 10), 16000).is_err());
    }

    #[test]
    fn impulse_bands_are_decimated_filter_responses() {
        let bank = PqmfBank::new(4, 62, 0.142, 9.0).unwrap();
        let len = 256;
        let pos = 100;
        let mut x = vec![0.0; len];
        x[pos] = 1.0;
        let bands = bank.analysis(&Waveform::new(x, 16000).unwrap());
        // direct convolution oracle: y[n] = h[pos - n + taps/2]
        for k in 0..4 {
            let h = bank.analysis_filters().row(k);
            for t in 0..len / 4 {
                let n = (t * 4) as isize;
                let j = pos as isize - n + 31;
                let expected = if (0..63).contains(&j) { h[j as usize] } else { 0.0 };
                assert!((bands[(k, t)] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn coefficient_file_round_trip() {
        let bank = PqmfBank::new(4, 62, 0.142, 9.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pqmf.bin");
        bank.write_coefficients(&p).unwrap();
        let (a, s) = PqmfBank::read_coefficients(&p, 4, 62).unwrap();
        assert_eq!(&a, bank.analysis_filters());
        assert_eq!(&s, bank.synthesis_filters());
        assert!(PqmfBank::read_coefficients(&p, 8, 62).is_err());
    }
}
