//! Waveform discriminators and the least-squares GAN losses.
//!
//! CoMBD runs one multi-scale discriminator over the waveform at several
//! average-pooled resolutions. SBD splits the waveform into PQMF sub-bands
//! and scores groups of bands with dilated convolution stacks.

use candle_core::{DType, Tensor};
use fnh_dsp::PqmfBank;
use serde::{Deserialize, Serialize};

use crate::nn::{leaky_relu, Conv1d, ConvSpec, ParamStore};
use crate::signal::TensorPqmf;
use crate::{Result, TtsError};

const SLOPE: f64 = 0.1;

/// Score maps and intermediate activations of one discriminator, one entry
/// per scale (resolution or band group).
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    /// `(batch, 1, frames)` per scale.
    pub logits: Vec<Tensor>,
    /// Post-activation feature maps per scale, one per hidden layer.
    pub features: Vec<Vec<Tensor>>,
}

impl DiscriminatorOutput {
    pub fn scales(&self) -> usize {
        self.logits.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombdConfig {
    pub resolutions: Vec<usize>,
    pub shared_params: bool,
    pub channels: Vec<usize>,
}

impl Default for CombdConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![1, 2, 4],
            shared_params: true,
            channels: vec![16, 32, 64, 64],
        }
    }
}

/// Shortest signal, in samples at a given resolution, that the block maps
/// to at least one score frame.
pub const MIN_WINDOW: usize = 64;

#[derive(Debug, Clone)]
struct ScaleDiscriminator {
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl ScaleDiscriminator {
    fn new(ps: &ParamStore, ch: &[usize]) -> Result<Self> {
        if ch.len() != 4 {
            return Err(TtsError::Config("CoMBD block needs four channel widths".into()));
        }
        let specs = [
            (1, ch[0], ConvSpec::same(15, 1)),
            (ch[0], ch[1], ConvSpec::strided(21, 4, 10)),
            (ch[1], ch[2], ConvSpec::strided(21, 4, 10)),
            (ch[2], ch[3], ConvSpec::same(5, 1)),
        ];
        let convs = specs
            .iter()
            .enumerate()
            .map(|(i, &(a, b, s))| Conv1d::new(&ps.pp(format!("conv.{i}")), a, b, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            convs,
            post: Conv1d::new(&ps.pp("post"), ch[3], 1, ConvSpec::same(3, 1))?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut feats = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for c in &self.convs {
            h = leaky_relu(&c.forward(&h)?, SLOPE)?;
            feats.push(h.clone());
        }
        Ok((self.post.forward(&h)?, feats))
    }
}

/// Halves the rate with a 4-tap box filter (stride 2, padding 1), so a
/// length `L` signal becomes `L / 2`.
pub fn avg_pool_half(x: &Tensor) -> Result<Tensor> {
    let k = Tensor::full(0.25, (1, 1, 4), x.device())?.to_dtype(x.dtype())?;
    Ok(x.pad_with_zeros(2, 1, 1)?.conv1d(&k, 0, 2, 1, 1)?)
}

#[derive(Debug, Clone)]
pub struct Combd {
    cfg: CombdConfig,
    discs: Vec<ScaleDiscriminator>,
}

impl Combd {
    pub fn new(ps: &ParamStore, cfg: CombdConfig) -> Result<Self> {
        let r = &cfg.resolutions;
        if r.first() != Some(&1) || r.windows(2).any(|w| w[0] >= w[1]) || r.iter().any(|f| !f.is_power_of_two()) {
            return Err(TtsError::Config(format!(
                "resolutions {r:?} must be ascending powers of two starting at 1"
            )));
        }
        let discs = if cfg.shared_params {
            vec![ScaleDiscriminator::new(&ps.pp("shared"), &cfg.channels)?]
        } else {
            r.iter()
                .map(|f| ScaleDiscriminator::new(&ps.pp(format!("x{f}")), &cfg.channels))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(Self { cfg, discs })
    }

    pub fn config(&self) -> &CombdConfig {
        &self.cfg
    }

    pub fn min_length(&self) -> usize {
        self.cfg.resolutions.last().copied().unwrap_or(1) * MIN_WINDOW
    }

    /// `w`: `(batch, samples)`.
    pub fn forward(&self, w: &Tensor) -> Result<DiscriminatorOutput> {
        let (_, len) = w.dims2()?;
        if len < self.min_length() {
            return Err(TtsError::InvalidInput(format!(
                "CoMBD needs at least {} samples, got {len}",
                self.min_length()
            )));
        }
        let mut x = w.unsqueeze(1)?;
        let mut rate = 1;
        let mut out = DiscriminatorOutput {
            logits: Vec::new(),
            features: Vec::new(),
        };
        for (i, &f) in self.cfg.resolutions.iter().enumerate() {
            while rate < f {
                x = avg_pool_half(&x)?;
                rate *= 2;
            }
            let d = if self.cfg.shared_params { &self.discs[0] } else { &self.discs[i] };
            let (l, feats) = d.forward(&x)?;
            out.logits.push(l);
            out.features.push(feats);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbdConfig {
    pub pqmf_bands: usize,
    pub pqmf_taps: usize,
    pub pqmf_cutoff: f64,
    pub pqmf_beta: f64,
    pub band_groups: Vec<Vec<usize>>,
    pub dilation_ladders: Vec<Vec<usize>>,
    pub channels: usize,
    pub kernel: usize,
}

impl Default for SbdConfig {
    fn default() -> Self {
        let bank = PqmfBank::default();
        Self {
            pqmf_bands: bank.num_bands,
            pqmf_taps: bank.taps,
            pqmf_cutoff: bank.cutoff_ratio,
            pqmf_beta: bank.beta,
            band_groups: vec![(0..8).collect(), (8..16).collect(), (0..16).collect()],
            dilation_ladders: vec![vec![1, 2, 4, 8]; 3],
            channels: 32,
            kernel: 3,
        }
    }
}

#[derive(Debug, Clone)]
struct BandStack {
    index: Tensor,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

#[derive(Debug, Clone)]
pub struct Sbd {
    cfg: SbdConfig,
    pqmf: TensorPqmf,
    stacks: Vec<BandStack>,
}

impl Sbd {
    pub fn new(ps: &ParamStore, cfg: SbdConfig) -> Result<Self> {
        let bands = cfg.pqmf_bands;
        if cfg.band_groups.is_empty() || cfg.band_groups.len() != cfg.dilation_ladders.len() {
            return Err(TtsError::Config(format!(
                "{} band groups but {} dilation ladders",
                cfg.band_groups.len(),
                cfg.dilation_ladders.len()
            )));
        }
        let mut covered = vec![false; bands];
        for g in &cfg.band_groups {
            if g.is_empty() {
                return Err(TtsError::Config("empty band group".into()));
            }
            for &b in g {
                if b >= bands {
                    return Err(TtsError::Config(format!("band {b} outside 0..{bands}")));
                }
                covered[b] = true;
            }
        }
        if let Some(b) = covered.iter().position(|c| !c) {
            return Err(TtsError::Config(format!("band {b} belongs to no group")));
        }
        if cfg.dilation_ladders.iter().flatten().any(|&d| d == 0) || cfg.dilation_ladders.iter().any(|l| l.is_empty()) {
            return Err(TtsError::Config("dilations must be at least 1".into()));
        }
        let bank = PqmfBank::new(bands, cfg.pqmf_taps, cfg.pqmf_cutoff, cfg.pqmf_beta)?;
        let stacks = cfg
            .band_groups
            .iter()
            .zip(&cfg.dilation_ladders)
            .enumerate()
            .map(|(i, (g, ladder))| {
                let p = ps.pp(format!("group.{i}"));
                let idx: Vec<u32> = g.iter().map(|&b| b as u32).collect();
                let mut convs = Vec::with_capacity(ladder.len());
                let mut inp = g.len();
                for (j, &d) in ladder.iter().enumerate() {
                    convs.push(Conv1d::new(&p.pp(format!("conv.{j}")), inp, cfg.channels, ConvSpec::same(cfg.kernel, d))?);
                    inp = cfg.channels;
                }
                Ok(BandStack {
                    index: Tensor::from_vec(idx, g.len(), ps.device())?,
                    convs,
                    post: Conv1d::new(&p.pp("post"), inp, 1, ConvSpec::same(3, 1))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pqmf: TensorPqmf::new(&bank, ps.dtype(), ps.device())?,
            cfg,
            stacks,
        })
    }

    pub fn config(&self) -> &SbdConfig {
        &self.cfg
    }

    /// PQMF front end, `(batch, bands, samples / bands)`.
    pub fn bands(&self, w: &Tensor) -> Result<Tensor> {
        self.pqmf.analysis(w)
    }

    pub fn forward(&self, w: &Tensor) -> Result<DiscriminatorOutput> {
        let (_, len) = w.dims2()?;
        if len < self.cfg.pqmf_bands {
            return Err(TtsError::InvalidInput(format!(
                "SBD needs at least {} samples, got {len}",
                self.cfg.pqmf_bands
            )));
        }
        let bands = self.bands(w)?;
        let mut out = DiscriminatorOutput {
            logits: Vec::new(),
            features: Vec::new(),
        };
        for s in &self.stacks {
            let mut h = bands.index_select(&s.index, 1)?;
            let mut feats = Vec::with_capacity(s.convs.len());
            for c in &s.convs {
                h = leaky_relu(&c.forward(&h)?, SLOPE)?;
                feats.push(h.clone());
            }
            out.logits.push(s.post.forward(&h)?);
            out.features.push(feats);
        }
        Ok(out)
    }
}

/// Both discriminators under one parameter store.
#[derive(Debug, Clone)]
pub struct Discriminators {
    pub combd: Combd,
    pub sbd: Sbd,
}

impl Discriminators {
    pub fn new(ps: &ParamStore, combd: CombdConfig, sbd: SbdConfig) -> Result<Self> {
        Ok(Self {
            combd: Combd::new(&ps.pp("combd"), combd)?,
            sbd: Sbd::new(&ps.pp("sbd"), sbd)?,
        })
    }

    pub fn forward(&self, w: &Tensor) -> Result<Vec<DiscriminatorOutput>> {
        Ok(vec![self.combd.forward(w)?, self.sbd.forward(w)?])
    }
}

fn check_congruent(real: &[DiscriminatorOutput], fake: &[DiscriminatorOutput]) -> Result<()> {
    let mismatch = || TtsError::Shape("real and fake discriminator outputs differ in structure".into());
    if real.len() != fake.len() {
        return Err(mismatch());
    }
    for (r, f) in real.iter().zip(fake) {
        if r.logits.len() != f.logits.len() || r.features.len() != f.features.len() {
            return Err(mismatch());
        }
        for (a, b) in r.logits.iter().zip(&f.logits) {
            if a.dims() != b.dims() {
                return Err(mismatch());
            }
        }
        for (a, b) in r.features.iter().zip(&f.features) {
            if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.dims() != y.dims()) {
                return Err(mismatch());
            }
        }
    }
    Ok(())
}

fn zero(like: &[DiscriminatorOutput]) -> Result<Tensor> {
    let t = like
        .iter()
        .flat_map(|o| o.logits.first())
        .next()
        .ok_or_else(|| TtsError::InvalidInput("no discriminator outputs".into()))?;
    Ok(Tensor::zeros((), t.dtype(), t.device())?)
}

/// `sum mean((D(real) - 1)^2) + mean(D(fake)^2)` over all score maps.
pub fn discriminator_loss(real: &[DiscriminatorOutput], fake: &[DiscriminatorOutput]) -> Result<Tensor> {
    check_congruent(real, fake)?;
    let mut total = zero(real)?;
    for (r, f) in real.iter().zip(fake) {
        for (a, b) in r.logits.iter().zip(&f.logits) {
            total = (total + (a - 1.0)?.sqr()?.mean_all()?)?;
            total = (total + b.sqr()?.mean_all()?)?;
        }
    }
    Ok(total)
}

/// `sum mean((D(fake) - 1)^2)`.
pub fn generator_adversarial_loss(fake: &[DiscriminatorOutput]) -> Result<Tensor> {
    let mut total = zero(fake)?;
    for f in fake {
        for b in &f.logits {
            total = (total + (b - 1.0)?.sqr()?.mean_all()?)?;
        }
    }
    Ok(total)
}

/// `(L_adv, L_gen_adv)`.
pub fn adversarial_losses(real: &[DiscriminatorOutput], fake: &[DiscriminatorOutput]) -> Result<(Tensor, Tensor)> {
    Ok((discriminator_loss(real, fake)?, generator_adversarial_loss(fake)?))
}

/// Mean absolute difference per layer, averaged over every layer of every
/// scale. Real features are treated as constants.
pub fn feature_matching_loss(real: &[DiscriminatorOutput], fake: &[DiscriminatorOutput]) -> Result<Tensor> {
    check_congruent(real, fake)?;
    let mut total = zero(real)?;
    let mut layers = 0usize;
    for (r, f) in real.iter().zip(fake) {
        for (rs, fs) in r.features.iter().zip(&f.features) {
            for (a, b) in rs.iter().zip(fs) {
                total = (total + (b - a.detach())?.abs()?.mean_all()?)?;
                layers += 1;
            }
        }
    }
    if layers == 0 {
        return Err(TtsError::InvalidInput("no feature maps to match".into()));
    }
    Ok((total / layers as f64)?)
}

/// Detached copy, for the discriminator step.
pub fn detach_outputs(outs: &[DiscriminatorOutput]) -> Vec<DiscriminatorOutput> {
    outs.iter()
        .map(|o| DiscriminatorOutput {
            logits: o.logits.iter().map(|t| t.detach()).collect(),
            features: o.features.iter().map(|v| v.iter().map(|t| t.detach()).collect()).collect(),
        })
        .collect()
}

/// Largest absolute score, used as a finiteness guard in training logs.
pub fn max_abs_logit(outs: &[DiscriminatorOutput]) -> Result<f64> {
    let mut m = 0f64;
    for o in outs {
        for l in &o.logits {
            let v = l.abs()?.max_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            m = m.max(v);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn scalar_out(v: f64) -> DiscriminatorOutput {
        let t = Tensor::new(&[[[v]]], &Device::Cpu).unwrap();
        DiscriminatorOutput {
            logits: vec![t.clone()],
            features: vec![vec![t]],
        }
    }

    fn val(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn combd_scales_and_sharing() {
        let ps = ParamStore::new(1, DType::F32);
        let d = Combd::new(&ps, CombdConfig::default()).unwrap();
        let single = ParamStore::new(1, DType::F32);
        Combd::new(
            &single,
            CombdConfig {
                resolutions: vec![1],
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ps.num_params(), single.num_params());
        let w = Tensor::randn(0f32, 1.0, (1, 4096), &Device::Cpu).unwrap();
        let out = d.forward(&w).unwrap();
        let lens: Vec<usize> = out.logits.iter().map(|l| l.dims()[2]).collect();
        assert_eq!(lens, vec![256, 128, 64]);
        assert!(out.features.iter().all(|f| f.len() == 4));
        let short = Tensor::zeros((1, 200), DType::F32, &Device::Cpu).unwrap();
        assert!(d.forward(&short).is_err());

        let unshared = ParamStore::new(1, DType::F32);
        Combd::new(
            &unshared,
            CombdConfig {
                shared_params: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(unshared.num_params(), 3 * single.num_params());
    }

    #[test]
    fn combd_zero_input_gives_identical_logits_per_resolution() {
        let ps = ParamStore::new(2, DType::F64);
        let d = Combd::new(&ps, CombdConfig::default()).unwrap();
        let out = d.forward(&Tensor::zeros((1, 1024), DType::F64, &Device::Cpu).unwrap()).unwrap();
        let maps: Vec<Vec<f64>> = out.logits.iter().map(|l| l.flatten_all().unwrap().to_vec1::<f64>().unwrap()).collect();
        // pooled zero is zero, so every resolution sees the same signal; maps
        // agree frame by frame from either edge
        let n = maps.last().unwrap().len();
        for m in &maps {
            for i in 0..n / 2 {
                assert!((m[i] - maps[0][i]).abs() < 1e-12);
                assert!((m[m.len() - 1 - i] - maps[0][maps[0].len() - 1 - i]).abs() < 1e-12);
            }
            let mid = m[m.len() / 2];
            assert!((mid - maps[0][maps[0].len() / 2]).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_halves_length_and_keeps_dc() {
        let x = Tensor::ones((1, 1, 64), DType::F64, &Device::Cpu).unwrap();
        let y = avg_pool_half(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(y.len(), 32);
        assert!(y[1..31].iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn sbd_groups_and_validation() {
        let ps = ParamStore::new(3, DType::F32);
        let d = Sbd::new(&ps, SbdConfig::default()).unwrap();
        let w = Tensor::randn(0f32, 1.0, (2, 2048), &Device::Cpu).unwrap();
        let out = d.forward(&w).unwrap();
        assert_eq!(out.scales(), 3);
        assert!(out.logits.iter().all(|l| l.dims() == [2, 1, 128]));
        let bad = SbdConfig {
            band_groups: vec![(0..8).collect(), (8..17).collect(), (0..16).collect()],
            ..Default::default()
        };
        assert!(Sbd::new(&ParamStore::new(3, DType::F32), bad).is_err());
        let gap = SbdConfig {
            band_groups: vec![(0..8).collect(), (9..16).collect()],
            dilation_ladders: vec![vec![1, 2]; 2],
            ..Default::default()
        };
        assert!(Sbd::new(&ParamStore::new(3, DType::F32), gap).is_err());
    }

    #[test]
    fn lsgan_hand_cases() {
        let (adv, gen) = adversarial_losses(&[scalar_out(0.5)], &[scalar_out(0.5)]).unwrap();
        assert!((val(&adv) - 0.5).abs() < 1e-15);
        assert!((val(&gen) - 0.25).abs() < 1e-15);
        let (adv, _) = adversarial_losses(&[scalar_out(1.0)], &[scalar_out(0.0)]).unwrap();
        assert_eq!(val(&adv), 0.0);
        assert_eq!(val(&generator_adversarial_loss(&[scalar_out(1.0)]).unwrap()), 0.0);
        let two = DiscriminatorOutput {
            logits: vec![Tensor::zeros((1, 1, 1), DType::F64, &Device::Cpu).unwrap(); 2],
            features: vec![vec![]; 2],
        };
        assert!(adversarial_losses(&[scalar_out(0.5)], &[two]).is_err());
    }

    #[test]
    fn feature_matching_cases() {
        assert_eq!(val(&feature_matching_loss(&[scalar_out(0.3)], &[scalar_out(0.3)]).unwrap()), 0.0);
        assert!((val(&feature_matching_loss(&[scalar_out(0.3)], &[scalar_out(1.3)]).unwrap()) - 1.0).abs() < 1e-12);
        assert!((val(&feature_matching_loss(&[scalar_out(0.3)], &[scalar_out(0.8)]).unwrap()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sbd_front_end_puts_a_low_tone_in_band_zero() {
        let ps = ParamStore::new(3, DType::F64);
        let d = Sbd::new(&ps, SbdConfig::default()).unwrap();
        let sr = 22050.0;
        let f0 = 200.0;
        let x: Vec<f64> = (0..8192).map(|n| (2.0 * std::f64::consts::PI * f0 * n as f64 / sr).sin()).collect();
        let bands = d.bands(&Tensor::from_vec(x, (1, 8192), &Device::Cpu).unwrap()).unwrap();
        let e: Vec<f64> = bands.sqr().unwrap().sum(2).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let expected = (f0 / (sr / 2.0 / 16.0)) as usize;
        let total: f64 = e.iter().sum();
        assert_eq!(expected, 0);
        assert!(e[expected] / total >= 0.9, "{e:?}");
        assert!(e[8..].iter().sum::<f64>() / total < 1e-3);
    }
}
