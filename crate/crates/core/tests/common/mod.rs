//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor, Var};
use candle_nn::ops::softmax;
use fnh_tts::acoustic::{alignment_score, kl_loss, mas_align, LatentSequence};
use fnh_tts::data::{generate_toy_corpus, prepare_corpus, Dataset, ToyCorpusConfig};
use fnh_tts::moe_dp::{load_balancing_loss, Expert, FeedForwardExpert, MoeLayer, Router};
use fnh_tts::nn::{Linear, ParamStore};
use fnh_tts::training::ModelConfig;
use fnh_tts::vocoder::{Vocoder, VocoderConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn dev() -> Device {
    Device::Cpu
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| std * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    Tensor::from_vec(v, shape, &dev()).unwrap()
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

/// Central differences of a scalar function of one tensor.
pub fn numeric_grad(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Vec<f64> {
    let base = flat(x);
    let shape = x.dims().to_vec();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] += h;
            let fp = f(&Tensor::from_vec(p.clone(), shape.as_slice(), &dev()).unwrap());
            p[i] -= 2.0 * h;
            let fm = f(&Tensor::from_vec(p, shape.as_slice(), &dev()).unwrap());
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|)` over whole gradient vectors.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-300)
}

/// Analytic gradient of `f` at `x` via autograd.
fn analytic_grad(f: &dyn Fn(&Tensor) -> Tensor, x: &Tensor) -> Vec<f64> {
    let v = Var::from_tensor(x).unwrap();
    let y = f(v.as_tensor());
    let g = y.backward().unwrap();
    flat(g.get(v.as_tensor()).expect("input gets a gradient"))
}

fn scalar(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

/// Worst relative error over three seeds of the load-balancing loss
/// differentiated through the router logits.
pub fn grad_check_aux() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let logits = randn(&mut rng, &[12, 8], 1.0);
        let f = |l: &Tensor| load_balancing_loss(&softmax(l, 1).unwrap(), 0.01).unwrap().0;
        let a = analytic_grad(&f, &logits);
        let n = numeric_grad(&|l| scalar(&f(l)), &logits, 1e-6);
        worst = worst.max(relative_error(&a, &n));
    }
    worst
}

/// Worst relative error of the KL term over each of its inputs.
pub fn grad_check_kl() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shape = [1, 3, 5];
    let inputs: Vec<Tensor> = (0..5).map(|_| randn(&mut rng, &shape, 0.5)).collect();
    let logdet = randn(&mut rng, &[1], 1.0);
    let eval = |which: usize, x: &Tensor| -> Tensor {
        let mut t = inputs.clone();
        let mut ld = logdet.clone();
        if which < 5 {
            t[which] = x.clone();
        } else {
            ld = x.clone();
        }
        let post = LatentSequence {
            z: t[0].clone(),
            post_mean: t[0].clone(),
            post_logstd: t[1].clone(),
        };
        kl_loss(&post, &t[2], &t[3], &t[4], &ld).unwrap()
    };
    let mut worst: f64 = 0.0;
    // index 0 (the posterior mean) only fixes the shape: its value reaches
    // the loss through the flow output
    for which in 1..6 {
        let x = if which < 5 { inputs[which].clone() } else { logdet.clone() };
        let f = |x: &Tensor| eval(which, x);
        let a = analytic_grad(&f, &x);
        let n = numeric_grad(&|x| scalar(&f(x)), &x, 1e-6);
        worst = worst.max(relative_error(&a, &n));
    }
    worst
}

pub fn tiny_vocoder_config() -> VocoderConfig {
    VocoderConfig {
        input_dim: 6,
        speaker_dim: 4,
        blocks: 2,
        intermediate_dim: 24,
        hidden_dim: 12,
        ..VocoderConfig::desk()
    }
}

/// Relative error of `d ||vocoder(z)||^2 / dz`.
pub fn grad_check_vocoder() -> f64 {
    let ps = ParamStore::new(3, DType::F64);
    let voc = Vocoder::new(&ps, tiny_vocoder_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = randn(&mut rng, &[1, 6, 4], 1.0);
    let s = randn(&mut rng, &[1, 4], 1.0);
    let f = |z: &Tensor| voc.forward(z, &s).unwrap().sqr().unwrap().sum_all().unwrap();
    let a = analytic_grad(&f, &z);
    let n = numeric_grad(&|z| scalar(&f(z)), &z, 1e-5);
    relative_error(&a, &n)
}

/// Largest deviation between a k = N MoE layer and the explicit dense
/// mixture `sum_i p_i E_i(x)` over random instances.
pub fn dense_limit_max_error(instances: usize) -> f64 {
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..instances {
        let n = rng.random_range(2..=8usize);
        let width = rng.random_range(2..=6usize);
        let tokens = rng.random_range(1..=7usize);
        let ps = ParamStore::new(i as u64, DType::F64);
        let w = randn(&mut rng, &[n, width], 1.0);
        let b = randn(&mut rng, &[n], 0.5);
        let router = Router::from_linear(Linear::from_tensors(w.clone(), Some(b.clone())), n).unwrap();
        let experts: Vec<Arc<dyn Expert>> = (0..n)
            .map(|e| Arc::new(FeedForwardExpert::new(&ps.pp(format!("e{e}")), width, 5).unwrap()) as Arc<dyn Expert>)
            .collect();
        let layer = MoeLayer::new(router, experts.clone()).unwrap();
        let x = randn(&mut rng, &[tokens, width], 1.0);
        let s = randn(&mut rng, &[tokens, width], 1.0);
        let (y, _) = layer.forward(&x, &s).unwrap();
        let y = y.to_vec2::<f64>().unwrap();
        // dense oracle on host values
        let xs = x.to_vec2::<f64>().unwrap();
        let ss = s.to_vec2::<f64>().unwrap();
        let wv = w.to_vec2::<f64>().unwrap();
        let bv = b.to_vec1::<f64>().unwrap();
        let outs: Vec<Vec<Vec<f64>>> = experts.iter().map(|e| e.forward(&x).unwrap().to_vec2::<f64>().unwrap()).collect();
        for t in 0..tokens {
            let logits: Vec<f64> = (0..n)
                .map(|e| bv[e] + (0..width).map(|j| wv[e][j] * (xs[t][j] + ss[t][j])).sum::<f64>())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for j in 0..width {
                let dense: f64 = (0..n).map(|e| (logits[e] - mx).exp() / z * outs[e][t][j]).sum();
                worst = worst.max((dense - y[t][j]).abs());
            }
        }
    }
    worst
}

/// Best monotonic alignment score by exhaustive enumeration. Every frame is
/// assigned to a text position; assignments start at 0, end at the last
/// position and advance by 0 or 1 per frame.
pub fn brute_force_alignment_score(ll: &[Vec<f64>]) -> f64 {
    let (t, f) = (ll.len(), ll[0].len());
    fn go(ll: &[Vec<f64>], t: usize, f: usize, frame: usize, pos: usize, acc: f64, best: &mut f64) {
        let acc = acc + ll[pos][frame];
        if frame + 1 == f {
            if pos + 1 == t && acc > *best {
                *best = acc;
            }
            return;
        }
        go(ll, t, f, frame + 1, pos, acc, best);
        if pos + 1 < t {
            go(ll, t, f, frame + 1, pos + 1, acc, best);
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(ll, t, f, 0, 0, 0.0, &mut best);
    best
}

/// Number of random instances where the DP score differs from the
/// exhaustive optimum.
pub fn mas_mismatches(instances: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut bad = 0;
    for _ in 0..instances {
        let t = rng.random_range(1..=5usize);
        let f = rng.random_range(t..=8usize);
        // quarter-integers keep every sum exact in binary floating point
        let ll: Vec<Vec<f64>> = (0..t)
            .map(|_| (0..f).map(|_| rng.random_range(-40..=0i32) as f64 * 0.25).collect())
            .collect();
        let a = mas_align(&ll).unwrap();
        if alignment_score(&ll, &a) != brute_force_alignment_score(&ll) {
            bad += 1;
        }
    }
    bad
}

pub struct ToyData {
    pub dataset: Dataset,
    pub vocab: usize,
    pub speakers: usize,
}

/// Generates and loads a synthetic corpus under `dir`.
pub fn toy_data(dir: &Path, utterances: usize, seed: u64) -> ToyData {
    let cfg = ToyCorpusConfig {
        utterances,
        seed,
        ..ToyCorpusConfig::default()
    };
    generate_toy_corpus(dir, &cfg).unwrap();
    let prepared = prepare_corpus(dir, dir).unwrap();
    ToyData {
        dataset: Dataset::from_manifest(&prepared.manifest, cfg.sample_rate, cfg.hop).unwrap(),
        vocab: prepared.vocab.len(),
        speakers: cfg.speakers,
    }
}

/// Smallest sensible model, for tests that only exercise plumbing.
pub fn micro_model(vocab: usize, speakers: usize) -> ModelConfig {
    let mut m = ModelConfig::toy(vocab, speakers);
    let h = 16;
    m.speaker_dim = 8;
    m.text.hidden = h;
    m.text.filter = 32;
    m.text.layers = 1;
    m.posterior.hidden = h;
    m.posterior.latent = h;
    m.posterior.layers = 1;
    m.flow.channels = h;
    m.flow.hidden = h;
    m.duration.in_dim = h;
    m.duration.width = h;
    m.duration.speaker_dim = 8;
    m.duration.expert_hidden = 16;
    m.vocoder.input_dim = h;
    m.vocoder.speaker_dim = 8;
    m.vocoder.blocks = 1;
    m.vocoder.hidden_dim = 16;
    m.vocoder.intermediate_dim = 32;
    m.combd.channels = vec![4, 4, 4, 4];
    m.sbd.channels = 4;
    m
}
