use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::nn::scalar;
use crate::{Result, TtsError};

/// Differentiable generator-side terms of one batch.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub rec: Tensor,
    pub kl: Tensor,
    pub mas: Tensor,
    /// One load-balancing term per MoE block.
    pub aux: Vec<Tensor>,
    pub gen_adv: Tensor,
    pub fm: Tensor,
    pub fm_weight: f64,
}

/// Reported values. `dur = mas + aux`, `gen = gen_adv + fm_weight * fm`,
/// `total = rec + kl + dur + gen`; `adv` is the discriminator objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub rec: f64,
    pub kl: f64,
    pub mas: f64,
    pub aux: f64,
    pub dur: f64,
    pub gen_adv: f64,
    pub fm: f64,
    pub gen: f64,
    pub adv: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn sum_of_parts(&self) -> f64 {
        self.rec + self.kl + self.dur + self.gen
    }
}

fn checked(t: &Tensor, name: &str) -> Result<f64> {
    let v = scalar(t)?;
    if !v.is_finite() {
        return Err(TtsError::NonFinite(format!("loss component {name}")));
    }
    Ok(v)
}

/// Generator objective `L_rec + L_kl + L_dur + L_gen`. Any non-finite
/// component aborts with an error naming it.
pub fn total_loss(p: &LossParts) -> Result<(Tensor, LossComponents)> {
    let rec = checked(&p.rec, "rec")?;
    let kl = checked(&p.kl, "kl")?;
    let mas = checked(&p.mas, "dur/mas")?;
    let mut aux_t = p.mas.zeros_like()?;
    let mut aux = 0.0;
    for (i, a) in p.aux.iter().enumerate() {
        aux += checked(a, &format!("dur/aux[{i}]"))?;
        aux_t = (aux_t + a)?;
    }
    let gen_adv = checked(&p.gen_adv, "gen/adv")?;
    let fm = checked(&p.fm, "gen/fm")?;
    let dur_t = (&p.mas + &aux_t)?;
    let gen_t = (&p.gen_adv + (&p.fm * p.fm_weight)?)?;
    let total = (((&p.rec + &p.kl)? + dur_t)? + gen_t)?;
    let c = LossComponents {
        rec,
        kl,
        mas,
        aux,
        dur: mas + aux,
        gen_adv,
        fm,
        gen: gen_adv + p.fm_weight * fm,
        adv: 0.0,
        total: checked(&total, "total")?,
    };
    Ok((total, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t(v: f64) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    fn parts(rec: f64, kl: f64, mas: f64, aux: Vec<f64>, gen: f64) -> LossParts {
        LossParts {
            rec: t(rec),
            kl: t(kl),
            mas: t(mas),
            aux: aux.into_iter().map(t).collect(),
            gen_adv: t(gen),
            fm: t(0.0),
            fm_weight: 2.0,
        }
    }

    #[test]
    fn accounting() {
        let (l, c) = total_loss(&parts(0.0, 0.0, 0.0, vec![], 0.0)).unwrap();
        assert_eq!(scalar(&l).unwrap(), 0.0);
        assert_eq!(c.total, 0.0);
        let (l, _) = total_loss(&parts(1.0, 2.0, 3.0, vec![], 4.0)).unwrap();
        assert_eq!(scalar(&l).unwrap(), 10.0);
        let (_, with) = total_loss(&parts(1.0, 2.0, 3.0, vec![0.013, 0.021], 4.0)).unwrap();
        let (_, without) = total_loss(&parts(1.0, 2.0, 3.0, vec![], 4.0)).unwrap();
        assert!((with.total - without.total - with.aux).abs() < 1e-12);
        assert!((with.total - with.sum_of_parts()).abs() < 1e-12);
    }

    #[test]
    fn nan_names_the_component() {
        let err = total_loss(&parts(1.0, f64::NAN, 0.0, vec![], 0.0)).unwrap_err();
        assert!(err.to_string().contains("kl"), "{err}");
        let err = total_loss(&parts(1.0, 0.0, 0.0, vec![0.0, f64::NAN], 0.0)).unwrap_err();
        assert!(err.to_string().contains("aux[1]"), "{err}");
    }
}
