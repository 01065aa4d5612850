use super::config::TrainConfig;
use super::params::Params;
use crate::scalar::Scalar;

/// AdamW with decoupled weight decay. Norm gains are never decayed.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    m: Params<T>,
    v: Params<T>,
    step: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

fn decays(name: &str) -> bool {
    !name.ends_with("norm")
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &Params<T>, cfg: &TrainConfig) -> Self {
        AdamW {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn update(&mut self, params: &mut Params<T>, grads: &Params<T>, lr: f64) {
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
        let eps = T::lit(self.eps);
        let lr_t = T::lit(lr);
        let wd = T::lit(lr * self.weight_decay);
        let grads = grads.groups();
        let ms = self.m.groups_mut();
        let vs = self.v.groups_mut();
        for ((((name, p), (_, g)), (_, m)), (_, v)) in params.groups_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            let decay = decays(&name);
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + c1 * gi;
                v[i] = b2 * v[i] + c2 * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                if decay {
                    let decayed = wd * p[i];
                    p[i] -= decayed;
                }
                p[i] -= lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        self.step += 1;
    }
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut Params<T>, max_norm: f64) -> f64 {
    let norm = grads
        .groups()
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = T::lit(max_norm / norm);
        for (_, g) in grads.groups_mut() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
