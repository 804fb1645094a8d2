//! Inverse rendering of the texture leaves against posed target images.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::regularizers::{bump_l1_grad, reg_bump_l1, reg_smoothness, reg_symmetry, smoothness_grad, symmetry_grad};
use super::{backward, forward, GradScene, LeafClass, ParamSet};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::real::Real;
use crate::shading::Image;

/// Regularizer weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegWeights {
    pub smoothness: f64,
    pub symmetry: f64,
    pub bump_l1: f64,
}

impl Default for RegWeights {
    fn default() -> Self {
        Self {
            smoothness: 1e-2,
            symmetry: 1e-2,
            bump_l1: 1e-3,
        }
    }
}

impl RegWeights {
    pub fn none() -> Self {
        Self {
            smoothness: 0.0,
            symmetry: 0.0,
            bump_l1: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iters: usize,
    /// Step sizes for albedo, bump, disk scale and SH leaves.
    pub lr: [f64; 4],
    /// Which leaf classes move, same order as `lr`.
    pub train: [bool; 4],
    pub weights: RegWeights,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iters: 200,
            lr: [5e-3, 2e-5, 1e-5, 5e-3],
            train: [true, true, false, false],
            weights: RegWeights::default(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    beta1: T,
    beta2: T,
    eps: T,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
            beta1: T::lit(beta1),
            beta2: T::lit(beta2),
            eps: T::lit(eps),
        }
    }

    pub fn step(&mut self, x: &mut [T], g: &[T], lr: T) {
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// One posed view and its target image.
#[derive(Clone, Debug)]
pub struct FitTarget<T> {
    pub scene: GradScene<T>,
    pub image: Image<T>,
}

/// Loss components at one iteration, evaluated before that iteration's step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub total: f64,
    pub photometric: f64,
    pub smoothness: f64,
    pub symmetry: f64,
    pub bump_l1: f64,
    /// Mean PSNR over views, dB.
    pub psnr: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "iteration,total,photometric,smoothness,symmetry,bump_l1,psnr";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:.4}",
            self.iteration, self.total, self.photometric, self.smoothness, self.symmetry, self.bump_l1, self.psnr
        )
    }

    pub fn write_csv(history: &[LossReport], path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in history {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug)]
pub struct FitResult<T> {
    /// Parameters at the lowest total loss seen.
    pub params: ParamSet<T>,
    pub best_iteration: usize,
    pub history: Vec<LossReport>,
}

/// Peak signal-to-noise ratio of an image pair in `[0,1]`, dB.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> f64 {
    let mse = mse(a, b);
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

fn mse<T: Real>(a: &Image<T>, b: &Image<T>) -> f64 {
    let n = a.pixels.len() * 3;
    let s: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(p, q)| (*p - *q).norm_sq().to_f64_lossy())
        .sum();
    s / n as f64
}

/// Loss and gradient for the current leaves.
fn evaluate<T: Real>(targets: &[FitTarget<T>], p: &ParamSet<T>, cfg: &FitConfig, iteration: usize) -> Result<(LossReport, ParamSet<T>)> {
    let mut grads = p.zeros_like();
    let mut photometric = 0.0;
    let mut psnr_sum = 0.0;
    let views = T::from_usize(targets.len());
    for t in targets {
        let trace = forward(&t.scene, p)?;
        if trace.image.pixels.len() != t.image.pixels.len() {
            return Err(Error::Dimension {
                what: "target image",
                expected: trace.image.pixels.len(),
                got: t.image.pixels.len(),
            });
        }
        let n = T::from_usize(t.image.pixels.len() * 3);
        let scale = T::two() / (n * views);
        let d_image: Vec<Vec3<T>> = trace
            .image
            .pixels
            .iter()
            .zip(&t.image.pixels)
            .map(|(a, b)| (*a - *b) * scale)
            .collect();
        let view_mse = mse(&trace.image, &t.image);
        photometric += view_mse / targets.len() as f64;
        psnr_sum += if view_mse > 0.0 { -10.0 * view_mse.log10() } else { f64::INFINITY };
        let g = backward(&t.scene, p, &trace, &d_image)?;
        grads.add_scaled(&g, T::one());
    }
    let valid = &targets[0].scene.coarse.valid;
    let w = cfg.weights;
    let smooth = reg_smoothness(&p.albedo, Some(valid)) + reg_smoothness(&p.bump, Some(valid));
    let sym = reg_symmetry(&p.albedo, Some(valid));
    let l1 = reg_bump_l1(&p.bump, Some(valid));
    if w.smoothness != 0.0 {
        let k = T::lit(w.smoothness);
        for (g, d) in grads.albedo.data.iter_mut().zip(smoothness_grad(&p.albedo, Some(valid)).data) {
            *g += d * k;
        }
        for (g, d) in grads.bump.data.iter_mut().zip(smoothness_grad(&p.bump, Some(valid)).data) {
            *g += d * k;
        }
    }
    if w.symmetry != 0.0 {
        let k = T::lit(w.symmetry);
        for (g, d) in grads.albedo.data.iter_mut().zip(symmetry_grad(&p.albedo, Some(valid)).data) {
            *g += d * k;
        }
    }
    if w.bump_l1 != 0.0 {
        let k = T::lit(w.bump_l1);
        for (g, d) in grads.bump.data.iter_mut().zip(bump_l1_grad(&p.bump, Some(valid)).data) {
            *g += d * k;
        }
    }
    let (smoothness, symmetry, bump_l1) = (smooth.to_f64_lossy(), sym.to_f64_lossy(), l1.to_f64_lossy());
    let total = photometric + w.smoothness * smoothness + w.symmetry * symmetry + w.bump_l1 * bump_l1;
    let report = LossReport {
        iteration,
        total,
        photometric,
        smoothness,
        symmetry,
        bump_l1,
        psnr: psnr_sum / targets.len() as f64,
    };
    Ok((report, grads))
}

/// Adam descent on the photometric L2 loss plus weighted regularizers.
/// Albedo is projected back into `[0,1]` after each step. Returns the
/// best-loss parameters and the per-iteration history.
pub fn fit_textures<T: Real>(targets: &[FitTarget<T>], init: &ParamSet<T>, cfg: &FitConfig) -> Result<FitResult<T>> {
    if targets.is_empty() {
        return Err(Error::invalid("fit", "at least one target view is required"));
    }
    let mut p = init.clone();
    let mut opts: Vec<Adam<T>> = LeafClass::ALL
        .iter()
        .map(|c| Adam::new(p.leaf_len(*c), cfg.beta1, cfg.beta2, cfg.eps))
        .collect();
    let mut history = Vec::with_capacity(cfg.iters + 1);
    let mut best = (f64::INFINITY, 0usize, p.clone());
    for it in 0..=cfg.iters {
        let (report, grads) = evaluate(targets, &p, cfg, it)?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "fit loss at iteration {it}: {report:?}"
            )));
        }
        if report.total < best.0 {
            best = (report.total, it, p.clone());
        }
        history.push(report);
        if it == cfg.iters {
            break;
        }
        for (c, class) in LeafClass::ALL.iter().enumerate() {
            if !cfg.train[c] {
                continue;
            }
            let mut x = p.flat(*class);
            opts[c].step(&mut x, &grads.flat(*class), T::lit(cfg.lr[c]));
            p.set_flat(*class, &x);
        }
        for a in &mut p.albedo.data {
            *a = a.map(|v| v.max(T::zero()).min(T::one()));
        }
        for s in &mut p.disk_scale {
            *s = s.max(T::lit(1e-5));
        }
    }
    Ok(FitResult {
        params: best.2,
        best_iteration: best.1,
        history,
    })
}
