//! Texture regularizers and the R1 penalty, with analytic gradients.
//!
//! Every map regularizer averages over valid texels only; `None` as the mask
//! treats the whole map as valid.

use crate::math::Vec3;
use crate::real::Real;
use crate::uvmaps::UvMap;

/// Scalar channels of a texel value.
pub trait Channels<T>: Copy {
    const N: usize;
    fn ch(&self, c: usize) -> T;
    fn add_ch(&mut self, c: usize, v: T);
}

impl<T: Real> Channels<T> for T {
    const N: usize = 1;
    fn ch(&self, _: usize) -> T {
        *self
    }
    fn add_ch(&mut self, _: usize, v: T) {
        *self += v;
    }
}

impl<T: Real> Channels<T> for Vec3<T> {
    const N: usize = 3;
    fn ch(&self, c: usize) -> T {
        self.to_array()[c]
    }
    fn add_ch(&mut self, c: usize, v: T) {
        match c {
            0 => self.x += v,
            1 => self.y += v,
            _ => self.z += v,
        }
    }
}

fn is_valid(valid: Option<&UvMap<bool>>, k: usize) -> bool {
    valid.is_none_or(|m| m.data[k])
}

/// Forward-difference pairs `(here, next)` along u then v with both texels valid.
type Pairs = Vec<(usize, usize)>;

fn pairs(res: usize, valid: Option<&UvMap<bool>>) -> (Pairs, Pairs) {
    let mut pu = Vec::new();
    let mut pv = Vec::new();
    for j in 0..res {
        for i in 0..res {
            let k = j * res + i;
            if !is_valid(valid, k) {
                continue;
            }
            if i + 1 < res && is_valid(valid, k + 1) {
                pu.push((k, k + 1));
            }
            if j + 1 < res && is_valid(valid, k + res) {
                pv.push((k, k + res));
            }
        }
    }
    (pu, pv)
}

fn mean_sq_diff<T: Real, V: Channels<T>>(map: &UvMap<V>, pairs: &[(usize, usize)]) -> T {
    if pairs.is_empty() {
        return T::zero();
    }
    let mut s = T::zero();
    for &(a, b) in pairs {
        for c in 0..V::N {
            let d = map.data[b].ch(c) - map.data[a].ch(c);
            s += d * d;
        }
    }
    s / T::from_usize(pairs.len() * V::N)
}

/// Mean squared forward difference along u and along v, separately.
pub fn smoothness_terms<T: Real, V: Channels<T>>(map: &UvMap<V>, valid: Option<&UvMap<bool>>) -> (T, T) {
    let (pu, pv) = pairs(map.res, valid);
    (mean_sq_diff(map, &pu), mean_sq_diff(map, &pv))
}

/// Mean squared forward difference over all u and v pairs of valid texels.
pub fn reg_smoothness<T: Real, V: Channels<T>>(map: &UvMap<V>, valid: Option<&UvMap<bool>>) -> T {
    let (mut pu, pv) = pairs(map.res, valid);
    pu.extend(pv);
    mean_sq_diff(map, &pu)
}

pub fn smoothness_grad<T: Real, V: Channels<T> + Default>(map: &UvMap<V>, valid: Option<&UvMap<bool>>) -> UvMap<V> {
    let (mut pu, pv) = pairs(map.res, valid);
    pu.extend(pv);
    let mut g = UvMap::filled(map.res, V::default());
    if pu.is_empty() {
        return g;
    }
    let k = T::two() / T::from_usize(pu.len() * V::N);
    for (a, b) in pu {
        for c in 0..V::N {
            let d = (map.data[b].ch(c) - map.data[a].ch(c)) * k;
            g.data[b].add_ch(c, d);
            g.data[a].add_ch(c, -d);
        }
    }
    g
}

fn mirror(res: usize, k: usize) -> usize {
    let (i, j) = (k % res, k / res);
    j * res + (res - 1 - i)
}

fn symmetric_texels(res: usize, valid: Option<&UvMap<bool>>) -> Vec<usize> {
    (0..res * res).filter(|&k| is_valid(valid, k) && is_valid(valid, mirror(res, k))).collect()
}

/// Mean squared difference between the map and its u-mirror, over texels
/// valid in both orientations.
pub fn reg_symmetry<T: Real, V: Channels<T>>(map: &UvMap<V>, valid: Option<&UvMap<bool>>) -> T {
    let ks = symmetric_texels(map.res, valid);
    if ks.is_empty() {
        return T::zero();
    }
    let mut s = T::zero();
    for &k in &ks {
        let m = mirror(map.res, k);
        for c in 0..V::N {
            let d = map.data[k].ch(c) - map.data[m].ch(c);
            s += d * d;
        }
    }
    s / T::from_usize(ks.len() * V::N)
}

pub fn symmetry_grad<T: Real, V: Channels<T> + Default>(map: &UvMap<V>, valid: Option<&UvMap<bool>>) -> UvMap<V> {
    let ks = symmetric_texels(map.res, valid);
    let mut g = UvMap::filled(map.res, V::default());
    if ks.is_empty() {
        return g;
    }
    let scale = T::two() / T::from_usize(ks.len() * V::N);
    for &k in &ks {
        let m = mirror(map.res, k);
        for c in 0..V::N {
            let d = (map.data[k].ch(c) - map.data[m].ch(c)) * scale;
            g.data[k].add_ch(c, d);
            g.data[m].add_ch(c, -d);
        }
    }
    g
}

/// Mean absolute bump over valid texels.
pub fn reg_bump_l1<T: Real>(bump: &UvMap<T>, valid: Option<&UvMap<bool>>) -> T {
    let mut s = T::zero();
    let mut n = 0usize;
    for (k, b) in bump.data.iter().enumerate() {
        if is_valid(valid, k) {
            s += b.abs();
            n += 1;
        }
    }
    if n == 0 {
        T::zero()
    } else {
        s / T::from_usize(n)
    }
}

/// Subgradient of [`reg_bump_l1`], zero at zero.
pub fn bump_l1_grad<T: Real>(bump: &UvMap<T>, valid: Option<&UvMap<bool>>) -> UvMap<T> {
    let n = (0..bump.data.len()).filter(|&k| is_valid(valid, k)).count();
    let mut g = UvMap::filled(bump.res, T::zero());
    if n == 0 {
        return g;
    }
    let inv = T::one() / T::from_usize(n);
    for (k, b) in bump.data.iter().enumerate() {
        if is_valid(valid, k) && *b != T::zero() {
            g.data[k] = b.signum() * inv;
        }
    }
    g
}

/// `(γ/2) · mean over samples of |∇D|²`, for externally supplied
/// discriminator input gradients (one flattened gradient per sample).
pub fn r1_penalty<T: Real>(disc_grads: &[Vec<T>], gamma: T) -> T {
    if disc_grads.is_empty() {
        return T::zero();
    }
    let total: T = disc_grads.iter().map(|g| g.iter().map(|v| *v * *v).sum::<T>()).sum();
    gamma * T::half() * total / T::from_usize(disc_grads.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothness_gradient_matches_finite_differences() {
        let map = UvMap::from_fn(5, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.1);
        let mut valid = UvMap::filled(5, true);
        valid.set(2, 2, false);
        let g = smoothness_grad(&map, Some(&valid));
        let h = 1e-6;
        for k in 0..25 {
            let mut p = map.clone();
            p.data[k] += h;
            let mut m = map.clone();
            m.data[k] -= h;
            let fd = (reg_smoothness(&p, Some(&valid)) - reg_smoothness(&m, Some(&valid))) / (2.0 * h);
            assert!((fd - g.data[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn symmetry_gradient_matches_finite_differences() {
        let map = UvMap::from_fn(4, |i, j| Vec3::new(i as f64 * 0.1, (j * i) as f64 * 0.05, 0.3));
        let g = symmetry_grad(&map, None);
        let h = 1e-6;
        for k in 0..16 {
            for c in 0..3 {
                let mut p = map.clone();
                p.data[k].add_ch(c, h);
                let mut m = map.clone();
                m.data[k].add_ch(c, -h);
                let fd = (reg_symmetry(&p, None) - reg_symmetry(&m, None)) / (2.0 * h);
                assert!((fd - g.data[k].ch(c)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn masked_texels_are_ignored() {
        let mut map = UvMap::filled(4, 0.5f64);
        map.set(0, 0, 9.0);
        let mut valid = UvMap::filled(4, true);
        valid.set(0, 0, false);
        assert_eq!(reg_smoothness(&map, Some(&valid)), 0.0);
        assert_eq!(reg_bump_l1(&map, Some(&valid)), 0.5);
    }
}
