//! Small fixed-size linear algebra over [`Real`].

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    pub fn unit_z() -> Self {
        Self::new(T::zero(), T::zero(), T::one())
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn lit(x: f64, y: f64, z: f64) -> Self {
        Self::new(T::lit(x), T::lit(y), T::lit(z))
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_sq(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_sq().sqrt()
    }

    /// Unit vector, or `None` for a zero or non-finite input.
    #[inline]
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self * (T::one() / n))
        } else {
            None
        }
    }

    #[inline]
    pub fn mul_elem(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn max_abs(self) -> T {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn map(self, f: impl Fn(T) -> T) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    pub fn zero() -> Self {
        Self {
            m: [[T::zero(); 3]; 3],
        }
    }

    pub fn from_rows(r0: Vec3<T>, r1: Vec3<T>, r2: Vec3<T>) -> Self {
        Self {
            m: [r0.to_array(), r1.to_array(), r2.to_array()],
        }
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self::from_rows(c0, c1, c2).transpose()
    }

    pub fn diag(d: Vec3<T>) -> Self {
        let mut out = Self::zero();
        out.m[0][0] = d.x;
        out.m[1][1] = d.y;
        out.m[2][2] = d.z;
        out
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::from_array(self.m[i])
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = self.m[j][i];
            }
        }
        out
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(
            self.row(0).dot(v),
            self.row(1).dot(v),
            self.row(2).dot(v),
        )
    }

    pub fn mul_mat(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = T::zero();
                for k in 0..3 {
                    acc += self.m[i][k] * o.m[k][j];
                }
                out.m[i][j] = acc;
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for row in out.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        out
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = *self;
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] += o.m[i][j];
            }
        }
        out
    }

    /// Rodrigues rotation about a unit axis.
    pub fn rotation(axis: Vec3<T>, angle: T) -> Self {
        let (s, c) = angle.sin_cos();
        let t = T::one() - c;
        let Vec3 { x, y, z } = axis;
        Self {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    /// Largest deviation of `self · selfᵀ` from the identity.
    pub fn orthonormality_error(&self) -> T {
        let p = self.mul_mat(&self.transpose());
        let id = Self::identity();
        let mut err = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                err = err.max((p.m[i][j] - id.m[i][j]).abs());
            }
        }
        err
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        let mut out = Mat3::<U>::zero();
        for i in 0..3 {
            for j in 0..3 {
                out.m[i][j] = U::lit(self.m[i][j].to_f64_lossy());
            }
        }
        out
    }
}

/// Unit quaternion stored as `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quat<T> {
    pub const fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn norm(self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            let inv = T::one() / n;
            Some(Self::new(self.w * inv, self.x * inv, self.y * inv, self.z * inv))
        } else {
            None
        }
    }

    /// Rotation matrix of a unit quaternion.
    pub fn to_mat(self) -> Mat3<T> {
        let Self { w, x, y, z } = self;
        let one = T::one();
        let two = T::two();
        Mat3 {
            m: [
                [
                    one - two * (y * y + z * z),
                    two * (x * y - w * z),
                    two * (x * z + w * y),
                ],
                [
                    two * (x * y + w * z),
                    one - two * (x * x + z * z),
                    two * (y * z - w * x),
                ],
                [
                    two * (x * z - w * y),
                    two * (y * z + w * x),
                    one - two * (x * x + y * y),
                ],
            ],
        }
    }

    /// Adjoint of [`Quat::to_mat`]: maps `dL/dR` to `dL/dq`.
    pub fn to_mat_backward(self, g: &Mat3<T>) -> [T; 4] {
        let Self { w, x, y, z } = self;
        let two = T::two();
        let m = &g.m;
        let dw = two
            * (-z * m[0][1] + y * m[0][2] + z * m[1][0] - x * m[1][2] - y * m[2][0]
                + x * m[2][1]);
        let dx = two
            * (y * m[0][1] + z * m[0][2] + y * m[1][0] - two * x * m[1][1] - w * m[1][2]
                + z * m[2][0]
                + w * m[2][1]
                - two * x * m[2][2]);
        let dy = two
            * (-two * y * m[0][0] + x * m[0][1] + w * m[0][2] + x * m[1][0] + z * m[1][2]
                - w * m[2][0]
                + z * m[2][1]
                - two * y * m[2][2]);
        let dz = two
            * (-two * z * m[0][0] - w * m[0][1] + x * m[0][2] + w * m[1][0]
                - two * z * m[1][1]
                + y * m[1][2]
                + x * m[2][0]
                + y * m[2][1]);
        [dw, dx, dy, dz]
    }

    pub fn cast<U: Real>(self) -> Quat<U> {
        Quat::new(
            U::lit(self.w.to_f64_lossy()),
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }
}

/// Symmetric 2×2 matrix `[[a, b], [b, c]]`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Sym2<T> {
    pub a: T,
    pub b: T,
    pub c: T,
}

impl<T: Real> Sym2<T> {
    pub fn new(a: T, b: T, c: T) -> Self {
        Self { a, b, c }
    }

    pub fn det(&self) -> T {
        self.a * self.c - self.b * self.b
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det <= T::zero() || !det.is_finite() {
            return None;
        }
        let inv = T::one() / det;
        Some(Self::new(self.c * inv, -self.b * inv, self.a * inv))
    }

    /// Eigenvalues, largest first.
    pub fn eigenvalues(&self) -> (T, T) {
        let mid = T::half() * (self.a + self.c);
        let disc = (mid * mid - self.det()).max(T::zero()).sqrt();
        (mid + disc, mid - disc)
    }

    #[inline]
    pub fn quad_form(&self, dx: T, dy: T) -> T {
        self.a * dx * dx + T::two() * self.b * dx * dy + self.c * dy * dy
    }
}

/// Normalizes `v`; returns the unit vector and the backward map for `dL/dv`.
#[inline]
pub fn normalize_backward<T: Real>(v: Vec3<T>, grad_unit: Vec3<T>) -> Vec3<T> {
    let n = v.norm();
    if n <= T::zero() {
        return Vec3::zero();
    }
    let u = v * (T::one() / n);
    (grad_unit - u * u.dot(grad_unit)) * (T::one() / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quat_to_mat_is_orthonormal() {
        let q = Quat::new(0.3f64, -0.5, 0.7, 0.1).normalized().unwrap();
        assert!(q.to_mat().orthonormality_error() < 1e-12);
    }

    #[test]
    fn quat_backward_matches_finite_differences() {
        let q = Quat::new(0.3f64, -0.5, 0.7, 0.1);
        let mut g = Mat3::zero();
        for i in 0..3 {
            for j in 0..3 {
                g.m[i][j] = (i as f64 + 1.0) * 0.3 - j as f64 * 0.7;
            }
        }
        let f = |q: Quat<f64>| {
            let r = q.to_mat();
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += r.m[i][j] * g.m[i][j];
                }
            }
            s
        };
        let analytic = q.to_mat_backward(&g);
        let h = 1e-6;
        for k in 0..4 {
            let mut a = q.to_array();
            let mut b = q.to_array();
            a[k] += h;
            b[k] -= h;
            let fd = (f(Quat::from_array(a)) - f(Quat::from_array(b))) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-7, "k={k} fd={fd} an={}", analytic[k]);
        }
    }

    #[test]
    fn rotation_matches_quaternion() {
        let axis = Vec3::new(1.0f64, 2.0, -0.5).normalized().unwrap();
        let angle = 0.8f64;
        let (s, c) = (angle * 0.5).sin_cos();
        let q = Quat::new(c, axis.x * s, axis.y * s, axis.z * s);
        let a = Mat3::rotation(axis, angle);
        let b = q.to_mat();
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.m[i][j] - b.m[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sym2_inverse_and_eigen() {
        let m = Sym2::new(4.0f64, 1.0, 3.0);
        let inv = m.inverse().unwrap();
        assert!((m.a * inv.a + m.b * inv.b - 1.0).abs() < 1e-12);
        assert!((m.a * inv.b + m.b * inv.c).abs() < 1e-12);
        let (l0, l1) = m.eigenvalues();
        assert!((l0 + l1 - 7.0).abs() < 1e-12);
        assert!((l0 * l1 - 11.0).abs() < 1e-12);
    }
}
