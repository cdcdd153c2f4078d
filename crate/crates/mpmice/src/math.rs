//! Small fixed-size vector/tensor types for the 2-D plane-strain kernels.
//!
//! Stress state carries the out-of-plane normal component explicitly
//! (plane strain), so the symmetric tensor type has four slots.

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    /// Unit vector, or zero if the norm underflows.
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self.scale(1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    pub fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            _ => self.y,
        }
    }

    pub fn set_component(&mut self, axis: usize, v: f64) {
        match axis {
            0 => self.x = v,
            _ => self.y = v,
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2 {
    pub m: [[f64; 2]; 2],
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2 { m: [[a, b], [c, d]] }
    }

    pub fn zero() -> Self {
        Mat2::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Mat2::new(c, -s, s, c)
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.m[0][0], self.m[1][0], self.m[0][1], self.m[1][1])
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let mut r = Mat2::zero();
        for i in 0..2 {
            for j in 0..2 {
                r.m[i][j] = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j];
            }
        }
        r
    }

    pub fn mul_vec(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y,
            self.m[1][0] * v.x + self.m[1][1] * v.y,
        )
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        Mat2::new(
            self.m[0][0] + o.m[0][0],
            self.m[0][1] + o.m[0][1],
            self.m[1][0] + o.m[1][0],
            self.m[1][1] + o.m[1][1],
        )
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        Mat2::new(
            self.m[0][0] * s,
            self.m[0][1] * s,
            self.m[1][0] * s,
            self.m[1][1] * s,
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.m
            .iter()
            .flatten()
            .fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }
}

/// Left polar decomposition F = V R with R a proper rotation and V
/// symmetric positive definite. Valid for det(F) > 0.
pub fn polar_decompose(f: &Mat2) -> Result<(Mat2, Mat2)> {
    let det = f.det();
    if !(det > 0.0) || !f.is_finite() {
        return Err(SimError::Degenerate(format!(
            "polar decomposition needs det(F) > 0, got {det}"
        )));
    }
    let t = f.m[0][0] + f.m[1][1];
    let s = f.m[1][0] - f.m[0][1];
    let h = t.hypot(s);
    if h <= 0.0 {
        return Err(SimError::Degenerate(
            "polar decomposition: degenerate rotation".into(),
        ));
    }
    let (c, sn) = (t / h, s / h);
    let r = Mat2::new(c, -sn, sn, c);
    let v = f.mul(&r.transpose());
    Ok((r, v))
}

/// Symmetric plane-strain tensor: in-plane xx, yy, xy plus the
/// out-of-plane normal component zz.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
}

impl SymTensor {
    pub const ZERO: SymTensor = SymTensor {
        xx: 0.0,
        yy: 0.0,
        zz: 0.0,
        xy: 0.0,
    };

    pub fn new(xx: f64, yy: f64, zz: f64, xy: f64) -> Self {
        SymTensor { xx, yy, zz, xy }
    }

    /// Isotropic tensor p * I (all three normal components).
    pub fn isotropic(p: f64) -> Self {
        SymTensor::new(p, p, p, 0.0)
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn add(&self, o: &SymTensor) -> SymTensor {
        SymTensor::new(
            self.xx + o.xx,
            self.yy + o.yy,
            self.zz + o.zz,
            self.xy + o.xy,
        )
    }

    pub fn sub(&self, o: &SymTensor) -> SymTensor {
        SymTensor::new(
            self.xx - o.xx,
            self.yy - o.yy,
            self.zz - o.zz,
            self.xy - o.xy,
        )
    }

    pub fn scale(&self, s: f64) -> SymTensor {
        SymTensor::new(self.xx * s, self.yy * s, self.zz * s, self.xy * s)
    }

    pub fn deviator(&self) -> SymTensor {
        let p = self.trace() / 3.0;
        SymTensor::new(self.xx - p, self.yy - p, self.zz - p, self.xy)
    }

    /// Full double contraction a : b including both off-diagonal slots.
    pub fn double_dot(&self, o: &SymTensor) -> f64 {
        self.xx * o.xx + self.yy * o.yy + self.zz * o.zz + 2.0 * self.xy * o.xy
    }

    /// In-plane congruence q · T · q^T; the zz slot is rotation-invariant.
    pub fn congruence(&self, q: &Mat2) -> SymTensor {
        let t = Mat2::new(self.xx, self.xy, self.xy, self.yy);
        let r = q.mul(&t).mul(&q.transpose());
        SymTensor::new(r.m[0][0], r.m[1][1], self.zz, 0.5 * (r.m[0][1] + r.m[1][0]))
    }

    /// In-plane principal values (ordered high, low) and the angle of the
    /// first principal direction.
    pub fn principal_in_plane(&self) -> (f64, f64, f64) {
        let mid = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let r = half_diff.hypot(self.xy);
        let theta = if r > 0.0 {
            0.5 * self.xy.atan2(half_diff)
        } else {
            0.0
        };
        (mid + r, mid - r, theta)
    }

    /// Rebuild from in-plane principal values at angle theta plus zz.
    pub fn from_principal_in_plane(p1: f64, p2: f64, theta: f64, zz: f64) -> SymTensor {
        let (s, c) = theta.sin_cos();
        let (c2, s2, cs) = (c * c, s * s, c * s);
        SymTensor::new(
            p1 * c2 + p2 * s2,
            p1 * s2 + p2 * c2,
            zz,
            (p1 - p2) * cs,
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.xx
            .abs()
            .max(self.yy.abs())
            .max(self.zz.abs())
            .max(self.xy.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.yy.is_finite() && self.zz.is_finite() && self.xy.is_finite()
    }
}

/// Symmetric part of a velocity-gradient-like 2x2 matrix, zero out of plane.
pub fn sym_part(l: &Mat2) -> SymTensor {
    SymTensor::new(
        l.m[0][0],
        l.m[1][1],
        0.0,
        0.5 * (l.m[0][1] + l.m[1][0]),
    )
}
