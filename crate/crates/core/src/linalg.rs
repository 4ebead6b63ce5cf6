//! Small fixed-size linear algebra: 3-vectors, 3x3 / 4x4 matrices, quaternions
//! and symmetric 2x2 matrices. Everything is `f64` and row-major.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SINGULAR_DET: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }
    pub fn y(&self) -> f64 {
        self.0[1]
    }
    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn dot(&self, o: &Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(&self, o: &Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let [d, e, f] = o.0;
        Vec3([b * f - c * e, c * d - a * f, a * e - b * d])
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Outer product `self * o^T`.
    pub fn outer(&self, o: &Vec3) -> Mat3 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.0[i] * o.0[j];
            }
        }
        Mat3(m)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vec3 {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self.scale(-1.0)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Default for Mat3 {
    fn default() -> Self {
        Mat3::IDENTITY
    }
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    pub fn diag(d: Vec3) -> Mat3 {
        Mat3([[d.0[0], 0.0, 0.0], [0.0, d.0[1], 0.0], [0.0, 0.0, d.0[2]]])
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Mat3 {
        Mat3(rows)
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse by the adjugate. Fails when `|det| <= 1e-12`.
    pub fn inverse(&self) -> Result<Mat3> {
        let det = self.det();
        if !(det.abs() > SINGULAR_DET) {
            return Err(Error::Singular { det });
        }
        let m = &self.0;
        let inv_det = 1.0 / det;
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
            m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
        };
        Ok(Mat3([
            [
                cof(1, 2, 1, 2) * inv_det,
                -cof(0, 2, 1, 2) * inv_det,
                cof(0, 1, 1, 2) * inv_det,
            ],
            [
                -cof(1, 2, 0, 2) * inv_det,
                cof(0, 2, 0, 2) * inv_det,
                -cof(0, 1, 0, 2) * inv_det,
            ],
            [
                cof(1, 2, 0, 1) * inv_det,
                -cof(0, 2, 0, 1) * inv_det,
                cof(0, 1, 0, 1) * inv_det,
            ],
        ]))
    }

    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        let m = &self.0;
        Vec3([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = *self;
        out.0.iter_mut().flatten().for_each(|v| *v *= s);
        out
    }

    pub fn max_abs_diff(&self, o: &Mat3) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(o.0.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Rotation about the x axis by `angle` radians.
    pub fn rot_x(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    }

    pub fn rot_y(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    }

    pub fn rot_z(angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }
}

impl Index<(usize, usize)> for Mat3 {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.0[r][c]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.0[r][c]
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, o: Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j] + self.0[i][2] * o.0[2][j];
            }
        }
        Mat3(out)
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(self, o: Mat3) -> Mat3 {
        let mut out = self;
        for (a, b) in out.0.iter_mut().flatten().zip(o.0.iter().flatten()) {
            *a += b;
        }
        out
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(self, o: Mat3) -> Mat3 {
        self + o.scale(-1.0)
    }
}

/// 4x4 homogeneous transform, only used at file boundaries for poses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat4(pub [[f64; 4]; 4]);

impl Mat4 {
    pub const IDENTITY: Mat4 = Mat4([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]);

    pub fn from_rt(r: &Mat3, t: &Vec3) -> Mat4 {
        let mut m = Mat4::IDENTITY;
        for i in 0..3 {
            m.0[i][..3].copy_from_slice(&r.0[i]);
            m.0[i][3] = t.0[i];
        }
        m
    }

    pub fn rotation(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ])
    }

    pub fn translation(&self) -> Vec3 {
        Vec3([self.0[0][3], self.0[1][3], self.0[2][3]])
    }

    /// Bottom row is (0, 0, 0, 1) within `tol`.
    pub fn is_affine(&self, tol: f64) -> bool {
        let b = self.0[3];
        b[0].abs() <= tol && b[1].abs() <= tol && b[2].abs() <= tol && (b[3] - 1.0).abs() <= tol
    }

    /// Inverse of an affine transform `[A | t]`: `[A^-1 | -A^-1 t]`.
    pub fn affine_inverse(&self) -> Result<Mat4> {
        let a_inv = self.rotation().inverse()?;
        let t = a_inv.mul_vec(&self.translation());
        Ok(Mat4::from_rt(&a_inv, &(-t)))
    }
}

/// Quaternion `(w, x, y, z)`; not necessarily unit length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Quaternion::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Result<Quaternion> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroQuaternion);
        }
        Ok(Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Hamilton product `self * o`.
    pub fn mul(&self, o: &Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// Unit quaternion for a rotation of `angle` radians about the unit `axis`.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Quaternion {
        let (s, c) = (angle * 0.5).sin_cos();
        Quaternion::new(c, axis.0[0] * s, axis.0[1] * s, axis.0[2] * s)
    }
}

/// Rotation matrix of `q`; `q` is normalized first.
pub fn quat_to_rotation(q: &Quaternion) -> Result<Mat3> {
    let q = q.normalized()?;
    Ok(unit_quat_to_rotation(&q))
}

pub(crate) fn unit_quat_to_rotation(q: &Quaternion) -> Mat3 {
    let Quaternion { w, x, y, z } = *q;
    Mat3([
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ])
}

/// Pull a gradient w.r.t. the rotation matrix back onto the components of the
/// unit quaternion that produced it (no normalization term).
pub(crate) fn unit_quat_rotation_vjp(q: &Quaternion, g: &Mat3) -> [f64; 4] {
    let Quaternion { w, x, y, z } = *q;
    let g = &g.0;
    let dw = 2.0 * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let dx = 2.0
        * (y * g[0][1] + z * g[0][2] + y * g[1][0] - 2.0 * x * g[1][1] - w * g[1][2] + z * g[2][0]
            + w * g[2][1]
            - 2.0 * x * g[2][2]);
    let dy = 2.0
        * (-2.0 * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0]
            + z * g[2][1]
            - 2.0 * y * g[2][2]);
    let dz = 2.0
        * (-2.0 * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - 2.0 * z * g[1][1]
            + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]);
    [dw, dx, dy, dz]
}

/// Backward through `q / |q|`: maps a gradient w.r.t. the normalized
/// quaternion onto the raw one.
pub(crate) fn normalize_vjp(raw: &Quaternion, g: [f64; 4]) -> [f64; 4] {
    let n = raw.norm();
    let u = [raw.w / n, raw.x / n, raw.y / n, raw.z / n];
    let proj: f64 = u.iter().zip(&g).map(|(a, b)| a * b).sum();
    [
        (g[0] - u[0] * proj) / n,
        (g[1] - u[1] * proj) / n,
        (g[2] - u[2] * proj) / n,
        (g[3] - u[3] * proj) / n,
    ]
}

/// Symmetric 2x2 matrix `[[a, b], [b, c]]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        a: 1.0,
        b: 0.0,
        c: 1.0,
    };

    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Sym2 { a, b, c }
    }

    pub fn det(&self) -> f64 {
        self.a * self.c - self.b * self.b
    }

    /// Closed-form inverse; fails when `det < 1e-12`.
    pub fn inverse(&self) -> Result<Sym2> {
        let det = self.det();
        if !(det >= SINGULAR_DET) {
            return Err(Error::Singular { det });
        }
        let inv = 1.0 / det;
        Ok(Sym2::new(self.c * inv, -self.b * inv, self.a * inv))
    }

    /// Largest eigenvalue.
    pub fn max_eigenvalue(&self) -> f64 {
        let mid = 0.5 * (self.a + self.c);
        let disc = (mid * mid - self.det()).max(0.0);
        mid + disc.sqrt()
    }

    /// `d^T M d`.
    pub fn quad_form(&self, dx: f64, dy: f64) -> f64 {
        self.a * dx * dx + 2.0 * self.b * dx * dy + self.c * dy * dy
    }

    pub fn mul(&self, o: &Sym2) -> [[f64; 2]; 2] {
        [
            [self.a * o.a + self.b * o.b, self.a * o.b + self.b * o.c],
            [self.b * o.a + self.c * o.b, self.b * o.b + self.c * o.c],
        ]
    }
}

/// Free-function form of [`Sym2::inverse`].
pub fn sym2_inverse(s: &Sym2) -> Result<Sym2> {
    s.inverse()
}

/// Free-function form of [`Mat3::inverse`].
pub fn mat3_inverse(m: &Mat3) -> Result<Mat3> {
    m.inverse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_quat(rng: &mut impl Rng) -> Quaternion {
        Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    }

    #[test]
    fn identity_quaternion_gives_identity() {
        let r = quat_to_rotation(&Quaternion::IDENTITY).unwrap();
        assert_eq!(r, Mat3::IDENTITY);
    }

    #[test]
    fn quarter_turn_about_z() {
        let h = std::f64::consts::FRAC_PI_4;
        let r = quat_to_rotation(&Quaternion::new(h.cos(), 0.0, 0.0, h.sin())).unwrap();
        let v = r.mul_vec(&Vec3::new(1.0, 0.0, 0.0));
        assert!((v - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        assert!(matches!(
            quat_to_rotation(&Quaternion::new(0.0, 0.0, 0.0, 0.0)),
            Err(Error::ZeroQuaternion)
        ));
    }

    #[test]
    fn random_rotations_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let r = quat_to_rotation(&rand_quat(&mut rng)).unwrap();
            assert!((r.transpose() * r).max_abs_diff(&Mat3::IDENTITY) < 1e-9);
            assert!((r.det() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_of_diagonal_and_identity() {
        assert_eq!(Mat3::IDENTITY.inverse().unwrap(), Mat3::IDENTITY);
        let inv = Mat3::diag(Vec3::new(2.0, 4.0, 8.0)).inverse().unwrap();
        assert_eq!(inv, Mat3::diag(Vec3::new(0.5, 0.25, 0.125)));
    }

    #[test]
    fn singular_matrix_errors() {
        let m = Mat3([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 0.0]]);
        assert!(matches!(m.inverse(), Err(Error::Singular { .. })));
        assert!(matches!(
            Sym2::new(1.0, 1.0, 1.0).inverse(),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn sym2_inverse_cases() {
        let inv = sym2_inverse(&Sym2::new(25.3, 0.0, 25.3)).unwrap();
        assert_eq!(inv, Sym2::new(1.0 / 25.3, 0.0, 1.0 / 25.3));
        assert_eq!(Sym2::IDENTITY.inverse().unwrap(), Sym2::IDENTITY);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            // A A^T + 0.3 I
            let (p, q, r, s) = (
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let m = Sym2::new(p * p + q * q + 0.3, p * r + q * s, r * r + s * s + 0.3);
            let prod = m.mul(&m.inverse().unwrap());
            assert!((prod[0][0] - 1.0).abs() < 1e-10);
            assert!(prod[0][1].abs() < 1e-10 && prod[1][0].abs() < 1e-10);
            assert!((prod[1][1] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rotation_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q = rand_quat(&mut rng);
            let g = Mat3([
                [rng.gen(), rng.gen(), rng.gen()],
                [rng.gen(), rng.gen(), rng.gen()],
                [rng.gen(), rng.gen(), rng.gen()],
            ]);
            let loss = |q: &Quaternion| {
                let r = quat_to_rotation(q).unwrap();
                r.0.iter().flatten().zip(g.0.iter().flatten()).map(|(a, b)| a * b).sum::<f64>()
            };
            let u = q.normalized().unwrap();
            let analytic = normalize_vjp(&q, unit_quat_rotation_vjp(&u, &g));
            let mut arr = q.to_array();
            for k in 0..4 {
                let h = 1e-6;
                arr[k] += h;
                let lp = loss(&Quaternion::from_array(arr));
                arr[k] -= 2.0 * h;
                let lm = loss(&Quaternion::from_array(arr));
                arr[k] += h;
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - analytic[k]).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", analytic[k]);
            }
        }
    }

    proptest! {
        #[test]
        fn double_inverse_is_identity(
            vals in proptest::array::uniform9(-2.0f64..2.0)
        ) {
            let m = Mat3([
                [vals[0] + 4.0, vals[1], vals[2]],
                [vals[3], vals[4] + 4.0, vals[5]],
                [vals[6], vals[7], vals[8] + 4.0],
            ]);
            let back = m.inverse().unwrap().inverse().unwrap();
            prop_assert!(back.max_abs_diff(&m) < 1e-8);
            prop_assert!((m * m.inverse().unwrap()).max_abs_diff(&Mat3::IDENTITY) < 1e-9);
        }

        #[test]
        fn any_nonzero_quaternion_is_a_rotation(
            w in -1.0f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0
        ) {
            let q = Quaternion::new(w, x, y, z);
            prop_assume!(q.norm() > 1e-6);
            let r = quat_to_rotation(&q).unwrap();
            prop_assert!((r.transpose() * r).max_abs_diff(&Mat3::IDENTITY) < 1e-9);
            prop_assert!((r.det() - 1.0).abs() < 1e-9);
        }
    }
}
