//! Closed-form geometry of the SO(2) bundle over the punctured plane.
//!
//! Points of the flat configuration space carry coordinates `(Q1, Q2, f1, f2)`
//! with `Q1^2 + Q2^2 > 0`. The group rotates the Q-plane one way and the
//! f-plane the other way. Adapted coordinates split a point into the
//! gauge-surface radius `q* = |Q|`, the co-rotated vector coordinates
//! `(ft1, ft2)`, and the group angle `a` fixed by `Q1 = q* cos a`,
//! `Q2 = -q* sin a`.
//!
//! [`GeometryBundle::at`] evaluates every derived object at an orbit-space
//! point: the adapted metric and its inverse, the mechanical connection, the
//! Killing fields, the Faddeev–Popov scalar, the diffusion matrix `R` and its
//! symmetric square root, the orbit metric `h` with determinant
//! `H = q*^2 / d`, and the scalars `d = q*^2 + ft1^2 + ft2^2`, `sigma = ln d`,
//! `gamma = q*^2`.

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default guard radius around the excluded origin of the Q-plane.
pub const DEFAULT_EPS_MIN: f64 = 1e-6;

pub const TWO_PI: f64 = std::f64::consts::TAU;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    /// The point is too close to the Q-plane origin, where the group action
    /// stops being free and the adapted coordinates degenerate.
    #[error("degenerate point: |Q| = {radius:.3e} below guard {eps_min:.3e}")]
    DegeneratePoint { radius: f64, eps_min: f64 },
}

/// Point of the flat space in original coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EuclideanPoint {
    pub q1: f64,
    pub q2: f64,
    pub f1: f64,
    pub f2: f64,
}

impl EuclideanPoint {
    pub fn new(q1: f64, q2: f64, f1: f64, f2: f64) -> Self {
        Self { q1, q2, f1, f2 }
    }

    /// Radius in the Q-plane; must stay positive for the action to be free.
    pub fn q_radius(&self) -> f64 {
        self.q1.hypot(self.q2)
    }

    /// Squared Euclidean distance to another point (flat 4D metric).
    pub fn dist2(&self, other: &Self) -> f64 {
        let dq1 = self.q1 - other.q1;
        let dq2 = self.q2 - other.q2;
        let df1 = self.f1 - other.f1;
        let df2 = self.f2 - other.f2;
        dq1 * dq1 + dq2 * dq2 + df1 * df1 + df2 * df2
    }
}

/// Bundle point: gauge-surface radius, rotated vector coordinates, group angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptedPoint {
    /// Gauge-surface coordinate, `q* > 0`.
    pub q_star: f64,
    pub ft1: f64,
    pub ft2: f64,
    /// Group coordinate normalized to `[0, 2*pi)`.
    pub angle: f64,
}

impl AdaptedPoint {
    pub fn new(q_star: f64, ft1: f64, ft2: f64, angle: f64) -> Self {
        Self { q_star, ft1, ft2, angle: normalize_angle(angle) }
    }

    /// Orbit-space part, dropping the group angle.
    pub fn base(&self) -> BasePoint {
        BasePoint { q_star: self.q_star, ft1: self.ft1, ft2: self.ft2 }
    }
}

/// Orbit-space point `(q*, ft1, ft2)`; all group-invariant data lives here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasePoint {
    pub q_star: f64,
    pub ft1: f64,
    pub ft2: f64,
}

impl BasePoint {
    pub fn new(q_star: f64, ft1: f64, ft2: f64) -> Self {
        Self { q_star, ft1, ft2 }
    }

    /// Squared norm of the vector-space part.
    pub fn rho2(&self) -> f64 {
        self.ft1 * self.ft1 + self.ft2 * self.ft2
    }

    /// Squared norm of the Killing field, `d = q*^2 + ft1^2 + ft2^2`.
    pub fn d(&self) -> f64 {
        self.q_star * self.q_star + self.rho2()
    }

    /// Attach a group angle.
    pub fn with_angle(&self, angle: f64) -> AdaptedPoint {
        AdaptedPoint::new(self.q_star, self.ft1, self.ft2, angle)
    }
}

/// Wrap an angle into `[0, 2*pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a % TWO_PI;
    if r < 0.0 {
        r + TWO_PI
    } else {
        r
    }
}

/// Group action by angle `theta`: the Q-plane rotates one way, the f-plane
/// the other. Both plane norms are preserved.
pub fn group_act(p: &EuclideanPoint, theta: f64) -> EuclideanPoint {
    let (s, c) = theta.sin_cos();
    EuclideanPoint {
        q1: p.q1 * c + p.q2 * s,
        q2: -p.q1 * s + p.q2 * c,
        f1: p.f1 * c - p.f2 * s,
        f2: p.f1 * s + p.f2 * c,
    }
}

/// Transform to adapted coordinates.
///
/// The angle is the two-argument arctangent of `(-Q2, Q1)` wrapped to
/// `[0, 2*pi)`, which makes this the exact inverse of [`from_adapted`] and
/// keeps `q* > 0` on the gauge surface.
pub fn to_adapted(p: &EuclideanPoint, eps_min: f64) -> Result<AdaptedPoint, GeomError> {
    let q_star = p.q_radius();
    if q_star < eps_min {
        return Err(GeomError::DegeneratePoint { radius: q_star, eps_min });
    }
    let angle = normalize_angle((-p.q2).atan2(p.q1));
    let (s, c) = angle.sin_cos();
    Ok(AdaptedPoint {
        q_star,
        ft1: p.f1 * c + p.f2 * s,
        ft2: -p.f1 * s + p.f2 * c,
        angle,
    })
}

/// Reconstruct the original coordinates from bundle coordinates.
pub fn from_adapted(x: &AdaptedPoint) -> EuclideanPoint {
    let (s, c) = x.angle.sin_cos();
    EuclideanPoint {
        q1: x.q_star * c,
        q2: -x.q_star * s,
        f1: x.ft1 * c - x.ft2 * s,
        f2: x.ft1 * s + x.ft2 * c,
    }
}

/// Reduction potential `J = -(lambda/8) * 3/d`.
///
/// `lambda` is the diffusion scale; the caller guarantees `x` has `d > 0`.
pub fn jacobian_potential(x: &BasePoint, lambda: f64) -> f64 {
    -(lambda / 8.0) * (3.0 / x.d())
}

/// Every matrix and scalar derived from the adapted-coordinate geometry at a
/// single orbit-space point. Basis order for 4x4 objects is
/// `(d/dq*, d/dft1, d/dft2, d/da)`; 3x3 objects drop the group direction.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryBundle {
    /// Adapted metric `G` in the bundle basis.
    pub g_adapted: Matrix4<f64>,
    /// Inverse adapted metric.
    pub g_inverse: Matrix4<f64>,
    /// `det G = q*^2`, exactly.
    pub det_g: f64,
    /// `d = q*^2 + ft1^2 + ft2^2`.
    pub d_scalar: f64,
    /// Mechanical connection components `(A_q*, A_ft1, A_ft2)`.
    pub conn: Vector3<f64>,
    /// Killing field restricted to the gauge surface, Q-plane part.
    pub killing_q: Vector2<f64>,
    /// Killing field, f-plane part `(-ft2, ft1)`.
    pub killing_f: Vector2<f64>,
    /// `Lambda_2 = -1/q*` (inverse Faddeev–Popov times gauge gradient).
    pub lambda2: f64,
    /// Faddeev–Popov scalar `Phi = -q*`.
    pub phi_fp: f64,
    /// Projector component `N^b_2 = (-ft2/q*, ft1/q*)`.
    pub proj_n: Vector2<f64>,
    /// Diffusion matrix `R = I + v v^T / q*^2` with `v = (ft2, -ft1)`.
    pub r_matrix: Matrix2<f64>,
    /// Symmetric square root of `R`.
    pub x_sqrt: Matrix2<f64>,
    /// Solution of `R z = -K_f / gamma`, equal to `(ft2/d, -ft1/d)`.
    pub z_vec: Vector2<f64>,
    /// Group-direction diffusion factor `d^{-1/2}`.
    pub x_group: f64,
    /// Orbit-space metric `h` in the basis `(d/dq*, d/dft1, d/dft2)`.
    pub h_orbit: Matrix3<f64>,
    /// Inverse orbit metric; block diagonal `1 (+) R`.
    pub h_orbit_inv: Matrix3<f64>,
    /// `H = det h = q*^2 / d`.
    pub h_det: f64,
    /// `sigma = ln d`.
    pub sigma: f64,
    /// Orbit metric of the Q-plane bundle alone, `gamma = q*^2`.
    pub gamma: f64,
}

impl GeometryBundle {
    /// Evaluate the full bundle at an orbit-space point.
    pub fn at(x: &BasePoint, eps_min: f64) -> Result<Self, GeomError> {
        let q = x.q_star;
        if q < eps_min {
            return Err(GeomError::DegeneratePoint { radius: q, eps_min });
        }
        let (ft1, ft2) = (x.ft1, x.ft2);
        let q2 = q * q;
        let rho2 = x.rho2();
        let d = q2 + rho2;
        let sqrt_d = d.sqrt();

        let g_adapted = Matrix4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, -ft2, //
            0.0, 0.0, 1.0, ft1, //
            0.0, -ft2, ft1, d,
        );
        let g_inverse = Matrix4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, (ft2 * ft2 + q2) / q2, -ft1 * ft2 / q2, ft2 / q2, //
            0.0, -ft1 * ft2 / q2, (ft1 * ft1 + q2) / q2, -ft1 / q2, //
            0.0, ft2 / q2, -ft1 / q2, 1.0 / q2,
        );

        let r_matrix = Matrix2::new(
            1.0 + ft2 * ft2 / q2, -ft1 * ft2 / q2, //
            -ft1 * ft2 / q2, 1.0 + ft1 * ft1 / q2,
        );
        // Square root of R = I + v v^T / q^2, v = (ft2, -ft1). The naive
        // coefficient (sqrt(d)/q - 1)/rho^2 is 0/0 at rho = 0; the rationalized
        // form 1/(q (sqrt(d) + q)) is identical and finite everywhere.
        let c = 1.0 / (q * (sqrt_d + q));
        let x_sqrt = Matrix2::new(
            1.0 + c * ft2 * ft2, -c * ft1 * ft2, //
            -c * ft1 * ft2, 1.0 + c * ft1 * ft1,
        );

        let h_orbit = Matrix3::new(
            1.0, 0.0, 0.0, //
            0.0, (ft1 * ft1 + q2) / d, ft1 * ft2 / d, //
            0.0, ft1 * ft2 / d, (ft2 * ft2 + q2) / d,
        );
        let h_orbit_inv = Matrix3::new(
            1.0, 0.0, 0.0, //
            0.0, r_matrix[(0, 0)], r_matrix[(0, 1)], //
            0.0, r_matrix[(1, 0)], r_matrix[(1, 1)],
        );

        Ok(Self {
            g_adapted,
            g_inverse,
            det_g: q2,
            d_scalar: d,
            conn: Vector3::new(0.0, -ft2 / d, ft1 / d),
            killing_q: Vector2::new(0.0, -q),
            killing_f: Vector2::new(-ft2, ft1),
            lambda2: -1.0 / q,
            phi_fp: -q,
            proj_n: Vector2::new(-ft2 / q, ft1 / q),
            r_matrix,
            x_sqrt,
            z_vec: Vector2::new(ft2 / d, -ft1 / d),
            x_group: 1.0 / sqrt_d,
            h_orbit,
            h_orbit_inv,
            h_det: q2 / d,
            sigma: d.ln(),
            gamma: q2,
        })
    }

    /// Debug dump: one JSON object, keys matching the field names, every
    /// number printed with 17 significant digits so the dump round-trips
    /// bit-exactly.
    pub fn to_debug_json(&self) -> String {
        fn num(x: f64) -> String {
            format!("{:.16e}", x)
        }
        fn v2(v: &Vector2<f64>) -> String {
            format!("[{},{}]", num(v[0]), num(v[1]))
        }
        fn v3(v: &Vector3<f64>) -> String {
            format!("[{},{},{}]", num(v[0]), num(v[1]), num(v[2]))
        }
        fn rows<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> String {
            let body: Vec<String> = (0..N)
                .map(|i| {
                    let cells: Vec<String> = (0..N).map(|j| num(m[(i, j)])).collect();
                    format!("[{}]", cells.join(","))
                })
                .collect();
            format!("[{}]", body.join(","))
        }
        format!(
            concat!(
                "{{\"g_adapted\":{},\"g_inverse\":{},\"det_g\":{},\"d_scalar\":{},",
                "\"conn\":{},\"killing_q\":{},\"killing_f\":{},\"lambda2\":{},",
                "\"phi_fp\":{},\"proj_n\":{},\"r_matrix\":{},\"x_sqrt\":{},",
                "\"z_vec\":{},\"x_group\":{},\"h_orbit\":{},\"h_orbit_inv\":{},",
                "\"h_det\":{},\"sigma\":{},\"gamma\":{}}}"
            ),
            rows(&self.g_adapted),
            rows(&self.g_inverse),
            num(self.det_g),
            num(self.d_scalar),
            v3(&self.conn),
            v2(&self.killing_q),
            v2(&self.killing_f),
            num(self.lambda2),
            num(self.phi_fp),
            v2(&self.proj_n),
            rows(&self.r_matrix),
            rows(&self.x_sqrt),
            v2(&self.z_vec),
            num(self.x_group),
            rows(&self.h_orbit),
            rows(&self.h_orbit_inv),
            num(self.h_det),
            num(self.sigma),
            num(self.gamma),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn sample_base(rng: &mut StdRng) -> BasePoint {
        BasePoint::new(
            rng.gen_range(0.2..5.0),
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-3.0..3.0),
        )
    }

    #[test]
    fn group_act_identity_and_quarter_turn() {
        let p = EuclideanPoint::new(1.0, 0.0, 1.0, 0.0);
        let id = group_act(&p, 0.0);
        assert_eq!(id, p);

        let q = group_act(&p, std::f64::consts::FRAC_PI_2);
        assert_abs_diff_eq!(q.q1, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.q2, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.f1, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.f2, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn group_act_preserves_plane_norms() {
        let p = EuclideanPoint::new(0.3, -1.2, 2.0, 0.7);
        let q = group_act(&p, 1.234);
        assert_abs_diff_eq!(q.q_radius(), p.q_radius(), epsilon = 1e-14);
        assert_abs_diff_eq!(
            q.f1.hypot(q.f2),
            p.f1.hypot(p.f2),
            epsilon = 1e-14
        );
    }

    #[test]
    fn to_adapted_on_gauge_surface() {
        let p = EuclideanPoint::new(2.0, 0.0, 0.3, 0.7);
        let x = to_adapted(&p, DEFAULT_EPS_MIN).unwrap();
        assert_abs_diff_eq!(x.q_star, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x.ft1, 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(x.ft2, 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(x.angle, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn to_adapted_angle_branch() {
        // Q = (0, 1) solves cos a = 0, -sin a = 1, so a = 3*pi/2.
        let p = EuclideanPoint::new(0.0, 1.0, 0.0, 0.0);
        let x = to_adapted(&p, DEFAULT_EPS_MIN).unwrap();
        assert_abs_diff_eq!(x.q_star, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x.angle, 1.5 * std::f64::consts::PI, epsilon = 1e-14);
        let back = from_adapted(&x);
        assert_abs_diff_eq!(back.q1, p.q1, epsilon = 1e-14);
        assert_abs_diff_eq!(back.q2, p.q2, epsilon = 1e-14);
    }

    #[test]
    fn to_adapted_rejects_degenerate() {
        let p = EuclideanPoint::new(1e-9, 0.0, 1.0, 1.0);
        assert!(matches!(
            to_adapted(&p, DEFAULT_EPS_MIN),
            Err(GeomError::DegeneratePoint { .. })
        ));
    }

    #[test]
    fn from_adapted_direct_substitution() {
        let x = AdaptedPoint::new(2.0, 1.0, 0.0, std::f64::consts::PI);
        let p = from_adapted(&x);
        assert_abs_diff_eq!(p.q1, -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.q2, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.f1, -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.f2, 0.0, epsilon = 1e-14);

        let id = AdaptedPoint::new(1.0, 0.0, 0.0, 0.0);
        assert_eq!(from_adapted(&id), EuclideanPoint::new(1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn adapted_round_trip_and_invariance() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let p = EuclideanPoint::new(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
            );
            if p.q_radius() < 0.05 {
                continue;
            }
            let x = to_adapted(&p, DEFAULT_EPS_MIN).unwrap();
            let back = from_adapted(&x);
            assert_abs_diff_eq!(back.q1, p.q1, epsilon = 1e-12);
            assert_abs_diff_eq!(back.q2, p.q2, epsilon = 1e-12);
            assert_abs_diff_eq!(back.f1, p.f1, epsilon = 1e-12);
            assert_abs_diff_eq!(back.f2, p.f2, epsilon = 1e-12);

            // q* and ft are invariant, the angle shifts by theta.
            let theta = rng.gen_range(-7.0..7.0);
            let y = to_adapted(&group_act(&p, theta), DEFAULT_EPS_MIN).unwrap();
            assert_abs_diff_eq!(y.q_star, x.q_star, epsilon = 1e-12);
            assert_abs_diff_eq!(y.ft1, x.ft1, epsilon = 1e-11);
            assert_abs_diff_eq!(y.ft2, x.ft2, epsilon = 1e-11);
            let shift = normalize_angle(y.angle - x.angle - theta);
            assert!(shift < 1e-10 || (TWO_PI - shift) < 1e-10);
        }
    }

    #[test]
    fn bundle_at_origin_of_fiber() {
        let b = GeometryBundle::at(&BasePoint::new(1.0, 0.0, 0.0), DEFAULT_EPS_MIN).unwrap();
        assert_eq!(b.g_adapted, Matrix4::identity());
        assert_eq!(b.d_scalar, 1.0);
        assert_eq!(b.r_matrix, Matrix2::identity());
        assert_eq!(b.x_sqrt, Matrix2::identity());
        assert_eq!(b.h_det, 1.0);
        assert_eq!(b.conn, Vector3::zeros());
    }

    #[test]
    fn bundle_values_at_reference_point() {
        let b = GeometryBundle::at(&BasePoint::new(1.0, 1.0, 1.0), DEFAULT_EPS_MIN).unwrap();
        assert_eq!(b.d_scalar, 3.0);
        assert_eq!(b.r_matrix, Matrix2::new(2.0, -1.0, -1.0, 2.0));
        let xxt = b.x_sqrt * b.x_sqrt.transpose();
        assert_abs_diff_eq!(xxt[(0, 0)], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(xxt[(0, 1)], -1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(xxt[(1, 1)], 2.0, epsilon = 1e-14);
        // sqrt factor: entries (1 + sqrt(3))/2 and -(sqrt(3) - 1)/2.
        let c = (3.0_f64.sqrt() - 1.0) / 2.0;
        assert_abs_diff_eq!(b.x_sqrt[(0, 0)], 1.0 + c, epsilon = 1e-14);
        assert_abs_diff_eq!(b.x_sqrt[(0, 1)], -c, epsilon = 1e-14);
    }

    /// Independent oracle: symmetric 2x2 square root via eigendecomposition.
    fn sqrt2x2_eigen(m: &Matrix2<f64>) -> Matrix2<f64> {
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let gap = (tr * tr / 4.0 - det).max(0.0).sqrt();
        let (l1, l2) = (tr / 2.0 + gap, tr / 2.0 - gap);
        if gap < 1e-14 {
            return Matrix2::identity() * l1.sqrt();
        }
        // Eigenvector for l1.
        let v = if m[(0, 1)].abs() > 1e-300 {
            Vector2::new(m[(0, 1)], l1 - m[(0, 0)]).normalize()
        } else {
            Vector2::new(1.0, 0.0)
        };
        let p1 = v * v.transpose();
        let p2 = Matrix2::identity() - p1;
        p1 * l1.sqrt() + p2 * l2.sqrt()
    }

    #[test]
    fn x_sqrt_matches_eigendecomposition_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..500 {
            let x = sample_base(&mut rng);
            let b = GeometryBundle::at(&x, DEFAULT_EPS_MIN).unwrap();
            let oracle = sqrt2x2_eigen(&b.r_matrix);
            for i in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(b.x_sqrt[(i, j)], oracle[(i, j)], epsilon = 1e-11);
                }
            }
        }
    }

    #[test]
    fn bundle_identities_random_points() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..500 {
            let x = sample_base(&mut rng);
            let b = GeometryBundle::at(&x, DEFAULT_EPS_MIN).unwrap();
            let q2 = x.q_star * x.q_star;

            // det G = q*^2 both analytically and numerically.
            assert_eq!(b.det_g, q2);
            assert_abs_diff_eq!(b.g_adapted.determinant(), q2, epsilon = 1e-12);

            let id4 = b.g_adapted * b.g_inverse;
            assert_abs_diff_eq!((id4 - Matrix4::identity()).abs().max(), 0.0, epsilon = 1e-12);

            let id3 = b.h_orbit * b.h_orbit_inv;
            assert_abs_diff_eq!((id3 - Matrix3::identity()).abs().max(), 0.0, epsilon = 1e-12);

            // R Z = -K_f / gamma.
            let lhs = b.r_matrix * b.z_vec;
            let rhs = -b.killing_f / b.gamma;
            assert_abs_diff_eq!((lhs - rhs).abs().max(), 0.0, epsilon = 1e-12);

            // Group diffusion factor closes the coefficient system.
            let zrz = (b.z_vec.transpose() * b.r_matrix * b.z_vec)[0];
            assert_abs_diff_eq!(
                b.x_group * b.x_group,
                1.0 / b.gamma - zrz,
                epsilon = 1e-12
            );

            // R = N N^T + I, connection pairs to one with the Killing field.
            let nnt = b.proj_n * b.proj_n.transpose() + Matrix2::identity();
            assert_abs_diff_eq!((nnt - b.r_matrix).abs().max(), 0.0, epsilon = 1e-12);
            let pairing = b.conn[1] * b.killing_f[0]
                + b.conn[2] * b.killing_f[1]
                + b.gamma / b.d_scalar;
            assert_abs_diff_eq!(pairing, 1.0, epsilon = 1e-12);

            assert_abs_diff_eq!(b.h_det, q2 / b.d_scalar, epsilon = 1e-15);
        }
    }

    #[test]
    fn jacobian_potential_reference_values() {
        let x = BasePoint::new(1.0, 1.0, 1.0);
        assert_eq!(jacobian_potential(&x, 1.0), -0.125);
        // Flat far away.
        let far = BasePoint::new(1e4, 0.0, 0.0);
        assert!(jacobian_potential(&far, 1.0).abs() < 1e-8);
    }

    #[test]
    fn debug_json_round_trips() {
        let b = GeometryBundle::at(&BasePoint::new(1.3, -0.4, 2.2), DEFAULT_EPS_MIN).unwrap();
        let dump = b.to_debug_json();
        let v: serde_json::Value = serde_json::from_str(&dump).unwrap();
        for key in [
            "g_adapted", "g_inverse", "det_g", "d_scalar", "conn", "killing_q", "killing_f",
            "lambda2", "phi_fp", "proj_n", "r_matrix", "x_sqrt", "z_vec", "x_group", "h_orbit",
            "h_orbit_inv", "h_det", "sigma", "gamma",
        ] {
            assert!(v.get(key).is_some(), "missing key {key}");
        }
        // 17 significant digits round-trip exactly.
        assert_eq!(v["sigma"].as_f64().unwrap(), b.sigma);
        assert_eq!(v["g_inverse"][1][3].as_f64().unwrap(), b.g_inverse[(1, 3)]);
    }
}
