//! Deterministic forward-equation solver for the orbit-space kernel.
//!
//! The orbit metric is axisymmetric in the vector plane, so the solver works
//! in coordinates `(q*, rho, beta)` with `ft = rho (cos beta, sin beta)`.
//! There the inverse metric is diagonal, `diag(1, 1, d/(rho^2 q*^2))`, and
//! the Riemannian density is `sqrt(H) = rho q* / sqrt(d)`: divergence-form
//! differencing with `sqrt(H)` face weights gives zero flux through both
//! coordinate axes automatically, and no mixed-derivative stencils appear.
//!
//! Time stepping splits the operator: the `(q*, rho)` block is explicit Euler
//! under the bound `dt <= C h^2 / lambda` (C = 0.2 documented below, hard
//! ceiling 0.9 of the von Neumann limit computed from the actual face
//! weights); the `beta` line diffusion, whose coefficient `d/(rho^2 q*^2)`
//! is unbounded near the axes, is a constant-coefficient periodic implicit
//! solve per line; the potential `J + V/(lambda m)` multiplies an exact
//! exponential factor. Outer boundaries absorb (Dirichlet), and the absorbed
//! mass is reported.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{jacobian_potential, BasePoint};
use crate::stats::CompensatedSum;

use super::{KernelError, KernelQuery};

/// Resolution and stability controls for the grid solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Cell size along `q*` and `rho`.
    pub h: f64,
    pub q_max: f64,
    pub rho_max: f64,
    pub n_beta: usize,
    /// C in the default step `dt = C h^2 / lambda`.
    pub safety: f64,
    /// Standard deviation of the initial bump, in cells.
    pub init_width_cells: f64,
    /// Explicit step override; rejected if it violates the stability bound.
    pub dt_override: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            h: 0.05,
            q_max: 3.4,
            rho_max: 3.2,
            n_beta: 64,
            safety: 0.2,
            init_width_cells: 1.0,
            dt_override: None,
        }
    }
}

impl GridSpec {
    /// Halve the spatial resolution everywhere (refinement studies).
    pub fn refined(&self) -> Self {
        Self { h: self.h / 2.0, n_beta: self.n_beta * 2, ..*self }
    }
}

/// Result of one grid solve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridOutcome {
    /// Box average of the kernel against the Riemannian volume.
    pub box_average: f64,
    pub mass_initial: f64,
    pub mass_final: f64,
    /// Mass removed by the potential factor (zero when J and V are off).
    pub mass_killed: f64,
    /// Mass lost through the absorbing outer boundary.
    pub mass_absorbed: f64,
    /// Set when the absorbed fraction exceeds one percent.
    pub boundary_loss_warning: bool,
    pub n_steps: usize,
    pub dt: f64,
}

/// Periodic constant-coefficient tridiagonal solve,
/// `(1 + 2 kappa) x_k - kappa (x_{k-1} + x_{k+1}) = r_k` with wraparound,
/// by the Sherman–Morrison rank-one correction of an open Thomas sweep.
fn solve_periodic_line(kappa: f64, r: &mut [f64], scratch: &mut [f64]) {
    let n = r.len();
    debug_assert!(n >= 3);
    let a = 1.0 + 2.0 * kappa;
    let b = -kappa;
    let gamma = -a;
    let (cp, rest) = scratch.split_at_mut(n);
    let (y, z) = rest.split_at_mut(n);

    // Open tridiagonal with modified corners: T00 = a - gamma, Tnn = a - b^2/gamma.
    let d0 = a - gamma;
    let dn = a - b * b / gamma;
    // Forward sweeps for y (rhs r) and z (rhs e0*gamma + en*b).
    cp[0] = b / d0;
    y[0] = r[0] / d0;
    z[0] = gamma / d0;
    for k in 1..n {
        let diag = if k == n - 1 { dn } else { a };
        let m = diag - b * cp[k - 1];
        cp[k] = b / m;
        let zk = if k == n - 1 { b } else { 0.0 };
        y[k] = (r[k] - b * y[k - 1]) / m;
        z[k] = (zk - b * z[k - 1]) / m;
    }
    for k in (0..n - 1).rev() {
        y[k] -= cp[k] * y[k + 1];
        z[k] -= cp[k] * z[k + 1];
    }
    let frac = (y[0] + b / gamma * y[n - 1]) / (1.0 + z[0] + b / gamma * z[n - 1]);
    for k in 0..n {
        r[k] = y[k] - frac * z[k];
    }
}

struct PolarGrid {
    n_q: usize,
    n_r: usize,
    n_b: usize,
    h: f64,
    d_beta: f64,
    /// sqrt(H) at cell centers, indexed `[i * n_r + j]`.
    sqrt_h: Vec<f64>,
    /// q-face weights at `q = i h`, `i = 0..=n_q`, per rho row.
    wq: Vec<f64>,
    /// rho-face weights at `rho = j h`, `j = 0..=n_r`, per q column.
    wr: Vec<f64>,
    /// Potential exponential factor per `(i, j)` and step.
    kill: Vec<f64>,
    /// Implicit beta-line coefficient per `(i, j)`.
    kappa: Vec<f64>,
}

impl PolarGrid {
    fn cell_q(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }
    fn cell_r(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.h
    }
}

pub fn reduced_kernel_grid(q: &KernelQuery, spec: &GridSpec) -> Result<GridOutcome, KernelError> {
    q.validate()?;
    let lam = q.params.lambda();
    if spec.h <= 0.0 || spec.q_max < 10.0 * spec.h || spec.rho_max < 10.0 * spec.h {
        return Err(KernelError::Config("grid too coarse for its domain".into()));
    }
    if spec.n_beta < 8 {
        return Err(KernelError::Config("need at least 8 angular cells".into()));
    }
    let top = &q.box_region;
    if top.center.q_star + top.half_widths[0] > spec.q_max - 2.0 * spec.h {
        return Err(KernelError::Config("box too close to the q* truncation".into()));
    }

    let n_q = (spec.q_max / spec.h).round() as usize;
    let n_r = (spec.rho_max / spec.h).round() as usize;
    let n_b = spec.n_beta;
    let h = spec.h;
    let d_beta = crate::geometry::TWO_PI / n_b as f64;

    // Stability: explicit update factor per cell is
    // dt (lambda/2) (wq+ + wq- + wr+ + wr-) / (h^2 sqrt(H)); require <= 0.9.
    let mut max_rate: f64 = 0.0;
    let mut sqrt_h = vec![0.0; n_q * n_r];
    let mut wq = vec![0.0; (n_q + 1) * n_r];
    let mut wr = vec![0.0; (n_r + 1) * n_q];
    for i in 0..n_q {
        let qc = (i as f64 + 0.5) * h;
        for j in 0..n_r {
            let rc = (j as f64 + 0.5) * h;
            sqrt_h[i * n_r + j] = rc * qc / (qc * qc + rc * rc).sqrt();
        }
    }
    for i in 0..=n_q {
        let qf = i as f64 * h;
        for j in 0..n_r {
            let rc = (j as f64 + 0.5) * h;
            wq[i * n_r + j] = rc * qf / (qf * qf + rc * rc).max(f64::MIN_POSITIVE).sqrt();
        }
    }
    for j in 0..=n_r {
        let rf = j as f64 * h;
        for i in 0..n_q {
            let qc = (i as f64 + 0.5) * h;
            wr[j * n_q + i] = rf * qc / (qc * qc + rf * rf).sqrt();
        }
    }
    for i in 0..n_q {
        for j in 0..n_r {
            let rate = 0.5 * lam
                * (wq[(i + 1) * n_r + j] + wq[i * n_r + j] + wr[(j + 1) * n_q + i] + wr[j * n_q + i])
                / (h * h * sqrt_h[i * n_r + j]);
            max_rate = max_rate.max(rate);
        }
    }
    let hard_bound = 0.9 / max_rate;
    let dt_nominal = (spec.safety * h * h / lam).min(hard_bound);
    let dt_requested = spec.dt_override.unwrap_or(dt_nominal);
    if dt_requested > hard_bound {
        return Err(KernelError::StabilityViolation { dt: dt_requested, bound: hard_bound });
    }
    let n_steps = ((q.t_elapsed / dt_requested).ceil() as usize).max(1);
    let dt = q.t_elapsed / n_steps as f64;

    let mut grid = PolarGrid {
        n_q,
        n_r,
        n_b,
        h,
        d_beta,
        sqrt_h,
        wq,
        wr,
        kill: vec![1.0; n_q * n_r],
        kappa: vec![0.0; n_q * n_r],
    };
    for i in 0..n_q {
        let qc = grid.cell_q(i);
        for j in 0..n_r {
            let rc = grid.cell_r(j);
            let d = qc * qc + rc * rc;
            let x = cartesian(qc, rc, 0.0);
            let mut rate = q.params.potential.eval(&x) / (lam * q.params.mass_m);
            if q.params.jacobian_enabled {
                rate += jacobian_potential(&x, lam);
            }
            grid.kill[i * n_r + j] = (dt * rate).exp();
            grid.kappa[i * n_r + j] = dt * 0.5 * lam * d / (rc * rc * qc * qc) / (d_beta * d_beta);
        }
    }

    // Initial condition: Gaussian bump around the start, unit Riemannian mass.
    let s0 = spec.init_width_cells * h;
    let cell_vol = h * h * d_beta;
    let mut u = vec![0.0; n_q * n_r * n_b];
    let mut norm = CompensatedSum::new();
    for i in 0..n_q {
        let qc = grid.cell_q(i);
        for j in 0..n_r {
            let rc = grid.cell_r(j);
            let w = grid.sqrt_h[i * n_r + j] * cell_vol;
            for k in 0..n_b {
                let beta = k as f64 * d_beta;
                let x = cartesian(qc, rc, beta);
                let dist2 = (x.q_star - q.start.q_star).powi(2)
                    + (x.ft1 - q.start.ft1).powi(2)
                    + (x.ft2 - q.start.ft2).powi(2);
                let val = (-dist2 / (2.0 * s0 * s0)).exp();
                u[(i * n_r + j) * n_b + k] = val;
                norm.add(val * w);
            }
        }
    }
    let scale = 1.0 / norm.value();
    u.iter_mut().for_each(|v| *v *= scale);
    let mass_initial = riemannian_mass(&grid, &u, cell_vol);

    let mut mass_killed_acc = 0.0;
    let mut unew = vec![0.0; u.len()];
    for _ in 0..n_steps {
        explicit_qr_step(&grid, &u, &mut unew, dt, lam);
        implicit_beta_step(&grid, &mut unew);
        mass_killed_acc += kill_step(&grid, &mut unew, cell_vol);
        std::mem::swap(&mut u, &mut unew);
    }

    let mass_final = riemannian_mass(&grid, &u, cell_vol);
    let mass_absorbed = mass_initial - mass_killed_acc - mass_final;
    let box_average = box_average(&grid, &u, q);

    Ok(GridOutcome {
        box_average,
        mass_initial,
        mass_final,
        mass_killed: mass_killed_acc,
        mass_absorbed,
        boundary_loss_warning: mass_absorbed > 0.01 * mass_initial,
        n_steps,
        dt,
    })
}

fn cartesian(qc: f64, rc: f64, beta: f64) -> BasePoint {
    BasePoint::new(qc, rc * beta.cos(), rc * beta.sin())
}

fn riemannian_mass(g: &PolarGrid, u: &[f64], cell_vol: f64) -> f64 {
    let slab: Vec<f64> = (0..g.n_q)
        .into_par_iter()
        .map(|i| {
            let mut acc = CompensatedSum::new();
            for j in 0..g.n_r {
                let w = g.sqrt_h[i * g.n_r + j] * cell_vol;
                for k in 0..g.n_b {
                    acc.add(u[(i * g.n_r + j) * g.n_b + k] * w);
                }
            }
            acc.value()
        })
        .collect();
    crate::stats::compensated_sum(&slab)
}

/// Explicit divergence-form step in the `(q*, rho)` directions. Dirichlet
/// (absorbing) ghosts beyond the outer faces; the axis faces carry zero
/// weight, so no flux crosses them.
fn explicit_qr_step(g: &PolarGrid, u: &[f64], unew: &mut [f64], dt: f64, lam: f64) {
    let n_r = g.n_r;
    let n_b = g.n_b;
    let h2 = g.h * g.h;
    let coef = dt * 0.5 * lam / h2;
    unew.par_chunks_mut(n_r * n_b).enumerate().for_each(|(i, slab)| {
        for j in 0..n_r {
            let c = (i * n_r + j) * n_b;
            let sh = g.sqrt_h[i * n_r + j];
            let wq_lo = g.wq[i * n_r + j];
            let wq_hi = g.wq[(i + 1) * n_r + j];
            let wr_lo = g.wr[j * g.n_q + i];
            let wr_hi = g.wr[(j + 1) * g.n_q + i];
            for k in 0..n_b {
                let uc = u[c + k];
                let u_qm = if i > 0 { u[((i - 1) * n_r + j) * n_b + k] } else { uc };
                let u_qp = if i + 1 < g.n_q { u[((i + 1) * n_r + j) * n_b + k] } else { 0.0 };
                let u_rm = if j > 0 { u[(i * n_r + j - 1) * n_b + k] } else { uc };
                let u_rp = if j + 1 < n_r { u[(i * n_r + j + 1) * n_b + k] } else { 0.0 };
                // Axis ghosts mirror the center value; the face weight is
                // zero there anyway, so the choice is inert.
                let flux = wq_hi * (u_qp - uc) - wq_lo * (uc - u_qm) + wr_hi * (u_rp - uc)
                    - wr_lo * (uc - u_rm);
                slab[j * n_b + k] = uc + coef * flux / sh;
            }
        }
    });
}

fn implicit_beta_step(g: &PolarGrid, u: &mut [f64]) {
    let n_b = g.n_b;
    let n_r = g.n_r;
    u.par_chunks_mut(n_b).enumerate().for_each(|(line, chunk)| {
        let i = line / n_r;
        let j = line % n_r;
        let kappa = g.kappa[i * n_r + j];
        let mut scratch = vec![0.0; 3 * n_b];
        solve_periodic_line(kappa, chunk, &mut scratch);
    });
}

fn kill_step(g: &PolarGrid, u: &mut [f64], cell_vol: f64) -> f64 {
    let n_r = g.n_r;
    let n_b = g.n_b;
    let killed: Vec<f64> = u
        .par_chunks_mut(n_r * n_b)
        .enumerate()
        .map(|(i, slab)| {
            let mut acc = CompensatedSum::new();
            for j in 0..n_r {
                let f = g.kill[i * n_r + j];
                let w = g.sqrt_h[i * n_r + j] * cell_vol;
                for k in 0..n_b {
                    let before = slab[j * n_b + k];
                    let after = before * f;
                    slab[j * n_b + k] = after;
                    acc.add((before - after) * w);
                }
            }
            acc.value()
        })
        .collect();
    crate::stats::compensated_sum(&killed)
}

/// Trilinear interpolation of the solution at a Cartesian orbit point.
fn interpolate(g: &PolarGrid, u: &[f64], x: &BasePoint) -> f64 {
    let rho = x.ft1.hypot(x.ft2);
    let beta = crate::geometry::normalize_angle(x.ft2.atan2(x.ft1));

    let fq = (x.q_star / g.h - 0.5).clamp(0.0, (g.n_q - 1) as f64 - 1e-9);
    let fr = (rho / g.h - 0.5).clamp(0.0, (g.n_r - 1) as f64 - 1e-9);
    let fb = beta / g.d_beta;
    let (iq, ir) = (fq.floor() as usize, fr.floor() as usize);
    let ib = (fb.floor() as usize) % g.n_b;
    let (tq, tr, tb) = (fq - iq as f64, fr - ir as f64, fb - fb.floor());
    let iq1 = (iq + 1).min(g.n_q - 1);
    let ir1 = (ir + 1).min(g.n_r - 1);
    let ib1 = (ib + 1) % g.n_b;

    let at = |i: usize, j: usize, k: usize| u[(i * g.n_r + j) * g.n_b + k];
    let mut out = 0.0;
    for (i, wi) in [(iq, 1.0 - tq), (iq1, tq)] {
        for (j, wj) in [(ir, 1.0 - tr), (ir1, tr)] {
            for (k, wk) in [(ib, 1.0 - tb), (ib1, tb)] {
                out += wi * wj * wk * at(i, j, k);
            }
        }
    }
    out
}

/// Box average against the Riemannian volume, matching the Monte-Carlo
/// estimator's functional.
fn box_average(g: &PolarGrid, u: &[f64], q: &KernelQuery) -> f64 {
    let mut num = CompensatedSum::new();
    let mut den = CompensatedSum::new();
    for (x, w) in q.box_region.tensor_rule(6) {
        let sqrt_h = x.q_star / x.d().sqrt();
        num.add(w * sqrt_h * interpolate(g, u, &x));
        den.add(w * sqrt_h);
    }
    num.value() / den.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn periodic_solver_inverts_operator() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(9);
        for n in [8usize, 17, 64] {
            for kappa in [0.03, 1.0, 250.0] {
                let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut x = rhs.clone();
                let mut scratch = vec![0.0; 3 * n];
                solve_periodic_line(kappa, &mut x, &mut scratch);
                for k in 0..n {
                    let km = (k + n - 1) % n;
                    let kp = (k + 1) % n;
                    let back = (1.0 + 2.0 * kappa) * x[k] - kappa * (x[km] + x[kp]);
                    assert_abs_diff_eq!(back, rhs[k], epsilon = 1e-9 * (1.0 + kappa));
                }
            }
        }
    }

    #[test]
    fn periodic_solver_conserves_line_sum() {
        let n = 32;
        let rhs: Vec<f64> = (0..n).map(|k| 1.0 + (k as f64 * 0.3).sin()).collect();
        let total: f64 = rhs.iter().sum();
        let mut x = rhs;
        let mut scratch = vec![0.0; 3 * n];
        solve_periodic_line(12.5, &mut x, &mut scratch);
        let after: f64 = x.iter().sum();
        assert_abs_diff_eq!(after, total, epsilon = 1e-10);
    }

    #[test]
    fn stability_override_is_checked() {
        let q = crate::kernels::default_query();
        let spec = GridSpec { dt_override: Some(1.0), h: 0.1, ..GridSpec::default() };
        assert!(matches!(
            reduced_kernel_grid(&q, &spec),
            Err(KernelError::StabilityViolation { .. })
        ));
    }
}
