//! Euler–Maruyama integration of the bundle diffusions and their path weights.
//!
//! Four processes share one diffusion scale `lambda = mu^2 kappa`:
//!
//! * `original`  — driftless flat Brownian motion in `(Q1, Q2, f1, f2)`,
//! * `adapted`   — the same motion written in `(q*, ft, a)`, with the radial
//!   `1/q*` drift and the `-(1/q*) eps^{ab} ft^b` angular coupling,
//! * `transformed` — the orthogonally mixed noise version whose `(q*, ft)`
//!   block is driven by `diag(1, X)` with `X X^T = R`,
//! * `reduced`   — the orbit-space motion alone, either with the projected
//!   drift (`xi`) or with the Laplace–Beltrami drift (`xi_tilde`).
//!
//! Weights accumulated along a path: the potential/curvature exponent
//! `dt [V/(lambda m) + J]` (midpoint rule) and, for `n != 0`, the filtering
//! phase `exp{-lambda n^2 dt/(2d) - i n sqrt(lambda dt) A_c X^c_b w^b}`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    from_adapted, group_act, jacobian_potential, normalize_angle, to_adapted, AdaptedPoint,
    BasePoint, EuclideanPoint,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    /// Path entered the guarded neighborhood of the excluded origin.
    #[error("path hit the axis guard at t = {time}")]
    AxisHit { time: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Group-invariant potential term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Zero,
    /// `V = c1 q*^2 + c2 (ft1^2 + ft2^2)`.
    InvariantQuadratic { c1: f64, c2: f64 },
}

impl Potential {
    pub fn eval(&self, x: &BasePoint) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::InvariantQuadratic { c1, c2 } => {
                c1 * x.q_star * x.q_star + c2 * x.rho2()
            }
        }
    }
}

/// Simulation parameters; `mu2kappa` is the single diffusion scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// `lambda = mu^2 kappa`, units length^2/time.
    pub mu2kappa: f64,
    pub mass_m: f64,
    pub dt: f64,
    pub t_total: f64,
    /// Axis guard radius; paths crossing it are discarded and counted.
    pub eps_min: f64,
    pub seed: u64,
    pub n_paths: u64,
    pub potential: Potential,
    /// Negative-control switch: when false the curvature weight J is omitted.
    pub jacobian_enabled: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            mu2kappa: 1.0,
            mass_m: 1.0,
            dt: 1e-3,
            t_total: 0.5,
            eps_min: 1e-6,
            seed: 42,
            n_paths: 1_000_000,
            potential: Potential::Zero,
            jacobian_enabled: true,
        }
    }
}

impl SimParams {
    pub fn lambda(&self) -> f64 {
        self.mu2kappa
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::Config(msg.to_string()));
        if !(self.mu2kappa > 0.0) {
            return bad("mu2kappa must be positive");
        }
        if !(self.mass_m > 0.0) {
            return bad("mass_m must be positive");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.dt > self.t_total {
            return bad("dt must not exceed t_total");
        }
        if !(self.eps_min > 0.0) {
            return bad("eps_min must be positive");
        }
        if self.n_paths == 0 {
            return bad("n_paths must be positive");
        }
        Ok(())
    }
}

/// Position variant carried by a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatePoint {
    Original(EuclideanPoint),
    Adapted(AdaptedPoint),
    Reduced(BasePoint),
}

impl StatePoint {
    /// Orbit-space coordinates of the state, if defined without a guard.
    fn base(&self, eps_min: f64) -> Result<BasePoint, SimError> {
        match self {
            StatePoint::Original(p) => to_adapted(p, eps_min)
                .map(|x| x.base())
                .map_err(|_| SimError::AxisHit { time: f64::NAN }),
            StatePoint::Adapted(x) => Ok(x.base()),
            StatePoint::Reduced(b) => Ok(*b),
        }
    }
}

/// One path at one instant: position, accumulated log-weight, and the
/// filtering phase factor (modulus at most one).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub point: StatePoint,
    pub time: f64,
    pub weight_log: f64,
    pub phase: Complex64,
}

impl PathState {
    pub fn new(point: StatePoint) -> Self {
        Self { point, time: 0.0, weight_log: 0.0, phase: Complex64::new(1.0, 0.0) }
    }
}

/// Reproducible per-path noise: one ChaCha stream per `(seed, path index)`.
/// Identical keys reproduce bit-identical normal sequences; distinct keys
/// give independent streams, so paths can run on any number of threads.
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, path_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        Self { rng }
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normals<const K: usize>(&mut self) -> [f64; K] {
        let mut out = [0.0; K];
        for slot in &mut out {
            *slot = self.normal();
        }
        out
    }
}

/// SplitMix64 step, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn expect_original(s: &PathState) -> Result<EuclideanPoint, SimError> {
    match s.point {
        StatePoint::Original(p) => Ok(p),
        _ => Err(SimError::Config("expected original-coordinates state".into())),
    }
}

fn expect_adapted(s: &PathState) -> Result<AdaptedPoint, SimError> {
    match s.point {
        StatePoint::Adapted(x) => Ok(x),
        _ => Err(SimError::Config("expected adapted-coordinates state".into())),
    }
}

fn expect_reduced(s: &PathState) -> Result<BasePoint, SimError> {
    match s.point {
        StatePoint::Reduced(b) => Ok(b),
        _ => Err(SimError::Config("expected reduced-coordinates state".into())),
    }
}

/// Apply `X`, the symmetric square root of `R`, to a noise pair.
/// `X w = w + v (v . w) / (q (sqrt(d) + q))` with `v = (ft2, -ft1)`.
#[inline]
fn apply_x_sqrt(q: f64, ft1: f64, ft2: f64, w1: f64, w2: f64) -> (f64, f64) {
    let d = q * q + ft1 * ft1 + ft2 * ft2;
    let c = 1.0 / (q * (d.sqrt() + q));
    let vw = ft2 * w1 - ft1 * w2;
    (w1 + c * ft2 * vw, w2 - c * ft1 * vw)
}

fn step_original_dt(
    s: &PathState,
    dw: [f64; 4],
    p: &SimParams,
    dt: f64,
) -> Result<PathState, SimError> {
    let pt = expect_original(s)?;
    let g = (p.lambda() * dt).sqrt();
    let next = EuclideanPoint::new(
        pt.q1 + g * dw[0],
        pt.q2 + g * dw[1],
        pt.f1 + g * dw[2],
        pt.f2 + g * dw[3],
    );
    let time = s.time + dt;
    if next.q_radius() < p.eps_min {
        return Err(SimError::AxisHit { time });
    }
    Ok(PathState { point: StatePoint::Original(next), time, ..*s })
}

fn step_adapted_dt(
    s: &PathState,
    dw: [f64; 4],
    p: &SimParams,
    dt: f64,
) -> Result<PathState, SimError> {
    let x = expect_adapted(s)?;
    let lam = p.lambda();
    let g = (lam * dt).sqrt();
    let q = x.q_star;
    let q2 = q * q;
    // dw = [w_m, w_alpha, w_1, w_2]; eps^{12} = +1.
    let q_next = q + 0.5 * lam / q * dt + g * dw[0];
    let ft1 = x.ft1 - 0.5 * lam * x.ft1 / q2 * dt + g * (-x.ft2 / q * dw[1] + dw[2]);
    let ft2 = x.ft2 - 0.5 * lam * x.ft2 / q2 * dt + g * (x.ft1 / q * dw[1] + dw[3]);
    let angle = normalize_angle(x.angle - g / q * dw[1]);
    let time = s.time + dt;
    if q_next < p.eps_min {
        return Err(SimError::AxisHit { time });
    }
    Ok(PathState {
        point: StatePoint::Adapted(AdaptedPoint { q_star: q_next, ft1, ft2, angle }),
        time,
        ..*s
    })
}

fn step_transformed_dt(
    s: &PathState,
    dw: [f64; 4],
    p: &SimParams,
    dt: f64,
) -> Result<PathState, SimError> {
    let x = expect_adapted(s)?;
    let lam = p.lambda();
    let g = (lam * dt).sqrt();
    let q = x.q_star;
    let q2 = q * q;
    let d = x.base().d();
    // dw = [w_m, w_b1, w_b2, w_beta].
    let (x1, x2) = apply_x_sqrt(q, x.ft1, x.ft2, dw[1], dw[2]);
    let q_next = q + 0.5 * lam / q * dt + g * dw[0];
    let ft1 = x.ft1 - 0.5 * lam * x.ft1 / q2 * dt + g * x1;
    let ft2 = x.ft2 - 0.5 * lam * x.ft2 / q2 * dt + g * x2;
    // Group direction: Z^T X w pair plus the extra d^{-1/2} channel; the
    // contraction collapses to (v . w) / (q sqrt(d)).
    let vw = x.ft2 * dw[1] - x.ft1 * dw[2];
    let angle = normalize_angle(x.angle + g * (vw / (q * d.sqrt()) + dw[3] / d.sqrt()));
    let time = s.time + dt;
    if q_next < p.eps_min {
        return Err(SimError::AxisHit { time });
    }
    Ok(PathState {
        point: StatePoint::Adapted(AdaptedPoint { q_star: q_next, ft1, ft2, angle }),
        time,
        ..*s
    })
}

/// Drift choice for the orbit-space process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReducedMode {
    /// Projection of the bundle motion: drift `(1/q*, -ft/q*^2) lambda/2`.
    Xi,
    /// Laplace–Beltrami motion of the orbit metric: drift
    /// `(1/q* - q*/d, -ft/q*^2 - ft/d) lambda/2`.
    XiTilde,
}

fn step_reduced_dt(
    s: &PathState,
    dw: [f64; 3],
    p: &SimParams,
    mode: ReducedMode,
    dt: f64,
) -> Result<PathState, SimError> {
    let b = expect_reduced(s)?;
    let lam = p.lambda();
    let g = (lam * dt).sqrt();
    let q = b.q_star;
    let q2 = q * q;
    let d = b.d();
    let (drift_q, drift_f) = match mode {
        ReducedMode::Xi => (1.0 / q, -1.0 / q2),
        ReducedMode::XiTilde => (1.0 / q - q / d, -1.0 / q2 - 1.0 / d),
    };
    let (x1, x2) = apply_x_sqrt(q, b.ft1, b.ft2, dw[1], dw[2]);
    let q_next = q + 0.5 * lam * drift_q * dt + g * dw[0];
    let ft1 = b.ft1 + 0.5 * lam * drift_f * b.ft1 * dt + g * x1;
    let ft2 = b.ft2 + 0.5 * lam * drift_f * b.ft2 * dt + g * x2;
    let time = s.time + dt;
    if q_next < p.eps_min {
        return Err(SimError::AxisHit { time });
    }
    Ok(PathState {
        point: StatePoint::Reduced(BasePoint::new(q_next, ft1, ft2)),
        time,
        ..*s
    })
}

pub fn step_original(s: &PathState, dw: [f64; 4], p: &SimParams) -> Result<PathState, SimError> {
    step_original_dt(s, dw, p, p.dt)
}

pub fn step_adapted(s: &PathState, dw: [f64; 4], p: &SimParams) -> Result<PathState, SimError> {
    step_adapted_dt(s, dw, p, p.dt)
}

pub fn step_transformed(s: &PathState, dw: [f64; 4], p: &SimParams) -> Result<PathState, SimError> {
    step_transformed_dt(s, dw, p, p.dt)
}

pub fn step_reduced(
    s: &PathState,
    dw: [f64; 3],
    p: &SimParams,
    mode: ReducedMode,
) -> Result<PathState, SimError> {
    step_reduced_dt(s, dw, p, mode, p.dt)
}

/// Accumulate the Feynman–Kac log-weight over one step (midpoint rule) and,
/// for `n != 0`, the filtering phase factor. `dw_used` are the two
/// vector-space noise increments of the step just taken (Ito convention:
/// geometry frozen at `x_prev`).
pub fn accumulate_weights(
    s: &PathState,
    x_prev: &BasePoint,
    x_next: &BasePoint,
    n: i32,
    p: &SimParams,
    dt: f64,
    dw_used: [f64; 2],
) -> PathState {
    let lam = p.lambda();
    let mid = BasePoint::new(
        0.5 * (x_prev.q_star + x_next.q_star),
        0.5 * (x_prev.ft1 + x_next.ft1),
        0.5 * (x_prev.ft2 + x_next.ft2),
    );
    let mut rate = p.potential.eval(&mid) / (lam * p.mass_m);
    if p.jacobian_enabled {
        rate += jacobian_potential(&mid, lam);
    }
    let weight_log = s.weight_log + dt * rate;

    let mut phase = s.phase;
    if n != 0 {
        let nf = n as f64;
        let d = x_prev.d();
        let q = x_prev.q_star;
        let decay = (-lam * nf * nf * dt / (2.0 * d)).exp();
        // A^T X w = -(v . w) / (q sqrt(d)); the exponent carries -i n of it.
        let vw = x_prev.ft2 * dw_used[0] - x_prev.ft1 * dw_used[1];
        let ang = nf * (lam * dt).sqrt() * vw / (q * d.sqrt());
        phase *= Complex64::from_polar(decay, ang);
    }
    PathState { weight_log, phase, ..*s }
}

/// Which process a batch integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Original,
    Adapted,
    Transformed,
    ReducedXi,
    ReducedXiTilde,
}

/// Endpoint of one path, reported in orbit-space coordinates.
#[derive(Debug, Clone, Copy)]
pub struct EndpointSample {
    pub time: f64,
    pub base: BasePoint,
    pub weight_log: f64,
    pub phase: Complex64,
    pub discarded: bool,
}

/// Result of a batch run; `samples` is ordered by path index, so output is
/// byte-reproducible from `(seed, params)` independent of thread count.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub kind: ProcessKind,
    pub n_fourier: i32,
    pub t: f64,
    pub dt_effective: f64,
    pub n_paths: u64,
    pub discards: u64,
    pub samples: Vec<EndpointSample>,
}

impl SampleSet {
    /// Stream endpoints as CSV with a fixed header.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,q_star,ft1,ft2,weight_log,phase_re,phase_im,discarded")?;
        for s in &self.samples {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                s.time,
                s.base.q_star,
                s.base.ft1,
                s.base.ft2,
                s.weight_log,
                s.phase.re,
                s.phase.im,
                u8::from(s.discarded)
            )?;
        }
        Ok(())
    }
}

fn simulate_one(
    kind: ProcessKind,
    n: i32,
    p: &SimParams,
    start: StatePoint,
    n_steps: usize,
    dt: f64,
    path_index: u64,
) -> EndpointSample {
    let mut stream = NoiseStream::new(p.seed, path_index);
    let mut state = PathState::new(start);
    let track_weights = !matches!(kind, ProcessKind::Original);
    for _ in 0..n_steps {
        let prev_base = if track_weights {
            state.point.base(p.eps_min).ok()
        } else {
            None
        };
        let stepped = match kind {
            ProcessKind::Original => step_original_dt(&state, stream.normals::<4>(), p, dt),
            ProcessKind::Adapted => step_adapted_dt(&state, stream.normals::<4>(), p, dt),
            ProcessKind::Transformed => {
                let dw = stream.normals::<4>();
                step_transformed_dt(&state, dw, p, dt).map(|s| (s, [dw[1], dw[2]]))
                    .map(|(s, used)| {
                        let next = s.point.base(p.eps_min).expect("adapted state");
                        accumulate_weights(&s, &prev_base.unwrap(), &next, n, p, dt, used)
                    })
            }
            ProcessKind::ReducedXi | ProcessKind::ReducedXiTilde => {
                let mode = if kind == ProcessKind::ReducedXi {
                    ReducedMode::Xi
                } else {
                    ReducedMode::XiTilde
                };
                let dw = stream.normals::<3>();
                step_reduced_dt(&state, dw, p, mode, dt).map(|s| {
                    let next = s.point.base(p.eps_min).expect("reduced state");
                    accumulate_weights(&s, &prev_base.unwrap(), &next, n, p, dt, [dw[1], dw[2]])
                })
            }
        };
        // Adapted paths carry weights too; the stepper result has no weight
        // update yet for that branch.
        let stepped = match (kind, stepped) {
            (ProcessKind::Adapted, Ok(s)) => {
                let next = s.point.base(p.eps_min).expect("adapted state");
                Ok(accumulate_weights(&s, &prev_base.unwrap(), &next, n, p, dt, [0.0, 0.0]))
            }
            (_, other) => other,
        };
        match stepped {
            Ok(next) => state = next,
            Err(SimError::AxisHit { time }) => {
                let base = state
                    .point
                    .base(p.eps_min)
                    .unwrap_or(BasePoint::new(p.eps_min, 0.0, 0.0));
                return EndpointSample {
                    time: if time.is_nan() { state.time } else { time },
                    base,
                    weight_log: state.weight_log,
                    phase: state.phase,
                    discarded: true,
                };
            }
            Err(_) => unreachable!("steppers only fail with AxisHit"),
        }
    }
    let base = state
        .point
        .base(p.eps_min)
        .unwrap_or(BasePoint::new(p.eps_min, 0.0, 0.0));
    EndpointSample {
        time: state.time,
        base,
        weight_log: state.weight_log,
        phase: state.phase,
        discarded: false,
    }
}

/// Run `p.n_paths` independent trajectories of the chosen process up to
/// horizon `t`. Deterministic given `(seed, params)`; the number of axis
/// discards is reported alongside the endpoint samples.
pub fn simulate_batch(
    kind: ProcessKind,
    n: i32,
    p: &SimParams,
    start: StatePoint,
    t: f64,
) -> Result<SampleSet, SimError> {
    p.validate()?;
    if !(t > 0.0) {
        return Err(SimError::Config("horizon t must be positive".into()));
    }
    if n != 0
        && !matches!(
            kind,
            ProcessKind::Transformed | ProcessKind::ReducedXi | ProcessKind::ReducedXiTilde
        )
    {
        return Err(SimError::Config(
            "nonzero Fourier index needs the transformed noise decomposition".into(),
        ));
    }
    match (kind, &start) {
        (ProcessKind::Original, StatePoint::Original(pt)) => {
            if pt.q_radius() < p.eps_min {
                return Err(SimError::Config("start point inside axis guard".into()));
            }
        }
        (ProcessKind::Adapted | ProcessKind::Transformed, StatePoint::Adapted(x)) => {
            if x.q_star < p.eps_min {
                return Err(SimError::Config("start point inside axis guard".into()));
            }
        }
        (ProcessKind::ReducedXi | ProcessKind::ReducedXiTilde, StatePoint::Reduced(b)) => {
            if b.q_star < p.eps_min {
                return Err(SimError::Config("start point inside axis guard".into()));
            }
        }
        _ => return Err(SimError::Config("start variant does not match process kind".into())),
    }

    let n_steps = ((t / p.dt).ceil() as usize).max(1);
    let dt = t / n_steps as f64;

    let samples: Vec<EndpointSample> = (0..p.n_paths)
        .into_par_iter()
        .map(|i| simulate_one(kind, n, p, start, n_steps, dt, i))
        .collect();
    let discards = samples.iter().filter(|s| s.discarded).count() as u64;

    Ok(SampleSet {
        kind,
        n_fourier: n,
        t,
        dt_effective: dt,
        n_paths: p.n_paths,
        discards,
        samples,
    })
}

/// Start state helper: the flat representative of a base point at angle zero.
pub fn euclidean_start(base: &BasePoint) -> StatePoint {
    StatePoint::Original(from_adapted(&base.with_angle(0.0)))
}

/// Start state helper for bundle processes.
pub fn adapted_start(base: &BasePoint) -> StatePoint {
    StatePoint::Adapted(base.with_angle(0.0))
}

/// Rotate a flat start point; endpoint laws of invariant quantities must not
/// change. Exposed for the isometry checks.
pub fn rotated_euclidean_start(base: &BasePoint, theta: f64) -> StatePoint {
    match euclidean_start(base) {
        StatePoint::Original(p) => StatePoint::Original(group_act(&p, theta)),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::mean_and_stderr;
    use approx::assert_abs_diff_eq;

    fn quiet_params(n_paths: u64, dt: f64) -> SimParams {
        SimParams { n_paths, dt, ..SimParams::default() }
    }

    #[test]
    fn zero_noise_keeps_original_point() {
        let p = quiet_params(1, 1e-3);
        let s = PathState::new(StatePoint::Original(EuclideanPoint::new(1.0, 0.5, -0.2, 0.3)));
        let next = step_original(&s, [0.0; 4], &p).unwrap();
        match next.point {
            StatePoint::Original(pt) => {
                assert_eq!(pt, EuclideanPoint::new(1.0, 0.5, -0.2, 0.3));
            }
            _ => panic!(),
        }
        assert_abs_diff_eq!(next.time, 1e-3, epsilon = 1e-15);
    }

    #[test]
    fn adapted_pure_radial_drift_on_fiber_origin() {
        let p = quiet_params(1, 1e-3);
        let s = PathState::new(StatePoint::Adapted(AdaptedPoint::new(2.0, 0.0, 0.0, 0.0)));
        let next = step_adapted(&s, [0.0; 4], &p).unwrap();
        match next.point {
            StatePoint::Adapted(x) => {
                assert_abs_diff_eq!(x.q_star, 2.0 + 0.5 * 1e-3 / 2.0, epsilon = 1e-15);
                assert_eq!((x.ft1, x.ft2, x.angle), (0.0, 0.0, 0.0));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn transformed_noise_decouples_on_fiber_origin() {
        let p = quiet_params(1, 1e-2);
        let s = PathState::new(StatePoint::Adapted(AdaptedPoint::new(1.5, 0.0, 0.0, 0.0)));
        let dw = [0.0, 0.7, -0.3, 0.9];
        let next = step_transformed(&s, dw, &p).unwrap();
        let g = (1.0f64 * 1e-2).sqrt();
        match next.point {
            StatePoint::Adapted(x) => {
                assert_abs_diff_eq!(x.ft1, g * 0.7, epsilon = 1e-14);
                assert_abs_diff_eq!(x.ft2, -g * 0.3, epsilon = 1e-14);
                // d = q^2 at the fiber origin, so the group step is w_beta/q.
                assert_abs_diff_eq!(x.angle, g * 0.9 / 1.5, epsilon = 1e-14);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn reduced_mode_drift_gap() {
        let p = quiet_params(1, 1e-3);
        let b = BasePoint::new(1.2, 0.7, -0.4);
        let s = PathState::new(StatePoint::Reduced(b));
        let xi = step_reduced(&s, [0.0; 3], &p, ReducedMode::Xi).unwrap();
        let xit = step_reduced(&s, [0.0; 3], &p, ReducedMode::XiTilde).unwrap();
        let (bx, bt) = match (xi.point, xit.point) {
            (StatePoint::Reduced(a), StatePoint::Reduced(b)) => (a, b),
            _ => panic!(),
        };
        let lam_half_dt = 0.5 * 1e-3;
        let d = b.d();
        assert_abs_diff_eq!(bx.q_star - bt.q_star, lam_half_dt * b.q_star / d, epsilon = 1e-15);
        assert_abs_diff_eq!(bx.ft1 - bt.ft1, lam_half_dt * b.ft1 / d, epsilon = 1e-15);
        assert_abs_diff_eq!(bx.ft2 - bt.ft2, lam_half_dt * b.ft2 / d, epsilon = 1e-15);
    }

    #[test]
    fn weight_step_reference_value() {
        let p = quiet_params(1, 1e-2);
        let s = PathState::new(StatePoint::Reduced(BasePoint::new(1.0, 1.0, 1.0)));
        let x = BasePoint::new(1.0, 1.0, 1.0);
        let next = accumulate_weights(&s, &x, &x, 0, &p, 1e-2, [0.0, 0.0]);
        assert_abs_diff_eq!(next.weight_log, -0.00125, epsilon = 1e-15);
        assert_eq!(next.phase, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn frozen_phase_modulus_and_mean() {
        // Frozen geometry: the modulus decays deterministically like
        // exp(-lambda n^2 T / (2 d)); the mean adds the quadratic variation
        // of the angle and lands on exp(-lambda n^2 T / (2 q*^2)).
        let p = quiet_params(1, 1e-3);
        let x = BasePoint::new(1.0, 0.8, -0.5);
        let n = 2;
        let t_total = 0.2;
        let n_steps = 200;
        let n_rep = 20_000u64;
        let mut reals = Vec::with_capacity(n_rep as usize);
        for rep in 0..n_rep {
            let mut stream = NoiseStream::new(987, rep);
            let mut s = PathState::new(StatePoint::Reduced(x));
            for _ in 0..n_steps {
                let dw = stream.normals::<2>();
                s = accumulate_weights(&s, &x, &x, n, &p, 1e-3, dw);
            }
            let want_mod = (-1.0 * (n * n) as f64 * t_total / (2.0 * x.d())).exp();
            assert_abs_diff_eq!(s.phase.norm(), want_mod, epsilon = 1e-12);
            reals.push(s.phase.re);
        }
        let batch: Vec<f64> = reals.chunks(500).map(|c| c.iter().sum::<f64>() / 500.0).collect();
        let (mean, se) = mean_and_stderr(&batch);
        let want_mean = (-1.0 * (n * n) as f64 * t_total / (2.0 * x.q_star * x.q_star)).exp();
        assert!(
            (mean - want_mean).abs() < 3.0 * se,
            "mean {mean} vs {want_mean} (se {se})"
        );
    }

    #[test]
    fn one_step_second_moments_match_r() {
        let dt = 1e-3;
        let p = quiet_params(1, dt);
        let x = AdaptedPoint::new(0.9, 1.1, -0.6, 0.3);
        let b = crate::geometry::GeometryBundle::at(&x.base(), p.eps_min).unwrap();
        let n_rep = 200_000;
        let mut d1 = Vec::with_capacity(n_rep);
        let mut d2 = Vec::with_capacity(n_rep);
        let mut da = Vec::with_capacity(n_rep);
        let s0 = PathState::new(StatePoint::Adapted(x));
        for rep in 0..n_rep {
            let mut stream = NoiseStream::new(5150, rep as u64);
            let next = step_adapted(&s0, stream.normals::<4>(), &p).unwrap();
            let y = expect_adapted(&next).unwrap();
            d1.push(y.ft1 - x.ft1);
            d2.push(y.ft2 - x.ft2);
            let mut delta = y.angle - x.angle;
            if delta > std::f64::consts::PI {
                delta -= crate::geometry::TWO_PI;
            }
            if delta < -std::f64::consts::PI {
                delta += crate::geometry::TWO_PI;
            }
            da.push(delta);
        }
        let cov = |a: &[f64], bv: &[f64]| -> (f64, f64) {
            let prods: Vec<f64> = a.iter().zip(bv).map(|(u, v)| u * v).collect();
            let batch: Vec<f64> =
                prods.chunks(4000).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            mean_and_stderr(&batch)
        };
        let scale = dt; // lambda = 1
        let checks = [
            (cov(&d1, &d1), scale * b.r_matrix[(0, 0)]),
            (cov(&d1, &d2), scale * b.r_matrix[(0, 1)]),
            (cov(&d2, &d2), scale * b.r_matrix[(1, 1)]),
            // Cross block against the inverse-metric entries (ft2, -ft1)/q^2.
            (cov(&d1, &da), scale * x.ft2 / (x.q_star * x.q_star)),
            (cov(&d2, &da), scale * (-x.ft1) / (x.q_star * x.q_star)),
            (cov(&da, &da), scale / (x.q_star * x.q_star)),
        ];
        // Six statistics tested jointly; 4 standard errors keeps the
        // familywise false-alarm rate well under a percent.
        for ((got, se), want) in checks {
            assert!(
                (got - want).abs() < 4.0 * se + 1e-9,
                "moment {got:.3e} vs {want:.3e} (se {se:.1e})"
            );
        }
    }

    #[test]
    fn transformed_matches_adapted_one_step_moments() {
        let dt = 1e-3;
        let p = quiet_params(1, dt);
        let x = AdaptedPoint::new(1.4, -0.8, 0.5, 1.0);
        let s0 = PathState::new(StatePoint::Adapted(x));
        let n_rep = 150_000;
        let mut diffs: Vec<[f64; 4]> = Vec::with_capacity(2 * n_rep);
        let collect = |transformed: bool, out: &mut Vec<[f64; 4]>| {
            for rep in 0..n_rep {
                let mut stream = NoiseStream::new(if transformed { 7 } else { 8 }, rep as u64);
                let next = if transformed {
                    step_transformed(&s0, stream.normals::<4>(), &p).unwrap()
                } else {
                    step_adapted(&s0, stream.normals::<4>(), &p).unwrap()
                };
                let y = expect_adapted(&next).unwrap();
                let mut delta = y.angle - x.angle;
                if delta > std::f64::consts::PI {
                    delta -= crate::geometry::TWO_PI;
                }
                if delta < -std::f64::consts::PI {
                    delta += crate::geometry::TWO_PI;
                }
                out.push([y.q_star - x.q_star, y.ft1 - x.ft1, y.ft2 - x.ft2, delta]);
            }
        };
        let mut a = Vec::new();
        let mut t = Vec::new();
        collect(false, &mut a);
        collect(true, &mut t);
        diffs.clear();
        for k in 0..4 {
            let am: Vec<f64> = a.iter().map(|r| r[k]).collect();
            let tm: Vec<f64> = t.iter().map(|r| r[k]).collect();
            let ab: Vec<f64> =
                am.chunks(3000).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            let tb: Vec<f64> =
                tm.chunks(3000).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            let (ma, sa) = mean_and_stderr(&ab);
            let (mt, st) = mean_and_stderr(&tb);
            let se = (sa * sa + st * st).sqrt();
            assert!((ma - mt).abs() < 3.0 * se + 1e-10, "component {k}: {ma} vs {mt}");
            // Second moments.
            let a2: Vec<f64> = am.iter().map(|v| v * v).collect();
            let t2: Vec<f64> = tm.iter().map(|v| v * v).collect();
            let ab2: Vec<f64> =
                a2.chunks(3000).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            let tb2: Vec<f64> =
                t2.chunks(3000).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            let (m2a, s2a) = mean_and_stderr(&ab2);
            let (m2t, s2t) = mean_and_stderr(&tb2);
            let se2 = (s2a * s2a + s2t * s2t).sqrt();
            assert!((m2a - m2t).abs() < 3.0 * se2, "second moment {k}: {m2a} vs {m2t}");
        }
    }

    #[test]
    fn batch_is_reproducible_and_validates() {
        let p = quiet_params(64, 1e-2);
        let start = StatePoint::Reduced(BasePoint::new(1.0, 0.5, 0.0));
        let a = simulate_batch(ProcessKind::ReducedXiTilde, 0, &p, start, 0.1).unwrap();
        let b = simulate_batch(ProcessKind::ReducedXiTilde, 0, &p, start, 0.1).unwrap();
        let mut csv_a = Vec::new();
        let mut csv_b = Vec::new();
        a.write_csv(&mut csv_a).unwrap();
        b.write_csv(&mut csv_b).unwrap();
        assert_eq!(csv_a, csv_b);
        assert!(csv_a.starts_with(b"time,q_star,ft1,ft2,weight_log,phase_re,phase_im,discarded"));

        // Start/kind mismatch and bad params are configuration errors.
        assert!(matches!(
            simulate_batch(ProcessKind::Original, 0, &p, start, 0.1),
            Err(SimError::Config(_))
        ));
        let bad = SimParams { dt: 0.0, ..p };
        assert!(bad.validate().is_err());
        assert!(matches!(
            simulate_batch(ProcessKind::Adapted, 1, &p, adapted_start(&BasePoint::new(1.0, 0.0, 0.0)), 0.1),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn weight_rate_stays_in_curvature_band() {
        // With V = 0 the per-unit-time weight lies in [-3 lambda/(8 d_min), 0).
        let p = quiet_params(1, 1e-3);
        let mut stream = NoiseStream::new(33, 0);
        let mut s = PathState::new(StatePoint::Reduced(BasePoint::new(1.0, 0.5, 0.0)));
        let mut d_min = f64::INFINITY;
        for _ in 0..500 {
            let prev = expect_reduced(&s).unwrap();
            let dw = stream.normals::<3>();
            let next = step_reduced(&s, dw, &p, ReducedMode::XiTilde).unwrap();
            let nb = expect_reduced(&next).unwrap();
            d_min = d_min.min(prev.d()).min(nb.d());
            s = accumulate_weights(&next, &prev, &nb, 0, &p, 1e-3, [dw[1], dw[2]]);
        }
        let rate = s.weight_log / 0.5;
        assert!(rate < 0.0, "weight rate should be negative, got {rate}");
        assert!(
            rate >= -3.0 / (8.0 * d_min) - 1e-12,
            "rate {rate} below band floor {}",
            -3.0 / (8.0 * d_min)
        );
        assert!(s.weight_log.is_finite());
    }

    #[test]
    fn mix_seed_changes_all_words() {
        let a = mix_seed(42, 0);
        let b = mix_seed(42, 1);
        assert_ne!(a, b);
        assert_ne!(a & 0xffff_ffff, b & 0xffff_ffff);
    }
}
