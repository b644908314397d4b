//! LQR state feedback for the linearized plant.
//!
//! The continuous algebraic Riccati equation
//!
//! ```text
//! AᵀP + PA − P·B·R⁻¹·Bᵀ·P + Q = 0
//! ```
//!
//! is solved by Newton–Kleinman iteration. Each Newton step is a Lyapunov
//! solve for the current closed loop, so the iteration needs a stabilizing
//! starting gain: zero when `A` is already Hurwitz, otherwise Bass' shifted
//! Lyapunov gain. If that start is not available (stabilizable but not
//! controllable) or Newton fails, the differential Riccati equation is
//! integrated forward from `P = 0` to steady state and then polished by
//! Newton. Every returned solution has its residual checked.

use std::fmt;

use nalgebra::{Complex, DMatrix, Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::linalg;
use crate::model::{LinearPlant, TorqueCommand};

/// Singular values above this fraction of the largest count toward rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

const NEWTON_MAX_ITERATIONS: usize = 100;
const NEWTON_STEP_TOLERANCE: f64 = 1e-14;
const RICCATI_FLOW_MAX_STEPS: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("input weight R is not symmetric positive definite")]
    IndefiniteR,
    #[error("state weight Q is not symmetric positive semidefinite")]
    IndefiniteQ,
    #[error("plant is not controllable (controllability rank {rank} < {states})")]
    Uncontrollable { rank: usize, states: usize },
    #[error("Riccati solver did not converge: {0}")]
    NotConverged(String),
    #[error("LQR design failed validation: {0}")]
    InvalidDesign(String),
}

/// Rank of `[B, AB, …, Aⁿ⁻¹B]` for arbitrary (dense) dimensions.
pub fn controllability_rank_dense(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = b.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    linalg::rank(&ctrb, RANK_TOLERANCE)
}

pub fn controllability_rank(plant: &LinearPlant) -> usize {
    controllability_rank_dense(&dense(&plant.a), &dense(&plant.b))
}

fn dense<R: nalgebra::Dim, C: nalgebra::Dim, S>(m: &nalgebra::Matrix<f64, R, C, S>) -> DMatrix<f64>
where
    S: nalgebra::RawStorage<f64, R, C>,
{
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// A stabilizing CARE solution together with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub closed_loop_eigs: Vec<Complex<f64>>,
    pub residual: f64,
    pub newton_iterations: usize,
    pub used_riccati_flow: bool,
}

pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let r_inv = r
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::zeros(r.nrows(), r.ncols()));
    let s = b * r_inv * b.transpose();
    (a.transpose() * p + p * a - p * s * p + q).norm()
}

/// Residual bound used throughout: `10⁻⁸ · (1 + ‖P‖²)`.
pub fn residual_bound(p: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + p.norm_squared())
}

pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<CareSolution, ControlError> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(ControlError::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let sym_tol = 1e-12 * (1.0 + r.norm());
    if (r - r.transpose()).norm() > sym_tol {
        return Err(ControlError::IndefiniteR);
    }
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or(ControlError::IndefiniteR)?
        .inverse();
    if (q - q.transpose()).norm() > 1e-12 * (1.0 + q.norm())
        || linalg::min_symmetric_eigenvalue(q) < -1e-12 * (1.0 + q.norm())
    {
        return Err(ControlError::IndefiniteQ);
    }
    let q = linalg::symmetrize(q);

    let newton_from_start =
        initial_gain(a, b).and_then(|k0| newton_kleinman(a, b, &q, r, &r_inv, k0).ok());
    let (p, iterations, used_flow) = match newton_from_start {
        Some((p, it)) if linalg::is_hurwitz(&(a - b * &r_inv * b.transpose() * &p)) => {
            (p, it, false)
        }
        _ => {
            let p_flow = riccati_flow(a, b, &q, &r_inv)?;
            let k_flow = &r_inv * b.transpose() * &p_flow;
            match newton_kleinman(a, b, &q, r, &r_inv, k_flow) {
                Ok((p, it)) => (p, it, true),
                Err(_) => (p_flow, 0, true),
            }
        }
    };

    let p = linalg::symmetrize(&p);
    let k = &r_inv * b.transpose() * &p;
    let closed_loop_eigs = linalg::eigenvalues(&(a - b * &k));
    let residual = care_residual(a, b, &q, r, &p);
    if !residual.is_finite() || residual > residual_bound(&p) {
        return Err(ControlError::NotConverged(format!(
            "residual {residual:.3e} exceeds bound {:.3e}",
            residual_bound(&p)
        )));
    }
    Ok(CareSolution {
        p,
        k,
        closed_loop_eigs,
        residual,
        newton_iterations: iterations,
        used_riccati_flow: used_flow,
    })
}

/// A gain `K` with `A − BK` Hurwitz, if one is cheaply available.
fn initial_gain(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let (n, m) = (a.nrows(), b.ncols());
    if linalg::is_hurwitz(a) {
        return Some(DMatrix::zeros(m, n));
    }
    // Bass: with β above the spectral radius, (A + βI)Z + Z(A + βI)ᵀ = 2BBᵀ
    // has Z ≻ 0 for a controllable pair, and K = BᵀZ⁻¹ places every
    // closed-loop eigenvalue at real part −β.
    let beta = a.norm() + 1.0;
    let shifted = a + DMatrix::<f64>::identity(n, n) * beta;
    let z = linalg::solve_lyapunov(&shifted, &(b * b.transpose() * 2.0))?;
    let z_inv = linalg::symmetrize(&z).cholesky()?.inverse();
    let k = b.transpose() * z_inv;
    linalg::is_hurwitz(&(a - b * &k)).then_some(k)
}

fn newton_kleinman(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    mut k: DMatrix<f64>,
) -> Result<(DMatrix<f64>, usize), ControlError> {
    let mut p_prev: Option<DMatrix<f64>> = None;
    for iteration in 1..=NEWTON_MAX_ITERATIONS {
        let closed = a - b * &k;
        // (A − BK)ᵀP + P(A − BK) = −(Q + KᵀRK)
        let w = -(q + k.transpose() * r * &k);
        let p = linalg::solve_lyapunov(&closed.transpose(), &w)
            .ok_or_else(|| ControlError::NotConverged("singular Lyapunov step".into()))?;
        let p = linalg::symmetrize(&p);
        k = r_inv * b.transpose() * &p;
        if let Some(prev) = &p_prev {
            if (&p - prev).norm() <= NEWTON_STEP_TOLERANCE * (1.0 + p.norm()) {
                return Ok((p, iteration));
            }
        }
        p_prev = Some(p);
    }
    // Quadratic convergence stalls at rounding level; accept the last iterate
    // and let the caller's residual check decide.
    let p = p_prev.expect("at least one Newton iteration ran");
    Ok((p, NEWTON_MAX_ITERATIONS))
}

/// Integrates `Ṗ = AᵀP + PA − PSP + Q` from `P = 0` until it stops moving.
fn riccati_flow(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
) -> Result<DMatrix<f64>, ControlError> {
    let n = a.nrows();
    let s = b * r_inv * b.transpose();
    let rhs = |p: &DMatrix<f64>| a.transpose() * p + p * a - p * &s * p + q;
    let scale = 1.0 + a.norm() + (s.norm() * q.norm()).sqrt();
    let h = 0.05 / scale;
    let mut p = DMatrix::<f64>::zeros(n, n);
    for _ in 0..RICCATI_FLOW_MAX_STEPS {
        let k1 = rhs(&p);
        let k2 = rhs(&(&p + &k1 * (h / 2.0)));
        let k3 = rhs(&(&p + &k2 * (h / 2.0)));
        let k4 = rhs(&(&p + &k3 * h));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + &k4) * (h / 6.0);
        if !p.iter().all(|v| v.is_finite()) {
            return Err(ControlError::NotConverged("Riccati flow diverged".into()));
        }
        if k4.norm() <= 1e-12 * (1.0 + p.norm_squared()) {
            return Ok(linalg::symmetrize(&p));
        }
    }
    Err(ControlError::NotConverged(
        "Riccati flow step budget exhausted".into(),
    ))
}

/// State and input weights of the quadratic cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqrWeights {
    pub q: Matrix3<f64>,
    pub r: Matrix2<f64>,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self {
            q: Matrix3::from_diagonal(&Vector3::new(100.0, 10.0, 1.0)),
            r: Matrix2::from_diagonal(&Vector2::new(1.0, 5.0)),
        }
    }
}

/// A validated LQR design for the pendulum-plus-flywheel plant.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrDesign {
    pub weights: LqrWeights,
    pub p: Matrix3<f64>,
    pub k: Matrix2x3<f64>,
    pub closed_loop_eigs: [Complex<f64>; 3],
    pub care_residual: f64,
}

impl LqrDesign {
    pub fn max_closed_loop_real_part(&self) -> f64 {
        linalg::max_real_part(&self.closed_loop_eigs)
    }
}

pub fn lqr_gain(plant: &LinearPlant, weights: &LqrWeights) -> Result<LqrDesign, ControlError> {
    let rank = controllability_rank(plant);
    if rank < 3 {
        return Err(ControlError::Uncontrollable { rank, states: 3 });
    }
    let a = dense(&plant.a);
    let b = dense(&plant.b);
    let sol = solve_care(&a, &b, &dense(&weights.q), &dense(&weights.r))?;

    let p = Matrix3::from_fn(|i, j| sol.p[(i, j)]);
    let k = Matrix2x3::from_fn(|i, j| sol.k[(i, j)]);
    let eigs = [
        sol.closed_loop_eigs[0],
        sol.closed_loop_eigs[1],
        sol.closed_loop_eigs[2],
    ];
    let design = LqrDesign {
        weights: *weights,
        p,
        k,
        closed_loop_eigs: eigs,
        care_residual: sol.residual,
    };
    validate_design(&design)?;
    Ok(design)
}

fn validate_design(d: &LqrDesign) -> Result<(), ControlError> {
    let p_norm = d.p.norm();
    if (d.p - d.p.transpose()).norm() > 1e-10 * p_norm {
        return Err(ControlError::InvalidDesign("P is not symmetric".into()));
    }
    let min_eig = d.p.symmetric_eigenvalues().min();
    if min_eig < -1e-9 * (1.0 + p_norm) {
        return Err(ControlError::InvalidDesign(format!(
            "P has negative eigenvalue {min_eig:.3e}"
        )));
    }
    let max_re = d.max_closed_loop_real_part();
    if max_re.is_nan() || max_re >= 0.0 {
        return Err(ControlError::InvalidDesign(format!(
            "closed loop not Hurwitz (max real part {max_re:.3e})"
        )));
    }
    let bound = 1e-8 * (1.0 + p_norm * p_norm);
    if d.care_residual.is_nan() || d.care_residual > bound {
        return Err(ControlError::InvalidDesign(format!(
            "CARE residual {:.3e} exceeds {bound:.3e}",
            d.care_residual
        )));
    }
    Ok(())
}

/// Symmetric per-channel torque bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueLimits {
    pub tau_a_max: f64,
    pub tau_w_max: f64,
}

impl Default for TorqueLimits {
    fn default() -> Self {
        Self {
            tau_a_max: 14.0,
            tau_w_max: 20.0,
        }
    }
}

pub fn saturate(value: f64, limit: f64) -> (f64, bool) {
    let clamped = value.clamp(-limit, limit);
    (clamped, clamped != value)
}

/// `u = −K·(x − x_ref)`, clamped per channel.
pub fn feedback_torque(
    design: &LqrDesign,
    x: &Vector3<f64>,
    x_ref: &Vector3<f64>,
    limits: &TorqueLimits,
) -> TorqueCommand {
    let raw = -(design.k * (x - x_ref));
    clamp_command(raw[0], raw[1], limits)
}

pub fn clamp_command(tau_a: f64, tau_w: f64, limits: &TorqueLimits) -> TorqueCommand {
    let (tau_a, saturated_a) = saturate(tau_a, limits.tau_a_max);
    let (tau_w, saturated_w) = saturate(tau_w, limits.tau_w_max);
    TorqueCommand {
        tau_a,
        tau_w,
        saturated_a,
        saturated_w,
    }
}

impl fmt::Display for LqrDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn rows<const R: usize, const C: usize>(
            f: &mut fmt::Formatter<'_>,
            name: &str,
            m: &nalgebra::SMatrix<f64, R, C>,
        ) -> fmt::Result {
            writeln!(f, "{name} =")?;
            for i in 0..R {
                write!(f, "  [")?;
                for j in 0..C {
                    let sep = if j + 1 == C { "" } else { ", " };
                    write!(f, "{:>16.9e}{sep}", m[(i, j)])?;
                }
                writeln!(f, "]")?;
            }
            Ok(())
        }
        writeln!(f, "LQR design")?;
        rows(f, "Q", &self.weights.q)?;
        rows(f, "R", &self.weights.r)?;
        rows(f, "P", &self.p)?;
        rows(f, "K", &self.k)?;
        writeln!(f, "closed-loop eigenvalues =")?;
        for e in &self.closed_loop_eigs {
            writeln!(f, "  {:>16.9e} {:+.9e}i", e.re, e.im)?;
        }
        writeln!(f, "CARE residual = {:.3e}", self.care_residual)?;
        writeln!(
            f,
            "residual bound = {:.3e}",
            1e-8 * (1.0 + self.p.norm_squared())
        )
    }
}
