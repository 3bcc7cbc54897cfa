//! Propagators and steady-state solver.
//!
//! Time evolution uses an adaptive embedded Dormand-Prince 5(4) pair with PI
//! step control, stepping exactly onto every requested sample time. Pure
//! states are renormalized after each accepted step (projection onto the unit
//! sphere, the standard structure-preserving companion of an explicit method),
//! so the reported norm drift measures the integrator's raw unitarity defect
//! while the returned states are exactly normalized. For density matrices the
//! trace is a linear invariant and is conserved by the Runge-Kutta steps
//! themselves.
//!
//! A scaling-and-squaring Pade matrix exponential provides an independent
//! propagation oracle for time-independent generators, and the steady state
//! is extracted from the numerical null space of the 81x81 generator by
//! singular-value decomposition.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::{flatten, unflatten, Liouvillian};
use crate::error::{Error, Result};
use crate::hilbert::{C64, Ket, Op, QuantumState};

/// Tolerances, step bounds and output grid for the adaptive integrator.
#[derive(Debug, Clone)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on the step size, if any.
    pub max_step: Option<f64>,
    /// Times at which the trajectory is recorded; defaults to the span ends.
    pub sample_times: Vec<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: None,
            sample_times: Vec::new(),
        }
    }
}

impl IntegratorConfig {
    pub fn with_samples(mut self, samples: Vec<f64>) -> Self {
        self.sample_times = samples;
        self
    }

    /// `n` evenly spaced sample times covering `[t0, t1]`.
    pub fn linspace(t0: f64, t1: f64, n: usize) -> Vec<f64> {
        assert!(n >= 2);
        (0..n).map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64).collect()
    }

    fn resolved_samples(&self, span: (f64, f64)) -> Result<Vec<f64>> {
        let (t0, t1) = span;
        let mut errs = Vec::new();
        if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
            errs.push(format!("span: need finite t1 > t0, got [{t0}, {t1}]"));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            errs.push(format!("rel_tol: must be finite and positive, got {}", self.rel_tol));
        }
        if !(self.abs_tol.is_finite() && self.abs_tol > 0.0) {
            errs.push(format!("abs_tol: must be finite and positive, got {}", self.abs_tol));
        }
        if let Some(h) = self.max_step {
            if !(h.is_finite() && h > 0.0) {
                errs.push(format!("max_step: must be finite and positive, got {h}"));
            }
        }
        let samples = if self.sample_times.is_empty() {
            vec![t0, t1]
        } else {
            for w in self.sample_times.windows(2) {
                if w[1] <= w[0] {
                    errs.push(format!(
                        "sample_times: must be strictly increasing, got {} then {}",
                        w[0], w[1]
                    ));
                    break;
                }
            }
            let eps = 1e-12 * (t1 - t0).abs();
            if let (Some(&first), Some(&last)) =
                (self.sample_times.first(), self.sample_times.last())
            {
                if first < t0 - eps || last > t1 + eps {
                    errs.push(format!(
                        "sample_times: [{first}, {last}] extends outside the span [{t0}, {t1}]"
                    ));
                }
            }
            self.sample_times.clone()
        };
        if errs.is_empty() { Ok(samples) } else { Err(Error::Config(errs)) }
    }
}

/// Worst-case state-validity measures seen along a trajectory.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TrajectoryHealth {
    /// Largest `|trace - 1|` over the recorded samples.
    pub max_trace_error: f64,
    /// Largest hermiticity defect over the recorded samples.
    pub max_hermiticity_error: f64,
    /// Most negative density-matrix eigenvalue seen (0 for pure states).
    pub min_eigenvalue: f64,
    /// Largest single-step norm defect before renormalization (pure states).
    pub max_norm_drift: f64,
}

impl TrajectoryHealth {
    /// Folds one state's validity measures into the running worst case.
    pub fn absorb(&mut self, state: &QuantumState) {
        self.max_trace_error = self.max_trace_error.max(state.trace_error());
        self.max_hermiticity_error = self.max_hermiticity_error.max(state.hermiticity_error());
        self.min_eigenvalue = self.min_eigenvalue.min(state.min_eigenvalue());
    }

    /// Worst case over two trajectories, e.g. when stages are concatenated.
    pub fn merged(&self, other: &TrajectoryHealth) -> TrajectoryHealth {
        TrajectoryHealth {
            max_trace_error: self.max_trace_error.max(other.max_trace_error),
            max_hermiticity_error: self.max_hermiticity_error.max(other.max_hermiticity_error),
            min_eigenvalue: self.min_eigenvalue.min(other.min_eigenvalue),
            max_norm_drift: self.max_norm_drift.max(other.max_norm_drift),
        }
    }
}

/// A propagated trajectory sampled on the requested grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<QuantumState>,
    pub health: TrajectoryHealth,
}

impl Trajectory {
    pub fn final_state(&self) -> &QuantumState {
        self.states.last().expect("trajectory has at least one sample")
    }

    /// Product-basis populations per sample, row-major.
    pub fn populations(&self) -> Vec<[f64; 9]> {
        self.states.iter().map(QuantumState::populations).collect()
    }

    /// Overlap with a fixed target ket per sample.
    pub fn fidelity_series(&self, target: &Ket) -> Vec<f64> {
        self.states.iter().map(|s| crate::hilbert::fidelity(s, target)).collect()
    }
}

/// Integrates the Schroedinger equation `dpsi/dt = -i H(t) psi`.
///
/// `psi0` must be normalized within 1e-6. Norm is preserved exactly by
/// per-step renormalization; the pre-projection defect is reported in the
/// trajectory health.
pub fn propagate_state<H>(
    psi0: &Ket,
    hamiltonian: H,
    span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<Trajectory>
where
    H: Fn(f64) -> Op,
{
    if (psi0.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::config(format!(
            "psi0: must be normalized, |psi0| = {}",
            psi0.norm()
        )));
    }
    let minus_i = C64::new(0.0, -1.0);
    let rhs = |t: f64, y: &DVector<C64>| -> DVector<C64> { hamiltonian(t) * y * minus_i };

    let mut health = TrajectoryHealth::default();
    let mut states = Vec::new();
    let project = |y: &mut DVector<C64>, health: &mut TrajectoryHealth| {
        let n = y.norm();
        health.max_norm_drift = health.max_norm_drift.max((n - 1.0).abs());
        *y /= C64::new(n, 0.0);
    };
    let times = adaptive_rk(
        rhs,
        span,
        &psi0.clone().normalize(),
        config,
        Some(&project),
        |_, y| states.push(QuantumState::Pure(y.clone())),
        &mut health,
    )?;
    Ok(Trajectory { times, states, health })
}

/// Integrates the master equation `dvec(rho)/dt = L(t) vec(rho)`.
///
/// `rho0` must be hermitian within 1e-9 with unit trace within 1e-9.
/// Trace, hermiticity and positivity are monitored at every sample and the
/// worst values reported in the trajectory health.
pub fn propagate_density(
    rho0: &DMatrix<C64>,
    liouvillian: &Liouvillian,
    span: (f64, f64),
    config: &IntegratorConfig,
) -> Result<Trajectory> {
    let init = QuantumState::Mixed(rho0.clone());
    let mut errs = Vec::new();
    if init.trace_error() > 1e-9 {
        errs.push(format!("rho0: trace defect {:.3e} exceeds 1e-9", init.trace_error()));
    }
    if init.hermiticity_error() > 1e-9 {
        errs.push(format!(
            "rho0: hermiticity defect {:.3e} exceeds 1e-9",
            init.hermiticity_error()
        ));
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }

    let rhs = |t: f64, y: &DVector<C64>| liouvillian.apply(t, y);
    let mut health = TrajectoryHealth::default();
    let mut states = Vec::new();
    let record = |_t: f64, y: &DVector<C64>| {
        states.push(QuantumState::Mixed(unflatten(y)));
    };
    let times = adaptive_rk(rhs, span, &flatten(rho0), config, None, record, &mut health)?;

    for s in &states {
        health.absorb(s);
    }
    Ok(Trajectory { times, states, health })
}

/// Dormand-Prince 5(4) with FSAL, PI-like step control and exact stepping
/// onto sample times. Calls `record` at every sample (including the span
/// ends when they are in the grid) and returns the sample times.
fn adaptive_rk<F>(
    rhs: F,
    span: (f64, f64),
    y0: &DVector<C64>,
    config: &IntegratorConfig,
    project: Option<&dyn Fn(&mut DVector<C64>, &mut TrajectoryHealth)>,
    mut record: impl FnMut(f64, &DVector<C64>),
    health: &mut TrajectoryHealth,
) -> Result<Vec<f64>>
where
    F: Fn(f64, &DVector<C64>) -> DVector<C64>,
{
    // Butcher tableau.
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    // Difference between the 5th- and embedded 4th-order weights.
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];

    let (t0, t1) = span;
    let samples = config.resolved_samples(span)?;
    let dim = y0.len();

    let mut t = t0;
    let mut y = y0.clone();
    let mut si = 0; // next sample to emit
    let mut emitted = Vec::with_capacity(samples.len());
    while si < samples.len() && samples[si] <= t0 {
        record(samples[si], &y);
        emitted.push(samples[si]);
        si += 1;
    }

    let mut k1 = rhs(t, &y);
    let mut h = initial_step(&rhs, t, &y, &k1, t1 - t0, config);
    let err_scale = |a: &DVector<C64>, b: &DVector<C64>, e: &DVector<C64>| -> f64 {
        let mut acc = 0.0;
        for i in 0..dim {
            let sc = config.abs_tol + config.rel_tol * a[i].norm().max(b[i].norm());
            let r = e[i].norm() / sc;
            acc += r * r;
        }
        (acc / dim as f64).sqrt()
    };

    let mut k = [(); 7].map(|_| DVector::<C64>::zeros(dim));
    while t < t1 {
        let t_next_stop = if si < samples.len() { samples[si].min(t1) } else { t1 };
        if let Some(hm) = config.max_step {
            h = h.min(hm);
        }
        h = h.min(t_next_stop - t);
        if h < f64::EPSILON * 16.0 * t.abs().max(1.0) {
            // A rounding sliver left before the end is not a failing step:
            // the state is already there to machine precision.
            if t1 - t < f64::EPSILON * 16.0 * t1.abs().max(1.0) {
                break;
            }
            return Err(Error::StepUnderflow { t, h });
        }

        k[0] = k1.clone();
        for s in 0..6 {
            let mut ys = y.clone();
            for (j, a) in A[s].iter().enumerate().take(s + 1) {
                if *a != 0.0 {
                    ys.axpy(C64::new(h * a, 0.0), &k[j], C64::new(1.0, 0.0));
                }
            }
            k[s + 1] = rhs(t + C[s] * h, &ys);
        }
        // 5th-order solution is the stage-7 state (FSAL).
        let mut y_new = y.clone();
        for (j, a) in A[5].iter().enumerate() {
            if *a != 0.0 {
                y_new.axpy(C64::new(h * a, 0.0), &k[j], C64::new(1.0, 0.0));
            }
        }
        let mut err_vec = DVector::<C64>::zeros(dim);
        for (j, e) in E.iter().enumerate() {
            if *e != 0.0 {
                err_vec.axpy(C64::new(h * e, 0.0), &k[j], C64::new(1.0, 0.0));
            }
        }
        let err = err_scale(&y, &y_new, &err_vec);

        if err <= 1.0 {
            t += h;
            y = y_new;
            if !y.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::NonFiniteState { t });
            }
            if let Some(p) = project {
                p(&mut y, health);
                k1 = rhs(t, &y);
            } else {
                k1 = k[6].clone();
            }
            while si < samples.len() && (samples[si] - t).abs() <= 1e-12 * t.abs().max(1.0) {
                record(samples[si], &y);
                emitted.push(samples[si]);
                si += 1;
            }
        }

        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= if err > 1.0 { factor.min(1.0) } else { factor };
    }

    // Flush any samples that coincide with t1 within tolerance.
    while si < samples.len() {
        record(samples[si], &y);
        emitted.push(samples[si]);
        si += 1;
    }
    Ok(emitted)
}

/// Hairer-style starting step estimate.
fn initial_step<F>(
    rhs: &F,
    t0: f64,
    y0: &DVector<C64>,
    f0: &DVector<C64>,
    span: f64,
    config: &IntegratorConfig,
) -> f64
where
    F: Fn(f64, &DVector<C64>) -> DVector<C64>,
{
    let dim = y0.len() as f64;
    let wnorm = |v: &DVector<C64>, reference: &DVector<C64>| -> f64 {
        let mut acc = 0.0;
        for i in 0..v.len() {
            let sc = config.abs_tol + config.rel_tol * reference[i].norm();
            let r = v[i].norm() / sc;
            acc += r * r;
        }
        (acc / dim).sqrt()
    };
    let d0 = wnorm(y0, y0);
    let d1 = wnorm(f0, y0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = y0 + f0 * C64::new(h0, 0.0);
    let f1 = rhs(t0 + h0, &y1);
    let d2 = wnorm(&(&f1 - f0), y0) / h0;
    let d_max = d1.max(d2);
    let h1 = if d_max <= 1e-15 {
        (1e-6f64).max(h0 * 1e-3)
    } else {
        (0.01 / d_max).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

/// Matrix exponential by Pade order-13 approximation with scaling and
/// squaring.
pub fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    const THETA_13: f64 = 5.371920351148152;
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");

    // 1-norm (max column sum).
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm1 > THETA_13 { (norm1 / THETA_13).log2().ceil() as i32 } else { 0 };
    let a = a * C64::new(0.5f64.powi(s), 0.0);

    let eye = DMatrix::<C64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let cb = |x: f64| C64::new(x, 0.0);
    let u_inner = &a6 * cb(B[13]) + &a4 * cb(B[11]) + &a2 * cb(B[9]);
    let u = &a
        * (&a6 * u_inner + &a6 * cb(B[7]) + &a4 * cb(B[5]) + &a2 * cb(B[3]) + &eye * cb(B[1]));
    let v_inner = &a6 * cb(B[12]) + &a4 * cb(B[10]) + &a2 * cb(B[8]);
    let v = &a6 * v_inner + &a6 * cb(B[6]) + &a4 * cb(B[4]) + &a2 * cb(B[2]) + &eye * cb(B[0]);

    let num = &v + &u;
    let den = &v - &u;
    let mut r = den
        .lu()
        .solve(&num)
        .expect("Pade denominator of the scaled matrix is nonsingular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Propagates a density matrix for time `t` through the exact exponential of
/// a time-independent generator. Exact up to roundoff; the cross-check oracle
/// for the adaptive integrator.
pub fn expm_propagate(rho0: &DMatrix<C64>, liouvillian: &Liouvillian, t: f64) -> Result<DMatrix<C64>> {
    let l = liouvillian.constant_matrix("expm_propagate")?;
    let propagator = expm(&(l * C64::new(t, 0.0)));
    Ok(unflatten(&(propagator * flatten(rho0))))
}

/// Null-space analysis of a time-independent generator.
#[derive(Debug, Clone)]
pub struct SteadyStateReport {
    /// Number of singular values below the null threshold.
    pub null_dim: usize,
    /// Hermitian, unit-trace steady state when the null space is
    /// one-dimensional.
    pub rho: Option<DMatrix<C64>>,
    /// Orthonormal right null vectors, reshaped to matrices, when the null
    /// space is degenerate.
    pub null_basis: Vec<DMatrix<C64>>,
    /// All singular values, ascending.
    pub singular_values: Vec<f64>,
    pub sigma_max: f64,
    /// `1e-10 * sigma_max`.
    pub threshold: f64,
    /// `|L vec(rho)| / sigma_max` for the returned steady state.
    pub residual_rel: Option<f64>,
    /// Smallest eigenvalue of the returned steady state.
    pub min_eigenvalue: Option<f64>,
}

impl SteadyStateReport {
    /// The steady state, or an error naming the degeneracy.
    pub fn unique(&self) -> Result<&DMatrix<C64>> {
        match (&self.rho, self.null_dim) {
            (Some(r), 1) => Ok(r),
            _ => Err(Error::DegenerateSteadyState(self.null_dim)),
        }
    }
}

/// Finds the stationary states of a time-independent generator from the SVD
/// null space, with null threshold `1e-10 * sigma_max`.
pub fn steady_state(liouvillian: &Liouvillian) -> Result<SteadyStateReport> {
    let l = liouvillian.constant_matrix("steady_state")?;
    let svd = l.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let sigma_max = *singular_values.last().expect("nonempty spectrum");
    let threshold = 1e-10 * sigma_max;

    let null_dim = singular_values.iter().take_while(|&&s| s <= threshold).count();
    if null_dim == 0 {
        return Err(Error::NoNullVector { sigma_min: singular_values[0], threshold });
    }

    let null_vec = |rank: usize| -> DMatrix<C64> {
        // rows of V^T are the right singular vectors, conjugated
        let row = v_t.row(order[rank]);
        unflatten(&DVector::from_iterator(row.len(), row.iter().map(|z| z.conj())))
    };

    if null_dim > 1 {
        return Ok(SteadyStateReport {
            null_dim,
            rho: None,
            null_basis: (0..null_dim).map(null_vec).collect(),
            singular_values,
            sigma_max,
            threshold,
            residual_rel: None,
            min_eigenvalue: None,
        });
    }

    let raw = null_vec(0);
    let herm = (&raw + raw.adjoint()) * C64::new(0.5, 0.0);
    let tr: C64 = herm.diagonal().sum();
    if tr.norm() < 1e-8 {
        return Err(Error::config(
            "steady-state null vector has (numerically) vanishing trace; \
             the hermitian representative cannot be normalized",
        ));
    }
    let rho = &herm / tr;
    let residual_rel = (l * flatten(&rho)).norm() / sigma_max;
    let min_eig = QuantumState::Mixed(rho.clone()).min_eigenvalue();

    Ok(SteadyStateReport {
        null_dim: 1,
        rho: Some(rho),
        null_basis: Vec::new(),
        singular_values,
        sigma_max,
        threshold,
        residual_rel: Some(residual_rel),
        min_eigenvalue: Some(min_eig),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        assemble_liouvillian, hamiltonian, DriveParams, DriveSpec, Envelope, JitterSpec,
    };
    use crate::hilbert::{dicke_anti, fidelity, flat_index, ket, DIM};
    use crate::rddi::{RDDICouplings, TransitionCouplings};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn couplings(chi13: f64, chi23: f64, gamma13: f64, gamma23: f64, g: f64) -> RDDICouplings {
        let tc = |phi: f64, gamma: f64, chi: f64| TransitionCouplings {
            phi,
            gamma,
            f: chi / gamma.max(1e-300),
            g,
            chi,
            gamma12: g * gamma,
        };
        RDDICouplings { t13: tc(0.5, gamma13, chi13), t23: tc(0.5, gamma23, chi23) }
    }

    fn resonant_rabi_drive(omega: f64) -> DriveSpec {
        DriveSpec {
            d13: DriveParams {
                envelope: Envelope::Constant { amplitude: omega },
                alpha: 0.0,
                delta: 0.0,
            },
            d23: DriveParams::off(),
        }
    }

    #[test]
    fn resonant_rabi_oscillation_matches_closed_form() {
        // uncoupled atoms, resonant constant drive from |11>:
        // each atom oscillates independently, so P33(t) = sin^4(Omega t / 2)
        let c = couplings(0.0, 0.0, 1.0, 1.0, 0.0);
        let drive = resonant_rabi_drive(1.3);
        let span = (0.0, 12.0);
        let cfg = IntegratorConfig::default()
            .with_samples(IntegratorConfig::linspace(span.0, span.1, 241));
        let h = |t: f64| hamiltonian(t, &drive, &c);
        let traj = propagate_state(&ket(1, 1).unwrap(), h, span, &cfg).unwrap();
        let i33 = flat_index(3, 3).unwrap();
        for (t, p) in traj.times.iter().zip(traj.populations()) {
            let expect = (1.3 * t / 2.0).sin().powi(4);
            assert_abs_diff_eq!(p[i33], expect, epsilon = 1e-6);
        }
        assert!(traj.health.max_norm_drift < 1e-9);
    }

    #[test]
    fn doubly_excited_state_decays_exponentially() {
        let (g13, g23) = (0.7, 0.4);
        let c = couplings(0.0, 0.0, g13, g23, 0.0);
        let liou = assemble_liouvillian(&DriveSpec::off(), &c, &JitterSpec::off()).unwrap();
        let p33 = ket(3, 3).unwrap();
        let rho0 = &p33 * p33.adjoint();
        let span = (0.0, 2.0);
        let cfg = IntegratorConfig::default()
            .with_samples(IntegratorConfig::linspace(span.0, span.1, 81));
        let traj = propagate_density(&rho0, &liou, span, &cfg).unwrap();
        let i33 = flat_index(3, 3).unwrap();
        for (t, p) in traj.times.iter().zip(traj.populations()) {
            let expect = (-2.0 * (g13 + g23) * t).exp();
            assert_abs_diff_eq!(p[i33], expect, epsilon = 1e-6);
        }
        assert!(traj.health.max_trace_error < 1e-9);
        assert!(traj.health.max_hermiticity_error < 1e-9);
        assert!(traj.health.min_eigenvalue > -1e-9);
    }

    #[test]
    fn integration_survives_a_one_ulp_gap_before_the_final_time() {
        // A sample one ulp below the end pins the stepper to a landing point
        // from which the remaining step is shorter than the underflow guard;
        // the stepper must snap to the end instead of failing.
        let c = couplings(0.0, 0.0, 0.7, 0.4, 0.0);
        let liou = assemble_liouvillian(&DriveSpec::off(), &c, &JitterSpec::off()).unwrap();
        let p33 = ket(3, 3).unwrap();
        let rho0 = &p33 * p33.adjoint();
        let t1 = 1.0f64;
        let near_end = f64::from_bits(t1.to_bits() - 1);
        let cfg = IntegratorConfig::default().with_samples(vec![0.0, near_end, t1]);
        let traj = propagate_density(&rho0, &liou, (0.0, t1), &cfg).unwrap();
        assert_eq!(traj.times, vec![0.0, near_end, t1]);
        let i33 = flat_index(3, 3).unwrap();
        let expect = (-2.0f64 * (0.7 + 0.4)).exp();
        assert_abs_diff_eq!(traj.final_state().populations()[i33], expect, epsilon = 1e-6);
    }

    #[test]
    fn adaptive_integration_agrees_with_matrix_exponential() {
        let c = couplings(2.0, 1.5, 1.0, 0.8, 0.7);
        let drive = DriveSpec {
            d13: DriveParams {
                envelope: Envelope::Constant { amplitude: 0.9 },
                alpha: 0.8,
                delta: 1.0,
            },
            d23: DriveParams {
                envelope: Envelope::Constant { amplitude: 0.5 },
                alpha: std::f64::consts::PI,
                delta: -0.7,
            },
        };
        let jitter = JitterSpec::collective(0.05);
        let liou = assemble_liouvillian(&drive, &c, &jitter).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = DMatrix::from_fn(DIM, DIM, |_, _| {
            C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)
        });
        let rho0 = {
            let r = &g * g.adjoint();
            let tr: C64 = r.diagonal().sum();
            r / tr
        };
        let t_final = 1.7;
        let traj =
            propagate_density(&rho0, &liou, (0.0, t_final), &IntegratorConfig::default()).unwrap();
        let exact = expm_propagate(&rho0, &liou, t_final).unwrap();
        let diff = (traj.final_state().density() - exact).norm();
        assert!(diff < 1e-6, "ODE vs expm mismatch: {diff:.3e}");
    }

    #[test]
    fn expm_of_simple_matrices() {
        // diagonal
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![
            C64::new(0.3, 0.0),
            C64::new(-1.2, 0.5),
        ]));
        let e = expm(&d);
        assert_abs_diff_eq!((e[(0, 0)] - C64::new(0.3, 0.0).exp()).norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!((e[(1, 1)] - C64::new(-1.2, 0.5).exp()).norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[(0, 1)].norm(), 0.0, epsilon = 1e-15);
        // nilpotent
        let mut n = DMatrix::<C64>::zeros(2, 2);
        n[(0, 1)] = C64::new(2.5, 0.0);
        let e = expm(&n);
        assert_abs_diff_eq!((e[(0, 1)] - C64::new(2.5, 0.0)).norm(), 0.0, epsilon = 1e-14);
        // large norm exercising the squaring phase: rotation by 40 rad
        let th = 40.0;
        let mut r = DMatrix::<C64>::zeros(2, 2);
        r[(0, 1)] = C64::new(-th, 0.0);
        r[(1, 0)] = C64::new(th, 0.0);
        let e = expm(&r);
        assert_abs_diff_eq!(e[(0, 0)].re, th.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(e[(1, 0)].re, th.sin(), epsilon = 1e-12);
    }

    #[test]
    fn decay_only_generator_has_a_degenerate_null_space() {
        // with no drive every ground-sector state is stationary
        let c = couplings(1.0, 0.5, 1.0, 1.0, 0.6);
        let liou = assemble_liouvillian(&DriveSpec::off(), &c, &JitterSpec::off()).unwrap();
        let report = steady_state(&liou).unwrap();
        assert!(report.null_dim > 1, "null_dim = {}", report.null_dim);
        assert!(report.rho.is_none());
        assert_eq!(report.null_basis.len(), report.null_dim);
        assert!(matches!(
            report.unique(),
            Err(Error::DegenerateSteadyState(_))
        ));
    }

    #[test]
    fn driven_jittered_pair_has_a_unique_steady_state() {
        let c = couplings(3.0, 2.8, 1.0, 1.0, 0.9);
        let drive = DriveSpec {
            d13: DriveParams {
                envelope: Envelope::Constant { amplitude: 0.4 },
                alpha: std::f64::consts::PI,
                delta: -3.0,
            },
            d23: DriveParams {
                envelope: Envelope::Constant { amplitude: 0.4 },
                alpha: std::f64::consts::PI,
                delta: -3.0,
            },
        };
        let jitter = JitterSpec::collective(0.05);
        let liou = assemble_liouvillian(&drive, &c, &jitter).unwrap();
        let report = steady_state(&liou).unwrap();
        assert_eq!(report.null_dim, 1, "sigmas: {:?}", &report.singular_values[..4]);
        let rho = report.unique().unwrap();
        let st = QuantumState::Mixed(rho.clone());
        assert!(st.trace_error() < 1e-12);
        assert!(st.hermiticity_error() < 1e-12);
        assert!(report.min_eigenvalue.unwrap() > -1e-9);
        assert!(report.residual_rel.unwrap() < 1e-12);

        // long-time propagation through the exact exponential lands on it
        let a12 = dicke_anti(1, 2).unwrap();
        let p11 = ket(1, 1).unwrap();
        let rho0 = &p11 * p11.adjoint();
        let evolved = expm_propagate(&rho0, &liou, 4000.0).unwrap();
        assert!(
            (&evolved - rho).norm() < 1e-6,
            "distance {:.3e}, fid {}",
            (&evolved - rho).norm(),
            fidelity(&QuantumState::Mixed(evolved.clone()), &a12)
        );
    }

    #[test]
    fn sample_grid_is_validated() {
        let c = couplings(0.0, 0.0, 1.0, 1.0, 0.0);
        let h = |t: f64| hamiltonian(t, &DriveSpec::off(), &c);
        let psi0 = ket(1, 1).unwrap();
        let bad_order = IntegratorConfig::default().with_samples(vec![0.0, 0.5, 0.4]);
        assert!(propagate_state(&psi0, h, (0.0, 1.0), &bad_order).is_err());
        let outside = IntegratorConfig::default().with_samples(vec![0.0, 2.0]);
        assert!(propagate_state(&psi0, h, (0.0, 1.0), &outside).is_err());
        let empty_default = IntegratorConfig::default();
        let traj = propagate_state(&psi0, h, (0.0, 1.0), &empty_default).unwrap();
        assert_eq!(traj.times, vec![0.0, 1.0]);
    }

    #[test]
    fn time_dependent_generator_refuses_matrix_only_paths() {
        let c = couplings(1.0, 1.0, 1.0, 1.0, 0.5);
        let drive = DriveSpec {
            d13: DriveParams {
                envelope: Envelope::Gaussian { amplitude: 1.0, center: 0.0, width: 1.0 },
                alpha: 0.0,
                delta: 0.0,
            },
            d23: DriveParams::off(),
        };
        let liou = assemble_liouvillian(&drive, &c, &JitterSpec::off()).unwrap();
        assert!(matches!(
            steady_state(&liou),
            Err(Error::TimeDependentGenerator("steady_state"))
        ));
        let rho0 = DMatrix::identity(DIM, DIM) / C64::new(DIM as f64, 0.0);
        assert!(expm_propagate(&rho0, &liou, 1.0).is_err());
    }
}
