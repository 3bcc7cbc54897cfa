//! The entanglement protocols for the driven pair.
//!
//! Every protocol starts from `|11>` and aims at one of the radiatively
//! stable, maximally entangled lower-level coherences `s12` or `a12`:
//!
//! * `raman` — two sequential resonant pi pulses routed through one member of
//!   the split excited doublet (`s13` or `a13`),
//! * `stirap` — a counterintuitive Gaussian pulse pair transferring the
//!   population adiabatically through the same doublet member,
//! * `pumping` — continuous weak driving plus drive-frequency jitter, whose
//!   steady state accumulates in the one lower-level superposition the drive
//!   chain never touches.
//!
//! A [`Preset`] fixes the protocol family, the laser phase lags between the
//! atoms, the sign convention of the nominal detunings and the target state;
//! amplitudes, pulse widths and jitter remain configurable. Because the
//! dipole-dipole interaction splits each excited doublet by `2 chi`, the
//! exact line positions matter: with `auto_resonance` (the default) the
//! detunings are recomputed from the drive-free spectrum so that every link
//! of the transfer chain is resonant in the rotating frame. Switching it off
//! uses the nominal detunings `+-chi/2`, which keep only the two-photon
//! resonance and noticeably detune the intermediate state.
//!
//! [`resonance_table`] lists every laser-addressable upward transition with
//! its coupling element at peak amplitude, the detuning that would make it
//! resonant, and its residual mismatch in the chosen frame — the first thing
//! to inspect when a transfer underperforms.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    assemble_liouvillian, drive_operator, hamiltonian, matrix_element, DriveParams, DriveSpec,
    Envelope, JitterMode, JitterSpec,
};
use crate::error::{Error, Result};
use crate::hilbert::{
    dicke_basis, dicke_state, fidelity, ket, DickeLabel, Ket, Op, QuantumState, DIM,
};
use crate::rddi::{couplings_for_pair, phi_for_coupling, RDDICouplings, SystemConfig};
use crate::solvers::{
    expm, propagate_density, propagate_state, steady_state, IntegratorConfig, SteadyStateReport,
    Trajectory, TrajectoryHealth,
};

/// Protocol family of a preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Raman,
    Stirap,
    Pumping,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Raman => "raman",
            SchemeKind::Stirap => "stirap",
            SchemeKind::Pumping => "pumping",
        })
    }
}

/// Built-in drive parameter sets.
///
/// Each preset pins the phase lags `alpha_k3` of the fields between the two
/// atoms, the sign convention of the nominal detunings, the transfer chain
/// and the target state. The names are the stable identifiers used in config
/// files and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Sequential transfer `11 -> s13 -> s12`; both lasers in phase at the
    /// two atoms, nominal detunings `+chi13/2`.
    Eq5,
    /// Sequential transfer `11 -> a13 -> a12`; the first laser's phase lag
    /// equals its propagation phase `phi13`, so it couples to the
    /// antisymmetric doublet member. Nominal detunings `-chi13/2`.
    Eq6,
    /// Adiabatic passage `11 -> s13 -> a12` with a counterintuitive Gaussian
    /// pulse pair; the second laser arrives first and is phase-flipped
    /// between the atoms. Nominal detunings `+chi13/2`.
    Eq7,
    /// Continuous pumping into `s12`; both lasers in phase, nominal
    /// detunings `+chi_k3/2`.
    Eq8Sym,
    /// Continuous pumping into `a12`; both lasers phase-flipped between the
    /// atoms, nominal detunings `-chi_k3/2`.
    Eq8Asym,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Eq5 => "eq5",
            Preset::Eq6 => "eq6",
            Preset::Eq7 => "eq7",
            Preset::Eq8Sym => "eq8sym",
            Preset::Eq8Asym => "eq8asym",
        })
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eq5" => Ok(Preset::Eq5),
            "eq6" => Ok(Preset::Eq6),
            "eq7" => Ok(Preset::Eq7),
            "eq8sym" => Ok(Preset::Eq8Sym),
            "eq8asym" => Ok(Preset::Eq8Asym),
            other => Err(Error::config(format!(
                "preset: unknown value {other:?}; expected one of eq5, eq6, eq7, eq8sym, eq8asym"
            ))),
        }
    }
}

/// One link of a transfer chain: which laser moves population between two
/// symmetry-adapted states.
#[derive(Debug, Clone, Copy)]
pub struct ChainLink {
    pub from: DickeLabel,
    /// Lower level (1 or 2) whose laser drives this link.
    pub laser: u8,
    pub to: DickeLabel,
}

impl Preset {
    pub fn kind(self) -> SchemeKind {
        match self {
            Preset::Eq5 | Preset::Eq6 => SchemeKind::Raman,
            Preset::Eq7 => SchemeKind::Stirap,
            Preset::Eq8Sym | Preset::Eq8Asym => SchemeKind::Pumping,
        }
    }

    /// The entangled lower-level state the protocol aims at.
    pub fn target(self) -> DickeLabel {
        match self {
            Preset::Eq5 | Preset::Eq8Sym => DickeLabel::Sym(1, 2),
            _ => DickeLabel::Anti(1, 2),
        }
    }

    /// Phase lags `(alpha13, alpha23)` of the fields between the two atoms.
    pub fn alphas(self, phi13: f64) -> (f64, f64) {
        match self {
            Preset::Eq5 | Preset::Eq8Sym => (0.0, 0.0),
            Preset::Eq6 => (phi13, 0.0),
            Preset::Eq7 => (0.0, PI),
            Preset::Eq8Asym => (PI, PI),
        }
    }

    /// Nominal detunings `(delta13, delta23)`: half the doublet splitting,
    /// with the sign selecting the doublet member.
    pub fn printed_deltas(self, couplings: &RDDICouplings) -> (f64, f64) {
        let chi13 = couplings.t13.chi;
        let chi23 = couplings.t23.chi;
        match self {
            Preset::Eq5 | Preset::Eq7 => (chi13 / 2.0, chi13 / 2.0),
            Preset::Eq6 => (-chi13 / 2.0, -chi13 / 2.0),
            Preset::Eq8Sym => (chi13 / 2.0, chi23 / 2.0),
            Preset::Eq8Asym => (-chi13 / 2.0, -chi23 / 2.0),
        }
    }

    /// The two-step transfer chain from `|11>` to the target.
    pub fn chain(self) -> [ChainLink; 2] {
        use DickeLabel::{Anti, Product, Sym};
        let (mid, end) = match self {
            Preset::Eq5 | Preset::Eq8Sym => (Sym(1, 3), Sym(1, 2)),
            Preset::Eq6 | Preset::Eq8Asym => (Anti(1, 3), Anti(1, 2)),
            // the phase-flipped second laser crosses symmetry sectors
            Preset::Eq7 => (Sym(1, 3), Anti(1, 2)),
        };
        [
            ChainLink { from: Product(1, 1), laser: 1, to: mid },
            ChainLink { from: mid, laser: 2, to: end },
        ]
    }
}

fn default_true() -> bool {
    true
}

fn default_samples() -> usize {
    200
}

fn default_rel_tol() -> f64 {
    1e-8
}

fn default_abs_tol() -> f64 {
    1e-10
}

/// Full description of one protocol run.
///
/// Only `preset` is required; everything else has scheme-appropriate
/// defaults. Times and rates are in units of `1/gamma13` and `gamma13`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub preset: Preset,
    #[serde(default)]
    pub system: SystemConfig,
    /// Peak Rabi amplitude. Defaults: `0.05 |chi13|` for pi pulses,
    /// `5 / pulse_width` for adiabatic passage, `0.001 gamma13` for pumping.
    #[serde(default)]
    pub amplitude: Option<f64>,
    /// Gaussian pulse width for adiabatic passage; defaults to
    /// `0.1 / (gamma13 + gamma23)`.
    #[serde(default)]
    pub pulse_width: Option<f64>,
    /// Recompute the detunings from the drive-free spectrum so the whole
    /// transfer chain is resonant (default). Off: nominal `+-chi/2` values.
    #[serde(default = "default_true")]
    pub auto_resonance: bool,
    /// Phase-lag overrides replacing the preset values.
    #[serde(default)]
    pub alpha13: Option<f64>,
    #[serde(default)]
    pub alpha23: Option<f64>,
    /// Detuning overrides; each one replaces the preset/auto value for that
    /// laser.
    #[serde(default)]
    pub delta13: Option<f64>,
    #[serde(default)]
    pub delta23: Option<f64>,
    /// Drive-frequency jitter. Defaults to collective jitter at
    /// `0.01 gamma13` for pumping and none for the pulsed protocols.
    #[serde(default)]
    pub jitter: Option<JitterSpec>,
    /// Integrate the full master equation for adiabatic passage instead of
    /// the closed-system Schroedinger equation.
    #[serde(default)]
    pub master_equation: bool,
    /// Recorded samples per pulse stage (or per trajectory).
    #[serde(default = "default_samples")]
    pub samples_per_stage: usize,
    /// If set, pumping also records the relaxation from `|11>` over this
    /// time span via the exact exponential propagator.
    #[serde(default)]
    pub relaxation_time: Option<f64>,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    /// Upper bound on the integrator step, if any.
    #[serde(default)]
    pub max_step: Option<f64>,
}

impl SchemeConfig {
    pub fn new(preset: Preset) -> Self {
        SchemeConfig {
            preset,
            system: SystemConfig::default(),
            amplitude: None,
            pulse_width: None,
            auto_resonance: true,
            alpha13: None,
            alpha23: None,
            delta13: None,
            delta23: None,
            jitter: None,
            master_equation: false,
            samples_per_stage: default_samples(),
            relaxation_time: None,
            rel_tol: default_rel_tol(),
            abs_tol: default_abs_tol(),
            max_step: None,
        }
    }

    /// Collects every invalid field at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if let Err(Error::Config(mut sys)) = self.system.validate() {
            errs.append(&mut sys);
        }
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("pulse_width", self.pulse_width),
            ("relaxation_time", self.relaxation_time),
            ("max_step", self.max_step),
        ] {
            if let Some(v) = v {
                if !v.is_finite() || v <= 0.0 {
                    errs.push(format!("{name}: must be finite and positive, got {v}"));
                }
            }
        }
        for (name, v) in [
            ("alpha13", self.alpha13),
            ("alpha23", self.alpha23),
            ("delta13", self.delta13),
            ("delta23", self.delta23),
        ] {
            if let Some(v) = v {
                if !v.is_finite() {
                    errs.push(format!("{name}: must be finite, got {v}"));
                }
            }
        }
        for (name, v) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !v.is_finite() || v <= 0.0 {
                errs.push(format!("{name}: must be finite and positive, got {v}"));
            }
        }
        if self.samples_per_stage < 2 {
            errs.push(format!(
                "samples_per_stage: need at least 2, got {}",
                self.samples_per_stage
            ));
        }
        if let Some(j) = &self.jitter {
            if let Err(Error::Config(mut je)) = j.validate() {
                errs.append(&mut je);
            }
        }
        if errs.is_empty() { Ok(()) } else { Err(Error::Config(errs)) }
    }
}

/// A validated config with every default filled in and the drive-free
/// spectrum attached.
#[derive(Debug, Clone)]
pub struct ResolvedScheme {
    pub preset: Preset,
    pub kind: SchemeKind,
    pub couplings: RDDICouplings,
    /// `(alpha13, alpha23)`.
    pub alphas: (f64, f64),
    /// `(delta13, delta23)` actually used.
    pub deltas: (f64, f64),
    pub amplitude: f64,
    pub pulse_width: f64,
    pub jitter: JitterSpec,
    pub target: DickeLabel,
    pub target_ket: Ket,
    /// Drive-free eigenenergies by symmetry-adapted label.
    pub spectrum: Vec<(DickeLabel, f64)>,
    /// Non-fatal validity notes, e.g. an amplitude too large for selective
    /// addressing of one doublet member.
    pub warnings: Vec<String>,
}

/// Applies defaults, computes the couplings and the resonant detunings.
pub fn resolve(config: &SchemeConfig) -> Result<ResolvedScheme> {
    config.validate()?;
    let couplings = couplings_for_pair(&config.system)?;
    let kind = config.preset.kind();

    let (mut alpha13, mut alpha23) = config.preset.alphas(config.system.phi13);
    if let Some(a) = config.alpha13 {
        alpha13 = a;
    }
    if let Some(a) = config.alpha23 {
        alpha23 = a;
    }

    let h0 = hamiltonian(0.0, &DriveSpec::off(), &couplings);
    let spectrum = labeled_spectrum(&h0)?;
    let (mut delta13, mut delta23) = if config.auto_resonance {
        auto_deltas(config.preset, &spectrum)?
    } else {
        config.preset.printed_deltas(&couplings)
    };
    if let Some(d) = config.delta13 {
        delta13 = d;
    }
    if let Some(d) = config.delta23 {
        delta23 = d;
    }

    let pulse_width = config
        .pulse_width
        .unwrap_or(0.1 / (config.system.gamma13 + config.system.gamma23));
    let amplitude = config.amplitude.unwrap_or_else(|| match kind {
        SchemeKind::Raman => 0.05 * couplings.t13.chi.abs(),
        SchemeKind::Stirap => 5.0 / pulse_width,
        SchemeKind::Pumping => 0.001 * config.system.gamma13,
    });
    if !(amplitude > 0.0) {
        return Err(Error::config(format!(
            "amplitude: resolved to {amplitude}; set it explicitly (the coupling \
             vanishes for this geometry, so no default is available)"
        )));
    }
    let jitter = config.jitter.unwrap_or(match kind {
        SchemeKind::Pumping => JitterSpec::collective(0.01 * config.system.gamma13),
        _ => JitterSpec::off(),
    });

    let mut warnings = Vec::new();
    let split = couplings.t13.chi.abs().min(couplings.t23.chi.abs());
    if amplitude >= 0.25 * split {
        warnings.push(format!(
            "amplitude {amplitude:.6e} is not small against the doublet splitting \
             2 chi = {:.6e}; the drive no longer addresses a single doublet member",
            2.0 * split
        ));
    }

    let target = config.preset.target();
    Ok(ResolvedScheme {
        preset: config.preset,
        kind,
        couplings,
        alphas: (alpha13, alpha23),
        deltas: (delta13, delta23),
        amplitude,
        pulse_width,
        jitter,
        target,
        target_ket: dicke_state(target)?,
        spectrum,
        warnings,
    })
}

/// Eigenenergies of a (drive-free) Hamiltonian labeled by symmetry-adapted
/// basis state. Falls back to an eigendecomposition with dominant-overlap
/// labeling when the matrix is not diagonal in that basis; an overlap below
/// 1/2 or a doubly-used label is reported as ambiguous.
fn labeled_spectrum(h0: &Op) -> Result<Vec<(DickeLabel, f64)>> {
    let basis = dicke_basis();
    let mut u = Op::zeros(DIM, DIM);
    for (c, (_, v)) in basis.iter().enumerate() {
        u.set_column(c, v);
    }
    let m = u.adjoint() * h0 * &u;
    let scale = m.norm().max(1.0);
    let mut max_off = 0.0f64;
    for i in 0..DIM {
        for j in 0..DIM {
            if i != j {
                max_off = max_off.max(m[(i, j)].norm());
            }
        }
    }
    if max_off <= 1e-9 * scale {
        return Ok(basis
            .iter()
            .enumerate()
            .map(|(i, (label, _))| (*label, m[(i, i)].re))
            .collect());
    }

    let eig = nalgebra::SymmetricEigen::new(h0.clone());
    let mut out = Vec::with_capacity(DIM);
    for (c, col) in eig.eigenvectors.column_iter().enumerate() {
        let mut best: Option<(DickeLabel, f64)> = None;
        for (label, b) in &basis {
            let w = b.dotc(&col).norm_sqr();
            if best.map_or(true, |(_, bw)| w > bw) {
                best = Some((*label, w));
            }
        }
        let (label, w) = best.expect("basis is non-empty");
        if w <= 0.5 {
            return Err(Error::AmbiguousLabel(format!(
                "eigenstate at energy {:.6e} overlaps {label} by only {w:.3}; \
                 no symmetry-adapted label dominates",
                eig.eigenvalues[c]
            )));
        }
        out.push((label, eig.eigenvalues[c]));
    }
    let mut seen = HashSet::new();
    for (label, _) in &out {
        if !seen.insert(*label) {
            return Err(Error::AmbiguousLabel(format!(
                "two eigenstates both map to {label}; labeling is ambiguous"
            )));
        }
    }
    Ok(out)
}

/// Detunings that make every chain link resonant in the rotating frame.
///
/// The frame energy of a basis state is `delta13 N1 + delta23 N2 + r`, with
/// `r` its drive-free eigenvalue and `N_k` its lower-level occupation. A
/// link driven by laser `k` changes only `N_k`, so its resonance condition
/// fixes `delta_k = -(r_to - r_from) / (N_k_to - N_k_from)` independently of
/// the other laser.
fn auto_deltas(preset: Preset, spectrum: &[(DickeLabel, f64)]) -> Result<(f64, f64)> {
    let energy = |label: DickeLabel| -> Result<f64> {
        spectrum
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, e)| *e)
            .ok_or_else(|| Error::config(format!("no spectrum entry labeled {label}")))
    };
    let mut deltas = (f64::NAN, f64::NAN);
    for link in preset.chain() {
        let dn = i64::from(link.to.level_count(link.laser))
            - i64::from(link.from.level_count(link.laser));
        if dn == 0 {
            return Err(Error::config(format!(
                "chain link {} -> {} does not move laser-{} population",
                link.from, link.to, link.laser
            )));
        }
        let dr = energy(link.to)? - energy(link.from)?;
        let delta = -dr / dn as f64;
        if link.laser == 1 {
            deltas.0 = delta;
        } else {
            deltas.1 = delta;
        }
    }
    Ok(deltas)
}

/// One laser-addressable upward transition between symmetry-adapted states.
#[derive(Debug, Clone, Serialize)]
pub struct ResonanceRow {
    pub from: String,
    pub to: String,
    /// Which laser (by lower level, 1 or 2) addresses this pair.
    pub laser: u8,
    /// Coupling element `<to|drive|from>` at peak amplitude.
    pub element_re: f64,
    pub element_im: f64,
    /// Detuning of that laser which would put the pair on resonance.
    pub resonant_delta: f64,
    /// Residual detuning with the resolved frame parameters; zero means the
    /// line is hit exactly.
    pub frame_mismatch: f64,
}

/// Every upward (`N3 -> N3 + 1`) pair each laser can address, with coupling
/// elements at peak amplitude and frame mismatches. Pairs with a vanishing
/// element are kept: a zero element on a nominally addressed line is exactly
/// the kind of selection effect worth seeing.
pub fn resonance_table(resolved: &ResolvedScheme) -> Vec<ResonanceRow> {
    let basis = dicke_basis();
    let energy = |label: DickeLabel| -> f64 {
        resolved
            .spectrum
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, e)| *e)
            .expect("spectrum covers the basis")
    };
    let frame = |label: DickeLabel| -> f64 {
        energy(label)
            + resolved.deltas.0 * f64::from(label.level_count(1))
            + resolved.deltas.1 * f64::from(label.level_count(2))
    };
    let mut rows = Vec::new();
    for (laser, alpha) in [(1u8, resolved.alphas.0), (2u8, resolved.alphas.1)] {
        let op = drive_operator(laser, alpha);
        for (from, from_ket) in &basis {
            for (to, to_ket) in &basis {
                let dn3 = i64::from(to.level_count(3)) - i64::from(from.level_count(3));
                let dnk = i64::from(to.level_count(laser)) - i64::from(from.level_count(laser));
                let other = 3 - laser;
                let dno = i64::from(to.level_count(other)) - i64::from(from.level_count(other));
                if dn3 != 1 || dnk != -1 || dno != 0 {
                    continue;
                }
                let elem = matrix_element(to_ket, &op, from_ket) * resolved.amplitude;
                rows.push(ResonanceRow {
                    from: from.to_string(),
                    to: to.to_string(),
                    laser,
                    element_re: elem.re,
                    element_im: elem.im,
                    resonant_delta: -(energy(*to) - energy(*from)) / dnk as f64,
                    frame_mismatch: frame(*to) - frame(*from),
                });
            }
        }
    }
    rows
}

/// The two constant-drive stages of the sequential transfer, each with its
/// pi duration `tau = pi / (2 |element|)`.
pub fn raman_stages(resolved: &ResolvedScheme) -> Result<[(DriveSpec, f64); 2]> {
    let stage = |link: &ChainLink| -> Result<(DriveSpec, f64)> {
        let alpha = if link.laser == 1 { resolved.alphas.0 } else { resolved.alphas.1 };
        let element = resolved.amplitude
            * matrix_element(
                &dicke_state(link.to)?,
                &drive_operator(link.laser, alpha),
                &dicke_state(link.from)?,
            )
            .norm();
        if element <= 0.0 {
            return Err(Error::config(format!(
                "laser {} does not couple {} to {} at these phases; \
                 the transfer stage has no finite duration",
                link.laser, link.from, link.to
            )));
        }
        let on = DriveParams {
            envelope: Envelope::Constant { amplitude: resolved.amplitude },
            alpha,
            delta: if link.laser == 1 { resolved.deltas.0 } else { resolved.deltas.1 },
        };
        // the idle laser keeps its frame detuning but carries no field
        let idle = |alpha: f64, delta: f64| DriveParams {
            envelope: Envelope::off(),
            alpha,
            delta,
        };
        let drive = if link.laser == 1 {
            DriveSpec { d13: on, d23: idle(resolved.alphas.1, resolved.deltas.1) }
        } else {
            DriveSpec { d13: idle(resolved.alphas.0, resolved.deltas.0), d23: on }
        };
        Ok((drive, PI / (2.0 * element)))
    };
    let [first, second] = resolved.preset.chain();
    Ok([stage(&first)?, stage(&second)?])
}

/// The counterintuitive Gaussian pulse pair: the second-stage laser peaks at
/// `5 pulse_width`, the first-stage laser one width later.
pub fn stirap_drive_spec(resolved: &ResolvedScheme) -> DriveSpec {
    let tp = resolved.pulse_width;
    DriveSpec {
        d13: DriveParams {
            envelope: Envelope::Gaussian {
                amplitude: resolved.amplitude,
                center: 6.0 * tp,
                width: tp,
            },
            alpha: resolved.alphas.0,
            delta: resolved.deltas.0,
        },
        d23: DriveParams {
            envelope: Envelope::Gaussian {
                amplitude: resolved.amplitude,
                center: 5.0 * tp,
                width: tp,
            },
            alpha: resolved.alphas.1,
            delta: resolved.deltas.1,
        },
    }
}

/// Integration window holding both Gaussians out to five widths.
pub fn stirap_window(resolved: &ResolvedScheme) -> (f64, f64) {
    (0.0, 11.0 * resolved.pulse_width)
}

/// Both lasers on at constant amplitude.
pub fn pumping_drive_spec(resolved: &ResolvedScheme) -> DriveSpec {
    let on = |alpha: f64, delta: f64| DriveParams {
        envelope: Envelope::Constant { amplitude: resolved.amplitude },
        alpha,
        delta,
    };
    DriveSpec {
        d13: on(resolved.alphas.0, resolved.deltas.0),
        d23: on(resolved.alphas.1, resolved.deltas.1),
    }
}

/// Steady-state quantities small enough to serialize.
#[derive(Debug, Clone, Serialize)]
pub struct SteadySummary {
    pub null_dim: usize,
    pub residual_rel: f64,
    pub min_eigenvalue: f64,
    pub sigma_max: f64,
    pub threshold: f64,
}

/// Everything a run reports besides the raw trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scheme: SchemeKind,
    pub preset: Preset,
    pub target: String,
    /// Overlap of the final (or steady) state with the target.
    pub final_fidelity: f64,
    /// Populations of the final state in flat row-major level order.
    pub final_populations: [f64; 9],
    pub auto_resonance: bool,
    pub alpha13: f64,
    pub alpha23: f64,
    pub delta13: f64,
    pub delta23: f64,
    pub amplitude: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulse_width: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_durations: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulated_time: Option<f64>,
    pub jitter: JitterSpec,
    pub couplings: RDDICouplings,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub health: Option<TrajectoryHealth>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steady_state: Option<SteadySummary>,
}

/// Output of one protocol run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub summary: RunSummary,
    /// Time-resolved states; absent for pumping without `relaxation_time`.
    pub trajectory: Option<Trajectory>,
    /// Full steady-state report (pumping only).
    pub steady_state: Option<SteadyStateReport>,
}

impl ResolvedScheme {
    fn summary(&self, config: &SchemeConfig, final_state: &QuantumState) -> RunSummary {
        RunSummary {
            scheme: self.kind,
            preset: self.preset,
            target: self.target.to_string(),
            final_fidelity: fidelity(final_state, &self.target_ket),
            final_populations: final_state.populations(),
            auto_resonance: config.auto_resonance,
            alpha13: self.alphas.0,
            alpha23: self.alphas.1,
            delta13: self.deltas.0,
            delta23: self.deltas.1,
            amplitude: self.amplitude,
            pulse_width: None,
            stage_durations: None,
            simulated_time: None,
            jitter: self.jitter,
            couplings: self.couplings,
            warnings: self.warnings.clone(),
            health: None,
            steady_state: None,
        }
    }
}

fn expect_kind(resolved: &ResolvedScheme, want: SchemeKind) -> Result<()> {
    if resolved.kind == want {
        Ok(())
    } else {
        Err(Error::config(format!(
            "preset {} belongs to the {} protocol, not {want}",
            resolved.preset, resolved.kind
        )))
    }
}

fn integrator_config(config: &SchemeConfig, sample_times: Vec<f64>) -> IntegratorConfig {
    IntegratorConfig {
        rel_tol: config.rel_tol,
        abs_tol: config.abs_tol,
        max_step: config.max_step,
        sample_times,
    }
}

/// Runs the preset's protocol.
pub fn run_scheme(config: &SchemeConfig) -> Result<RunResult> {
    match config.preset.kind() {
        SchemeKind::Raman => run_raman(config),
        SchemeKind::Stirap => run_stirap(config),
        SchemeKind::Pumping => run_pumping(config),
    }
}

/// Two sequential pi pulses through the selected doublet member, integrated
/// as the full master equation.
pub fn run_raman(config: &SchemeConfig) -> Result<RunResult> {
    let resolved = resolve(config)?;
    expect_kind(&resolved, SchemeKind::Raman)?;
    let stages = raman_stages(&resolved)?;
    let n = config.samples_per_stage;

    let p11 = ket(1, 1)?;
    let mut rho = QuantumState::Pure(p11).density();
    let mut times: Vec<f64> = Vec::new();
    let mut states: Vec<QuantumState> = Vec::new();
    let mut health = TrajectoryHealth::default();
    let mut offset = 0.0;
    for (drive, duration) in &stages {
        let liou = assemble_liouvillian(drive, &resolved.couplings, &resolved.jitter)?;
        let cfg = integrator_config(config, IntegratorConfig::linspace(0.0, *duration, n));
        let leg = propagate_density(&rho, &liou, (0.0, *duration), &cfg)?;
        rho = leg.final_state().density();
        let skip = usize::from(!times.is_empty());
        for (t, s) in leg.times.iter().zip(leg.states).skip(skip) {
            times.push(offset + t);
            states.push(s);
        }
        health = health.merged(&leg.health);
        offset += duration;
    }
    let trajectory = Trajectory { times, states, health };

    let mut summary = resolved.summary(config, trajectory.final_state());
    summary.stage_durations = Some([stages[0].1, stages[1].1]);
    summary.simulated_time = Some(offset);
    summary.health = Some(trajectory.health);
    Ok(RunResult { summary, trajectory: Some(trajectory), steady_state: None })
}

/// Counterintuitive Gaussian pulse pair. By default the closed-system
/// Schroedinger dynamics (decay ignored); `master_equation` switches the
/// full dissipative treatment on.
pub fn run_stirap(config: &SchemeConfig) -> Result<RunResult> {
    let resolved = resolve(config)?;
    expect_kind(&resolved, SchemeKind::Stirap)?;
    let drive = stirap_drive_spec(&resolved);
    let window = stirap_window(&resolved);
    let samples = IntegratorConfig::linspace(window.0, window.1, config.samples_per_stage);
    let cfg = integrator_config(config, samples);

    let trajectory = if config.master_equation {
        let liou = assemble_liouvillian(&drive, &resolved.couplings, &resolved.jitter)?;
        let rho0 = QuantumState::Pure(ket(1, 1)?).density();
        propagate_density(&rho0, &liou, window, &cfg)?
    } else {
        let h = schrodinger_hamiltonian(&drive, &resolved.couplings);
        propagate_state(&ket(1, 1)?, h, window, &cfg)?
    };

    let mut summary = resolved.summary(config, trajectory.final_state());
    summary.pulse_width = Some(resolved.pulse_width);
    summary.simulated_time = Some(window.1 - window.0);
    summary.health = Some(trajectory.health);
    Ok(RunResult { summary, trajectory: Some(trajectory), steady_state: None })
}

/// `H(t)` with the envelope amplitudes entering linearly; the static part
/// and the two unit drive operators are built once.
fn schrodinger_hamiltonian(
    drive: &DriveSpec,
    couplings: &RDDICouplings,
) -> impl Fn(f64) -> Op {
    let dark = DriveSpec {
        d13: DriveParams { envelope: Envelope::off(), ..drive.d13.clone() },
        d23: DriveParams { envelope: Envelope::off(), ..drive.d23.clone() },
    };
    let h0 = hamiltonian(0.0, &dark, couplings);
    let k13 = drive_operator(1, drive.d13.alpha);
    let k23 = drive_operator(2, drive.d23.alpha);
    let (env13, env23) = (drive.d13.envelope.clone(), drive.d23.envelope.clone());
    move |t: f64| {
        let (a13, a23) = (env13.amplitude_at(t), env23.amplitude_at(t));
        let mut h = h0.clone();
        for ((x, p), s) in h.iter_mut().zip(k13.iter()).zip(k23.iter()) {
            *x += p.scale(a13) + s.scale(a23);
        }
        h
    }
}

/// Continuous weak driving: the unique steady state of the full generator,
/// optionally with the relaxation trajectory from `|11>`.
pub fn run_pumping(config: &SchemeConfig) -> Result<RunResult> {
    let resolved = resolve(config)?;
    expect_kind(&resolved, SchemeKind::Pumping)?;
    let drive = pumping_drive_spec(&resolved);
    let liou = assemble_liouvillian(&drive, &resolved.couplings, &resolved.jitter)?;
    let report = steady_state(&liou)?;
    let rho = report.unique()?.clone();
    let steady = QuantumState::Mixed(rho);

    let trajectory = match config.relaxation_time {
        Some(t_max) => Some(relaxation_trajectory(&liou, t_max, config.samples_per_stage)?),
        None => None,
    };

    let mut summary = resolved.summary(config, &steady);
    summary.steady_state = Some(SteadySummary {
        null_dim: report.null_dim,
        residual_rel: report.residual_rel.unwrap_or(f64::NAN),
        min_eigenvalue: report.min_eigenvalue.unwrap_or(f64::NAN),
        sigma_max: report.sigma_max,
        threshold: report.threshold,
    });
    if let Some(traj) = &trajectory {
        summary.simulated_time = Some(*traj.times.last().expect("non-empty"));
        summary.health = Some(traj.health);
    }
    Ok(RunResult { summary, trajectory, steady_state: Some(report) })
}

/// Relaxation from `|11>` under a time-independent generator: one exact
/// exponential per grid step, applied repeatedly.
fn relaxation_trajectory(
    liou: &crate::dynamics::Liouvillian,
    t_max: f64,
    samples: usize,
) -> Result<Trajectory> {
    let l = liou.constant_matrix("pumping relaxation")?;
    let times = IntegratorConfig::linspace(0.0, t_max, samples.max(2));
    let dt = times[1] - times[0];
    let step = expm(&(l * crate::hilbert::C64::new(dt, 0.0)));
    let p11 = ket(1, 1)?;
    let mut v = crate::dynamics::flatten(&(&p11 * p11.adjoint()));
    let mut states = Vec::with_capacity(times.len());
    let mut health = TrajectoryHealth::default();
    states.push(QuantumState::Mixed(crate::dynamics::unflatten(&v)));
    for _ in 1..times.len() {
        v = &step * &v;
        states.push(QuantumState::Mixed(crate::dynamics::unflatten(&v)));
    }
    for s in &states {
        health.absorb(s);
    }
    Ok(Trajectory { times, states, health })
}

/// A sweepable scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Dimensionless separation `k13 R`.
    Phi13,
    /// Coherent coupling `F(phi13)`; converted to a separation by inversion.
    F13,
    /// Peak Rabi amplitude.
    Amplitude,
    /// Adiabatic-passage pulse area `amplitude * pulse_width`.
    PulseArea,
    /// Drive-frequency jitter rate (mode taken from the base config).
    JitterRate,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Phi13 => "phi13",
            SweepAxis::F13 => "f13",
            SweepAxis::Amplitude => "amplitude",
            SweepAxis::PulseArea => "pulse_area",
            SweepAxis::JitterRate => "jitter_rate",
        })
    }
}

/// One sweep dimension: a parameter and the values it takes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxisSpec {
    pub param: SweepAxis,
    pub values: Vec<f64>,
}

/// One grid point. `fidelity` and `error` are mutually exclusive; a failed
/// point reports its error without aborting the rest of the grid.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub index: usize,
    /// Axis values in axis order.
    pub values: Vec<f64>,
    pub fidelity: Option<f64>,
    pub error: Option<String>,
}

/// A completed sweep: the axes (for column naming) and one row per grid
/// point in row-major order, last axis fastest.
#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub axes: Vec<SweepAxis>,
    pub rows: Vec<SweepRow>,
}

fn apply_axis(config: &mut SchemeConfig, axis: SweepAxis, value: f64) -> Result<()> {
    match axis {
        SweepAxis::Phi13 => config.system.phi13 = value,
        SweepAxis::F13 => {
            config.system.phi13 = phi_for_coupling(value, &config.system.geometry)?;
        }
        SweepAxis::Amplitude => config.amplitude = Some(value),
        SweepAxis::PulseArea => {
            let tp = config
                .pulse_width
                .unwrap_or(0.1 / (config.system.gamma13 + config.system.gamma23));
            config.amplitude = Some(value / tp);
        }
        SweepAxis::JitterRate => {
            let mode = config.jitter.map_or(JitterMode::Collective, |j| j.mode);
            config.jitter = Some(JitterSpec { rate: value, mode });
        }
    }
    Ok(())
}

/// Evaluates the cartesian grid over `axes`, `jobs` points in parallel
/// (0 = one per core). Grid order and results are independent of `jobs`.
pub fn sweep(base: &SchemeConfig, axes: &[SweepAxisSpec], jobs: usize) -> Result<SweepTable> {
    let mut errs = Vec::new();
    let kind = base.preset.kind();
    for (i, axis) in axes.iter().enumerate() {
        if axes[..i].iter().any(|a| a.param == axis.param) {
            errs.push(format!("sweep axis {} appears twice", axis.param));
        }
        if axis.param == SweepAxis::PulseArea && kind != SchemeKind::Stirap {
            errs.push(format!(
                "sweep axis pulse_area applies to adiabatic passage, not to {kind}"
            ));
        }
        if let Some(v) = axis.values.iter().find(|v| !v.is_finite()) {
            errs.push(format!("sweep axis {}: non-finite value {v}", axis.param));
        }
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }

    let total = if axes.is_empty() {
        0
    } else {
        axes.iter().map(|a| a.values.len()).product()
    };
    let evaluate = |index: usize| -> SweepRow {
        let mut values = vec![0.0; axes.len()];
        let mut rem = index;
        for (j, axis) in axes.iter().enumerate().rev() {
            values[j] = axis.values[rem % axis.values.len()];
            rem /= axis.values.len();
        }
        let mut config = base.clone();
        let applied = axes
            .iter()
            .zip(&values)
            .try_for_each(|(axis, &v)| apply_axis(&mut config, axis.param, v));
        match applied.and_then(|_| run_scheme(&config)) {
            Ok(result) => SweepRow {
                index,
                values,
                fidelity: Some(result.summary.final_fidelity),
                error: None,
            },
            Err(e) => SweepRow { index, values, fidelity: None, error: Some(e.to_string()) },
        }
    };

    let rows = if total == 0 {
        Vec::new()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| (0..total).into_par_iter().map(evaluate).collect())
    };
    Ok(SweepTable { axes: axes.iter().map(|a| a.param).collect(), rows })
}
