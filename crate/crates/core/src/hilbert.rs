//! Two-atom Hilbert space of a pair of three-level atoms.
//!
//! Product states `|ab>` (atom 1 in level `a`, atom 2 in level `b`, levels
//! numbered 1..3) are flattened row-major: `index = 3 (a - 1) + (b - 1)`.
//! Alongside the product basis, the exchange-symmetry-adapted basis
//! `{|11>, |22>, |33>, s_kl, a_kl}` with
//!
//! ```text
//! s_kl = (|kl> + |lk>) / sqrt(2),    a_kl = (|kl> - |lk>) / sqrt(2)
//! ```
//!
//! diagonalizes every exchange-symmetric pair Hamiltonian and is the natural
//! language for collective decay and driving.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
/// 9x9 operator on the pair space.
pub type Op = DMatrix<C64>;
/// Pure state of the pair.
pub type Ket = DVector<C64>;

/// Dimension of the two-atom space.
pub const DIM: usize = 9;

/// Row-major flat index of the product state `|ab>`.
pub fn flat_index(a: u8, b: u8) -> Result<usize> {
    check_level(a)?;
    check_level(b)?;
    Ok(3 * usize::from(a - 1) + usize::from(b - 1))
}

/// Inverse of [`flat_index`].
pub fn levels_of(index: usize) -> Result<(u8, u8)> {
    if index >= DIM {
        return Err(Error::config(format!("basis index {index} out of range 0..9")));
    }
    Ok((1 + (index / 3) as u8, 1 + (index % 3) as u8))
}

/// Product basis vector `|ab>`.
pub fn ket(a: u8, b: u8) -> Result<Ket> {
    let mut v = Ket::zeros(DIM);
    v[flat_index(a, b)?] = C64::new(1.0, 0.0);
    Ok(v)
}

/// Single-atom operator `|to><from|` embedded on `atom` (1 or 2).
pub fn transition_op(atom: u8, from: u8, to: u8) -> Result<Op> {
    check_level(from)?;
    check_level(to)?;
    let mut single = DMatrix::<C64>::zeros(3, 3);
    single[(usize::from(to - 1), usize::from(from - 1))] = C64::new(1.0, 0.0);
    embed(atom, &single)
}

/// Projector on `level` of `atom`, embedded on the pair.
pub fn number_op(atom: u8, level: u8) -> Result<Op> {
    transition_op(atom, level, level)
}

/// Embeds a 3x3 single-atom operator on atom 1 or 2.
pub fn embed(atom: u8, single: &DMatrix<C64>) -> Result<Op> {
    let eye = DMatrix::<C64>::identity(3, 3);
    match atom {
        1 => Ok(single.kronecker(&eye)),
        2 => Ok(eye.kronecker(single)),
        other => Err(Error::AtomIndex(other)),
    }
}

/// Exchange operator: `SWAP |ab> = |ba>`.
pub fn swap_op() -> Op {
    let mut m = Op::zeros(DIM, DIM);
    for a in 1..=3u8 {
        for b in 1..=3u8 {
            let i = flat_index(a, b).expect("levels in range");
            let j = flat_index(b, a).expect("levels in range");
            m[(i, j)] = C64::new(1.0, 0.0);
        }
    }
    m
}

/// Names for the symmetry-adapted basis states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DickeLabel {
    /// `|aa>` products and, more generally, `|ab>`.
    Product(u8, u8),
    /// `s_kl`, requires `k < l`.
    Sym(u8, u8),
    /// `a_kl`, requires `k < l`.
    Anti(u8, u8),
}

impl std::fmt::Display for DickeLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DickeLabel::Product(a, b) => write!(f, "{a}{b}"),
            DickeLabel::Sym(k, l) => write!(f, "s{k}{l}"),
            DickeLabel::Anti(k, l) => write!(f, "a{k}{l}"),
        }
    }
}

impl DickeLabel {
    /// Number of atoms in `level` for this basis state.
    pub fn level_count(&self, level: u8) -> u32 {
        let (a, b) = match *self {
            DickeLabel::Product(a, b) => (a, b),
            DickeLabel::Sym(k, l) | DickeLabel::Anti(k, l) => (k, l),
        };
        u32::from(a == level) + u32::from(b == level)
    }
}

/// Symmetric pair state `(|kl> + |lk>) / sqrt(2)`, `k < l`.
pub fn dicke_sym(k: u8, l: u8) -> Result<Ket> {
    check_pair(k, l)?;
    let inv = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    Ok((ket(k, l)? + ket(l, k)?) * inv)
}

/// Antisymmetric pair state `(|kl> - |lk>) / sqrt(2)`, `k < l`.
pub fn dicke_anti(k: u8, l: u8) -> Result<Ket> {
    check_pair(k, l)?;
    let inv = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    Ok((ket(k, l)? - ket(l, k)?) * inv)
}

/// The state vector for any symmetry-adapted label.
pub fn dicke_state(label: DickeLabel) -> Result<Ket> {
    match label {
        DickeLabel::Product(a, b) => ket(a, b),
        DickeLabel::Sym(k, l) => dicke_sym(k, l),
        DickeLabel::Anti(k, l) => dicke_anti(k, l),
    }
}

/// The full symmetry-adapted basis in the order
/// `11, 22, 33, s12, s13, s23, a12, a13, a23`.
pub fn dicke_basis() -> Vec<(DickeLabel, Ket)> {
    use DickeLabel::{Anti, Product, Sym};
    let labels = [
        Product(1, 1),
        Product(2, 2),
        Product(3, 3),
        Sym(1, 2),
        Sym(1, 3),
        Sym(2, 3),
        Anti(1, 2),
        Anti(1, 3),
        Anti(2, 3),
    ];
    labels
        .into_iter()
        .map(|l| (l, dicke_state(l).expect("static labels are valid")))
        .collect()
}

/// Pure or mixed state of the pair.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantumState {
    Pure(Ket),
    Mixed(DMatrix<C64>),
}

impl QuantumState {
    /// Density matrix of the state (projector for pure states).
    pub fn density(&self) -> DMatrix<C64> {
        match self {
            QuantumState::Pure(psi) => psi * psi.adjoint(),
            QuantumState::Mixed(rho) => rho.clone(),
        }
    }

    /// Populations of the nine product states, row-major.
    pub fn populations(&self) -> [f64; 9] {
        let mut p = [0.0; 9];
        match self {
            QuantumState::Pure(psi) => {
                for i in 0..DIM {
                    p[i] = psi[i].norm_sqr();
                }
            }
            QuantumState::Mixed(rho) => {
                for i in 0..DIM {
                    p[i] = rho[(i, i)].re;
                }
            }
        }
        p
    }

    /// `|trace - 1|`; for pure states the trace is the squared norm.
    pub fn trace_error(&self) -> f64 {
        match self {
            QuantumState::Pure(psi) => (psi.norm_squared() - 1.0).abs(),
            QuantumState::Mixed(rho) => {
                let tr: C64 = rho.diagonal().sum();
                (tr - C64::new(1.0, 0.0)).norm()
            }
        }
    }

    /// Largest entry of `|rho - rho^dagger|`; zero for pure states.
    pub fn hermiticity_error(&self) -> f64 {
        match self {
            QuantumState::Pure(_) => 0.0,
            QuantumState::Mixed(rho) => {
                let diff = rho - rho.adjoint();
                diff.iter().map(|z| z.norm()).fold(0.0, f64::max)
            }
        }
    }

    /// Smallest eigenvalue of the density matrix (0 for pure states);
    /// negative values beyond tolerance indicate loss of positivity.
    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            QuantumState::Pure(_) => 0.0,
            QuantumState::Mixed(rho) => {
                let herm = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
                nalgebra::SymmetricEigen::new(herm)
                    .eigenvalues
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

/// Overlap `<target| rho |target>` with a normalized target ket, in `[0, 1]`.
pub fn fidelity(state: &QuantumState, target: &Ket) -> f64 {
    let raw = match state {
        QuantumState::Pure(psi) => target.dotc(psi).norm_sqr(),
        QuantumState::Mixed(rho) => {
            let v = rho * target;
            target.dotc(&v).re
        }
    };
    raw.clamp(0.0, 1.0)
}

fn check_level(level: u8) -> Result<()> {
    if (1..=3).contains(&level) { Ok(()) } else { Err(Error::LevelIndex(level)) }
}

fn check_pair(k: u8, l: u8) -> Result<()> {
    check_level(k)?;
    check_level(l)?;
    if k == l {
        return Err(Error::DegeneratePair(k));
    }
    if k > l {
        return Err(Error::config(format!("pair state ({k},{l}): expected k < l")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn flat_index_round_trip() {
        let mut seen = [false; DIM];
        for a in 1..=3u8 {
            for b in 1..=3u8 {
                let i = flat_index(a, b).unwrap();
                assert!(!seen[i]);
                seen[i] = true;
                assert_eq!(levels_of(i).unwrap(), (a, b));
            }
        }
        assert_eq!(flat_index(1, 3).unwrap(), 2);
        assert_eq!(flat_index(3, 1).unwrap(), 6);
        assert!(flat_index(0, 1).is_err());
        assert!(flat_index(1, 4).is_err());
        assert!(levels_of(9).is_err());
    }

    #[test]
    fn level_projectors_complete() {
        for atom in [1, 2] {
            let sum = number_op(atom, 1).unwrap() + number_op(atom, 2).unwrap()
                + number_op(atom, 3).unwrap();
            assert_abs_diff_eq!((sum - Op::identity(DIM, DIM)).norm(), 0.0);
        }
    }

    #[test]
    fn transition_products_compose() {
        // sigma(k -> l) sigma(m -> k) = sigma(m -> l) on the same atom,
        // for every index combination
        for atom in [1, 2] {
            for k in 1..=3u8 {
                for l in 1..=3u8 {
                    for m in 1..=3u8 {
                        let lhs = transition_op(atom, k, l).unwrap()
                            * transition_op(atom, m, k).unwrap();
                        let rhs = transition_op(atom, m, l).unwrap();
                        assert_abs_diff_eq!((lhs - rhs).norm(), 0.0, epsilon = 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn dicke_transform_round_trip() {
        // conjugating into the entangled basis and back reproduces the
        // operator far below the 1e-12 requirement
        let u = Op::from_columns(
            &dicke_basis().iter().map(|(_, v)| v.clone()).collect::<Vec<_>>(),
        );
        let a = Op::from_fn(DIM, DIM, |i, j| {
            C64::new((i * DIM + j) as f64 / 40.5 - 1.0, ((i + 2) * j) as f64 / 72.0)
        });
        let transformed = u.adjoint() * &a * &u;
        let back = &u * transformed * u.adjoint();
        assert!((back - a).norm() < 1e-13);
    }

    #[test]
    fn operators_on_different_atoms_commute() {
        let a = transition_op(1, 1, 3).unwrap();
        let b = transition_op(2, 3, 2).unwrap();
        assert_abs_diff_eq!((&a * &b - &b * &a).norm(), 0.0);
    }

    #[test]
    fn raising_then_lowering_counts_the_upper_level() {
        // sigma_31 sigma_13 = |3><3| on the same atom
        let up = transition_op(1, 1, 3).unwrap();
        let down = transition_op(1, 3, 1).unwrap();
        assert_abs_diff_eq!((&down * &up - number_op(1, 1).unwrap()).norm(), 0.0);
        assert_abs_diff_eq!((&up * &down - number_op(1, 3).unwrap()).norm(), 0.0);
    }

    #[test]
    fn dicke_basis_is_orthonormal() {
        let basis = dicke_basis();
        assert_eq!(basis.len(), DIM);
        for (i, (_, u)) in basis.iter().enumerate() {
            for (j, (_, v)) in basis.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(u.dotc(v).norm(), expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn swap_grades_the_dicke_basis() {
        let s = swap_op();
        for (label, v) in dicke_basis() {
            let sv = &s * &v;
            let sign = match label {
                DickeLabel::Anti(_, _) => -1.0,
                _ => 1.0,
            };
            assert_abs_diff_eq!((sv - &v * C64::new(sign, 0.0)).norm(), 0.0);
        }
    }

    #[test]
    fn pair_state_validation() {
        assert!(dicke_sym(1, 1).is_err());
        assert!(dicke_anti(2, 2).is_err());
        assert!(dicke_sym(3, 1).is_err());
        assert!(dicke_sym(1, 4).is_err());
    }

    #[test]
    fn level_counts() {
        assert_eq!(DickeLabel::Product(1, 1).level_count(1), 2);
        assert_eq!(DickeLabel::Sym(1, 3).level_count(3), 1);
        assert_eq!(DickeLabel::Anti(1, 3).level_count(2), 0);
    }

    #[test]
    fn fidelity_of_known_states() {
        let s12 = dicke_sym(1, 2).unwrap();
        // |12> has overlap 1/2 with s12
        let st = QuantumState::Pure(ket(1, 2).unwrap());
        assert_abs_diff_eq!(fidelity(&st, &s12), 0.5, epsilon = 1e-14);
        // the projector on s12 has overlap 1
        let proj = QuantumState::Mixed(&s12 * s12.adjoint());
        assert_abs_diff_eq!(fidelity(&proj, &s12), 1.0, epsilon = 1e-14);
        // orthogonal target
        let a12 = dicke_anti(1, 2).unwrap();
        assert_abs_diff_eq!(fidelity(&proj, &a12), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn state_health_measures() {
        let psi = ket(1, 1).unwrap();
        let pure = QuantumState::Pure(psi.clone());
        assert_abs_diff_eq!(pure.trace_error(), 0.0);
        assert_abs_diff_eq!(pure.hermiticity_error(), 0.0);
        assert_abs_diff_eq!(pure.min_eigenvalue(), 0.0);

        let mut rho = &psi * psi.adjoint();
        rho[(0, 1)] = C64::new(0.0, 0.3);
        rho[(1, 0)] = C64::new(0.0, -0.3); // hermitian but not positive
        let mixed = QuantumState::Mixed(rho.clone());
        assert_abs_diff_eq!(mixed.trace_error(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(mixed.hermiticity_error(), 0.0, epsilon = 1e-14);
        assert!(mixed.min_eigenvalue() < -0.05);

        rho[(2, 3)] = C64::new(0.1, 0.0); // now not hermitian
        let bad = QuantumState::Mixed(rho);
        assert_abs_diff_eq!(bad.hermiticity_error(), 0.1, epsilon = 1e-14);
    }

    #[test]
    fn populations_sum_to_trace() {
        let s13 = dicke_sym(1, 3).unwrap();
        let p = QuantumState::Pure(s13).populations();
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p[flat_index(1, 3).unwrap()], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(p[flat_index(3, 1).unwrap()], 0.5, epsilon = 1e-14);
    }
}
