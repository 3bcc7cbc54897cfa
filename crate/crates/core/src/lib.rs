//! Exact simulator for a pair of dipole-dipole coupled three-level atoms
//! under biharmonic laser driving.
//!
//! Two atoms with lower levels 1, 2 and excited level 3 sit a sub-wavelength
//! distance apart. Their shared radiation field produces a coherent exchange
//! coupling `chi` and a cross-decay rate `gamma12` on each optical
//! transition ([`rddi`]), splitting the excited Dicke doublets by `2 chi`.
//! Driving both transitions with controlled phase lags between the atoms
//! addresses the symmetric or antisymmetric member of each doublet
//! selectively, which is what the entanglement protocols in [`schemes`]
//! exploit to prepare the radiatively stable coherences `s12` and `a12`.
//!
//! The nine-dimensional two-atom space and its symmetry-adapted basis live
//! in [`hilbert`], the master-equation generator (drive, dissipation,
//! drive-frequency jitter) in [`dynamics`], and the numerical machinery —
//! adaptive Runge-Kutta propagation, exact matrix exponentials and the
//! steady-state solver — in [`solvers`].
//!
//! Units: `hbar = 1` and rates are measured in the single-atom decay rate
//! `gamma13` of the 1 <-> 3 transition, times in `1 / gamma13`.

pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod rddi;
pub mod schemes;
pub mod solvers;

pub use error::{Error, Result};
