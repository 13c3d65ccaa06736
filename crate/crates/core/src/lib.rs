//! Quantum symplectic reduction of the weighted harmonic oscillator on `C^n`:
//! Toeplitz matrices on the joint eigenspaces `H_{1,k}`, the reduction maps
//! `V_k`, `W_k`, `U_k`, and the twisted-sector asymptotics of spectral sums on
//! weighted projective spaces.

pub mod error;
pub mod fock;
pub mod numeric;
pub mod polytope;
pub mod quadrature;
pub mod reduction;
pub mod sectors;
pub mod spectra;
pub mod symbols;
pub mod verify;
pub mod wick;

pub use error::{Error, Result};
pub use fock::{count_dim, enumerate_basis, EigenspaceBasis, MultiIndex, WeightVector};
pub use polytope::{LatticePoint, MomentumPolytope, TorusAction};
pub use reduction::{ReductionMaps, SimplexDomain};
pub use sectors::{AsymptoticModel, RootOfUnity, TwistedSector};
pub use spectra::{HermitianEigen, SpectralDensityReport, SpectrumCache};
pub use symbols::{PolySymbol, RealPoly, ReducedPoint};
pub use verify::{Block, CheckResult, Fault, VerifyOptions};
pub use wick::OperatorMatrix;
