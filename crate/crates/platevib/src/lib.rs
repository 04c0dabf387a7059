//! Natural frequencies of clamped thin plates carrying point mass-spring
//! oscillators.
//!
//! The plate deflection is discretized with the C1-conforming
//! Bogner-Fox-Schmit (BFS) rectangle on a tensor-product mesh.  Each
//! oscillator (mass `M`, spring `K`) attached at an interior point couples to
//! the plate through a rational, frequency-dependent rank-one term with a pole
//! at `sigma = K / M`, so the discrete problem is a nonlinear (rational)
//! eigenvalue problem
//!
//! ```text
//! F(eta) = A - eta * B + sum_j  eta * sigma_j / (eta - sigma_j) * M_j * e_j e_j^T
//! ```
//!
//! Eigenvalues are located with a contour-integral spectral indicator over
//! rectangles of the complex plane, subdivided recursively until the requested
//! precision is reached.  A dense linearization of the coupled system serves
//! as an independent cross-check on coarse meshes.
//!
//! Modules mirror the pipeline: [`mesh`] -> [`element`] -> [`assembly`] ->
//! [`nep`] -> [`sim`], with [`oracle`] for verification and [`config`] /
//! [`runner`] / [`table`] / [`plot`] backing the command-line harness.

pub mod assembly;
pub mod config;
pub mod element;
pub mod mesh;
pub mod nep;
pub mod oracle;
pub mod plot;
pub mod quad;
pub mod runner;
pub mod sim;
pub mod solver;
pub mod sparse;
pub mod table;
