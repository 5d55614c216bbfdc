//! Bounded-real checks and nearest bounded-real approximation of linear
//! time-invariant systems through scattering port-Hamiltonian structure.
//!
//! The crate is organized around:
//! - [`matcore`]: dense symmetric kernels (eigendecomposition, PSD projection);
//! - [`sysmodel`]: system types, structured blocks, LMI assembly, Cayley map;
//! - [`zproj`]: ADMM projection onto the structured PSD constraint set;
//! - [`fgm`]: Nesterov fast-gradient inner solver and subproblem gradients;
//! - [`algos`]: the two alternating outer solvers (check / nearest);
//! - [`oracle`]: independent frequency-domain and LMI certification;
//! - [`datagen`]: reference fixtures, seeded synthetic generators, RLC ladders;
//! - [`io`]: file formats, solver configuration, traces, reports;
//! - [`cli`]: the command-line front end used by the `nearbr` binary.
//!
//! Runnable walkthroughs live in `examples/`.

pub mod algos;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod fgm;
pub mod io;
pub mod matcore;
pub mod oracle;
pub mod sysmodel;
pub mod testing;
pub mod zproj;

pub use error::{Error, Result};
