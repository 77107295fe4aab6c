pub mod forward;
pub mod greens;
pub mod harness;
pub mod inversion;
pub mod krylov;
pub mod medium;
pub mod oracles;
pub mod parallel;
pub mod phantoms;
pub mod sensitivity;
pub mod special;

pub(crate) mod fftn;
pub(crate) mod quadrature;
