//! Resonance lattices, zone decomposition, averaging normal forms and
//! symplectic stability experiments for nearly integrable Hamiltonians
//! `H(θ, I) = h(I) + f(θ, I)`.

pub mod lattice;
pub mod resonance;
pub mod models;
pub mod poly;
pub mod normalform;
pub mod ode;
pub mod dynamics;
pub mod detector;
pub mod harness;
