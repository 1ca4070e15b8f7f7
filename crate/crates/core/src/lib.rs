//! Feature-map kernels built on a minimal dense tensor substrate:
//! dynamic K-sparse attention, amplitude-normalized pyramid fusion, and a
//! frequency-domain refinement operator, together with the reverse-mode
//! tape, brute-force oracles, and property suites that verify them.
//!
//! Everything is CPU-only and deterministic: fixed summation orders, seeded
//! generators, and no hidden state, so two runs with the same seed produce
//! bit-identical results.

// Index-heavy numeric kernels read better with explicit ranges.
#![allow(clippy::needless_range_loop)]

pub mod activation;
pub mod autodiff;
pub mod bench;
pub mod config;
pub mod conv;
pub mod dcfa;
pub mod demo;
pub mod dfpn;
pub mod fft;
pub mod firc;
pub mod io;
pub mod norm;
pub mod oracles;
pub mod report;
pub mod resample;
pub mod rng;
pub mod shuffle;
pub mod softmax;
pub mod spectral;
pub mod spectrum;
pub mod suite;
pub mod tensor;

pub use tensor::{DType, Element, Error, Result, Tensor};
