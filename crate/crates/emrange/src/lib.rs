//! Dynamic orthogonal range reporting structures layered over a simulated
//! block device with exact I/O accounting.
//!
//! The crate provides a block store with an LRU cache model, a family of
//! external-memory search structures (a buffered priority search tree for
//! three-sided queries and three four-sided trees built on top of it), a
//! brute-force oracle for verification, and a workload harness exposed
//! through the `emrange` binary.

pub mod blist;
pub mod corner;
pub mod emstore;
pub mod epst;
pub mod grouped;
pub mod harness;
pub mod oracle;
pub mod orient;
pub mod planar_large;
pub mod planar_small;
pub mod rec;
