//! Key-management compiler and runtime model for rotation keys in CKKS
//! programs.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod analysis;
pub mod bench;
pub mod interp;
pub mod ir;
pub mod passes;
pub mod runtime;
