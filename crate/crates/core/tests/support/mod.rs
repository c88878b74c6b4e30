//! Brute-force oracles shared by the integration tests.

#![allow(dead_code)]

pub mod avm;
pub mod lp;
