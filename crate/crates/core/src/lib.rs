// Copyright 2026 Pentabat Contributors
// SPDX-License-Identifier: Apache-2.0

//! Simulation of a metastable pentacene quantum battery: a five-level
//! molecular ensemble coupled to a lossy thermal microwave cavity.

pub mod config;
pub mod cumulant;
pub mod io;
pub mod model;
pub mod observables;
pub mod ode;
pub mod oracle;
pub mod sweep;
