//! Multimodal jaw-movement event recognition: the numeric core.
//!
//! Everything here is `no_std` + `alloc`; file formats, threads and the CLI
//! live in the `jmfusion` crate.
#![cfg_attr(not(any(test, feature = "std")), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

mod error;
pub mod evalkit;
pub mod fusion;
pub mod nn;
pub mod signals;
pub mod synth;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use signals::{Activity, EventClass, EventLabel, MultimodalRecording, WindowSequence};
