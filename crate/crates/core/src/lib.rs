//! Simulator and design-space exploration toolkit for processing-in-memory
//! on 3D NAND flash.
//!
//! The crate is layered bottom-up:
//!
//! * [`tech`] — RC-derived latency, energy and density of one plane.
//! * [`calibrate`] — least-squares fit of the free process constants.
//! * [`pim`] — bit-exact emulation of the in-plane analog dot product.
//! * [`interconnect`] — event-driven shared-bus / H-tree data movement.
//! * [`tiling`] — sMVM tiling search and dMVM (attention) dataflows.
//! * [`workload`] — decoder graphs, time per output token, KV-cache costs.
//! * [`dse`] — sweeps, plane selection and area accounting.
//! * [`config`] — TOML loading of everything above.

pub mod calibrate;
pub mod config;
pub mod dse;
pub mod error;
pub mod interconnect;
pub mod pim;
pub mod tech;
pub mod tiling;
pub mod workload;

pub use error::{Error, Result};
pub use interconnect::{BusTopology, FlashTopology};
pub use tech::{PlaneConfig, TechParams};
pub use tiling::TilingPlan;
pub use workload::LlmModel;
