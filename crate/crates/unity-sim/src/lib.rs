//! Deterministic discrete-event testbed for a cloud-hosted IMS telephony
//! core.
//!
//! The simulation reproduces a desk-scale "Unity"-style deployment: a pool of
//! single-core pouches (VMs) runs communication middleware, an information
//! distribution service, a name/placement service and a set of IMS
//! capability units (SIP handler, session control, HSS frontend, media, and
//! friends). Everything runs in virtual microsecond time under a
//! single-threaded event kernel, so a given (descriptor, scenario, seed)
//! triple always produces byte-identical outputs.

pub mod descriptor;
pub mod harness;
pub mod ids;
pub mod kernel;
pub mod nss;
pub mod rng;
pub mod sim;
pub mod time;
pub mod unit;

pub use descriptor::{parse_descriptor, Descriptor, DescriptorError};
pub use kernel::{Endpoint, Kernel, KernelError, NetworkConfig, PouchId, UaId};
pub use sim::{CallOutcome, TrafficPlan, World};
pub use time::{SimDuration, SimTime};
pub use unit::{UnitAddress, UnitId, UnitType};
