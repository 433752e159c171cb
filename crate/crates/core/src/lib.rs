//! Multi-radio LoRa mesh stack with a deterministic simulator.

pub mod app;
pub mod codec;
pub mod mac;
pub mod network;
pub mod phy;
pub mod sim;
pub mod time;

pub use time::SimTime;
