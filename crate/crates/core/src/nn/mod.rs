//! Network building blocks and the assembled PRNet model.

pub mod cfa;
pub mod config;
pub mod layers;
pub mod mwcn;
pub mod param;
pub mod prnet;

pub use cfa::CfaBlock;
pub use config::{Ablation, PRNetConfig};
pub use mwcn::MwcnBlock;
pub use param::{Module, Param};
pub use prnet::{EncoderFeatures, PRNet};
