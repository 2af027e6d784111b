//! Detection of adversarially perturbed regions in a two-stage detector by
//! context inconsistency.
//!
//! The pipeline: a synthetic world and frozen detector stub
//! ([`synthworld`]), a gated message-passing context model over region
//! proposals ([`sceme`]), per-category autoencoders over the resulting
//! context profiles ([`guardians`]), gradient-sign attacks in feature space
//! ([`redteam`]), and the training / detection / evaluation pipelines
//! ([`harness`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod guardians;
pub mod harness;
pub mod modelio;
pub mod numkit;
pub mod par;
pub mod redteam;
pub mod rngs;
pub mod sceme;
pub mod synthworld;
