//! Streaming behavioral profiling of network users from observed hostnames.
//!
//! Packets are filtered down to `<source address, hostname>` tuples, split
//! into per-user sliding windows, and fed to an online CBOW embedding model.
//! Users are profiled by looking up the categories of the nearest labeled
//! hostnames to the ones they recently visited.

#![forbid(unsafe_code)]

pub mod capture;
pub mod embed;
pub mod eval;
pub mod filter;
pub mod par;
pub mod pipeline;
pub mod profiling;
pub mod splitter;
pub mod synth;
pub mod tuple_gen;
