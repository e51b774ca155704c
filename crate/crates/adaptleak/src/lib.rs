//! A desk-scale laboratory for context-adaptation side channels.
//!
//! A simulated context-aware system leaks user context through the settings
//! it adapts; an observer reconstructs the context by clustering those
//! settings; an information-based detector scores observers by the mutual
//! information their queries expose; and a mitigation engine degrades the
//! channel until the attack falls back to blind guessing.
//!
//! Modules follow that loop:
//!
//! - [`registry`]: the adaptation registry file and its derived structures
//! - [`trace`]: timestamps, action vectors, records, tick series, persistence
//! - [`scenario`]: synthetic schedules, presets, the simulator
//! - [`infodetect`]: MI estimation, suspicion scores, FP/FN sweeps
//! - [`attacker`]: k-means, silhouette, feature selection, attack scoring
//! - [`mitigation`]: delay, suppression, masking, the escalation controller
//! - [`harness`]: experiment orchestration, sweeps, report files

pub mod attacker;
pub mod harness;
pub mod infodetect;
pub mod mitigation;
pub mod registry;
pub mod scenario;
pub mod seed;
pub mod trace;
