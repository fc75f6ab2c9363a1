//! Decentralized federated learning over device-to-device wireless links.
//!
//! Devices hold shards of a finite-sum objective and cooperate through a
//! fixed communication graph. Model consensus can run over exact links or
//! over the air, where neighbors transmit simultaneously and the receiver
//! decodes a noisy weighted sum. Three optimizers are provided: DSGD, DSGD
//! with gradient tracking (DSGT) and gradient tracking with SAGA variance
//! reduction (DSGT-VR).

pub mod channel;
pub mod harness;
pub mod learners;
pub mod linalg;
pub mod problems;
pub mod rng;
pub mod scheduler;
pub mod topology;
