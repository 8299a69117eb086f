//! Scaling agents and the numerical pieces they share.

pub mod checkpoint;
pub mod cpo;
pub mod cvar;
pub mod gradcheck;
pub mod nn;
pub mod onpolicy;
pub mod policy;
pub mod ppo;
pub mod pred_alloc;
pub mod replay;
pub mod wcsac;

pub use checkpoint::{AgentKind, AgentParams, PolicyCheckpoint, CHECKPOINT_FORMAT};
pub use cpo::{terminal_cost as wc_terminal_cost, CpoAgent, CpoConfig};
pub use cvar::cvar_gaussian;
pub use ppo::{PpoAgent, PpoConfig};
pub use pred_alloc::{pred_alloc_decide, PredAllocPolicy};
pub use wcsac::{WcsacAgent, WcsacConfig};
