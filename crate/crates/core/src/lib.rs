//! Differentiable multivariate Fisher noncentral hypergeometric distribution.
//!
//! * [`numerics`]: log-Gamma, digamma, log-sum-exp and tempered softmax.
//! * [`hypergeom`]: exact PMFs, support enumeration and the conditional-chain
//!   factorization used by the samplers.
//! * [`reparam`]: Gumbel-softmax sampling through the chain, the exact chain
//!   sampler and Jacobians of soft counts with respect to log weights.
//! * [`stats`]: two-sample Kolmogorov–Smirnov tests with Benjamini–Hochberg
//!   correction and sensitivity sweeps comparing the two samplers.
//! * [`fit`]: recovery of unknown class weights from observed draws by SGD.
//! * [`cli`]: the `diffhg` command-line front end.

pub mod cli;
pub mod error;
pub mod fit;
pub mod hypergeom;
pub mod numerics;
pub mod reparam;
pub mod stats;

pub use error::{Error, Result};
pub use hypergeom::{DrawVector, LogPmfTable, UrnSpec};
pub use reparam::{ChainSampler, NoiseBundle, RelaxedDraw, SoftCountJacobian};
