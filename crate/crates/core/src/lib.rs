pub mod atlas;
pub mod domain;
pub mod error;
pub mod isotropy;
pub mod jet;
pub mod pullback;
pub mod report;
pub mod scenario;
pub mod target;
pub mod variational;

pub use error::{Error, Result};
pub use jet::{Analytic, GradJet, Jet, JetOrder};
