pub mod element;
pub mod error;
pub mod geom;
pub mod io;
pub mod kernel;
pub mod learn;
pub mod optim;
pub mod pursuit;
pub mod sh;
pub mod slepian;

pub use error::{Error, Result};
