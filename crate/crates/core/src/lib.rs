//! Schemas, SQL handling, synthesis pipeline and corpus statistics for
//! text-to-SQL data augmentation.

pub mod analysis;
pub mod entity;
pub mod error;
pub mod exec;
pub mod mixture;
pub mod parser;
pub mod schema;
pub mod seed;
pub mod stub;
pub mod sql;
pub mod synthesis;
pub mod toy;

pub use error::{Error, Result};
