//! Type checker and interpreter for a small ML with permissions, adoption
//! and abandon.

pub mod desugar;
pub mod driver;
pub mod facts;
pub mod interp;
pub mod kindcheck;
pub mod parser;
pub mod permissions;
pub mod prelude;
pub mod syntax;
pub mod typecheck;
