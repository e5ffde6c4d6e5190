pub mod bench;
pub mod combinators;
pub mod constructs;
pub mod designs;
pub mod oracle;
pub mod runtime;
