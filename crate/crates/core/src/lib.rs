pub mod cli;
pub mod edit;
pub mod extract;
pub mod graph;
pub mod ids;
pub mod ingest;
pub mod instrument;
pub mod sandbox;
pub mod server;
pub mod session;
pub mod span;
pub mod syntax;
