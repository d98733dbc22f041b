//! Network side of the toolkit: plant and honeypot servers, the blocking
//! probe client, the inference wire protocol and log tooling.

pub mod client;
pub mod framing;
pub mod gen;
pub mod logsink;
pub mod model;
pub mod server;
pub mod summary;
