pub mod churn;
pub mod engine;
pub mod oracle;
pub mod persist;
pub mod wire;
