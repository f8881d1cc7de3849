pub mod commands;
pub mod config;
pub mod expr;
pub mod report;

pub use commands::{run_command, COMMANDS};
pub use config::SystemConfig;
pub use expr::{parse_expression, Expr};
pub use report::{Report, Status};
