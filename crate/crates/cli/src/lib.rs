//! Command-line front end for relconv: argument parsing, rule grammar and
//! the subcommand drivers behind the `relconv` binary.

pub mod commands;
pub mod rules;

pub use commands::{exit_code, main_with};
pub use rules::{parse_rule, RuleParseError, VALID_RULES};
