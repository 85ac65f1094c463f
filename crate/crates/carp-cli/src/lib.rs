//! Library surface of the `carp` command-line tool: configuration types,
//! manifests, and one function per subcommand. The binary in `main.rs` is
//! a thin argument-parsing layer over these.

pub mod commands;
pub mod config;
pub mod manifest;

/// Process exit codes: 0 success, 1 property/acceptance failure, 2
/// usage/config error.
pub mod exit_codes {
    pub const SUCCESS: i32 = 0;
    pub const PROPERTY_FAILURE: i32 = 1;
    pub const USAGE_ERROR: i32 = 2;
}
