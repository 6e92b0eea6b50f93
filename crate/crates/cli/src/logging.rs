//! Plain `LEVEL key=value ...` lines on standard error.

use std::fmt::Arguments;

pub fn emit(level: &str, message: Arguments<'_>) {
    eprintln!("{level} {message}");
}

macro_rules! info {
    ($($arg:tt)*) => { $crate::logging::emit("INFO", format_args!($($arg)*)) };
}

macro_rules! warning {
    ($($arg:tt)*) => { $crate::logging::emit("WARN", format_args!($($arg)*)) };
}

pub(crate) use {info, warning};
