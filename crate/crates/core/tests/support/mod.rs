#![allow(dead_code)]

pub mod datasets;
pub mod oracles;
pub mod parsing;
pub mod prompts;
pub mod protocol;
pub mod stub_server;
