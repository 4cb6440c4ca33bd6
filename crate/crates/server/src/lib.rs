pub mod api;
pub mod cli;
pub mod client;
pub mod config;
pub mod demo;
pub mod e2_listen;
pub mod server;
pub mod wire;
