#![allow(dead_code)]

use ara_server::client::ApiClient;
use ara_server::config::{Deployment, ServerConfig};
use ara_server::server::{start, RunningServer};

pub fn config(deployment: Deployment, seed: u64) -> ServerConfig {
    let mut cfg = ServerConfig::new(deployment, seed);
    cfg.listen = ([127, 0, 0, 1], 0).into();
    cfg.e2_listen = Some(([127, 0, 0, 1], 0).into());
    cfg
}

pub async fn spawn_with(cfg: ServerConfig) -> (RunningServer, ApiClient) {
    let server = start(&cfg).await.expect("server starts");
    let api = ApiClient::new(server.url(), "demo-token");
    (server, api)
}

pub async fn spawn() -> (RunningServer, ApiClient) {
    spawn_with(config(Deployment::Phase1, 42)).await
}

pub fn as_user(server: &RunningServer, token: &str) -> ApiClient {
    ApiClient::new(server.url(), token)
}
