//! Binding listeners and running the service.

use std::future::Future;
use std::net::SocketAddr;
use std::time::Duration;

use anyhow::Context;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::api::{router, AppState, Shared};
use crate::config::ServerConfig;
use crate::e2_listen::serve_e2;

/// A service bound and running in the background.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub e2_addr: Option<SocketAddr>,
    pub state: Shared,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
    extra: Vec<JoinHandle<()>>,
}

impl RunningServer {
    pub const GRACE: Duration = Duration::from_secs(1);

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stop accepting, give in-flight requests a grace period, then drop
    /// whatever is left (open live streams never finish on their own).
    pub async fn shutdown(mut self) -> anyhow::Result<()> {
        for t in &self.extra {
            t.abort();
        }
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match tokio::time::timeout(Self::GRACE, &mut self.task).await {
            Ok(joined) => joined.context("server task")?.context("server")?,
            Err(_) => {
                tracing::info!("grace period over, closing remaining connections");
                self.task.abort();
            }
        }
        Ok(())
    }
}

async fn bind(addr: SocketAddr, what: &str) -> anyhow::Result<TcpListener> {
    TcpListener::bind(addr).await.with_context(|| format!("cannot bind {what} listener on {addr}"))
}

/// Bind every listener, then serve in the background.
pub async fn start(cfg: &ServerConfig) -> anyhow::Result<RunningServer> {
    let state = AppState::new(cfg)?;
    start_with_state(cfg, state).await
}

pub async fn start_with_state(cfg: &ServerConfig, state: Shared) -> anyhow::Result<RunningServer> {
    let http = bind(cfg.listen, "HTTP").await?;
    let e2 = match cfg.e2_listen {
        Some(a) => Some(bind(a, "E2").await?),
        None => None,
    };
    let addr = http.local_addr()?;
    let e2_addr = e2.as_ref().map(TcpListener::local_addr).transpose()?;
    let mut extra = Vec::new();
    if let Some(l) = e2 {
        extra.push(tokio::spawn(serve_e2(l, state.clone())));
    }
    if let Some(tick) = cfg.tick_ms.filter(|t| *t > 0) {
        let st = state.clone();
        extra.push(tokio::spawn(async move {
            let mut iv = tokio::time::interval(Duration::from_millis(tick));
            iv.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            iv.tick().await;
            loop {
                iv.tick().await;
                if let Err(e) = st.tick(tick).await {
                    tracing::error!("clock tick failed: {e}");
                }
            }
        }));
    }
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(state.clone());
    let task = tokio::spawn(async move {
        axum::serve(http, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%addr, ?e2_addr, "serving");
    Ok(RunningServer { addr, e2_addr, state, stop: Some(tx), task, extra })
}

/// Serve until `signal` resolves.
pub async fn run_until(cfg: &ServerConfig, signal: impl Future<Output = ()>) -> anyhow::Result<()> {
    let server = start(cfg).await?;
    println!("listening on {}", server.url());
    if let Some(a) = server.e2_addr {
        println!("e2 listening on {a}");
    }
    signal.await;
    server.shutdown().await
}
