//! The four-step workflow end to end: reserve a base station and a UE,
//! pick images, launch, and watch the RIC receive indications.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context};
use ara_core::inventory::{NodeRecord, NodeRole};
use ara_core::lab::{LaunchSpec, LeaseSpec, SessionView};
use ara_core::lease::{Interval, LeaseId, LeaseState, SpectrumBlock};
use ara_core::metrics::Layer;
use ara_core::provisioner::{ContainerState, SessionState};
use ara_core::ric::TimingVerdict;

use crate::client::ApiClient;

#[derive(Debug, Clone)]
pub struct DemoOptions {
    /// Virtual time to run after launch.
    pub run_ms: u64,
    /// Clock step per advance call.
    pub step_ms: u64,
    /// MAC median override so the threshold xApp has something to act on.
    pub mac_median_ms: Option<f64>,
    pub center_mhz: f64,
    pub bandwidth_mhz: f64,
    /// Stop the session and release the lease afterwards.
    pub cleanup: bool,
}

impl Default for DemoOptions {
    fn default() -> Self {
        DemoOptions {
            run_ms: 5_000,
            step_ms: 500,
            mac_median_ms: Some(12.0),
            center_mhz: 3550.0,
            bandwidth_mhz: 40.0,
            cleanup: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoReport {
    pub lease_id: LeaseId,
    pub session_id: u64,
    pub base_station: String,
    pub ue: String,
    pub view: SessionView,
    /// Indications delivered to the latency-monitor xApp.
    pub monitor_indications: usize,
    pub control_actions: usize,
    pub within_window: usize,
    pub chart: Vec<u8>,
    /// The session's sample stream, one JSON record per line.
    pub stream: String,
    pub wall: Duration,
}

impl DemoReport {
    pub fn summary(&self) -> String {
        format!(
            "lease {} admitted for {} + {}\nsession {} running, ue attached to {}\n{} indications routed to latency-monitor\n{} control actions, {} within the near-RT window",
            self.lease_id,
            self.base_station,
            self.ue,
            self.session_id,
            self.view.attachments.first().and_then(|a| a.agent_id.as_deref()).unwrap_or("-"),
            self.monitor_indications,
            self.control_actions,
            self.within_window,
        )
    }
}

fn pick_pair(nodes: &[NodeRecord]) -> anyhow::Result<(&NodeRecord, &NodeRecord)> {
    for bs in nodes.iter().filter(|n| n.role == NodeRole::BaseStation) {
        if let Some(ue) = nodes.iter().find(|n| n.role.is_ue() && n.site_id == bs.site_id) {
            return Ok((bs, ue));
        }
    }
    bail!("deployment has no base station with a UE at the same site")
}

pub async fn run_demo(api: &ApiClient, opts: &DemoOptions) -> anyhow::Result<DemoReport> {
    let started = Instant::now();

    // 1. reserve one base station and one UE
    let nodes = api.nodes(None, None).await.context("listing nodes")?;
    let (bs, ue) = pick_pair(&nodes)?;
    let now = api.clock().await?.now;
    let images = api.images().await.context("listing images")?;
    for want in ["gnb-ric", "nrue"] {
        ensure!(images.iter().any(|i| i.name == want), "image {want} missing from catalog");
    }
    let lease = api
        .request_lease(&LeaseSpec {
            node_ids: vec![bs.node_id.clone(), ue.node_id.clone()],
            spectrum: SpectrumBlock::new(opts.center_mhz, opts.bandwidth_mhz),
            interval: Interval::new(now, now + opts.run_ms + 3_600_000),
            images: vec!["gnb-ric".into(), "nrue".into()],
        })
        .await
        .context("requesting lease")?;
    ensure!(lease.state == LeaseState::Active, "lease {} is {:?}, not Active", lease.lease_id, lease.state);

    // 2-3. choose images and launch
    let mut layer_medians = BTreeMap::new();
    if let Some(m) = opts.mac_median_ms {
        layer_medians.insert(Layer::Mac, m);
    }
    let spec = LaunchSpec {
        lease_id: lease.lease_id,
        images: BTreeMap::from([(bs.node_id.clone(), "gnb-ric".to_string()), (ue.node_id.clone(), "nrue".to_string())]),
        split: false,
        layer_medians,
    };
    let view = api.launch(&spec).await.context("launching session")?;
    let sid = view.status.session_id.0;
    ensure!(view.status.state == SessionState::Running, "session {sid} is {:?}", view.status.state);
    ensure!(
        view.status.containers.iter().all(|c| c.state == ContainerState::Running),
        "not every container is Running"
    );
    ensure!(view.attachments.iter().all(|a| a.agent_id.is_some()), "UE did not attach: {:?}", view.attachments);

    // 4. run the RAN and watch the RIC
    let mut elapsed = 0;
    while elapsed < opts.run_ms {
        let dt = opts.step_ms.max(1).min(opts.run_ms - elapsed);
        api.advance(dt).await.context("advancing clock")?;
        elapsed += dt;
    }
    let view = api.session(sid).await?;
    let monitor = view
        .xapps
        .iter()
        .find(|x| x.kind == "latency-monitor")
        .map(|x| x.xapp_id.clone())
        .context("session has no latency-monitor xApp")?;
    let routed = api.metrics(sid, 0).await?;
    let monitor_indications = routed.iter().filter(|r| r.xapp_id == monitor).count();
    ensure!(monitor_indications >= 10, "only {monitor_indications} indications reached {monitor}");
    let within_window = view.control_actions.iter().filter(|a| a.verdict == TimingVerdict::WithinWindow).count();
    let chart = api.chart(sid).await.context("exporting chart")?;
    let stream = api.metric_lines(sid).await?;

    if opts.cleanup {
        api.stop_session(sid).await.context("stopping session")?;
        api.terminate_lease(lease.lease_id.0).await.context("releasing lease")?;
    }

    Ok(DemoReport {
        lease_id: lease.lease_id,
        session_id: sid,
        base_station: bs.node_id.0.clone(),
        ue: ue.node_id.0.clone(),
        control_actions: view.control_actions.len(),
        within_window,
        view,
        monitor_indications,
        chart,
        stream,
        wall: started.elapsed(),
    })
}
