//! Declarative xApp registry, loaded from TOML or posted as JSON.

use serde::{Deserialize, Serialize};

use super::xapps::{LatencyMonitor, ThresholdControl};
use super::{AgentSelector, RicError, XApp};

fn all() -> AgentSelector {
    AgentSelector::All
}

fn default_period() -> u32 {
    LatencyMonitor::DEFAULT_PERIOD_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum XAppConfig {
    LatencyMonitor {
        id: String,
        #[serde(default = "all")]
        selector: AgentSelector,
        #[serde(default = "default_period")]
        report_period_ms: u32,
        #[serde(default)]
        window: Option<usize>,
    },
    ThresholdControl {
        id: String,
        #[serde(default = "all")]
        selector: AgentSelector,
        #[serde(default = "default_period")]
        report_period_ms: u32,
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        threshold_ms: Option<f64>,
        #[serde(default)]
        cooldown_ms: Option<u64>,
    },
}

impl XAppConfig {
    pub fn id(&self) -> &str {
        match self {
            XAppConfig::LatencyMonitor { id, .. } | XAppConfig::ThresholdControl { id, .. } => id,
        }
    }

    pub fn build(&self) -> Result<Box<dyn XApp>, RicError> {
        match self {
            XAppConfig::LatencyMonitor { id, selector, report_period_ms, window } => {
                if *report_period_ms == 0 {
                    return Err(RicError::Config("report_period_ms must be >= 1".into()));
                }
                if *window == Some(0) {
                    return Err(RicError::Config("window must be >= 1".into()));
                }
                Ok(Box::new(
                    LatencyMonitor::new(id.clone())
                        .with_selector(selector.clone())
                        .with_period(*report_period_ms)
                        .with_window(window.unwrap_or(LatencyMonitor::DEFAULT_WINDOW)),
                ))
            }
            XAppConfig::ThresholdControl { id, selector, report_period_ms, n, threshold_ms, cooldown_ms } => {
                if *report_period_ms == 0 || *n == Some(0) {
                    return Err(RicError::Config("report_period_ms and n must be >= 1".into()));
                }
                let theta = threshold_ms.unwrap_or(ThresholdControl::DEFAULT_THRESHOLD_MS);
                if !theta.is_finite() {
                    return Err(RicError::Config("threshold_ms must be finite".into()));
                }
                Ok(Box::new(
                    ThresholdControl::new(id.clone())
                        .with_selector(selector.clone())
                        .with_period(*report_period_ms)
                        .with_params(
                            n.unwrap_or(ThresholdControl::DEFAULT_N),
                            theta,
                            cooldown_ms.unwrap_or(ThresholdControl::DEFAULT_COOLDOWN_MS),
                        ),
                ))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegistryFile {
    #[serde(default)]
    pub xapps: Vec<XAppConfig>,
}

impl RegistryFile {
    pub const DEFAULT: &'static str = include_str!("../../../../deployments/xapps.toml");

    pub fn load(text: &str) -> Result<RegistryFile, RicError> {
        let reg: RegistryFile = toml::from_str(text).map_err(|e| RicError::Config(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        for x in &reg.xapps {
            if !seen.insert(x.id()) {
                return Err(RicError::DuplicateXApp(x.id().to_string()));
            }
            x.build()?;
        }
        Ok(reg)
    }

    pub fn builtin() -> RegistryFile {
        RegistryFile::load(Self::DEFAULT).expect("bundled xApp registry is valid")
    }
}
