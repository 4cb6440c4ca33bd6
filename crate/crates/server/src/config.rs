//! Service configuration: which deployment to load, listen addresses and
//! the account table.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context};
use ara_core::inventory::Inventory;
use ara_core::lab::LabConfig;
use ara_core::ric::RegistryFile;
use serde::Deserialize;

pub const DEFAULT_ACCOUNTS: &str = include_str!("../../../deployments/accounts.toml");

/// A bundled fixture or a path to an inventory TOML file.
#[derive(Debug, Clone, PartialEq)]
pub enum Deployment {
    Phase1,
    Sandbox,
    File(PathBuf),
}

impl FromStr for Deployment {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "phase1" | "ara-phase1" => Deployment::Phase1,
            "sandbox" | "sandbox-50" => Deployment::Sandbox,
            path => Deployment::File(path.into()),
        })
    }
}

impl std::fmt::Display for Deployment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Deployment::Phase1 => f.write_str("phase1"),
            Deployment::Sandbox => f.write_str("sandbox"),
            Deployment::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl Deployment {
    pub fn load(&self) -> anyhow::Result<Inventory> {
        match self {
            Deployment::Phase1 => Ok(Inventory::phase1()),
            Deployment::Sandbox => Ok(Inventory::sandbox()),
            Deployment::File(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading deployment {}", p.display()))?;
                Inventory::load(&text).with_context(|| format!("loading deployment {}", p.display()))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct AccountEntry {
    name: String,
    token: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct AccountsFile {
    accounts: Vec<AccountEntry>,
}

/// token -> account name
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Accounts(BTreeMap<String, String>);

impl Accounts {
    pub fn parse(text: &str) -> anyhow::Result<Accounts> {
        let file: AccountsFile = toml::from_str(text).context("parsing accounts")?;
        let mut map = BTreeMap::new();
        for a in file.accounts {
            if a.name.is_empty() || a.token.is_empty() {
                bail!("account name and token must be non-empty");
            }
            if map.insert(a.token, a.name.clone()).is_some() {
                bail!("token for {} is already assigned", a.name);
            }
        }
        Ok(Accounts(map))
    }

    pub fn builtin() -> Accounts {
        Accounts::parse(DEFAULT_ACCOUNTS).expect("bundled accounts are valid")
    }

    pub fn lookup(&self, token: &str) -> Option<&str> {
        self.0.get(token).map(String::as_str)
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    /// E2-lite listener for external agents; `None` disables it.
    pub e2_listen: Option<SocketAddr>,
    pub seed: u64,
    pub deployment: Deployment,
    pub accounts: Accounts,
    pub registry: RegistryFile,
    /// Advance the virtual clock with wall time every `tick_ms`; `None`
    /// leaves the clock to POST /v1/clock/advance.
    pub tick_ms: Option<u64>,
    /// Per-subscriber buffer for the live metric stream.
    pub stream_buffer: usize,
}

impl ServerConfig {
    pub fn new(deployment: Deployment, seed: u64) -> Self {
        ServerConfig {
            listen: ([127, 0, 0, 1], 8080).into(),
            e2_listen: None,
            seed,
            deployment,
            accounts: Accounts::builtin(),
            registry: RegistryFile::builtin(),
            tick_ms: None,
            stream_buffer: 1024,
        }
    }

    pub fn lab_config(&self) -> anyhow::Result<LabConfig> {
        let mut cfg = LabConfig::new(self.deployment.load()?, self.seed);
        cfg.registry = self.registry.clone();
        Ok(cfg)
    }
}
