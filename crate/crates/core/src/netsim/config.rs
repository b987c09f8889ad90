//! Scenario configuration, read from flat `key = value` text.

use std::fmt;

use thiserror::Error;

use crate::consensus::CompactTarget;
use crate::model::{ChainParams, GENESIS_MESSAGE};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {0}: expected key = value")]
    Syntax(usize),
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("bad value for {key}: {value}")]
    BadValue { key: String, value: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Complete,
    Ring,
    Star,
}

impl Topology {
    /// Peers of `node` among `n` honest nodes.
    pub fn peers(self, node: usize, n: usize) -> Vec<usize> {
        match self {
            Topology::Complete => (0..n).filter(|&j| j != node).collect(),
            Topology::Ring => {
                let mut p: Vec<usize> =
                    [(node + n - 1) % n, (node + 1) % n].into_iter().filter(|&j| j != node).collect();
                p.dedup();
                p
            }
            Topology::Star if node == 0 => (1..n).collect(),
            Topology::Star => vec![0],
        }
    }

    /// Longest shortest path, in hops.
    pub fn diameter(self, n: usize) -> u64 {
        match (self, n) {
            (_, 0 | 1) => 0,
            (Topology::Complete, _) => 1,
            (Topology::Ring, _) => (n / 2) as u64,
            (Topology::Star, 2) => 1,
            (Topology::Star, _) => 2,
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Topology::Complete => "complete",
            Topology::Ring => "ring",
            Topology::Star => "star",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Adversary {
    None,
    /// Pay the merchant (node 0), then try to replace the payment with a
    /// privately mined conflicting branch once the merchant has seen
    /// `confirmations` blocks on it. The attacker abandons the attempt when
    /// the honest chain is `give_up` blocks ahead of the private one.
    DoubleSpend {
        confirmations: u64,
        attacker_rate: f64,
        give_up: u64,
    },
    /// Mine privately and publish only once `lead` blocks ahead of node 0.
    Withhold {
        lead: u64,
        attacker_rate: f64,
    },
}

impl Adversary {
    fn name(&self) -> &'static str {
        match self {
            Adversary::None => "none",
            Adversary::DoubleSpend { .. } => "double-spend",
            Adversary::Withhold { .. } => "withhold",
        }
    }

    pub fn attacker_rate(&self) -> Option<f64> {
        match *self {
            Adversary::None => None,
            Adversary::DoubleSpend { attacker_rate, .. } | Adversary::Withhold { attacker_rate, .. } => {
                Some(attacker_rate)
            }
        }
    }
}

/// Multiply every miner's rate by `factor` once its tip reaches `height`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateChange {
    pub height: u64,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub nodes: usize,
    pub topology: Topology,
    pub latency_ms: u64,
    /// Attempts per second for each honest node; zero means it does not mine.
    pub hash_rates: Vec<f64>,
    pub duration_s: u64,
    pub params: ChainParams,
    pub adversary: Adversary,
    /// Payments per simulated second, spread over random honest senders.
    pub tx_rate: f64,
    pub fee: u64,
    /// Stop mining once any honest tip reaches this height.
    pub max_height: Option<u64>,
    pub rate_change: Option<RateChange>,
    /// Pre-mine mature coinbases for every participant before the clock starts.
    pub bootstrap: bool,
    pub genesis_message: String,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            nodes: 4,
            topology: Topology::Complete,
            latency_ms: 100,
            hash_rates: vec![1.0; 4],
            duration_s: 60,
            params: ChainParams::simnet(),
            adversary: Adversary::None,
            tx_rate: 0.0,
            fee: 1000,
            max_height: None,
            rate_change: None,
            bootstrap: true,
            genesis_message: GENESIS_MESSAGE.to_string(),
        }
    }
}

fn bad(key: &str, value: &str) -> ConfigError {
    ConfigError::BadValue { key: key.to_string(), value: value.to_string() }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| bad(key, value))
}

fn seconds_to_ms(key: &str, value: &str) -> Result<u64, ConfigError> {
    let s: f64 = num(key, value)?;
    if !s.is_finite() || s < 0.0 {
        return Err(bad(key, value));
    }
    Ok((s * 1000.0).round() as u64)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

impl ScenarioConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        let mut adversary = "none".to_string();
        let mut confirmations = 1u64;
        let mut attacker_rate = 0.1f64;
        let mut give_up = 6u64;
        let mut lead = 2u64;
        let mut rates: Option<Vec<f64>> = None;
        let mut single_rate: Option<f64> = None;
        let mut overrides: Vec<(String, String)> = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax(lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "seed" => cfg.seed = num(key, value)?,
                "nodes" => cfg.nodes = num(key, value)?,
                "topology" => {
                    cfg.topology = match value {
                        "complete" => Topology::Complete,
                        "ring" => Topology::Ring,
                        "star" => Topology::Star,
                        _ => return Err(bad(key, value)),
                    }
                }
                "latency" => cfg.latency_ms = seconds_to_ms(key, value)?,
                "hash_rate" => single_rate = Some(num(key, value)?),
                "hash_rates" => rates = Some(value.split(',').map(|v| num(key, v.trim())).collect::<Result<_, _>>()?),
                "duration" => cfg.duration_s = num(key, value)?,
                "params" => cfg.params = ChainParams::by_name(value).ok_or_else(|| bad(key, value))?,
                "initial_subsidy" | "halving_interval" | "retarget_interval" | "target_spacing" | "max_bits"
                | "clamp_factor" | "coinbase_maturity" => overrides.push((key.to_string(), value.to_string())),
                "adversary" => match value {
                    "none" | "double-spend" | "withhold" => adversary = value.to_string(),
                    _ => return Err(bad(key, value)),
                },
                "confirmations" => confirmations = num(key, value)?,
                "attacker_rate" => attacker_rate = num(key, value)?,
                "give_up" => give_up = num(key, value)?,
                "lead" => lead = num(key, value)?,
                "tx_rate" => cfg.tx_rate = num(key, value)?,
                "fee" => cfg.fee = num(key, value)?,
                "max_height" => cfg.max_height = Some(num(key, value)?),
                "rate_change" => {
                    let (h, f) = value.split_once(':').ok_or_else(|| bad(key, value))?;
                    cfg.rate_change = Some(RateChange { height: num(key, h.trim())?, factor: num(key, f.trim())? });
                }
                "bootstrap" => cfg.bootstrap = parse_bool(key, value)?,
                "genesis_message" => cfg.genesis_message = value.to_string(),
                _ => return Err(ConfigError::UnknownKey(key.to_string())),
            }
        }
        // Parameter overrides apply after any `params` preset, whatever the line order.
        for (key, value) in overrides {
            apply_param_override(&mut cfg.params, &key, &value)?;
        }
        cfg.hash_rates = match (rates, single_rate) {
            (Some(r), _) => r,
            (None, Some(r)) => vec![r; cfg.nodes],
            (None, None) => vec![1.0; cfg.nodes],
        };
        cfg.adversary = match adversary.as_str() {
            "double-spend" => Adversary::DoubleSpend { confirmations, attacker_rate, give_up },
            "withhold" => Adversary::Withhold { lead, attacker_rate },
            _ => Adversary::None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.nodes == 0 {
            return invalid("at least one node is required".into());
        }
        if self.hash_rates.len() != self.nodes {
            return invalid(format!("{} hash rates for {} nodes", self.hash_rates.len(), self.nodes));
        }
        if self.hash_rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return invalid("hash rates must be finite and non-negative".into());
        }
        let total: f64 = self.hash_rates.iter().sum();
        if total <= 0.0 {
            return invalid("at least one honest node must mine".into());
        }
        if self.duration_s == 0 {
            return invalid("duration must be positive".into());
        }
        if !self.tx_rate.is_finite() || self.tx_rate < 0.0 {
            return invalid("tx_rate must be finite and non-negative".into());
        }
        if let Some(rc) = self.rate_change {
            if !rc.factor.is_finite() || rc.factor <= 0.0 {
                return invalid("rate_change factor must be positive".into());
            }
        }
        if let Some(rate) = self.adversary.attacker_rate() {
            if !rate.is_finite() || rate <= 0.0 {
                return invalid("attacker_rate must be positive".into());
            }
            if rate >= total {
                return invalid("attacker_rate must be below the honest total".into());
            }
            if !self.bootstrap {
                return invalid("adversary scenarios need bootstrap funds".into());
            }
        }
        if self.tx_rate > 0.0 && !self.bootstrap {
            return invalid("transactions need bootstrap funds".into());
        }
        self.params.validate().map_err(ConfigError::Invalid)?;
        if self.genesis_message.is_empty() || self.genesis_message.len() > crate::model::MAX_GENESIS_MESSAGE {
            return invalid("genesis message must be 1..=1000 bytes".into());
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let rates: Vec<String> = self.hash_rates.iter().map(|r| r.to_string()).collect();
        let mut lines = vec![
            format!("seed = {}", self.seed),
            format!("nodes = {}", self.nodes),
            format!("topology = {}", self.topology),
            format!("latency = {}", self.latency_ms as f64 / 1000.0),
            format!("hash_rates = {}", rates.join(",")),
            format!("duration = {}", self.duration_s),
            format!("initial_subsidy = {}", p.initial_subsidy),
            format!("halving_interval = {}", p.halving_interval),
            format!("retarget_interval = {}", p.retarget_interval),
            format!("target_spacing = {}", p.target_spacing),
            format!("max_bits = {:#010x}", p.max_bits()),
            format!("clamp_factor = {}", p.clamp_factor),
            format!("coinbase_maturity = {}", p.coinbase_maturity),
            format!("adversary = {}", self.adversary.name()),
        ];
        match self.adversary {
            Adversary::None => {}
            Adversary::DoubleSpend { confirmations, attacker_rate, give_up } => {
                lines.push(format!("confirmations = {confirmations}"));
                lines.push(format!("attacker_rate = {attacker_rate}"));
                lines.push(format!("give_up = {give_up}"));
            }
            Adversary::Withhold { lead, attacker_rate } => {
                lines.push(format!("lead = {lead}"));
                lines.push(format!("attacker_rate = {attacker_rate}"));
            }
        }
        lines.push(format!("tx_rate = {}", self.tx_rate));
        lines.push(format!("fee = {}", self.fee));
        if let Some(h) = self.max_height {
            lines.push(format!("max_height = {h}"));
        }
        if let Some(rc) = self.rate_change {
            lines.push(format!("rate_change = {}:{}", rc.height, rc.factor));
        }
        lines.push(format!("bootstrap = {}", self.bootstrap));
        lines.push(format!("genesis_message = {}", self.genesis_message));
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

/// Applies one `ChainParams` field given as text; `max_bits` accepts hex.
pub fn apply_param_override(params: &mut ChainParams, key: &str, value: &str) -> Result<(), ConfigError> {
    match key {
        "initial_subsidy" => params.initial_subsidy = num(key, value)?,
        "halving_interval" => params.halving_interval = num(key, value)?,
        "retarget_interval" => params.retarget_interval = num(key, value)?,
        "target_spacing" => params.target_spacing = num(key, value)?,
        "clamp_factor" => params.clamp_factor = num(key, value)?,
        "coinbase_maturity" => params.coinbase_maturity = num(key, value)?,
        "max_bits" => {
            let digits = value.trim_start_matches("0x");
            let bits = u32::from_str_radix(digits, 16).map_err(|_| bad(key, value))?;
            params.max_target = CompactTarget(bits).checked_expand().ok_or_else(|| bad(key, value))?;
        }
        _ => return Err(ConfigError::UnknownKey(key.to_string())),
    }
    Ok(())
}
