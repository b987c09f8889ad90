//! `<datadir>/minichain.conf`: flat `key = value` lines, `#` comments.

use std::fs;
use std::path::{Path, PathBuf};

use minichain::netsim::apply_param_override;
use minichain::ChainParams;

use crate::CliError;

pub const CONF_FILE: &str = "minichain.conf";

#[derive(Clone, Debug)]
pub struct CliConfig {
    pub datadir: PathBuf,
    pub params_name: String,
    pub params: ChainParams,
    pub seed: Option<u64>,
    pub json: bool,
}

impl CliConfig {
    /// Reads the config file if present. Flags are applied by the caller.
    pub fn load(datadir: &Path) -> Result<CliConfig, CliError> {
        let mut cfg = CliConfig {
            datadir: datadir.to_path_buf(),
            params_name: "simnet".into(),
            params: ChainParams::simnet(),
            seed: None,
            json: false,
        };
        let path = datadir.join(CONF_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(cfg),
            Err(e) => return Err(CliError::Io(format!("{}: {e}", path.display()))),
        };
        let mut overrides = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| CliError::User(format!("{CONF_FILE} line {}: expected key = value", n + 1)))?;
            match key {
                "params" => cfg.set_params(value)?,
                "seed" => {
                    cfg.seed =
                        Some(value.parse().map_err(|_| CliError::User(format!("{CONF_FILE}: bad seed {value}")))?)
                }
                "output" => {
                    cfg.json = match value {
                        "json" => true,
                        "text" => false,
                        _ => return Err(CliError::User(format!("{CONF_FILE}: output must be text or json"))),
                    }
                }
                _ => overrides.push((key.to_string(), value.to_string())),
            }
        }
        // Overrides apply on top of whichever named params the file selects.
        for (key, value) in overrides {
            apply_param_override(&mut cfg.params, &key, &value)
                .map_err(|e| CliError::User(format!("{CONF_FILE}: {e}")))?;
        }
        cfg.params.validate().map_err(|e| CliError::User(format!("{CONF_FILE}: {e}")))?;
        Ok(cfg)
    }

    pub fn set_params(&mut self, name: &str) -> Result<(), CliError> {
        self.params = ChainParams::by_name(name)
            .ok_or_else(|| CliError::User(format!("unknown params {name}; expected simnet or mainnet-like")))?;
        self.params_name = name.to_string();
        Ok(())
    }
}
