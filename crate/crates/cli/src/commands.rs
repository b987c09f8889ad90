use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use minichain::consensus::supply_schedule;
use minichain::model::GENESIS_MESSAGE;
use minichain::netsim::{self, sweep_summary, ScenarioConfig};
use minichain::script::script_for_address;
use minichain::storage::Store;
use minichain::wallet::{build_payment, channel_open, create_multisig, payee_refund_signature, sign_all, Channel};
use minichain::{format_amount, parse_amount, Address, Digest32, PublicKey};
use serde_json::{json, Value};

use crate::config::{CliConfig, CONF_FILE};
use crate::node::{Node, DEFAULT_LABEL};
use crate::{ChannelCommand, ChannelOpen, Cli, CliError, Command};

/// Leading zero bits of the genesis target above which `init` would grind for too long.
const MAX_INIT_DIFFICULTY_BITS: u32 = 20;

struct Output {
    lines: Vec<String>,
    json: Value,
}

impl Output {
    fn new(lines: Vec<String>, json: Value) -> Self {
        Output { lines, json }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(&cli.datadir)?;
    cfg.json |= cli.json;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let out = match cli.command {
        Command::Init { message, params } => init(&mut cfg, message, params)?,
        Command::Address { label } => address(&cfg, &label)?,
        Command::Balance => balance(&cfg)?,
        Command::Mine { blocks, to } => mine(&cfg, blocks, to)?,
        Command::Send { to, amount, fee } => send(&cfg, &to, &amount, &fee)?,
        Command::Multisig { m, keys } => multisig(&cfg, m, &keys)?,
        Command::Channel(c) => channel(&cfg, c)?,
        Command::Explore { query } => explore(&cfg, &query)?,
        Command::Supply { params } => supply(&mut cfg, params)?,
        Command::Simulate { scenario, sweep } => simulate(&cfg, &scenario, sweep)?,
        Command::Verify => verify(&cfg)?,
    };
    let text = if cfg.json {
        serde_json::to_string_pretty(&out.json).expect("json values serialize") + "\n"
    } else {
        out.lines.iter().map(|l| format!("{l}\n")).collect()
    };
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        // A closed reader (e.g. `| head`) is not a failure of the command.
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn amount(text: &str, what: &str) -> Result<u64, CliError> {
    parse_amount(text).ok_or_else(|| CliError::User(format!("bad {what} {text:?}; expected a coin amount like 1.5")))
}

fn parse_address(text: &str) -> Result<Address, CliError> {
    text.parse().map_err(|e| CliError::User(format!("bad address {text}: {e}")))
}

fn init(cfg: &mut CliConfig, message: Option<String>, params: Option<String>) -> Result<Output, CliError> {
    if let Some(name) = &params {
        cfg.set_params(name)?;
    }
    if cfg.params.max_target.leading_zeros() > MAX_INIT_DIFFICULTY_BITS {
        return Err(CliError::User(format!(
            "params {} have a genesis target too hard to mine interactively; use simnet",
            cfg.params_name
        )));
    }
    if Node::is_initialized(&cfg.datadir) {
        return Err(CliError::User(format!("{} already holds a chain", cfg.datadir.display())));
    }
    fs::create_dir_all(&cfg.datadir)?;
    let conf = cfg.datadir.join(CONF_FILE);
    if !conf.exists() {
        fs::write(&conf, format!("params = {}\n", cfg.params_name))?;
    }
    let seed = cfg.seed.unwrap_or(0);
    let message = message.unwrap_or_else(|| GENESIS_MESSAGE.to_string());
    let genesis = Node::init(&cfg.datadir, &cfg.params, &message, seed)?;
    let node = Node::open(&cfg.datadir, &cfg.params)?;
    let addr = node.wallet.address(DEFAULT_LABEL).expect("init creates the default key").to_string();
    let hash = genesis.hash().to_hex();
    Ok(Output::new(
        vec![
            format!("initialized {}", cfg.datadir.display()),
            format!("params: {}", cfg.params_name),
            format!("genesis: {hash}"),
            format!("address: {addr}"),
        ],
        json!({ "datadir": cfg.datadir.display().to_string(), "params": cfg.params_name, "genesis": hash, "address": addr }),
    ))
}

fn address(cfg: &CliConfig, label: &str) -> Result<Output, CliError> {
    let mut node = Node::open(&cfg.datadir, &cfg.params)?;
    let pk = node.ensure_key(label)?;
    let addr = node.wallet.address(label).expect("key exists").to_string();
    Ok(Output::new(vec![addr.clone()], json!({ "label": label, "address": addr, "pubkey": pk.to_hex() })))
}

fn balance(cfg: &CliConfig) -> Result<Output, CliError> {
    let node = Node::open(&cfg.datadir, &cfg.params)?;
    let state = node.chain.state();
    let total = node.wallet.balance(state);
    let spendable: u64 =
        node.wallet.spendable(state, &node.pending_spends()).iter().map(|o| o.entry.output.amount).sum();
    Ok(Output::new(
        vec![
            format!("balance: {}", format_amount(total)),
            format!("spendable: {}", format_amount(spendable)),
            format!("height: {}", node.chain.height()),
            format!("pending transactions: {}", node.mempool.len()),
        ],
        json!({
            "balance": format_amount(total),
            "spendable": format_amount(spendable),
            "height": node.chain.height(),
            "pending": node.mempool.len(),
        }),
    ))
}

fn mine(cfg: &CliConfig, blocks: u64, to: Option<String>) -> Result<Output, CliError> {
    if blocks == 0 {
        return Err(CliError::User("--blocks must be at least 1".into()));
    }
    let mut node = Node::open(&cfg.datadir, &cfg.params)?;
    let payout = match to {
        Some(text) => {
            let addr = parse_address(&text)?;
            script_for_address(&addr).ok_or_else(|| CliError::User(format!("cannot pay to address {text}")))?
        }
        None => {
            let addr =
                node.wallet.address(DEFAULT_LABEL).ok_or_else(|| CliError::User("wallet has no default key".into()))?;
            script_for_address(&addr).expect("wallet addresses are payable")
        }
    };
    let mut lines = Vec::new();
    let mut mined = Vec::new();
    for _ in 0..blocks {
        let block = node.mine_one(payout.clone())?;
        let height = node.chain.height();
        let hash = block.hash().to_hex();
        lines.push(format!("{height} {hash} txs={}", block.transactions.len()));
        mined.push(json!({ "height": height, "hash": hash, "transactions": block.transactions.len() }));
    }
    Ok(Output::new(lines, json!({ "blocks": mined, "height": node.chain.height(), "tip": node.chain.tip().to_hex() })))
}

fn send(cfg: &CliConfig, to: &str, amount_text: &str, fee_text: &str) -> Result<Output, CliError> {
    let mut node = Node::open(&cfg.datadir, &cfg.params)?;
    let dest = parse_address(to)?;
    let value = amount(amount_text, "amount")?;
    let fee = amount(fee_text, "fee")?;
    let state = node.chain.state();
    let tx = build_payment(&node.wallet, state, &dest, value, fee, &node.pending_spends())
        .map_err(|e| CliError::User(e.to_string()))?;
    let tx = sign_all(&node.wallet, &tx, state).map_err(|e| CliError::User(e.to_string()))?;
    let txid = tx.txid().to_hex();
    let fee = node.submit(tx)?;
    Ok(Output::new(
        vec![format!("txid: {txid}"), format!("fee: {}", format_amount(fee))],
        json!({ "txid": txid, "amount": format_amount(value), "fee": format_amount(fee), "to": to }),
    ))
}

fn multisig(cfg: &CliConfig, m: usize, keys: &[String]) -> Result<Output, CliError> {
    let mut node = Node::open(&cfg.datadir, &cfg.params)?;
    let mut pubkeys = Vec::with_capacity(keys.len());
    for k in keys {
        let k = k.trim();
        let pk = if k.len() == 66 && k.bytes().all(|b| b.is_ascii_hexdigit()) {
            PublicKey::from_hex(k).map_err(|e| CliError::User(format!("bad public key {k}: {e}")))?
        } else {
            node.wallet
                .key(k)
                .map(|kp| kp.public_key())
                .ok_or_else(|| CliError::NotFound(format!("no wallet key {k}")))?
        };
        pubkeys.push(pk);
    }
    let (redeem, addr) = create_multisig(m, &pubkeys).map_err(|e| CliError::User(e.to_string()))?;
    node.watch_redeem(&redeem)?;
    let addr = addr.to_string();
    Ok(Output::new(
        vec![format!("address: {addr}"), format!("redeem script: {}", redeem.to_hex())],
        json!({ "address": addr, "redeem_script": redeem.to_hex(), "m": m, "n": pubkeys.len() }),
    ))
}

fn channel_json(id: &str, c: &Channel) -> Value {
    json!({
        "id": id,
        "state": format!("{:?}", c.state()).to_lowercase(),
        "capacity": format_amount(c.capacity()),
        "payee_amount": format_amount(c.payee_amount()),
        "funder_amount": format_amount(c.funder_amount()),
        "commitments": c.commitment_index(),
        "refund_time": c.refund_time(),
    })
}

fn channel_line(id: &str, c: &Channel) -> String {
    format!(
        "{id} {:?} capacity={} payee={} funder={} refund_time={}",
        c.state(),
        format_amount(c.capacity()),
        format_amount(c.payee_amount()),
        format_amount(c.funder_amount()),
        c.refund_time()
    )
}

fn channel(cfg: &CliConfig, cmd: ChannelCommand) -> Result<Output, CliError> {
    let mut node = Node::open(&cfg.datadir, &cfg.params)?;
    match cmd {
        ChannelCommand::Open(args) => channel_open_cmd(&mut node, args),
        ChannelCommand::Pay { id, amount: text } => {
            let increment = amount(&text, "amount")?;
            let (id, mut c) = node.channel(&id)?;
            let funder =
                node.label_for(&c.funder_key()).ok_or_else(|| CliError::User("funder key not in wallet".into()))?;
            c.pay(&node.wallet, &funder, increment).map_err(|e| CliError::User(e.to_string()))?;
            node.save_channel(&c)?;
            Ok(Output::new(vec![channel_line(&id, &c)], channel_json(&id, &c)))
        }
        ChannelCommand::Close { id } => {
            let (id, c) = node.channel(&id)?;
            let payee =
                node.label_for(&c.payee_key()).ok_or_else(|| CliError::User("payee key not in wallet".into()))?;
            let tx = c.close(&node.wallet, &payee).map_err(|e| CliError::User(e.to_string()))?;
            let txid = tx.txid().to_hex();
            node.submit(tx)?;
            let mut j = channel_json(&id, &c);
            j["close_txid"] = json!(txid);
            Ok(Output::new(vec![channel_line(&id, &c), format!("close txid: {txid}")], j))
        }
        ChannelCommand::Refund { id } => {
            let (id, c) = node.channel(&id)?;
            let tx = c.refund_tx().clone();
            let txid = tx.txid().to_hex();
            node.submit(tx).map_err(|e| match e {
                CliError::User(msg) => CliError::User(format!(
                    "{msg} (refund valid from time {}, next block time {})",
                    c.refund_time(),
                    node.next_time()
                )),
                other => other,
            })?;
            let mut j = channel_json(&id, &c);
            j["refund_txid"] = json!(txid);
            Ok(Output::new(vec![channel_line(&id, &c), format!("refund txid: {txid}")], j))
        }
        ChannelCommand::List => {
            let all = node.channels()?;
            let lines = all.iter().map(|(id, c)| channel_line(id, c)).collect();
            let json = all.iter().map(|(id, c)| channel_json(id, c)).collect::<Vec<_>>();
            Ok(Output::new(lines, json!(json)))
        }
    }
}

fn channel_open_cmd(node: &mut Node, args: ChannelOpen) -> Result<Output, CliError> {
    let capacity = amount(&args.capacity, "capacity")?;
    let fee = amount(&args.fee, "fee")?;
    if node.wallet.key(&args.from).is_none() {
        return Err(CliError::NotFound(format!("no wallet key {}", args.from)));
    }
    let payee_pk = node.ensure_key(&args.payee)?;
    let now = node.next_time();
    let refund_time = now
        .checked_add(args.refund_after)
        .filter(|_| args.refund_after > 0)
        .ok_or_else(|| CliError::User("--refund-after must be a positive number of seconds".into()))?;
    let exclude: HashSet<_> = node.pending_spends();
    let (c, funding) = channel_open(
        &node.wallet,
        &args.from,
        payee_pk,
        capacity,
        refund_time,
        fee,
        node.chain.state(),
        now,
        &exclude,
        |refund, redeem| payee_refund_signature(&node.wallet, &args.payee, refund, redeem),
    )
    .map_err(|e| CliError::User(e.to_string()))?;
    node.submit(funding)?;
    let id = node.save_channel(&c)?;
    Ok(Output::new(vec![format!("channel: {id}"), channel_line(&id, &c)], channel_json(&id, &c)))
}

/// Resolves a height, a full hash or a unique hash prefix.
fn resolve_block(node: &Node, query: &str) -> Result<Digest32, CliError> {
    let q = query.trim().to_ascii_lowercase();
    let missing = || CliError::NotFound(format!("no block matches {query}"));
    if !q.is_empty() && q.len() < 20 && q.bytes().all(|b| b.is_ascii_digit()) {
        let height: u64 = q.parse().map_err(|_| missing())?;
        return node.store.hash_at_height(height).ok_or_else(missing);
    }
    if q.is_empty() || !q.bytes().all(|b| b.is_ascii_hexdigit()) || q.len() > 64 {
        return Err(missing());
    }
    if q.len() == 64 {
        return Digest32::from_hex(&q).ok_or_else(missing);
    }
    let prefix = format!("b:{q}").into_bytes();
    let hits: Vec<_> = node.store.kv().scan_prefix(&prefix).map(|(k, _)| k[2..].to_vec()).collect();
    match hits.as_slice() {
        [one] => Digest32::from_hex(&String::from_utf8_lossy(one)).ok_or_else(missing),
        [] => Err(missing()),
        _ => Err(CliError::User(format!("hash prefix {query} is ambiguous"))),
    }
}

fn explore(cfg: &CliConfig, query: &str) -> Result<Output, CliError> {
    let mut node = Node::open(&cfg.datadir, &cfg.params)?;
    let hash = resolve_block(&node, query)?;
    let info = node.store.explorer_info(&hash)?;
    let none = || "none".to_string();
    let lines = vec![
        format!("BlockHash: {}", info.block_hash),
        format!("height: {}", info.height),
        format!("next block: {}", info.next_block.clone().unwrap_or_else(none)),
        format!("size in bytes: {}", info.size_bytes),
        format!("prev block: {}", info.prev_block.clone().unwrap_or_else(none)),
        format!("transactions: {}", info.tx_count),
    ];
    Ok(Output::new(lines, serde_json::to_value(&info).expect("explorer info serializes")))
}

fn supply(cfg: &mut CliConfig, params: Option<String>) -> Result<Output, CliError> {
    if let Some(name) = &params {
        cfg.set_params(name)?;
    }
    let rows = supply_schedule(&cfg.params);
    let total = rows.last().map_or(0, |r| r.running_total);
    let cap = minichain::MAX_MONEY;
    let mut lines: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "epoch {:>2} heights {}-{} subsidy {} epoch total {} running total {}",
                r.epoch,
                r.first_height,
                r.last_height,
                format_amount(r.subsidy),
                format_amount(r.epoch_total),
                format_amount(r.running_total)
            )
        })
        .collect();
    let relation = if total < cap {
        "<"
    } else if total == cap {
        "="
    } else {
        ">"
    };
    lines.push(format!("total supply {} {relation} {}", format_amount(total), format_amount(cap)));
    let epochs: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "epoch": r.epoch,
                "first_height": r.first_height,
                "last_height": r.last_height,
                "subsidy": format_amount(r.subsidy),
                "epoch_total": format_amount(r.epoch_total),
                "running_total": format_amount(r.running_total),
            })
        })
        .collect();
    Ok(Output::new(
        lines,
        json!({ "params": cfg.params_name, "epochs": epochs, "total": format_amount(total), "cap": format_amount(cap) }),
    ))
}

fn simulate(cfg: &CliConfig, path: &Path, sweep: Option<u64>) -> Result<Output, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        let msg = format!("{}: {e}", path.display());
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::NotFound(msg)
        } else {
            CliError::Io(msg)
        }
    })?;
    let mut scenario = ScenarioConfig::parse(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
    if let Some(seed) = cfg.seed {
        scenario.seed = seed;
    }
    let bad = |e: netsim::ConfigError| CliError::User(format!("{}: {e}", path.display()));
    match sweep {
        None => {
            let report = netsim::run(&scenario).map_err(bad)?;
            Ok(Output::new(vec![report.to_text().trim_end().to_string()], report.to_json()))
        }
        Some(0) => Err(CliError::User("--sweep must be at least 1".into())),
        Some(n) => {
            let reports = netsim::sweep(&scenario, n).map_err(bad)?;
            let json = reports.iter().map(|r| r.to_json()).collect::<Vec<_>>();
            Ok(Output::new(vec![sweep_summary(&reports).trim_end().to_string()], json!(json)))
        }
    }
}

fn verify(cfg: &CliConfig) -> Result<Output, CliError> {
    // Reads the store as found: opening a node would repair the index first.
    if !Node::is_initialized(&cfg.datadir) {
        return Err(CliError::User(format!("{} holds no chain", cfg.datadir.display())));
    }
    let (mut store, recovery) = Store::open(&cfg.datadir, cfg.params.network_magic)?;
    if recovery.truncated_bytes > 0 {
        return Err(CliError::User(format!("discarded {} bytes of a torn block record", recovery.truncated_bytes)));
    }
    let height =
        store.verify_active_chain(&cfg.params).map_err(|f| CliError::User(format!("verification failed at {f}")))?;
    let tip = store.tip().expect("verified chains have a tip").to_hex();
    Ok(Output::new(
        vec![format!("verified {} blocks up to height {height}, tip {tip}", height + 1)],
        json!({ "verified_blocks": height + 1, "height": height, "tip": tip, "ok": true }),
    ))
}
