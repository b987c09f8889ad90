//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::{HashMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::time::{Duration, Instant};

use common::*;
use minichain::consensus::{
    block_subsidy, chain_work, supply_limit, supply_schedule, AcceptStatus, Chain, CompactTarget, ConsensusError,
};
use minichain::model::OutPoint;
use minichain::netsim::{sweep, Adversary, RateChange, ScenarioConfig, Simulation};
use minichain::script::{eval, make_multisig, make_p2sh, p2sh_address, ExecContext, ScriptFailure};
use minichain::storage::{Store, BLOCKS_FILE, RECORD_HEADER};
use minichain::wallet::{channel_open, payee_refund_signature, sign_all, ChannelState, Wallet};
use minichain::{ChainParams, Digest32, Script, Transaction, TxInput, TxOutput, COIN, MAX_MONEY};
use primitive_types::U256;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s as f64, format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()))
}

fn supply_cap() -> Outcome {
    let start = Instant::now();
    let params = ChainParams::mainnet_like();
    let computed = supply_limit(&params);
    let epochs = supply_schedule(&params).len();
    let elapsed = start.elapsed();

    // Brute force: every epoch's subsidy, halved by repeated integer division.
    let (mut total, mut subsidy, mut oracle_epochs) = (0u64, 50 * COIN, 0);
    while subsidy > 0 {
        total += subsidy * 210_000;
        subsidy /= 2;
        oracle_epochs += 1;
    }
    check(computed == 2_099_999_997_690_000, format!("computed {computed}"))?;
    check(computed < MAX_MONEY, "not below 21 million coins")?;
    check(
        computed == total && oracle_epochs == 33 && epochs == 33,
        format!("oracle {total} over {oracle_epochs} epochs"),
    )?;
    within(elapsed, 1)?;
    Ok(format!("{computed} units over {epochs} epochs in {:.3} ms", elapsed.as_secs_f64() * 1e3))
}

fn halving() -> Outcome {
    let params = ChainParams::mainnet_like();
    let mut expected = 50 * COIN;
    for k in 0..=40u64 {
        let got = block_subsidy(k * 210_000, &params);
        check(got == expected, format!("k={k}: {got} != {expected}"))?;
        check(block_subsidy(k * 210_000 + 209_999, &params) == expected, format!("k={k}: not constant in epoch"))?;
        expected /= 2;
    }
    Ok("41 epochs match repeated halving".into())
}

fn retarget() -> Outcome {
    let start = Instant::now();
    let base = ScenarioConfig {
        nodes: 1,
        hash_rates: vec![4.0],
        latency_ms: 0,
        duration_s: 100_000,
        max_height: Some(128),
        bootstrap: false,
        ..ScenarioConfig::default()
    };
    let seeds: Vec<u64> = (1..=10).collect();
    let target_of = |report: &minichain::netsim::SimReport, h: u64| -> f64 {
        let r = report.retargets.iter().find(|r| r.height == h).expect("retarget height reached");
        to_f64(CompactTarget(r.bits).expand())
    };

    let mut span_ms = 0u64;
    let mut per_seed = Vec::new();
    let steady =
        sweep(&ScenarioConfig { seed: seeds[0], ..base.clone() }, seeds.len() as u64).map_err(|e| e.to_string())?;
    for r in &steady {
        check(r.block_found_ms.len() > 128, format!("seed {} reached only {}", r.seed, r.block_found_ms.len() - 1))?;
        let s = r.block_found_ms[128] - r.block_found_ms[64];
        span_ms += s;
        per_seed.push(format!("{:.2}", s as f64 / 64_000.0));
    }
    let mean_s = span_ms as f64 / (64.0 * seeds.len() as f64) / 1000.0;

    let doubled = ScenarioConfig { rate_change: Some(RateChange { height: 64, factor: 2.0 }), ..base.clone() };
    let shifted =
        sweep(&ScenarioConfig { seed: seeds[0], ..doubled }, seeds.len() as u64).map_err(|e| e.to_string())?;
    let mut ratios = Vec::new();
    for r in &shifted {
        let pre = (target_of(r, 32) + target_of(r, 64)) / 2.0;
        let post = (target_of(r, 96) + target_of(r, 128)) / 2.0;
        ratios.push(pre / post);
    }
    let ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let elapsed = start.elapsed();
    let detail = format!(
        "mean interval {mean_s:.3} s (per seed {}), difficulty ratio {ratio:.2} (per seed {}), {:.1} s",
        per_seed.join(" "),
        ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(" "),
        elapsed.as_secs_f64()
    );
    check((0.8..=1.2).contains(&mean_s), format!("mean interval out of range: {detail}"))?;
    check((1.5..=2.5).contains(&ratio), format!("ratio out of range: {detail}"))?;
    within(elapsed, 30)?;
    Ok(detail)
}

fn to_f64(v: U256) -> f64 {
    v.0.iter().rev().fold(0.0, |acc, limb| acc * 18_446_744_073_709_551_616.0 + *limb as f64)
}

/// Twenty blocks on genesis, each carrying a payment once coins mature.
fn twenty_block_chain(params: &ChainParams) -> Chain {
    let miner = key("miner");
    let w = wallet(&["miner"]);
    let bob = key("bob");
    let mut chain = chain_with(params, 0, &miner);
    for _ in 0..20 {
        let txs = if w.spendable(chain.state(), &HashSet::new()).is_empty() {
            vec![]
        } else {
            vec![pay(&w, chain.state(), &bob, COIN, 1000)]
        };
        confirm(&mut chain, txs, &miner);
    }
    chain
}

fn store_active(dir: &std::path::Path, chain: &Chain, magic: u32) -> Store {
    let (mut store, _) = Store::open(dir, magic).unwrap();
    for (height, block) in chain.active_blocks().enumerate() {
        let loc = store.append_block(block).unwrap();
        let prev = (height > 0).then_some(block.header.prev_hash);
        store.index_block(&block.hash(), height as u64, loc, prev, true).unwrap();
    }
    store
}

fn tamper() -> Outcome {
    let params = params();
    let chain = twenty_block_chain(&params);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut store = store_active(dir.path(), &chain, params.network_magic);
    check(store.verify_active_chain(&params) == Ok(20), "untouched chain does not verify")?;

    let path = dir.path().join(BLOCKS_FILE);
    let original = fs::read(&path).map_err(|e| e.to_string())?;
    let locs: Vec<_> = (0..=20).map(|h| store.location(&chain.state().hash_at(h).unwrap()).unwrap()).collect();
    let mut file = OpenOptions::new().write(true).open(&path).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut detected = 0;
    for i in 0..500 {
        let height = rng.gen_range(0..=20usize);
        let loc = locs[height];
        let pos = loc.offset + rng.gen_range(0..RECORD_HEADER + u64::from(loc.length));
        let flip: u8 = rng.gen_range(1..=255);
        let byte = original[pos as usize];
        file.seek(SeekFrom::Start(pos)).unwrap();
        file.write_all(&[byte ^ flip]).unwrap();
        match store.verify_active_chain(&params) {
            Err(f) if f.height <= height as u64 => detected += 1,
            other => return Err(format!("mutation {i} at height {height}, byte {pos}: {other:?}")),
        }
        file.seek(SeekFrom::Start(pos)).unwrap();
        file.write_all(&[byte]).unwrap();
    }
    check(store.verify_active_chain(&params) == Ok(20), "restored chain does not verify")?;
    Ok(format!("{detected}/500 mutations detected at or before their height"))
}

fn double_spend() -> Outcome {
    let start = Instant::now();
    let seeds = 200u64;
    let mut rates = Vec::new();
    for z in 0..=3u64 {
        let cfg = ScenarioConfig {
            seed: 1,
            nodes: 4,
            hash_rates: vec![0.225; 4],
            latency_ms: 50,
            duration_s: 30,
            adversary: Adversary::DoubleSpend { confirmations: z, attacker_rate: 0.1, give_up: 6 },
            ..ScenarioConfig::default()
        };
        let reports = sweep(&cfg, seeds).map_err(|e| e.to_string())?;
        let mut wins = 0;
        for r in &reports {
            let a = r.attack().ok_or("missing attack outcome")?;
            check(
                a.payment_confirmed != a.conflict_confirmed,
                format!("z={z} seed {}: confirmed {}", r.seed, a.confirmed_spender()),
            )?;
            wins += a.success as u64;
        }
        rates.push(wins as f64 / seeds as f64);
    }
    let elapsed = start.elapsed();
    let shown = rates.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ");
    check(rates.windows(2).all(|w| w[1] <= w[0]), format!("success by z not monotone: {shown}"))?;
    within(elapsed, 60)?;
    Ok(format!("exactly one spend confirmed in 800 runs; success rate z=0..3: {shown}; {:.1} s", elapsed.as_secs_f64()))
}

/// True when the signatures, by signer index, can be matched to keys in
/// order with each key used at most once. Searches every assignment.
fn oracle_match(sigs: &[usize], n: usize) -> bool {
    fn go(sigs: &[usize], n: usize, from_key: usize) -> bool {
        let Some((&first, rest)) = sigs.split_first() else { return true };
        (from_key..n).any(|k| k == first && go(rest, n, k + 1))
    }
    go(sigs, n, 0)
}

fn spend_context() -> Transaction {
    Transaction {
        version: 1,
        lock_time: 0,
        inputs: vec![TxInput { prevout: OutPoint::new(Digest32([3; 32]), 0), script_sig: Script::default() }],
        outputs: vec![TxOutput { amount: 1, script_pubkey: Script::default() }],
    }
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let x = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

fn multisig_table() -> Outcome {
    let tx = spend_context();
    let ctx = ExecContext::new(&tx, 0).unwrap();
    let signers: Vec<_> = ["m1", "m2", "m3", "outsider"].iter().map(|s| key(s)).collect();
    let sigs: Vec<Vec<u8>> = signers.iter().map(|k| k.sign(ctx.digest()).0).collect();
    let mut cases = 0;
    let mut accepted = 0;
    for n in 1..=3usize {
        let pks: Vec<_> = signers[..n].iter().map(|k| k.public_key()).collect();
        for m in 1..=n {
            let lock = make_multisig(m, &pks).unwrap();
            // Subsets of the n keyholders plus an outsider.
            let pool: Vec<usize> = (0..n).chain([3]).collect();
            for mask in 0u32..(1 << pool.len()) {
                let subset: Vec<usize> =
                    pool.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, s)| *s).collect();
                for order in permutations(&subset) {
                    let mut b = Script::builder();
                    for s in &order {
                        b = b.push_data(&sigs[*s]);
                    }
                    let got = eval(&b.into_script(), &lock, &ctx).is_ok();
                    let popped = if order.len() >= m { &order[order.len() - m..] } else { &[][..] };
                    let want = order.len() >= m && oracle_match(popped, n);
                    check(got == want, format!("{m}-of-{n} signers {order:?}: eval {got}, oracle {want}"))?;
                    cases += 1;
                    accepted += got as usize;
                }
            }
        }
    }
    Ok(format!("{cases} presentations agree with the matcher ({accepted} accepted)"))
}

fn p2sh() -> Outcome {
    let tx = spend_context();
    let ctx = ExecContext::new(&tx, 0).unwrap();
    let (a, b) = (key("p1"), key("p2"));
    let good = make_multisig(2, &[a.public_key(), b.public_key()]).unwrap();
    let falsy = Script::builder().push_data(&[]).into_script();
    let other_true = make_multisig(1, &[a.public_key()]).unwrap();
    let sa = a.sign(ctx.digest()).0;
    let sb = b.sign(ctx.digest()).0;
    let unlock = |redeem: &Script, sigs: &[&[u8]]| {
        let mut s = Script::builder();
        for sig in sigs {
            s = s.push_data(sig);
        }
        s.push_data(redeem.as_bytes()).into_script()
    };
    let lock_good = make_p2sh(&minichain::crypto::hash20(good.as_bytes()));
    let lock_falsy = make_p2sh(&minichain::crypto::hash20(falsy.as_bytes()));
    let results = [
        ("match,true", eval(&unlock(&good, &[&sa, &sb]), &lock_good, &ctx), true),
        ("match,false", eval(&unlock(&falsy, &[]), &lock_falsy, &ctx), false),
        ("mismatch,true", eval(&unlock(&other_true, &[&sa]), &lock_good, &ctx), false),
        ("mismatch,false", eval(&unlock(&falsy, &[]), &lock_good, &ctx), false),
    ];
    for (name, got, want) in &results {
        check(got.is_ok() == *want, format!("{name}: {got:?}"))?;
    }
    check(results[2].1 == Err(ScriptFailure::RedeemMismatch), "mismatch not reported as RedeemMismatch")?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let len = rng.gen_range(1..=520);
        let redeem = Script::new((0..len).map(|_| rng.gen()).collect());
        let text = p2sh_address(&redeem).map_err(|e| e.to_string())?.to_string();
        check(text.len() == 34 && text.starts_with('3'), format!("address {text}"))?;
    }
    Ok("only match×true accepted; 1000 P2SH addresses are 34 chars starting with 3".into())
}

fn locktime_and_channels() -> Outcome {
    let params = params();
    let miner = key("miner");
    let base = chain_with(&params, 3, &miner);
    let w = wallet(&["miner"]);
    let lock_at = 40u64;
    let mut tx = pay(&w, base.state(), &key("bob"), COIN, 0);
    tx.lock_time = lock_at;
    let tx = sign_all(&w, &tx, base.state()).unwrap();
    let tip_time = base.state().tip_header().time;
    for t in 0..lock_at + 10 {
        let h = base.height() + 1;
        let ok = base.state().check_tx_inputs(&tx, h, t).is_ok();
        check(ok == (t >= lock_at), format!("check at time {t}: {ok}"))?;
        if t >= tip_time {
            let mut c = base.clone();
            let r = confirm_at(&mut c, vec![tx.clone()], &miner, t);
            check(r.is_ok() == (t >= lock_at), format!("block at time {t}: {:?}", r.err()))?;
        }
    }

    // Channel: open, five payments, close.
    let (chain, alice) = funded_alice(&params);
    let bob = wallet(&["bob"]);
    let mut steps = 0;
    let run = |close_first: bool| -> Result<(), String> {
        let mut chain = chain.clone();
        let now = chain.state().tip_header().time;
        let capacity = 10 * COIN;
        let fee = 1000;
        let refund_time = now + 30;
        let (mut channel, funding) = channel_open(
            &alice,
            "alice",
            key("bob").public_key(),
            capacity,
            refund_time,
            fee,
            chain.state(),
            now,
            &HashSet::new(),
            |r, s| payee_refund_signature(&bob, "bob", r, s),
        )
        .map_err(|e| e.to_string())?;
        check(channel.is_conserved(), "not conserved after open")?;
        confirm(&mut chain, vec![funding], &miner);
        let mut t = chain.state().tip_header().time;
        for amount in [COIN, 2 * COIN, 1234, COIN / 2, 5] {
            channel.pay(&alice, "alice", amount).map_err(|e| e.to_string())?;
            check(channel.is_conserved(), "not conserved after payment")?;
            let c = channel.latest_commitment().unwrap();
            let total: u64 = c.outputs.iter().map(|o| o.amount).sum();
            check(total + fee == capacity, "commitment outputs do not conserve capacity")?;
        }
        check(channel.commitment_index() == 5, "five commitments expected")?;
        let refund = channel.refund_tx().clone();
        if close_first {
            let close = channel.close(&bob, "bob").map_err(|e| e.to_string())?;
            t += 1;
            confirm_at(&mut chain, vec![close], &miner, t).map_err(|e| e.to_string())?;
            check(channel.sync(chain.state()) == ChannelState::Closed, "channel not closed")?;
            let paid: u64 = bob.balance(chain.state());
            check(paid == channel.payee_amount(), "payee balance differs from channel")?;
            let r = confirm_at(&mut chain, vec![refund], &miner, refund_time + 1);
            check(matches!(r, Err(ConsensusError::MissingUtxo(_))), format!("refund after close: {r:?}"))?;
        } else {
            let early = confirm_at(&mut chain.clone(), vec![refund.clone()], &miner, refund_time - 1);
            check(matches!(early, Err(ConsensusError::NonFinal(_))), format!("early refund: {early:?}"))?;
            confirm_at(&mut chain, vec![refund], &miner, refund_time).map_err(|e| e.to_string())?;
            check(channel.sync(chain.state()) == ChannelState::Refunded, "channel not refunded")?;
        }
        Ok(())
    };
    run(true)?;
    steps += 1;
    run(false)?;
    steps += 1;
    Ok(format!("lock time {lock_at} boundary exact; {steps} channel lifecycles conserve capacity"))
}

fn funded_alice(params: &ChainParams) -> (Chain, Wallet) {
    let miner = key("miner");
    let mut chain = chain_with(params, 3, &miner);
    let w = wallet(&["miner"]);
    let tx = pay(&w, chain.state(), &key("alice"), 40 * COIN, 0);
    confirm(&mut chain, vec![tx], &miner);
    (chain, wallet(&["alice"]))
}

/// UTXO set rebuilt by applying transactions directly, without validation.
fn replay_oracle(chain: &Chain) -> HashMap<OutPoint, (u64, Vec<u8>)> {
    let mut set = HashMap::new();
    for block in chain.active_blocks() {
        for tx in &block.transactions {
            if !tx.is_coinbase() {
                for i in &tx.inputs {
                    set.remove(&i.prevout);
                }
            }
            let id = tx.txid();
            for (n, o) in tx.outputs.iter().enumerate() {
                set.insert(OutPoint::new(id, n as u32), (o.amount, o.script_pubkey.as_bytes().to_vec()));
            }
        }
    }
    set
}

fn state_as_map(chain: &Chain) -> HashMap<OutPoint, (u64, Vec<u8>)> {
    chain
        .state()
        .utxos()
        .iter()
        .map(|(op, e)| (*op, (e.output.amount, e.output.script_pubkey.as_bytes().to_vec())))
        .collect()
}

fn random_txs(rng: &mut ChaCha8Rng, chain: &Chain, w: &Wallet, targets: &[minichain::KeyPair]) -> Vec<Transaction> {
    let mut used = HashSet::new();
    let mut txs = Vec::new();
    for _ in 0..rng.gen_range(0..=3) {
        let mut coins = w.spendable(chain.state(), &used);
        coins.retain(|c| c.entry.output.amount > 1000);
        let Some(coin) = coins.choose(rng) else { break };
        let amount = rng.gen_range(1..=coin.entry.output.amount / 2);
        let to = &targets[rng.gen_range(0..targets.len())];
        let tx = Transaction {
            version: 1,
            lock_time: 0,
            inputs: vec![TxInput { prevout: coin.outpoint, script_sig: Script::default() }],
            outputs: vec![
                TxOutput { amount, script_pubkey: minichain::script::make_p2pkh(&to.public_key().hash()) },
                TxOutput {
                    amount: coin.entry.output.amount - amount - 100,
                    script_pubkey: coin.entry.output.script_pubkey.clone(),
                },
            ],
        };
        used.insert(coin.outpoint);
        txs.push(sign_all(w, &tx, chain.state()).unwrap());
    }
    txs
}

fn fork_choice() -> Outcome {
    let params = params();
    let labels = ["k0", "k1", "k2", "k3"];
    let w = wallet(&labels);
    let keys: Vec<_> = labels.iter().map(|l| key(l)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(12);

    // Connect then disconnect each of 1000 random blocks.
    let mut chain = chain_with(&params, 0, &keys[0]);
    for i in 0..1000 {
        let txs = random_txs(&mut rng, &chain, &w, &keys);
        let payee = &keys[rng.gen_range(0..keys.len())];
        let block = next_block(chain.state(), txs, payee, b"");
        let mut s = chain.state().clone();
        let before = s.state_digest();
        let utxos = s.utxos().clone();
        s.validate_and_connect(&block, block.header.time).map_err(|e| format!("block {i}: {e}"))?;
        s.disconnect_tip().map_err(|e| e.to_string())?;
        check(s.state_digest() == before && *s.utxos() == utxos, format!("block {i}: disconnect is not an inverse"))?;
        let now = block.header.time;
        chain.accept_block(block, now).map_err(|e| e.to_string())?;
    }

    // Random forks: the heavier branch wins, ties keep the first seen.
    let mut reorgs = 0;
    let mut ties = 0;
    for trial in 0..60 {
        let base_len = rng.gen_range(2..8);
        let base = chain_with(&params, base_len, &keys[0]);
        let (mut main, mut rival) = (base.clone(), base.clone());
        let (la, lb) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let mut first = Vec::new();
        for _ in 0..la {
            let txs = random_txs(&mut rng, &main, &w, &keys);
            first.push(confirm(&mut main, txs, &keys[1]));
        }
        let mut second = Vec::new();
        for _ in 0..lb {
            let txs = random_txs(&mut rng, &rival, &w, &keys);
            second.push(confirm(&mut rival, txs, &keys[2]));
        }
        let work = |blocks: &[minichain::Block]| {
            blocks.iter().fold(U256::zero(), |acc, b| acc + chain_work(CompactTarget(b.header.bits).expand()).unwrap())
        };
        let mut node = base.clone();
        for b in &first {
            node.accept_block(b.clone(), 1 << 40).map_err(|e| e.to_string())?;
        }
        let mut switched = false;
        for b in &second {
            let out = node.accept_block(b.clone(), 1 << 40).map_err(|e| e.to_string())?;
            switched |= out.status == AcceptStatus::Reorged;
        }
        let (wa, wb) = (work(&first), work(&second));
        let expect = if wb > wa { rival.tip() } else { main.tip() };
        check(node.tip() == expect, format!("trial {trial}: work {wa} vs {wb}, wrong tip"))?;
        check(switched == (wb > wa), format!("trial {trial}: reorg flag {switched}"))?;
        reorgs += switched as u32;
        ties += (wa == wb) as u32;
        check(state_as_map(&node) == replay_oracle(&node), format!("trial {trial}: UTXO set differs from replay"))?;
        check(
            node.state().state_digest()
                == if wb > wa { rival.state().state_digest() } else { main.state().state_digest() },
            format!("trial {trial}: state differs from direct build"),
        )?;
    }
    Ok(format!("1000 connect/disconnect inverses; 60 forks ({reorgs} reorgs, {ties} ties) match the replay oracle"))
}

fn determinism() -> Outcome {
    let configs = [
        ScenarioConfig { seed: 42, tx_rate: 1.0, duration_s: 30, ..ScenarioConfig::default() },
        ScenarioConfig {
            seed: 43,
            duration_s: 30,
            adversary: Adversary::DoubleSpend { confirmations: 1, attacker_rate: 0.5, give_up: 6 },
            ..ScenarioConfig::default()
        },
    ];
    for cfg in &configs {
        let a = minichain::netsim::run(cfg).map_err(|e| e.to_string())?;
        let b = minichain::netsim::run(cfg).map_err(|e| e.to_string())?;
        check(a.to_text() == b.to_text(), format!("seed {}: text reports differ", cfg.seed))?;
        check(serde_json::to_vec(&a.to_json()).unwrap() == serde_json::to_vec(&b.to_json()).unwrap(), "json differs")?;
    }
    let mut runs = 0;
    for seed in 1..=10 {
        let cfg = ScenarioConfig { seed, tx_rate: 0.5, duration_s: 40, ..ScenarioConfig::default() };
        let mut sim = Simulation::new(cfg).map_err(|e| e.to_string())?;
        while sim.step() {}
        let tip = sim.tip(0);
        let utxos = sim.chain(0).state().utxos().clone();
        for n in 1..4 {
            check(sim.tip(n) == tip, format!("seed {seed}: node {n} on another tip"))?;
            check(*sim.chain(n).state().utxos() == utxos, format!("seed {seed}: node {n} UTXO set differs"))?;
        }
        runs += 1;
    }
    Ok(format!("repeat runs byte-identical; {runs} honest runs end on one tip with equal UTXO sets"))
}

fn crash_safety() -> Outcome {
    let params = params();
    let chain = twenty_block_chain(&params);
    let blocks: Vec<_> = chain.active_blocks().cloned().collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = store_active(&dir.path().join("full"), &chain, params.network_magic);
    let last = store.location(&chain.tip()).unwrap();
    drop(store);
    let bytes = fs::read(dir.path().join("full").join(BLOCKS_FILE)).map_err(|e| e.to_string())?;
    let record = RECORD_HEADER + u64::from(last.length);
    check(last.offset + record == bytes.len() as u64, "last record is not at the end")?;

    let mut prefix_chain = Chain::new(params.clone(), blocks[0].clone());
    for b in &blocks[1..blocks.len() - 1] {
        prefix_chain.accept_block(b.clone(), b.header.time).unwrap();
    }
    for cut in 0..record {
        let case = dir.path().join(format!("cut{cut}"));
        fs::create_dir_all(&case).unwrap();
        let torn = &bytes[..(last.offset + cut) as usize];
        fs::write(case.join(BLOCKS_FILE), torn).unwrap();
        let (mut store, rec) = Store::open(&case, params.network_magic).map_err(|e| format!("cut {cut}: {e}"))?;
        check(rec.records == blocks.len() - 1, format!("cut {cut}: {} records", rec.records))?;
        check(rec.truncated_bytes == cut, format!("cut {cut}: truncated {}", rec.truncated_bytes))?;
        let on_disk = fs::metadata(case.join(BLOCKS_FILE)).unwrap().len();
        check(on_disk == last.offset, format!("cut {cut}: file left at {on_disk}"))?;
        let recovered = store.all_blocks().map_err(|e| e.to_string())?;
        check(recovered[..] == blocks[..blocks.len() - 1], format!("cut {cut}: recovered blocks differ"))?;
        let rebuilt = store.rebuild_index(&params).map_err(|e| e.to_string())?;
        check(rebuilt.tip() == prefix_chain.tip(), format!("cut {cut}: rebuilt tip differs"))?;
        check(store.tip() == Some(prefix_chain.tip()) && store.index_is_coherent(), format!("cut {cut}: index"))?;
        check(rebuilt.state().state_digest() == prefix_chain.state().state_digest(), format!("cut {cut}: state"))?;
        fs::remove_dir_all(&case).unwrap();
    }
    Ok(format!("{record} truncation points of the final record recovered {} blocks", blocks.len() - 1))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("supply cap", supply_cap),
        ("halving schedule", halving),
        ("retarget behaviour", retarget),
        ("tamper evidence", tamper),
        ("double-spend safety", double_spend),
        ("multisig truth table", multisig_table),
        ("pay-to-script-hash", p2sh),
        ("locktime and channels", locktime_and_channels),
        ("fork choice and reorg", fork_choice),
        ("determinism and convergence", determinism),
        ("crash safety", crash_safety),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed, {:.1} s", criteria.len() - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
