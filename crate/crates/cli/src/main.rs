use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use ars_core::engine::{replay, LogLine};
use ars_core::market_sim::{run_sweep, to_csv, SimMode, SweepConfig, SweepKind, SweepResult};
use ars_core::scenario::{standard_parties, Driver, DEMO_SECRET};
use ars_core::{AccountId, Keyring, StateMachine};
use clap::{Parser, Subcommand};
use serde::Serialize;

mod script;

#[derive(Parser)]
#[command(name = "ars", version, about = "Agentic job settlement: sweeps, scripted jobs and log replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a parameter sweep and write its result table.
    Sweep {
        /// lambda, fpfn or sigmoid. Without it (and without --config) all three run.
        #[arg(long)]
        kind: Option<SweepKind>,
        /// TOML sweep file; keys it omits take the built-in values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file, or a directory when several sweeps run. Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<u64>,
        /// Worker threads for the cells.
        #[arg(long)]
        jobs: Option<usize>,
        /// Skip the ledger and evaluate episodes from the equations only.
        #[arg(long)]
        equations_only: bool,
    },
    /// Drive jobs from a scripted action file.
    Episode {
        script: PathBuf,
        /// Also write the event log here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay an event log and check it byte for byte.
    Replay { log: PathBuf },
    /// Resolve a sweep config (or the built-in one for --kind) and print it.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        kind: Option<SweepKind>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Sweep { kind, config, out, seed, episodes, jobs, equations_only } => {
            cmd_sweep(kind, config, out, seed, episodes, jobs, equations_only)
        }
        Command::Episode { script, out } => cmd_episode(&script, out.as_deref()),
        Command::Replay { log } => cmd_replay(&log),
        Command::Validate { config, kind } => cmd_validate(config.as_deref(), kind),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn resolve(config: Option<&Path>, kind: Option<SweepKind>) -> Result<SweepConfig> {
    match (config, kind) {
        (Some(path), kind) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = SweepConfig::from_toml(&text)?;
            if let Some(k) = kind.filter(|&k| k != cfg.kind) {
                bail!("--kind {} conflicts with kind {} in {}", k.name(), cfg.kind.name(), path.display());
            }
            Ok(cfg)
        }
        (None, Some(kind)) => Ok(SweepConfig::builtin(kind)),
        (None, None) => bail!("give --config or --kind"),
    }
}

/// Writes through a sibling temp file so a failed run leaves nothing behind.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn cmd_sweep(
    kind: Option<SweepKind>,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    episodes: Option<u64>,
    jobs: Option<usize>,
    equations_only: bool,
) -> Result<()> {
    let mut configs = match (&config, kind) {
        (None, None) => SweepKind::ALL.map(SweepConfig::builtin).to_vec(),
        _ => vec![resolve(config.as_deref(), kind)?],
    };
    for c in &mut configs {
        c.seed = seed.unwrap_or(c.seed);
        c.episodes = episodes.unwrap_or(c.episodes);
        if equations_only {
            c.mode = SimMode::Equations;
        }
        c.validate()?;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;

    let mut tables = Vec::new();
    for c in &configs {
        let results: Vec<SweepResult> = pool.install(|| run_sweep(c))?;
        if let Some(r) = results.iter().find(|r| r.is_degenerate()) {
            bail!(
                "degenerate baseline in {} sweep at {:?}: no counterfactual failures, rates undefined",
                c.kind.name(),
                r.params
            );
        }
        tables.push((c.kind, to_csv(c, &results)));
    }

    match out {
        None => {
            let mut stdout = std::io::stdout().lock();
            for (_, t) in &tables {
                stdout.write_all(t.as_bytes())?;
            }
        }
        Some(path) if tables.len() == 1 => write_atomic(&path, &tables[0].1)?,
        Some(dir) => {
            fs::create_dir_all(&dir)?;
            for (k, t) in &tables {
                write_atomic(&dir.join(format!("{}.csv", k.name())), t)?;
            }
        }
    }
    Ok(())
}

fn label<T: Serialize>(t: &T) -> String {
    match serde_json::to_value(t) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(serde_json::Value::Null) => "-".into(),
        Ok(v) => v.to_string(),
        Err(_) => "?".into(),
    }
}

fn cmd_episode(path: &Path, out: Option<&Path>) -> Result<()> {
    let script = script::load(path)?;
    let parties = standard_parties(script.assistant);
    let mut driver = Driver::new(parties, script.endowment);
    let mut clock = 0;
    for (i, step) in script.step.iter().enumerate() {
        let n = i + 1;
        clock = step.at.unwrap_or(clock + 1);
        let sender = driver
            .parties
            .party(step.actor)
            .ok_or_else(|| anyhow!("step {n}: roster has no {}", step.actor))?;
        let parsed = step.body().with_context(|| format!("step {n}"))?;
        let given = parsed.body.agreement_hash().copied();
        let mut action = driver.engine.prepare(&step.job, sender, parsed.body);
        if parsed.explicit_hash {
            if let (Some(h), Some(g)) = (action.body.agreement_hash_mut(), given) {
                *h = g;
            }
        }
        let kind = action.kind();
        let state = driver
            .engine
            .submit(action, clock)
            .map_err(|e| anyhow!("step {n} ({kind:?} by {}) rejected: {e}", step.actor))?;
        println!(
            "{n:>3} t={clock:<6} {:<20} {:<24} {:<20} fee={:<16} principal={}",
            step.actor.to_string(),
            format!("{kind:?}"),
            label(&state.phase),
            label(&state.fee_state),
            label(&state.principal_state),
        );
    }
    println!("balances:");
    for (id, acct) in driver.engine.ledger().accounts() {
        println!("  {:<28} {:>12}", id.to_string(), acct.balance.to_string());
    }
    println!("  {:<28} {:>12}", "total supply", driver.engine.ledger().total_supply().to_string());
    if let Some(p) = out {
        write_atomic(p, &driver.engine.export_log())?;
    }
    Ok(())
}

fn cmd_replay(path: &Path) -> Result<()> {
    let log = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first = log.lines().next().unwrap_or_default();
    let wallets: Vec<String> = match serde_json::from_str::<LogLine>(first) {
        Ok(LogLine::Header { accounts, .. }) => accounts
            .keys()
            .filter_map(|a| match a {
                AccountId::Wallet(w) => Some(w.clone()),
                _ => None,
            })
            .collect(),
        _ => bail!("{}: line 1 is not an event-log header", path.display()),
    };
    let keys = Keyring::derived(DEMO_SECRET, wallets.iter().map(String::as_str));
    let report = replay(&log, StateMachine::new(keys))?;
    if !report.trailer_checked {
        bail!("log has no trailer; final balances unverified");
    }
    println!(
        "ok: {} events, {} jobs, {} receipts, total supply {}",
        report.events, report.jobs, report.receipts, report.total_supply
    );
    Ok(())
}

fn cmd_validate(config: Option<&Path>, kind: Option<SweepKind>) -> Result<()> {
    let cfg = resolve(config, kind)?;
    cfg.validate()?;
    println!("# config_sha256={} cells={}", cfg.digest(), cfg.cells().len());
    print!("{}", cfg.to_toml());
    Ok(())
}
