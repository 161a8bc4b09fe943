//! `careledger`: run scenarios, verify and audit ledger files, render
//! timelines and consent dashboards.
//!
//! Exit codes: 0 success, 1 domain failure (violation, deny, expired
//! session), 2 usage, parse or input errors.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use careledger::consent::DASHBOARD_HEADER;
use careledger::exchange::{build_timeline, Session};
use careledger::ledger::{
    decode_ledger, query_audit, validate_chain, validate_chain_anchored, write_ledger, AuditFilter, Digest,
    LedgerState, PersistError, PrincipalId, PrincipalKind,
};
use careledger::privacy::{parse_dictionary, patient_commitments, rederive, scan_transactions};
use careledger::simnet::{run_scenario, Script, SimConfig, SimError, Simulation};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "careledger", version, about = "Permissioned care ledger simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario script; quiz and store files resolve relative to it.
    script: PathBuf,
    #[arg(long, env = "CARELEDGER_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write trace.tsv plus one ledger file per organization.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Validate a ledger file.
    Verify {
        ledger: PathBuf,
        /// Expected genesis block hash, hex.
        #[arg(long)]
        genesis: Option<String>,
    },
    /// Export audit entries as JSON lines.
    Audit {
        ledger: PathBuf,
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        actor: Option<String>,
        #[arg(long)]
        action: Option<String>,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
    },
    /// Merged timeline of a practitioner's sessions after a scenario run.
    Timeline {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        practitioner: String,
        /// Render at this simulated time instead of the end of the run.
        #[arg(long)]
        at: Option<u64>,
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
        /// Restrict to these sessions; an expired one is an error.
        #[arg(long = "session")]
        sessions: Vec<String>,
    },
    /// Consent dashboard for one study after a scenario run.
    Dashboard {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        researcher: String,
        #[arg(long)]
        study: String,
    },
    /// Scan committed transactions against a dictionary and try to relink
    /// shredded patients.
    ShredCheck {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        dictionary: PathBuf,
    },
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    msg: String,
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn domain(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let result = match cli.command {
        Cmd::Run { scenario, out: dir } => cmd_run(&scenario, &dir, &mut out),
        Cmd::Verify { ledger, genesis } => cmd_verify(&ledger, genesis.as_deref(), &mut out),
        Cmd::Audit {
            ledger,
            subject,
            actor,
            action,
            from,
            to,
        } => cmd_audit(
            &ledger,
            AuditFilter {
                subject,
                actor,
                action,
                from,
                to,
            },
            &mut out,
        ),
        Cmd::Timeline {
            scenario,
            practitioner,
            at,
            from,
            to,
            sessions,
        } => cmd_timeline(&scenario, &practitioner, at, from, to, &sessions, &mut out),
        Cmd::Dashboard {
            scenario,
            researcher,
            study,
        } => cmd_dashboard(&scenario, &researcher, &study, &mut out),
        Cmd::ShredCheck { scenario, dictionary } => cmd_shred_check(&scenario, &dictionary, &mut out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = out.flush();
            eprintln!("careledger: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> Failure {
    usage(format!("{}: {e}", path.display()))
}

fn write_out(out: &mut impl Write, text: &str) -> Outcome {
    out.write_all(text.as_bytes())
        .map_err(|e| usage(format!("stdout: {e}")))
}

fn simulate(args: &ScenarioArgs) -> Result<Simulation, Failure> {
    let script = Script::load(&args.script).map_err(|e| usage(format!("{}: {e}", args.script.display())))?;
    run_scenario(&script, SimConfig::with_seed(args.seed)).map_err(|e| {
        let code = match e.root() {
            SimError::Config(_) | SimError::Script(_) | SimError::MissingFile(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            msg: format!("{}: {e}", args.script.display()),
        }
    })
}

fn cmd_run(args: &ScenarioArgs, dir: &Path, out: &mut impl Write) -> Outcome {
    let sim = simulate(args)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let trace = dir.join("trace.tsv");
    fs::write(&trace, sim.trace().to_tsv()).map_err(|e| io_err(&trace, e))?;
    let mut report = format!("trace\t{}\t{} events\n", trace.display(), sim.trace().len());
    for node in sim.nodes() {
        let path = dir.join(format!("ledger-{}.bin", node.org));
        let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = io::BufWriter::new(file);
        write_ledger(node.ledger.blocks(), &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| io_err(&path, e))?;
        report.push_str(&format!("ledger\t{}\t{} blocks\n", path.display(), node.ledger.len()));
    }
    if !sim.prefixes_consistent() {
        write_out(out, &report)?;
        return Err(domain("committed prefixes diverge across nodes"));
    }
    write_out(out, &report)
}

fn read_ledger(path: &Path) -> Result<Vec<careledger::ledger::Block>, Failure> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    decode_ledger(&bytes).map_err(|e| match e {
        PersistError::Malformed { .. } => domain(format!("{}: violation: {e}", path.display())),
        _ => usage(format!("{}: {e}", path.display())),
    })
}

fn cmd_verify(path: &Path, genesis: Option<&str>, out: &mut impl Write) -> Outcome {
    let anchor = genesis
        .map(|g| Digest::from_hex(g).map_err(|e| usage(format!("--genesis: {e}"))))
        .transpose()?;
    let blocks = read_ledger(path)?;
    let checked = match &anchor {
        Some(g) => validate_chain_anchored(&blocks, g),
        None => validate_chain(&blocks),
    };
    match checked {
        Ok(_) => write_out(
            out,
            &format!(
                "ok\t{} blocks\ttip {}\n",
                blocks.len(),
                blocks.last().map(|b| b.hash().to_string()).unwrap_or_default()
            ),
        ),
        Err(v) => {
            write_out(out, &format!("violation\theight {}\t{}\n", v.height, v.rule))?;
            Err(domain(v.to_string()))
        }
    }
}

fn cmd_audit(path: &Path, filter: AuditFilter, out: &mut impl Write) -> Outcome {
    if let (Some(from), Some(to)) = (filter.from, filter.to) {
        if to < from {
            return Err(usage(format!("--to {to} is before --from {from}")));
        }
    }
    let blocks = read_ledger(path)?;
    validate_chain(&blocks).map_err(|v| domain(v.to_string()))?;
    let ledger = LedgerState::from_blocks(blocks).map_err(|e| domain(e.to_string()))?;
    let entries = query_audit(&ledger, &filter).map_err(|e| usage(e.to_string()))?;
    let mut text = String::new();
    for e in entries {
        text.push_str(&e.to_json_line());
        text.push('\n');
    }
    write_out(out, &text)
}

fn cmd_timeline(
    args: &ScenarioArgs,
    practitioner: &str,
    at: Option<u64>,
    from: Option<u64>,
    to: Option<u64>,
    wanted: &[String],
    out: &mut impl Write,
) -> Outcome {
    let window = match (from, to) {
        (None, None) => None,
        (Some(f), Some(t)) => Some((f, t)),
        _ => return Err(usage("--from and --to go together")),
    };
    let mut sim = simulate(args)?;
    if let Some(t) = at {
        if t < sim.now() {
            return Err(usage(format!("--at {t} is before the end of the run ({})", sim.now())));
        }
        sim.advance_to(t);
    }
    let who = PrincipalId::new(PrincipalKind::Practitioner, practitioner).map_err(|e| usage(e.to_string()))?;
    let home = sim
        .home_of(&who)
        .ok_or_else(|| domain(format!("unknown practitioner {practitioner:?}")))?
        .to_string();
    let table = &sim.node(&home).expect("home nodes exist").sessions;
    let sessions: Vec<&Session> = if wanted.is_empty() {
        table.live_for(practitioner).collect()
    } else {
        let mut picked = Vec::new();
        for id in wanted {
            let s = table.get(id).map_err(|e| domain(e.to_string()))?;
            if s.requester != practitioner {
                return Err(domain(format!("session {id} belongs to {}", s.requester)));
            }
            picked.push(s);
        }
        picked
    };
    let rows = build_timeline(sessions, window).map_err(|e| usage(e.to_string()))?;
    let mut text = String::new();
    for r in rows {
        text.push_str(&format!("{r}\n"));
    }
    write_out(out, &text)
}

fn cmd_dashboard(args: &ScenarioArgs, researcher: &str, study: &str, out: &mut impl Write) -> Outcome {
    let sim = simulate(args)?;
    let rows = sim.consent_status(researcher, study).map_err(|e| domain(e.to_string()))?;
    let mut text = format!("{DASHBOARD_HEADER}\n");
    for r in rows {
        text.push_str(&format!("{r}\n"));
    }
    write_out(out, &text)
}

fn cmd_shred_check(args: &ScenarioArgs, dictionary: &Path, out: &mut impl Write) -> Outcome {
    let words = parse_dictionary(&fs::read_to_string(dictionary).map_err(|e| io_err(dictionary, e))?);
    let sim = simulate(args)?;
    let reference = sim.reference_node();
    let mut text = String::new();
    let leaks = scan_transactions(reference.ledger.blocks(), &words);
    for l in &leaks {
        text.push_str(&format!("leak\theight {}\ttx {}\t{:?}\n", l.height, l.tx_id.short(), l.entry));
    }
    let enrolled: Vec<&str> = sim
        .nodes()
        .flat_map(|n| n.store.vault().map(|(p, _)| p.as_str()))
        .collect();
    let mut shredded = patient_commitments(&reference.world.registry);
    shredded.retain(|p, _| !enrolled.contains(&p.as_str()));
    let salts: Vec<[u8; 16]> = sim
        .nodes()
        .flat_map(|n| n.store.vault().map(|(_, v)| v.salt))
        .collect();
    let links = rederive(&shredded, salts.iter().map(|s| &s[..]), &words);
    for l in &links {
        text.push_str(&format!("linkable\t{}\t{:?}\n", l.patient, l.identifier));
    }
    text.push_str(&format!(
        "{}\t{} txs scanned\t{} shredded\n",
        if leaks.is_empty() && links.is_empty() { "ok" } else { "fail" },
        reference.ledger.tx_count(),
        shredded.len()
    ));
    write_out(out, &text)?;
    if leaks.is_empty() && links.is_empty() {
        Ok(())
    } else {
        Err(domain(format!("{} leaks, {} linkable patients", leaks.len(), links.len())))
    }
}
