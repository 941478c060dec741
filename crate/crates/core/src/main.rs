use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ehrgate::actors::{ActorState, Transcript};
use ehrgate::crypto::CipherProfile;
use ehrgate::ledger::Ledger;
use ehrgate::scenario::{audit, files, replay, run_to_dir, AuditInput, ReplayVerdict, ScenarioConfig, ScenarioError};
use ehrgate::store::StoreFile;

#[derive(Parser)]
#[command(name = "ehrgate", version, about = "Run and audit delegated-access scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_profile)]
        profile: Option<CipherProfile>,
    },
    /// Recompute the who-knows-what matrix from a run directory.
    Audit { dir: PathBuf },
    /// Re-run a saved scenario and compare against its exports.
    Replay { dir: PathBuf },
}

fn parse_profile(s: &str) -> Result<CipherProfile, String> {
    s.parse().map_err(|_| format!("unknown profile `{s}` (expected toy or production)"))
}

fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T, ScenarioError> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| ScenarioError::Format {
        what: name.to_string(),
        reason: e.to_string(),
    })
}

fn run(config: &Path, out: &Path, seed: Option<u64>, profile: Option<CipherProfile>) -> ExitCode {
    match run_to_dir(config, out, seed, profile) {
        Ok(outcome) => {
            let report = &outcome.report;
            for step in &report.steps {
                let mark = if step.ok { "ok  " } else { "FAIL" };
                println!("{mark} {:>2} {:<13} {}", step.index, step.action, step.observed);
                for d in &step.details {
                    println!("          {d}");
                }
            }
            println!();
            print!("{}", outcome.audit.table());
            if let Some(note) = &outcome.audit.note {
                println!("({note})");
            }
            println!("transcript {}", report.transcript_digest);
            println!("ledger head {}", report.ledger_head);
            match &report.first_failure {
                None => {
                    println!("{}: passed", report.name);
                    ExitCode::SUCCESS
                }
                Some(f) => {
                    eprintln!("{}: failed at {f}", report.name);
                    ExitCode::from(1)
                }
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn audit_dir(dir: &Path) -> Result<bool, ScenarioError> {
    let config = ScenarioConfig::load(&dir.join(files::CONFIG))?;
    let ledger_path = dir.join(files::LEDGER);
    let file = fs::File::open(&ledger_path).map_err(|e| ScenarioError::Io {
        path: ledger_path.display().to_string(),
        source: e,
    })?;
    let ledger = Ledger::import(BufReader::new(file))?;
    let actors: Vec<ActorState> = read_json(dir, files::WALLETS)?;
    let store: StoreFile = read_json(dir, files::STORE)?;
    let transcript: Transcript = read_json(dir, files::TRANSCRIPT)?;
    let report = audit(AuditInput {
        profile: config.profile,
        ledger: &ledger,
        actors: &actors,
        store: &store,
        transcript: &transcript,
    })?;
    print!("{}", report.table());
    if let Some(note) = &report.note {
        println!("({note})");
    }
    println!(
        "subject: {} via {}, {}",
        report.subject.requester,
        report.subject.notary,
        if report.subject.post_access { "after access" } else { "no access" }
    );
    println!("transcript {}", report.transcript_digest);
    println!("ledger head {}", report.ledger_head);
    Ok(!report.compared || report.all_pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            profile,
        } => run(&config, &out, seed, profile),
        Command::Audit { dir } => match audit_dir(&dir) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Replay { dir } => match replay(&dir) {
            Ok(verdict) => {
                println!("{verdict}");
                if verdict == ReplayVerdict::Identical {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
