//! Command-line driver: `check`, `prove`, `oracle` and `bench` subcommands
//! over the textual problem format.
//!
//! Exit codes: 0 on success (`prove`: all queries valid; `oracle`: no
//! counter-model found), 1 when a query is invalid (or a counter-model was
//! found), 2 on parse, validation or resource errors.

mod parse;

pub use parse::{parse, ParseError, ProblemFile};

use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::prover::{explain_invalid, extract_proof, prove, refutation_trace, Limits};
use crate::rules::RuleSet;
use crate::semantics::{display_structure, find_countermodel, Bounds, Universe};

#[derive(Parser)]
#[command(name = "sepentail", version, about = "Entailment prover for separation-logic symbolic heaps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the rule set of a problem file and print diagnostics.
    Check {
        file: String,
        /// Emit machine-readable diagnostics.
        #[arg(long)]
        json: bool,
    },
    /// Decide every entailment query of a problem file.
    Prove {
        file: String,
        /// Print the rational proof of each valid query.
        #[arg(long)]
        proof: bool,
        /// Search for a counter-model of each invalid query.
        #[arg(long)]
        countermodel: bool,
        /// Cap on the number of normalized sequents explored per query.
        #[arg(long, default_value_t = 200_000)]
        max_sequents: usize,
        /// Emit one JSON record per query.
        #[arg(long)]
        json: bool,
        /// Report elapsed milliseconds as 0 for reproducible output.
        #[arg(long)]
        no_timing: bool,
        #[command(flatten)]
        bounds: BoundsArgs,
    },
    /// Run only the bounded counter-model search on every query.
    Oracle {
        file: String,
        #[command(flatten)]
        bounds: BoundsArgs,
        /// Emit one JSON record per query.
        #[arg(long)]
        json: bool,
    },
    /// Prove every query and report search statistics.
    Bench { file: String },
}

#[derive(Args)]
struct BoundsArgs {
    /// Maximum number of heap cells in the counter-model search.
    #[arg(long, default_value_t = 4)]
    max_cells: usize,
    /// Maximum number of locations in the counter-model search.
    #[arg(long, default_value_t = 5)]
    max_locs: usize,
}

pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap reports --help/--version through Err as well.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Check { file, json } => check(&file, json),
        Command::Prove { file, proof, countermodel, max_sequents, json, no_timing, bounds } => {
            prove_cmd(&file, proof, countermodel, max_sequents, json, no_timing, bounds)
        }
        Command::Oracle { file, bounds, json } => oracle_cmd(&file, bounds, json),
        Command::Bench { file } => bench_cmd(&file),
    }
}

fn load(path: &str) -> Result<ProblemFile, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
    parse(&text).map_err(|e| format!("{path}:{e}"))
}

fn check(path: &str, json: bool) -> i32 {
    let file = match load(path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let (rs, diagnostics) = match RuleSet::analyze(file.profiles.clone(), file.rules.clone()) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let unused: Vec<String> = file
        .constants
        .iter()
        .filter(|c| !rs.constants().contains(c))
        .filter(|c| !file.queries.iter().any(|q| q.lhs.terms().contains(c) || q.rhs.terms().contains(c)))
        .map(|c| c.name.clone())
        .collect();
    if json {
        let record = json!({
            "valid": diagnostics.fully_valid(),
            "structurally_valid": diagnostics.structurally_valid(),
            "deterministic": diagnostics.determinism_witness.is_none(),
            "loc_deterministic": diagnostics.is_loc_deterministic(),
            "diagnostics": diagnostics,
            "unused_constants": unused,
            "measures": {
                "ar_max": rs.ar_max(),
                "record_max": rs.record_max(),
                "width": rs.width(),
            },
        });
        println!("{record}");
    } else {
        let text = diagnostics.to_string();
        if !text.is_empty() {
            print!("{text}");
        }
        for c in &unused {
            println!("warning: constant {c} is declared but never used");
        }
        println!(
            "rule set: {} (ar_max {}, record_max {}, width {})",
            if diagnostics.fully_valid() { "valid, loc-deterministic" } else { "rejected" },
            rs.ar_max(),
            rs.record_max(),
            rs.width()
        );
    }
    if diagnostics.fully_valid() {
        0
    } else {
        2
    }
}

fn prove_cmd(
    path: &str,
    proof: bool,
    countermodel: bool,
    max_sequents: usize,
    json: bool,
    no_timing: bool,
    bounds: BoundsArgs,
) -> i32 {
    let file = match load(path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let rs = match RuleSet::new(file.profiles.clone(), file.rules.clone()) {
        Ok(rs) => rs,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let bounds = match Bounds::new(bounds.max_cells, bounds.max_locs) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let mut any_invalid = false;
    for (i, query) in file.queries.iter().enumerate() {
        let universe = Universe::new(&rs, query.vars().into_iter().chain(query.lhs.terms()));
        let start = Instant::now();
        let verdict = match prove(&rs, query, Limits { max_nodes: max_sequents }) {
            Ok(v) => v,
            Err(e) => {
                eprintln!("error: query {i}: {e}");
                return 2;
            }
        };
        let ms = if no_timing { 0 } else { start.elapsed().as_millis() as u64 };
        any_invalid |= !verdict.valid;
        let cm = if !verdict.valid && countermodel {
            match find_countermodel(&rs, &universe, query, bounds) {
                Ok(cm) => cm,
                Err(e) => {
                    eprintln!("error: query {i}: {e}");
                    return 2;
                }
            }
        } else {
            None
        };
        let evidence = if verdict.valid {
            "proof"
        } else if cm.is_some() {
            "countermodel"
        } else {
            "refutation"
        };
        if json {
            let mut record = json!({
                "query": i,
                "valid": verdict.valid,
                "nodes": verdict.stats.nodes,
                "ms": ms,
                "evidence": evidence,
            });
            if countermodel {
                record["countermodel"] = match &cm {
                    Some(st) => json!(display_structure(st, &universe)),
                    None => json!(null),
                };
            }
            if proof && verdict.valid {
                let tree = extract_proof(&verdict).expect("valid verdict has a proof");
                record["proof"] = json!(tree.to_string());
            }
            println!("{record}");
        } else {
            println!(
                "query {i}: {} ({} sequents, {} ms)",
                if verdict.valid { "valid" } else { "invalid" },
                verdict.stats.nodes,
                ms
            );
            if verdict.valid && proof {
                let tree = extract_proof(&verdict).expect("valid verdict has a proof");
                print!("{tree}");
            }
            if !verdict.valid {
                if countermodel {
                    match &cm {
                        Some(st) => println!("{}", display_structure(st, &universe)),
                        None => println!(
                            "no counter-model within bounds (cells <= {}, locs <= {})",
                            bounds.max_cells, bounds.max_locs
                        ),
                    }
                } else if let Ok(trace) = refutation_trace(&verdict) {
                    if let Some(step) = trace.last() {
                        println!("refuted at: {}", step.sequent);
                    }
                }
            }
        }
    }
    if any_invalid {
        1
    } else {
        0
    }
}

fn oracle_cmd(path: &str, bounds: BoundsArgs, json: bool) -> i32 {
    let file = match load(path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let rs = match RuleSet::new(file.profiles.clone(), file.rules.clone()) {
        Ok(rs) => rs,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let bounds = match Bounds::new(bounds.max_cells, bounds.max_locs) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let mut any_found = false;
    for (i, query) in file.queries.iter().enumerate() {
        let universe = Universe::new(&rs, query.vars().into_iter().chain(query.lhs.terms()));
        let found = match find_countermodel(&rs, &universe, query, bounds) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("error: query {i}: {e}");
                return 2;
            }
        };
        any_found |= found.is_some();
        if json {
            println!(
                "{}",
                json!({
                    "query": i,
                    "countermodel_found": found.is_some(),
                    "max_cells": bounds.max_cells,
                    "max_locs": bounds.max_locs,
                    "countermodel": found.as_ref().map(|st| display_structure(st, &universe)),
                })
            );
        } else {
            match &found {
                Some(st) => {
                    println!("query {i}: counter-model found");
                    println!("{}", display_structure(st, &universe));
                }
                None => println!(
                    "query {i}: no counter-model within bounds (cells <= {}, locs <= {})",
                    bounds.max_cells, bounds.max_locs
                ),
            }
        }
    }
    if any_found {
        1
    } else {
        0
    }
}

fn bench_cmd(path: &str) -> i32 {
    let file = match load(path) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let rs = match RuleSet::new(file.profiles.clone(), file.rules.clone()) {
        Ok(rs) => rs,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    for (i, query) in file.queries.iter().enumerate() {
        let start = Instant::now();
        match prove(&rs, query, Limits::default()) {
            Ok(v) => {
                let ms = start.elapsed().as_millis();
                let apps: Vec<String> = v
                    .stats
                    .applications
                    .iter()
                    .map(|(rule, n)| format!("{rule}:{n}"))
                    .collect();
                println!(
                    "query {i}: {} nodes={} ms={} apps=[{}]",
                    if v.valid { "valid" } else { "invalid" },
                    v.stats.nodes,
                    ms,
                    apps.join(" ")
                );
            }
            Err(e) => {
                eprintln!("error: query {i}: {e}");
                return 2;
            }
        }
    }
    0
}

/// Convenience wrapper used by tests and examples: proves a single textual
/// problem and reports per-query validity.
pub fn prove_text(text: &str) -> Result<Vec<bool>, String> {
    let file = parse(text).map_err(|e| e.to_string())?;
    let rs = RuleSet::new(file.profiles.clone(), file.rules.clone()).map_err(|e| e.to_string())?;
    file.queries
        .iter()
        .map(|q| {
            prove(&rs, q, Limits::default()).map(|v| v.valid).map_err(|e| e.to_string())
        })
        .collect()
}

/// Explains one invalid query of a textual problem; used by examples.
pub fn explain_text(
    text: &str,
    query_index: usize,
    bounds: Bounds,
) -> Result<String, String> {
    let file = parse(text).map_err(|e| e.to_string())?;
    let rs = RuleSet::new(file.profiles.clone(), file.rules.clone()).map_err(|e| e.to_string())?;
    let query = file.queries.get(query_index).ok_or("no such query")?;
    let universe = Universe::new(&rs, query.vars().into_iter().chain(query.lhs.terms()));
    let verdict = prove(&rs, query, Limits::default()).map_err(|e| e.to_string())?;
    if verdict.valid {
        return Ok("valid".to_string());
    }
    let report = explain_invalid(&rs, &universe, &verdict, bounds).map_err(|e| e.to_string())?;
    let mut out = String::from("invalid\n");
    for step in &report.trace {
        out.push_str(&format!("  {}\n", step.sequent));
    }
    match &report.countermodel {
        Some(st) => out.push_str(&display_structure(st, &universe)),
        None => out.push_str("no counter-model within bounds"),
    }
    Ok(out)
}
