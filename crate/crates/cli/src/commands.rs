use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use houston::eval::{evaluate, truth_as_result, write_report, EvalOptions, ReportRow};
use houston::event_stream::{read_stream, read_stream_all};
use houston::smc::{read_result, sidecar, write_result, Engine, EngineConfig, InferenceResult};
use houston::synth::{generate, read_truth, write_dataset, BaseNetwork, Dataset, GenConfig};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::{Base, BenchArgs, Cli, Command, EngineArgs, EvalArgs, GenerateArgs, InferArgs, NetworkArgs};
use clap::Parser;

const PROGRESS_EVERY: usize = 10_000;

pub fn dispatch(command: Command, argv: &[String]) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => cmd_generate(&a, argv),
        Command::Infer(a) => cmd_infer(&a, argv),
        Command::Eval(a) => cmd_eval(&a, argv),
        Command::Bench(a) => cmd_bench(&a, argv),
        Command::Replay(a) => cmd_replay(&a.manifest),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<Value, CliError> {
    Ok(serde_json::to_value(v)?)
}

fn gen_config(net: &NetworkArgs, events: usize, seed: u64) -> Result<GenConfig, CliError> {
    let base = match net.base {
        Base::Pl => BaseNetwork::PowerLaw { m: net.m },
        Base::Er => BaseNetwork::ErdosRenyi {
            p: net.p.unwrap_or_else(|| GenConfig::matched_er_probability(net.n_nodes, net.m)),
        },
        Base::File => BaseNetwork::EdgeListFile(
            net.edge_file.clone().ok_or_else(|| CliError::Usage("--base file needs --edge-file".into()))?,
        ),
    };
    if net.base != Base::Er && net.p.is_some() {
        return Err(CliError::Usage("--p only applies to --base er".into()));
    }
    let config = GenConfig {
        base,
        n_nodes: net.n_nodes,
        n_subnets: net.subnets,
        subnet_size: net.subnet_size,
        vocab_size: net.vocab,
        words_per_doc: net.words,
        n_events_target: events,
        window: net.window,
        topic_concentration: net.topic_concentration,
        concurrency: net.concurrency,
        seed,
    };
    config.validate()?;
    Ok(config)
}

fn gen_config_json(c: &GenConfig, ds: &Dataset) -> Value {
    let (base, m, p, edge_file) = match &c.base {
        BaseNetwork::PowerLaw { m } => ("pl", Some(*m), None, None),
        BaseNetwork::ErdosRenyi { p } => ("er", None, Some(*p), None),
        BaseNetwork::EdgeListFile(f) => ("file", None, None, Some(f.clone())),
    };
    json!({
        "base": base,
        "m": m,
        "p": p,
        "edge_file": edge_file,
        "n_nodes": c.n_nodes,
        "subnets": c.n_subnets,
        "subnet_size": c.subnet_size,
        "vocab": c.vocab_size,
        "words": c.words_per_doc,
        "events": c.n_events_target,
        "window": c.window,
        "window_effective": ds.window,
        "topic_concentration": c.topic_concentration,
        "concurrency": c.concurrency,
        "seed": c.seed,
        "n_cascades": ds.n_cascades,
        "base_arcs": ds.base_arcs,
        "base_components": ds.base_components,
    })
}

fn truth_outputs(stream: &Path, n_subnets: usize) -> Vec<PathBuf> {
    let mut out = vec![stream.to_owned(), sidecar(stream, "labels"), sidecar(stream, "meta")];
    out.extend((0..n_subnets).map(|k| sidecar(stream, &format!("net.{k}"))));
    out
}

fn cmd_generate(args: &GenerateArgs, argv: &[String]) -> Result<(), CliError> {
    let started = Instant::now();
    let config = gen_config(&args.network, args.events, args.seed)?;
    let ds = generate(&config)?;
    write_dataset(&ds, &args.out)?;

    let mut m = RunManifest::new("generate", argv, gen_config_json(&config, &ds), Some(args.seed));
    if let BaseNetwork::EdgeListFile(f) = &config.base {
        m.inputs.push(f.clone());
    }
    m.outputs = truth_outputs(&args.out, config.n_subnets);
    m.wall_clock_seconds = started.elapsed().as_secs_f64();
    m.write(&sidecar(&args.out, "manifest.json"))
}

/// Worker threads: the request (default one per run), capped by the run
/// count and by `HOUSTON_THREADS`.
fn resolve_threads(requested: Option<usize>, runs: usize) -> Result<usize, CliError> {
    if requested == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut threads = requested.unwrap_or(available).min(runs.max(1));
    if let Ok(v) = std::env::var("HOUSTON_THREADS") {
        let cap: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| CliError::Usage(format!("HOUSTON_THREADS={v:?} is not a positive integer")))?;
        threads = threads.min(cap);
    }
    Ok(threads.max(1))
}

fn engine_config(args: &EngineArgs) -> Result<EngineConfig, CliError> {
    let config = EngineConfig {
        n_runs: args.runs,
        theta0: args.theta0,
        lambda0: args.lambda0,
        alpha0: args.alpha0,
        t_old: args.t_old,
        refit_period: args.refit_period,
        refit_growth: args.refit_growth,
        ess_threshold: args.ess_threshold,
        rng_seed: args.seed,
        mode: args.mode,
        weight: args.weight,
        threads: resolve_threads(args.threads, args.runs)?,
        ..EngineConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn engine_json(args: &EngineArgs, config: &EngineConfig) -> Result<Value, CliError> {
    let mut v = to_json(args)?;
    v["threads"] = json!(config.threads);
    v["optimizer"] = json!(format!("{:?}", config.optimizer));
    Ok(v)
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn cmd_infer(args: &InferArgs, argv: &[String]) -> Result<(), CliError> {
    let started = Instant::now();
    let config = engine_config(&args.engine)?;
    let (header, events) = read_stream(open(&args.input)?)?;
    let mut engine = Engine::new(header, config.clone())?;
    for (i, event) in events.enumerate() {
        engine.push(&event?)?;
        if args.progress && (i + 1) % PROGRESS_EVERY == 0 {
            if let Some(d) = engine.diagnostics().last() {
                eprintln!(
                    "events {} clusters {} ess {:.2} elapsed {:.1}s",
                    i + 1,
                    d.n_clusters,
                    d.ess,
                    d.elapsed_ns as f64 * 1e-9
                );
            }
        }
    }
    let result = engine.finish()?;

    fs::create_dir_all(&args.out_dir)?;
    let prefix = args.out_dir.join("result");
    write_result(&result, &prefix)?;

    let mut m = RunManifest::new("infer", argv, engine_json(&args.engine, &config)?, Some(args.engine.seed));
    m.config["input"] = json!(args.input);
    m.config["out_dir"] = json!(args.out_dir);
    m.config["progress"] = json!(args.progress);
    m.inputs.push(args.input.clone());
    m.outputs = ["assign", "diag.csv", "meta"].iter().map(|s| sidecar(&prefix, s)).collect();
    m.outputs.extend(result.adjacencies.keys().map(|k| sidecar(&prefix, &format!("net.{k}"))));
    m.wall_clock_seconds = started.elapsed().as_secs_f64();
    m.write(&args.out_dir.join("manifest.json"))
}

/// Result plus mode label and seed for one `--run STREAM RESULT` pair.
fn load_run(
    result: &Path,
    truth: &houston::synth::TruthFiles,
    n_nodes: usize,
) -> Result<(InferenceResult, String, u64), CliError> {
    let truth_seed = truth.meta.get("seed").and_then(|s| s.parse().ok());
    if result.as_os_str() == "truth" {
        return Ok((truth_as_result(truth, n_nodes), "truth".into(), truth_seed.unwrap_or(0)));
    }
    let (prefix, manifest) = if result.is_dir() {
        (result.join("result"), result.join("manifest.json"))
    } else {
        (result.to_owned(), result.with_file_name("manifest.json"))
    };
    let r = read_result(&prefix)?;
    let seed = if manifest.exists() { RunManifest::read(&manifest)?.seed } else { None };
    let mode = r.mode.to_string();
    Ok((r, mode, seed.or(truth_seed).unwrap_or(0)))
}

fn cmd_eval(args: &EvalArgs, argv: &[String]) -> Result<(), CliError> {
    let started = Instant::now();
    let options = EvalOptions { threshold: args.threshold };
    let mut rows = Vec::new();
    let mut m = RunManifest::new("eval", argv, to_json(args)?, None);
    for pair in args.runs.chunks(2) {
        let (stream, result) = (&pair[0], &pair[1]);
        let (header, events) = read_stream_all(open(stream)?)?;
        let truth = read_truth(stream, header.n_nodes)?;
        let (r, mode, seed) = load_run(result, &truth, header.n_nodes)?;
        let nodes: Vec<_> = events.iter().map(|e| e.node).collect();
        let report = evaluate(&r, &truth, &nodes, &options)?;
        let dataset = args.dataset.clone().unwrap_or_else(|| {
            stream.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
        });
        rows.push(ReportRow { dataset, mode, seed, report });
        m.inputs.push(stream.clone());
        m.inputs.push(result.clone());
    }

    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = File::create(&args.out).map_err(|e| CliError::data(format!("{}: {e}", args.out.display())))?;
    write_report(&rows, BufWriter::new(file))?;

    m.outputs.push(args.out.clone());
    m.wall_clock_seconds = started.elapsed().as_secs_f64();
    m.write(&sidecar(&args.out, "manifest.json"))
}

fn cmd_bench(args: &BenchArgs, argv: &[String]) -> Result<(), CliError> {
    let started = Instant::now();
    if args.events == 0 {
        return Err(CliError::Usage("--events must be at least 1".into()));
    }
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let engine = engine_config(&args.engine)?;
    let sizes: Vec<usize> = (0..=args.doublings)
        .map(|d| args.events.checked_shl(d as u32).filter(|&n| n >> d == args.events))
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::Usage("too many doublings".into()))?;

    let mut rows = Vec::new();
    for &n in &sizes {
        let ds = generate(&gen_config(&args.network, n, args.engine.seed)?)?;
        let mut best = f64::INFINITY;
        for _ in 0..args.repeats {
            let t = Instant::now();
            houston::smc::run(ds.header, ds.events.iter().cloned().map(Ok), &engine)?;
            best = best.min(t.elapsed().as_secs_f64());
        }
        rows.push((ds.events.len(), best));
    }

    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(
        File::create(&args.out).map_err(|e| CliError::data(format!("{}: {e}", args.out.display())))?,
    );
    writeln!(out, "events,seconds,ratio")?;
    for (i, &(n, s)) in rows.iter().enumerate() {
        let ratio = if i == 0 { "n/a".to_string() } else { format!("{:.4}", s / rows[i - 1].1) };
        writeln!(out, "{n},{s:.6},{ratio}")?;
    }
    out.flush()?;

    let mut config = to_json(&args.network)?;
    config["engine"] = engine_json(&args.engine, &engine)?;
    config["events"] = json!(args.events);
    config["doublings"] = json!(args.doublings);
    config["repeats"] = json!(args.repeats);
    config["out"] = json!(args.out);
    let mut m = RunManifest::new("bench", argv, config, Some(args.engine.seed));
    m.outputs.push(args.out.clone());
    m.wall_clock_seconds = started.elapsed().as_secs_f64();
    m.write(&sidecar(&args.out, "manifest.json"))
}

fn cmd_replay(path: &Path) -> Result<(), CliError> {
    let m = RunManifest::read(path)?;
    let cli = Cli::try_parse_from(std::iter::once("houston".to_string()).chain(m.argv.iter().cloned()))
        .map_err(|e| {
            CliError::data(format!("{}: recorded arguments no longer parse: {e}", path.display()))
        })?;
    if let Command::Replay(_) = cli.command {
        return Err(CliError::data(format!("{}: manifest records a replay", path.display())));
    }
    dispatch(cli.command, &m.argv)
}
