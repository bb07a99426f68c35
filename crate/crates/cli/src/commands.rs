use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use cogscreen_api::{AppState, ServiceConfig};
use cogscreen_core::agentic::{run_agentic, AgentProfiles, AgenticError, StopReason};
use cogscreen_core::classifier::{classify_cohort, ClassifyError, ClassifyOptions};
use cogscreen_core::corpus::{
    generate_synthetic_cohort, load_dataset, load_prompts, load_run, preset, prompt_library, save_run,
    write_dataset, SyntheticSpec,
};
use cogscreen_core::evaluator::{comparison_table, evaluate, metrics, metrics_table, ReportRow};
use cogscreen_core::gateway::HttpBackend;
use cogscreen_core::{
    ChatBackend, ConfusionCounts, Dataset, GenerationParams, Lineage, OrchestratorConfig, PromptConfig,
    RoutingPriority, SopDocument, SopRouting, StubBackend, StubScript, SummarizerPairing,
};

use crate::{
    AgenticRunArgs, ApplyArgs, BackendArgs, DataArgs, EvalArgs, PairingArg, PriorityArg, ServeArgs, SopRoutingArg,
    SynthArgs, EXIT_ABORTED, EXIT_SOFTWARE, EXIT_UNAVAILABLE, EXIT_USAGE,
};

pub const API_TOKEN_ENV: &str = "COGSCREEN_API_TOKEN";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn unavailable(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_UNAVAILABLE, message: message.into() }
}

fn software(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_SOFTWARE, message: message.into() }
}

type CmdResult = Result<(), Failure>;

fn load_data(args: &DataArgs) -> Result<Dataset, Failure> {
    load_dataset(&args.notes, &args.labels).map_err(|e| usage(format!("invalid dataset: {e}")))
}

fn build_backend(args: &BackendArgs) -> Result<Arc<dyn ChatBackend>, Failure> {
    match (&args.backend_url, &args.stub) {
        (Some(url), None) => {
            let mut config = cogscreen_core::BackendConfig::http(url.clone(), args.model.clone());
            config.timeout = Duration::from_secs(args.timeout_secs);
            config.max_retries_on_transport_error = args.retries;
            config.validate().map_err(|e| usage(e.to_string()))?;
            Ok(Arc::new(HttpBackend::new(config)))
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read stub script {}: {e}", path.display())))?;
            let script: StubScript = serde_json::from_str(&text)
                .map_err(|e| usage(format!("invalid stub script {}: {e}", path.display())))?;
            Ok(Arc::new(StubBackend::new(script)))
        }
        _ => Err(usage("exactly one of --backend-url or --stub is required")),
    }
}

fn classify_options(args: &BackendArgs) -> Result<ClassifyOptions, Failure> {
    if args.parallelism == 0 {
        return Err(usage("--parallelism must be at least 1"));
    }
    Ok(ClassifyOptions { parallelism: args.parallelism, ..ClassifyOptions::default() })
}

fn resolve_prompt(spec: &str) -> Result<PromptConfig, Failure> {
    if let Some(p) = preset(spec) {
        return Ok(p);
    }
    let path = Path::new(spec);
    if path.is_file() {
        let mut prompts = load_prompts(path).map_err(|e| usage(format!("invalid prompt file: {e}")))?;
        if prompts.len() != 1 {
            return Err(usage(format!("{spec}: expected one prompt, found {}", prompts.len())));
        }
        let mut p = prompts.remove(0);
        if p.lineage.is_none() {
            p.lineage = Some(Lineage::initial());
        }
        return Ok(p);
    }
    let known: Vec<String> = prompt_library().into_iter().map(|p| p.prompt_id).collect();
    Err(usage(format!("unknown prompt {spec:?}; known presets: {}", known.join(", "))))
}

fn load_sop(path: &Path) -> Result<SopDocument, Failure> {
    let body = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read SOP {}: {e}", path.display())))?;
    let title = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "SOP".into());
    Ok(SopDocument { title, body })
}

fn classify_failure(e: ClassifyError) -> Failure {
    match e {
        ClassifyError::AbortedRun { .. } => Failure { code: EXIT_ABORTED, message: e.to_string() },
        ClassifyError::Template(_) | ClassifyError::InvalidParallelism => usage(e.to_string()),
        other => software(other.to_string()),
    }
}

pub fn agentic_run(a: AgenticRunArgs) -> CmdResult {
    let config = OrchestratorConfig {
        sensitivity_threshold: a.sens_threshold,
        specificity_threshold: a.spec_threshold,
        max_iterations: a.max_iters,
        sensitivity_delta_stop: a.delta_stop,
        improver_case_cap: a.case_cap,
        improver_char_budget: a.char_budget,
        rng_seed: a.seed,
        priority: match a.priority {
            PriorityArg::Sensitivity => RoutingPriority::SensitivityFirst,
            PriorityArg::Specificity => RoutingPriority::SpecificityFirst,
        },
        pairing: match a.pairing {
            PairingArg::ByRole => SummarizerPairing::ByRole,
            PairingArg::Swapped => SummarizerPairing::Swapped,
        },
        sop_routing: match a.sop_routing {
            SopRoutingArg::SpecificityImprover => SopRouting::SpecificityImprover,
            SopRoutingArg::Summarizer1 => SopRouting::Summarizer1,
        },
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let dataset = load_data(&a.data)?;
    let p0 = resolve_prompt(&a.prompt)?;
    let backend = build_backend(&a.backend)?;
    let options = classify_options(&a.backend)?;
    let sop = a.sop.as_deref().map(load_sop).transpose()?;
    if sop.is_none() {
        tracing::warn!("no --sop given; improvers and Summarizer 2 run without a guideline");
    }

    let run = run_agentic(&dataset, &p0, &config, &AgentProfiles::default(), sop.as_ref(), backend.as_ref(), &options)
        .map_err(|e| match e {
            AgenticError::Classify(c) => classify_failure(c),
            AgenticError::Eval(_) => software(e.to_string()),
            other => usage(other.to_string()),
        })?;

    print!("{}", metrics_table(&run.report_rows()));
    let refinements = run.iterations.len() - 1;
    let reason = run.outcome.unwrap_or(StopReason::Interrupted);
    println!("stop: {reason:?} after {refinements} refinement(s)");
    if let Some(last) = run.last() {
        if let Some(f) = &last.failure {
            println!("failure: {f}");
        }
    }
    if let Some(out) = &a.out {
        save_run(&run, out).map_err(|e| software(e.to_string()))?;
        eprintln!("run record written to {}", out.display());
    }
    Ok(())
}

pub fn apply(a: ApplyArgs) -> CmdResult {
    let prompts = a.prompt.iter().map(|p| resolve_prompt(p)).collect::<Result<Vec<_>, _>>()?;
    let dataset = load_data(&a.data)?;
    let backend = build_backend(&a.backend)?;
    let options = classify_options(&a.backend)?;
    let params = GenerationParams::default();
    let mut rows = Vec::new();
    for p in &prompts {
        let cohort = classify_cohort(&dataset, p, backend.as_ref(), &params, &options).map_err(classify_failure)?;
        let (counts, _) = evaluate(&dataset, &cohort).map_err(|e| software(e.to_string()))?;
        rows.push(ReportRow::new(p.prompt_id.clone(), counts));
    }
    print!("{}", comparison_table(&rows));
    Ok(())
}

fn parse_counts(s: &str) -> Result<ConfusionCounts, Failure> {
    let parts: Vec<u64> = s
        .split(',')
        .map(|x| x.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|e| usage(format!("--counts {s:?}: {e}")))?;
    match parts[..] {
        [tp, fp, tn, fn_] => Ok(ConfusionCounts::new(tp, fp, tn, fn_, 0)),
        [tp, fp, tn, fn_, unc] => Ok(ConfusionCounts::new(tp, fp, tn, fn_, unc)),
        _ => Err(usage(format!("--counts takes tp,fp,tn,fn[,uncertain], got {} values", parts.len()))),
    }
}

pub fn eval(a: EvalArgs) -> CmdResult {
    if let Some(c) = &a.counts {
        println!("{}", metrics(&parse_counts(c)?).summary_line());
        return Ok(());
    }
    let path = a.run.expect("clap enforces one source");
    let run = load_run(&path).map_err(|e| usage(e.to_string()))?;
    print!("{}", metrics_table(&run.report_rows()));
    if let Some(r) = run.outcome {
        println!("stop: {r:?}");
    }
    Ok(())
}

pub fn serve(a: ServeArgs) -> CmdResult {
    let dataset = load_data(&a.data)?;
    let backend = build_backend(&a.backend)?;
    let classify = classify_options(&a.backend)?;
    if a.sample_size == 0 {
        return Err(usage("--sample-size must be positive"));
    }
    let mut config = ServiceConfig::new(dataset, backend);
    config.classify = classify;
    config.orchestrator.rng_seed = a.seed;
    config.default_sample_size = a.sample_size;
    config.runs_dir = a.runs_dir;
    config.sessions_dir = a.sessions_dir;
    config.ui_dir = a.ui_dir;
    config.token = a.token.or_else(|| std::env::var(API_TOKEN_ENV).ok().filter(|t| !t.is_empty()));
    let state = AppState::new(config);

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| software(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", a.host, a.port);
        let listener =
            tokio::net::TcpListener::bind(&addr).await.map_err(|e| unavailable(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| unavailable(e.to_string()))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        cogscreen_api::serve(listener, state, shutdown_signal()).await.map_err(|e| software(e.to_string()))
    })
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    eprintln!("shutting down");
}

pub fn default_synthetic_spec() -> SyntheticSpec {
    SyntheticSpec::new(20, 10, (3, 3))
        .profile("P0", ConfusionCounts::new(9, 8, 2, 1, 0))
        .profile("AP1", ConfusionCounts::new(10, 9, 1, 0, 0))
        .profile("AP2", ConfusionCounts::new(8, 0, 6, 1, 5))
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let spec = match &a.spec {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read spec {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("invalid spec {}: {e}", p.display())))?
        }
        None => default_synthetic_spec(),
    };
    let (dataset, script) = generate_synthetic_cohort(&spec, a.seed).map_err(|e| usage(e.to_string()))?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| software(e.to_string()))?;
    let notes = a.out_dir.join("notes.jsonl");
    let labels = a.out_dir.join("labels.jsonl");
    let stub = a.out_dir.join("stub.json");
    write_dataset(&dataset, &notes, &labels).map_err(|e| software(e.to_string()))?;
    let body = serde_json::to_string_pretty(&script).expect("stub scripts serialize");
    std::fs::write(&stub, body + "\n").map_err(|e| software(e.to_string()))?;
    println!(
        "wrote {} patients / {} notes to {} and {}; stub script {}",
        dataset.patient_count(),
        dataset.note_count(),
        notes.display(),
        labels.display(),
        stub.display()
    );
    Ok(())
}
