use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use cap2skill::gateway::Mode;
use cap2skill::pipeline::Pipeline;
use cap2skill::{Overall, PipelineConfig, VerificationReport};
use clap::{Args, Parser, Subcommand};

/// Generate skill implementations from capability ontologies.
#[derive(Parser, Debug)]
#[command(name = "cap2skill", version)]
struct Cli {
    /// Pipeline configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Workspace directory; overrides the config.
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// Provider mode: live, record or replay.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Number of interfaces to retrieve.
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Accept code when no syntax checker is configured.
    #[arg(long, global = true)]
    allow_unchecked: bool,
    /// Capability to use when the ontology holds several.
    #[arg(long, global = true)]
    capability_iri: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Inputs {
    /// Capability ontology (Turtle).
    #[arg(long)]
    capability: PathBuf,
    /// Skill specification (.skillspec.json).
    #[arg(long)]
    spec: PathBuf,
    /// Interface catalog (JSON).
    #[arg(long)]
    catalog: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate the inputs and copy them into the workspace.
    Ingest(Inputs),
    /// Describe every interface and classify its relevance.
    Describe,
    /// Drop interfaces judged irrelevant.
    Filter,
    /// Embed the kept descriptions into the vector index.
    Index,
    /// Retrieve the top-k interfaces for the capability.
    Retrieve,
    /// Build the prompt and generate the skill code.
    Generate,
    /// Check the generated code and write the report.
    Verify,
    /// All stages in order.
    Run(Inputs),
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = &cli.workspace {
        config.workspace = Some(w.clone());
    }
    if let Some(m) = cli.mode {
        config.mode = m;
    }
    if let Some(k) = cli.k {
        config.retrieval_k = k;
    }
    if cli.allow_unchecked {
        config.allow_unchecked = true;
    }
    if let Some(iri) = &cli.capability_iri {
        config.capability_iri = Some(iri.clone());
    }
    config.validate()?;
    if config.workspace.is_none() {
        anyhow::bail!("no workspace given; pass --workspace or set \"workspace\" in the config");
    }
    Ok(config)
}

fn print_report(report: &VerificationReport) {
    let a = &report.annotations;
    println!("skill:        {}", report.skill);
    println!("syntax:       {:?}", report.syntax.status);
    println!("annotations:  skill {:?}, parameters {:?}, outputs {:?}, states {:?}",
        a.skill.status, a.parameters.outcome.status, a.outputs.outcome.status, a.states.outcome.status);
    println!("interfaces:   used {:?}, unused {:?}, unretrieved {:?}",
        report.interface_usage.retrieved_used,
        report.interface_usage.retrieved_unused,
        report.interface_usage.unretrieved_used);
    println!("code lines:   {}", report.code_lines);
    for f in &report.findings {
        println!("finding:      {f}");
    }
    println!("overall:      {:?}", report.overall);
}

fn exit_for(overall: Overall) -> ExitCode {
    ExitCode::from(overall.exit_code() as u8)
}

fn execute(cli: &Cli) -> anyhow::Result<ExitCode> {
    let config = load_config(cli)?;
    let pipeline = Pipeline::open(config).context("cannot open workspace")?;
    match &cli.command {
        Command::Ingest(i) => {
            let s = pipeline.ingest(&i.capability, &i.spec, &i.catalog)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            println!("capability {} / skill {} / {} interfaces", s.capability_iri, s.skill_name, s.interfaces);
        }
        Command::Describe => {
            let (descriptions, verdicts) = pipeline.describe()?;
            print!("{} descriptions", descriptions.len());
            match verdicts {
                Some(v) => println!(", {} relevant of {}", v.iter().filter(|v| v.relevant).count(), v.len()),
                None => println!(", relevance check disabled"),
            }
        }
        Command::Filter => {
            let r = pipeline.filter()?;
            println!("kept {}, excluded {}", r.kept.len(), r.excluded.len());
        }
        Command::Index => {
            let index = pipeline.index()?;
            println!("indexed {} descriptions", index.len());
        }
        Command::Retrieve => {
            let r = pipeline.retrieve()?;
            for h in &r.hits {
                println!("{}. {} ({:.4})", h.rank, h.id, h.score);
            }
        }
        Command::Generate => {
            let g = pipeline.generate()?;
            for w in &g.warnings {
                eprintln!("warning: {w}");
            }
            println!("generated {} lines", g.code.lines().count());
        }
        Command::Verify => {
            let report = pipeline.verify()?;
            print_report(&report);
            return Ok(exit_for(report.overall));
        }
        Command::Run(i) => {
            let outcome = pipeline.run(&i.capability, &i.spec, &i.catalog)?;
            println!("retrieved:    {}", outcome.retrieval.hit_ids().join(", "));
            print_report(&outcome.report);
            println!("run record:   {}", outcome.record_path.display());
            return Ok(exit_for(outcome.report.overall));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
