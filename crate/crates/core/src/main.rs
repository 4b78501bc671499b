use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use vapitest::forge::{forge, ForgeOptions, Profile, MANIFEST_FILE, RIG_FILE};
use vapitest::ingest::TestObjectSet;
use vapitest::matching::{MatchOutcome, Strictness};
use vapitest::report::{emit_report, exit_code, ReportFormat};
use vapitest::rig::start_rig;
use vapitest::testgen::GenConfig;
use vapitest::workflow::{self, BackendConfig, BackendKind, RigTarget, RunConfig, RunMeta, StageError};

#[derive(Parser)]
#[command(name = "vapitest", version, about = "Generate and run vehicle API tests from a spec and signal tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write all artifacts to --out.
    E2e(E2eArgs),
    /// Extract test objects from a spec.
    Ingest {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map test objects to CAN signals and VV states.
    Match {
        #[arg(long)]
        can_table: PathBuf,
        #[arg(long)]
        vv_table: PathBuf,
        #[command(flatten)]
        matching: MatchArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate test cases and the plan from match results.
    Gen {
        #[arg(long)]
        ranges: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute the plan against a rig.
    Run {
        #[command(flatten)]
        rig: RigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild the report from the artifacts of a run.
    Report {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "human")]
        format: FormatArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a standalone rig until interrupted.
    Rig {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
    /// Write a synthetic corpus with its ground-truth manifest.
    Forge {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        profile: Profile,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        faults: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long, default_value = "moderate")]
    strictness: Strictness,
    #[arg(long, default_value = "rules")]
    backend: BackendKind,
    /// Remote matcher URL (`rules:` answers through the local rule matcher).
    #[arg(long)]
    backend_url: Option<String>,
    #[arg(long)]
    replay_store: Option<PathBuf>,
    #[arg(long, default_value_t = vapitest::backend::DEFAULT_MAX_RETRIES)]
    max_retries: u32,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    /// Directory of lexicon files overriding the bundled ones.
    #[arg(long)]
    lexicons: Option<PathBuf>,
}

impl MatchArgs {
    fn backend(&self) -> BackendConfig {
        BackendConfig {
            kind: self.backend,
            url: self.backend_url.clone(),
            store: self.replay_store.clone(),
            max_retries: self.max_retries,
            parallelism: self.parallelism,
            lexicons: self.lexicons.clone(),
        }
    }
}

#[derive(Args)]
struct RigArgs {
    #[arg(long, default_value = "auto")]
    rig: RigTarget,
    /// Rig config for `--rig auto`; defaults to rig.json beside the spec.
    #[arg(long)]
    rig_config: Option<PathBuf>,
}

#[derive(Args)]
struct E2eArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    can_table: PathBuf,
    #[arg(long)]
    vv_table: PathBuf,
    #[command(flatten)]
    matching: MatchArgs,
    #[command(flatten)]
    rig: RigArgs,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    ranges: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "human")]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Human,
    Record,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Human => ReportFormat::Human,
            FormatArg::Record => ReportFormat::Record,
        }
    }
}

enum Failure {
    Usage(String),
    Stage(StageError),
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

fn require(paths: &[(&str, &Path)]) -> Result<(), Failure> {
    for (flag, p) in paths {
        if !p.exists() {
            return Err(Failure::Usage(format!("--{flag}: {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn ranges(path: Option<&Path>) -> Result<GenConfig, Failure> {
    match path {
        None => Ok(GenConfig::default()),
        Some(p) => {
            require(&[("ranges", p)])?;
            Ok(workflow::read_json(p)?)
        }
    }
}

fn millis(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

/// Look for `name` next to the spec recorded by the ingest stage.
fn beside_spec(out: &Path, name: &str) -> Result<Option<PathBuf>, Failure> {
    let meta: RunMeta = workflow::read_json(&out.join(workflow::META_FILE))?;
    let p = Path::new(&meta.spec).parent().unwrap_or(Path::new(".")).join(name);
    Ok(p.exists().then_some(p))
}

fn mkdir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Stage(StageError { stage: "write", message: format!("{}: {e}", dir.display()) }))
}

fn execute(cmd: Command) -> Result<u8, Failure> {
    match cmd {
        Command::E2e(a) => {
            require(&[("spec", &a.spec), ("can-table", &a.can_table), ("vv-table", &a.vv_table)])?;
            let mut cfg = RunConfig::new(&a.spec, &a.can_table, &a.vv_table, &a.out);
            cfg.strictness = a.matching.strictness;
            cfg.backend = a.matching.backend();
            cfg.rig = a.rig.rig;
            cfg.rig_config = a.rig.rig_config;
            cfg.manifest = a.manifest;
            cfg.gen = ranges(a.ranges.as_deref())?;
            let report = workflow::run_e2e(&cfg)?;
            print!("{}", emit_report(&report, a.format.into()));
            Ok(exit_code(&report) as u8)
        }
        Command::Ingest { spec, out } => {
            require(&[("spec", &spec)])?;
            mkdir(&out)?;
            let t = Instant::now();
            let sets = workflow::ingest_stage(&spec)?;
            workflow::write_json(&out.join(workflow::OBJECTS_FILE), &sets)?;
            workflow::update_meta(&out, |m| {
                m.spec = spec.display().to_string();
                m.timings_ms.insert("ingest".into(), millis(t));
            })?;
            println!("{} test object sets", sets.len());
            Ok(0)
        }
        Command::Match { can_table, vv_table, matching, out } => {
            require(&[("can-table", &can_table), ("vv-table", &vv_table)])?;
            let t = Instant::now();
            let sets: Vec<TestObjectSet> = workflow::read_json(&out.join(workflow::OBJECTS_FILE))?;
            let (can, vv) = workflow::load_tables(&can_table, &vv_table)?;
            let backend = workflow::make_backend(&matching.backend())?;
            let outcome = workflow::match_stage(&sets, &can, &vv, matching.strictness, backend.as_ref(), matching.parallelism);
            workflow::write_json(&out.join(workflow::MATCHES_FILE), &outcome)?;
            workflow::update_meta(&out, |m| {
                m.strictness = matching.strictness;
                m.backend = backend.name().to_string();
                m.timings_ms.insert("match".into(), millis(t));
            })?;
            println!("{} matched, {} skipped", outcome.results.len(), outcome.skipped.len());
            Ok(0)
        }
        Command::Gen { ranges: r, out } => {
            let config = ranges(r.as_deref())?;
            let t = Instant::now();
            let outcome: MatchOutcome = workflow::read_json(&out.join(workflow::MATCHES_FILE))?;
            let (cases, plan) = workflow::gen_stage(&outcome, &config);
            workflow::write_json(&out.join(workflow::CASES_FILE), &cases)?;
            fs::write(out.join(workflow::PLAN_FILE), &plan)
                .map_err(|e| Failure::Stage(StageError { stage: "write", message: e.to_string() }))?;
            workflow::update_meta(&out, |m| {
                m.timings_ms.insert("generate".into(), millis(t));
            })?;
            println!("{} cases, {} skipped", cases.cases.len(), cases.skipped.len());
            Ok(0)
        }
        Command::Run { rig, out } => {
            let plan = fs::read_to_string(out.join(workflow::PLAN_FILE))
                .map_err(|e| Failure::Stage(StageError { stage: "run", message: e.to_string() }))?;
            let rig_config = match (&rig.rig, rig.rig_config) {
                (RigTarget::Auto, None) => match beside_spec(&out, RIG_FILE)? {
                    Some(p) => Some(p),
                    None => return Err(Failure::Usage("--rig auto needs --rig-config".into())),
                },
                (_, c) => c,
            };
            if let Some(c) = &rig_config {
                require(&[("rig-config", c)])?;
            }
            let t = Instant::now();
            let run = workflow::run_stage(&plan, &rig.rig, rig_config.as_deref())?;
            workflow::write_json(&out.join(workflow::OUTCOMES_FILE), &run)?;
            workflow::update_meta(&out, |m| {
                m.timings_ms.insert("run".into(), millis(t));
            })?;
            println!("{} outcomes", run.outcomes.len());
            Ok(0)
        }
        Command::Report { manifest, format, out } => {
            let manifest = match manifest {
                Some(m) => {
                    require(&[("manifest", &m)])?;
                    Some(m)
                }
                None => beside_spec(&out, MANIFEST_FILE)?,
            };
            let report = workflow::report_from_dir(&out, manifest.as_deref())?;
            print!("{}", emit_report(&report, format.into()));
            Ok(exit_code(&report) as u8)
        }
        Command::Rig { config, port } => {
            require(&[("config", &config)])?;
            let cfg = workflow::load_rig_config(&config)?;
            let handle = start_rig(cfg, port).map_err(|e| Failure::Stage(StageError { stage: "rig", message: e.to_string() }))?;
            println!("rig listening on {}", handle.url());
            loop {
                std::thread::park();
            }
        }
        Command::Forge { seed, profile, size, faults, out } => {
            let corpus = forge(&ForgeOptions { seed, profile, size, faults })
                .map_err(|e| Failure::Stage(StageError { stage: "forge", message: e.to_string() }))?;
            corpus.write_to(&out).map_err(|e| Failure::Stage(StageError { stage: "forge", message: e.to_string() }))?;
            let m = &corpus.manifest;
            println!(
                "{} APIs, {} mappings, {} perturbations, {} unmappable, {} faults",
                m.apis.len(),
                m.true_mappings.len(),
                m.perturbations.len(),
                m.unmappable.len(),
                m.faults.len()
            );
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
