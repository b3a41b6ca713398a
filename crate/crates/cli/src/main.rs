use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use lshmc::diagnostics::{
    grad_concentration_report, omega_fraction, projected_ks, ClaimReport, MonteCarloEstimate, OmegaThreshold,
};
use lshmc::experiments::{lower_bound_experiment, scaling_study, LowerBoundRunSpec, ScalingRunSpec};
use lshmc::hmc::{check_equivalence, default_step_size_for};
use lshmc::report::{emit_report, Cell, ColumnKind, ReportFormat, Table};
use lshmc::rng::{derive_seed, stream_rng};
use lshmc::sampler::{boosted_sample, replicate, run_chains, write_chains_csv};
use lshmc::target::validate_target;
use lshmc::{make_target, Error, HmcConfig, Target, TargetSpec};

mod config;

#[derive(Parser, Debug)]
#[command(name = "lshmc", version, about = "Metropolized HMC sampler and experiments", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML file of `key = value` pairs named like the long flags; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for chains and replicates.
    #[arg(long, global = true, env = "LSHMC_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
enum Command {
    /// Run chains from warm starts and write their iterates.
    Sample {
        #[command(flatten)]
        #[serde(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        #[serde(flatten)]
        sampling: SamplingArgs,
        /// Draw one boosted sample per chain instead of recording trajectories.
        #[arg(long)]
        boosted: bool,
        #[command(flatten)]
        #[serde(skip)]
        output: OutputArgs,
    },
    /// Run chains and check gradient-concentration claims on their iterates.
    Diagnose {
        #[command(flatten)]
        #[serde(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        #[serde(flatten)]
        sampling: SamplingArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        c_values: Vec<f64>,
        #[command(flatten)]
        #[serde(skip)]
        output: OutputArgs,
    },
    /// Compare HMC and MALA acceptance ratios on coupled proposals.
    Equivalence {
        #[command(flatten)]
        #[serde(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        #[serde(flatten)]
        step: StepArgs,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        #[serde(skip)]
        output: OutputArgs,
    },
    /// Acceptance collapse for step sizes η = c/√κ on the hard instance.
    LowerBound {
        #[arg(long, default_value_t = 1e4)]
        kappa: f64,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,40")]
        c_values: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        mc_draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        #[serde(skip)]
        output: OutputArgs,
    },
    /// Iterations to mix over a (κ, d) grid of hard instances.
    Scaling {
        #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
        kappas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "16")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        #[arg(long, default_value_t = 0.05)]
        ks_threshold: f64,
        #[arg(long, default_value_t = 20_000_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 256)]
        chains: usize,
        #[arg(long, default_value_t = 1.0)]
        budget_const: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        #[serde(skip)]
        output: OutputArgs,
    },
    /// Probe a target's gradient, smoothness and strong convexity.
    ValidateTarget {
        #[command(flatten)]
        #[serde(flatten)]
        target: TargetArgs,
        /// Number of probe points.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        #[serde(skip)]
        output: OutputArgs,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum TargetChoice {
    GaussianIso,
    GaussianDiag,
    Hard,
    Quartic,
}

#[derive(Args, Debug, Serialize)]
struct TargetArgs {
    #[arg(long, value_enum, default_value_t = TargetChoice::Hard)]
    target: TargetChoice,
    /// Condition number of the hard instance.
    #[arg(long, default_value_t = 10.0)]
    kappa: f64,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    /// Comma-separated eigenvalues (gaussian-diag, quartic).
    #[arg(long, value_delimiter = ',')]
    eigs: Option<Vec<f64>>,
    /// Comma-separated location of the minimizer.
    #[arg(long, value_delimiter = ',')]
    shift: Option<Vec<f64>>,
    /// Log-cosh weight (quartic).
    #[arg(long, default_value_t = 1.0)]
    weight: f64,
}

impl TargetArgs {
    fn spec(&self) -> Result<TargetSpec, Failure> {
        let eigs = || {
            self.eigs
                .clone()
                .ok_or_else(|| Failure::Usage(format!("--target {:?} needs --eigs", self.target)))
        };
        let spec = match self.target {
            TargetChoice::GaussianIso => TargetSpec::gaussian_iso(self.dim),
            TargetChoice::GaussianDiag => TargetSpec::gaussian_diag(eigs()?),
            TargetChoice::Hard => TargetSpec::hard_instance(self.kappa, self.dim),
            TargetChoice::Quartic => TargetSpec::quartic_mix(eigs()?, self.weight),
        };
        Ok(match &self.shift {
            Some(b) => spec.with_shift(b.clone()),
            None => spec,
        })
    }

    fn build(&self) -> Result<(TargetSpec, Target), Failure> {
        let spec = self.spec()?;
        let target = make_target(&spec)?;
        Ok((spec, target))
    }
}

#[derive(Args, Debug, Serialize)]
struct StepArgs {
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    /// Explicit step size.
    #[arg(long, conflicts_with = "paper_step")]
    eta: Option<f64>,
    /// Use η² = 1/(20·L·d·max(1, log(κ/ε))) (the default when --eta is absent).
    #[arg(long)]
    paper_step: bool,
}

impl StepArgs {
    fn eta(&self, target: &Target) -> Result<f64, Failure> {
        match self.eta {
            Some(eta) => Ok(eta),
            None => Ok(default_step_size_for(target, self.eps)?.eta),
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct SamplingArgs {
    #[command(flatten)]
    #[serde(flatten)]
    step: StepArgs,
    /// Inner iterations; defaults to the budget for (κ, d, ε).
    #[arg(long)]
    k: Option<usize>,
    /// Boosting rounds; defaults to ⌈log(1/ε)⌉.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    budget_const: f64,
}

impl SamplingArgs {
    fn config(&self, target: &Target) -> Result<HmcConfig, Failure> {
        let mut cfg = HmcConfig::for_target(target, self.step.eps, self.budget_const, self.seed)?;
        cfg.eta = self.step.eta(target)?;
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(r) = self.rounds {
            cfg.outer_rounds = r;
        }
        cfg.n_chains = self.chains;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug, Default)]
struct OutputArgs {
    #[arg(long, default_value = "lshmc-out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum Format {
    #[default]
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidSpec(_) | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

/// Summary printed on stdout, and whether every claim checked passed.
struct Outcome {
    summary: Value,
    passed: bool,
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("i/o error on {}: {e}", path.display()))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_failure(&path, e))
}

fn pooled_samples(chains: &[lshmc::Chain]) -> Vec<Vec<f64>> {
    chains
        .iter()
        .flat_map(|c| {
            let skip = usize::from(c.samples.len() > 1);
            c.samples[skip..].iter().cloned()
        })
        .collect()
}

fn accept_rate(chains: &[lshmc::Chain]) -> Option<f64> {
    let steps: usize = chains.iter().map(|c| c.steps()).sum();
    let acc: usize = chains.iter().map(|c| c.accept_flags.iter().filter(|&&a| a).count()).sum();
    (steps > 0).then(|| acc as f64 / steps as f64)
}

fn sample_summary(spec: &TargetSpec, target: &Target, cfg: &HmcConfig, samples: &[Vec<f64>], acc: Option<f64>) -> Result<Value, Failure> {
    let report = grad_concentration_report(target, samples, &[])?;
    Ok(json!({
        "target": spec.name(),
        "kappa": target.condition_number(),
        "dim": target.dim(),
        "eta": cfg.eta,
        "eps": cfg.eps,
        "k_inner": cfg.k,
        "rounds": cfg.outer_rounds,
        "seed": cfg.seed,
        "accept_rate": acc,
        "mean_grad_norm": report.mean_grad_norm,
        "ks_per_coordinate": report.ks_per_coordinate,
    }))
}

fn with_provenance(mut v: Value, provenance: &Value) -> Value {
    v["provenance"] = provenance.clone();
    v
}

fn run(cmd: &Command, provenance: &Value) -> Result<Outcome, Failure> {
    match cmd {
        Command::Sample {
            target,
            sampling,
            boosted,
            output,
        } => {
            let (spec, target) = target.build()?;
            let cfg = sampling.config(&target)?;
            let (samples, acc) = if *boosted {
                let draws = replicate(cfg.n_chains, cfg.seed, |_, rng| boosted_sample(&target, &cfg, rng))?;
                let mut cols: Vec<(String, ColumnKind)> = vec![("replicate".into(), ColumnKind::Int)];
                cols.extend((0..target.dim()).map(|i| (format!("x_{i}"), ColumnKind::Float)));
                let cols: Vec<(&str, ColumnKind)> = cols.iter().map(|(n, k)| (n.as_str(), *k)).collect();
                let mut table = Table::new("boosted", &cols);
                for (i, x) in draws.iter().enumerate() {
                    let mut row = vec![Cell::from(i)];
                    row.extend(x.iter().map(|&v| Cell::from(v)));
                    table.push(row)?;
                }
                emit_report(&[table], &output.out_dir, output.format.into(), provenance)?;
                (draws, None)
            } else {
                let chains = run_chains(&target, &cfg)?;
                fs::create_dir_all(&output.out_dir).map_err(|e| io_failure(&output.out_dir, e))?;
                let path = output.out_dir.join("chains.csv");
                let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
                let prov = format!("provenance: {provenance}");
                write_chains_csv(std::io::BufWriter::new(file), &chains, Some(&prov))?;
                (pooled_samples(&chains), accept_rate(&chains))
            };
            let summary = sample_summary(&spec, &target, &cfg, &samples, acc)?;
            write_json(&output.out_dir, "summary.json", &with_provenance(summary.clone(), provenance))?;
            Ok(Outcome { summary, passed: true })
        }
        Command::Diagnose {
            target,
            sampling,
            c_values,
            output,
        } => {
            let (spec, target) = target.build()?;
            let cfg = sampling.config(&target)?;
            let chains = run_chains(&target, &cfg)?;
            let samples = pooled_samples(&chains);
            let report = grad_concentration_report(&target, &samples, c_values)?;
            let thr = OmegaThreshold::for_target(&target, cfg.eps)?;
            let omega = omega_fraction(&target, &thr, &samples);
            let mut rng = stream_rng(derive_seed(cfg.seed, 1), 0);
            let projections = projected_ks(&target, &samples, 5, &mut rng);

            let mut claims = vec![ClaimReport::upper(
                "grad-mean",
                "mean gradient norm under the target",
                report.mean_grad_norm,
                report.mean_bound,
                report.mean_grad_norm_se,
            )];
            for t in &report.tail_fractions {
                claims.push(ClaimReport::upper(
                    &format!("grad-tail-c{}", t.c),
                    "gradient norm tail",
                    t.fraction,
                    t.bound,
                    t.standard_error,
                ));
            }
            let omega_se = MonteCarloEstimate::proportion((omega * samples.len() as f64).round() as usize, samples.len());
            claims.push(ClaimReport::lower(
                "omega-mass",
                "mass of the low-gradient set",
                omega,
                1.0 - (-4.0 * target.dim() as f64 * (target.condition_number() / cfg.eps).ln()).exp(),
                omega_se.standard_error,
            ));
            let passed = claims.iter().all(|c| c.pass);

            let mut summary = sample_summary(&spec, &target, &cfg, &samples, accept_rate(&chains))?;
            summary["omega_fraction"] = json!(omega);
            summary["claims_passed"] = json!(passed);
            let details = json!({
                "claims": claims,
                "empirical": report,
                "projections": projections,
                "omega_threshold": thr.value,
            });
            write_json(&output.out_dir, "claims.json", &with_provenance(details, provenance))?;
            write_json(&output.out_dir, "summary.json", &with_provenance(summary.clone(), provenance))?;
            Ok(Outcome { summary, passed })
        }
        Command::Equivalence {
            target,
            step,
            trials,
            seed,
            output,
        } => {
            let (spec, target) = target.build()?;
            let eta = step.eta(&target)?;
            let report = check_equivalence(&target, eta, *trials, *seed)?;
            let mut summary = serde_json::to_value(&report).expect("plain data");
            summary["target"] = json!(spec.name());
            write_json(&output.out_dir, "equivalence.json", &with_provenance(summary.clone(), provenance))?;
            Ok(Outcome {
                summary,
                passed: report.equivalent,
            })
        }
        Command::LowerBound {
            kappa,
            dim,
            c_values,
            mc_draws,
            seed,
            output,
        } => {
            let spec = LowerBoundRunSpec {
                kappa: *kappa,
                dim: *dim,
                c_values: c_values.clone(),
                n_draws: *mc_draws,
                seed: *seed,
            };
            let result = lower_bound_experiment(&spec)?;
            let files = emit_report(&[result.table()], &output.out_dir, output.format.into(), provenance)?;
            let identity_err = result.rows.iter().map(|r| r.max_identity_rel_err).fold(0.0, f64::max);
            let violations: usize = result.rows.iter().map(|r| r.hambound_violations).sum();
            let monotone = result.rows.windows(2).all(|w| {
                let slack = 3.0 * (w[0].accept_rate_se.powi(2) + w[1].accept_rate_se.powi(2)).sqrt();
                w[1].accept_rate <= w[0].accept_rate + slack
            });
            let summary = json!({
                "experiment": "lower-bound",
                "file": files[0].file_name().and_then(|s| s.to_str()),
                "accept_rates": result.rows.iter().map(|r| r.accept_rate).collect::<Vec<_>>(),
                "mean_log_accept": result.rows.iter().map(|r| r.mean_log_accept).collect::<Vec<_>>(),
                "collapse_exponent": result.collapse_exponent().ok(),
                "max_identity_rel_err": identity_err,
                "hambound_violations": violations,
                "accept_monotone": monotone,
            });
            Ok(Outcome {
                passed: identity_err <= 1e-8 && violations == 0 && monotone,
                summary,
            })
        }
        Command::Scaling {
            kappas,
            dims,
            eps,
            ks_threshold,
            max_iters,
            chains,
            budget_const,
            seed,
            output,
        } => {
            let spec = ScalingRunSpec {
                kappas: kappas.clone(),
                dims: dims.clone(),
                eps: *eps,
                ks_threshold: *ks_threshold,
                max_iters: *max_iters,
                n_chains: *chains,
                budget_const: *budget_const,
                seed: *seed,
            };
            let result = scaling_study(&spec)?;
            let files = emit_report(&[result.table()], &output.out_dir, output.format.into(), provenance)?;
            let unresolved = result.rows.iter().filter(|r| !r.resolved()).count();
            let summary = json!({
                "experiment": "scaling",
                "file": files[0].file_name().and_then(|s| s.to_str()),
                "k_hat": result.rows.iter().map(|r| r.k_hat).collect::<Vec<_>>(),
                "slope_kappa": (kappas.len() > 1 && dims.len() == 1).then(|| result.slope(true).ok()).flatten(),
                "slope_dim": (dims.len() > 1 && kappas.len() == 1).then(|| result.slope(false).ok()).flatten(),
                "unresolved": unresolved,
            });
            Ok(Outcome {
                summary,
                passed: unresolved == 0,
            })
        }
        Command::ValidateTarget {
            target,
            trials,
            seed,
            output,
        } => {
            let (spec, target) = target.build()?;
            let report = validate_target(&target, *trials, *seed)?;
            let summary = json!({
                "target": spec.name(),
                "dim": target.dim(),
                "n_probes": report.n_probes,
                "passed": report.passed(),
                "margins": report.checks().iter().map(|c| (c.name, c.margin())).collect::<Vec<_>>(),
            });
            write_json(
                &output.out_dir,
                "validation.json",
                &with_provenance(serde_json::to_value(&report).expect("plain data"), provenance),
            )?;
            Ok(Outcome {
                passed: report.passed(),
                summary,
            })
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let args = match config::merge_config_file(args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    let provenance = json!({
        "tool": "lshmc",
        "version": env!("CARGO_PKG_VERSION"),
        "config": cli.command,
    });
    match run(&cli.command, &provenance) {
        Ok(out) => {
            println!("{}", out.summary);
            ExitCode::from(if out.passed { 0 } else { 1 })
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
