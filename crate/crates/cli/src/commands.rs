//! Subcommand pipelines. Each run writes its artifacts and returns the exit
//! status; failures still produce a report carrying the diagnostic.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use tiebout::equilibrium::{
    solve_basic, solve_extended, verify_equilibrium, EquilibriumReport, ExtendedContext, FeasibleBox, Provider,
    ProviderSpec,
};
use tiebout::measure::SampledMeasure;
use tiebout::partition::{extract_border, indifference_locus, partition_csv, NominalState, Partition};
use tiebout::stability::classify_stability;
use tiebout::sweep::{comparative_statics, sweep_csv, weak_stability_regression};
use tiebout::welfare::{aggregate_welfare, pareto_probe};

use crate::config::{ExperimentConfig, Mode};
use crate::diagnostics::{hyperbola_probe, small_group_probe};
use crate::error::{CliError, EXIT_ASSUMPTION, EXIT_OK};
use crate::report::{Diagnostic, Output, Report, Severity, Status};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Solve,
    Verify { report: PathBuf },
    Stability,
    Welfare,
    Sweep,
    Plotdata { locus: bool, borders: bool, partition: bool },
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Verify { .. } => "verify",
            Command::Stability => "stability",
            Command::Welfare => "welfare",
            Command::Sweep => "sweep",
            Command::Plotdata { .. } => "plotdata",
            Command::Validate => "validate",
        }
    }

    fn report_name(&self) -> &'static str {
        match self {
            Command::Verify { .. } => "verify.json",
            Command::Validate => "validation.json",
            _ => "report.json",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flags {
    /// Output directory; the config's `[output] dir` when absent.
    pub out: Option<PathBuf>,
    /// Worker threads; rayon's default when absent.
    pub threads: Option<usize>,
    pub allow_empty: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub report: Report,
    pub written: Vec<PathBuf>,
}

/// Runs `command` on the config at `config_path`.
pub fn run(command: &Command, config_path: &Path, flags: &Flags) -> RunOutcome {
    let mut report = Report::new(command.name());
    let loaded = ExperimentConfig::load(config_path);
    let dir = flags
        .out
        .clone()
        .or_else(|| loaded.as_ref().ok().map(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut output = Output::new(dir);
    let result = loaded.and_then(|mut config| {
        if flags.allow_empty {
            config.solver.allow_empty = true;
        }
        report.mode = Some(config.mode());
        with_threads(flags.threads, || dispatch(command, &config, &mut report, &mut output)).and_then(|r| r)
    });
    let mut exit_code = match result {
        Ok(code) => code,
        Err(e) => {
            report.diagnostics.push(Diagnostic::from_error(&e));
            e.exit_code()
        }
    };
    if exit_code != EXIT_OK {
        report.status = Status::Failed;
    }
    if let Err(e) = output.write(command.report_name(), &report.to_json()) {
        report.diagnostics.push(Diagnostic::from_error(&e));
        exit_code = exit_code.max(e.exit_code());
    }
    RunOutcome { exit_code, report, written: output.written().to_vec() }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Invalid(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn dispatch(
    command: &Command,
    config: &ExperimentConfig,
    report: &mut Report,
    output: &mut Output,
) -> Result<i32, CliError> {
    if *command == Command::Validate {
        return validate(config, report);
    }
    config.validate()?;
    let measure = config.measure.build()?;
    match command {
        Command::Solve => {
            report.equilibria = solve(config, &measure)?;
            output.write("partition.csv", &partitions_csv(config, &measure, &report.equilibria))?;
            Ok(EXIT_OK)
        }
        Command::Verify { report: path } => verify(config, &measure, path, report),
        Command::Stability => {
            let mut equilibria = solve(config, &measure)?;
            for eq in &mut equilibria {
                let verdict = classify_stability(&config.costs, &measure, eq, &config.stability);
                eq.stability_verdict = Some(verdict);
            }
            output.write("borders.csv", &borders_csv(config, &measure, &equilibria, &mut report.diagnostics))?;
            report.equilibria = equilibria;
            Ok(EXIT_OK)
        }
        Command::Welfare => welfare(config, &measure, report),
        Command::Sweep => {
            let plan =
                config.sweep.as_ref().ok_or_else(|| CliError::Invalid("sweep needs a [sweep] section".into()))?;
            if config.mode() != Mode::Basic {
                return Err(CliError::Invalid("sweeps support the basic model only".into()));
            }
            let table = comparative_statics(&config.costs, &measure, plan, &config.solver, &config.stability)?;
            let regression = weak_stability_regression(&table);
            if !regression.passed {
                report.diagnostics.push(
                    Diagnostic::new(
                        "weak-stability-regression",
                        Severity::Warning,
                        "weakly unstable sweep points found",
                    )
                    .with_details(json!(regression.violations)),
                );
            }
            output.write("sweep.csv", &sweep_csv(&table))?;
            report.analysis = Some(json!({ "sweep": table, "weak_stability_regression": regression }));
            Ok(EXIT_OK)
        }
        Command::Plotdata { locus, borders, partition } => {
            let everything = !(*locus || *borders || *partition);
            let mut analysis = serde_json::Map::new();
            if *locus || (everything && config.plot.locus.is_some()) {
                let spec = config
                    .plot
                    .locus
                    .as_ref()
                    .ok_or_else(|| CliError::Invalid("--locus needs a [plot.locus] section".into()))?;
                let (csv, kinds) = locus_csv(config, spec);
                output.write("locus.csv", &csv)?;
                analysis.insert("locus".into(), kinds);
            }
            if *borders || *partition || everything {
                let equilibria = solve(config, &measure)?;
                if *borders || everything {
                    output
                        .write("borders.csv", &borders_csv(config, &measure, &equilibria, &mut report.diagnostics))?;
                }
                if *partition || everything {
                    output.write("partition.csv", &partitions_csv(config, &measure, &equilibria))?;
                }
                report.equilibria = equilibria;
            }
            report.analysis = Some(Value::Object(analysis));
            Ok(EXIT_OK)
        }
        Command::Validate => unreachable!("handled above"),
    }
}

fn providers_or_passive(config: &ExperimentConfig) -> ProviderSpec {
    config.providers.clone().unwrap_or_else(|| ProviderSpec {
        providers: (0..config.costs.communities)
            .map(|_| Provider {
                utility: Vec::new(),
                feasible: FeasibleBox { lower: Vec::new(), upper: Vec::new() },
                initial: None,
            })
            .collect(),
    })
}

fn extended_context<'a>(config: &'a ExperimentConfig, providers: &'a ProviderSpec) -> Option<ExtendedContext<'a>> {
    (config.mode() == Mode::Extended).then_some(ExtendedContext { characteristics: &config.characteristics, providers })
}

fn solve(config: &ExperimentConfig, measure: &SampledMeasure) -> Result<Vec<EquilibriumReport>, CliError> {
    let reports = match config.mode() {
        Mode::Basic => solve_basic(&config.costs, measure, &config.solver)?,
        Mode::Extended => {
            let providers = providers_or_passive(config);
            solve_extended(&config.costs, &config.characteristics, &providers, measure, &config.solver)?
        }
    };
    Ok(reports)
}

fn verify(
    config: &ExperimentConfig,
    measure: &SampledMeasure,
    path: &Path,
    report: &mut Report,
) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
    let stored: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    let entries = stored
        .get("equilibria")
        .and_then(Value::as_array)
        .ok_or_else(|| CliError::Schema(format!("{} has no equilibria list", path.display())))?;
    let providers = providers_or_passive(config);
    let context = extended_context(config, &providers);
    let tolerance = config.solver.tolerance;
    let mut verifications = Vec::new();
    let mut exit_code = EXIT_OK;
    for (e, entry) in entries.iter().enumerate() {
        let state: NominalState = serde_json::from_value(entry.get("state").cloned().unwrap_or(Value::Null))
            .map_err(|err| CliError::Schema(format!("equilibrium {e}: {err}")))?;
        state.validate()?;
        if state.m.len() != config.costs.communities {
            return Err(CliError::Invalid(format!("equilibrium {e} has {} sizes", state.m.len())));
        }
        let candidate = EquilibriumReport {
            state,
            partition: Partition::default(),
            realized_sizes: Vec::new(),
            residuals: Default::default(),
            all_nonempty: false,
            iterations: 0,
            start_index: e,
            stability_verdict: None,
            welfare_summary: None,
        };
        let check = verify_equilibrium(&config.costs, measure, &candidate, context, tolerance);
        if !check.certified {
            exit_code = EXIT_ASSUMPTION;
            report.diagnostics.push(
                Diagnostic::new(
                    "not-certified",
                    Severity::Error,
                    format!("equilibrium {e} fails certification at tolerance {tolerance:e}"),
                )
                .with_details(
                    json!({ "equilibrium": e, "residuals": check.residuals, "all_nonempty": check.all_nonempty }),
                ),
            );
        }
        verifications.push(json!({ "equilibrium": e, "m": candidate.state.m, "verification": check }));
    }
    report.analysis = Some(json!({ "source": path.display().to_string(), "verifications": verifications }));
    Ok(exit_code)
}

fn welfare(config: &ExperimentConfig, measure: &SampledMeasure, report: &mut Report) -> Result<i32, CliError> {
    let mut equilibria = solve(config, measure)?;
    let settings = &config.welfare;
    let mut probes = Vec::new();
    let separable = config.costs.flags().separable;
    if !separable {
        let e = CliError::Core(tiebout::Error::NonSeparableModel);
        report.diagnostics.push(Diagnostic { severity: Severity::Warning, ..Diagnostic::from_error(&e) });
    }
    for (e, eq) in equilibria.iter_mut().enumerate() {
        eq.welfare_summary = Some(aggregate_welfare(&config.costs, measure, &eq.state, &eq.partition));
        if !separable {
            continue;
        }
        let outcome =
            pareto_probe(&config.costs, measure, eq, settings.pareto_trials, settings.seed, settings.tolerance)?;
        if outcome.counterexample.is_some() {
            report.diagnostics.push(
                Diagnostic::new(
                    "pareto-improvement-found",
                    Severity::Warning,
                    format!("equilibrium {e} is Pareto dominated"),
                )
                .with_details(json!({ "equilibrium": e })),
            );
        }
        probes.push(json!({ "equilibrium": e, "probe": outcome }));
    }
    let totals: Vec<f64> =
        equilibria.iter().map(|eq| eq.welfare_summary.as_ref().map_or(f64::NAN, |w| w.total_cost)).collect();
    report.analysis = Some(json!({ "total_costs": totals, "pareto": probes }));
    report.equilibria = equilibria;
    Ok(EXIT_OK)
}

fn validate(config: &ExperimentConfig, report: &mut Report) -> Result<i32, CliError> {
    config.validate()?;
    let measure = config.measure.build()?;
    let template = config.template_state();
    report.diagnostics.extend(hyperbola_probe(&config.costs, &measure, &template, config.measure.seed));
    report.diagnostics.extend(small_group_probe(&config.costs, &measure, &template));
    let warnings = report.diagnostics.iter().filter(|d| d.severity != Severity::Info).count();
    if warnings == 0 {
        report.diagnostics.push(Diagnostic::new("clean", Severity::Info, "no assumption violation detected"));
    }
    Ok(EXIT_OK)
}

fn partitions_csv(config: &ExperimentConfig, measure: &SampledMeasure, equilibria: &[EquilibriumReport]) -> String {
    let mut out = String::new();
    for (e, eq) in equilibria.iter().enumerate() {
        let csv = partition_csv(&config.costs, measure, &eq.state, &eq.partition);
        for (k, line) in csv.lines().enumerate() {
            if k == 0 && e > 0 {
                continue;
            }
            let prefix = if k == 0 { "equilibrium".to_string() } else { e.to_string() };
            out.push_str(&format!("{prefix},{line}\n"));
        }
    }
    out
}

fn borders_csv(
    config: &ExperimentConfig,
    measure: &SampledMeasure,
    equilibria: &[EquilibriumReport],
    diagnostics: &mut Vec<Diagnostic>,
) -> String {
    let n = config.costs.communities;
    let resolution = config.stability.border_resolution;
    let mut out = String::from("equilibrium,i,j,polyline,vx_1,vx_2,density,grad_gap,arc_weight\n");
    for (e, eq) in equilibria.iter().enumerate() {
        for i in 0..n {
            for j in i + 1..n {
                match extract_border(&config.costs, measure, &eq.state, i, j, resolution) {
                    Ok(border) => {
                        for line in border.to_csv(false).lines() {
                            out.push_str(&format!("{e},{line}\n"));
                        }
                    }
                    Err(tiebout::Error::EmptyBorder { .. }) => {}
                    Err(err) => diagnostics.push(Diagnostic {
                        severity: Severity::Warning,
                        ..Diagnostic::from_error(&CliError::Core(err))
                    }),
                }
            }
        }
    }
    out
}

fn locus_csv(config: &ExperimentConfig, spec: &crate::config::LocusSpec) -> (String, Value) {
    let grid = spec.grid();
    let mut csv = String::from("delta_p,kind,polyline,x,y\n");
    let mut kinds = Vec::new();
    for &dp in &spec.delta_p {
        let locus = indifference_locus(&config.costs, spec.centers, dp, &grid);
        let kind = serde_json::to_value(locus.kind).unwrap_or(Value::Null);
        let label = kind.as_str().unwrap_or("").to_string();
        for (k, line) in locus.polylines.iter().enumerate() {
            for p in line {
                csv.push_str(&format!("{dp},{label},{k},{},{}\n", p[0], p[1]));
            }
        }
        kinds.push(json!({ "delta_p": dp, "kind": kind, "polylines": locus.polylines.len() }));
    }
    (csv, Value::Array(kinds))
}
