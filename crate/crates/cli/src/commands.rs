//! Subcommand definitions and their dispatch to the estimators.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use medmeta::masem::path_product_contrast;
use medmeta::simlab::{self, DgpConfig, Heterogeneity, TargetPopulation, APPENDIX1_EXPOSURE, MIN_ORACLE_DRAWS};
use medmeta::transport::DECLARED_ASSUMPTIONS;
use medmeta::within_study::product_of_coefficients;
use medmeta::{
    bootstrap_ci, correlation_based_masem, delta_estimate, fit_bivariate_re, fit_working_models, hybrid_nie, parameter_based_masem,
    population_specific_meta, rng, standardized_nie, summarize_eta, validate_collection, Error, HybridEstimand, IpdStudyF64,
    LikelihoodMethod, ModelTerms, RandomMethod, SummaryScheme, TransportOptions,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{self, ForestRow, InputError};
use crate::report::{Approach, Diagnostics, InputSummary, Report};

#[derive(Parser, Debug)]
#[command(name = "medmeta", version, about = "Meta-analysis of mediation studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Random-effects pooling of reported indirect effects.
    MasemParam(MasemParamArgs),
    /// Multivariate pooling of (X, M, Y) correlations and a path-model fit.
    MasemCorr(MasemCorrArgs),
    /// Bivariate random-effects model on the two path coefficients.
    Ml(MlArgs),
    /// Indirect effects of participant-data studies standardized to a target population.
    IpdTransport(TransportArgs),
    /// Indirect effects combining outcome studies with a treatment-mediator-only study.
    XmIntegrate(XmArgs),
    /// Simulate a collection of studies from a scenario file.
    Simulate(SimulateArgs),
    /// Narrow vs wide age-range demonstration of standardized indirect effects.
    #[command(name = "demo-appendix1")]
    DemoAppendix1(DemoArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Output {
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Forest CSV path; defaults to the report path with a `.forest.csv` extension.
    #[arg(long)]
    pub forest: Option<PathBuf>,
    /// Record the wall-clock time in the report (reruns are then no longer byte-identical).
    #[arg(long)]
    pub timestamp: bool,
}

impl Output {
    fn forest_path(&self) -> Option<PathBuf> {
        self.forest.clone().or_else(|| self.out.as_ref().map(|p| p.with_extension("forest.csv")))
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tau2 {
    Dl,
    Reml,
}

impl From<Tau2> for RandomMethod {
    fn from(m: Tau2) -> Self {
        match m {
            Tau2::Dl => RandomMethod::Dl,
            Tau2::Reml => RandomMethod::Reml,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Likelihood {
    Ml,
    Reml,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Fixed,
    Dl,
    Reml,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    EtaJ,
    EtaK,
    GammaJk,
    DeltaJk,
}

impl From<Estimand> for HybridEstimand {
    fn from(e: Estimand) -> Self {
        match e {
            Estimand::EtaJ => HybridEstimand::EtaJ,
            Estimand::EtaK => HybridEstimand::EtaK,
            Estimand::GammaJk => HybridEstimand::GammaJk,
            Estimand::DeltaJk => HybridEstimand::DeltaJk,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MasemParamArgs {
    /// Aggregate records CSV.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Tau2::Reml)]
    pub method: Tau2,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MasemCorrArgs {
    /// Correlation records CSV.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MlArgs {
    /// Aggregate records CSV with path columns.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Likelihood::Reml)]
    pub method: Likelihood,
    /// Parametric bootstrap replicates.
    #[arg(long, default_value_t = medmeta::ml_pathway::DEFAULT_BOOTSTRAP)]
    pub bootstrap: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TransportArgs {
    /// Source study IPD CSV; repeat for several sources.
    #[arg(long, required = true)]
    pub source: Vec<PathBuf>,
    /// Target population IPD CSV.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub x: u8,
    #[arg(long = "xstar", default_value_t = 1)]
    pub x_star: u8,
    /// Fit the treatment-mediator product term in the outcome model.
    #[arg(long)]
    pub interaction: bool,
    /// Fit treatment-covariate product terms in the mediator model.
    #[arg(long)]
    pub exposure_covariate: bool,
    /// Nonparametric bootstrap replicates for standard errors.
    #[arg(long, default_value_t = medmeta::transport::DEFAULT_BOOTSTRAP)]
    pub bootstrap: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Between-study variance estimator when several sources are pooled.
    #[arg(long, value_enum, default_value_t = Tau2::Reml)]
    pub method: Tau2,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct XmArgs {
    /// Outcome study IPD CSV (has y); repeat for several.
    #[arg(long, required = true)]
    pub outcome: Vec<PathBuf>,
    /// Treatment-mediator study IPD CSV.
    #[arg(long)]
    pub mediator: PathBuf,
    #[arg(long, value_enum, default_value_t = Estimand::EtaJ)]
    pub estimand: Estimand,
    #[arg(long, default_value_t = 0)]
    pub x: u8,
    #[arg(long = "xstar", default_value_t = 1)]
    pub x_star: u8,
    /// Pooling scheme for several outcome studies.
    #[arg(long, value_enum, default_value_t = Scheme::Reml)]
    pub scheme: Scheme,
    #[arg(long)]
    pub interaction: bool,
    #[arg(long)]
    pub exposure_covariate: bool,
    #[arg(long, default_value_t = medmeta::transport::DEFAULT_BOOTSTRAP)]
    pub bootstrap: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    /// Scenario JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory receiving the simulated CSV files.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DemoArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the two simulated studies here.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

/// Simulation scenario read by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub dgp: DgpConfig,
    /// Number of studies.
    pub studies: usize,
    #[serde(default = "no_heterogeneity")]
    pub heterogeneity: Heterogeneity,
    /// Probability of deleting each correlation.
    #[serde(default)]
    pub mcar: f64,
    #[serde(default = "oracle_draws")]
    pub oracle_draws: usize,
    #[serde(default)]
    pub x: u8,
    #[serde(default = "one")]
    pub x_star: u8,
}

fn no_heterogeneity() -> Heterogeneity {
    Heterogeneity::None
}

fn oracle_draws() -> usize {
    MIN_ORACLE_DRAWS
}

fn one() -> u8 {
    1
}

#[derive(Debug)]
pub enum CliError {
    Input(InputError),
    Domain(Error),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(e) => write!(f, "{e}"),
            CliError::Domain(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(e) | CliError::Input(InputError::Domain(e)) if e.is_convergence() => 2,
            _ => 1,
        }
    }
}

impl From<InputError> for CliError {
    fn from(e: InputError) -> Self {
        CliError::Input(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Domain(e)
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// A finished analysis: the report and, for meta-analyses, the forest rows.
pub struct Outcome {
    pub report: Report,
    pub forest: Option<Vec<ForestRow>>,
}

/// Uses the given seed or draws one; drawn seeds stay below 2^53 so that
/// they survive JSON readers that parse numbers as doubles.
fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| rand::random::<u64>() >> 11)
}

fn echo<A: Serialize>(args: &A) -> Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn value<S: Serialize>(v: &S) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

impl Command {
    pub fn output(&self) -> &Output {
        match self {
            Command::MasemParam(a) => &a.output,
            Command::MasemCorr(a) => &a.output,
            Command::Ml(a) => &a.output,
            Command::IpdTransport(a) => &a.output,
            Command::XmIntegrate(a) => &a.output,
            Command::Simulate(a) => &a.output,
            Command::DemoAppendix1(a) => &a.output,
        }
    }

    pub fn execute(&self) -> Result<Outcome, CliError> {
        match self {
            Command::MasemParam(a) => masem_param(a),
            Command::MasemCorr(a) => masem_corr(a),
            Command::Ml(a) => ml(a),
            Command::IpdTransport(a) => ipd_transport(a),
            Command::XmIntegrate(a) => xm_integrate(a),
            Command::Simulate(a) => simulate(a),
            Command::DemoAppendix1(a) => demo_appendix1(a),
        }
    }
}

fn masem_param(a: &MasemParamArgs) -> Result<Outcome, CliError> {
    let records = data::read_aggregates(&a.input)?;
    let method = a.method.into();
    let pooled = parameter_based_masem(&records, method)?;
    let contrast = path_product_contrast(&records, method)?;
    let mut forest: Vec<ForestRow> = records
        .iter()
        .zip(&pooled.weights)
        .map(|(r, &w)| ForestRow::wald(r.study_id(), r.theta().value, r.theta().se, w))
        .collect();
    forest.push(ForestRow {
        study_id: "pooled".into(),
        estimate: pooled.estimate,
        se: pooled.se,
        ci_low: pooled.ci_low,
        ci_high: pooled.ci_high,
        weight: 1.0,
    });
    let inputs = InputSummary {
        files: vec![path_str(&a.input)],
        k: records.len(),
        n_total: records.iter().map(|r| r.n()).sum(),
        ..Default::default()
    };
    let results = json!({ "pooled": value(&pooled), "path_product_contrast": value(&contrast) });
    Ok(Outcome { report: Report::new(Approach::MasemParam, echo(a), inputs, results, Diagnostics::default(), None), forest: Some(forest) })
}

fn masem_corr(a: &MasemCorrArgs) -> Result<Outcome, CliError> {
    let records = data::read_correlations(&a.input)?;
    let (pooled, fit) = correlation_based_masem(&records)?;
    let inputs = InputSummary {
        files: vec![path_str(&a.input)],
        k: records.len(),
        n_total: records.iter().map(|r| r.n()).sum(),
        declared_assumptions: vec!["absent correlations are missing completely at random".into()],
        ..Default::default()
    };
    let results = json!({ "pooled": value(&pooled), "structural": value(&fit) });
    Ok(Outcome { report: Report::new(Approach::MasemCorr, echo(a), inputs, results, Diagnostics::default(), None), forest: None })
}

fn ml(a: &MlArgs) -> Result<Outcome, CliError> {
    let seed = resolve_seed(a.seed);
    let records = data::read_aggregates(&a.input)?;
    let method = match a.method {
        Likelihood::Ml => LikelihoodMethod::Ml,
        Likelihood::Reml => LikelihoodMethod::Reml,
    };
    let fit = fit_bivariate_re(&records, method)?;
    let delta = delta_estimate(&fit)?;
    let interval = bootstrap_ci(&fit, &records, a.bootstrap, seed)?;
    let mut diagnostics = Diagnostics { converged: Some(fit.converged), ..Default::default() };
    if interval.failed > 0 {
        diagnostics.notes.push(format!("{} of {} bootstrap refits failed", interval.failed, interval.replicates));
    }
    let inputs = InputSummary {
        files: vec![path_str(&a.input)],
        k: records.len(),
        n_total: records.iter().map(|r| r.n()).sum(),
        ..Default::default()
    };
    let config = echo(&MlArgs { seed: Some(seed), ..a.clone() });
    let results = json!({ "fit": value(&fit), "delta": value(&delta), "bootstrap": value(&interval) });
    Ok(Outcome { report: Report::new(Approach::Ml, config, inputs, results, diagnostics, Some(seed)), forest: None })
}

fn read_studies(paths: &[PathBuf]) -> Result<Vec<IpdStudyF64>, CliError> {
    let studies = paths.iter().map(|p| data::read_ipd(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(validate_collection(studies)?.into_studies())
}

fn ipd_transport(a: &TransportArgs) -> Result<Outcome, CliError> {
    let seed = resolve_seed(a.seed);
    let sources = read_studies(&a.source)?;
    let target = data::read_ipd(&a.target)?;
    let terms = ModelTerms { exposure_mediator: a.interaction, exposure_covariate: a.exposure_covariate };
    let opts = TransportOptions { terms, bootstrap: a.bootstrap, seed };
    let estimates = sources.iter().map(|s| standardized_nie(s, &target, a.x, a.x_star, &opts)).collect::<Result<Vec<_>, _>>()?;

    let mut diagnostics = Diagnostics::default();
    for e in &estimates {
        if e.positivity.flagged {
            diagnostics.positivity_flagged.push(e.source_study.clone());
            diagnostics.notes.push(format!("target covariates extend beyond the range of source `{}`", e.source_study));
        }
        if e.bootstrap_failed > 0 {
            diagnostics.notes.push(format!("{} of {} bootstrap replicates failed for `{}`", e.bootstrap_failed, e.bootstrap_replicates, e.source_study));
        }
    }

    let products = if terms.is_linear() {
        let p = sources
            .iter()
            .map(|s| {
                let wm = fit_working_models(s, s.covariate_names(), false)?;
                let e = product_of_coefficients(&wm)?;
                let scale = f64::from(a.x_star) - f64::from(a.x);
                Ok(json!({ "study_id": s.study_id(), "estimate": e.value * scale, "se": e.se * scale.abs() }))
            })
            .collect::<Result<Vec<_>, Error>>()?;
        Value::Array(p)
    } else {
        Value::Null
    };

    let pooled = if estimates.len() >= 2 { Some(population_specific_meta(&estimates, a.method.into())?) } else { None };
    let forest = pooled.as_ref().map(|m| {
        let mut rows: Vec<ForestRow> =
            estimates.iter().zip(&m.weights).map(|(e, &w)| ForestRow::wald(&e.source_study, e.theta_jk, e.se, w)).collect();
        rows.push(ForestRow { study_id: "pooled".into(), estimate: m.estimate, se: m.se, ci_low: m.ci_low, ci_high: m.ci_high, weight: 1.0 });
        rows
    });

    let mut files: Vec<String> = a.source.iter().map(|p| path_str(p)).collect();
    files.push(path_str(&a.target));
    let inputs = InputSummary {
        files,
        k: sources.len(),
        n_total: sources.iter().map(|s| s.len() as u64).sum(),
        adjust: sources[0].covariate_names().to_vec(),
        declared_assumptions: DECLARED_ASSUMPTIONS.iter().map(|s| s.to_string()).collect(),
    };
    let config = echo(&TransportArgs { seed: Some(seed), ..a.clone() });
    let results = json!({
        "target_study": target.study_id(),
        "target_n": target.len(),
        "estimates": value(&estimates),
        "product_of_coefficients": products,
        "pooled": value(&pooled),
    });
    Ok(Outcome { report: Report::new(Approach::IpdTransport, config, inputs, results, diagnostics, Some(seed)), forest })
}

fn xm_integrate(a: &XmArgs) -> Result<Outcome, CliError> {
    let seed = resolve_seed(a.seed);
    let outcomes = read_studies(&a.outcome)?;
    let mediator = data::read_ipd(&a.mediator)?;
    let terms = ModelTerms { exposure_mediator: a.interaction, exposure_covariate: a.exposure_covariate };
    let opts = TransportOptions { terms, bootstrap: a.bootstrap, seed };
    let estimand: HybridEstimand = a.estimand.into();
    let estimates =
        outcomes.iter().map(|k| hybrid_nie(k, &mediator, estimand, a.x, a.x_star, &opts)).collect::<Result<Vec<_>, _>>()?;

    let mut diagnostics = Diagnostics::default();
    let summary = if estimates.len() >= 2 {
        let scheme = match a.scheme {
            Scheme::Fixed => SummaryScheme::Fixed,
            Scheme::Dl => SummaryScheme::Random(RandomMethod::Dl),
            Scheme::Reml => SummaryScheme::Random(RandomMethod::Reml),
        };
        match summarize_eta(&estimates, estimand, scheme) {
            Ok(s) => Some(s),
            Err(Error::MixedEstimand) => {
                diagnostics.notes.push("estimates are standardized to different populations and were not pooled".into());
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    let forest = summary.as_ref().map(|s| {
        let m = &s.meta;
        let mut rows: Vec<ForestRow> =
            estimates.iter().zip(&m.weights).map(|(e, &w)| ForestRow::wald(&e.outcome_study, e.value, e.se, w)).collect();
        rows.push(ForestRow { study_id: "pooled".into(), estimate: m.estimate, se: m.se, ci_low: m.ci_low, ci_high: m.ci_high, weight: 1.0 });
        rows
    });

    let mut files: Vec<String> = a.outcome.iter().map(|p| path_str(p)).collect();
    files.push(path_str(&a.mediator));
    let inputs = InputSummary {
        files,
        k: outcomes.len() + 1,
        n_total: outcomes.iter().map(|s| s.len() as u64).sum::<u64>() + mediator.len() as u64,
        adjust: estimates[0].adjust.clone(),
        declared_assumptions: estimates[0].declared_assumptions.clone(),
    };
    let config = echo(&XmArgs { seed: Some(seed), ..a.clone() });
    let results = json!({ "mediator_study": mediator.study_id(), "estimates": value(&estimates), "summary": value(&summary) });
    Ok(Outcome { report: Report::new(Approach::XmIntegrate, config, inputs, results, diagnostics, Some(seed)), forest })
}

fn simulate(a: &SimulateArgs) -> Result<Outcome, CliError> {
    let seed = resolve_seed(a.seed);
    let text = fs::read_to_string(&a.config).map_err(io_err(&a.config))?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| {
        CliError::Input(InputError::Parse { path: path_str(&a.config), line: Some(e.line() as u64), column: Some(e.column()), message: e.to_string() })
    })?;
    let (studies, records) = simlab::simulate_collection(&scenario.dgp, scenario.studies, scenario.heterogeneity, seed)?;
    let correlations = if scenario.mcar > 0.0 {
        simlab::mcar_delete(&records.correlations, scenario.mcar, rng::child_seed(seed, "mcar", 0))?
    } else {
        records.correlations.clone()
    };
    let (x, x_star) = (scenario.x, scenario.x_star);
    let (oracle, mc_se) = simlab::true_nie_oracle(
        &scenario.dgp,
        TargetPopulation::Distribution(&scenario.dgp.l_dist),
        x,
        x_star,
        scenario.oracle_draws,
        rng::child_seed(seed, "oracle", 0),
    )?;

    fs::create_dir_all(&a.data_dir).map_err(io_err(&a.data_dir))?;
    let mut study_rows = Vec::with_capacity(studies.len());
    for (s, &(alpha1, beta2)) in studies.iter().zip(&records.true_paths) {
        let file = format!("{}.csv", s.study_id());
        let p = a.data_dir.join(&file);
        data::write_ipd(&p, s).map_err(io_err(&p))?;
        study_rows.push(json!({ "study_id": s.study_id(), "file": file, "n": s.len(), "true_alpha1": alpha1, "true_beta2": beta2 }));
    }
    let agg = a.data_dir.join("aggregates.csv");
    data::write_aggregates(&agg, &records.aggregates).map_err(io_err(&agg))?;
    let cor = a.data_dir.join("correlations.csv");
    data::write_correlations(&cor, &correlations).map_err(io_err(&cor))?;

    let mean_product = records.true_paths.iter().map(|(a, b)| a * b).sum::<f64>() / records.true_paths.len() as f64;
    let inputs = InputSummary {
        files: vec![path_str(&a.config)],
        k: studies.len(),
        n_total: studies.iter().map(|s| s.len() as u64).sum(),
        adjust: scenario.dgp.covariate_names(),
        ..Default::default()
    };
    let config = json!({
        "config": path_str(&a.config),
        "data_dir": path_str(&a.data_dir),
        "seed": seed,
        "scenario": value(&scenario),
    });
    let results = json!({
        "studies": study_rows,
        "aggregates_file": "aggregates.csv",
        "correlations_file": "correlations.csv",
        "mean_true_path_product": mean_product,
        "true_nie": {
            "x": x,
            "x_star": x_star,
            "closed_form": scenario.dgp.closed_form_nie(x, x_star),
            "oracle": oracle,
            "oracle_mc_se": mc_se,
            "oracle_draws": scenario.oracle_draws,
        },
    });
    Ok(Outcome { report: Report::new(Approach::Simulate, config, inputs, results, Diagnostics::default(), Some(seed)), forest: None })
}

fn demo_appendix1(a: &DemoArgs) -> Result<Outcome, CliError> {
    let seed = resolve_seed(a.seed);
    let (narrow, wide) = simlab::appendix1_scenario(seed)?;
    let contrast = simlab::standardization_contrast(&narrow, &wide, APPENDIX1_EXPOSURE)?;
    if let Some(dir) = &a.data_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for s in [&narrow, &wide] {
            let p = dir.join(format!("{}.csv", s.study_id()));
            data::write_ipd(&p, s).map_err(io_err(&p))?;
        }
    }
    let mut diagnostics = Diagnostics::default();
    if contrast.divergence {
        diagnostics.notes.push("standardized indirect effects diverge although the unstandardized ones agree".into());
    }
    let inputs = InputSummary {
        files: vec![],
        k: 2,
        n_total: (narrow.len() + wide.len()) as u64,
        adjust: vec![],
        declared_assumptions: vec!["identical mediation mechanism in both studies; only the age range differs".into()],
    };
    let config = echo(&DemoArgs { seed: Some(seed), ..a.clone() });
    let results = json!({
        "studies": [
            { "study_id": narrow.study_id(), "age_range": [60, 80], "n": narrow.len() },
            { "study_id": wide.study_id(), "age_range": [40, 80], "n": wide.len() },
        ],
        "contrast": value(&contrast),
    });
    Ok(Outcome { report: Report::new(Approach::DemoAppendix1, config, inputs, results, diagnostics, Some(seed)), forest: None })
}

/// Writes the report and forest table of a finished command.
pub fn emit(outcome: &mut Outcome, output: &Output) -> Result<(), CliError> {
    if output.timestamp {
        outcome.report.stamp();
    }
    let json = outcome.report.to_json();
    match &output.out {
        Some(p) => fs::write(p, json).map_err(io_err(p))?,
        None => print!("{json}"),
    }
    if let (Some(rows), Some(p)) = (&outcome.forest, output.forest_path()) {
        data::write_forest(&p, rows).map_err(io_err(&p))?;
    }
    Ok(())
}
