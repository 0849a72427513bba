use std::fmt::Write as _;
use std::path::PathBuf;

use lgcp_cv::crossval::{crps_map_csv, residual_map_csv, run_sweep, CvData, CvOptions, Weighting};
use lgcp_cv::geodata::{build_quadrature, format_ascii_grid};
use lgcp_cv::gmrf::MaternHyper;
use lgcp_cv::inference::{bin_points, field_posterior_mean, fit_model, summarize, FitOptions, PosteriorDraws};
use lgcp_cv::model::{load_model_sweep, ModelSpec};
use lgcp_cv::simulate::{CampaignEffects, FieldSource, Scenario};
use lgcp_cv::{Error, Result};

use crate::config::RunConfig;
use crate::inputs::load_inputs;
use crate::output::{file_stem, OutputDir};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Some tasks failed; the rest of the outputs are complete.
    Partial,
}

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

/// Optimisation failures exit with 1, everything caused by the inputs with 2.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } | Error::NotPositiveDefinite { .. } => 1,
        _ => 2,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub workers: usize,
    pub out: PathBuf,
}

pub fn simulate(ctx: &Context) -> Result<Status> {
    let cfg = &ctx.config;
    let s = &cfg.simulate;
    let priors = cfg.priors.to_spec()?;
    let inputs = load_inputs(&cfg.data, &cfg.covariates)?;
    let n_t = inputs.n_campaigns();
    let mu0 = match (s.intercept, s.intensity) {
        (Some(a), None) => a,
        (None, Some(l)) if l >= 0.0 && l.is_finite() => l.ln(),
        (None, Some(l)) => return Err(Error::Usage(format!("simulate.intensity must be finite and non-negative, got {l}"))),
        _ => return Err(Error::Usage("exactly one of simulate.intercept and simulate.intensity is required".into())),
    };
    let campaign_effects = match (&s.campaign_effects, s.campaign_variance) {
        (Some(v), None) => CampaignEffects::Fixed(v.clone()),
        (None, Some(tau2)) => CampaignEffects::Random { tau2 },
        (None, None) => CampaignEffects::Fixed(vec![0.0; n_t]),
        _ => return Err(Error::Usage("give simulate.campaign_effects or simulate.campaign_variance, not both".into())),
    };
    let field = match (s.field_sd, s.field_range) {
        (Some(sd), Some(range)) => FieldSource::Matern(MaternHyper::new(sd, range)?),
        (None, None) => FieldSource::None,
        _ => return Err(Error::Usage("simulate.field_sd and simulate.field_range go together".into())),
    };
    let names: Vec<String> = s.coefficients.keys().cloned().collect();
    let beta: Vec<f64> = s.coefficients.values().copied().collect();
    let scenario = Scenario {
        spec: ModelSpec::new("truth", names, n_t, priors)?,
        covariates: inputs.covariates.clone(),
        domains: inputs.domain_masks(),
        mu0,
        beta,
        gamma: s.effort,
        campaign_effects,
        field,
        seed: ctx.seed,
    };
    let realization = scenario.realize()?;
    let pattern = realization.sample_points()?;
    log::info!("simulated {} points over {n_t} campaigns", pattern.len());
    let out = OutputDir::create(&ctx.out)?;
    out.write("points.csv", &pattern.to_csv())?;
    out.write("truth.csv", &realization.truth_csv())?;
    out.write("domains.csv", &inputs.campaigns.to_csv())?;
    Ok(Status::Success)
}

fn diagnostics_csv(draws: &PosteriorDraws, dic: f64, pd: f64) -> String {
    let d = &draws.diagnostics;
    let mut out = String::from("key,value\nstatus,ok\n");
    writeln!(out, "draws,{}", draws.n_draws()).unwrap();
    writeln!(out, "dic,{dic}").unwrap();
    writeln!(out, "effective_parameters,{pd}").unwrap();
    writeln!(out, "outer_iterations,{}", d.outer_iterations).unwrap();
    writeln!(out, "laplace_evaluations,{}", d.laplace_evaluations).unwrap();
    writeln!(out, "newton_iterations,{}", d.newton_iterations).unwrap();
    writeln!(out, "max_gradient_norm,{}", d.max_gradient_norm).unwrap();
    for (i, v) in d.theta_mode.iter().enumerate() {
        writeln!(out, "theta_mode_{i},{v}").unwrap();
    }
    for (i, v) in d.curvature.iter().enumerate() {
        writeln!(out, "curvature_{i},{v}").unwrap();
    }
    out
}

fn hyper_grid_csv(draws: &PosteriorDraws) -> String {
    let dim = draws.hyper_grid.first().map_or(0, |p| p.theta.len());
    let mut out = String::new();
    for i in 0..dim {
        write!(out, "theta_{i},").unwrap();
    }
    out.push_str("log_marginal,weight,newton_iterations,gradient_norm\n");
    for p in &draws.hyper_grid {
        for v in &p.theta {
            write!(out, "{v},").unwrap();
        }
        writeln!(out, "{},{},{},{}", p.log_marginal, p.weight, p.newton_iterations, p.gradient_norm).unwrap();
    }
    out
}

pub fn fit(ctx: &Context) -> Result<Status> {
    let cfg = &ctx.config;
    let f = &cfg.fit;
    if f.draws < 2 {
        return Err(Error::Usage(format!("fit.draws must be at least 2 for a posterior summary, got {}", f.draws)));
    }
    let priors = cfg.priors.to_spec()?;
    let inputs = load_inputs(&cfg.data, &cfg.covariates)?;
    let pattern = inputs.load_points(&cfg.data)?;
    let quads = inputs.domain_masks().iter().map(build_quadrature).collect::<Result<Vec<_>>>()?;
    let likelihood = bin_points(&pattern, &quads)?;
    let mut spec = ModelSpec::new(f.model_id.clone(), f.covariates.clone(), inputs.n_campaigns(), priors)?;
    if !f.spatial_field {
        spec = spec.without_field();
    }
    if !f.effort {
        spec = spec.without_effort();
    }
    spec.validate(&inputs.covariates)?;
    let options = FitOptions {
        n_draws: f.draws,
        halo: f.halo,
        ..FitOptions::default()
    };
    let out = OutputDir::create(&ctx.out)?;
    let draws = match fit_model(&likelihood, &spec, &inputs.covariates, &options, ctx.seed) {
        Ok(d) => d,
        Err(e) => {
            let mut diag = String::from("key,value\nstatus,failed\n");
            writeln!(diag, "model_id,{}", spec.model_id).unwrap();
            writeln!(diag, "points,{}", pattern.len()).unwrap();
            writeln!(diag, "message,\"{}\"", e.to_string().replace('"', "\"\"")).unwrap();
            out.write("fit_diagnostics.csv", &diag)?;
            return Err(e);
        }
    };
    let summary = summarize(&draws, &inputs.covariates)?;
    out.write("posterior_summary.csv", &summary.to_csv())?;
    if let Some(field) = field_posterior_mean(&draws) {
        out.write("field_posterior_mean.asc", &format_ascii_grid(&field))?;
    }
    out.write("fit_diagnostics.csv", &diagnostics_csv(&draws, summary.dic, summary.effective_parameters))?;
    out.write("hyper_grid.csv", &hyper_grid_csv(&draws))?;
    Ok(Status::Success)
}

pub fn crossval(ctx: &Context) -> Result<Status> {
    let cfg = &ctx.config;
    let c = &cfg.crossval;
    if c.folds < 2 {
        return Err(Error::Usage(format!("crossval.folds must be at least 2, got {}", c.folds)));
    }
    if c.draws == 0 {
        return Err(Error::Usage("crossval.draws must be at least 1".into()));
    }
    let weighting = match c.weighting.as_str() {
        "unweighted" => Weighting::Unweighted,
        "area" => Weighting::Area,
        other => return Err(Error::Usage(format!("crossval.weighting must be `unweighted` or `area`, got `{other}`"))),
    };
    let models_path = c.models.as_ref().ok_or_else(|| Error::Usage("crossval.models is required".into()))?;
    let priors = cfg.priors.to_spec()?;
    let inputs = load_inputs(&cfg.data, &cfg.covariates)?;
    let mut sweep = load_model_sweep(models_path, inputs.n_campaigns(), priors)?;
    if !c.spatial_field {
        sweep.models = sweep.models.into_iter().map(ModelSpec::without_field).collect();
    }
    let pattern = inputs.load_points(&cfg.data)?;
    let data = CvData::new(pattern, inputs.covariates.clone(), &inputs.domain_masks(), c.partition_rows, c.partition_cols)?;
    for (t, p) in data.partitions.iter().enumerate() {
        if p.n_empty > 0 {
            log::info!("campaign {}: {} empty partition cells excluded", t + 1, p.n_empty);
        }
    }
    let options = CvOptions {
        k_folds: c.folds,
        fit: FitOptions {
            n_draws: c.draws,
            halo: c.halo,
            ..FitOptions::default()
        },
        weighting,
        seed: ctx.seed,
        workers: ctx.workers,
        compute_dic: c.dic,
    };
    let result = run_sweep(&data, &sweep.models, &options)?;

    let out = OutputDir::create(&ctx.out)?;
    out.write("crps_by_model.csv", &result.crps_by_model_csv(&sweep.columns))?;
    out.write("failures.csv", &result.failures_csv())?;
    if c.dic {
        out.write("dic_by_model.csv", &result.dic_by_model_csv())?;
    }
    let mut marks = String::from("row,fold\n");
    for (i, m) in result.folds.marks.iter().enumerate() {
        writeln!(marks, "{},{m}", i + 1).unwrap();
    }
    out.write("fold_assignment.csv", &marks)?;
    for m in &result.models {
        let Some(table) = &m.table else { continue };
        let dir = format!("maps/{}", file_stem(&m.spec.model_id));
        for (t, tensor) in m.tensors.iter().enumerate() {
            let t = t + 1;
            out.write(&format!("{dir}/residual_map_t{t}.csv"), &residual_map_csv(tensor, &data.partitions[t - 1]))?;
            out.write(&format!("{dir}/crps_map_t{t}.csv"), &crps_map_csv(table, t))?;
        }
    }
    let failures = result.failures();
    for f in &failures {
        log::warn!("model {} fold {} failed: {}", f.model_id, f.fold, f.message);
    }
    if let Some(&best) = result.ranking().first() {
        log::info!("lowest CRPS: {}", result.models[best].spec.model_id);
    }
    Ok(if failures.is_empty() { Status::Success } else { Status::Partial })
}

struct RankRow {
    model_id: String,
    flags: Vec<String>,
    crps_text: String,
    crps: Option<f64>,
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Ranks a `crps_by_model.csv` table: ascending CRPS, ties by model id,
/// failed (`NA`) models last.
pub fn rank_table(text: &str, source: &str) -> Result<String> {
    let parse = |line: usize, m: String| Error::Parse {
        path: source.to_string(),
        line,
        message: m,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse(1, e.to_string()))?.clone();
    let n = headers.len();
    if n < 2 || &headers[0] != "model_id" || &headers[n - 1] != "crps" {
        return Err(parse(1, "header must start with `model_id` and end with `crps`".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse(line, e.to_string()))?;
        let crps_text = rec[n - 1].to_string();
        let crps = if crps_text == "NA" {
            None
        } else {
            let v: f64 = crps_text.parse().map_err(|_| parse(line, format!("invalid CRPS `{crps_text}`")))?;
            Some(v)
        };
        rows.push(RankRow {
            model_id: rec[0].to_string(),
            flags: (1..n - 1).map(|k| rec[k].to_string()).collect(),
            crps_text,
            crps,
        });
    }
    rows.sort_by(|a, b| match (a.crps, b.crps) {
        (Some(x), Some(y)) => x.total_cmp(&y).then_with(|| a.model_id.cmp(&b.model_id)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.model_id.cmp(&b.model_id),
    });
    let mut out = String::from("rank");
    for h in headers.iter() {
        write!(out, ",{}", quote(h)).unwrap();
    }
    out.push('\n');
    for (i, r) in rows.iter().enumerate() {
        let rank = if r.crps.is_some() { (i + 1).to_string() } else { "NA".into() };
        write!(out, "{rank},{}", quote(&r.model_id)).unwrap();
        for f in &r.flags {
            write!(out, ",{}", quote(f)).unwrap();
        }
        writeln!(out, ",{}", r.crps_text).unwrap();
    }
    Ok(out)
}

pub fn rank(ctx: &Context) -> Result<Status> {
    let input = ctx.config.rank.input.clone().unwrap_or_else(|| ctx.out.join("crps_by_model.csv"));
    let text = std::fs::read_to_string(&input).map_err(|e| Error::Io {
        path: input.clone(),
        source: e,
    })?;
    let ranked = rank_table(&text, &input.display().to_string())?;
    OutputDir::create(&ctx.out)?.write("ranked_models.csv", &ranked)?;
    Ok(Status::Success)
}
