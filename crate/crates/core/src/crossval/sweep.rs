use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geodata::{build_partition, build_quadrature, CovariateStack, DomainMask, PartitionScheme, PointPattern, QuadratureScheme};
use crate::inference::{bin_points, compute_dic, fit_model, FitOptions, GriddedLikelihood};
use crate::model::ModelSpec;
use crate::rng::{derive_seed, label_hash};

use super::folds::{assign_folds, split, FoldAssignment};
use super::residuals::{validation_residuals, ResidualTensor};
use super::{aggregate_crps, rank_models, CrpsTable, Weighting};

/// Shared immutable inputs of a cross-validation study.
#[derive(Debug, Clone)]
pub struct CvData {
    pub pattern: PointPattern,
    pub covariates: Arc<CovariateStack>,
    pub quadratures: Vec<QuadratureScheme>,
    pub partitions: Vec<PartitionScheme>,
}

impl CvData {
    /// Quadrature and a `rows × cols` partition of every campaign domain.
    pub fn new(pattern: PointPattern, covariates: Arc<CovariateStack>, domains: &[DomainMask], rows: usize, cols: usize) -> Result<Self> {
        if domains.len() != pattern.n_campaigns {
            return Err(Error::InvalidInput(format!("{} domains for {} campaigns", domains.len(), pattern.n_campaigns)));
        }
        let quadratures = domains.iter().map(build_quadrature).collect::<Result<Vec<_>>>()?;
        let partitions = domains.iter().map(|d| build_partition(d, rows, cols)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pattern,
            covariates,
            quadratures,
            partitions,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub k_folds: usize,
    /// Fit settings of every training fit; `fit.n_draws` is `A`.
    pub fit: FitOptions,
    pub weighting: Weighting,
    pub seed: u64,
    pub workers: usize,
    /// Also fit every model to the full data and compute its DIC.
    pub compute_dic: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k_folds: 5,
            fit: FitOptions::default(),
            weighting: Weighting::Unweighted,
            seed: 0,
            workers: 1,
            compute_dic: false,
        }
    }
}

/// A failed `(model, fold)` task; fold 0 is the full-data fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFailure {
    pub model_id: String,
    pub fold: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ModelOutcome {
    pub spec: ModelSpec,
    /// Per campaign; empty when any fold failed.
    pub tensors: Vec<ResidualTensor>,
    pub table: Option<CrpsTable>,
    pub dic: Option<f64>,
    pub failures: Vec<TaskFailure>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub folds: FoldAssignment,
    pub models: Vec<ModelOutcome>,
}

impl SweepResult {
    pub fn failures(&self) -> Vec<&TaskFailure> {
        self.models.iter().flat_map(|m| &m.failures).collect()
    }

    /// Model indices of successful models by ascending CRPS.
    pub fn ranking(&self) -> Vec<usize> {
        let ok: Vec<usize> = (0..self.models.len()).filter(|&i| self.models[i].table.is_some()).collect();
        let tables: Vec<CrpsTable> = ok.iter().map(|&i| self.models[i].table.clone().unwrap()).collect();
        rank_models(&tables).into_iter().map(|j| ok[j]).collect()
    }

    /// Model indices by ascending DIC, ties by model id.
    pub fn dic_ranking(&self) -> Vec<usize> {
        let mut ok: Vec<usize> = (0..self.models.len()).filter(|&i| self.models[i].dic.is_some()).collect();
        ok.sort_by(|&a, &b| {
            let (ma, mb) = (&self.models[a], &self.models[b]);
            ma.dic.unwrap().total_cmp(&mb.dic.unwrap()).then_with(|| ma.spec.model_id.cmp(&mb.spec.model_id))
        });
        ok
    }

    /// `model_id`, one 0/1 column per entry of `columns`, `crps` (`NA` for failed models),
    /// in sweep order.
    pub fn crps_by_model_csv(&self, columns: &[String]) -> String {
        let mut out = String::from("model_id");
        for c in columns {
            write!(out, ",{}", csv_field(c)).unwrap();
        }
        out.push_str(",crps\n");
        for m in &self.models {
            out.push_str(&csv_field(&m.spec.model_id));
            for c in columns {
                write!(out, ",{}", crate::model::flag(&m.spec, c)).unwrap();
            }
            match &m.table {
                Some(t) => writeln!(out, ",{}", t.aggregate).unwrap(),
                None => out.push_str(",NA\n"),
            }
        }
        out
    }

    pub fn dic_by_model_csv(&self) -> String {
        let mut out = String::from("model_id,dic\n");
        for m in &self.models {
            let v = m.dic.map_or_else(|| "NA".to_string(), |d| d.to_string());
            writeln!(out, "{},{v}", csv_field(&m.spec.model_id)).unwrap();
        }
        out
    }

    pub fn failures_csv(&self) -> String {
        let mut out = String::from("model_id,fold,message\n");
        for f in self.failures() {
            writeln!(out, "{},{},{}", csv_field(&f.model_id), f.fold, csv_field(&f.message)).unwrap();
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

struct Fold {
    train: std::result::Result<GriddedLikelihood, String>,
    validation: PointPattern,
}

enum TaskOutput {
    Residuals(Vec<Vec<f64>>),
    Dic(f64),
}

/// Fits every model on every training fold (and optionally the full data), in a
/// pool of `options.workers` threads; results do not depend on the worker count.
pub fn run_sweep(data: &CvData, models: &[ModelSpec], options: &CvOptions) -> Result<SweepResult> {
    let k = options.k_folds;
    if k < 2 {
        return Err(Error::Usage(format!("cross-validation needs at least 2 folds, got {k}")));
    }
    if options.workers == 0 {
        return Err(Error::Usage("worker count must be at least 1".into()));
    }
    if options.fit.n_draws == 0 {
        return Err(Error::Usage("at least one posterior draw is required".into()));
    }
    let n_t = data.pattern.n_campaigns;
    if data.quadratures.len() != n_t || data.partitions.len() != n_t {
        return Err(Error::InvalidInput("one quadrature scheme and one partition per campaign are required".into()));
    }
    for m in models {
        if m.n_campaigns != n_t {
            return Err(Error::InvalidInput(format!("model {} has {} campaigns, data {n_t}", m.model_id, m.n_campaigns)));
        }
        m.validate(&data.covariates)?;
    }
    let assignment = assign_folds(&data.pattern, k, options.seed)?;
    let folds: Vec<Fold> = (1..=k)
        .map(|f| {
            let (train, validation) = split(&data.pattern, &assignment, f)?;
            Ok(Fold {
                train: bin_points(&train, &data.quadratures).map_err(|e| e.to_string()),
                validation,
            })
        })
        .collect::<Result<_>>()?;
    let full = if options.compute_dic { Some(bin_points(&data.pattern, &data.quadratures)?) } else { None };

    let first_fold = if options.compute_dic { 0 } else { 1 };
    let tasks: Vec<(usize, usize)> = (0..models.len()).flat_map(|m| (first_fold..=k).map(move |f| (m, f))).collect();
    let run = |&(mi, f): &(usize, usize)| -> std::result::Result<TaskOutput, String> {
        let spec = &models[mi];
        let seed = derive_seed(options.seed, &[label_hash(&spec.model_id), f as u64]);
        if f == 0 {
            let draws = fit_model(full.as_ref().unwrap(), spec, &data.covariates, &options.fit, seed).map_err(|e| e.to_string())?;
            return compute_dic(&draws).map(|(d, _)| TaskOutput::Dic(d)).map_err(|e| e.to_string());
        }
        let fold = &folds[f - 1];
        let train = fold.train.as_ref().map_err(Clone::clone)?;
        let draws = fit_model(train, spec, &data.covariates, &options.fit, seed).map_err(|e| e.to_string())?;
        validation_residuals(&fold.validation, &draws, &data.quadratures, &data.partitions, k)
            .map(TaskOutput::Residuals)
            .map_err(|e| e.to_string())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    let outputs: Vec<_> = pool.install(|| tasks.par_iter().map(run).collect());

    let a = options.fit.n_draws;
    let mut outcomes = Vec::with_capacity(models.len());
    let mut it = tasks.iter().zip(outputs);
    for spec in models {
        let mut tensors: Vec<ResidualTensor> = (1..=n_t)
            .map(|t| ResidualTensor::zeros(t, a, k, data.partitions[t - 1].len()))
            .collect();
        let mut failures = Vec::new();
        let mut dic = None;
        for _ in first_fold..=k {
            let (&(_, f), out) = it.next().unwrap();
            match out {
                Ok(TaskOutput::Dic(d)) => dic = Some(d),
                Ok(TaskOutput::Residuals(slices)) => {
                    for (tensor, s) in tensors.iter_mut().zip(&slices) {
                        tensor.set_fold(f - 1, s);
                    }
                }
                Err(message) => {
                    log::warn!("model {} fold {f}: {message}", spec.model_id);
                    failures.push(TaskFailure {
                        model_id: spec.model_id.clone(),
                        fold: f,
                        message,
                    });
                }
            }
        }
        let cv_failed = failures.iter().any(|x| x.fold > 0);
        let table = if cv_failed {
            tensors.clear();
            None
        } else {
            Some(aggregate_crps(&spec.model_id, &tensors, &data.partitions, options.weighting)?)
        };
        outcomes.push(ModelOutcome {
            spec: spec.clone(),
            tensors,
            table,
            dic,
            failures,
        });
    }
    Ok(SweepResult {
        folds: assignment,
        models: outcomes,
    })
}
