//! Stage orchestration: ingestion, QC, normalization, ranking, metric
//! evaluation, training, combination prediction, and recommendation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::Array1;

use crate::config::{PipelineConfig, PredictSection};
use crate::distance::{DistanceMetricSpec, EmdConfig, Preprocessing};
use crate::error::{Error, Result};
use crate::expr::{
    zscore_fit_apply, CellExpressionMatrix, ConditionDataset, GenePanel, Role,
    StudyCollection,
};
use crate::io::{ingest, read_gene_panel, IngestFormat};
use crate::perturb::{
    generate_combination_grid, train, BaseCondition, Checkpoint, TrainOutcome, TrainSample,
};
use crate::ranking::{
    compare_metrics, corruption_sweep, rank_against_target, RankingReport, SweepResult,
};
use crate::recommend::{constrained_kmedoids, CandidatePoint, MedoidSelection};
use crate::report;
use crate::synth::BASE_COVARIATE;

/// Raw study data after ingestion, QC, and panel projection.
pub struct LoadedStudy {
    pub collection: StudyCollection,
    /// Panel genes absent from each condition, zero-filled at projection.
    pub missing_genes: BTreeMap<String, Vec<String>>,
}

fn ingest_condition(
    source: &crate::config::ConditionSource,
    role: Role,
    qc_threshold: usize,
    panel: &GenePanel,
    missing: &mut BTreeMap<String, Vec<String>>,
) -> Result<ConditionDataset> {
    let format: IngestFormat = source.format.parse()?;
    let raw = ingest(&source.path, format)?;
    let filtered = raw.filter_low_quality_cells(qc_threshold)?;
    let (projected, absent) = filtered.project_to_panel(panel)?;
    if !absent.is_empty() {
        eprintln!(
            "warning: condition '{}' lacks {} panel genes (zero-filled)",
            source.id,
            absent.len()
        );
        missing.insert(source.id.clone(), absent);
    }
    ConditionDataset::new(source.id.clone(), projected, role)
}

/// Ingest target and queries, apply QC, and project everything onto the
/// gene panel (the target's gene set when no panel file is configured).
pub fn load_study(cfg: &PipelineConfig) -> Result<LoadedStudy> {
    let panel = match &cfg.data.panel {
        Some(path) => read_gene_panel(path)?,
        None => {
            let format: IngestFormat = cfg.data.target.format.parse()?;
            GenePanel::new(ingest(&cfg.data.target.path, format)?.gene_ids)?
        }
    };
    let mut missing = BTreeMap::new();
    let target = ingest_condition(
        &cfg.data.target,
        Role::Target,
        cfg.qc.min_nonzero_genes,
        &panel,
        &mut missing,
    )?;
    let queries = cfg
        .data
        .queries
        .iter()
        .map(|q| ingest_condition(q, Role::Query, cfg.qc.min_nonzero_genes, &panel, &mut missing))
        .collect::<Result<Vec<_>>>()?;
    Ok(LoadedStudy {
        collection: StudyCollection::new(target, queries, panel)?,
        missing_genes: missing,
    })
}

/// Apply the metric's preprocessing (log-normalize, optionally pooled
/// z-score) to a raw-count collection.
pub fn preprocess_for_metric(
    collection: &StudyCollection,
    spec: &DistanceMetricSpec,
    scale: f64,
) -> Result<(ConditionDataset, Vec<ConditionDataset>)> {
    let target_log = collection.target.matrix.log_normalize(scale)?;
    let queries_log: Vec<CellExpressionMatrix> = collection
        .queries
        .iter()
        .map(|q| q.matrix.log_normalize(scale))
        .collect::<Result<_>>()?;
    let (target_m, query_ms) = match spec.preprocessing {
        Preprocessing::LogNormalized => (target_log, queries_log),
        Preprocessing::ZscoredLogNormalized => {
            let mut all = Vec::with_capacity(queries_log.len() + 1);
            all.push(target_log);
            all.extend(queries_log);
            let mut z = zscore_fit_apply(&all)?;
            let t = z.remove(0);
            (t, z)
        }
    };
    let target = ConditionDataset::new(
        collection.target.condition_id.clone(),
        target_m,
        collection.target.role,
    )?;
    let queries = collection
        .queries
        .iter()
        .zip(query_ms)
        .map(|(q, m)| ConditionDataset::new(q.condition_id.clone(), m, q.role))
        .collect::<Result<Vec<_>>>()?;
    Ok((target, queries))
}

fn record(outputs: &mut Vec<String>, path: &Path) {
    // file names only, so the summary does not depend on the output root
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    outputs.push(name);
}

/// Per-query top genes by absolute pseudobulk difference to the target.
fn gene_contributions(
    target: &ConditionDataset,
    queries: &[ConditionDataset],
    top_n: usize,
) -> Result<Vec<report::GeneContribution>> {
    let tpb = target.pseudobulk()?;
    let genes = &target.matrix.gene_ids;
    let mut rows = Vec::new();
    for q in queries {
        let qpb = q.pseudobulk()?;
        let mut by_gene: Vec<(usize, f64)> = (0..genes.len())
            .map(|j| (j, (qpb[j] - tpb[j]).abs()))
            .collect();
        by_gene.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(j, diff) in by_gene.iter().take(top_n) {
            rows.push(report::GeneContribution {
                condition_id: q.condition_id.clone(),
                gene_id: genes[j].clone(),
                target_mean: tpb[j],
                query_mean: qpb[j],
                abs_difference: diff,
            });
        }
    }
    Ok(rows)
}

/// Rank stage: QC, normalize, rank, and emit the ranking report, bar chart,
/// and gene contribution table.
pub fn run_rank(cfg: &PipelineConfig, out_dir: &Path, outputs: &mut Vec<String>) -> Result<RankingReport> {
    let spec = cfg.metric_spec()?;
    let study = load_study(cfg)?;
    let (target, queries) = preprocess_for_metric(&study.collection, &spec, cfg.normalize.scale)?;
    let ranking = rank_against_target(&target, &queries, &spec, &cfg.emd_config())?;

    let ranking_path = out_dir.join("ranking.csv");
    report::write_ranking_csv(&ranking, &ranking_path)?;
    record(outputs, &ranking_path);
    let svg_path = out_dir.join("ranking.svg");
    report::write_ranking_svg(&ranking, &svg_path)?;
    record(outputs, &svg_path);
    let contributions = gene_contributions(&target, &queries, 10)?;
    let contrib_path = out_dir.join("gene_contributions.csv");
    report::write_contributions_csv(&contributions, &contrib_path)?;
    record(outputs, &contrib_path);
    Ok(ranking)
}

/// Metric evaluation stage: corruption sweep over all four metric variants.
pub fn run_evaluate(
    cfg: &PipelineConfig,
    out_dir: &Path,
    outputs: &mut Vec<String>,
) -> Result<SweepResult> {
    let study = load_study(cfg)?;
    let protocol = cfg.corruption_protocol();
    let expected_order = match &cfg.corruption.expected_order {
        Some(order) => order.clone(),
        None => {
            // fall back to the uncorrupted ranking under the configured metric
            let spec = cfg.metric_spec()?;
            let (target, queries) =
                preprocess_for_metric(&study.collection, &spec, cfg.normalize.scale)?;
            rank_against_target(&target, &queries, &spec, &cfg.emd_config())?
                .entries
                .into_iter()
                .map(|e| e.condition_id)
                .collect()
        }
    };
    let sweep = corruption_sweep(
        &study.collection,
        &expected_order,
        &DistanceMetricSpec::ALL,
        &protocol,
        cfg.normalize.scale,
        &cfg.emd_config(),
    )?;
    let sweep_path = out_dir.join("corruption_sweep.csv");
    report::write_sweep_csv(&sweep, &sweep_path)?;
    record(outputs, &sweep_path);
    let comparison = compare_metrics(&sweep)?;
    let cmp_path = out_dir.join("metric_comparison.csv");
    report::write_metric_comparison_csv(&comparison, &cmp_path)?;
    record(outputs, &cmp_path);
    Ok(sweep)
}

/// Training samples from the query conditions that carry a base label.
/// Cells are taken from the log-normalized matrices.
fn training_samples(
    cfg: &PipelineConfig,
    collection: &StudyCollection,
) -> Result<Vec<TrainSample>> {
    let mut samples = Vec::new();
    for (source, condition) in cfg.data.queries.iter().zip(&collection.queries) {
        let Some(base) = &source.base else { continue };
        let log = condition.matrix.log_normalize(cfg.normalize.scale)?;
        let perturbations: BTreeSet<String> = source.perturbations.iter().cloned().collect();
        let covariates: BTreeMap<String, String> =
            [(BASE_COVARIATE.to_string(), base.clone())].into_iter().collect();
        for row in log.values.rows() {
            samples.push(TrainSample {
                cell: row.to_owned(),
                perturbations: perturbations.clone(),
                covariates: covariates.clone(),
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::Config(
            "no query conditions carry a base label; nothing to train on".into(),
        ));
    }
    Ok(samples)
}

/// Train stage: fit the perturbational model on labeled query conditions and
/// write the checkpoint plus the loss history.
pub fn run_train(
    cfg: &PipelineConfig,
    out_dir: &Path,
    outputs: &mut Vec<String>,
) -> Result<(Checkpoint, TrainOutcome)> {
    let study = load_study(cfg)?;
    let samples = training_samples(cfg, &study.collection)?;
    let outcome = train(&samples, &cfg.hyperparams(), &cfg.train_config())?;
    let checkpoint = Checkpoint::new(outcome.params.clone(), cfg.train_config());
    let model_path = out_dir.join("model.json");
    if let Some(parent) = model_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    checkpoint.save(&model_path)?;
    record(outputs, &model_path);

    let mut loss_csv = String::from("epoch,reconstruction_loss\n");
    for (epoch, loss) in outcome.loss_history.iter().enumerate() {
        loss_csv.push_str(&format!("{epoch},{}\n", report::fmt6(*loss)));
    }
    let loss_path = out_dir.join("loss_history.csv");
    std::fs::write(&loss_path, loss_csv).map_err(|e| Error::io(&loss_path, e))?;
    record(outputs, &loss_path);
    Ok((checkpoint, outcome))
}

/// Base conditions for the grid: one per distinct base label, using the
/// cells of that base's control condition (empty perturbation set).
fn base_conditions(
    cfg: &PipelineConfig,
    collection: &StudyCollection,
) -> Result<Vec<BaseCondition>> {
    let mut bases: BTreeMap<String, BaseCondition> = BTreeMap::new();
    for (source, condition) in cfg.data.queries.iter().zip(&collection.queries) {
        let Some(base) = &source.base else { continue };
        if !source.perturbations.is_empty() || bases.contains_key(base) {
            continue;
        }
        let log = condition.matrix.log_normalize(cfg.normalize.scale)?;
        let cells: Vec<Array1<f64>> = log.values.rows().into_iter().map(|r| r.to_owned()).collect();
        bases.insert(
            base.clone(),
            BaseCondition {
                id: base.clone(),
                cells,
                gene_ids: log.gene_ids.clone(),
                covariates: [(BASE_COVARIATE.to_string(), base.clone())]
                    .into_iter()
                    .collect(),
            },
        );
    }
    if bases.is_empty() {
        return Err(Error::Config(
            "no control conditions (base label, empty perturbation set) to predict from".into(),
        ));
    }
    Ok(bases.into_values().collect())
}

fn grid_addons(predict: &PredictSection, cfg: &PipelineConfig) -> Result<Vec<String>> {
    if let Some(addons) = &predict.addons {
        return Ok(addons.clone());
    }
    let mut set = BTreeSet::new();
    for q in &cfg.data.queries {
        set.extend(q.perturbations.iter().cloned());
    }
    if set.is_empty() {
        return Err(Error::Config(
            "no addon perturbations configured or labeled".into(),
        ));
    }
    Ok(set.into_iter().collect())
}

/// Predict stage: generate the combination grid and rank the in-silico
/// conditions against the target.
pub fn run_predict(
    cfg: &PipelineConfig,
    checkpoint: &Checkpoint,
    out_dir: &Path,
    outputs: &mut Vec<String>,
) -> Result<Vec<ConditionDataset>> {
    let predict = cfg
        .predict
        .as_ref()
        .ok_or_else(|| Error::Config("predict stage requested but not configured".into()))?;
    let study = load_study(cfg)?;
    let bases = base_conditions(cfg, &study.collection)?;
    let addons = grid_addons(predict, cfg)?;
    let orders: BTreeSet<usize> = predict.orders.iter().cloned().collect();
    let exclude: BTreeSet<String> = predict.exclude.iter().cloned().collect();
    let grid = generate_combination_grid(
        &checkpoint.params,
        &bases,
        &addons,
        &orders,
        &exclude,
        predict.cells_per_condition,
        cfg.seed,
    )?;
    if grid.is_empty() {
        return Ok(grid);
    }

    // rank the in-silico conditions by distance to the (log-normalized) target
    let target_log = ConditionDataset::new(
        study.collection.target.condition_id.clone(),
        study.collection.target.matrix.log_normalize(cfg.normalize.scale)?,
        Role::Target,
    )?;
    let spec = DistanceMetricSpec {
        kind: cfg.metric_spec()?.kind,
        preprocessing: Preprocessing::LogNormalized,
    };
    let ranking = crate::recommend::rank_candidates_to_target(
        &grid,
        &target_log,
        &spec,
        &cfg.emd_config(),
    )?;
    let path = out_dir.join("predictions_ranking.csv");
    report::write_ranking_csv(&ranking, &path)?;
    record(outputs, &path);
    Ok(grid)
}

/// Recommend stage: k-medoids over query pseudobulks plus any in-silico
/// predictions. Fixed medoids default to the measured query conditions.
pub fn run_recommend(
    cfg: &PipelineConfig,
    predictions: &[ConditionDataset],
    out_dir: &Path,
    outputs: &mut Vec<String>,
) -> Result<MedoidSelection> {
    let recommend = cfg
        .recommend
        .as_ref()
        .ok_or_else(|| Error::Config("recommend stage requested but not configured".into()))?;
    let study = load_study(cfg)?;
    let fixed_ids: BTreeSet<String> = match &recommend.fixed {
        Some(ids) => ids.iter().cloned().collect(),
        None if !predictions.is_empty() => study
            .collection
            .queries
            .iter()
            .map(|q| q.condition_id.clone())
            .collect(),
        None => BTreeSet::new(),
    };

    let mut candidates = Vec::new();
    for q in &study.collection.queries {
        let log = q.matrix.log_normalize(cfg.normalize.scale)?;
        candidates.push(CandidatePoint {
            condition_id: q.condition_id.clone(),
            vector: ConditionDataset::new(q.condition_id.clone(), log, q.role)?.pseudobulk()?,
            fixed: fixed_ids.contains(&q.condition_id),
        });
    }
    for p in predictions {
        candidates.push(CandidatePoint {
            condition_id: p.condition_id.clone(),
            vector: p.pseudobulk()?,
            fixed: fixed_ids.contains(&p.condition_id),
        });
    }

    let selection = constrained_kmedoids(&candidates, recommend.k, cfg.seed)?;
    let path = out_dir.join("medoids.json");
    report::write_medoids_json(&selection, &path)?;
    record(outputs, &path);
    Ok(selection)
}

/// Outcome of one full pipeline invocation.
pub struct PipelineOutcome {
    pub ranking: RankingReport,
    pub predictions: Vec<ConditionDataset>,
    pub selection: Option<MedoidSelection>,
    pub outputs: Vec<String>,
}

/// One full iteration: rank, then (when configured) train + predict the
/// combination grid, then recommend. A failure leaves an INCOMPLETE marker
/// naming the failed stage next to any partial outputs.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut outputs = Vec::new();
    let stage = |name: &'static str| {
        move |e: Error| {
            let _ = std::fs::write(
                out_dir.join("INCOMPLETE"),
                format!("pipeline aborted during stage '{name}'\n"),
            );
            e.in_stage(name)
        }
    };

    let ranking = run_rank(cfg, out_dir, &mut outputs).map_err(stage("rank"))?;
    run_evaluate(cfg, out_dir, &mut outputs).map_err(stage("evaluate"))?;

    let predictions = if cfg.predict.is_some() {
        let (checkpoint, _) = run_train(cfg, out_dir, &mut outputs).map_err(stage("train"))?;
        run_predict(cfg, &checkpoint, out_dir, &mut outputs).map_err(stage("predict"))?
    } else {
        Vec::new()
    };

    let selection = if cfg.recommend.is_some() {
        Some(run_recommend(cfg, &predictions, out_dir, &mut outputs).map_err(stage("recommend"))?)
    } else {
        None
    };

    let summary_path = out_dir.join("summary.json");
    report::write_summary_json(cfg.seed, cfg, &outputs, &summary_path)?;
    let _ = std::fs::remove_file(out_dir.join("INCOMPLETE"));
    Ok(PipelineOutcome {
        ranking,
        predictions,
        selection,
        outputs,
    })
}

/// Write a synthetic ranking study as CSV files plus a ready-to-run config;
/// returns the planted order.
pub fn emit_synthetic_study(
    spec: &crate::synth::SyntheticSpec,
    out_dir: &Path,
) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let study = crate::synth::generate_synthetic(spec)?;
    crate::io::write_dense_csv(&study.collection.target.matrix, &out_dir.join("target.csv"))?;
    let mut query_lines = String::new();
    for q in &study.collection.queries {
        let file = format!("{}.csv", q.condition_id);
        crate::io::write_dense_csv(&q.matrix, &out_dir.join(&file))?;
        query_lines.push_str(&format!(
            "\n[[data.queries]]\nid = \"{}\"\npath = \"{}\"\n",
            q.condition_id, file
        ));
    }
    let expected = study
        .planted_order
        .iter()
        .map(|id| format!("\"{id}\""))
        .collect::<Vec<_>>()
        .join(", ");
    let config = format!(
        "seed = {seed}\n\n[data.target]\nid = \"target\"\npath = \"target.csv\"\n{queries}\n\
         [qc]\nmin_nonzero_genes = 1\n\n[corruption]\nexpected_order = [{expected}]\n",
        seed = spec.seed,
        queries = query_lines,
    );
    let config_path = out_dir.join("run.toml");
    std::fs::write(&config_path, config).map_err(|e| Error::io(&config_path, e))?;
    std::fs::write(
        out_dir.join("planted_order.txt"),
        study.planted_order.join("\n") + "\n",
    )
    .map_err(|e| Error::io(out_dir, e))?;
    Ok(study.planted_order)
}

/// EMD configuration with a CLI-supplied cell cap.
pub fn emd_with_cap(cfg: &PipelineConfig, max_cells: Option<usize>) -> EmdConfig {
    let mut emd = cfg.emd_config();
    if let Some(m) = max_cells {
        emd.max_cells = m;
    }
    emd
}
