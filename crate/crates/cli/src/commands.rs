use std::path::{Path, PathBuf};

use patchgraph_core::fsutil::{atomic_write, create_dir_all};
use patchgraph_core::graph::GraphInfo;
use patchgraph_core::ingest::{
    generate_synthetic_cohort, rgb_to_saturation, segment_to_coordinates, PatchCoord,
    PatchCoordinateSet, Raster, SegmentParams, SyntheticSpec,
};
use patchgraph_core::model::{attention_heatmap, write_attention_csv, PatchGcn};
use patchgraph_core::pipeline::{
    evaluate_cross_validation, read_predictions, run_gradcheck_suite, train_cross_validation,
    write_predictions, Cohort, CohortSplit, Metrics, RunConfig,
};
use patchgraph_core::survival::{
    kaplan_meier, km_svg, logrank_test, stratify_by_median, write_km_csv, BinBoundaries,
    RiskPrediction,
};
use serde::Serialize;

use crate::overrides::load_config;
use crate::{Command, Failure};

type CmdResult = Result<(), Failure>;

pub fn run(command: Command) -> CmdResult {
    match command {
        Command::Synth {
            out,
            n_patients,
            grid_side,
            n_phenotypes,
            feature_dim,
            noise_sigma,
            synth_seed,
            common,
        } => {
            let config = load_config(&common)?;
            let spec = SyntheticSpec {
                n_patients,
                grid_side,
                n_phenotypes,
                feature_dim,
                noise_sigma,
                seed: synth_seed.unwrap_or(config.seed),
                ..SyntheticSpec::default()
            };
            synth(&spec, &out)
        }
        Command::Segment {
            raster,
            slide_id,
            out,
            downsample,
            min_foreground,
            first_id,
            common,
        } => {
            let config = load_config(&common)?;
            let params = SegmentParams {
                patch_size: config.patch_size,
                downsample,
                min_foreground_fraction: min_foreground,
            };
            segment(&raster, &slide_id, &out, &params, first_id)
        }
        Command::BuildGraph { common } => build_graphs(&load_config(&common)?),
        Command::Train { common } => train(&load_config(&common)?),
        Command::Eval { common } => eval(&load_config(&common)?),
        Command::Stratify {
            predictions,
            common,
        } => {
            let config = load_config(&common)?;
            let path = predictions.unwrap_or_else(|| config.output_dir.join("predictions.csv"));
            stratify(&config, &path)
        }
        Command::Attention {
            patient,
            fold,
            common,
        } => attention(&load_config(&common)?, &patient, fold),
        Command::Gradcheck { seeds, common } => gradcheck(&load_config(&common)?, seeds),
        Command::GraphInfo { patient, common } => graph_info(&load_config(&common)?, patient.as_deref()),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CmdResult {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(patchgraph_core::Error::from)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> CmdResult {
    let text = serde_json::to_string_pretty(value).map_err(patchgraph_core::Error::from)?;
    println!("{text}");
    Ok(())
}

fn synth(spec: &SyntheticSpec, out: &Path) -> CmdResult {
    let cohort = generate_synthetic_cohort(spec)?;
    cohort.write_to_dir(out)?;
    log::info!(
        "wrote {} synthetic patients to {}",
        cohort.patients.len(),
        out.display()
    );
    Ok(())
}

fn segment(raster: &Path, slide_id: &str, out: &Path, params: &SegmentParams, first_id: u64) -> CmdResult {
    let mut image = Raster::read(raster)?;
    if image.channels() == 3 {
        image = rgb_to_saturation(&image)?;
    }
    let coords = segment_to_coordinates(&image, slide_id, params)?;
    let coords = if first_id == 0 {
        coords
    } else {
        let shifted: Vec<PatchCoord> = coords
            .entries()
            .iter()
            .map(|c| PatchCoord {
                patch_id: c.patch_id + first_id,
                ..c.clone()
            })
            .collect();
        PatchCoordinateSet::new(coords.patch_size(), shifted)?
    };
    coords.write_csv(out)?;
    log::info!("{} tissue patches written to {}", coords.len(), out.display());
    Ok(())
}

fn graphs_dir(config: &RunConfig) -> PathBuf {
    config.output_dir.join("graphs")
}

fn build_graphs(config: &RunConfig) -> CmdResult {
    let cohort = Cohort::load(config)?;
    let dir = graphs_dir(config);
    create_dir_all(&dir)?;
    let mut infos = Vec::with_capacity(cohort.len());
    for p in &cohort.patients {
        p.graph
            .write_edges(dir.join(format!("{}.edges.csv", p.label.patient_id)))?;
        infos.push(p.graph.info());
    }
    write_json(&infos, &dir.join("summary.json"))?;
    log::info!("built {} graphs in {}", infos.len(), dir.display());
    Ok(())
}

fn model_path(config: &RunConfig, fold: usize) -> PathBuf {
    config
        .output_dir
        .join("models")
        .join(format!("fold_{fold}.ckpt"))
}

#[derive(Serialize)]
struct FoldTrainingSummary<'a> {
    fold: usize,
    n_train: usize,
    optimizer_steps: u64,
    bin_edges: Vec<Option<f64>>,
    epoch_losses: &'a [f64],
}

fn edges_for_json(b: &BinBoundaries) -> Vec<Option<f64>> {
    // JSON has no infinity; the open last edge is written as null.
    b.edges()
        .iter()
        .map(|&e| e.is_finite().then_some(e))
        .collect()
}

fn train(config: &RunConfig) -> CmdResult {
    let cohort = Cohort::load(config)?;
    log::info!(
        "training {} folds on {} patients ({} epochs)",
        config.folds,
        cohort.len(),
        config.epochs
    );
    let training = train_cross_validation(config, &cohort)?;
    create_dir_all(config.output_dir.join("models"))?;
    training.split.write_csv(config.output_dir.join("folds.csv"))?;
    let mut summaries = Vec::new();
    for fold in &training.folds {
        fold.model.save(model_path(config, fold.fold))?;
        let n_train = training.split.training(fold.fold).len();
        log::info!(
            "fold {}: loss {:.4} -> {:.4}",
            fold.fold,
            fold.epoch_losses.first().copied().unwrap_or(f64::NAN),
            fold.epoch_losses.last().copied().unwrap_or(f64::NAN)
        );
        summaries.push(FoldTrainingSummary {
            fold: fold.fold,
            n_train,
            optimizer_steps: fold.optimizer_steps,
            bin_edges: edges_for_json(&fold.boundaries),
            epoch_losses: &fold.epoch_losses,
        });
    }
    write_json(&summaries, &config.output_dir.join("training.json"))
}

fn load_models(config: &RunConfig, n_folds: usize) -> Result<Vec<PatchGcn>, Failure> {
    (0..n_folds)
        .map(|f| PatchGcn::load(model_path(config, f)).map_err(Failure::from))
        .collect()
}

fn eval(config: &RunConfig) -> CmdResult {
    let cohort = Cohort::load(config)?;
    let split = CohortSplit::read_csv(config.output_dir.join("folds.csv"))?;
    let models = load_models(config, split.n_folds)?;
    let evaluations = evaluate_cross_validation(&split, &models, &cohort)?;
    let predictions: Vec<_> = evaluations
        .iter()
        .flat_map(|e| e.predictions.iter().cloned())
        .collect();
    write_predictions(&predictions, config.output_dir.join("predictions.csv"))?;
    let metrics = Metrics::from_evaluations(config, &evaluations)?;
    metrics.write(config.output_dir.join("metrics.json"))?;
    println!(
        "c-Index {:.3} ± {:.3} over {} folds",
        metrics.mean_c_index,
        metrics.std_c_index,
        metrics.per_fold.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct StratifyReport {
    n_low: usize,
    n_high: usize,
    median_risk: f64,
    degenerate: bool,
    chi_square: f64,
    p_value: f64,
    observed_low: f64,
    expected_low: f64,
}

fn stratify(config: &RunConfig, predictions: &Path) -> CmdResult {
    let preds: Vec<RiskPrediction> = read_predictions(predictions)?
        .into_iter()
        .map(|p| p.prediction)
        .collect();
    let strata = stratify_by_median(&preds)?;
    if strata.degenerate {
        return Err(Failure::numerical(
            "all risks are equal; the median split has an empty high-risk group",
        ));
    }
    let test = logrank_test(&strata.low_risk, &strata.high_risk)?;
    let low = kaplan_meier(&strata.low_risk);
    let high = kaplan_meier(&strata.high_risk);
    create_dir_all(&config.output_dir)?;
    let curves = [("low", &low), ("high", &high)];
    write_km_csv(&curves, config.output_dir.join("km.csv"))?;
    let title = format!("Median risk split, logrank p = {:.3e}", test.p_value);
    atomic_write(config.output_dir.join("km.svg"), km_svg(&curves, &title).as_bytes())?;
    let report = StratifyReport {
        n_low: strata.low_risk.len(),
        n_high: strata.high_risk.len(),
        median_risk: strata.median_risk,
        degenerate: strata.degenerate,
        chi_square: test.chi_square,
        p_value: test.p_value,
        observed_low: test.observed_a,
        expected_low: test.expected_a,
    };
    write_json(&report, &config.output_dir.join("stratify.json"))?;
    println!("logrank chi-square {:.4}, p-value {:.4e}", test.chi_square, test.p_value);
    Ok(())
}

fn attention(config: &RunConfig, patient: &str, fold: Option<usize>) -> CmdResult {
    let cohort = Cohort::load(config)?;
    let data = cohort
        .patients
        .iter()
        .find(|p| p.label.patient_id == patient)
        .ok_or_else(|| Failure::from(patchgraph_core::Error::Validation(format!("unknown patient {patient:?}"))))?;
    let fold = match fold {
        Some(f) => f,
        None => CohortSplit::read_csv(config.output_dir.join("folds.csv"))?
            .fold_of(patient)
            .ok_or_else(|| {
                Failure::from(patchgraph_core::Error::Validation(format!(
                    "patient {patient:?} is not in folds.csv"
                )))
            })?,
    };
    let model = PatchGcn::load(model_path(config, fold))?;
    let trace = model.predict(&data.graph)?;
    let dir = config.output_dir.join("attention");
    create_dir_all(&dir)?;
    write_attention_csv(&data.graph, &trace.attention, dir.join(format!("{patient}.csv")))?;
    let heatmap = attention_heatmap(&data.graph, &trace.attention, config.patch_size)?;
    heatmap.write(dir.join(format!("{patient}.pgm")))?;
    println!("patient {patient}: risk {:.6} (fold {fold} model)", trace.risk);
    Ok(())
}

fn gradcheck(config: &RunConfig, seeds: u64) -> CmdResult {
    let suite = run_gradcheck_suite(seeds)?;
    for r in suite.primitives.iter().chain(&suite.model) {
        println!(
            "{:<28} max rel error {:.3e}  checked {:>6}  skipped {:>4}",
            r.name, r.max_rel_error, r.checked, r.skipped
        );
    }
    println!(
        "primitives max {:.3e}, model max {:.3e}: {}",
        suite.max_primitive_error,
        suite.max_model_error,
        if suite.passed { "PASS" } else { "FAIL" }
    );
    if config.output_dir.is_dir() {
        write_json(&suite, &config.output_dir.join("gradcheck.json"))?;
    }
    if suite.passed {
        Ok(())
    } else {
        Err(Failure::numerical("gradient check failed"))
    }
}

fn graph_info(config: &RunConfig, patient: Option<&str>) -> CmdResult {
    let cohort = Cohort::load(config)?;
    let infos: Vec<GraphInfo> = cohort
        .patients
        .iter()
        .filter(|p| patient.is_none_or(|id| p.label.patient_id == id))
        .map(|p| p.graph.info())
        .collect();
    if let (Some(id), true) = (patient, infos.is_empty()) {
        return Err(patchgraph_core::Error::Validation(format!("unknown patient {id:?}")).into());
    }
    print_json(&infos)
}
