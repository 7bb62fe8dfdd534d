//! Subcommand implementations. Each command loads what it needs from the
//! run config, does its work through the library, writes artifacts into the
//! output directory, and prints a short summary to stdout.

use std::path::Path;

use pbglm::dataset::{
    binarize_and_join, generate_synthetic, load_precinct_results, load_voter_file, split,
    Dataset, FeatureMeta, FeatureSpec, JoinReport, PrimaryTag,
};
use pbglm::eval::{
    export_predictions, landslide_report, overall_mean_probability, precinct_predictions,
    primary_voter_report, r2_weighted, WeakLabelReport,
};
use pbglm::poibin::{self, SuccessProbVector};
use pbglm::trainer::{dataset_loss, fit};
use pbglm::{Error, Result};
use serde::Serialize;

use crate::artifacts;
use crate::config::RunConfig;

fn require<'a, T>(value: &'a Option<T>, what: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::InvalidInput(format!("config is missing {what}")))
}

fn ingest_dataset(config: &RunConfig) -> Result<(Dataset, JoinReport)> {
    let paths = config.paths()?;
    let results_path = require(&paths.results, "paths.results")?;
    let voters_path = require(&paths.voters, "paths.voters")?;
    let spec_path = require(&paths.feature_spec, "paths.feature_spec")?;
    let candidates = require(&config.candidates, "the [candidates] section")?;

    let spec = FeatureSpec::from_toml_path(spec_path)?;
    let results = load_precinct_results(results_path, candidates)?;
    let voters = load_voter_file(voters_path, &spec)?;
    binarize_and_join(&results, voters, FeatureMeta::from_spec(&spec))
}

/// Cached dataset when present, otherwise a fresh ingest from the raw paths.
fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    let paths = config.paths()?;
    let cache = paths.cache_path();
    if cache.is_file() {
        return artifacts::read_dataset_cache(&cache);
    }
    Ok(ingest_dataset(config)?.0)
}

#[derive(Serialize)]
struct IngestReport<'a> {
    config_digest: &'a str,
    feature_names: &'a [String],
    #[serde(flatten)]
    join: &'a JoinReport,
    dataset_cache: String,
}

pub fn cmd_ingest(config: &RunConfig) -> Result<()> {
    let (dataset, join) = ingest_dataset(config)?;
    let digest = config.digest();
    let paths = config.paths()?;
    let cache = paths.cache_path();
    artifacts::write_dataset_cache(&cache, &dataset, &digest)?;
    let report_path = paths.out_dir.join("ingest_report.json");
    artifacts::write_json(
        &report_path,
        &IngestReport {
            config_digest: &digest,
            feature_names: &dataset.feature_names,
            join: &join,
            dataset_cache: cache.display().to_string(),
        },
    )?;
    println!(
        "ingested {} precincts ({} voters); dropped {} results-only, {} voters-only, {} zero-major",
        join.retained_precincts,
        join.voters_retained,
        join.dropped_results_only,
        join.dropped_voters_only,
        join.dropped_zero_major_party
    );
    println!("wrote {} and {}", report_path.display(), cache.display());
    Ok(())
}

pub fn cmd_fit(config: &RunConfig) -> Result<()> {
    let dataset = load_dataset(config)?;
    let (train, _test) = split(
        &dataset,
        config.split.mode,
        config.split.train_frac,
        config.split.seed,
    )?;
    let report = fit(&train, config.model.kind, &config.fit)?;

    let digest = config.digest();
    let out_dir = config.out_dir()?;
    let report_path = out_dir.join("fit_report.json");
    artifacts::write_json(
        &report_path,
        &artifacts::FitReportFile {
            config_digest: &digest,
            report: &report,
        },
    )?;
    let params_path = out_dir.join("params.json");
    artifacts::write_params(&params_path, &report.params, &digest)?;
    artifacts::write_loss_tsv(&out_dir.join("loss.tsv"), &report, &digest)?;

    let first = report.approx_nll.first().copied().unwrap_or(f64::NAN);
    let last = report.approx_nll.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained {:?} on {} precincts for {} epochs: approx NLL {first:.3} -> {last:.3} \
         (clipped {}, skipped {}, degenerate {})",
        config.model.kind,
        train.n_precincts(),
        report.epochs_run,
        report.clipped_count,
        report.skipped_count,
        report.degenerate_skips
    );
    println!("wrote {} and {}", report_path.display(), params_path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    config_digest: &'a str,
    r2_train: f64,
    r2_test: f64,
    approx_nll_train: f64,
    approx_nll_test: f64,
    overall_mean_probability_test: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    landslide: Option<WeakLabelReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    primary: Option<WeakLabelReport>,
}

pub fn cmd_evaluate(config: &RunConfig, params_path: &Path) -> Result<()> {
    let dataset = load_dataset(config)?;
    let params = artifacts::read_params(params_path)?;
    if params.covariate_dim() != dataset.covariate_dim() {
        return Err(Error::ShapeMismatch(format!(
            "params expect {} covariates, dataset has {}",
            params.covariate_dim(),
            dataset.covariate_dim()
        )));
    }
    let (train, test) = split(
        &dataset,
        config.split.mode,
        config.split.train_frac,
        config.split.seed,
    )?;

    let r2_train = r2_weighted(&precinct_predictions(&train, &params)?)?;
    let r2_test = r2_weighted(&precinct_predictions(&test, &params)?)?;
    let landslide = if config.eval.landslide {
        Some(landslide_report(
            &test,
            &params,
            config.eval.landslide_threshold,
        )?)
    } else {
        None
    };
    let primary = if config.eval.primary {
        Some(primary_voter_report(&test, &params)?)
    } else {
        None
    };

    let digest = config.digest();
    let out_dir = config.out_dir()?;
    let report = EvaluationReport {
        config_digest: &digest,
        r2_train,
        r2_test,
        approx_nll_train: dataset_loss(&train, &params, false)?,
        approx_nll_test: dataset_loss(&test, &params, false)?,
        overall_mean_probability_test: overall_mean_probability(&test, &params)?,
        landslide,
        primary,
    };
    let report_path = out_dir.join("evaluation.json");
    artifacts::write_json(&report_path, &report)?;
    if let Some(r) = &report.landslide {
        artifacts::write_histogram_tsv(&out_dir.join("landslide_hist.tsv"), r, &digest)?;
    }
    if let Some(r) = &report.primary {
        artifacts::write_histogram_tsv(&out_dir.join("primary_hist.tsv"), r, &digest)?;
    }

    println!("r2_train = {r2_train:.4}, r2_test = {r2_test:.4}");
    if let Some(r) = &report.landslide {
        for (group, mean) in &r.group_means {
            println!("{group}: mean = {mean:.4} (n = {})", r.group_sizes[group]);
        }
    }
    if let Some(r) = &report.primary {
        for (group, mean) in &r.group_means {
            println!("{group}: mean = {mean:.4} (n = {})", r.group_sizes[group]);
        }
    }
    println!("wrote {}", report_path.display());
    Ok(())
}

pub fn cmd_predict(config: &RunConfig, params_path: &Path) -> Result<()> {
    let dataset = load_dataset(config)?;
    let params = artifacts::read_params(params_path)?;
    let out_path = config.out_dir()?.join("predictions.csv");
    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let rows = export_predictions(&dataset, &params, &out_path)?;
    println!("wrote {rows} predictions to {}", out_path.display());
    Ok(())
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    config_digest: &'a str,
    precincts: usize,
    voters: usize,
    total_votes: u64,
    counties: usize,
    seed: u64,
}

pub fn cmd_simulate(config: &RunConfig, emit_csv: bool) -> Result<()> {
    let spec = require(&config.synthetic, "the [synthetic] section")?;
    let seed = config.fit.seed;
    let (dataset, truth) = generate_synthetic(spec, seed)?;

    let digest = config.digest();
    let paths = config.paths()?;
    let cache = paths.cache_path();
    artifacts::write_dataset_cache(&cache, &dataset, &digest)?;
    artifacts::write_params(&paths.out_dir.join("true_params.json"), &truth, &digest)?;
    artifacts::write_json(
        &paths.out_dir.join("simulate_report.json"),
        &SimulateReport {
            config_digest: &digest,
            precincts: dataset.n_precincts(),
            voters: dataset.total_voters(),
            total_votes: dataset.total_votes(),
            counties: dataset.counties().len(),
            seed,
        },
    )?;
    if emit_csv {
        emit_synthetic_csv(&dataset, &paths.out_dir)?;
    }
    println!(
        "simulated {} precincts, {} voters, {} counties (seed {seed}); cache at {}",
        dataset.n_precincts(),
        dataset.total_voters(),
        dataset.counties().len(),
        cache.display()
    );
    Ok(())
}

/// Writes the synthetic dataset back out as raw CSVs (plus a matching
/// feature spec) so the ingestion path can be exercised end to end.
fn emit_synthetic_csv(dataset: &Dataset, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;

    let results_path = out_dir.join("results.csv");
    let mut w = csv::Writer::from_path(&results_path)?;
    w.write_record(["county", "precinct", "candidate", "votes"])?;
    for p in &dataset.precincts {
        w.write_record([
            p.key.county.as_str(),
            p.key.precinct.as_str(),
            "CANDIDATE D",
            &p.d_votes.to_string(),
        ])?;
        w.write_record([
            p.key.county.as_str(),
            p.key.precinct.as_str(),
            "CANDIDATE R",
            &(p.t_votes - p.d_votes).to_string(),
        ])?;
    }
    w.flush()?;

    let voters_path = out_dir.join("voters.csv");
    let mut w = csv::Writer::from_path(&voters_path)?;
    let mut header = vec![
        "county".to_string(),
        "precinct".to_string(),
        "voter_id".to_string(),
    ];
    header.extend(dataset.feature_names.iter().cloned());
    header.push("primary".into());
    w.write_record(&header)?;
    for p in &dataset.precincts {
        for i in 0..p.n_voters() {
            let mut row = vec![
                p.key.county.clone(),
                p.key.precinct.clone(),
                p.voter_ids[i].clone(),
            ];
            for j in 0..dataset.covariate_dim() {
                row.push(format!("{}", p.covariates[[i, j]]));
            }
            row.push(
                match p.primary_tags[i] {
                    PrimaryTag::DemPrimary => "D",
                    PrimaryTag::RepPrimary => "R",
                    PrimaryTag::None => "",
                }
                .into(),
            );
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut spec = String::new();
    for name in &dataset.feature_names {
        spec.push_str(&format!(
            "[[feature]]\nname = \"{name}\"\ncolumn = \"{name}\"\nkind = \"numeric\"\n\n"
        ));
    }
    spec.push_str("[tags]\ncolumn = \"primary\"\ndem_values = [\"D\"]\nrep_values = [\"R\"]\n");
    std::fs::write(out_dir.join("features.toml"), spec)?;

    println!(
        "emitted {}, {}, and {}",
        results_path.display(),
        voters_path.display(),
        out_dir.join("features.toml").display()
    );
    Ok(())
}

/// Formats with 12 significant digits.
fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

pub struct PoibinRequest {
    pub probs: Vec<f64>,
    pub k: Option<u64>,
    pub moments: bool,
    pub lyapunov: bool,
}

pub fn cmd_poibin(request: &PoibinRequest) -> Result<()> {
    let probs = SuccessProbVector::new(request.probs.clone())?;
    let mut printed = false;
    if let Some(k) = request.k {
        println!("pmf[{k}] = {}", sig12(poibin::pmf_dft(&probs, k)?));
        println!("cdf[{k}] = {}", sig12(poibin::cdf_dft(&probs, k)?));
        printed = true;
    }
    if request.moments || (!printed && !request.lyapunov) {
        let m = poibin::moments(&probs);
        println!("mean = {}", sig12(m.mean));
        println!("variance = {}", sig12(m.variance));
    }
    if request.lyapunov || (!printed && !request.moments) {
        println!("lyapunov = {}", sig12(poibin::lyapunov_ratio(&probs)?));
    }
    Ok(())
}

/// Parses a probability list: comma or whitespace separated.
pub fn parse_prob_list(text: &str) -> Result<Vec<f64>> {
    let values: std::result::Result<Vec<f64>, _> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse::<f64>)
        .collect();
    let values =
        values.map_err(|e| Error::InvalidInput(format!("bad probability list: {e}")))?;
    if values.is_empty() {
        return Err(Error::InvalidInput("empty probability list".into()));
    }
    Ok(values)
}
