//! Evaluation: precinct-share accuracy and weak-label diagnostics.
//!
//! Ground truth at the individual level does not exist, so the model is
//! judged two ways: how well expected precinct shares track actual shares
//! (vote-weighted R²), and whether voters with weak individual labels
//! (living in landslide precincts, or having voted in a party primary) get
//! predicted probabilities on the right side.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PrecinctKey, PrimaryTag};
use crate::error::{Error, Result};
use crate::glm::{self, ModelParams};

/// Fixed histogram layout for weak-label reports: 20 bins of width 0.05
/// over [0, 1]; a probability of exactly 1.0 lands in the last bin.
pub const HISTOGRAM_BINS: usize = 20;
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.05;

pub fn histogram_bin(p: f64) -> usize {
    ((p / HISTOGRAM_BIN_WIDTH) as usize).min(HISTOGRAM_BINS - 1)
}

/// Model vs. outcome for one precinct: expected vote share (mean of the
/// per-voter probabilities) against the actual share `D / T`, weighted by
/// the vote count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrecinctPrediction {
    pub key: PrecinctKey,
    pub predicted_share: f64,
    pub actual_share: f64,
    pub weight: u64,
}

/// One prediction per precinct under `params`.
pub fn precinct_predictions(
    dataset: &Dataset,
    params: &ModelParams,
) -> Result<Vec<PrecinctPrediction>> {
    let mut out = Vec::with_capacity(dataset.n_precincts());
    for precinct in &dataset.precincts {
        if precinct.t_votes == 0 {
            return Err(Error::Validation(format!(
                "precinct {} has zero total votes",
                precinct.key
            )));
        }
        let probs = glm::precinct_probs(params, precinct)?;
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        out.push(PrecinctPrediction {
            key: precinct.key.clone(),
            predicted_share: mean,
            actual_share: precinct.actual_share(),
            weight: precinct.t_votes,
        });
    }
    Ok(out)
}

/// Vote-weighted coefficient of determination:
/// `1 - sum w (a - p)^2 / sum w (a - a_bar)^2` with `a_bar` the weighted
/// mean of actual shares. Negative values mean the model predicts worse
/// than the weighted-mean constant.
pub fn r2_weighted(preds: &[PrecinctPrediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total_weight: f64 = preds.iter().map(|p| p.weight as f64).sum();
    let mean_actual: f64 = preds
        .iter()
        .map(|p| p.weight as f64 * p.actual_share)
        .sum::<f64>()
        / total_weight;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for p in preds {
        let w = p.weight as f64;
        ss_res += w * (p.actual_share - p.predicted_share).powi(2);
        ss_tot += w * (p.actual_share - mean_actual).powi(2);
    }
    if ss_tot <= 0.0 {
        return Err(Error::ConstantActuals);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Predicted-probability summaries for groups of weakly labeled voters.
/// `histograms` counts per fixed 0.05-wide bin; counts sum to the group
/// size. Groups with no members appear with size 0 and are listed in
/// `empty_groups` (their mean is omitted).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeakLabelReport {
    pub group_means: BTreeMap<String, f64>,
    pub histograms: BTreeMap<String, Vec<u64>>,
    pub group_sizes: BTreeMap<String, u64>,
    pub empty_groups: Vec<String>,
}

struct GroupAccumulator {
    names: Vec<String>,
    sums: Vec<f64>,
    counts: Vec<u64>,
    bins: Vec<Vec<u64>>,
}

impl GroupAccumulator {
    fn new(names: &[&str]) -> Self {
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            sums: vec![0.0; names.len()],
            counts: vec![0; names.len()],
            bins: vec![vec![0; HISTOGRAM_BINS]; names.len()],
        }
    }

    fn add(&mut self, group: usize, prob: f64) {
        self.sums[group] += prob;
        self.counts[group] += 1;
        self.bins[group][histogram_bin(prob)] += 1;
    }

    fn finish(self) -> WeakLabelReport {
        let mut group_means = BTreeMap::new();
        let mut histograms = BTreeMap::new();
        let mut group_sizes = BTreeMap::new();
        let mut empty_groups = Vec::new();
        for (i, name) in self.names.iter().enumerate() {
            if self.counts[i] > 0 {
                group_means.insert(name.clone(), self.sums[i] / self.counts[i] as f64);
            } else {
                empty_groups.push(name.clone());
            }
            histograms.insert(name.clone(), self.bins[i].clone());
            group_sizes.insert(name.clone(), self.counts[i]);
        }
        WeakLabelReport {
            group_means,
            histograms,
            group_sizes,
            empty_groups,
        }
    }
}

/// Groups voters by whether their precinct was a landslide: actual share
/// `>= threshold` (group `dem_landslide`) or `<= 1 - threshold`
/// (`rep_landslide`). Voters elsewhere are not reported.
pub fn landslide_report(
    dataset: &Dataset,
    params: &ModelParams,
    threshold: f64,
) -> Result<WeakLabelReport> {
    if !(threshold > 0.5 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "landslide threshold must lie in (0.5, 1], got {threshold}"
        )));
    }
    let mut acc = GroupAccumulator::new(&["dem_landslide", "rep_landslide"]);
    for precinct in &dataset.precincts {
        if precinct.t_votes == 0 {
            continue;
        }
        let share = precinct.actual_share();
        let group = if share >= threshold {
            0
        } else if share <= 1.0 - threshold {
            1
        } else {
            continue;
        };
        let probs = glm::precinct_probs(params, precinct)?;
        for &p in probs.iter() {
            acc.add(group, p);
        }
    }
    Ok(acc.finish())
}

/// Groups voters by their primary-participation tag (`dem_primary`,
/// `rep_primary`); untagged voters are not reported.
pub fn primary_voter_report(dataset: &Dataset, params: &ModelParams) -> Result<WeakLabelReport> {
    let mut acc = GroupAccumulator::new(&["dem_primary", "rep_primary"]);
    for precinct in &dataset.precincts {
        let probs = glm::precinct_probs(params, precinct)?;
        for (i, &p) in probs.iter().enumerate() {
            match precinct.primary_tags[i] {
                PrimaryTag::DemPrimary => acc.add(0, p),
                PrimaryTag::RepPrimary => acc.add(1, p),
                PrimaryTag::None => {}
            }
        }
    }
    Ok(acc.finish())
}

/// Mean predicted probability over every voter in the dataset, the baseline
/// the weak-label group means are compared against.
pub fn overall_mean_probability(dataset: &Dataset, params: &ModelParams) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0u64;
    for precinct in &dataset.precincts {
        let probs = glm::precinct_probs(params, precinct)?;
        sum += probs.iter().sum::<f64>();
        count += probs.len() as u64;
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(sum / count as f64)
}

/// Writes `county,precinct,voter_id,probability` with one row per voter,
/// probabilities rendered with 6 decimal digits. Returns the row count.
pub fn export_predictions(
    dataset: &Dataset,
    params: &ModelParams,
    path: &Path,
) -> Result<usize> {
    let file = std::fs::File::create(path).map_err(|source| Error::FileOpen {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record(["county", "precinct", "voter_id", "probability"])?;
    let mut rows = 0usize;
    for precinct in &dataset.precincts {
        let probs = glm::precinct_probs(params, precinct)?;
        for (i, &p) in probs.iter().enumerate() {
            writer.write_record([
                precinct.key.county.as_str(),
                precinct.key.precinct.as_str(),
                precinct.voter_ids[i].as_str(),
                &format!("{p:.6}"),
            ])?;
            rows += 1;
        }
    }
    writer.flush().map_err(Error::Io)?;
    Ok(rows)
}
