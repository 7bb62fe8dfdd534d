//! Data model and ingestion.
//!
//! Two CSV sources feed the model: precinct-level vote totals and a voter
//! file with one row per registered voter. A declarative feature spec maps
//! raw voter-file columns onto numeric features. Joining the sources
//! binarizes multi-candidate totals into a two-outcome count per precinct
//! and stacks each precinct's voters into a covariate matrix.
//!
//! The module also provides precinct- and county-level train/test splits and
//! a synthetic election generator used as a ground-truth harness.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{self, ModelParams};

/// Identifies one aggregation unit. Names are stored normalized (trimmed,
/// uppercased, internal whitespace collapsed) so joins are exact.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrecinctKey {
    pub county: String,
    pub precinct: String,
}

impl fmt::Display for PrecinctKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.county, self.precinct)
    }
}

/// Weak-label tag carried per voter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimaryTag {
    DemPrimary,
    RepPrimary,
    None,
}

/// One aggregation unit: the covariate matrix of its voters plus the
/// binarized count outcome `D` out of `T`.
///
/// `T` may exceed the voter-row count (the voter file lists registrations,
/// not ballots cast); the mismatch is kept and reported, and every listed
/// voter still contributes a Bernoulli term to the likelihood.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Precinct {
    pub key: PrecinctKey,
    /// voters × features
    pub covariates: Array2<f64>,
    pub voter_ids: Vec<String>,
    pub primary_tags: Vec<PrimaryTag>,
    /// Modeled-candidate votes after binarization.
    pub d_votes: u64,
    /// Total votes after binarization.
    pub t_votes: u64,
}

impl Precinct {
    pub fn new(
        key: PrecinctKey,
        covariates: Array2<f64>,
        voter_ids: Vec<String>,
        primary_tags: Vec<PrimaryTag>,
        d_votes: u64,
        t_votes: u64,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if n == 0 {
            return Err(Error::Validation(format!(
                "precinct {key} has no voter rows"
            )));
        }
        if voter_ids.len() != n || primary_tags.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "precinct {key}: {} voter rows, {} ids, {} tags",
                n,
                voter_ids.len(),
                primary_tags.len()
            )));
        }
        if d_votes > t_votes {
            return Err(Error::Validation(format!(
                "precinct {key}: D = {d_votes} exceeds T = {t_votes}"
            )));
        }
        Ok(Self {
            key,
            covariates,
            voter_ids,
            primary_tags,
            d_votes,
            t_votes,
        })
    }

    /// Convenience constructor with placeholder voter ids and no tags.
    pub fn unlabeled(
        county: &str,
        precinct: &str,
        covariates: Array2<f64>,
        d_votes: u64,
        t_votes: u64,
    ) -> Result<Self> {
        let n = covariates.nrows();
        Self::new(
            PrecinctKey {
                county: normalize_name(county),
                precinct: normalize_name(precinct),
            },
            covariates,
            (0..n).map(|i| format!("V{i:06}")).collect(),
            vec![PrimaryTag::None; n],
            d_votes,
            t_votes,
        )
    }

    pub fn n_voters(&self) -> usize {
        self.covariates.nrows()
    }

    /// Ratio of binarized vote total to voter-file rows.
    pub fn turnout_ratio(&self) -> f64 {
        self.t_votes as f64 / self.n_voters() as f64
    }

    /// Actual vote share `D / T`.
    pub fn actual_share(&self) -> f64 {
        self.d_votes as f64 / self.t_votes as f64
    }
}

/// Per-feature affine transform applied at load time: `out = (raw - offset) / scale`.
/// Stored with the dataset so predictions use identical transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineScale {
    pub offset: f64,
    pub scale: f64,
}

impl AffineScale {
    pub fn identity() -> Self {
        Self {
            offset: 0.0,
            scale: 1.0,
        }
    }

    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.offset) / self.scale
    }
}

/// An ordered collection of precincts with shared feature metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub precincts: Vec<Precinct>,
    pub feature_names: Vec<String>,
    pub scaling: Vec<AffineScale>,
}

impl Dataset {
    pub fn new(
        precincts: Vec<Precinct>,
        feature_names: Vec<String>,
        scaling: Vec<AffineScale>,
    ) -> Result<Self> {
        if scaling.len() != feature_names.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} feature names but {} scaling records",
                feature_names.len(),
                scaling.len()
            )));
        }
        let d = feature_names.len();
        for p in &precincts {
            if p.covariates.ncols() != d {
                return Err(Error::ShapeMismatch(format!(
                    "precinct {} has {} covariates, dataset declares {}",
                    p.key,
                    p.covariates.ncols(),
                    d
                )));
            }
        }
        Ok(Self {
            precincts,
            feature_names,
            scaling,
        })
    }

    pub fn n_precincts(&self) -> usize {
        self.precincts.len()
    }

    pub fn covariate_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn total_voters(&self) -> usize {
        self.precincts.iter().map(|p| p.n_voters()).sum()
    }

    pub fn total_votes(&self) -> u64 {
        self.precincts.iter().map(|p| p.t_votes).sum()
    }

    /// Distinct counties in first-appearance order.
    pub fn counties(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for p in &self.precincts {
            if seen.insert(p.key.county.clone()) {
                out.push(p.key.county.clone());
            }
        }
        out
    }

    /// New dataset holding clones of the selected precincts, in the given
    /// index order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            precincts: indices.iter().map(|&i| self.precincts[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            scaling: self.scaling.clone(),
        }
    }

    /// The first `n` precincts (or fewer), used for subsampled exact-loss
    /// tracking.
    pub fn head(&self, n: usize) -> Dataset {
        let take = n.min(self.n_precincts());
        self.subset(&(0..take).collect::<Vec<_>>())
    }
}

/// Trim, uppercase, collapse internal whitespace.
pub fn normalize_name(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_uppercase()
}

// ---------------------------------------------------------------------------
// Precinct results CSV
// ---------------------------------------------------------------------------

/// Aggregated vote totals for one precinct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecinctResult {
    pub county: String,
    pub precinct: String,
    pub dem_votes: u64,
    pub rep_votes: u64,
    pub other_votes: u64,
}

/// The exact candidate strings counted as the two modeled outcomes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSpec {
    pub dem: String,
    pub rep: String,
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|source| Error::FileOpen {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn header_index(
    headers: &csv::StringRecord,
    required: &[&str],
    path: &Path,
) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        index.insert(h.trim().to_lowercase(), i);
    }
    let missing: Vec<&str> = required
        .iter()
        .copied()
        .filter(|c| !index.contains_key(*c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!("missing required columns: {}", missing.join(", ")),
        });
    }
    Ok(index)
}

/// Loads a results CSV with header `county,precinct,candidate,votes` and
/// aggregates rows per precinct into dem/rep/other counts. Candidate cells
/// are matched exactly (after trimming) against the configured strings.
pub fn load_precinct_results(
    path: &Path,
    candidates: &CandidateSpec,
) -> Result<Vec<PrecinctResult>> {
    let mut reader = open_csv(path)?;
    let headers = reader.headers()?.clone();
    let idx = header_index(&headers, &["county", "precinct", "candidate", "votes"], path)?;

    let mut order: Vec<PrecinctKey> = Vec::new();
    let mut acc: HashMap<PrecinctKey, PrecinctResult> = HashMap::new();
    let mut negative_rows: Vec<usize> = Vec::new();

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let get = |col: &str| record.get(idx[col]).unwrap_or("").trim().to_string();
        let county = normalize_name(&get("county"));
        let precinct = normalize_name(&get("precinct"));
        let candidate = get("candidate");
        let votes: i64 = get("votes").parse().map_err(|_| Error::Format {
            path: path.display().to_string(),
            message: format!("row {}: votes value {:?} is not an integer", row + 1, get("votes")),
        })?;
        if votes < 0 {
            negative_rows.push(row + 1);
            continue;
        }
        let key = PrecinctKey {
            county: county.clone(),
            precinct: precinct.clone(),
        };
        let entry = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            PrecinctResult {
                county,
                precinct,
                dem_votes: 0,
                rep_votes: 0,
                other_votes: 0,
            }
        });
        let votes = votes as u64;
        if candidate == candidates.dem {
            entry.dem_votes += votes;
        } else if candidate == candidates.rep {
            entry.rep_votes += votes;
        } else {
            entry.other_votes += votes;
        }
    }

    if !negative_rows.is_empty() {
        return Err(Error::Validation(format!(
            "negative vote counts at rows: {}",
            negative_rows
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }

    Ok(order.into_iter().map(|k| acc.remove(&k).unwrap()).collect())
}

// ---------------------------------------------------------------------------
// Voter file CSV + feature spec
// ---------------------------------------------------------------------------

/// One voter-file row after feature extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct VoterRecord {
    pub county: String,
    pub precinct: String,
    pub voter_id: String,
    pub covariates: Vec<f64>,
    pub tag: PrimaryTag,
}

/// How one raw column becomes one numeric feature.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    /// 1.0 when the cell equals the given string, else 0.0. Missing or
    /// non-matching cells map to 0, so optional fields degrade gracefully.
    Indicator { equals: String },
    /// `(value - offset) / scale`; the cell must parse as a number.
    Scaled { offset: f64, scale: f64 },
    /// Numeric pass-through; the cell must parse as a number.
    Numeric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRule {
    pub name: String,
    pub column: String,
    pub kind: FeatureKind,
}

impl FeatureRule {
    fn scaling(&self) -> AffineScale {
        match &self.kind {
            FeatureKind::Scaled { offset, scale } => AffineScale {
                offset: *offset,
                scale: *scale,
            },
            _ => AffineScale::identity(),
        }
    }
}

/// Maps raw tag-column values onto [`PrimaryTag`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct TagRule {
    pub column: String,
    pub dem_values: Vec<String>,
    pub rep_values: Vec<String>,
}

/// Optional row filter: keep only rows whose cell equals the given value.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFilter {
    pub column: String,
    pub equals: String,
}

/// Declarative voter-file schema: ordered feature rules plus optional tag
/// and filter rules. Parsed strictly from TOML (unknown keys are errors).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub features: Vec<FeatureRule>,
    pub tags: Option<TagRule>,
    pub filter: Option<RowFilter>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureSpecToml {
    feature: Vec<FeatureRuleToml>,
    tags: Option<TagRuleToml>,
    filter: Option<RowFilterToml>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRuleToml {
    name: String,
    column: String,
    kind: String,
    equals: Option<String>,
    scale: Option<f64>,
    offset: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TagRuleToml {
    column: String,
    dem_values: Vec<String>,
    rep_values: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RowFilterToml {
    column: String,
    equals: String,
}

impl FeatureSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: FeatureSpecToml = toml::from_str(text)
            .map_err(|e| Error::Validation(format!("feature spec: {e}")))?;
        if raw.feature.is_empty() {
            return Err(Error::Validation(
                "feature spec declares no features".into(),
            ));
        }
        let mut features = Vec::with_capacity(raw.feature.len());
        for f in raw.feature {
            let kind = match f.kind.as_str() {
                "indicator" => FeatureKind::Indicator {
                    equals: f.equals.ok_or_else(|| {
                        Error::Validation(format!(
                            "feature {:?}: indicator requires `equals`",
                            f.name
                        ))
                    })?,
                },
                "scaled" => FeatureKind::Scaled {
                    offset: f.offset.unwrap_or(0.0),
                    scale: match f.scale {
                        Some(s) if s != 0.0 => s,
                        _ => {
                            return Err(Error::Validation(format!(
                                "feature {:?}: scaled requires a nonzero `scale`",
                                f.name
                            )))
                        }
                    },
                },
                "numeric" => FeatureKind::Numeric,
                other => {
                    return Err(Error::Validation(format!(
                        "feature {:?}: unknown kind {other:?}",
                        f.name
                    )))
                }
            };
            features.push(FeatureRule {
                name: f.name,
                column: f.column,
                kind,
            });
        }
        Ok(Self {
            features,
            tags: raw.tags.map(|t| TagRule {
                column: t.column,
                dem_values: t.dem_values,
                rep_values: t.rep_values,
            }),
            filter: raw.filter.map(|f| RowFilter {
                column: f.column,
                equals: f.equals,
            }),
        })
    }

    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::FileOpen {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn scaling(&self) -> Vec<AffineScale> {
        self.features.iter().map(|f| f.scaling()).collect()
    }
}

/// Loads the voter file, producing one record per retained row with features
/// extracted per the spec. All referenced columns must exist in the header;
/// numeric cells that fail to parse are row-level errors.
pub fn load_voter_file(path: &Path, spec: &FeatureSpec) -> Result<Vec<VoterRecord>> {
    let mut reader = open_csv(path)?;
    let headers = reader.headers()?.clone();

    let mut required: Vec<&str> = vec!["county", "precinct", "voter_id"];
    for f in &spec.features {
        required.push(f.column.as_str());
    }
    if let Some(t) = &spec.tags {
        required.push(t.column.as_str());
    }
    if let Some(f) = &spec.filter {
        required.push(f.column.as_str());
    }
    let lowered: Vec<String> = required.iter().map(|c| c.to_lowercase()).collect();
    let idx = header_index(
        &headers,
        &lowered.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
        path,
    )?;

    let col = |name: &str| idx[&name.to_lowercase()];
    let mut records = Vec::new();

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("").trim();

        if let Some(filter) = &spec.filter {
            if cell(col(&filter.column)) != filter.equals {
                continue;
            }
        }

        let mut covariates = Vec::with_capacity(spec.features.len());
        for f in &spec.features {
            let raw = cell(col(&f.column));
            let value = match &f.kind {
                FeatureKind::Indicator { equals } => {
                    if raw == equals {
                        1.0
                    } else {
                        0.0
                    }
                }
                FeatureKind::Scaled { offset, scale } => {
                    let v: f64 = raw.parse().map_err(|_| {
                        Error::Validation(format!(
                            "row {}: column {:?} value {raw:?} is not numeric",
                            row + 1,
                            f.column
                        ))
                    })?;
                    (v - offset) / scale
                }
                FeatureKind::Numeric => raw.parse().map_err(|_| {
                    Error::Validation(format!(
                        "row {}: column {:?} value {raw:?} is not numeric",
                        row + 1,
                        f.column
                    ))
                })?,
            };
            covariates.push(value);
        }

        let tag = match &spec.tags {
            Some(rule) => {
                let raw = cell(col(&rule.column));
                if rule.dem_values.iter().any(|v| v == raw) {
                    PrimaryTag::DemPrimary
                } else if rule.rep_values.iter().any(|v| v == raw) {
                    PrimaryTag::RepPrimary
                } else {
                    PrimaryTag::None
                }
            }
            None => PrimaryTag::None,
        };

        records.push(VoterRecord {
            county: normalize_name(cell(col("county"))),
            precinct: normalize_name(cell(col("precinct"))),
            voter_id: cell(col("voter_id")).to_string(),
            covariates,
            tag,
        });
    }
    Ok(records)
}

// ---------------------------------------------------------------------------
// Join + binarization
// ---------------------------------------------------------------------------

/// Summary statistics over per-precinct `T / n_voters` ratios.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TurnoutMismatch {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Join accounting, emitted as part of the ingest report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JoinReport {
    pub precincts_in_results: usize,
    pub precincts_in_voter_file: usize,
    pub retained_precincts: usize,
    pub dropped_results_only: usize,
    pub dropped_voters_only: usize,
    pub dropped_zero_major_party: usize,
    pub voters_retained: usize,
    pub voters_dropped: usize,
    pub turnout_mismatch: Option<TurnoutMismatch>,
}

/// Feature metadata carried from the feature spec into the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub names: Vec<String>,
    pub scaling: Vec<AffineScale>,
}

impl FeatureMeta {
    pub fn from_spec(spec: &FeatureSpec) -> Self {
        Self {
            names: spec.feature_names(),
            scaling: spec.scaling(),
        }
    }

    /// Identity-scaled features named `x0..x{d-1}`.
    pub fn synthetic(dim: usize) -> Self {
        Self {
            names: (0..dim).map(|j| format!("x{j}")).collect(),
            scaling: vec![AffineScale::identity(); dim],
        }
    }
}

/// Joins the two sources on normalized (county, precinct) keys and converts
/// multi-candidate totals into a binary count:
/// `T = dem + rep + other`, `D = round(T · dem / (dem + rep))`
/// with round-half-to-even. Precincts present in only one source, or with no
/// major-party votes, are dropped and counted in the report. Voter rows keep
/// file order within each precinct; precincts are ordered by first
/// appearance in the voter file.
pub fn binarize_and_join(
    results: &[PrecinctResult],
    voters: Vec<VoterRecord>,
    meta: FeatureMeta,
) -> Result<(Dataset, JoinReport)> {
    let dim = meta.names.len();
    let mut results_map: HashMap<PrecinctKey, &PrecinctResult> = HashMap::new();
    for r in results {
        results_map.insert(
            PrecinctKey {
                county: r.county.clone(),
                precinct: r.precinct.clone(),
            },
            r,
        );
    }

    // Group voters by key, keeping first-appearance precinct order.
    let mut order: Vec<PrecinctKey> = Vec::new();
    let mut groups: HashMap<PrecinctKey, Vec<VoterRecord>> = HashMap::new();
    for v in voters {
        if v.covariates.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "voter {} has {} covariates, expected {dim}",
                v.voter_id,
                v.covariates.len()
            )));
        }
        let key = PrecinctKey {
            county: v.county.clone(),
            precinct: v.precinct.clone(),
        };
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(v);
    }

    let mut precincts = Vec::new();
    let mut dropped_voters_only = 0usize;
    let mut dropped_zero_major = 0usize;
    let mut voters_dropped = 0usize;
    let mut ratios: Vec<f64> = Vec::new();
    let mut matched_result_keys: HashSet<PrecinctKey> = HashSet::new();

    for key in order {
        let group = groups.remove(&key).unwrap();
        let Some(result) = results_map.get(&key) else {
            dropped_voters_only += 1;
            voters_dropped += group.len();
            continue;
        };
        matched_result_keys.insert(key.clone());

        let major = result.dem_votes + result.rep_votes;
        if major == 0 {
            dropped_zero_major += 1;
            voters_dropped += group.len();
            continue;
        }
        let t = result.dem_votes + result.rep_votes + result.other_votes;
        let d = (t as f64 * result.dem_votes as f64 / major as f64).round_ties_even() as u64;

        let mut seen_ids = HashSet::new();
        for v in &group {
            if !seen_ids.insert(v.voter_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate voter id {:?} in precinct {key}",
                    v.voter_id
                )));
            }
        }

        let n = group.len();
        let mut matrix = Array2::zeros((n, dim));
        let mut ids = Vec::with_capacity(n);
        let mut tags = Vec::with_capacity(n);
        for (i, v) in group.into_iter().enumerate() {
            matrix.row_mut(i).assign(&Array1::from_vec(v.covariates));
            ids.push(v.voter_id);
            tags.push(v.tag);
        }

        let precinct = Precinct::new(key, matrix, ids, tags, d, t)?;
        ratios.push(precinct.turnout_ratio());
        precincts.push(precinct);
    }

    let dropped_results_only = results_map
        .keys()
        .filter(|k| !matched_result_keys.contains(*k))
        .count();

    let turnout_mismatch = if ratios.is_empty() {
        None
    } else {
        Some(TurnoutMismatch {
            mean: ratios.iter().sum::<f64>() / ratios.len() as f64,
            min: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
            max: ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    };

    let report = JoinReport {
        precincts_in_results: results.len(),
        precincts_in_voter_file: matched_result_keys.len()
            + dropped_voters_only
            + dropped_zero_major,
        retained_precincts: precincts.len(),
        dropped_results_only,
        dropped_voters_only,
        dropped_zero_major_party: dropped_zero_major,
        voters_retained: precincts.iter().map(|p| p.n_voters()).sum(),
        voters_dropped,
        turnout_mismatch,
    };

    let dataset = Dataset::new(precincts, meta.names, meta.scaling)?;
    Ok((dataset, report))
}

// ---------------------------------------------------------------------------
// Train/test splits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Uniformly random assignment of individual precincts.
    Precinct,
    /// Whole counties assigned to one side; train grows county by county
    /// until it first reaches the requested vote share.
    County,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "precinct" => Ok(SplitMode::Precinct),
            "county" => Ok(SplitMode::County),
            other => Err(Error::InvalidInput(format!(
                "unknown split mode {other:?} (expected \"precinct\" or \"county\")"
            ))),
        }
    }
}

/// Splits the dataset into (train, test). Precinct membership is decided by
/// the seeded generator; precinct order within each side follows the input
/// dataset. Both sides are guaranteed non-empty.
pub fn split(
    dataset: &Dataset,
    mode: SplitMode,
    train_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidInput(format!(
            "train_frac must lie in (0, 1), got {train_frac}"
        )));
    }
    let n = dataset.n_precincts();
    if n < 2 {
        return Err(Error::Split(format!(
            "need at least 2 precincts to split, have {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let train_idx: HashSet<usize> = match mode {
        SplitMode::Precinct => {
            let mut indices: Vec<usize> = (0..n).collect();
            indices.shuffle(&mut rng);
            let want = (train_frac * n as f64).round() as usize;
            let take = want.clamp(1, n - 1);
            indices.into_iter().take(take).collect()
        }
        SplitMode::County => {
            let counties = dataset.counties();
            if counties.len() < 2 {
                return Err(Error::Split(format!(
                    "county-mode split needs at least 2 counties, have {}",
                    counties.len()
                )));
            }
            let mut by_county: HashMap<&str, Vec<usize>> = HashMap::new();
            for (i, p) in dataset.precincts.iter().enumerate() {
                by_county.entry(p.key.county.as_str()).or_default().push(i);
            }
            let total_votes = dataset.total_votes() as f64;
            let mut shuffled = counties.clone();
            shuffled.shuffle(&mut rng);

            let mut chosen = HashSet::new();
            let mut votes = 0u64;
            for county in &shuffled {
                for &i in &by_county[county.as_str()] {
                    votes += dataset.precincts[i].t_votes;
                    chosen.insert(i);
                }
                if (votes as f64) >= train_frac * total_votes {
                    break;
                }
            }
            if chosen.len() == n {
                return Err(Error::Split(
                    "county-mode split left the test side empty".into(),
                ));
            }
            chosen
        }
    };

    let train: Vec<usize> = (0..n).filter(|i| train_idx.contains(i)).collect();
    let test: Vec<usize> = (0..n).filter(|i| !train_idx.contains(i)).collect();
    if train.is_empty() || test.is_empty() {
        return Err(Error::Split("split produced an empty side".into()));
    }
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// Number of voters per synthetic precinct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VotersPerPrecinct {
    Fixed(usize),
    Range([usize; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateDistribution {
    Normal,
    Uniform,
}

/// Recipe for a synthetic election with known ground-truth parameters.
///
/// `precinct_spread` is the fraction of covariate variance shared by all
/// voters of a precinct (a precinct-level random effect). Each covariate
/// stays marginally standard normal; a nonzero spread makes precincts
/// demographically distinct, which is what gives precinct shares any
/// between-precinct signal to predict.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub precincts: usize,
    pub voters: VotersPerPrecinct,
    pub dim: usize,
    #[serde(default = "default_distribution")]
    pub distribution: CovariateDistribution,
    #[serde(default)]
    pub precinct_spread: f64,
    #[serde(default = "default_counties")]
    pub counties: usize,
    #[serde(default)]
    pub tag_covariate: Option<usize>,
    #[serde(default = "default_tag_threshold")]
    pub tag_threshold: f64,
    pub model: ModelParams,
}

fn default_distribution() -> CovariateDistribution {
    CovariateDistribution::Normal
}

fn default_counties() -> usize {
    1
}

fn default_tag_threshold() -> f64 {
    0.5
}

impl SynthSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SynthSpec =
            toml::from_str(text).map_err(|e| Error::Validation(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::FileOpen {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.precincts == 0 {
            return Err(Error::InvalidInput("precinct count must be >= 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::InvalidInput("covariate dimension must be >= 1".into()));
        }
        match self.voters {
            VotersPerPrecinct::Fixed(n) if n >= 1 => {}
            VotersPerPrecinct::Range([lo, hi]) if lo >= 1 && lo <= hi => {}
            _ => {
                return Err(Error::InvalidInput(
                    "voters per precinct must be >= 1 (and min <= max)".into(),
                ))
            }
        }
        if !(0.0..1.0).contains(&self.precinct_spread) {
            return Err(Error::InvalidInput(format!(
                "precinct_spread must lie in [0, 1), got {}",
                self.precinct_spread
            )));
        }
        if self.precinct_spread > 0.0 && self.distribution != CovariateDistribution::Normal {
            return Err(Error::InvalidInput(
                "precinct_spread requires the normal covariate distribution".into(),
            ));
        }
        if self.counties == 0 || self.counties > self.precincts {
            return Err(Error::InvalidInput(format!(
                "county count must lie in 1..={}, got {}",
                self.precincts, self.counties
            )));
        }
        if let Some(c) = self.tag_covariate {
            if c >= self.dim {
                return Err(Error::InvalidInput(format!(
                    "tag_covariate {c} out of range for dimension {}",
                    self.dim
                )));
            }
        }
        if self.model.covariate_dim() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "model expects {} covariates, spec declares {}",
                self.model.covariate_dim(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// Generates a synthetic dataset plus the true parameters. Per-voter
/// covariates are drawn from the spec distribution, votes are Bernoulli
/// draws from the true model, `D` is the realized success count and
/// `T = n_voters`. Reproducible by seed.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<(Dataset, ModelParams)> {
    let (dataset, params, _) = generate_synthetic_with_labels(spec, seed)?;
    Ok((dataset, params))
}

/// Same as [`generate_synthetic`] but also returns the per-voter vote draws,
/// for calibration checks against the generating model.
pub fn generate_synthetic_with_labels(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(Dataset, ModelParams, Vec<Vec<bool>>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = spec.dim;
    let spread = spec.precinct_spread;
    let within = (1.0 - spread).sqrt();
    let between = spread.sqrt();

    let mut precincts = Vec::with_capacity(spec.precincts);
    let mut all_labels = Vec::with_capacity(spec.precincts);

    for k in 0..spec.precincts {
        let county_idx = k * spec.counties / spec.precincts;
        let county = format!("C{county_idx:03}");
        let name = format!("P{k:05}");
        let n = match spec.voters {
            VotersPerPrecinct::Fixed(n) => n,
            VotersPerPrecinct::Range([lo, hi]) => rng.gen_range(lo..=hi),
        };

        let precinct_effect: Vec<f64> = match spec.distribution {
            CovariateDistribution::Normal => {
                (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
            }
            CovariateDistribution::Uniform => vec![0.0; dim],
        };

        let mut matrix = Array2::zeros((n, dim));
        let mut tags = vec![PrimaryTag::None; n];
        for i in 0..n {
            for j in 0..dim {
                let x = match spec.distribution {
                    CovariateDistribution::Normal => {
                        between * precinct_effect[j]
                            + within * rng.sample::<f64, _>(StandardNormal)
                    }
                    CovariateDistribution::Uniform => rng.gen_range(-1.0..1.0),
                };
                matrix[[i, j]] = x;
            }
            if let Some(c) = spec.tag_covariate {
                if matrix[[i, c]] > spec.tag_threshold {
                    tags[i] = PrimaryTag::DemPrimary;
                } else if matrix[[i, c]] < -spec.tag_threshold {
                    tags[i] = PrimaryTag::RepPrimary;
                }
            }
        }

        let mut labels = Vec::with_capacity(n);
        let mut d = 0u64;
        for i in 0..n {
            let p = glm::predict(&spec.model, matrix.row(i))?;
            let vote = rng.gen::<f64>() < p;
            if vote {
                d += 1;
            }
            labels.push(vote);
        }

        let key = PrecinctKey {
            county,
            precinct: name,
        };
        let voter_ids = (0..n).map(|i| format!("V{k:05}_{i:04}")).collect();
        precincts.push(Precinct::new(key, matrix, voter_ids, tags, d, n as u64)?);
        all_labels.push(labels);
    }

    let meta = FeatureMeta::synthetic(dim);
    let dataset = Dataset::new(precincts, meta.names, meta.scaling)?;
    Ok((dataset, spec.model.clone(), all_labels))
}
