//! Artifact plumbing: JSON reports, the binary dataset cache, parameter
//! files, and plot-ready TSVs. Every artifact embeds the digest of the
//! config that produced it (predictions CSV excepted; its format is pinned).

use std::path::Path;

use pbglm::dataset::Dataset;
use pbglm::eval::WeakLabelReport;
use pbglm::glm::ModelParams;
use pbglm::trainer::FitReport;
use pbglm::{Error, Result};
use serde::{Deserialize, Serialize};

const DATASET_CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetCache {
    version: u32,
    config_digest: String,
    dataset: Dataset,
}

pub fn write_dataset_cache(path: &Path, dataset: &Dataset, digest: &str) -> Result<()> {
    let wrapper = DatasetCache {
        version: DATASET_CACHE_VERSION,
        config_digest: digest.to_string(),
        dataset: dataset.clone(),
    };
    let bytes = bincode::serialize(&wrapper)
        .map_err(|e| Error::Validation(format!("dataset cache encoding: {e}")))?;
    write_bytes(path, &bytes)
}

pub fn read_dataset_cache(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|source| Error::FileOpen {
        path: path.display().to_string(),
        source,
    })?;
    let wrapper: DatasetCache = bincode::deserialize(&bytes).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: format!("not a dataset cache: {e}"),
    })?;
    if wrapper.version != DATASET_CACHE_VERSION {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!(
                "dataset cache version {} (expected {DATASET_CACHE_VERSION})",
                wrapper.version
            ),
        });
    }
    Ok(wrapper.dataset)
}

/// Parameters artifact: the digest plus the portable parameter encoding.
#[derive(Serialize, Deserialize)]
pub struct ParamsFile {
    pub config_digest: String,
    pub params: ModelParams,
}

pub fn write_params(path: &Path, params: &ModelParams, digest: &str) -> Result<()> {
    let file = ParamsFile {
        config_digest: digest.to_string(),
        params: params.clone(),
    };
    write_json(path, &file)
}

/// Reads a params artifact; bare `ModelParams` JSON (no wrapper) is also
/// accepted so hand-written parameter files work.
pub fn read_params(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::FileOpen {
        path: path.display().to_string(),
        source,
    })?;
    if let Ok(file) = serde_json::from_str::<ParamsFile>(&text) {
        return Ok(file.params);
    }
    serde_json::from_str::<ModelParams>(&text).map_err(|e| Error::Format {
        path: path.display().to_string(),
        message: format!("not a parameters file: {e}"),
    })
}

#[derive(Serialize)]
pub struct FitReportFile<'a> {
    pub config_digest: &'a str,
    #[serde(flatten)]
    pub report: &'a FitReport,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("JSON encoding: {e}")))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, bytes).map_err(|source| Error::FileOpen {
        path: path.display().to_string(),
        source,
    })
}

/// Loss curves as TSV: one row per epoch, columns `epoch`, `approx_nll`,
/// and `exact_nll` when tracked. A `# config_digest=` comment heads the
/// file.
pub fn write_loss_tsv(path: &Path, report: &FitReport, digest: &str) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# config_digest={digest}\n"));
    match &report.exact_nll {
        Some(exact) => {
            out.push_str("epoch\tapprox_nll\texact_nll\n");
            for (i, (a, e)) in report.approx_nll.iter().zip(exact).enumerate() {
                out.push_str(&format!("{}\t{a:.6}\t{e:.6}\n", i + 1));
            }
        }
        None => {
            out.push_str("epoch\tapprox_nll\n");
            for (i, a) in report.approx_nll.iter().enumerate() {
                out.push_str(&format!("{}\t{a:.6}\n", i + 1));
            }
        }
    }
    write_bytes(path, out.as_bytes())
}

/// Weak-label histograms as TSV: `bin_low`, `bin_high`, then one count
/// column per group, with the digest comment on top.
pub fn write_histogram_tsv(path: &Path, report: &WeakLabelReport, digest: &str) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# config_digest={digest}\n"));
    let groups: Vec<&String> = report.histograms.keys().collect();
    out.push_str("bin_low\tbin_high");
    for g in &groups {
        out.push_str(&format!("\t{g}"));
    }
    out.push('\n');
    for bin in 0..pbglm::eval::HISTOGRAM_BINS {
        let low = bin as f64 * pbglm::eval::HISTOGRAM_BIN_WIDTH;
        let high = low + pbglm::eval::HISTOGRAM_BIN_WIDTH;
        out.push_str(&format!("{low:.2}\t{high:.2}"));
        for g in &groups {
            out.push_str(&format!("\t{}", report.histograms[*g][bin]));
        }
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}
