//! Per-class distributions of the audio-visual correlation signal.
//!
//! Collects the distillation branch's per-frame sync signal over a corpus,
//! groups it by forgery method and real/fake class, and exports fixed-axis
//! histograms plus the raw values. All histograms share identical bin edges
//! over `[0, 1]` so exported panels are directly comparable.

use std::collections::BTreeMap;
use std::fmt::Write as FmtWrite;
use std::path::{Path, PathBuf};

use crate::dataio::{ForgeryCategory, VideoSample, LABEL_REAL};
use crate::error::{Error, Result};
use crate::model::TwoBranchModel;

/// Default histogram resolution.
pub const DEFAULT_BINS: usize = 50;

/// How per-frame sync values are aggregated before binning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Granularity {
    /// Every frame contributes one value.
    PerFrame,
    /// Each video contributes its mean sync value.
    PerVideoMean,
}

impl Default for Granularity {
    fn default() -> Self {
        Granularity::PerVideoMean
    }
}

impl Granularity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Granularity::PerFrame => "per_frame",
            Granularity::PerVideoMean => "per_video_mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per_frame" => Some(Granularity::PerFrame),
            "per_video_mean" => Some(Granularity::PerVideoMean),
            _ => None,
        }
    }
}

/// Real/fake class of a distribution panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Class {
    Real,
    Fake,
}

impl Class {
    pub fn as_str(&self) -> &'static str {
        match self {
            Class::Real => "real",
            Class::Fake => "fake",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(Class::Real),
            "fake" => Some(Class::Fake),
            _ => None,
        }
    }
}

/// Sync values grouped by (forgery method, class). Categories absent from
/// the input are simply omitted.
pub type CorrelationMap = BTreeMap<(ForgeryCategory, Class), Vec<f64>>;

/// Run the correlation branch over `samples` and group the sync values.
pub fn collect_correlations(
    model: &TwoBranchModel,
    samples: &[VideoSample],
    granularity: Granularity,
) -> Result<CorrelationMap> {
    if samples.is_empty() {
        return Err(Error::validation("samples", "no samples to analyze"));
    }
    let mut map = CorrelationMap::new();
    for sample in samples {
        let sync = model.sync_profile(sample)?;
        let class = if sample.entry.label == LABEL_REAL {
            Class::Real
        } else {
            Class::Fake
        };
        let bucket = map
            .entry((sample.entry.forgery_category, class))
            .or_default();
        match granularity {
            Granularity::PerFrame => bucket.extend(sync.iter().copied()),
            Granularity::PerVideoMean => bucket.push(sync.mean().unwrap_or(f64::NAN)),
        }
    }
    for ((method, class), values) in &map {
        if values.is_empty() {
            log::warn!(
                "no correlation values for ({}, {}); omitting",
                method.as_str(),
                class.as_str()
            );
        }
    }
    map.retain(|_, v| !v.is_empty());
    Ok(map)
}

/// Fixed-axis histogram of sync values for one (method, class) panel.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    pub method: ForgeryCategory,
    pub class: Class,
    pub granularity: Granularity,
    /// `bins + 1` uniform edges over `[0, 1]`.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl CorrelationHistogram {
    /// Bin `values` into `bins` uniform cells over `[0, 1]`. A value of
    /// exactly 1.0 lands in the last bin.
    pub fn from_values(
        method: ForgeryCategory,
        class: Class,
        granularity: Granularity,
        values: &[f64],
        bins: usize,
    ) -> Result<Self> {
        if bins == 0 {
            return Err(Error::validation("bins", "must be at least 1"));
        }
        if values.is_empty() {
            return Err(Error::validation(
                "values",
                format!(
                    "empty value list for ({}, {})",
                    method.as_str(),
                    class.as_str()
                ),
            ));
        }
        for &v in values {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(
                    "values",
                    format!("sync value {v} outside [0, 1]"),
                ));
            }
        }
        let bin_edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let idx = ((v * bins as f64) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        debug_assert_eq!(counts.iter().sum::<u64>() as usize, values.len());
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self {
            method,
            class,
            granularity,
            bin_edges,
            counts,
            mean,
            std: var.sqrt(),
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Data-file text: a header with method/class/granularity/bins and the
    /// moments, then one `edge_lo edge_hi count` line per bin. Floats use
    /// shortest-round-trip formatting.
    pub fn to_string_repr(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# method={} class={} granularity={} bins={}",
            self.method.as_str(),
            self.class.as_str(),
            self.granularity.as_str(),
            self.bins()
        );
        let _ = writeln!(
            out,
            "# mean={} std={} n={}",
            self.mean,
            self.std,
            self.total_count()
        );
        for (i, &c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{} {} {}", self.bin_edges[i], self.bin_edges[i + 1], c);
        }
        out
    }

    /// Parse the data-file text back (inverse of [`Self::to_string_repr`]).
    pub fn parse_str(text: &str, origin: &Path) -> Result<Self> {
        let corrupt = |msg: String| Error::corrupt(origin, msg);
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let mut rows: Vec<(f64, f64, u64)> = Vec::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                for field in rest.split_whitespace() {
                    if let Some((k, v)) = field.split_once('=') {
                        header.insert(k.to_string(), v.to_string());
                    }
                }
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(corrupt(format!("expected `edge_lo edge_hi count`, got {line:?}")));
            }
            let lo: f64 = parts[0]
                .parse()
                .map_err(|_| corrupt(format!("bad edge {:?}", parts[0])))?;
            let hi: f64 = parts[1]
                .parse()
                .map_err(|_| corrupt(format!("bad edge {:?}", parts[1])))?;
            let c: u64 = parts[2]
                .parse()
                .map_err(|_| corrupt(format!("bad count {:?}", parts[2])))?;
            rows.push((lo, hi, c));
        }
        let get = |k: &str| -> Result<&String> {
            header
                .get(k)
                .ok_or_else(|| Error::corrupt(origin, format!("header missing `{k}`")))
        };
        let method = ForgeryCategory::parse(get("method")?)
            .ok_or_else(|| Error::corrupt(origin, "unknown method in header"))?;
        let class = Class::parse(get("class")?)
            .ok_or_else(|| Error::corrupt(origin, "unknown class in header"))?;
        let granularity = Granularity::parse(get("granularity")?)
            .ok_or_else(|| Error::corrupt(origin, "unknown granularity in header"))?;
        let bins: usize = get("bins")?
            .parse()
            .map_err(|_| Error::corrupt(origin, "bad bins in header"))?;
        let mean: f64 = get("mean")?
            .parse()
            .map_err(|_| Error::corrupt(origin, "bad mean in header"))?;
        let std: f64 = get("std")?
            .parse()
            .map_err(|_| Error::corrupt(origin, "bad std in header"))?;
        if rows.len() != bins || bins == 0 {
            return Err(corrupt(format!(
                "expected {bins} bin rows, found {}",
                rows.len()
            )));
        }
        let mut bin_edges = Vec::with_capacity(bins + 1);
        bin_edges.push(rows[0].0);
        for (i, &(lo, hi, _)) in rows.iter().enumerate() {
            if i > 0 && lo != bin_edges[i] {
                return Err(corrupt(format!("discontiguous edges at row {i}")));
            }
            bin_edges.push(hi);
        }
        Ok(Self {
            method,
            class,
            granularity,
            bin_edges,
            counts: rows.iter().map(|&(_, _, c)| c).collect(),
            mean,
            std,
        })
    }
}

/// Slug for file names: lowercase, `-` → `_`.
fn file_slug(method: ForgeryCategory, class: Class) -> String {
    format!(
        "{}_{}",
        method.as_str().to_lowercase().replace('-', "_"),
        class.as_str()
    )
}

/// Write one histogram data file and one raw-value dump per (method, class).
/// Returns the histograms with their data-file paths; raw dumps sit next to
/// them as `raw_<slug>_<granularity>.txt`.
pub fn export_histograms(
    values: &CorrelationMap,
    granularity: Granularity,
    bins: usize,
    out_dir: &Path,
) -> Result<Vec<(CorrelationHistogram, PathBuf)>> {
    if values.is_empty() {
        return Err(Error::validation("values", "no correlation groups to export"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut out = Vec::new();
    for (&(method, class), vals) in values {
        let hist = CorrelationHistogram::from_values(method, class, granularity, vals, bins)?;
        let slug = file_slug(method, class);
        let data_path = out_dir.join(format!("hist_{slug}_{}.txt", granularity.as_str()));
        std::fs::write(&data_path, hist.to_string_repr())
            .map_err(|e| Error::io(&data_path, e))?;

        let mut raw = format!(
            "# method={} class={} granularity={} n={}\n",
            method.as_str(),
            class.as_str(),
            granularity.as_str(),
            vals.len()
        );
        for v in vals {
            let _ = writeln!(raw, "{v}");
        }
        let raw_path = out_dir.join(format!("raw_{slug}_{}.txt", granularity.as_str()));
        std::fs::write(&raw_path, raw).map_err(|e| Error::io(&raw_path, e))?;

        out.push((hist, data_path));
    }
    Ok(out)
}

/// Read a raw-value dump back.
pub fn load_raw_values(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vals = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        vals.push(
            line.parse::<f64>()
                .map_err(|_| Error::corrupt(path, format!("bad value {line:?}")))?,
        );
    }
    Ok(vals)
}

/// Difference between pooled real and pooled fake sync means,
/// `mean(real) − mean(fake)`. `None` when either pool is empty.
pub fn class_separation(values: &CorrelationMap) -> Option<f64> {
    let pool = |class: Class| -> Vec<f64> {
        values
            .iter()
            .filter(|((_, c), _)| *c == class)
            .flat_map(|(_, v)| v.iter().copied())
            .collect()
    };
    let real = pool(Class::Real);
    let fake = pool(Class::Fake);
    if real.is_empty() || fake.is_empty() {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Some(mean(&real) - mean(&fake))
}
