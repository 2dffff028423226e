//! Generalization protocols and AUC reporting.
//!
//! Fake is the positive class: each sample's score is `1 − s` (predicted
//! fake probability). AUC uses the exact Mann–Whitney formulation with
//! half-credit ties, implemented with average ranks; tests pin it against
//! the brute-force pairwise definition.
//!
//! Two protocols: the five leave-one-out tests (train on all forgery
//! categories but one, test on the held-out category plus reals) and the
//! cross-dataset transfer (train on one corpus, test per category of the
//! other).

use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::path::Path;

use crate::dataio::{ForgeryCategory, ManifestEntry, Split, VideoSample};
use crate::error::{Error, Result};
use crate::model::TwoBranchModel;

/// The five hold-out categories of the leave-one-out protocol.
pub const LOO_HOLDOUTS: [ForgeryCategory; 5] = [
    ForgeryCategory::Rvfa,
    ForgeryCategory::FvraW2l,
    ForgeryCategory::FvfaFs,
    ForgeryCategory::FvfaGan,
    ForgeryCategory::FvfaW2l,
];

/// The four fake-video categories averaged by the AVG-FV column.
pub const FV_CATEGORIES: [ForgeryCategory; 4] = [
    ForgeryCategory::FvraW2l,
    ForgeryCategory::FvfaFs,
    ForgeryCategory::FvfaGan,
    ForgeryCategory::FvfaW2l,
];

/// Exact pairwise AUC with half-credit ties: the probability that a random
/// positive outranks a random negative.
pub fn auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::contract(format!(
            "auc: {} scores vs {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("scores", "non-finite score"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc {
            context: "auc".into(),
            msg: format!("need both classes, got {n_pos} positives / {n_neg} negatives"),
        });
    }

    // Average ranks (1-based) with ties sharing their group mean.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok((u / (n_pos as f64 * n_neg as f64)).clamp(0.0, 1.0))
}

/// Which generalization protocol to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    /// Train on all FAV forgery categories but the holdout; test on the
    /// holdout plus reals.
    LeaveOneOut,
    /// Train split from one corpus, test split from another.
    CrossDataset,
}

impl ProtocolKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "leave_one_out" => Some(ProtocolKind::LeaveOneOut),
            "cross_dataset" => Some(ProtocolKind::CrossDataset),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ProtocolKind::LeaveOneOut => "leave_one_out",
            ProtocolKind::CrossDataset => "cross_dataset",
        }
    }
}

/// A fully specified protocol instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSpec {
    pub kind: ProtocolKind,
    /// Required for `LeaveOneOut`; must be one of [`LOO_HOLDOUTS`].
    pub holdout: Option<ForgeryCategory>,
}

impl ProtocolSpec {
    pub fn leave_one_out(holdout: ForgeryCategory) -> Self {
        Self {
            kind: ProtocolKind::LeaveOneOut,
            holdout: Some(holdout),
        }
    }

    pub fn cross_dataset() -> Self {
        Self {
            kind: ProtocolKind::CrossDataset,
            holdout: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ProtocolKind::LeaveOneOut => match self.holdout {
                Some(h) if LOO_HOLDOUTS.contains(&h) => Ok(()),
                Some(h) => Err(Error::Protocol(format!(
                    "holdout {} is not a leave-one-out category",
                    h.as_str()
                ))),
                None => Err(Error::Protocol(
                    "leave_one_out requires a holdout category".into(),
                )),
            },
            ProtocolKind::CrossDataset => {
                if self.holdout.is_some() {
                    Err(Error::Protocol(
                        "cross_dataset does not take a holdout".into(),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match (self.kind, self.holdout) {
            (ProtocolKind::LeaveOneOut, Some(h)) => format!("leave_one_out[{}]", h.as_str()),
            _ => self.kind.as_str().to_string(),
        }
    }
}

/// Train/test entry lists for one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolSplits {
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

/// Build the train/test entry sets for a protocol.
///
/// For `LeaveOneOut`, both sets come from `entries` (the FAV-style corpus):
/// training uses the train split of every category except the holdout, and
/// testing uses the test split restricted to the holdout plus reals. For
/// `CrossDataset`, training uses the train split of `entries` and testing
/// the whole of `cross_test` (which must come from a different corpus).
pub fn build_protocol_splits(
    spec: &ProtocolSpec,
    entries: &[ManifestEntry],
    cross_test: Option<&[ManifestEntry]>,
) -> Result<ProtocolSplits> {
    spec.validate()?;
    match spec.kind {
        ProtocolKind::LeaveOneOut => {
            let holdout = spec.holdout.expect("validated above");
            let train: Vec<ManifestEntry> = entries
                .iter()
                .filter(|e| e.split == Split::Train && e.forgery_category != holdout)
                .cloned()
                .collect();
            let test: Vec<ManifestEntry> = entries
                .iter()
                .filter(|e| {
                    e.split == Split::Test
                        && (e.forgery_category == holdout || e.forgery_category == ForgeryCategory::Real)
                })
                .cloned()
                .collect();
            if train.is_empty() {
                return Err(Error::Protocol("empty training set".into()));
            }
            if !test.iter().any(|e| e.forgery_category == holdout) {
                return Err(Error::UndefinedAuc {
                    context: spec.name(),
                    msg: format!(
                        "test split has no {} samples (single-class)",
                        holdout.as_str()
                    ),
                });
            }
            if !test.iter().any(|e| e.forgery_category == ForgeryCategory::Real) {
                return Err(Error::UndefinedAuc {
                    context: spec.name(),
                    msg: "test split has no REAL samples (single-class)".into(),
                });
            }
            Ok(ProtocolSplits { train, test })
        }
        ProtocolKind::CrossDataset => {
            let test_src = cross_test.ok_or_else(|| {
                Error::Protocol("cross_dataset requires a second (test) manifest".into())
            })?;
            let train: Vec<ManifestEntry> = entries
                .iter()
                .filter(|e| e.split == Split::Train)
                .cloned()
                .collect();
            let test: Vec<ManifestEntry> = test_src.to_vec();
            if train.is_empty() {
                return Err(Error::Protocol("empty training set".into()));
            }
            if !test.iter().any(|e| e.forgery_category == ForgeryCategory::Real) {
                return Err(Error::UndefinedAuc {
                    context: spec.name(),
                    msg: "test manifest has no REAL samples (single-class)".into(),
                });
            }
            if !test.iter().any(|e| e.forgery_category != ForgeryCategory::Real) {
                return Err(Error::UndefinedAuc {
                    context: spec.name(),
                    msg: "test manifest has no fake samples (single-class)".into(),
                });
            }
            let train_ids: std::collections::BTreeSet<&str> =
                train.iter().map(|e| e.sample_id.as_str()).collect();
            if let Some(dup) = test.iter().find(|e| train_ids.contains(e.sample_id.as_str())) {
                return Err(Error::Protocol(format!(
                    "sample {} appears in both train and cross-dataset test",
                    dup.sample_id
                )));
            }
            Ok(ProtocolSplits { train, test })
        }
    }
}

/// One scored test sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub category: ForgeryCategory,
    pub label: u8,
    /// Predicted fake probability (`1 − s`).
    pub score: f64,
}

/// Per-category AUC report for one protocol run.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub protocol: String,
    /// AUC per fake category, each against the reals of the same test pool.
    pub per_category_auc: BTreeMap<ForgeryCategory, f64>,
}

impl EvalReport {
    /// Mean over the four fake-video categories (Table-2 style). `None`
    /// unless all four are present.
    pub fn avg_fv(&self) -> Option<f64> {
        let mut acc = 0.0;
        for c in FV_CATEGORIES {
            acc += self.per_category_auc.get(&c)?;
        }
        Some(acc / FV_CATEGORIES.len() as f64)
    }

    /// Mean over every reported category (Table-3 style).
    pub fn avg(&self) -> Option<f64> {
        if self.per_category_auc.is_empty() {
            return None;
        }
        Some(self.per_category_auc.values().sum::<f64>() / self.per_category_auc.len() as f64)
    }
}

/// Score every test sample with the detection branch.
pub fn score_samples(model: &TwoBranchModel, samples: &[VideoSample]) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::with_capacity(samples.len());
    for sample in samples {
        let verdict = model.score(sample)?;
        out.push(ScoreRecord {
            sample_id: sample.entry.sample_id.clone(),
            category: sample.entry.forgery_category,
            label: sample.entry.label,
            score: 1.0 - verdict.s,
        });
    }
    Ok(out)
}

/// Fold scored records into the per-category report: each fake category is
/// ranked against the pool's real samples.
pub fn report_from_scores(protocol: &str, records: &[ScoreRecord]) -> Result<EvalReport> {
    let real_scores: Vec<f64> = records
        .iter()
        .filter(|r| r.category == ForgeryCategory::Real)
        .map(|r| r.score)
        .collect();
    let mut categories: Vec<ForgeryCategory> = records
        .iter()
        .map(|r| r.category)
        .filter(|&c| c != ForgeryCategory::Real)
        .collect();
    categories.sort();
    categories.dedup();

    let mut per_category_auc = BTreeMap::new();
    for cat in categories {
        let fake_scores: Vec<f64> = records
            .iter()
            .filter(|r| r.category == cat)
            .map(|r| r.score)
            .collect();
        let mut scores = fake_scores.clone();
        scores.extend_from_slice(&real_scores);
        let mut positive = vec![true; fake_scores.len()];
        positive.extend(std::iter::repeat(false).take(real_scores.len()));
        let value = auc(&scores, &positive).map_err(|e| match e {
            Error::UndefinedAuc { msg, .. } => Error::UndefinedAuc {
                context: cat.as_str().to_string(),
                msg,
            },
            other => other,
        })?;
        per_category_auc.insert(cat, value);
    }
    if per_category_auc.is_empty() {
        return Err(Error::UndefinedAuc {
            context: protocol.to_string(),
            msg: "no fake categories in the test pool".into(),
        });
    }
    Ok(EvalReport {
        protocol: protocol.to_string(),
        per_category_auc,
    })
}

/// End-to-end: score the test samples and assemble the report.
pub fn evaluate(
    model: &TwoBranchModel,
    protocol: &ProtocolSpec,
    test_samples: &[VideoSample],
) -> Result<(EvalReport, Vec<ScoreRecord>)> {
    protocol.validate()?;
    if test_samples.is_empty() {
        return Err(Error::Protocol("empty test set".into()));
    }
    let records = score_samples(model, test_samples)?;
    let report = report_from_scores(&protocol.name(), &records)?;
    Ok((report, records))
}

// ---------------------------------------------------------------------------
// Score dump: `sample_id \t category \t label \t score`, one per line.
// Scores print with shortest-round-trip formatting, so write → read → write
// is byte-identical.
// ---------------------------------------------------------------------------

pub fn scores_to_string(records: &[ScoreRecord]) -> String {
    let mut out = String::from("# sample_id\tcategory\tlabel\tscore\n");
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.sample_id,
            r.category.as_str(),
            r.label,
            r.score
        ));
    }
    out
}

pub fn parse_scores_str(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::ManifestParse {
                line: lineno + 1,
                msg: format!("score line needs 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let category = ForgeryCategory::parse(fields[1]).ok_or_else(|| Error::ManifestParse {
            line: lineno + 1,
            msg: format!("unknown category {:?}", fields[1]),
        })?;
        let label: u8 = fields[2].parse().map_err(|_| Error::ManifestParse {
            line: lineno + 1,
            msg: format!("bad label {:?}", fields[2]),
        })?;
        let score: f64 = fields[3].parse().map_err(|_| Error::ManifestParse {
            line: lineno + 1,
            msg: format!("bad score {:?}", fields[3]),
        })?;
        out.push(ScoreRecord {
            sample_id: fields[0].to_string(),
            category,
            label,
            score,
        });
    }
    Ok(out)
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(scores_to_string(records).as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores_str(&text)
}

/// Machine-readable report lines (`key = value`).
pub fn report_to_kv(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("protocol = {}\n", report.protocol));
    out.push_str("score_convention = fake_positive_1_minus_s\n");
    for (cat, v) in &report.per_category_auc {
        out.push_str(&format!("auc.{} = {}\n", cat.as_str(), v));
    }
    if let Some(v) = report.avg_fv() {
        out.push_str(&format!("auc.AVG_FV = {v}\n"));
    }
    if let Some(v) = report.avg() {
        out.push_str(&format!("auc.AVG = {v}\n"));
    }
    out
}

/// Aligned text table in the papers' column order: per-category AUC (%) plus
/// the applicable average column.
pub fn render_table(report: &EvalReport) -> String {
    let mut cols: Vec<(String, f64)> = report
        .per_category_auc
        .iter()
        .map(|(c, &v)| (c.as_str().to_string(), v))
        .collect();
    if let Some(v) = report.avg_fv() {
        cols.push(("AVG-FV".to_string(), v));
    }
    if let Some(v) = report.avg() {
        cols.push(("AVG".to_string(), v));
    }
    let cells: Vec<(String, String)> = cols
        .into_iter()
        .map(|(name, v)| (name, format!("{:.2}", v * 100.0)))
        .collect();
    let widths: Vec<usize> = cells
        .iter()
        .map(|(name, val)| name.len().max(val.len()))
        .collect();
    let mut header = String::new();
    let mut row = String::new();
    for ((name, val), w) in cells.iter().zip(&widths) {
        header.push_str(&format!("{name:>w$}  "));
        row.push_str(&format!("{val:>w$}  "));
    }
    format!(
        "AUC (%) — {} (fake positive, score = 1 − s)\n{}\n{}\n",
        report.protocol,
        header.trim_end(),
        row.trim_end()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic::{generate_corpus, CorpusSpec};
    use crate::dataio::LABEL_FAKE;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn auc_brute(scores: &[f64], positive: &[bool]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &p) in positive.iter().enumerate() {
            if !p {
                continue;
            }
            for (j, &q) in positive.iter().enumerate() {
                if q {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_hand_cases() {
        // Perfect separation.
        let s = [0.9, 0.8, 0.2, 0.1];
        let p = [true, true, false, false];
        assert_eq!(auc(&s, &p).unwrap(), 1.0);
        // The derived small instance: fakes {0.9, 0.4}, reals {0.6, 0.1}.
        let s = [0.9, 0.4, 0.6, 0.1];
        let p = [true, true, false, false];
        assert!((auc(&s, &p).unwrap() - 0.75).abs() < 1e-15);
        // All ties.
        let s = [0.5, 0.5, 0.5];
        let p = [true, false, false];
        assert!((auc(&s, &p).unwrap() - 0.5).abs() < 1e-15);
        // Perfectly wrong.
        let s = [0.1, 0.9];
        let p = [true, false];
        assert_eq!(auc(&s, &p).unwrap(), 0.0);
    }

    #[test]
    fn auc_single_class_is_undefined() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedAuc { .. })
        ));
        assert!(matches!(
            auc(&[0.1, 0.2], &[false, false]),
            Err(Error::UndefinedAuc { .. })
        ));
    }

    #[test]
    fn auc_matches_bruteforce_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..300 {
            let n = rng.gen_range(4..40);
            // Quantized scores force plenty of ties.
            let levels = if trial % 2 == 0 { 5.0 } else { 1000.0 };
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(0.0..1.0f64) * levels).round() / levels)
                .collect();
            let mut positive: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            positive[0] = true;
            positive[1] = false;
            let fast = auc(&scores, &positive).unwrap();
            let brute = auc_brute(&scores, &positive);
            assert!(
                (fast - brute).abs() < 1e-12,
                "trial {trial}: {fast} vs {brute}"
            );
        }
    }

    #[test]
    fn auc_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let n = 50;
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut positive: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        positive[0] = true;
        positive[1] = false;
        let base = auc(&scores, &positive).unwrap();

        // Strictly increasing transform.
        let squashed: Vec<f64> = scores.iter().map(|&s| (3.0 * s + 1.0).tanh()).collect();
        assert!((auc(&squashed, &positive).unwrap() - base).abs() < 1e-12);

        // Complement identity for tie-free scores.
        let flipped: Vec<bool> = positive.iter().map(|&p| !p).collect();
        let comp = auc(&scores, &flipped).unwrap();
        assert!((base + comp - 1.0).abs() < 1e-12);
    }

    fn fav_entries() -> Vec<ManifestEntry> {
        generate_corpus(&CorpusSpec::loo(20, 8, 2, 42)).unwrap()
    }

    #[test]
    fn loo_splits_exclude_exactly_the_holdout() {
        let entries = fav_entries();
        for holdout in LOO_HOLDOUTS {
            let spec = ProtocolSpec::leave_one_out(holdout);
            let splits = build_protocol_splits(&spec, &entries, None).unwrap();
            assert!(
                splits.train.iter().all(|e| e.forgery_category != holdout),
                "{} leaked into training",
                holdout.as_str()
            );
            // Every other category still trains.
            for cat in [
                ForgeryCategory::Real,
                ForgeryCategory::Rvfa,
                ForgeryCategory::FvraW2l,
                ForgeryCategory::FvfaFs,
                ForgeryCategory::FvfaGan,
                ForgeryCategory::FvfaW2l,
            ] {
                if cat != holdout {
                    assert!(
                        splits.train.iter().any(|e| e.forgery_category == cat),
                        "{} missing from training when holding out {}",
                        cat.as_str(),
                        holdout.as_str()
                    );
                }
            }
            // Test pool: only holdout + reals, both present.
            assert!(splits
                .test
                .iter()
                .all(|e| e.forgery_category == holdout || e.forgery_category == ForgeryCategory::Real));
            assert!(splits.test.iter().any(|e| e.forgery_category == holdout));
            assert!(splits
                .test
                .iter()
                .any(|e| e.forgery_category == ForgeryCategory::Real));
            // Disjoint by sample id.
            let train_ids: std::collections::BTreeSet<_> =
                splits.train.iter().map(|e| &e.sample_id).collect();
            assert!(splits.test.iter().all(|e| !train_ids.contains(&e.sample_id)));
        }
    }

    #[test]
    fn invalid_holdouts_rejected() {
        let entries = fav_entries();
        let spec = ProtocolSpec::leave_one_out(ForgeryCategory::A2h);
        assert!(matches!(
            build_protocol_splits(&spec, &entries, None),
            Err(Error::Protocol(_))
        ));
        let spec = ProtocolSpec {
            kind: ProtocolKind::LeaveOneOut,
            holdout: None,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn cross_dataset_splits_are_disjoint() {
        let train_entries = fav_entries();
        let test_entries = generate_corpus(&CorpusSpec::cross_dataset(10, 3, 2, 99)).unwrap();
        let spec = ProtocolSpec::cross_dataset();
        let splits = build_protocol_splits(&spec, &train_entries, Some(&test_entries)).unwrap();
        assert!(!splits.train.is_empty());
        assert!(!splits.test.is_empty());
        let train_ids: std::collections::BTreeSet<_> =
            splits.train.iter().map(|e| &e.sample_id).collect();
        assert!(splits.test.iter().all(|e| !train_ids.contains(&e.sample_id)));
        assert!(matches!(
            build_protocol_splits(&spec, &train_entries, None),
            Err(Error::Protocol(_))
        ));
    }

    fn toy_records(mut score_of: impl FnMut(&ManifestEntry) -> f64) -> Vec<ScoreRecord> {
        let entries = fav_entries();
        entries
            .iter()
            .filter(|e| e.split == Split::Test)
            .map(|e| ScoreRecord {
                sample_id: e.sample_id.clone(),
                category: e.forgery_category,
                label: e.label,
                score: score_of(e),
            })
            .collect()
    }

    #[test]
    fn constant_scores_give_half_everywhere() {
        let records = toy_records(|_| 0.5);
        let report = report_from_scores("toy", &records).unwrap();
        for (&cat, &v) in &report.per_category_auc {
            assert!((v - 0.5).abs() < 1e-15, "{}: {v}", cat.as_str());
        }
        assert!((report.avg().unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn oracle_scores_give_one_everywhere() {
        let records = toy_records(|e| 1.0 - f64::from(e.label));
        let report = report_from_scores("toy", &records).unwrap();
        for (&cat, &v) in &report.per_category_auc {
            assert_eq!(v, 1.0, "{}", cat.as_str());
        }
        assert_eq!(report.avg_fv(), Some(1.0));
    }

    #[test]
    fn report_matches_hand_recompute_from_dump() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let records = toy_records(|_| rng.gen_range(0.0..1.0));
        let report = report_from_scores("toy", &records).unwrap();
        for (&cat, &v) in &report.per_category_auc {
            let mut scores = Vec::new();
            let mut positive = Vec::new();
            for r in &records {
                if r.category == cat || r.category == ForgeryCategory::Real {
                    scores.push(r.score);
                    positive.push(r.label == LABEL_FAKE);
                }
            }
            let recomputed = auc(&scores, &positive).unwrap();
            assert!((v - recomputed).abs() < 1e-12, "{}", cat.as_str());
        }
    }

    #[test]
    fn undefined_auc_carries_category_context() {
        // Only FVFA_GAN fakes but no reals at all.
        let records = vec![ScoreRecord {
            sample_id: "x".into(),
            category: ForgeryCategory::FvfaGan,
            label: 0,
            score: 0.7,
        }];
        match report_from_scores("toy", &records) {
            Err(Error::UndefinedAuc { context, .. }) => assert_eq!(context, "FVFA_GAN"),
            other => panic!("expected UndefinedAuc, got {other:?}"),
        }
    }

    #[test]
    fn score_dump_roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let records = toy_records(|_| rng.gen_range(0.0..1.0));
        let p1 = dir.path().join("scores.tsv");
        write_scores(&p1, &records).unwrap();
        let loaded = load_scores(&p1).unwrap();
        assert_eq!(records.len(), loaded.len());
        for (a, b) in records.iter().zip(loaded.iter()) {
            assert_eq!(a, b, "records must round-trip exactly");
        }
        let p2 = dir.path().join("scores2.tsv");
        write_scores(&p2, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap(),
            "write → read → write must be byte-identical"
        );
    }

    #[test]
    fn avg_fv_needs_all_four_categories() {
        let records = toy_records(|_| 0.3);
        let report = report_from_scores("toy", &records).unwrap();
        assert!(report.avg_fv().is_some(), "full FAV pool has all four");

        let only_rvfa: Vec<ScoreRecord> = records
            .iter()
            .filter(|r| {
                r.category == ForgeryCategory::Rvfa || r.category == ForgeryCategory::Real
            })
            .cloned()
            .collect();
        let partial = report_from_scores("toy", &only_rvfa).unwrap();
        assert!(partial.avg_fv().is_none());
        assert!(partial.avg().is_some());
    }

    #[test]
    fn table_renders_with_percentages() {
        let records = toy_records(|e| 1.0 - f64::from(e.label));
        let report = report_from_scores("toy", &records).unwrap();
        let table = render_table(&report);
        assert!(table.contains("100.00"), "oracle AUC renders as 100.00");
        assert!(table.contains("AVG-FV"));
        let kv = report_to_kv(&report);
        assert!(kv.contains("auc.RVFA = 1"));
        assert!(kv.contains("auc.AVG_FV = 1"));
    }
}
