//! Fast built-in oracle and invariant battery.
//!
//! Each check re-derives an expected value from first principles (closed
//! forms, brute-force summation, finite differences) and compares the
//! production code path against it. The whole battery is sized to finish in
//! seconds so it can gate scripted runs via the `selftest` subcommand.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::synthetic::{generate_corpus, materialize, CorpusSpec};
use crate::error::{Error, Result};
use crate::evaluator::auc;
use crate::losses::{loss_cls, loss_contra, loss_dist, sync_signal, ContraMode};
use crate::model::{CheckpointMeta, ModelConfig, TwoBranchModel};
use crate::teachers::js_divergence;
use crate::trainer::{lr_schedule, TrainConfig};

/// Outcome of one named check.
#[derive(Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub outcome: Result<()>,
}

/// Results of the whole battery.
#[derive(Debug)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.outcome.is_ok())
    }

    /// One `PASS`/`FAIL` line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            match &c.outcome {
                Ok(()) => out.push_str(&format!("PASS {}\n", c.name)),
                Err(e) => out.push_str(&format!("FAIL {} — {e}\n", c.name)),
            }
        }
        let n_fail = self.checks.iter().filter(|c| c.outcome.is_err()).count();
        out.push_str(&format!(
            "selftest: {}/{} checks passed\n",
            self.checks.len() - n_fail,
            self.checks.len()
        ));
        out
    }
}

fn fail(msg: impl Into<String>) -> Error {
    Error::contract(msg.into())
}

fn expect(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(fail(msg))
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    let mut v = Array1::from_shape_fn(dim, |_| -(rng.gen_range(1e-12..1.0f64).ln()));
    let s = v.sum();
    v.mapv_inplace(|x| x / s);
    v
}

/// Brute-force JS divergence (base 2) by direct summation.
fn js_oracle(p: &Array1<f64>, q: &Array1<f64>) -> f64 {
    let kl = |a: &Array1<f64>, b: &Array1<f64>| {
        a.iter()
            .zip(b.iter())
            .map(|(&x, &y)| if x > 0.0 { x * (x / y).log2() } else { 0.0 })
            .sum::<f64>()
    };
    let m = (p + q) * 0.5;
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

fn check_js_properties() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for i in 0..500 {
        let dim = rng.gen_range(2..40);
        let p = random_simplex(&mut rng, dim);
        let q = random_simplex(&mut rng, dim);
        let d_pq = js_divergence(p.view(), q.view())?;
        let d_qp = js_divergence(q.view(), p.view())?;
        expect(
            (d_pq - d_qp).abs() < 1e-12,
            format!("JS symmetry violated at case {i}"),
        )?;
        expect(
            (0.0..=1.0 + 1e-12).contains(&d_pq),
            format!("JS out of [0,1] at case {i}: {d_pq}"),
        )?;
        expect(
            (d_pq - js_oracle(&p, &q)).abs() < 1e-9,
            format!("JS disagrees with brute-force oracle at case {i}"),
        )?;
        let d_pp = js_divergence(p.view(), p.view())?;
        expect(
            d_pp.abs() < 1e-12,
            format!("JS identity-zero violated at case {i}: {d_pp}"),
        )?;
    }
    Ok(())
}

fn check_loss_anchors() -> Result<()> {
    expect(
        (loss_cls(0.5, 1) - std::f64::consts::LN_2).abs() < 1e-12,
        "loss_cls(0.5, real) must equal ln 2",
    )?;
    expect(
        (loss_cls(0.1, 0) - (-(0.9f64).ln())).abs() < 1e-12,
        "loss_cls(0.1, fake) must equal −ln 0.9",
    )?;
    // d = 0.5 everywhere, fake, margin 1 → (1 − 0.5)² = 0.25 per frame.
    let sync = Array1::from_elem(6, 0.25);
    let cont = Array1::from_elem(6, 0.75);
    let lc = loss_contra(sync.view(), cont.view(), 0, 1.0)?;
    expect(
        (lc - 0.25).abs() < 1e-12,
        format!("contrastive anchor: expected 0.25, got {lc}"),
    )?;
    // Identical distributions → dist loss at its simple anchor when
    // sync == cont == 0.5: BCE(0.5, 0.5) = ln 2.
    let half = Array1::from_elem(4, 0.5);
    let ld = loss_dist(half.view(), half.view())?;
    expect(
        (ld - std::f64::consts::LN_2).abs() < 1e-12,
        format!("dist anchor: expected ln 2, got {ld}"),
    )?;
    Ok(())
}

fn check_sync_anchors() -> Result<()> {
    let a = Array2::from_shape_fn((3, 4), |(t, d)| (t * 4 + d) as f64 + 1.0);
    let same = sync_signal(&a, &a.clone())?;
    expect(
        same.iter().all(|&v| (v - 1.0).abs() < 1e-12),
        "identical embeddings must give sync 1",
    )?;
    let opp = sync_signal(&a, &a.mapv(|x| -x))?;
    expect(
        opp.iter().all(|&v| v.abs() < 1e-12),
        "opposite embeddings must give sync 0",
    )?;
    let mut b = Array2::zeros((1, 2));
    b[[0, 0]] = 1.0;
    let mut c = Array2::zeros((1, 2));
    c[[0, 1]] = 1.0;
    let orth = sync_signal(&b, &c)?;
    expect(
        (orth[0] - 0.5).abs() < 1e-12,
        "orthogonal embeddings must give sync 0.5",
    )?;
    Ok(())
}

fn check_lr_schedule() -> Result<()> {
    let cfg = TrainConfig::default();
    for (epoch, want) in [(0usize, 1e-4), (1, 9.5e-5), (2, 9.025e-5)] {
        let got = lr_schedule(epoch, &cfg);
        expect(
            got == want,
            format!("lr at epoch {epoch}: expected {want}, got {got}"),
        )?;
    }
    Ok(())
}

fn check_gradient_spotcheck() -> Result<()> {
    // Central finite differences on loss_dist w.r.t. one sync coordinate.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t = 5;
    let sync = Array1::from_shape_fn(t, |_| rng.gen_range(0.05..0.95));
    let cont = Array1::from_shape_fn(t, |_| rng.gen_range(0.05..0.95));
    let h = 1e-6;
    for k in 0..t {
        let mut plus = sync.clone();
        plus[k] += h;
        let mut minus = sync.clone();
        minus[k] -= h;
        let fd = (loss_dist(plus.view(), cont.view())? - loss_dist(minus.view(), cont.view())?)
            / (2.0 * h);
        // Analytic: d/ds BCE(cont, s) averaged over frames =
        // (s − cont) / (s (1 − s) T).
        let s = sync[k];
        let analytic = (s - cont[k]) / (s * (1.0 - s) * t as f64);
        expect(
            (fd - analytic).abs() / analytic.abs().max(1.0) < 1e-4,
            format!("dist gradient mismatch at coord {k}: fd {fd} vs {analytic}"),
        )?;
    }
    Ok(())
}

fn check_auc_hand_cases() -> Result<()> {
    // Two positives {0.8, 0.4}, two negatives {0.6, 0.2}: 3 of 4 pairs
    // correctly ordered → 0.75.
    let scores = [0.8, 0.6, 0.4, 0.2];
    let positive = [true, false, true, false];
    let a = auc(&scores, &positive)?;
    expect((a - 0.75).abs() < 1e-12, format!("expected AUC 0.75, got {a}"))?;
    // Complement identity: flipping scores reverses the ranking.
    let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
    let b = auc(&flipped, &positive)?;
    expect(
        (a + b - 1.0).abs() < 1e-12,
        format!("complement identity violated: {a} + {b} ≠ 1"),
    )?;
    Ok(())
}

fn check_model_contracts() -> Result<()> {
    let model = TwoBranchModel::new(&ModelConfig::tiny(), 11)?;
    let entries = generate_corpus(&CorpusSpec::loo(2, 1, 2, 23))?;
    let samples = materialize(&entries[..2], 2)?;
    for sample in &samples {
        let out = model.score(sample)?;
        expect(
            out.s.is_finite() && (0.0..=1.0).contains(&out.s),
            "score must be a probability",
        )?;
        for attn in &out.attention {
            for row in attn.rows() {
                let s: f64 = row.sum();
                expect(
                    (s - 1.0).abs() < 1e-5,
                    format!("attention row sums to {s}, not 1"),
                )?;
            }
        }
        let sync = model.sync_profile(sample)?;
        expect(
            sync.iter().all(|&v| (0.0..=1.0).contains(&v)),
            "sync signal must stay in [0,1]",
        )?;
    }
    Ok(())
}

fn check_checkpoint_roundtrip() -> Result<()> {
    let dir = std::env::temp_dir().join(format!("xmodal-selftest-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("selftest.ckpt");
    let model = TwoBranchModel::new(&ModelConfig::tiny(), 13)?;
    let meta = CheckpointMeta {
        epoch: 2,
        step: 17,
        seed: 13,
        best_val_auc: 0.875,
    };
    model.save_checkpoint(&path, &meta, &Default::default())?;
    let bytes1 = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let (loaded, meta2, _) = TwoBranchModel::load_checkpoint(&path)?;
    loaded.save_checkpoint(&path, &meta2, &Default::default())?;
    let bytes2 = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let _ = std::fs::remove_dir_all(&dir);
    expect(bytes1 == bytes2, "checkpoint save→load→save must be bitwise stable")?;
    expect(meta2.epoch == 2 && meta2.step == 17, "checkpoint meta must round-trip")?;
    Ok(())
}

fn check_contra_mode_relations() -> Result<()> {
    use crate::losses::loss_contra_mode;
    // Single frame: per-frame mean and sequence norm describe the same
    // distance, so the modes must coincide exactly.
    let s1 = Array1::from_elem(1, 0.3);
    let c1 = Array1::from_elem(1, 0.85);
    for y in [0u8, 1u8] {
        let a = loss_contra_mode(s1.view(), c1.view(), y, 1.0, ContraMode::PerFrame)?;
        let b = loss_contra_mode(s1.view(), c1.view(), y, 1.0, ContraMode::SequenceNorm)?;
        expect(
            (a - b).abs() < 1e-12,
            format!("contra modes must agree at T=1 (y={y}): {a} vs {b}"),
        )?;
    }
    // Constant distance d over T frames, real sample: per-frame gives d²,
    // sequence norm gives (d√T)² = T·d².
    let t = 5usize;
    let sync = Array1::from_elem(t, 0.3);
    let cont = Array1::from_elem(t, 0.7);
    let a = loss_contra_mode(sync.view(), cont.view(), 1, 1.0, ContraMode::PerFrame)?;
    let b = loss_contra_mode(sync.view(), cont.view(), 1, 1.0, ContraMode::SequenceNorm)?;
    expect(
        (a - 0.16).abs() < 1e-12 && (b - t as f64 * 0.16).abs() < 1e-12,
        format!("contra scaling relation violated: per-frame {a}, sequence {b}"),
    )
}

/// Run every check; never panics, failures are collected in the report.
pub fn run_selftest() -> SelftestReport {
    let checks: Vec<(&'static str, fn() -> Result<()>)> = vec![
        ("js_divergence_properties", check_js_properties),
        ("loss_hand_anchors", check_loss_anchors),
        ("sync_analytic_anchors", check_sync_anchors),
        ("lr_schedule_literals", check_lr_schedule),
        ("dist_gradient_finite_difference", check_gradient_spotcheck),
        ("auc_hand_cases", check_auc_hand_cases),
        ("model_probability_and_attention", check_model_contracts),
        ("checkpoint_bitwise_roundtrip", check_checkpoint_roundtrip),
        ("contra_mode_relations", check_contra_mode_relations),
    ];
    SelftestReport {
        checks: checks
            .into_iter()
            .map(|(name, f)| CheckResult { name, outcome: f() })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    #[test]
    fn full_battery_passes_quickly() {
        let t0 = Instant::now();
        let report = run_selftest();
        let elapsed = t0.elapsed();
        assert!(report.passed(), "selftest failures:\n{}", report.render());
        assert_eq!(report.checks.len(), 9);
        assert!(
            elapsed.as_secs_f64() < 10.0,
            "battery too slow: {elapsed:?}"
        );
        let rendered = report.render();
        assert!(rendered.contains("PASS js_divergence_properties"));
        assert!(rendered.contains("9/9 checks passed"));
    }
}
