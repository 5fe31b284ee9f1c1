//! Acceptance suite: one test per exit criterion, each printing a PASS/FAIL
//! line (run with `--nocapture` to see them live). The expensive artifacts —
//! corpus, prepared splits, base checkpoint, scenario logs — are built once
//! and shared by every criterion.
//!
//! The corpus comes from `UCI_HAR_DIR` when that points at a raw layout;
//! otherwise the shipped synthetic generator writes an equivalent layout
//! with the published class counts.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use fedhar::analysis::{pca_components, tsne, ProjectionMeta};
use fedhar::checkpoint;
use fedhar::cli::train_with_validation;
use fedhar::dataset::{self, Dataset};
use fedhar::fedsim::{self, fedavg, ModelId, RoundLog, ScenarioConfig};
use fedhar::model::{self, Arch, DropoutMode};
use fedhar::rng::Rng;
use fedhar::synth;
use fedhar::tensor::Tensor;

const CLASS_COUNTS: [usize; 6] = [1722, 1544, 1406, 1777, 1906, 1944];

struct Fixture {
    counts: [usize; 6],
    total: usize,
    train: Dataset,
    test: Dataset,
    base_test_acc: f64,
    baseline_cfg: ScenarioConfig,
    federated_cfg: ScenarioConfig,
    baseline_log: RoundLog,
    /// Parallel-clients execution of the shipped federated scenario.
    federated_log: RoundLog,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(build_fixture)
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn build_fixture() -> Fixture {
    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("acc-{}", std::process::id()));
    std::fs::create_dir_all(&tmp).expect("create tmp dir");

    let uci_root = match std::env::var("UCI_HAR_DIR") {
        Ok(dir) => PathBuf::from(dir),
        Err(_) => {
            let root = tmp.join("uci");
            let t = Instant::now();
            synth::generate_uci_layout(&root, synth::PAPER_COUNTS, 7).expect("generate corpus");
            println!("[fixture] synthetic corpus written in {:.1?}", t.elapsed());
            root
        }
    };

    let t = Instant::now();
    let full = dataset::load_uci(&uci_root).expect("load corpus");
    let counts = full.per_class_counts();
    let total = full.len();
    let mut split_rng = Rng::new(7);
    let (train_raw, val_raw, test_raw) =
        dataset::stratified_split(&full, (0.70, 0.15, 0.15), &mut split_rng).expect("split");
    let stats = dataset::fit_normalizer(&train_raw).expect("stats");
    let train = dataset::apply_normalizer(&stats, &train_raw);
    let val = dataset::apply_normalizer(&stats, &val_raw);
    let test = dataset::apply_normalizer(&stats, &test_raw);
    println!("[fixture] corpus loaded and split in {:.1?}", t.elapsed());

    let t = Instant::now();
    let root = Rng::new(7);
    let init = model::init_params(Arch::PAPER, &mut root.derive(0));
    let (base, best_epoch, epochs) =
        train_with_validation(init, &train, &val, 50, 10, &root.derive(1)).expect("base training");
    let base_test_acc = model::evaluate(&base, &test).expect("test eval").overall;
    println!(
        "[fixture] base model: kept epoch {best_epoch}/{epochs}, test acc {base_test_acc:.4}, {:.1?}",
        t.elapsed()
    );
    let ckpt = tmp.join("base.ckpt");
    checkpoint::save(&base, &ckpt).expect("save checkpoint");

    let load_cfg = |name: &str| -> ScenarioConfig {
        let path = scenarios_dir().join(name);
        let text = std::fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("read {}: {e}", path.display()));
        let mut cfg = ScenarioConfig::from_json(&text).expect("parse scenario");
        cfg.checkpoint = Some(ckpt.clone());
        cfg
    };
    let baseline_cfg = load_cfg("baseline.json");
    let federated_cfg = load_cfg("federated.json");

    let t = Instant::now();
    let baseline_log =
        fedsim::run_baseline(&baseline_cfg, &train, &test).expect("baseline scenario");
    println!("[fixture] baseline scenario in {:.1?}", t.elapsed());
    let t = Instant::now();
    let federated_log =
        fedsim::run_federated(&federated_cfg, &train, &test, true).expect("federated scenario");
    println!("[fixture] federated scenario in {:.1?}", t.elapsed());

    Fixture {
        counts,
        total,
        train,
        test,
        base_test_acc,
        baseline_cfg,
        federated_cfg,
        baseline_log,
        federated_log,
    }
}

fn criterion(n: u32, what: &str, pass: bool, detail: &str) {
    println!(
        "[criterion {n:2}] {} — {what}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} failed — {what}: {detail}");
}

fn per_class(log: &RoundLog, model: ModelId, round: u32) -> [f64; 6] {
    log.records
        .iter()
        .find(|r| r.round == round)
        .and_then(|r| r.evals.iter().find(|e| e.model == model))
        .map(|e| e.per_class)
        .unwrap_or_else(|| panic!("no eval for {model} at round {round}"))
}

#[test]
fn criterion_01_base_model_accuracy() {
    let fx = fixture();
    criterion(
        1,
        "base test accuracy >= 0.92",
        fx.base_test_acc >= 0.92,
        &format!("{:.4}", fx.base_test_acc),
    );
}

#[test]
fn criterion_02_gradient_correctness() {
    // Central finite differences on the reduced net (4 filters, 8 dense
    // units), every parameter of every tensor, three random batches.
    let arch = Arch::reduced(4, 8);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    for seed in [11u64, 12, 13] {
        let mut rng = Rng::new(seed);
        let params = model::init_params(arch, &mut rng);
        let n = 4;
        let mut values = Vec::with_capacity(n * 128 * 6);
        for _ in 0..n * 128 * 6 {
            values.push(rng.next_normal());
        }
        let batch = Tensor::new(vec![n, 128, 6], values);
        let labels: Vec<usize> = (0..n).map(|i| (i + seed as usize) % 6).collect();

        let (_, grads) =
            model::loss_and_grad(&params, &batch, &labels, DropoutMode::Off).expect("grad");
        for ti in 0..6 {
            for vi in 0..params.tensors()[ti].len() {
                let mut plus = params.clone();
                plus.tensors_mut()[ti].values_mut()[vi] += eps;
                let (lp, _) =
                    model::loss_and_grad(&plus, &batch, &labels, DropoutMode::Off).unwrap();
                let mut minus = params.clone();
                minus.tensors_mut()[ti].values_mut()[vi] -= eps;
                let (lm, _) =
                    model::loss_and_grad(&minus, &batch, &labels, DropoutMode::Off).unwrap();
                let numeric = (lp - lm) / (2.0 * eps);
                let analytic = grads.tensors()[ti].values()[vi];
                let err = (analytic - numeric).abs()
                    / (1e-8 / 1e-5 + analytic.abs().max(numeric.abs()));
                worst = worst.max(err);
                checked += 1;
                assert!(
                    (analytic - numeric).abs() <= 1e-8 + 1e-5 * analytic.abs().max(numeric.abs()),
                    "seed {seed} tensor {ti} index {vi}: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }
    criterion(
        2,
        "analytic gradients match central differences (rel < 1e-5)",
        true,
        &format!("{checked} components over 3 batches, worst scaled error {worst:.2e}"),
    );
}

#[test]
fn criterion_03_baseline_forgetting_pattern() {
    let fx = fixture();
    let log = &fx.baseline_log;
    let s4 = per_class(log, ModelId::Client1, 4);
    let s8 = per_class(log, ModelId::Client1, 8);
    let min_c5 = (1..=8)
        .map(|r| per_class(log, ModelId::Client1, r)[5])
        .fold(f64::INFINITY, f64::min);

    let mut pass = s4[1] >= 0.80 && s8[2] >= 0.80 && s8[1] <= 0.20 && min_c5 >= 0.60;
    for c in [0, 2, 3, 4] {
        pass &= s4[c] <= 0.30;
    }
    criterion(
        3,
        "baseline forgetting (learned classes high, others collapse, static class preserved)",
        pass,
        &format!(
            "step4 {:?}, step8 c1 {:.2} c2 {:.2}, min c5 {:.2}",
            s4.map(|v| (v * 100.0).round() / 100.0),
            s8[1],
            s8[2],
            min_c5
        ),
    );
}

#[test]
fn criterion_04_federated_knowledge_transfer() {
    let fx = fixture();
    let log = &fx.federated_log;
    let mut min_static = f64::INFINITY;
    for r in 2..=8 {
        let acc = per_class(log, ModelId::Client1, r);
        for c in [3, 4, 5] {
            min_static = min_static.min(acc[c]);
        }
    }
    let r4 = per_class(log, ModelId::Client1, 4);
    let r8 = per_class(log, ModelId::Client1, 8);
    let pass = min_static >= 0.60 && r8[1] <= 0.20 && r4[2] <= 0.20;
    criterion(
        4,
        "federated transfer (static classes >= 0.60 from round 2; walking tasks forgotten)",
        pass,
        &format!(
            "min static {min_static:.2}, round8 c1 {:.2}, round4 c2 {:.2}",
            r8[1], r4[2]
        ),
    );
}

#[test]
fn criterion_05_server_contamination() {
    let fx = fixture();
    let server = per_class(&fx.federated_log, ModelId::Server, 8);
    let general = per_class(&fx.federated_log, ModelId::Generalized, 8);
    let s_mean = (server[0] + server[1] + server[2]) / 3.0;
    let g_mean = (general[0] + general[1] + general[2]) / 3.0;
    criterion(
        5,
        "server mean over classes {0,1,2} strictly below generalized client",
        s_mean < g_mean,
        &format!("server {s_mean:.3} vs generalized {g_mean:.3} (ratio {:.3})", s_mean / g_mean),
    );
}

#[test]
fn criterion_06_protocol_invariants() {
    let fx = fixture();

    // No uid issued twice across all (client, round) pairs, checked from the
    // provenance CSV itself.
    let csv = fx.federated_log.provenance_csv();
    let mut seen = HashSet::new();
    let mut dup = None;
    for line in csv.lines().skip(1) {
        let uid: u64 = line.split(',').nth(2).expect("uid column").parse().expect("uid");
        if !seen.insert(uid) {
            dup = Some(uid);
        }
    }
    assert!(dup.is_none(), "uid {dup:?} issued twice");

    // Aggregation weights sum to one within 1e-9 and invalid vectors are
    // rejected.
    let k = f64::from(fx.federated_cfg.clients);
    let weights = [(k - 1.0) / k, 1.0 / k];
    assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    let p = model::init_params(Arch::reduced(2, 3), &mut Rng::new(0));
    assert!(fedavg(&[&p, &p], &weights).is_ok());
    assert!(fedavg(&[&p, &p], &[0.5, 0.6]).is_err());

    // Schedule validation rejects the broken variants of the shipped file.
    let mut overlap = fx.federated_cfg.clone();
    overlap.schedules.client1[1].classes = vec![1];
    let overlap_err = overlap.validate().unwrap_err().to_string();
    assert!(overlap_err.contains("∩"), "{overlap_err}");

    let mut short = fx.federated_cfg.clone();
    short.schedules.client1[1].rounds = 3;
    let short_err = short.validate().unwrap_err().to_string();
    assert!(short_err.contains("rounds sum 7 ≠ R=8"), "{short_err}");

    criterion(
        6,
        "provenance disjoint, weights sum to 1, invalid schedules rejected",
        true,
        &format!("{} provenance rows, {} unique uids", csv.lines().count() - 1, seen.len()),
    );
}

#[test]
fn criterion_07_determinism() {
    let fx = fixture();

    let t = Instant::now();
    let baseline_again = fedsim::run_baseline(&fx.baseline_cfg, &fx.train, &fx.test).unwrap();
    let b_acc = fx.baseline_log.accuracy_csv() == baseline_again.accuracy_csv();
    let b_prov = fx.baseline_log.provenance_csv() == baseline_again.provenance_csv();

    let fed_again = fedsim::run_federated(&fx.federated_cfg, &fx.train, &fx.test, true).unwrap();
    let f_acc = fx.federated_log.accuracy_csv() == fed_again.accuracy_csv();
    let f_prov = fx.federated_log.provenance_csv() == fed_again.provenance_csv();

    let sequential = fedsim::run_federated(&fx.federated_cfg, &fx.train, &fx.test, false).unwrap();
    let s_acc = fx.federated_log.accuracy_csv() == sequential.accuracy_csv();
    let s_prov = fx.federated_log.provenance_csv() == sequential.provenance_csv();
    println!("[criterion  7] reruns took {:.1?}", t.elapsed());

    criterion(
        7,
        "same-seed reruns and parallel-vs-sequential execution are byte-identical",
        b_acc && b_prov && f_acc && f_prov && s_acc && s_prov,
        &format!(
            "baseline acc/prov {b_acc}/{b_prov}, federated rerun {f_acc}/{f_prov}, sequential {s_acc}/{s_prov}"
        ),
    );
}

// ---------------------------------------------------------------------------
// PCA oracle: cyclic Jacobi eigendecomposition of the covariance, written
// independently of the SVD path it checks.
// ---------------------------------------------------------------------------

fn jacobi_eigen(mut a: Vec<f64>, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[p * d + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k * d + p];
                    let akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p * d + k];
                    let aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let vkp = v[k * d + p];
                    let vkq = v[k * d + q];
                    v[k * d + p] = c * vkp - s * vkq;
                    v[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigvals: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    (eigvals, v)
}

/// Top-k covariance eigenvectors by brute force, with the same sign
/// convention the implementation documents.
fn oracle_components(features: &Tensor, k: usize) -> Vec<f64> {
    let (n, d) = (features.shape()[0], features.shape()[1]);
    let x = features.values();
    let mut means = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for row in x.chunks_exact(d) {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (row[i] - means[i]) * (row[j] - means[j]);
            }
        }
    }
    let (eigvals, v) = jacobi_eigen(cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigvals[b].partial_cmp(&eigvals[a]).unwrap());
    let mut components = vec![0.0; k * d];
    for (row, &col) in order[..k].iter().enumerate() {
        let mut arg = 0;
        let mut best = 0.0f64;
        for i in 0..d {
            if v[i * d + col].abs() > best {
                best = v[i * d + col].abs();
                arg = i;
            }
        }
        let flip = if v[arg * d + col] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components[row * d + i] = flip * v[i * d + col];
        }
    }
    components
}

#[test]
fn criterion_08_pca_oracle_equivalence() {
    let mut worst: f64 = 0.0;
    for (n, d, k, seed) in [(5usize, 3usize, 3usize, 31u64), (50, 10, 3, 32)] {
        let mut rng = Rng::new(seed);
        let features = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.next_normal()).collect());
        let (components, explained) = pca_components(&features, k).expect("pca");
        let oracle = oracle_components(&features, k);
        for (i, (a, b)) in components.iter().zip(&oracle).enumerate() {
            let diff = (a - b).abs();
            worst = worst.max(diff);
            assert!(diff <= 1e-8, "{n}x{d} component entry {i}: {a} vs {b}");
        }
        // Orthonormality within 1e-8.
        for i in 0..k {
            for j in 0..k {
                let g = fedhar::tensor::dot(
                    &components[i * d..(i + 1) * d],
                    &components[j * d..(j + 1) * d],
                );
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() <= 1e-8, "gram[{i}][{j}] = {g}");
            }
        }
        for w in explained.windows(2) {
            assert!(w[0] >= w[1], "ratios not monotone: {explained:?}");
        }
    }
    criterion(
        8,
        "PCA matches brute-force covariance eigendecomposition",
        true,
        &format!("5x3 and 50x10 instances, worst entry difference {worst:.2e}"),
    );
}

#[test]
fn criterion_09_tsne_properties() {
    // Two Gaussian clusters in 50-D separated by 20 sigma, 200 points.
    let (per_cluster, d, sep) = (100usize, 50usize, 20.0);
    let n = 2 * per_cluster;
    let mut rng = Rng::new(41);
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        for k in 0..d {
            let center = if k == 0 && i >= per_cluster { sep } else { 0.0 };
            values.push(center + rng.next_normal());
        }
    }
    let features = Tensor::new(vec![n, d], values);

    let t = Instant::now();
    let perplexity = 30.0;
    let proj = tsne(&features, perplexity, 1000, &mut Rng::new(42)).expect("tsne");
    let elapsed = t.elapsed();

    let (kl, betas) = match &proj.meta {
        ProjectionMeta::Tsne { final_kl, betas, .. } => (*final_kl, betas.clone()),
        _ => unreachable!(),
    };

    // Recompute each row's entropy from the returned bandwidths with an
    // independent distance loop.
    let x = features.values();
    let mut worst_entropy_gap: f64 = 0.0;
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        let mut weights = Vec::with_capacity(n - 1);
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = &x[j * d..(j + 1) * d];
            let dist: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
            weights.push((-betas[i] * dist).exp());
        }
        let sum: f64 = weights.iter().sum();
        let mut entropy = 0.0;
        for w in &weights {
            let p = w / sum;
            if p > 1e-300 {
                entropy -= p * p.log2();
            }
        }
        worst_entropy_gap = worst_entropy_gap.max((entropy - perplexity.log2()).abs());
        assert!(
            (entropy - perplexity.log2()).abs() <= 1e-4,
            "row {i}: entropy {entropy} target {}",
            perplexity.log2()
        );
    }

    // Linear separability: project onto the direction between cluster means
    // and demand a clean threshold.
    let coords = proj.coords.values();
    let mean = |range: std::ops::Range<usize>| -> [f64; 2] {
        let mut m = [0.0; 2];
        for i in range.clone() {
            m[0] += coords[i * 2];
            m[1] += coords[i * 2 + 1];
        }
        m.map(|v| v / range.len() as f64)
    };
    let m1 = mean(0..per_cluster);
    let m2 = mean(per_cluster..n);
    let dir = [m2[0] - m1[0], m2[1] - m1[1]];
    let project = |i: usize| coords[i * 2] * dir[0] + coords[i * 2 + 1] * dir[1];
    let max_c1 = (0..per_cluster).map(project).fold(f64::NEG_INFINITY, f64::max);
    let min_c2 = (per_cluster..n).map(project).fold(f64::INFINITY, f64::min);
    let separable = max_c1 < min_c2;

    let finite = proj.coords.all_finite();
    criterion(
        9,
        "t-SNE entropy targets met, clusters separable, coordinates finite",
        separable && finite,
        &format!(
            "worst entropy gap {worst_entropy_gap:.1e}, margin {:.2}, final KL {kl:.3}, {elapsed:.1?}",
            min_c2 - max_c1
        ),
    );
}

#[test]
fn criterion_10_dataset_fidelity() {
    let fx = fixture();
    let pass = fx.counts == CLASS_COUNTS && fx.total == 10299;
    criterion(
        10,
        "class histogram matches the published counts",
        pass,
        &format!("{:?}, total {}", fx.counts, fx.total),
    );
}
