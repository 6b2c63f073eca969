//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cssl_cli::commands::{cmd_efficiency, cmd_synthetic, EfficiencyReport};
use cssl_cli::{ExperimentSpec, Options, SyntheticSpec};
use cssl_core::credal::{credal_contains, cross_entropy, osl_kl_grad, osl_kl_loss, osl_kl_loss_raw, possibility_contains};
use cssl_core::labeling::{make_label, smoothed_target, AlignmentState};
use cssl_core::metrics::{ece, ECE_BINS};
use cssl_core::neural::{cosine_lr, Activation, Mlp};
use cssl_core::rng::{stream, Rng, Stream};
use cssl_core::trainer::{build_pseudo_labels, labeled_loss, unlabeled_loss};
use cssl_core::{CredalTarget, PossibilityDist, ProbDist, PseudoLabel, SelfTrainMethod, StrategyConfig};
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> Rng {
    stream(seed, Stream::Data)
}

/// Random simplex point, sharpened or flattened at random so draws land on
/// both sides of typical credal boundaries.
fn simplex(r: &mut Rng, k: usize) -> Vec<f64> {
    let peak: f64 = r.random_range(0.2..6.0);
    let w: Vec<f64> = (0..k).map(|_| (-r.random::<f64>().max(1e-300).ln()).powf(peak)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn pd(v: &[f64]) -> ProbDist {
    ProbDist::new(v.to_vec()).unwrap()
}

fn target(y: usize, alpha: f64) -> CredalTarget {
    CredalTarget::new(y, alpha).unwrap()
}

fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn criterion_1() -> Outcome {
    let p = [0.5, 0.3, 0.2];
    let loss = osl_kl_loss(target(0, 0.1), &pd(&p)).unwrap();
    // projection by hand: reference class gets 0.9, the rest 0.1 in proportion
    let s = p[1] + p[2];
    let r = [0.9, 0.1 * p[1] / s, 0.1 * p[2] / s];
    let oracle: f64 = r.iter().zip(&p).map(|(ri, pi)| ri * (ri / pi).ln()).sum();
    let rel = (loss - oracle).abs() / oracle;

    let mut g = rng(101);
    let (mut agree, mut members) = (0, 0);
    for _ in 0..10_000 {
        let k = g.random_range(2..=10);
        let p = pd(&simplex(&mut g, k));
        let t = target(g.random_range(0..k), g.random_range(0.0..=1.0));
        let inside = credal_contains(t, &p).unwrap();
        members += usize::from(inside);
        agree += usize::from((osl_kl_loss(t, &p).unwrap() == 0.0) == inside);
    }
    outcome(
        rel <= 1e-10 && agree == 10_000 && members > 0 && members < 10_000,
        format!("loss {loss:.6} vs oracle {oracle:.6} (rel {rel:.1e}); zero-iff-member {agree}/10000 ({members} members)"),
    )
}

fn criterion_2() -> Outcome {
    let mut g = rng(102);
    let (mut convex, mut monotone, mut worst) = (0, 0, f64::NEG_INFINITY);
    for _ in 0..10_000 {
        let k = g.random_range(2..=10);
        let (p1, p2) = (simplex(&mut g, k), simplex(&mut g, k));
        let lambda: f64 = g.random();
        let t = target(g.random_range(0..k), g.random_range(0.0..=1.0));
        let mix: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let lhs = osl_kl_loss(t, &ProbDist::from_scores(&mix).unwrap()).unwrap();
        let rhs = lambda * osl_kl_loss(t, &pd(&p1)).unwrap() + (1.0 - lambda) * osl_kl_loss(t, &pd(&p2)).unwrap();
        worst = worst.max(lhs - rhs);
        convex += usize::from(lhs <= rhs + 1e-9);
    }
    for _ in 0..10_000 {
        let k = g.random_range(2..=10);
        let p = pd(&simplex(&mut g, k));
        let y = g.random_range(0..k);
        let (a, b): (f64, f64) = (g.random(), g.random());
        let (lo, hi) = (a.min(b), a.max(b));
        monotone += usize::from(osl_kl_loss(target(y, hi), &p).unwrap() <= osl_kl_loss(target(y, lo), &p).unwrap() + 1e-9);
    }
    outcome(
        convex == 10_000 && monotone == 10_000,
        format!("convexity {convex}/10000 (max excess {worst:.1e}), monotonicity {monotone}/10000"),
    )
}

fn backprop_point(g: &mut Rng, mc: &mut Rng, strategy: &StrategyConfig) -> Option<f64> {
    let mut model = Mlp::new(&[2, 4, 3], Activation::Sigmoid, 0.0, g).unwrap();
    for p in model.params_mut() {
        *p += g.random_range(-1.0..1.0);
    }
    let weak: Vec<Vec<f64>> = (0..4).map(|_| vec![g.random_range(-2.0..2.0), g.random_range(-2.0..2.0)]).collect();
    let strong: Vec<Vec<f64>> = weak.iter().map(|x| x.iter().map(|v| v + g.random_range(-0.5..0.5)).collect()).collect();
    let lx = vec![vec![g.random_range(-2.0..2.0), g.random_range(-2.0..2.0)]];
    let ly = vec![g.random_range(0..3)];
    let st = AlignmentState::from_labels(&[0, 1, 2], 3, 0.999).unwrap();
    let (labels, _) = build_pseudo_labels(&model, &weak, &st, strategy, mc).unwrap();
    let near = strong.iter().zip(&labels).any(|(x, l)| match l {
        PseudoLabel::Credal(t) => (model.predict(x).unwrap().probs()[t.ref_class] - (1.0 - t.alpha)).abs() < 1e-4,
        _ => false,
    });
    if near {
        return None;
    }
    let total = |m: &Mlp| labeled_loss(m, &lx, &ly, None, None).unwrap() + unlabeled_loss(m, &strong, &labels, false, None, None).unwrap().0;
    let mut grads = vec![0.0; model.num_params()];
    labeled_loss(&model, &lx, &ly, None, Some((&mut grads, 1.0))).unwrap();
    unlabeled_loss(&model, &strong, &labels, false, None, Some((&mut grads, 1.0))).unwrap();
    let h = 1e-6;
    let base = model.params().to_vec();
    let fd: Vec<f64> = (0..base.len())
        .map(|i| {
            let (mut up, mut down) = (base.clone(), base.clone());
            up[i] += h;
            down[i] -= h;
            (total(&model.with_params(up).unwrap()) - total(&model.with_params(down).unwrap())) / (2.0 * h)
        })
        .collect();
    Some(vec_rel_err(&grads, &fd))
}

fn criterion_3() -> Outcome {
    let mut g = rng(103);
    let (mut ok, mut n, mut worst) = (0, 0, 0.0f64);
    while n < 1000 {
        let k = g.random_range(2..=10);
        let p = simplex(&mut g, k);
        let t = target(g.random_range(0..k), g.random_range(0.0..=1.0));
        // central differences with h = 1e-6 need every entry well above h
        if p[t.ref_class] > 1.0 - t.alpha - 1e-4 || p.iter().any(|v| *v < 1e-4) {
            continue;
        }
        let grad = osl_kl_grad(t, &pd(&p)).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..k)
            .map(|j| {
                let (mut up, mut down) = (p.clone(), p.clone());
                up[j] += h;
                down[j] -= h;
                (osl_kl_loss_raw(t, &up).unwrap() - osl_kl_loss_raw(t, &down).unwrap()) / (2.0 * h)
            })
            .collect();
        let e = vec_rel_err(&grad, &fd);
        worst = worst.max(e);
        ok += usize::from(e <= 1e-3);
        n += 1;
    }

    let mut mc = stream(103, Stream::Uncertainty);
    let strategies = [
        StrategyConfig::cssl(),
        StrategyConfig::lsmatch(),
        StrategyConfig::fixmatch(0.5),
        StrategyConfig { mc_samples: 4, ..StrategyConfig::upsmatch(0.4, 0.05) },
    ];
    let (mut net_ok, mut net_n, mut net_worst) = (0, 0, 0.0f64);
    for s in &strategies {
        let mut done = 0;
        while done < 100 {
            if let Some(e) = backprop_point(&mut g, &mut mc, s) {
                net_worst = net_worst.max(e);
                net_ok += usize::from(e <= 1e-3);
                net_n += 1;
                done += 1;
            }
        }
    }
    outcome(
        ok == n && net_ok == net_n,
        format!("osl_kl_grad {ok}/{n} (worst rel {worst:.1e}); 2-4-3 backprop {net_ok}/{net_n} over 4 strategies (worst rel {net_worst:.1e})"),
    )
}

fn criterion_4() -> Outcome {
    let mut g = rng(104);
    let (mut agree, mut members) = (0, 0);
    for _ in 0..10_000 {
        let k = g.random_range(2..=8);
        let p = pd(&simplex(&mut g, k));
        let (y, alpha) = (g.random_range(0..k), g.random_range(0.0..=1.0));
        let mut plaus = vec![alpha; k];
        plaus[y] = 1.0;
        let brute = possibility_contains(&PossibilityDist::new(plaus).unwrap(), &p).unwrap();
        let direct = credal_contains(target(y, alpha), &p).unwrap();
        members += usize::from(direct);
        agree += usize::from(brute == direct);
    }
    outcome(agree == 10_000, format!("{agree}/10000 draws agree ({members} members)"))
}

fn criterion_5() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let seeds: Vec<u64> = (0..5).collect();
    let report = cmd_synthetic(&SyntheticSpec::default(), &seeds, dir.path(), None).unwrap();
    let mse = |m| report.mean_mse(m).unwrap();
    let (hard, soft, credal) = (mse(SelfTrainMethod::Hard), mse(SelfTrainMethod::Soft), mse(SelfTrainMethod::Credal));
    outcome(credal < soft && credal < hard, format!("mean MSE credal {credal:.4}, soft {soft:.4}, hard {hard:.4}"))
}

fn efficiency_report() -> EfficiencyReport {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/efficiency_blobs.toml");
    let spec = ExperimentSpec::load(&path).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = Options { out: dir.path().to_path_buf(), ..Options::default() };
    cmd_efficiency(&spec, &opts).unwrap()
}

fn criterion_6(report: &EfficiencyReport) -> Outcome {
    let (c, f) = (report.row("cssl").unwrap(), report.row("fixmatch-tau0.95").unwrap());
    let wins = c.per_seed.iter().zip(&f.per_seed).filter(|(a, b)| a.final_error < b.final_error).count();
    let diffs: Vec<String> = c.per_seed.iter().zip(&f.per_seed).map(|(a, b)| format!("{:+.4}", a.final_error - b.final_error)).collect();
    outcome(
        wins >= 4 && c.final_error.mean <= f.final_error.mean,
        format!(
            "{} steps: CSSL better on {wins}/5 seeds (diffs {}); mean error {:.4} vs {:.4}",
            report.budget_steps,
            diffs.join(" "),
            c.final_error.mean,
            f.final_error.mean
        ),
    )
}

fn brute_force_ece(preds: &[ProbDist], labels: &[usize], bins: usize) -> f64 {
    let n = preds.len() as f64;
    (1..=bins)
        .map(|m| {
            let (lo, hi) = ((m - 1) as f64 / bins as f64, m as f64 / bins as f64);
            let idx: Vec<usize> = (0..preds.len())
                .filter(|&i| {
                    let c = preds[i].max_prob();
                    (c > lo && c <= hi) || (m == 1 && c == 0.0)
                })
                .collect();
            if idx.is_empty() {
                return 0.0;
            }
            let size = idx.len() as f64;
            let acc = idx.iter().filter(|&&i| preds[i].argmax() == labels[i]).count() as f64 / size;
            let conf = idx.iter().map(|&i| preds[i].max_prob()).sum::<f64>() / size;
            size / n * (acc - conf).abs()
        })
        .sum()
}

fn criterion_7(report: &EfficiencyReport) -> Outcome {
    let (c, f) = (report.row("cssl").unwrap(), report.row("fixmatch-tau0.95").unwrap());
    let mut g = rng(107);
    let preds: Vec<ProbDist> = (0..10_000).map(|_| pd(&simplex(&mut g, 5))).collect();
    let labels: Vec<usize> =
        preds.iter().map(|p| if g.random::<f64>() < p.max_prob() { p.argmax() } else { g.random_range(0..5) }).collect();
    let gap = (ece(&preds, &labels, ECE_BINS).unwrap().ece - brute_force_ece(&preds, &labels, ECE_BINS)).abs();
    outcome(
        c.final_ece.mean <= f.final_ece.mean && gap <= 1e-12,
        format!("mean EMA ECE CSSL {:.4} vs FixMatch(0.95) {:.4}; ece vs brute force |diff| {gap:.1e}", c.final_ece.mean, f.final_ece.mean),
    )
}

fn criterion_8() -> Outcome {
    let mut g = rng(108);
    let mut failures = Vec::new();

    let exact = (0..10_000).all(|_| {
        let k = g.random_range(2..=10);
        let p = pd(&simplex(&mut g, k));
        let y = g.random_range(0..k);
        osl_kl_loss(target(y, 0.0), &p).unwrap() == cross_entropy(&ProbDist::one_hot(k, y).unwrap(), &p).unwrap()
    });
    if !exact {
        failures.push("alpha=0 != cross-entropy");
    }

    let vacuous = (0..200).all(|_| {
        let model = Mlp::new(&[3, 6, 4], Activation::Relu, 0.0, &mut g).unwrap();
        let views: Vec<Vec<f64>> = (0..16).map(|_| (0..3).map(|_| g.random_range(-3.0..3.0)).collect()).collect();
        let labels: Vec<PseudoLabel> = (0..16).map(|_| PseudoLabel::Credal(target(g.random_range(0..4), 1.0))).collect();
        let mut grads = vec![0.0; model.num_params()];
        let (loss, _) = unlabeled_loss(&model, &views, &labels, false, None, Some((&mut grads, 1.0))).unwrap();
        loss == 0.0 && grads.iter().all(|v| *v == 0.0)
    });
    if !vacuous {
        failures.push("alpha=1 unlabeled loss not 0");
    }

    let inside = (0..10_000).all(|_| {
        let k = g.random_range(2..=12);
        let (y, alpha) = (g.random_range(0..k), g.random_range(0.0..=1.0));
        credal_contains(target(y, alpha), &smoothed_target(k, y, alpha).unwrap()).unwrap()
    });
    if !inside {
        failures.push("LSMatch target outside credal set");
    }

    let mut same = 0;
    for _ in 0..10_000 {
        let k = g.random_range(2..=10);
        let p = pd(&simplex(&mut g, k));
        let mut st = AlignmentState::new(pd(&simplex(&mut g, k)), 0.999).unwrap();
        st.running_mean = pd(&simplex(&mut g, k));
        let tau = g.random_range(0.0..=1.0);
        let aligned = g.random::<bool>();
        let ups = StrategyConfig::upsmatch(tau, f64::INFINITY).with_alignment(aligned);
        let fix = StrategyConfig::fixmatch(tau).with_alignment(aligned);
        let u = g.random_range(0.0..5.0);
        same += usize::from(make_label(&p, Some(u), &st, &ups).unwrap() == make_label(&p, None, &st, &fix).unwrap());
    }
    let model = Mlp::new(&[2, 8, 3], Activation::Relu, 0.0, &mut g).unwrap();
    let views: Vec<Vec<f64>> = (0..500).map(|_| vec![g.random_range(-3.0..3.0), g.random_range(-3.0..3.0)]).collect();
    let st = AlignmentState::from_labels(&[0, 1, 2], 3, 0.999).unwrap();
    let (ups, _) = build_pseudo_labels(&model, &views, &st, &StrategyConfig::upsmatch(0.6, f64::INFINITY), &mut stream(8, Stream::Uncertainty)).unwrap();
    let (fix, _) = build_pseudo_labels(&model, &views, &st, &StrategyConfig::fixmatch(0.6), &mut stream(8, Stream::Uncertainty)).unwrap();
    if same != 10_000 || ups != fix {
        failures.push("UPSMatch(kappa=inf) != FixMatch");
    }

    let detail = if failures.is_empty() {
        "alpha=0 == CE (10000 exact), alpha=1 loss 0, LSMatch inside Q (10000), UPSMatch(inf) == FixMatch (10000 + 500 via MC pipeline)".to_string()
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

const DETERMINISM_SPEC: &str = r#"
spec_version = 1
seeds = [0, 1, 2]

[task]
kind = "gauss_blobs"
classes = 3
dim = 2
separation = 2.0
labeled_per_class = 4
n_unlabeled = 400
n_test = 400

[train]
batch_size = 8
mu = 7
lambda_u = 1.0
eta = 0.03
momentum = 0.9
weight_decay = 5e-4
total_steps = 800
ema_decay = 0.99
sigma_w = 0.1
sigma_s = 0.5
mask_prob = 0.2
eval_every = 20
hidden = [16]
activation = "relu"

[[comparison]]
name = "cssl"
strategy = { kind = "cssl" }

[[comparison]]
name = "lsmatch"
strategy = { kind = "lsmatch" }

[[comparison]]
name = "fixmatch"
strategy = { kind = "fixmatch", tau = 0.95 }

[[comparison]]
name = "upsmatch"
strategy = { kind = "upsmatch", tau = 0.9, kappa = 0.1 }
"#;

fn collect_files(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, out);
        } else {
            out.push(path);
        }
    }
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, DETERMINISM_SPEC).unwrap();
    let mut roots = Vec::new();
    for (i, jobs) in ["1", "4"].iter().enumerate() {
        let out = dir.path().join(format!("out{i}"));
        for sub in ["run", "efficiency"] {
            let status = Command::new(env!("CARGO_BIN_EXE_cssl"))
                .args([sub, "--jobs", jobs, "--spec"])
                .arg(&spec)
                .arg("--out")
                .arg(&out)
                .output()
                .unwrap();
            assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        }
        roots.push(out);
    }
    let list = |root: &Path| {
        let mut v = Vec::new();
        collect_files(root, &mut v);
        let mut rel: Vec<_> = v.iter().map(|p| p.strip_prefix(root).unwrap().to_path_buf()).collect();
        rel.sort();
        rel
    };
    let (a, b) = (list(&roots[0]), list(&roots[1]));
    let csvs = a.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).count();
    let identical = a == b && a.iter().all(|p| std::fs::read(roots[0].join(p)).unwrap() == std::fs::read(roots[1].join(p)).unwrap());
    outcome(identical && csvs > 0, format!("{} files ({csvs} CSV) byte-identical across two runs (--jobs 1 vs 4): {identical}", a.len()))
}

fn criterion_10() -> Outcome {
    let c = (7.0 * std::f64::consts::PI / 16.0).cos();
    let mut ok = (c - 0.1951).abs() < 5e-5;
    for &eta in &[0.03, 0.5, 1.0] {
        for &k in &[1usize, 100, 1 << 20] {
            ok &= (cosine_lr(eta, 0, k).unwrap() - eta).abs() <= 1e-12;
            ok &= (cosine_lr(eta, k, k).unwrap() - eta * c).abs() <= 1e-12;
        }
    }
    outcome(ok, format!("cos(7pi/16) = {c:.6}; endpoints exact to 1e-12 for 3 eta x 3 K"))
}

fn run(n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (mut pass, mut detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("panicked: {}", e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())),
    };
    if let Some(limit) = limit {
        if elapsed > limit {
            pass = false;
            detail.push_str(&format!("; over the {:.0} s budget", limit.as_secs_f64()));
        }
    }
    println!("criterion {n:>2} {} {name}: {detail} [{:.2} s]", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    pass
}

fn main() {
    let secs = Duration::from_secs;
    let mut results = vec![
        run(1, "credal loss oracle", Some(secs(1)), criterion_1),
        run(2, "convexity & monotonicity", Some(secs(5)), criterion_2),
        run(3, "gradient checks", Some(secs(10)), criterion_3),
        run(4, "possibility equivalence", Some(secs(10)), criterion_4),
        run(5, "synthetic disambiguation", Some(secs(120)), criterion_5),
    ];
    let start = Instant::now();
    let report = catch_unwind(efficiency_report);
    let study = start.elapsed();
    match &report {
        Ok(r) => {
            results.push(run(6, "efficiency trend", None, || {
                let mut o = criterion_6(r);
                if study > secs(600) {
                    o.pass = false;
                }
                o.detail.push_str(&format!("; study took {:.1} s", study.as_secs_f64()));
                o
            }));
            results.push(run(7, "calibration direction", None, || criterion_7(r)));
        }
        Err(_) => {
            results.push(run(6, "efficiency trend", None, || outcome(false, "efficiency study failed")));
            results.push(run(7, "calibration direction", None, || outcome(false, "efficiency study failed")));
        }
    }
    results.push(run(8, "special-case reductions", Some(secs(5)), criterion_8));
    results.push(run(9, "determinism", None, criterion_9));
    results.push(run(10, "schedule check", None, criterion_10));
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
