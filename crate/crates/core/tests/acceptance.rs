//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use fewshot_tsc::baselines::{dtw_distance, squared_euclidean, window_steps, DtwConfig};
use fewshot_tsc::data::synthetic::{generate_domain, Domain, SyntheticSpec};
use fewshot_tsc::data::{
    parse_ucr_str, sample_task, sample_train_task, task_seed, FixedTasks, MetaSetSampler, ParseOptions, Provenance,
    TimeSeries, TrainSplit, TrainTask, UcrDataset,
};
use fewshot_tsc::embedder::{checkpoint, ArchSpec, ResNetModel};
use fewshot_tsc::eval::{
    aggregate, emit_report, evaluate_tasks, run_protocol, wtl_counts, MethodRun, ProtocolConfig, RankTable,
    ReportConfig, Runner, Wtl, WTL_TOLERANCE,
};
use fewshot_tsc::gradcheck;
use fewshot_tsc::meta::{
    fs1_train, inner_solve, iterations_for_task, meta_update, FineTuneConfig, InnerConfig, InnerOptimizer,
    MetaConfig, TrainHooks,
};
use fewshot_tsc::numeric::{orthogonal_init, Tensor};
use fewshot_tsc::seed::{derive_seed, rng_from_seed};
use fewshot_tsc::triplet::{enumerate_valid_triplets, triplet_loss, triplet_loss_grad, TripletLossConfig};
use rand::seq::index::sample;
use rand::Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradient_correctness),
        ("reptile degeneracy identity", reptile_identity),
        ("meta-update order independence", order_independence),
        ("triplet combinatorics", triplet_combinatorics),
        ("dtw oracle equivalence", dtw_oracle),
        ("synthetic meta-learning efficacy", synthetic_efficacy),
        ("k-formula fidelity", k_formula),
        ("statistics fixtures", statistics_fixtures),
        ("determinism", determinism),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name} ({detail}; {secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{:>2}] {name} ({detail}; {secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ts(values: Vec<f64>, label: usize) -> TimeSeries {
    TimeSeries { values, label }
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let spec = ArchSpec::tiny();
    ensure!(spec.blocks == 1 && spec.filter_lengths == [2, 3] && spec.filters_per_length == 2, "tiny spec changed");
    ensure!(gradcheck::DEFAULT_STEP == 1e-5, "finite-difference step is {}", gradcheck::DEFAULT_STEP);
    let mut worst_kernel = 0.0f64;
    let mut worst_e2e = 0.0f64;
    for seed in 0..3 {
        let r = gradcheck::run_all(&spec, seed).map_err(|e| e.to_string())?;
        worst_kernel = worst_kernel.max(r.max_kernel());
        worst_e2e = worst_e2e.max(r.end_to_end);
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(worst_kernel < 1e-5, "kernel error {worst_kernel:.2e}");
    ensure!(worst_e2e < 1e-4, "end-to-end error {worst_e2e:.2e}");
    ensure!(secs < 10.0, "took {secs:.1}s");
    Ok(format!("kernels {worst_kernel:.1e}, end-to-end {worst_e2e:.1e}"))
}

fn small_split(seed: u64, n_per_class: usize, len: usize) -> TrainSplit {
    let mut rng = rng_from_seed(seed);
    TrainSplit::new(
        (0..2 * n_per_class)
            .map(|i| {
                let label = i / n_per_class;
                ts((0..len).map(|t| (t as f64 * 0.4 * (label + 1) as f64).sin() + 0.3 * rng.random::<f64>()).collect(), label)
            })
            .collect(),
    )
}

fn reptile_identity() -> Outcome {
    let mut rng = rng_from_seed(1);
    let model = ResNetModel::build(ArchSpec::tiny(), &mut rng).map_err(|e| e.to_string())?;
    let split = small_split(2, 4, 12);
    let (lr, epsilon) = (0.01, 0.7);
    let inner = InnerConfig {
        batch_size: 10,
        lr,
        optimizer: InnerOptimizer::Sgd,
        triplet: TripletLossConfig::default(),
    };
    // With n <= b the single mini-batch is the whole split.
    let (adapted, _) = inner_solve(&model, &split, 1, &inner, 3, "identity").map_err(|e| e.to_string())?;
    let phi = model.params();
    let updated = meta_update(phi, &[adapted], epsilon).map_err(|e| e.to_string())?;

    let mut m = model.clone();
    let (z, cache) = m.forward_train(split.series()).map_err(|e| e.to_string())?;
    let triplets = enumerate_valid_triplets(&split.labels());
    let up = triplet_loss_grad(&z, &triplets, &inner.triplet).map_err(|e| e.to_string())?;
    let grad = m.backward_batch(&cache, &up).map_err(|e| e.to_string())?;
    let worst = phi
        .values()
        .iter()
        .zip(grad.values())
        .zip(updated.values())
        .map(|((p, g), u)| (p - epsilon * lr * g - u).abs())
        .fold(0.0, f64::max);
    ensure!(grad.values().iter().any(|g| g.abs() > 1e-8), "gradient vanished; identity is vacuous");
    ensure!(worst < 1e-12, "max deviation {worst:.2e}");
    Ok(format!("max deviation {worst:.1e}"))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn synthetic(domain: Domain, seed: u64, n_classes: usize, len: usize) -> Arc<UcrDataset> {
    let spec = SyntheticSpec {
        n_classes,
        len,
        train_per_class: 6,
        test_per_class: 6,
        noise: 0.3,
    };
    Arc::new(generate_domain(domain, &spec, seed).expect("synthetic domain"))
}

fn train_tasks(ds: &UcrDataset, n: usize, k: usize) -> Vec<TrainTask> {
    (0..n as u64)
        .map(|i| sample_train_task(ds, None, k, derive_seed(99, "order", i)).expect("train task"))
        .collect()
}

fn order_independence() -> Outcome {
    let ds = synthetic(Domain::SineFrequency, 4, 3, 16);
    let mut rng = rng_from_seed(5);
    let model = ResNetModel::build(ArchSpec::tiny(), &mut rng).map_err(|e| e.to_string())?;
    let cfg = MetaConfig {
        meta_iterations: 2,
        meta_batch: 5,
        k_train: 3,
        inner_lr: 1e-3,
        validation_every: 0,
        ..MetaConfig::default()
    };
    let tasks = train_tasks(&ds, 10, 3);

    let adapted: Vec<_> = tasks[..5]
        .iter()
        .map(|t| inner_solve(&model, &t.train, 3, &cfg.inner(), t.seed, "p").map(|(p, _)| p))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let reference = meta_update(model.params(), &adapted, 0.5).map_err(|e| e.to_string())?;
    let perms = permutations(5);
    for p in &perms {
        let shuffled: Vec<_> = p.iter().map(|&i| adapted[i].clone()).collect();
        let u = meta_update(model.params(), &shuffled, 0.5).map_err(|e| e.to_string())?;
        ensure!(u.values() == reference.values(), "permutation {p:?} changed the update");
    }

    let run = |tasks: Vec<TrainTask>, parallel: bool| -> Result<Vec<u8>, String> {
        let cfg = MetaConfig { parallel, ..cfg.clone() };
        let out = fs1_train(&model, &cfg, &FixedTasks(tasks), TrainHooks::default()).map_err(|e| e.to_string())?;
        Ok(checkpoint::encode(&out.model))
    };
    let base = run(tasks.clone(), false)?;
    let mut permuted = tasks.clone();
    permuted[..5].reverse();
    permuted[5..].rotate_left(2);
    ensure!(run(tasks.clone(), true)? == base, "parallel inner solves changed the result");
    ensure!(run(permuted.clone(), false)? == base, "task order within a meta-batch changed the result");
    ensure!(run(permuted, true)? == base, "permuted parallel run changed the result");
    Ok(format!("{} delta orders, serial/parallel training bitwise equal", perms.len()))
}

fn triplet_combinatorics() -> Outcome {
    let mut rng = rng_from_seed(6);
    let cfg = TripletLossConfig::default();
    let mut worst_rot = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..25);
        let classes = rng.random_range(1..6);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let counts: Vec<usize> = (0..classes).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
        let expected: usize = counts.iter().map(|&c| c * c.saturating_sub(1) * (n - c)).sum();
        let triplets = enumerate_valid_triplets(&labels);
        ensure!(triplets.len() == expected, "labels {labels:?}: {} triplets, expected {expected}", triplets.len());

        let dim = rng.random_range(2..7);
        let z = Tensor::from_vec(&[n, dim], (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let loss = triplet_loss(&z, &triplets, &cfg).unwrap().loss;
        ensure!(loss >= 0.0, "negative loss {loss}");

        let q = orthogonal_init(&[dim, dim], &mut rng);
        let mut rotated = Tensor::zeros(&[n, dim]);
        for i in 0..n {
            for r in 0..dim {
                rotated.row_mut(i)[r] = (0..dim).map(|c| q.data()[r * dim + c] * z.row(i)[c]).sum();
            }
        }
        let rot_loss = triplet_loss(&rotated, &triplets, &cfg).unwrap().loss;
        worst_rot = worst_rot.max((rot_loss - loss).abs());
    }
    ensure!(worst_rot < 1e-9, "rotation changed the loss by {worst_rot:.2e}");
    Ok(format!("200 label vectors, rotation drift {worst_rot:.1e}"))
}

/// Unbanded dynamic program over the full cost matrix.
fn dtw_full(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len(), y.len());
    let mut d = vec![vec![f64::INFINITY; m + 1]; n + 1];
    d[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let c = (x[i - 1] - y[j - 1]) * (x[i - 1] - y[j - 1]);
            d[i][j] = c + d[i - 1][j - 1].min(d[i - 1][j]).min(d[i][j - 1]);
        }
    }
    d[n][m]
}

fn dtw_oracle() -> Outcome {
    let mut rng = rng_from_seed(8);
    let grid = DtwConfig::default().grid;
    let mut worst_sym = 0.0f64;
    for _ in 0..500 {
        let t = rng.random_range(1..=32);
        let x: Vec<f64> = (0..t).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..t).map(|_| rng.random_range(-3.0..3.0)).collect();
        let full = dtw_full(&x, &y);
        for w in [t, t + 3] {
            ensure!(dtw_distance(&x, &y, w).unwrap() == full, "banded w={w} differs from the full DP at T={t}");
        }
        ensure!(dtw_distance(&x, &y, 0).unwrap() == squared_euclidean(&x, &y).unwrap(), "w=0 differs from ED at T={t}");
        for w in [0, 1, t / 4, t / 2, t] {
            worst_sym = worst_sym.max((dtw_distance(&x, &y, w).unwrap() - dtw_distance(&y, &x, w).unwrap()).abs());
        }
        let mut last = f64::INFINITY;
        for &f in &grid {
            let d = dtw_distance(&x, &y, window_steps(f, t)).unwrap();
            ensure!(d <= last, "distance grew from {last} to {d} at fraction {f}");
            last = d;
        }
        let ragged: Vec<f64> = (0..rng.random_range(1..=32)).map(|_| rng.random_range(-3.0..3.0)).collect();
        ensure!(dtw_distance(&x, &ragged, 32).unwrap() == dtw_full(&x, &ragged), "unequal lengths differ");
    }
    ensure!(worst_sym < 1e-12, "asymmetry {worst_sym:.2e}");
    Ok(format!("500 pairs exact, asymmetry {worst_sym:.1e}"))
}

/// Held-out-domain 4-way tasks: 4 of the domain's 8 classes per task.
fn held_out_task(ds: &UcrDataset, run_seed: u64, index: usize) -> fewshot_tsc::Result<fewshot_tsc::data::FewShotTask> {
    let seed = task_seed(run_seed, &ds.name, index as u64);
    let mut rng = rng_from_seed(derive_seed(seed, "classes", 0));
    let mut classes = sample(&mut rng, ds.n_classes(), 4).into_vec();
    classes.sort_unstable();
    sample_task(ds, Some(&classes), 5, 5, seed)
}

fn synthetic_efficacy() -> Outcome {
    const SEED: u64 = 7;
    let data = SyntheticSpec::default();
    ensure!(data.n_classes == 8 && data.len == 64, "synthetic spec changed");
    let domains: Vec<Arc<UcrDataset>> = Domain::ALL
        .iter()
        .map(|&d| Arc::new(generate_domain(d, &data, derive_seed(SEED, d.name(), 0)).expect("domain")))
        .collect();
    let held_out = domains[0].clone();
    let train: Vec<_> = domains[1..].to_vec();

    let spec = ArchSpec {
        blocks: 2,
        convs_per_block: 2,
        filter_lengths: vec![2, 3],
        filters_per_length: 4,
    };
    let lr = 1e-3;
    let meta = MetaConfig {
        meta_iterations: 200,
        meta_batch: 5,
        k_train: 10,
        inner_lr: lr,
        seed: SEED,
        validation_every: 0,
        ..MetaConfig::default()
    };
    let source = MetaSetSampler::new(train, meta.k_train, derive_seed(SEED, "meta-train", 0)).map_err(|e| e.to_string())?;
    let init = ResNetModel::build(spec.clone(), &mut rng_from_seed(derive_seed(SEED, "init", 0))).map_err(|e| e.to_string())?;
    let trained = fs1_train(&init, &meta, &source, TrainHooks::default()).map_err(|e| e.to_string())?;

    let finetune = FineTuneConfig {
        epochs: 16,
        inner_lr: lr,
        ..FineTuneConfig::default()
    };
    let methods = [
        MethodRun::new(
            "FS-1",
            Runner::Meta {
                model: trained.model,
                finetune: finetune.clone(),
            },
        ),
        MethodRun::new("ResNet", Runner::Scratch { spec, finetune }),
    ];
    let out = evaluate_tasks(50, |i| held_out_task(&held_out, SEED, i), &methods).map_err(|e| e.to_string())?;
    let mean = |m: &str| {
        let accs: Vec<f64> = out.results.iter().filter(|r| r.method == m).map(|r| r.accuracy).collect();
        accs.iter().sum::<f64>() / accs.len() as f64
    };
    let (fs1, scratch) = (mean("FS-1"), mean("ResNet"));
    let detail = format!("held-out {}: FS-1 {fs1:.3}, scratch {scratch:.3}, chance 0.250", held_out.name);
    ensure!(fs1 - scratch >= 0.05, "{detail}; margin over scratch {:.1} points < 5", 100.0 * (fs1 - scratch));
    ensure!(fs1 - 0.25 >= 0.20, "{detail}; margin over chance < 20 points");
    Ok(detail)
}

fn k_formula() -> Outcome {
    let (b, e) = (10, 4);
    let mut clamped = 0;
    for k in [2, 5, 10, 20] {
        for n in 2..=50 {
            let got = iterations_for_task(k, n, b, e);
            let exact = (k * n / b) * e;
            if k * n >= b {
                ensure!(got == exact, "K={k} N={n}: {got} != {exact}");
            } else {
                clamped += 1;
                ensure!(got == e, "K={k} N={n}: clamp gave {got}, expected {e}");
            }
        }
    }
    Ok(format!("196 pairs, clamp engaged on {clamped}"))
}

fn statistics_fixtures() -> Outcome {
    let text = include_str!("fixtures/ucr41_5shot_means.csv");
    let t = RankTable::from_csv(text, &["n_classes"]).map_err(|e| e.to_string())?;
    let want = [("ED", 4.537), ("DTW", 3.463), ("BOSS", 3.890), ("ResNet", 3.305), ("FS-2", 3.244), ("FS-1", 2.561)];
    let mut worst = 0.0f64;
    for (name, rank) in want {
        let got = t.mean_ranks[t.method_index(name).ok_or(format!("no column {name}"))?];
        worst = worst.max((got - rank).abs());
    }
    ensure!(worst < 0.01, "mean rank off by {worst:.4}");
    let fs1 = t.column(t.method_index("FS-1").unwrap());
    let ed = t.column(t.method_index("ED").unwrap());
    let w = wtl_counts(&fs1, &ed, WTL_TOLERANCE).map_err(|e| e.to_string())?;
    ensure!(w == Wtl { wins: 32, ties: 0, losses: 9 }, "FS-1 vs ED {w:?}");
    Ok(format!("max rank error {worst:.4}, FS-1 vs ED 32/0/9"))
}

/// Meta-training files, evaluation task log and report of one small run.
fn pipeline_artifacts(dir: &std::path::Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let train = vec![synthetic(Domain::SquareDuty, 1, 3, 16), synthetic(Domain::ArCoefficient, 2, 3, 16)];
    let test = vec![synthetic(Domain::SineFrequency, 3, 3, 16)];
    let meta = MetaConfig {
        meta_iterations: 4,
        meta_batch: 2,
        k_train: 3,
        inner_lr: 1e-3,
        validation_every: 2,
        validation_tasks: 2,
        checkpoint_every: 2,
        ..MetaConfig::default()
    };
    let source = MetaSetSampler::new(train.clone(), 3, 21).map_err(|e| e.to_string())?;
    let validation = MetaSetSampler::new(test.clone(), 3, 22).map_err(|e| e.to_string())?;
    let init = ResNetModel::build(ArchSpec::tiny(), &mut rng_from_seed(23)).map_err(|e| e.to_string())?;
    let train_dir = dir.join("train");
    let hooks = TrainHooks {
        validation: Some(&validation),
        output_dir: Some(&train_dir),
        on_iteration: None,
    };
    let outcome = fs1_train(&init, &meta, &source, hooks).map_err(|e| e.to_string())?;

    let protocol = ProtocolConfig {
        k: 2,
        k_query: 3,
        tasks_per_dataset: 4,
        ..ProtocolConfig::default()
    };
    let finetune = FineTuneConfig {
        epochs: 2,
        inner_lr: 1e-3,
        ..FineTuneConfig::default()
    };
    let methods = [
        MethodRun::new("FS-1", Runner::Meta { model: outcome.model, finetune }),
        MethodRun::new("ED", Runner::Ed),
        MethodRun::new("DTW", Runner::Dtw(DtwConfig { grid: vec![0.1, 0.5, 1.0] })),
    ];
    let out = run_protocol(&test, &protocol, 24, &methods).map_err(|e| e.to_string())?;
    let report_dir = dir.join("report");
    let table = aggregate(&out.results).map_err(|e| e.to_string())?;
    emit_report(&table, &report_dir, &ReportConfig::default(), Some(24)).map_err(|e| e.to_string())?;
    std::fs::write(dir.join("eval_tasks.jsonl"), fewshot_tsc::jsonl::to_jsonl(&out.tasks)).unwrap();

    let mut files = Vec::new();
    for sub in ["train", "report", "."] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .collect();
        names.sort();
        for p in names {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            // The run log carries wall-clock times; the selection file names its own directory.
            if name == "run_log.jsonl" || name == "selection.json" {
                continue;
            }
            files.push((format!("{sub}/{name}"), std::fs::read(&p).unwrap()));
        }
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline_artifacts(a.path())?;
    let second = pipeline_artifacts(b.path())?;
    ensure!(first.len() == second.len(), "different file sets");
    for ((na, da), (nb, db)) in first.iter().zip(&second) {
        ensure!(na == nb, "file sets differ: {na} vs {nb}");
        ensure!(da == db, "{na} differs between runs");
    }
    let ckpts = first.iter().filter(|(n, _)| n.ends_with(".ckpt")).count();
    ensure!(ckpts >= 3, "expected periodic, best and final checkpoints, found {ckpts}");
    Ok(format!("{} artifacts bitwise equal", first.len()))
}

fn format_round_trips() -> Outcome {
    let mut rng = rng_from_seed(9);
    let mut model = ResNetModel::build(ArchSpec::default(), &mut rng).map_err(|e| e.to_string())?;
    model.forward_train(&[vec![0.5; 32], vec![-1.0; 32], (0..32).map(|i| i as f64).collect()]).unwrap();
    let bytes = checkpoint::encode(&model);
    let decoded = checkpoint::decode(&bytes).map_err(|e| e.to_string())?;
    ensure!(checkpoint::encode(&decoded) == bytes, "re-encoding changed the bytes");
    ensure!(decoded.params().values() == model.params().values(), "parameters changed");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&model, &path).map_err(|e| e.to_string())?;
    let loaded = checkpoint::load(&path).map_err(|e| e.to_string())?;
    ensure!(checkpoint::encode(&loaded) == bytes, "file round trip changed the bytes");

    let opts = ParseOptions::default();
    let parse = |text: &str| parse_ucr_str(text, "fixture", Provenance::OriginalTrain, &opts);
    let comma = parse(include_str!("fixtures/ucr50.csv")).map_err(|e| e.to_string())?;
    let tab = parse(include_str!("fixtures/ucr50.tsv")).map_err(|e| e.to_string())?;
    let space = parse(include_str!("fixtures/ucr50.txt")).map_err(|e| e.to_string())?;
    ensure!(comma.len() == 50, "{} rows", comma.len());
    ensure!(comma == tab && comma == space, "delimiters disagree");
    Ok(format!("{} checkpoint bytes, 50-row fixture x3 delimiters", bytes.len()))
}
