use std::collections::BTreeSet;
use std::sync::Arc;

use fewshot_tsc::baselines::{dtw_1nn, euclidean_1nn};
use fewshot_tsc::data::synthetic::{generate_domain, Domain, SyntheticSpec};
use fewshot_tsc::data::{sample_task, verify_replay, znormalize, MetaSetSampler, TaskSource, TimeSeries, UcrDataset};
use fewshot_tsc::embedder::{ArchSpec, ResNetModel};
use fewshot_tsc::eval::{run_protocol, MethodRun, ProtocolConfig, Runner};
use fewshot_tsc::meta::meta_update;
use fewshot_tsc::numeric::{batchnorm_forward, conv1d_forward, gap_forward, Mode, ParamSet, RunningStats, Tensor};
use fewshot_tsc::seed::rng_from_seed;
use fewshot_tsc::triplet::{enumerate_valid_triplets, triplet_loss, TripletLossConfig};
use proptest::prelude::*;

fn dataset(seed: u64) -> Arc<UcrDataset> {
    let spec = SyntheticSpec {
        n_classes: 4,
        len: 16,
        train_per_class: 5,
        test_per_class: 7,
        noise: 0.3,
    };
    Arc::new(generate_domain(Domain::SquareDuty, &spec, seed).unwrap())
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0f64..4.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_is_linear(x in values(2 * 10), w in values(3 * 2 * 4), exp in -3i32..4) {
        let a = 2f64.powi(exp);
        let x = Tensor::from_vec(&[2, 10], x).unwrap();
        let w = Tensor::from_vec(&[3, 2, 4], w).unwrap();
        let ax = Tensor::from_vec(&[2, 10], x.data().iter().map(|v| a * v).collect()).unwrap();
        let aw = Tensor::from_vec(&[3, 2, 4], w.data().iter().map(|v| a * v).collect()).unwrap();
        let y = conv1d_forward(&x, &w, &[0.0; 3]).unwrap();
        let scaled: Vec<f64> = y.data().iter().map(|v| a * v).collect();
        prop_assert_eq!(conv1d_forward(&ax, &w, &[0.0; 3]).unwrap().into_data(), scaled.clone());
        prop_assert_eq!(conv1d_forward(&x, &aw, &[0.0; 3]).unwrap().into_data(), scaled);
    }

    #[test]
    fn batchnorm_affine_invariant(x in prop::collection::vec(-40.0f64..40.0, 3 * 12), a in 0.5f64..2.0, c in -3.0f64..3.0) {
        let batch: Vec<Tensor> = x.chunks(12).map(|r| Tensor::from_vec(&[3, 4], r.to_vec()).unwrap()).collect();
        let moved: Vec<Tensor> = batch
            .iter()
            .map(|t| Tensor::from_vec(&[3, 4], t.data().iter().map(|v| a * v + c).collect()).unwrap())
            .collect();
        let norm = |b: &[Tensor]| {
            let mut stats = RunningStats::new(3);
            batchnorm_forward(b, &[1.0; 3], &[0.0; 3], &mut stats, Mode::Train, 0).unwrap().0
        };
        // The variance stabilizer breaks exact invariance on low-variance channels.
        for ch in 0..3 {
            let v: Vec<f64> = x.chunks(12).flat_map(|r| r[ch * 4..ch * 4 + 4].to_vec()).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|u| (u - mean).powi(2)).sum::<f64>() / v.len() as f64;
            prop_assume!(var > 50.0);
        }
        for (p, q) in norm(&batch).iter().zip(norm(&moved).iter()) {
            for (u, v) in p.data().iter().zip(q.data()) {
                prop_assert!((u - v).abs() < 1e-6, "{} vs {}", u, v);
            }
        }
    }

    #[test]
    fn gap_permutation_invariant(x in prop::collection::vec(-50i32..50, 2 * 9), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let data: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let mut order: Vec<usize> = (0..9).collect();
        order.shuffle(&mut rng_from_seed(seed));
        let shuffled: Vec<f64> = (0..2).flat_map(|c| order.iter().map(move |&t| (c, t))).map(|(c, t)| data[c * 9 + t]).collect();
        let a = gap_forward(&Tensor::from_vec(&[2, 9], data).unwrap()).unwrap();
        let b = gap_forward(&Tensor::from_vec(&[2, 9], shuffled).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn triplet_loss_bounded(labels in prop::collection::vec(0usize..3, 3..12), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        let n = labels.len();
        let z = Tensor::from_vec(&[n, 3], (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let triplets = enumerate_valid_triplets(&labels);
        let cfg = TripletLossConfig::default();
        let loss = triplet_loss(&z, &triplets, &cfg).unwrap().loss;
        let mut max_d = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                max_d = max_d.max(z.row(i).iter().zip(z.row(j)).map(|(a, b)| (a - b) * (a - b)).sum());
            }
        }
        prop_assert!(loss >= 0.0);
        prop_assert!(loss <= triplets.len() as f64 * (cfg.alpha + max_d) + 1e-12);
    }

    #[test]
    fn meta_update_is_mean_delta(base in values(6), deltas in prop::collection::vec(values(6), 1..5), eps in 0.0f64..1.0) {
        let model = ResNetModel::build(ArchSpec::tiny(), &mut rng_from_seed(0)).unwrap();
        let layout = model.params().layout().clone();
        let n = layout.len();
        let widen = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| v[i % v.len()]).collect() };
        let phi = ParamSet::from_values(layout.clone(), widen(&base)).unwrap();
        let adapted: Vec<ParamSet> = deltas
            .iter()
            .map(|d| ParamSet::from_values(layout.clone(), phi.values().iter().zip(widen(d)).map(|(p, d)| p + d).collect()).unwrap())
            .collect();
        let got = meta_update(&phi, &adapted, eps).unwrap();
        for i in 0..n {
            let mean = adapted.iter().map(|a| a.values()[i] - phi.values()[i]).sum::<f64>() / adapted.len() as f64;
            prop_assert!((got.values()[i] - (phi.values()[i] + eps * mean)).abs() < 1e-12);
        }
    }

    #[test]
    fn tasks_disjoint_and_replayable(seed in any::<u64>(), k in 1usize..5, k_query in 1usize..7) {
        let ds = dataset(3);
        let task = sample_task(&ds, None, k, k_query, seed).unwrap();
        let train: BTreeSet<_> = task.train_indices.iter().collect();
        prop_assert!(task.test_indices.iter().all(|i| !train.contains(i)));
        verify_replay(&ds, &task.record()).unwrap();
    }

    #[test]
    fn normalization_idempotent(x in values(20)) {
        let once = znormalize(&x);
        let twice = znormalize(&once);
        prop_assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn ed_equals_zero_band_dtw(seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = rng_from_seed(seed);
        let train: Vec<TimeSeries> = (0..6)
            .map(|i| TimeSeries { values: (0..10).map(|_| rng.random_range(-1.0..1.0)).collect(), label: i % 3 })
            .collect();
        for _ in 0..5 {
            let q: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            prop_assert_eq!(euclidean_1nn(&train, &q).unwrap(), dtw_1nn(&train, &q, 0).unwrap());
        }
    }
}

#[test]
fn embedding_dim_independent_of_length() {
    let spec = ArchSpec {
        blocks: 2,
        convs_per_block: 1,
        filter_lengths: vec![3, 8],
        filters_per_length: 2,
    };
    let mut model = ResNetModel::build(spec.clone(), &mut rng_from_seed(1)).unwrap();
    model.forward_train(&[vec![0.3; 20], vec![-0.1; 20]]).unwrap();
    for len in [4, 5, 17, 64, 333, 512] {
        let x: Vec<f64> = (0..len).map(|i| (i as f64 * 0.1).sin()).collect();
        assert_eq!(model.embed(&x).unwrap().len(), spec.embedding_dim());
    }
}

#[test]
fn methods_share_task_fingerprints() {
    let datasets = vec![dataset(1), dataset(2)];
    let protocol = ProtocolConfig {
        k: 2,
        k_query: 3,
        tasks_per_dataset: 5,
        ..ProtocolConfig::default()
    };
    let ed = run_protocol(&datasets, &protocol, 9, &[MethodRun::new("ED", Runner::Ed)]).unwrap();
    let both = run_protocol(
        &datasets,
        &protocol,
        9,
        &[MethodRun::new("DTW", Runner::Dtw(Default::default())), MethodRun::new("ED", Runner::Ed)],
    )
    .unwrap();
    assert_eq!(ed.tasks, both.tasks);
    let ed_again: Vec<_> = both.results.iter().filter(|r| r.method == "ED").map(|r| r.accuracy).collect();
    assert_eq!(ed.results.iter().map(|r| r.accuracy).collect::<Vec<_>>(), ed_again);
}

#[test]
fn meta_tasks_stay_in_their_meta_set() {
    let train = vec![dataset(1), dataset(2)];
    let names: Vec<String> = vec!["train-a".into(), "train-b".into()];
    let renamed: Vec<Arc<UcrDataset>> = train
        .iter()
        .zip(&names)
        .map(|(d, n)| {
            let mut d = (**d).clone();
            d.name = n.clone();
            Arc::new(d)
        })
        .collect();
    let sampler = MetaSetSampler::new(renamed, 3, 4).unwrap();
    let mut seen = BTreeSet::new();
    for i in 0..50 {
        let t = sampler.task(i).unwrap();
        assert!(names.contains(&t.dataset));
        seen.insert(t.dataset);
    }
    assert_eq!(seen.len(), 2);
}
