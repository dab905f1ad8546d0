use fewshot_tsc::eval::{
    aggregate, cliques, friedman_statistic, nemenyi_cd, rank_descending, wtl_counts, RankTable, TaskResult, Wtl,
    WTL_TOLERANCE,
};
use proptest::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

const FIXTURE: &str = include_str!("fixtures/ucr41_5shot_means.csv");

fn fixture() -> RankTable {
    RankTable::from_csv(FIXTURE, &["n_classes"]).unwrap()
}

#[test]
fn fixture_mean_ranks() {
    let t = fixture();
    assert_eq!(t.datasets.len(), 41);
    let want = [("ED", 4.537), ("DTW", 3.463), ("BOSS", 3.890), ("ResNet", 3.305), ("FS-2", 3.244), ("FS-1", 2.561)];
    for (name, rank) in want {
        let got = t.mean_ranks[t.method_index(name).unwrap()];
        assert!((got - rank).abs() < 0.01, "{name}: {got} vs {rank}");
    }
}

#[test]
fn fixture_wtl() {
    let t = fixture();
    let fs1 = t.column(t.method_index("FS-1").unwrap());
    let ed = t.column(t.method_index("ED").unwrap());
    assert_eq!(wtl_counts(&fs1, &ed, WTL_TOLERANCE).unwrap(), Wtl { wins: 32, ties: 0, losses: 9 });
}

#[test]
fn fixture_through_aggregate() {
    // Feeding the means as single-task records must give the same table.
    let t = fixture();
    let mut records = Vec::new();
    for (d, row) in t.accuracy.iter().enumerate() {
        for (m, &a) in row.iter().enumerate() {
            records.push(TaskResult {
                dataset: t.datasets[d].clone(),
                task_index: 0,
                method: t.methods[m].clone(),
                accuracy: a,
                correct: 0,
                total: 0,
                wall_time_s: 0.0,
            });
        }
    }
    assert_eq!(aggregate(&records).unwrap(), t);
}

/// `P(range of k standard normals <= q)` by Simpson quadrature.
fn range_cdf(q: f64, k: usize) -> f64 {
    let n = Normal::standard();
    let (lo, hi, steps) = (-9.0, 9.0, 6000);
    let h = (hi - lo) / steps as f64;
    let f = |x: f64| k as f64 * n.pdf(x) * (n.cdf(x + q) - n.cdf(x)).powi(k as i32 - 1);
    let mut sum = f(lo) + f(hi);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + i as f64 * h);
    }
    sum * h / 3.0
}

#[test]
fn critical_values_match_studentized_range() {
    for alpha in [0.05, 0.10] {
        for k in 2..=10 {
            // CD with n chosen so the square-root factor is 1.
            let scale = (k * (k + 1)) as f64 / 6.0;
            let q = nemenyi_cd(k, 1, alpha).unwrap() / scale.sqrt();
            let p = range_cdf(q * 2f64.sqrt(), k);
            assert!((p - (1.0 - alpha)).abs() < 1e-3, "k={k} alpha={alpha}: coverage {p}");
        }
    }
}

#[test]
fn cd_shrinks_with_more_datasets() {
    let mut last = f64::INFINITY;
    for n in [2, 5, 41, 100, 1000] {
        let cd = nemenyi_cd(6, n, 0.05).unwrap();
        assert!(cd < last);
        last = cd;
    }
}

#[test]
fn fixture_cliques_are_within_cd() {
    let t = fixture();
    let cd = nemenyi_cd(t.methods.len(), t.datasets.len(), 0.05).unwrap();
    for g in cliques(&t.mean_ranks, cd) {
        let ranks: Vec<f64> = g.iter().map(|&m| t.mean_ranks[m]).collect();
        let spread = ranks.iter().cloned().fold(f64::MIN, f64::max) - ranks.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= cd);
    }
}

fn table_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..7, 2usize..12).prop_flat_map(|(k, n)| {
        // Accuracies on a coarse grid so ties are common.
        prop::collection::vec(prop::collection::vec((0u32..8).prop_map(|v| v as f64 / 8.0), k), n)
    })
}

fn table(acc: Vec<Vec<f64>>) -> RankTable {
    let k = acc[0].len();
    RankTable::new(
        (0..acc.len()).map(|i| format!("d{i}")).collect(),
        (0..k).map(|i| format!("m{i}")).collect(),
        acc,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn ranks_sum_exactly(row in prop::collection::vec((0u32..5).prop_map(|v| v as f64 / 4.0), 1..12)) {
        let k = row.len() as f64;
        prop_assert_eq!(rank_descending(&row).iter().sum::<f64>(), k * (k + 1.0) / 2.0);
    }

    #[test]
    fn friedman_zero_iff_equal_mean_ranks(acc in table_strategy()) {
        let t = table(acc);
        let f = friedman_statistic(&t).unwrap();
        let equal = t.mean_ranks.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12);
        prop_assert_eq!(f.statistic.abs() < 1e-9, equal);
    }

    #[test]
    fn friedman_relabel_invariant(acc in table_strategy(), shift in 0usize..6) {
        let k = acc[0].len();
        let rotated: Vec<Vec<f64>> = acc.iter().map(|r| (0..k).map(|m| r[(m + shift) % k]).collect()).collect();
        let a = friedman_statistic(&table(acc)).unwrap().statistic;
        let b = friedman_statistic(&table(rotated)).unwrap().statistic;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn wtl_mirrors(acc in table_strategy()) {
        let t = table(acc);
        let (a, b) = (t.column(0), t.column(1));
        let ab = wtl_counts(&a, &b, WTL_TOLERANCE).unwrap();
        let ba = wtl_counts(&b, &a, WTL_TOLERANCE).unwrap();
        prop_assert_eq!(ab.wins + ab.ties + ab.losses, t.datasets.len());
        prop_assert_eq!((ab.wins, ab.ties, ab.losses), (ba.losses, ba.ties, ba.wins));
    }
}
