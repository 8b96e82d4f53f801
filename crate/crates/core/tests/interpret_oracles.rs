use mvlstm::data::{prepare, DataConfig, RawSeries, Split, Window};
use mvlstm::init::seeded;
use mvlstm::interpret::{
    bin_index, collect_attention, histograms, importance, importance_report, mae, mean_baseline, persistence_baseline,
    ranking, rmse, AttentionKind,
};
use mvlstm::trainer::pool;
use mvlstm::{Dims, Model, Tensor, VariantKind};
use proptest::prelude::*;
use rand::Rng;

fn dataset(rows: usize, seed: u64) -> mvlstm::data::Dataset {
    let mut rng = seeded(seed);
    let names = ["a", "b", "c", "y"].iter().map(|s| s.to_string()).collect();
    let values = Tensor::from_fn(&[rows, 4], |_| rng.random_range(-3.0..3.0));
    prepare(&RawSeries::new(names, values).unwrap(), &DataConfig::new("y", 4)).unwrap()
}

fn mixture_model(seed: u64) -> Model {
    Model::init(VariantKind::MvLstm, Dims::new(4, 3), &mut seeded(seed))
}

#[test]
fn zero_variable_weights_give_uniform_priors() {
    let ds = dataset(200, 1);
    let mut model = mixture_model(2);
    if let Model::MvLstm { head, .. } = &mut model {
        head.wv = Tensor::zeros(head.wv.shape());
    }
    let records = collect_attention(&model, &ds.windows(Split::Test), &pool(1).unwrap()).unwrap();
    for r in &records {
        for p in &r.prior {
            assert!((p - 0.25).abs() <= 1e-15);
        }
    }
}

#[test]
fn component_at_the_target_gains_posterior_mass() {
    let ds = dataset(200, 3);
    let mut rng = seeded(4);
    for w in ds.windows(Split::Valid) {
        let mut model = mixture_model(5);
        let k = rng.random_range(0..4);
        if let Model::MvLstm { head, .. } = &mut model {
            head.wo = Tensor::zeros(head.wo.shape());
            for (v, b) in head.bo.data_mut().iter_mut().enumerate() {
                *b = if v == k {
                    w.target
                } else {
                    w.target + rng.random_range(0.5..3.0)
                };
            }
        }
        let out = model.mixture_output(&w.inputs, w.target).unwrap().unwrap();
        assert!(out.posterior.data()[k] > out.prior.data()[k]);
    }
}

#[test]
fn two_sequence_importance_by_hand() {
    let imp = importance(&[vec![0.2, 0.8], vec![0.6, 0.4]]).unwrap();
    assert!((imp[0] - 0.4).abs() <= 1e-15 && (imp[1] - 0.6).abs() <= 1e-15);
    assert!(importance(&[]).is_err());
    assert!(importance(&[vec![1.0], vec![0.5, 0.5]]).is_err());
}

fn simplex(raw: &[f64]) -> Vec<f64> {
    let z: f64 = raw.iter().sum();
    raw.iter().map(|v| v / z).collect()
}

proptest! {
    #[test]
    fn importance_matches_normalized_double_sum(
        raw in prop::collection::vec(prop::collection::vec(0.01..1.0f64, 5), 1..40),
    ) {
        let posts: Vec<Vec<f64>> = raw.iter().map(|r| simplex(r)).collect();
        let imp = importance(&posts).unwrap();
        let total: f64 = posts.iter().flatten().sum();
        for (n, got) in imp.iter().enumerate() {
            let want = posts.iter().map(|p| p[n]).sum::<f64>() / total;
            prop_assert!((got - want).abs() <= 1e-12);
        }
        prop_assert!((imp.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn rmse_dominates_mae(pairs in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..50)) {
        let (y, yhat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (r, a) = (rmse(&y, &yhat).unwrap(), mae(&y, &yhat).unwrap());
        prop_assert!(r >= a * (1.0 - 1e-12));
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn bins_cover_the_unit_interval(value in 0.0..=1.0f64, bins in 2..50usize) {
        let k = bin_index(value, bins);
        prop_assert!(k < bins);
        let (lo, hi) = (k as f64 / bins as f64, (k + 1) as f64 / bins as f64);
        prop_assert!(value >= lo - 1e-15 && (value < hi || k == bins - 1));
    }
}

#[test]
fn bin_edges() {
    assert_eq!(bin_index(0.0, 10), 0);
    assert_eq!(bin_index(1.0, 10), 9);
    assert_eq!(bin_index(0.5, 2), 1);
}

#[test]
fn ranking_orders_by_score_with_stable_ties() {
    assert_eq!(ranking(&[0.1, 0.4, 0.4, 0.1]), [1, 2, 0, 3]);
}

#[test]
fn histogram_counts_sum_to_sequence_count() {
    let ds = dataset(300, 6);
    let model = mixture_model(7);
    let windows = ds.windows(Split::All);
    let records = collect_attention(&model, &windows, &pool(1).unwrap()).unwrap();
    let hists = histograms(&records, &ds.names, 7).unwrap();
    assert_eq!(hists.len(), 8);
    for h in &hists {
        assert_eq!(h.counts.iter().sum::<usize>(), windows.len());
        assert_eq!(h.edges.len(), 8);
    }
    assert_eq!(hists[1].kind, AttentionKind::Posterior);
    assert!(histograms(&records, &ds.names, 1).is_err());
}

#[test]
fn report_importance_sums_to_one() {
    let ds = dataset(300, 8);
    for (seed, kind) in [(9, VariantKind::MvLstm), (10, VariantKind::MvIndep)] {
        let model = Model::init(kind, Dims::new(4, 2), &mut seeded(seed));
        let report = importance_report(&model, &ds, Split::Test, 10, "x".into(), &pool(1).unwrap()).unwrap();
        assert!((report.importance.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert_eq!(report.n_sequences, ds.test.len());
        assert_eq!(report.ranking.len(), 4);
    }
}

#[test]
fn point_forecasters_have_no_attention() {
    let ds = dataset(200, 11);
    for kind in [VariantKind::MvFusion, VariantKind::Vanilla] {
        let model = Model::init(kind, Dims::new(4, 2), &mut seeded(12));
        assert!(collect_attention(&model, &ds.windows(Split::Test), &pool(1).unwrap()).is_err());
    }
}

#[test]
fn baselines_by_hand() {
    let ds = dataset(200, 13);
    let windows: Vec<&Window> = ds.windows(Split::Test);
    let raw = |z: f64| ds.denormalize_target(z);
    let y: Vec<f64> = windows.iter().map(|w| raw(w.target)).collect();
    let last: Vec<f64> = windows.iter().map(|w| raw(*w.inputs.data().last().unwrap())).collect();
    let mean = ds.normalizer.mean[3];
    let want_mean = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    let want_last = (y.iter().zip(&last).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    assert!((mean_baseline(&ds, Split::Test).unwrap().rmse - want_mean).abs() <= 1e-12);
    assert!((persistence_baseline(&ds, Split::Test).unwrap().rmse - want_last).abs() <= 1e-12);
}
