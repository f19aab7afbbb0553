use seawater_cascade::dataio::Feature;
use seawater_cascade::eval::{average_runs, limit_sweep, majority_baseline, single_model_runs};
use seawater_cascade::stats::{median, spearman};
use seawater_cascade::{generate_dataset, ForestParams, SplitSpec, SynthConfig};

fn set1() -> (seawater_cascade::Dataset, seawater_cascade::Dataset) {
    let d = generate_dataset(&SynthConfig::default()).unwrap();
    SplitSpec::set1().apply(&d).unwrap()
}

#[test]
fn tp_rate_falls_as_the_limit_rises() {
    let (train, test) = set1();
    let curve = limit_sweep(
        &train,
        &test,
        &[10.0, 50.0, 150.0],
        &Feature::BASE,
        &ForestParams::single_model(),
        5,
        1,
    )
    .unwrap();
    let tp: Vec<f64> = curve.points.iter().map(|p| p.tp_rate.unwrap()).collect();
    assert!(spearman(&curve.limits(), &tp).unwrap() < 0.0, "{tp:?}");
}

#[test]
fn median_limit_balances_accuracy_and_tp_rate() {
    let (train, test) = set1();
    let limit = median(&train.ecoli_values()).unwrap();
    let runs = single_model_runs(
        &train,
        &test,
        limit,
        &Feature::BASE,
        &ForestParams::single_model(),
        20,
        2,
    )
    .unwrap();
    let r = average_runs(&runs).unwrap();
    let tp = r.tp_rate.unwrap().mean;
    assert!(
        (r.accuracy.mean - tp).abs() <= 0.15,
        "accuracy {} tp {tp}",
        r.accuracy.mean
    );
}

#[test]
fn model_is_not_worse_than_majority_guess() {
    let (train, test) = set1();
    for limit in [15.0, 150.0, 250.0] {
        let runs = single_model_runs(
            &train,
            &test,
            limit,
            &Feature::BASE,
            &ForestParams::single_model(),
            20,
            3,
        )
        .unwrap();
        let r = average_runs(&runs).unwrap();
        let base = majority_baseline(&train, &test, limit);
        assert!(
            r.accuracy.mean >= base - 0.05,
            "limit {limit}: {} vs {base}",
            r.accuracy.mean
        );
        assert!(r.accuracy.std.is_finite());
        let again = average_runs(
            &single_model_runs(
                &train,
                &test,
                limit,
                &Feature::BASE,
                &ForestParams::single_model(),
                20,
                3,
            )
            .unwrap(),
        )
        .unwrap();
        assert_eq!(again, r);
    }
}
