use ndarray::Array2;
use proptest::prelude::*;
use shiftex::data::{preprocess, Feature, FeatureKind, FeatureSchema, RawColumn, RawTable, Role};
use shiftex::metrics::{perturb, PerturbationSpec};
use shiftex::LabeledDataset;

fn dataset(features: Vec<Feature>, columns: Vec<RawColumn>) -> LabeledDataset {
    let schema = FeatureSchema::new(features).unwrap();
    let t = RawTable {
        schema,
        role: Role::Source,
        columns,
    };
    preprocess(&t, &t).unwrap().0
}

fn one_feature(spec: &PerturbationSpec, ds: &LabeledDataset) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let p = perturb(ds, &PerturbationSpec { feature_count: Some(1), ..*spec }).unwrap();
    let rows = p.touched[0].rows.clone();
    (ds.raw_feature(0), p.dataset.raw_feature(0), rows)
}

#[test]
fn boolean_with_two_hundred_true_flips_two() {
    // 200 True and 100 False: either side yields max(1, round(0.01 n)) flips
    let values: Vec<f64> = (0..300).map(|i| if i < 200 { 1.0 } else { 0.0 }).collect();
    let ds = dataset(vec![Feature::new("flag", FeatureKind::Boolean)], vec![RawColumn::Numeric(values)]);
    let mut saw_true_side = false;
    for seed in 0..20 {
        let (before, after, rows) = one_feature(&PerturbationSpec { seed, ..Default::default() }, &ds);
        let changed: Vec<usize> = (0..300).filter(|&i| before[i] != after[i]).collect();
        assert_eq!(changed, rows);
        let from_true = before[rows[0]] == 1.0;
        assert!(rows.iter().all(|&i| (before[i] == 1.0) == from_true), "one side per feature");
        if from_true {
            saw_true_side = true;
            assert_eq!(rows.len(), 2);
        } else {
            assert_eq!(rows.len(), 1);
        }
    }
    assert!(saw_true_side);
}

#[test]
fn real_feature_moves_by_a_twentieth_of_its_stdev() {
    // population stdev of +-10 alternating values is exactly 10
    let values: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 10.0 } else { -10.0 }).collect();
    let ds = dataset(vec![Feature::new("v", FeatureKind::Real)], vec![RawColumn::Numeric(values)]);
    let (before, after, rows) = one_feature(&PerturbationSpec::default(), &ds);
    assert_eq!(rows.len(), 1);
    for i in 0..100 {
        let d = after[i] - before[i];
        if rows.contains(&i) {
            assert!((d.abs() - 0.5).abs() < 1e-9, "{d}");
        } else {
            assert_eq!(d, 0.0);
        }
    }
}

#[test]
fn small_feature_still_gets_one_cell() {
    let values: Vec<f64> = (0..50).map(|i| i as f64).collect();
    let ds = dataset(vec![Feature::new("n", FeatureKind::Integer)], vec![RawColumn::Numeric(values)]);
    let (before, after, rows) = one_feature(&PerturbationSpec::default(), &ds);
    assert_eq!(rows.len(), 1);
    assert_eq!((after[rows[0]] - before[rows[0]]).abs().round(), 1.0);
}

#[test]
fn categorical_steps_to_a_neighbouring_level() {
    let ds = dataset(
        vec![Feature::categorical("c", ["a", "b", "c"])],
        vec![RawColumn::Categorical((0..90).map(|i| i % 3).collect())],
    );
    for seed in 0..10 {
        let spec = PerturbationSpec {
            seed,
            value_fraction: 0.1,
            ..Default::default()
        };
        let (before, after, rows) = one_feature(&spec, &ds);
        assert_eq!(rows.len(), 9);
        for &i in &rows {
            assert_eq!((after[i] - before[i]).abs(), 1.0);
        }
    }
}

fn mixed(n: usize) -> LabeledDataset {
    dataset(
        vec![
            Feature::new("r", FeatureKind::Real),
            Feature::new("i", FeatureKind::Integer),
            Feature::new("b", FeatureKind::Boolean),
            Feature::categorical("c", ["x", "y"]),
        ],
        vec![
            RawColumn::Numeric((0..n).map(|i| (i as f64 * 0.37).sin() * 5.0).collect()),
            RawColumn::Numeric((0..n).map(|i| (i % 7) as f64).collect()),
            RawColumn::Numeric((0..n).map(|i| (i % 3 == 0) as u8 as f64).collect()),
            RawColumn::Categorical((0..n).map(|i| i % 2).collect()),
        ],
    )
}

fn changed_cells(a: &Array2<f64>, b: &Array2<f64>) -> usize {
    a.iter().zip(b.iter()).filter(|(x, y)| x.to_bits() != y.to_bits()).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn touches_exactly_the_prescribed_cells(seed in any::<u64>(), n in 20usize..200, vf in 0.01f64..0.3) {
        let ds = mixed(n);
        let spec = PerturbationSpec { seed, value_fraction: vf, ..Default::default() };
        let p = perturb(&ds, &spec).unwrap();
        let again = perturb(&ds, &spec).unwrap();
        prop_assert_eq!(&p.dataset.rows, &again.dataset.rows);
        // round(0.75 * 4) = 3 features
        prop_assert_eq!(p.touched.len() + p.skipped.len(), 3);
        let mut expected_cells = 0;
        for t in &p.touched {
            let fi = ds.schema.index_of(&t.feature).unwrap();
            let eligible = if ds.schema.features()[fi].kind == FeatureKind::Boolean {
                let raw = ds.raw_feature(fi);
                let ones = raw.iter().filter(|v| **v == 1.0).count();
                if raw[t.rows[0]] == 1.0 { ones } else { n - ones }
            } else {
                n
            };
            let want = ((vf * eligible as f64).round() as usize).max(1);
            prop_assert_eq!(t.rows.len(), want);
            // a categorical change rewrites both one-hot cells
            expected_cells += want * ds.schema.features()[fi].width();
        }
        prop_assert_eq!(changed_cells(&ds.rows, &p.dataset.rows), expected_cells);
        prop_assert_eq!(&p.dataset.group_of, &ds.group_of);
    }
}
