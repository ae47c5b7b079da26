use ndarray::{array, Array2};
use shiftex::counterfactual::{
    apply_dice, stack, train_classifier, Architecture, ClassifierConfig, CounterfactualConfig,
};
use shiftex::data::{FeatureKind, Role, Scaling};
use shiftex::{Feature, FeatureSchema, LabeledDataset};

fn dataset(rows: Array2<f64>, role: Role) -> LabeledDataset {
    let schema = FeatureSchema::new(
        (0..rows.ncols()).map(|j| Feature::new(format!("x{j}"), FeatureKind::Real)).collect(),
    )
    .unwrap();
    let scaling = Scaling::identity(&schema);
    LabeledDataset::from_scaled(schema, role, scaling, rows).unwrap()
}

fn separable() -> (LabeledDataset, LabeledDataset) {
    let src = Array2::from_shape_fn((20, 2), |(i, j)| 0.1 + 0.01 * (i * (j + 1)) as f64 % 0.2);
    let tgt = &src + &array![[0.6, 0.6]];
    (dataset(src, Role::Source), dataset(tgt, Role::Target))
}

#[test]
fn separable_data_is_classified_perfectly_and_flipped() {
    let (src, tgt) = separable();
    for arch in [Architecture::Logistic, Architecture::OneHidden { width: 8 }] {
        let cfg = ClassifierConfig {
            architecture: arch,
            ..ClassifierConfig::logistic(2000, 1.0)
        };
        let h = train_classifier(&src, &tgt, &cfg).unwrap();
        let (x, y, _) = stack(&src, &tgt);
        assert_eq!(h.accuracy(&x, &y), 1.0, "{arch:?}");
        let out = apply_dice(&src.rows, &h, &CounterfactualConfig::default()).unwrap();
        assert_eq!(out.flip_rate(), 1.0);
        for i in 0..src.n_rows() {
            let before = h.predict(src.rows.row(i));
            let after = h.predict(out.mapped.row(i));
            assert!(after > 0.5 && after >= before);
            // never further than the far side of the target cloud
            let norm = out.deltas.row(i).dot(&out.deltas.row(i)).sqrt();
            assert!(norm < 0.6 * 2f64.sqrt() + 0.1, "{norm}");
        }
    }
}

#[test]
fn dro_on_identical_groups_matches_plain_training() {
    let (src, tgt) = separable();
    let groups: Vec<usize> = (0..20).map(|i| 1 + i % 2).collect();
    // mirror rows so that both groups carry the same loss at every step
    let mirror = |d: &LabeledDataset| {
        let idx: Vec<usize> = (0..10).flat_map(|i| [i, i]).collect();
        d.select(&idx).with_groups(groups.clone(), 2).unwrap()
    };
    let (src, tgt) = (mirror(&src), mirror(&tgt));
    let plain = train_classifier(&src, &tgt, &ClassifierConfig::logistic(300, 0.5)).unwrap();
    let dro = train_classifier(
        &src,
        &tgt,
        &ClassifierConfig {
            group_dro: true,
            ..ClassifierConfig::logistic(300, 0.5)
        },
    )
    .unwrap();
    for (a, b) in plain.out_w.iter().zip(&dro.out_w) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!((plain.out_b - dro.out_b).abs() < 1e-6);
}

#[test]
fn dro_lowers_the_worst_group_loss() {
    // group 2 is small and shifted the other way
    let mut s = Vec::new();
    let mut t = Vec::new();
    let mut groups = Vec::new();
    for i in 0..40 {
        let jitter = 0.02 * (i % 5) as f64;
        if i < 34 {
            s.push([0.2 + jitter, 0.5]);
            t.push([0.8 + jitter, 0.5]);
            groups.push(1);
        } else {
            s.push([0.8 + jitter, 0.9]);
            t.push([0.2 + jitter, 0.9]);
            groups.push(2);
        }
    }
    let to = |v: &[[f64; 2]]| Array2::from_shape_fn((v.len(), 2), |(i, j)| v[i][j]);
    let src = dataset(to(&s), Role::Source).with_groups(groups.clone(), 2).unwrap();
    let tgt = dataset(to(&t), Role::Target).with_groups(groups, 2).unwrap();
    let base = ClassifierConfig {
        architecture: Architecture::Logistic,
        ..ClassifierConfig::logistic(500, 0.5)
    };
    let worst = |dro: bool| {
        let h = train_classifier(&src, &tgt, &ClassifierConfig { group_dro: dro, dro_step: 0.5, ..base }).unwrap();
        let (x, y, g) = stack(&src, &tgt);
        h.group_losses(&x, &y, &g, 2).into_iter().fold(0.0, f64::max)
    };
    assert!(worst(true) < worst(false));
}

#[test]
fn training_is_deterministic() {
    let (src, tgt) = separable();
    let cfg = ClassifierConfig {
        architecture: Architecture::OneHidden { width: 4 },
        seed: 9,
        ..ClassifierConfig::logistic(50, 0.3)
    };
    assert_eq!(train_classifier(&src, &tgt, &cfg).unwrap(), train_classifier(&src, &tgt, &cfg).unwrap());
}
