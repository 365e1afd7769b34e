use planedepth::forest::{read_model, train, write_model, FeatureMatrix, ForestParams, Targets};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params(trees: usize, seed: u64) -> ForestParams {
    ForestParams {
        n_trees: trees,
        rng_seed: seed,
        ..ForestParams::default()
    }
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> FeatureMatrix {
    FeatureMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn saved_models_predict_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = matrix(&mut rng, 400, 6);
    let reg: Vec<f64> = (0..400).map(|r| x.get(r, 0).sin() + x.get(r, 3) * x.get(r, 4)).collect();
    let labels: Vec<usize> = (0..400).map(|r| usize::from(x.get(r, 1) > 0.0) + usize::from(x.get(r, 2) > 0.5)).collect();
    let names: Vec<String> = (0..6).map(|i| format!("f{i}")).collect();
    let models = [
        train(&x, &Targets::Regression(reg), &params(12, 3)).unwrap(),
        train(&x, &Targets::Classification { labels, n_classes: 3 }, &params(12, 4)).unwrap(),
    ];
    let dir = tempfile::tempdir().unwrap();
    for (n, m) in models.into_iter().enumerate() {
        let m = m.with_feature_names(names.clone()).unwrap();
        let path = dir.path().join(format!("m{n}.pdf"));
        write_model(&path, &m).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(back, m);
        let probe = matrix(&mut rng, 50, 6);
        for r in 0..50 {
            assert_eq!(back.predict(probe.row(r)).unwrap(), m.predict(probe.row(r)).unwrap());
        }
    }
}

#[test]
fn classifier_importance_concentrates_on_the_informative_feature() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = matrix(&mut rng, 1500, 8);
    let labels: Vec<usize> = (0..1500).map(|r| usize::from(x.get(r, 5) > 0.1)).collect();
    let m = train(&x, &Targets::Classification { labels, n_classes: 2 }, &params(30, 2)).unwrap();
    let imp = m.oob_importance().unwrap();
    assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let rest = imp.iter().enumerate().filter(|&(i, _)| i != 5).map(|(_, v)| *v).fold(0.0, f64::max);
    assert!(imp[5] > 0.9 && imp[5] > 10.0 * rest, "{imp:?}");
    let p = m.predict_proba(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.9, 0.0, 0.0]).unwrap();
    assert!(p[1] > 0.9);
}

#[test]
fn prediction_rejects_wrong_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = matrix(&mut rng, 50, 3);
    let m = train(&x, &Targets::Regression(vec![1.0; 50]), &params(2, 0)).unwrap();
    let e = m.predict(&[0.0; 4]).unwrap_err().to_string();
    assert!(e.contains('3') && e.contains('4'), "{e}");
}
