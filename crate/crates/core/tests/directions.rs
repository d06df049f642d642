use std::time::Instant;

use sair::directions::{
    build_dataset, direction_from_classifier, discover_direction, fit_linear_classifier, AttributeLabeler,
    DirectionDataset, FitParams,
};
use sair::generator::{Generator, GeneratorSpec};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn setup() -> (Generator, Vec<Vec<f64>>) {
    let gen = Generator::from_spec(&GeneratorSpec::desk(11, 3).unwrap()).unwrap();
    let dirs = gen.spec().planted().iter().map(|p| p.direction.clone()).collect();
    (gen, dirs)
}

fn planted(u: &[f64]) -> AttributeLabeler {
    AttributeLabeler::Planted {
        direction: u.to_vec(),
        threshold: 0.0,
    }
}

#[test]
fn median_threshold_balances_classes() {
    let (gen, dirs) = setup();
    let ds = build_dataset(&gen, &planted(&dirs[0]), 2000, 1).unwrap();
    let frac = ds.positives() as f64 / 2000.0;
    assert!((0.45..=0.55).contains(&frac), "positive fraction {frac}");
}

#[test]
fn recovers_every_planted_direction() {
    let (gen, dirs) = setup();
    for (i, u) in dirs.iter().enumerate() {
        let start = Instant::now();
        let ds = build_dataset(&gen, &planted(u), 2000, 100 + i as u64).unwrap();
        let clf = fit_linear_classifier(&ds, &FitParams::default()).unwrap();
        let dir = direction_from_classifier("attr", &clf).unwrap();
        let cos = dot(dir.direction(), u);
        println!("direction {i}: cos {cos:.4}, accuracy {:.4}, {:?}", clf.accuracy, start.elapsed());
        assert!(cos >= 0.95, "direction {i}: cos {cos}");
        assert!(clf.accuracy >= 0.99, "direction {i}: accuracy {}", clf.accuracy);
        assert!((dot(dir.direction(), dir.direction()).sqrt() - 1.0).abs() < 1e-9);

        // Oriented toward the positive class.
        let mean_proj = |label: bool| {
            let sel: Vec<f64> = ds
                .latents
                .iter()
                .zip(&ds.labels)
                .filter(|(_, &y)| y == label)
                .map(|(x, _)| dot(x, dir.direction()))
                .collect();
            sel.iter().sum::<f64>() / sel.len() as f64
        };
        assert!(mean_proj(true) > mean_proj(false));

        // Flipping labels flips the normal.
        let flipped = DirectionDataset {
            labels: ds.labels.iter().map(|y| !y).collect(),
            ..ds.clone()
        };
        let other = direction_from_classifier("flip", &fit_linear_classifier(&flipped, &FitParams::default()).unwrap())
            .unwrap();
        assert!(dot(other.direction(), dir.direction()) <= -0.99);
    }
}

#[test]
fn discovery_is_deterministic() {
    let (gen, dirs) = setup();
    let params = FitParams {
        epochs: 200,
        ..FitParams::default()
    };
    let a = discover_direction(&gen, &planted(&dirs[1]), "a", 500, 7, &params).unwrap();
    let b = discover_direction(&gen, &planted(&dirs[1]), "a", 500, 7, &params).unwrap();
    assert_eq!(a, b);
}

#[test]
fn feature_scaling_leaves_direction_unchanged() {
    let (gen, dirs) = setup();
    let params = FitParams {
        epochs: 300,
        ..FitParams::default()
    };
    let ds = build_dataset(&gen, &planted(&dirs[2]), 500, 3).unwrap();
    let base = direction_from_classifier("x", &fit_linear_classifier(&ds, &params).unwrap()).unwrap();
    for c in [0.1, 3.0, 250.0] {
        let scaled = DirectionDataset {
            latents: ds.latents.iter().map(|x| x.iter().map(|v| c * v).collect()).collect(),
            ..ds.clone()
        };
        let dir = direction_from_classifier("x", &fit_linear_classifier(&scaled, &params).unwrap()).unwrap();
        for (a, b) in dir.direction().iter().zip(base.direction()) {
            assert!((a - b).abs() < 1e-6, "c={c}");
        }
    }
}

#[test]
fn dataset_json_round_trip() {
    let (gen, dirs) = setup();
    let ds = build_dataset(&gen, &planted(&dirs[0]), 10, 5).unwrap();
    let text = serde_json::to_string(&ds).unwrap();
    assert_eq!(serde_json::from_str::<DirectionDataset>(&text).unwrap(), ds);
}
