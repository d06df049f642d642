use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sair::generator::{invert, sample_latent, Generator, GeneratorSpec, InversionConfig, LatentCode};
use sair::numerics::gradcheck::{check_gradient, FD_STEP};
use sair::Image;

fn desk(seed: u64, planted: usize) -> Generator {
    Generator::from_spec(&GeneratorSpec::desk(seed, planted).unwrap()).unwrap()
}

fn mean_abs_diff(a: &Image, b: &Image) -> f64 {
    let (x, y) = (a.as_array().data(), b.as_array().data());
    x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64
}

fn psnr(a: &Image, b: &Image) -> f64 {
    let (x, y) = (a.as_array().data(), b.as_array().data());
    let mse = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
    10.0 * (1.0 / mse).log10()
}

#[test]
fn sample_latent_moments() {
    let n = 10_000;
    let shape = [8, 32];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut sum = vec![0.0; 256];
    let mut sq = vec![0.0; 256];
    for _ in 0..n {
        let w: LatentCode = sample_latent(shape, &mut rng);
        for (i, v) in w.flatten().iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    for i in 0..256 {
        let mean = sum[i] / n as f64;
        let var = sq[i] / n as f64 - mean * mean;
        assert!(mean.abs() < 0.05, "entry {i} mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "entry {i} variance {var}");
    }
}

#[test]
fn sample_latent_is_seeded() {
    let a: LatentCode = sample_latent([8, 32], &mut ChaCha8Rng::seed_from_u64(3));
    let b: LatentCode = sample_latent([8, 32], &mut ChaCha8Rng::seed_from_u64(3));
    let c: LatentCode = sample_latent([8, 32], &mut ChaCha8Rng::seed_from_u64(4));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn independent_latents_give_distinct_images() {
    let gen = desk(0, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let a = gen.generate(&gen.sample_latent(&mut rng)).unwrap();
        let b = gen.generate(&gen.sample_latent(&mut rng)).unwrap();
        assert!(mean_abs_diff(&a, &b) > 0.0);
    }
}

#[test]
fn mean_pixel_gradient_matches_finite_differences() {
    let gen = desk(2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = gen.sample_latent(&mut rng);
    let report = check_gradient(
        |v| gen.generate_var(v)?.mean().map_err(sair::Error::from),
        w.as_array(),
        FD_STEP,
    )
    .unwrap();
    assert!(report.passes(1e-4), "max rel error {}", report.max_rel_error);
}

#[test]
fn outputs_stay_in_unit_range_for_large_latents() {
    let gen = desk(3, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for scale in [1.0, 10.0, 1e3, 1e8] {
        let w = gen.sample_latent(&mut rng);
        let big = LatentCode::new(w.as_array().map(|v| v * scale).unwrap()).unwrap();
        let img = gen.generate(&big).unwrap();
        assert!(img.as_array().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn planted_directions_are_visible() {
    let gen = desk(4, 3);
    let n = 256;
    for planted in gen.spec().planted() {
        let u = &planted.direction;
        let (mut along, mut across) = (0.0, 0.0);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let w = gen.sample_latent(&mut rng);
            // Random direction orthogonal to u, same norm as the planted step.
            let r: LatentCode = sample_latent([8, 32], &mut rng);
            let dot: f64 = r.flatten().iter().zip(u).map(|(a, b)| a * b).sum();
            let mut p: Vec<f64> = r.flatten().iter().zip(u).map(|(a, b)| a - dot * b).collect();
            let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            p.iter_mut().for_each(|v| *v *= 3.0 / norm);
            let shift = |delta: &dyn Fn(usize) -> f64| {
                let data = (0..n).map(|i| w.flatten()[i] + delta(i)).collect();
                gen.generate(&LatentCode::from_flat([8, 32], data).unwrap()).unwrap()
            };
            let base = gen.generate(&w).unwrap();
            along += mean_abs_diff(&base, &shift(&|i| 3.0 * u[i]));
            across += mean_abs_diff(&base, &shift(&|i| p[i]));
        }
        assert!(along > across, "{}: along {along} across {across}", planted.name);
    }
}

#[test]
fn inversion_reduces_loss_from_random_start() {
    let gen = desk(5, 0);
    for seed in 0..10 {
        let target = gen.generate(&gen.sample_latent(&mut ChaCha8Rng::seed_from_u64(seed))).unwrap();
        let res = invert(&gen, &target, &InversionConfig::new(100, 0.05, 1000 + seed)).unwrap();
        assert!(res.loss < res.trace[0], "seed {seed}");
        let mut best = f64::INFINITY;
        for &l in &res.trace {
            assert!(l.is_finite());
            best = best.min(l);
        }
        assert_eq!(best, res.loss);
    }
}

#[test]
fn inversion_reaches_35_db() {
    let gen = desk(6, 3);
    for seed in 0..10 {
        let target = gen.generate(&gen.sample_latent(&mut ChaCha8Rng::seed_from_u64(seed))).unwrap();
        let res = invert(&gen, &target, &InversionConfig::new(2000, 0.05, 500 + seed)).unwrap();
        let db = psnr(&gen.generate(&res.w_z).unwrap(), &target);
        println!("seed {seed}: {db:.2} dB");
        assert!(db >= 35.0, "seed {seed}: {db:.2} dB");
    }
}
