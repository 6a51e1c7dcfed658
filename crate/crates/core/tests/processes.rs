use diffmark::denoiser::FnDenoiser;
use diffmark::forward::{
    build_pair_from_noise, diffuse_embedding, diffuse_simulation, diffuse_vanilla, Stage,
};
use diffmark::image::mean_image;
use diffmark::reverse::{posterior_params, reverse_step, sample, SamplerOptions, SigmaMode};
use diffmark::rng::{normal_image, rng_from_seed, substream, streams};
use diffmark::watermark::{MarkGeometry, MarkPosition, MarkShape};
use diffmark::{F1Mode, Image, VarianceSchedule, WatermarkSpec};
use proptest::prelude::*;

fn four_step() -> VarianceSchedule {
    VarianceSchedule::from_betas(&[0.1, 0.2, 0.3, 0.4]).unwrap()
}

fn scalar_spec(s: &VarianceSchedule, gamma: f64, t_a: usize, mode: F1Mode) -> WatermarkSpec<f64> {
    WatermarkSpec::new(Image::scalar(1.0), gamma, t_a, mode, s).unwrap()
}

#[test]
fn vanilla_hand_value() {
    let x = diffuse_vanilla(&Image::scalar(0.5), 2, &Image::scalar(1.0), &four_step()).unwrap();
    let want = (0.9f64 * 0.8).sqrt() * 0.5 + (1.0f64 - 0.9 * 0.8).sqrt();
    assert!((x.data()[0] - want).abs() < 1e-15);
}

#[test]
fn embedding_hand_value_theorem_mode() {
    let s = four_step();
    let (gamma, x0, xa, eps) = (0.8, 0.5, 1.0, 0.3);
    let spec = scalar_spec(&s, gamma, 4, F1Mode::Theorem);
    let pair = diffuse_embedding(
        &Image::scalar(x0),
        2,
        &Image::scalar(eps),
        &Image::scalar(xa),
        &spec,
        &s,
    )
    .unwrap();

    let ab: [f64; 5] = [1.0, 0.9, 0.9 * 0.8, 0.9 * 0.8 * 0.7, 0.9 * 0.8 * 0.7 * 0.6];
    let betas = [0.1, 0.2, 0.3, 0.4];
    let sum = |t: usize| -> f64 {
        ab[t].sqrt()
            * (1..=t)
                .map(|i| betas[i - 1] / ab[i].sqrt() / (1.0 - ab[i]).sqrt())
                .sum::<f64>()
    };
    let max = (1..=4).map(sum).fold(0.0, f64::max);
    let (k, f2) = (1.0 / max, sum(2) / max);
    let b0 = x0;
    let bt = ab[2].sqrt() * x0 + f2 * xa;
    let origin = gamma * x0 + (1.0 - gamma) * b0;
    let want = ab[2].sqrt() * origin + gamma * (1.0 - ab[2]).sqrt() * eps
        + (1.0 - gamma) * (bt - ab[2].sqrt() * b0);
    assert!((pair.x_t_prime.data()[0] - want).abs() < 1e-14);
    assert!((pair.target.data()[0] - (gamma * eps + (1.0 - gamma) * k * xa)).abs() < 1e-14);
    assert_eq!(pair.stage, Stage::Embedding);
}

#[test]
fn simulation_coefficient_matches_csv_dump() {
    let s = VarianceSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let mut csv = Vec::new();
    s.write_csv(&mut csv).unwrap();
    let alpha_bar: Vec<f64> = String::from_utf8(csv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    let spec = scalar_spec(&s, 0.8, 500, F1Mode::Zero);
    let pair = diffuse_simulation(&Image::scalar(1.0), 1000, &Image::scalar(0.0), &spec, &s).unwrap();
    let want = (alpha_bar[1000] / alpha_bar[500]).sqrt();
    assert!((pair.x_t_prime.data()[0] / want - 1.0).abs() < 1e-14);
}

#[test]
fn late_steps_compose_embedding_then_simulation() {
    let s = VarianceSchedule::linear(20, 1e-3, 0.2).unwrap();
    let mut rng = rng_from_seed(4);
    for mode in [F1Mode::Theorem, F1Mode::Zero] {
        let g = MarkGeometry {
            shape: MarkShape::Plus,
            position: MarkPosition::Center,
            size: 5,
        };
        let spec = WatermarkSpec::<f64>::from_geometry(g, (1, 8, 8), &[1.0], 0.7, 8, mode, &s).unwrap();
        let x0 = normal_image(&mut rng, 1, 8, 8);
        let eps = normal_image(&mut rng, 1, 8, 8);
        let zero = Image::zeros(1, 8, 8);
        for t in 9..=20 {
            let pair = build_pair_from_noise(&x0, t, &eps, &zero, 2.5, &spec, &s).unwrap();
            let anchor = diffuse_embedding(&x0, 8, &zero, &spec.scaled_pattern(2.5), &spec, &s).unwrap();
            let two_step = diffuse_simulation(&anchor.x_t_prime, t, &eps, &spec, &s).unwrap();
            assert_eq!(pair, two_step);
            assert_eq!(pair.target, eps);
        }
    }
}

#[test]
fn reverse_step_mean_and_variance() {
    let s = four_step();
    let (x, e) = (Image::scalar(0.4), Image::scalar(-0.2));
    let mut rng = substream(8, streams::ORACLE);
    let n = 100_000;
    for t in 2..=4 {
        let (mu, var) = posterior_params(&x, &e, t, &s, 0.8, SigmaMode::GammaSquared).unwrap();
        let draws: Vec<f64> = (0..n)
            .map(|_| reverse_step(&x, &e, t, &s, 0.8, SigmaMode::GammaSquared, &mut rng).unwrap().data()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let v = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - mu.data()[0]).abs() < 3.0 * (var / n as f64).sqrt(), "t={t}");
        assert!((v / var - 1.0).abs() < 0.05, "t={t}: {v} vs {var}");
    }
}

#[test]
fn noise_average_is_concentrated() {
    let mut rng = substream(1, streams::ORACLE);
    let batch: Vec<Image<f64>> = (0..100).map(|_| normal_image(&mut rng, 1, 28, 28)).collect();
    let avg = mean_image(&batch).unwrap();
    let inside = avg.data().iter().filter(|v| v.abs() < 0.4).count();
    assert!(inside as f64 >= 0.99 * avg.len() as f64);
}

#[test]
fn sampler_is_seeded_and_records_requested_steps() {
    let s = VarianceSchedule::linear(10, 1e-3, 0.2).unwrap();
    let spec = scalar_spec(&s, 0.8, 5, F1Mode::Zero);
    let model = FnDenoiser(|x: &Image<f64>, _t: usize| x.map(|v| 0.1 * v));
    let opts = SamplerOptions::new(4).with_snapshots([10, 5, 1]);
    let a = sample(&model, &s, &spec, &opts, &mut rng_from_seed(2)).unwrap();
    let b = sample(&model, &s, &spec, &opts, &mut rng_from_seed(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.snapshots.keys().copied().collect::<Vec<_>>(), [1, 5, 10]);
    assert!(a.finals.iter().all(|f| f.data()[0].abs() <= 1.0));
}

proptest! {
    #[test]
    fn unit_gamma_blank_pattern_is_vanilla(x in -1.0f64..1.0, e in -4.0f64..4.0, t in 1usize..=20) {
        let s = VarianceSchedule::linear(20, 1e-3, 0.2).unwrap();
        let spec = WatermarkSpec::new(Image::scalar(0.0), 1.0, 20, F1Mode::Theorem, &s).unwrap();
        let pair = diffuse_embedding(&Image::scalar(x), t, &Image::scalar(e), &Image::scalar(0.0), &spec, &s).unwrap();
        prop_assert_eq!(pair.x_t_prime, diffuse_vanilla(&Image::scalar(x), t, &Image::scalar(e), &s).unwrap());
        prop_assert_eq!(pair.target.data()[0], e);
    }

    #[test]
    fn embedding_noise_slope_is_gamma_scaled(
        x in -1.0f64..1.0, e1 in -3.0f64..3.0, e2 in -3.0f64..3.0,
        gamma in 0.05f64..1.0, t in 1usize..=10,
    ) {
        let s = VarianceSchedule::linear(10, 1e-3, 0.2).unwrap();
        let spec = scalar_spec(&s, gamma, 10, F1Mode::Zero);
        let at = |e: f64| diffuse_embedding(&Image::scalar(x), t, &Image::scalar(e), &Image::scalar(2.0), &spec, &s)
            .unwrap().x_t_prime.data()[0];
        let slope = gamma * (1.0 - s.alpha_bar(t)).sqrt();
        prop_assert!((at(e1) - at(e2) - slope * (e1 - e2)).abs() < 1e-12);
    }

    #[test]
    fn stage_follows_t_a(t in 1usize..=30, t_a in 1usize..=30) {
        let s = VarianceSchedule::linear(30, 1e-3, 0.2).unwrap();
        let spec = scalar_spec(&s, 0.9, t_a, F1Mode::Theorem);
        let one = Image::scalar(0.3);
        let pair = build_pair_from_noise(&one, t, &one, &one, 1.0, &spec, &s).unwrap();
        prop_assert_eq!(pair.stage, Stage::of(t, t_a));
        prop_assert!(pair.x_t_prime.is_finite());
    }

    #[test]
    fn posterior_mean_ignores_gamma(x in -3.0f64..3.0, e in -3.0f64..3.0, g in 0.05f64..1.0, t in 1usize..=4) {
        let s = four_step();
        let (xi, ei) = (Image::scalar(x), Image::scalar(e));
        let (m1, v1) = posterior_params(&xi, &ei, t, &s, g, SigmaMode::GammaSquared).unwrap();
        let (m2, v2) = posterior_params(&xi, &ei, t, &s, 1.0, SigmaMode::GammaSquared).unwrap();
        prop_assert_eq!(m1, m2);
        prop_assert!((v1 - g * g * v2).abs() <= 1e-15);
    }

    #[test]
    fn f32_tracks_f64(x in -1.0f64..1.0, e in -3.0f64..3.0, t in 1usize..=10) {
        let s = VarianceSchedule::linear(10, 1e-3, 0.2).unwrap();
        let s64 = scalar_spec(&s, 0.8, 10, F1Mode::Theorem);
        let s32 = WatermarkSpec::<f32>::new(Image::scalar(1.0), 0.8, 10, F1Mode::Theorem, &s).unwrap();
        let a = diffuse_embedding(&Image::scalar(x), t, &Image::scalar(e), &Image::scalar(1.5), &s64, &s).unwrap();
        let b = diffuse_embedding(&Image::scalar(x as f32), t, &Image::scalar(e as f32), &Image::scalar(1.5f32), &s32, &s).unwrap();
        prop_assert!((a.x_t_prime.data()[0] - b.x_t_prime.data()[0] as f64).abs() < 1e-5);
    }
}
