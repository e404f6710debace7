//! Finite-difference and linearity checks for the reference models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xssab::model::{LinearToy, ModelAdapter, ReferenceModelSpec};
use xssab::tensor::ImageTensor;

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor {
    ImageTensor::new(
        h,
        w,
        (0..h * w * 3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Central differences of `w · normalize(f(I))`, step `h`.
fn finite_difference<M: ModelAdapter>(
    model: &M,
    image: &ImageTensor,
    w: &[f64],
    h: f64,
) -> Vec<f64> {
    let objective = |img: &ImageTensor| -> f64 {
        let e = model.embed(img).unwrap();
        e.values().iter().zip(w).map(|(a, b)| a * b).sum()
    };
    let base = image.data().to_vec();
    (0..base.len())
        .map(|k| {
            let mut plus = base.clone();
            plus[k] += h;
            let mut minus = base.clone();
            minus[k] -= h;
            let fp = objective(&ImageTensor::new(image.height(), image.width(), plus).unwrap());
            let fm = objective(&ImageTensor::new(image.height(), image.width(), minus).unwrap());
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / (f.abs() + 1e-8))
        .fold(0.0, f64::max)
}

#[test]
fn tiny_cnn_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for seed in 0..3 {
        let model = ReferenceModelSpec::tiny_cnn(seed, 16, 16).build().unwrap();
        let image = random_image(&mut rng, 16, 16);
        let w = random_vec(&mut rng, model.embedding_dim());
        let analytic = model.vjp(&image, &w).unwrap();
        let fd = finite_difference(&model, &image, &w, 1e-4);
        let err = max_rel_err(analytic.data(), &fd);
        println!("seed {seed}: max rel err {err:e}");
        assert!(err <= 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn linear_toy_matches_closed_form() {
    // ∂(w·Wx/‖Wx‖)/∂x = Wᵀ (w − (w·u)u)/‖Wx‖ with u = Wx/‖Wx‖
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (h, wd, n) = (5, 4, 6);
    let model = LinearToy::seeded(3, h, wd, n).unwrap();
    let image = random_image(&mut rng, h, wd);
    let w = random_vec(&mut rng, n);
    let d = h * wd * 3;
    let mat = model.weight();
    let wx: Vec<f64> = (0..n)
        .map(|r| (0..d).map(|c| mat[r * d + c] * image.data()[c]).sum())
        .collect();
    let norm = wx.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: Vec<f64> = wx.iter().map(|v| v / norm).collect();
    let wu: f64 = w.iter().zip(&u).map(|(a, b)| a * b).sum();
    let expected: Vec<f64> = (0..d)
        .map(|c| {
            (0..n)
                .map(|r| mat[r * d + c] * (w[r] - wu * u[r]) / norm)
                .sum()
        })
        .collect();
    let got = model.vjp(&image, &w).unwrap();
    for (g, e) in got.data().iter().zip(&expected) {
        assert!((g - e).abs() <= 1e-12 * (1.0 + e.abs()), "{g} vs {e}");
    }
    let fd = finite_difference(&model, &image, &w, 1e-4);
    assert!(max_rel_err(got.data(), &fd) <= 1e-4);
}

#[test]
fn vjp_is_linear_in_the_cotangent() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let models = [
        ReferenceModelSpec::tiny_cnn(1, 12, 12).build().unwrap(),
        ReferenceModelSpec::linear_toy(1, 12, 12, 16)
            .build()
            .unwrap(),
    ];
    for model in &models {
        let n = model.embedding_dim();
        let image = random_image(&mut rng, 12, 12);
        let w1 = random_vec(&mut rng, n);
        let w2 = random_vec(&mut rng, n);
        let g1 = model.vjp(&image, &w1).unwrap();
        let g2 = model.vjp(&image, &w2).unwrap();

        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let g12 = model.vjp(&image, &sum).unwrap();
        for ((a, b), c) in g1.data().iter().zip(g2.data()).zip(g12.data()) {
            assert!((a + b - c).abs() <= 1e-10);
        }

        let alpha = -2.75;
        let scaled: Vec<f64> = w1.iter().map(|v| alpha * v).collect();
        let gs = model.vjp(&image, &scaled).unwrap();
        for (a, s) in g1.data().iter().zip(gs.data()) {
            assert!((alpha * a - s).abs() <= 1e-12 * (1.0 + s.abs()));
        }

        let zero = model.vjp(&image, &vec![0.0; n]).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn vjp_rejects_wrong_cotangent_length() {
    let model = ReferenceModelSpec::tiny_cnn(1, 8, 8).build().unwrap();
    let image = ImageTensor::filled(8, 8, 0.1).unwrap();
    let err = model.vjp(&image, &[1.0; 5]).unwrap_err();
    assert_eq!(err.category(), "shape");
}
