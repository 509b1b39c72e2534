use liegg::datasets::gen_o5;
use liegg::linalg::matrix_exp;
use liegg::net::{Activation, Discriminator, NetSpec, Network};
use liegg::polarization::{
    gaussian_smooth, polarization_image, polarization_vector, warp_image, Image, ImageGrid,
    InputAction, SeedMode,
};
use liegg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_generator(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
}

fn directional_derivative(
    net: &Network,
    x: &[f64],
    h: &Matrix,
    action: InputAction,
    seed: &[f64],
) -> f64 {
    let t = 1e-5;
    let plus = net
        .forward(&action.act(&matrix_exp(h, t).unwrap(), x).unwrap())
        .unwrap();
    let minus = net
        .forward(&action.act(&matrix_exp(h, -t).unwrap(), x).unwrap())
        .unwrap();
    plus.iter()
        .zip(&minus)
        .zip(seed)
        .map(|((p, m), s)| s * (p - m) / (2.0 * t))
        .sum()
}

#[test]
fn rows_are_directional_derivatives_along_the_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = gen_o5(30, 2, 1.0).inputs;
    for (action, outputs, normalize) in [
        (InputAction::Full, 1, false),
        (InputAction::Full, 3, true),
        (InputAction::Diagonal { block_dim: 5 }, 2, false),
    ] {
        let spec = NetSpec::new(vec![10, 12, 12, outputs], Activation::Swish)
            .unwrap()
            .with_output_normalization(normalize);
        let net = Network::init(spec, 9).unwrap();
        let g = action.gen_dim(10).unwrap();
        for mode in [SeedMode::SumOutputs, SeedMode::per_output()] {
            let e = polarization_vector(&net, &data, &mode, action).unwrap();
            let seeds = mode.seeds(outputs);
            for _ in 0..5 {
                let h = random_generator(g, &mut rng);
                let ev = e.matrix().matvec(h.as_slice()).unwrap();
                for (s, x) in data.iter_rows().enumerate() {
                    for (c, seed) in seeds.iter().enumerate() {
                        let want = directional_derivative(&net, x, &h, action, seed);
                        let got = ev[s * seeds.len() + c];
                        assert!(
                            (got - want).abs() <= 1e-6 * (1.0 + want.abs()),
                            "{got} vs {want}"
                        );
                    }
                }
            }
        }
    }
}

fn square(size: usize) -> Image {
    Image::from_fn(size, size, |i, j| {
        let inside = (size / 4..size / 2).contains(&i) && (size / 3..2 * size / 3).contains(&j);
        if inside {
            1.0
        } else {
            0.0
        }
    })
}

/// Relative gap between `E·vec(h)` and the derivative of the bilinear warp,
/// pooled over several random networks.
fn image_discrepancy(sigma: f64, h: &Matrix) -> f64 {
    let size = 32;
    let img = gaussian_smooth(&square(size), sigma).unwrap();
    let grid = ImageGrid::new(size, size).unwrap();
    let t = 1e-4;
    let (mut num, mut den) = (0.0, 0.0);
    for net_seed in 0..4 {
        let spec = NetSpec::new(vec![size * size, 24, 3], Activation::Tanh).unwrap();
        let net = Network::init(spec, net_seed).unwrap();
        let e = polarization_image(
            &net,
            std::slice::from_ref(&img),
            &grid,
            &SeedMode::SumOutputs,
        )
        .unwrap();
        let got = e.matrix().matvec(h.as_slice()).unwrap()[0];
        let f = |t: f64| -> f64 {
            let moved = warp_image(&img, &matrix_exp(h, t).unwrap()).unwrap();
            net.forward(moved.pixels()).unwrap().iter().sum()
        };
        // Pixel-unit differences against coordinates scaled by H/2.
        let want = (f(t) - f(-t)) / (2.0 * t) / (size / 2) as f64;
        num += (got - want).powi(2);
        den += want * want;
    }
    (num / den).sqrt()
}

#[test]
fn image_rows_track_the_warp_derivative_as_smoothing_grows() {
    let rotation = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap();
    let general = Matrix::from_rows(&[[0.4, 0.9], [-0.3, -0.7]]).unwrap();
    for (name, h) in [("rotation", &rotation), ("general", &general)] {
        let errs: Vec<f64> = [0.0, 1.0, 2.0, 3.0]
            .iter()
            .map(|&s| image_discrepancy(s, h))
            .collect();
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{name}: {errs:?}");
        assert!(errs[3] < 0.1, "{name}: {errs:?}");
    }
}
