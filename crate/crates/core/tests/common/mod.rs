//! Finite-difference checks shared by the derivative tests and the
//! acceptance run.

use attribens::numerics::{loss_gradient_f64, Architecture, DenoiserParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// A power of two keeps `w ± H` exact for f32 weights of ordinary size.
pub const H: f64 = 1.0 / 1024.0;

pub fn rel_err(approx: &[f64], exact: &[f64]) -> f64 {
    let diff: f64 = approx.iter().zip(exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = approx.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

pub fn random_net(rng: &mut ChaCha8Rng) -> DenoiserParams {
    let dim = rng.random_range(2..=5);
    let hidden = (0..rng.random_range(1..=3)).map(|_| rng.random_range(3..=9)).collect();
    DenoiserParams::init(Architecture::new(dim, hidden), rng.random()).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.5..1.5)).collect()
}

/// Worst relative errors `(parameter gradient, input gradient)` over `nets`
/// random networks.
pub fn gradient_errors(seed: u64, nets: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_param, mut worst_input) = (0.0f64, 0.0f64);
    for _ in 0..nets {
        let net = random_net(&mut rng);
        let dim = net.arch.sample_dim;
        let x0 = random_vec(&mut rng, dim);
        let eps = random_vec(&mut rng, dim);
        let t = rng.random_range(1..=100);
        let ab = rng.random_range(0.05..0.95);
        let (_, grads) = loss_gradient_f64(&net, &x0, t, &eps, ab).unwrap();

        let flat = net.flat();
        let loss_at = |w: &[f32]| loss_gradient_f64(&net.with_flat(w).unwrap(), &x0, t, &eps, ab).unwrap().0;
        let fd: Vec<f64> = (0..flat.len())
            .map(|i| {
                let mut plus = flat.clone();
                let mut minus = flat.clone();
                plus[i] = (f64::from(flat[i]) + H) as f32;
                minus[i] = (f64::from(flat[i]) - H) as f32;
                let step = f64::from(plus[i]) - f64::from(minus[i]);
                (loss_at(&plus) - loss_at(&minus)) / step
            })
            .collect();
        worst_param = worst_param.max(rel_err(&fd, &grads.flat()));

        // The input gradient of the network output, via the same pullback.
        let cot = random_vec(&mut rng, dim);
        let x = random_vec(&mut rng, dim);
        let (_, g) = net.vjp(&x, t, &cot).unwrap();
        let dot = |y: Vec<f64>| y.iter().zip(&cot).map(|(a, b)| a * b).sum::<f64>();
        let fd_in: Vec<f64> = (0..dim)
            .map(|i| {
                let mut p = x.clone();
                let mut m = x.clone();
                p[i] += H;
                m[i] -= H;
                (dot(net.predict_f64(&p, t).unwrap()) - dot(net.predict_f64(&m, t).unwrap())) / (2.0 * H)
            })
            .collect();
        worst_input = worst_input.max(rel_err(&fd_in, &g.input));
    }
    (worst_param, worst_input)
}

/// Worst relative error of forward-mode tangents over `nets` random networks.
pub fn tangent_error(seed: u64, nets: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..nets {
        let net = random_net(&mut rng);
        let dim = net.arch.sample_dim;
        let x = random_vec(&mut rng, dim);
        let v = random_vec(&mut rng, dim);
        let t = rng.random_range(1..=100);
        let (value, tangent) = net.predict_dual_f64(&x, &v, t).unwrap();
        assert_eq!(value, net.predict_f64(&x, t).unwrap());
        let shifted = |s: f64| {
            let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + s * b).collect();
            net.predict_f64(&y, t).unwrap()
        };
        let fd: Vec<f64> = shifted(H).iter().zip(shifted(-H)).map(|(p, m)| (p - m) / (2.0 * H)).collect();
        worst = worst.max(rel_err(&fd, &tangent));
    }
    worst
}
