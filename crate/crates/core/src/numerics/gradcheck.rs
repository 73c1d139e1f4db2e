use rand::seq::index::sample;
use rand::Rng;

use super::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Max over checked coordinates of `|autodiff - fd| / max(1, |fd|)`.
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub checked: usize,
}

/// Compare autodiff gradients against central finite differences.
///
/// `loss` returns the scalar loss and its autodiff gradient for a parameter
/// vector. At most `max_coords` coordinates are checked, sampled without
/// replacement from `rng`; all are checked when the vector is shorter.
pub fn grad_check<F>(
    loss: F,
    params: &[f64],
    eps: f64,
    max_coords: usize,
    rng: &mut impl Rng,
) -> Result<GradCheck, NumericsError>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>), NumericsError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(NumericsError::InvalidConfig(format!(
            "eps {eps} outside [1e-7, 1e-3]"
        )));
    }
    let (_, grad) = loss(params)?;
    if grad.len() != params.len() {
        return Err(NumericsError::Shape {
            node: "grad_check".into(),
            detail: format!("{} gradients for {} params", grad.len(), params.len()),
        });
    }
    let coords: Vec<usize> = if max_coords >= params.len() {
        (0..params.len()).collect()
    } else {
        let mut c = sample(rng, params.len(), max_coords).into_vec();
        c.sort_unstable();
        c
    };
    let mut probe = params.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_coord: 0,
        checked: coords.len(),
    };
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + eps;
        let (up, _) = loss(&probe)?;
        probe[i] = orig - eps;
        let (down, _) = loss(&probe)?;
        probe[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let rel = (grad[i] - fd).abs() / fd.abs().max(1.0);
        if rel > worst.max_rel_error || rel.is_nan() {
            worst.max_rel_error = rel;
            worst.worst_coord = i;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{bind_mlp, Activation, Graph, MlpSpec, OutputSquash, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mlp_loss(
        spec: &MlpSpec,
        x: &Tensor,
        y: &Tensor,
    ) -> impl Fn(&[f64]) -> Result<(f64, Vec<f64>), NumericsError> {
        let spec = spec.clone();
        let (x, y) = (x.clone(), y.clone());
        move |p: &[f64]| {
            let mut g = Graph::new();
            let layers = bind_mlp(&mut g, &spec, p, true);
            let xv = g.input(x.clone());
            let yv = g.input(y.clone());
            let index = vec![0; x.rows()];
            let out = spec.forward(&mut g, &layers, &index, xv)?;
            let l = g.mse(out, yv)?;
            let grads = g.backward(l)?;
            let mut flat = Vec::new();
            for v in &layers {
                grads.extend_into(*v, &mut flat);
            }
            Ok((g.scalar(l), flat))
        }
    }

    #[test]
    fn affine_model_is_exact() {
        let spec = MlpSpec::new(vec![3, 2], Activation::Relu, OutputSquash::None);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = spec.init(&mut rng);
        let x = Tensor::matrix(4, 3, (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
        let y = Tensor::matrix(4, 2, (0..8).map(|i| (i as f64).sin()).collect()).unwrap();
        let r = grad_check(mlp_loss(&spec, &x, &y), &p, 1e-5, usize::MAX, &mut rng).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn tanh_mlp_hundred_coords() {
        let spec = MlpSpec::new(
            vec![4, 16, 16, 2],
            Activation::Tanh,
            OutputSquash::Tanh { bound: 1.5 },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = spec.init(&mut rng);
        let x = Tensor::matrix(
            8,
            4,
            (0..32).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect(),
        )
        .unwrap();
        let y = Tensor::matrix(8, 2, (0..16).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap();
        let r = grad_check(mlp_loss(&spec, &x, &y), &p, 1e-5, 100, &mut rng).unwrap();
        assert_eq!(r.checked, 100);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    fn random_case(seed: u64, activation: Activation) -> (MlpSpec, Vec<f64>, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec::new(vec![3, 12, 1], activation, OutputSquash::None);
        let p = spec.init(&mut rng);
        let x =
            Tensor::matrix(8, 3, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y =
            Tensor::matrix(8, 1, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        (spec, p, x, y)
    }

    #[test]
    fn tanh_mlp_across_seeds() {
        for seed in 0..20u64 {
            let (spec, p, x, y) = random_case(seed, Activation::Tanh);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = grad_check(mlp_loss(&spec, &x, &y), &p, 1e-5, usize::MAX, &mut rng).unwrap();
            assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
        }
    }

    // A perturbation that pushes a pre-activation across zero breaks the
    // difference quotient, not the gradient; seed 12 has a unit at 3.2e-6.
    #[test]
    fn relu_mlp_across_seeds() {
        for seed in 0..20u64 {
            let (spec, p, x, y) = random_case(seed, Activation::Relu);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = grad_check(mlp_loss(&spec, &x, &y), &p, 1e-6, usize::MAX, &mut rng).unwrap();
            assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn eps_out_of_range_is_rejected() {
        let f = |p: &[f64]| Ok((p[0], vec![1.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(grad_check(f, &[0.0], 1e-2, 1, &mut rng).is_err());
    }
}
