use super::network::EncoderParams;
use super::EmbedError;

/// Momentum SGD: `v ← μ·v − lr·g`, then `θ ← θ + v`.
pub fn sgd_step(
    params: &mut EncoderParams,
    velocity: &mut EncoderParams,
    grad: &EncoderParams,
    learning_rate: f64,
    momentum: f64,
) -> Result<(), EmbedError> {
    if !params.same_shape(velocity) || !params.same_shape(grad) {
        return Err(EmbedError::ShapeMismatch);
    }
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad.iter()) {
        *v = momentum * *v - learning_rate * g;
        *p += *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(like: &EncoderParams, value: f64) -> EncoderParams {
        let mut out = like.zeros_like();
        out.iter_mut().for_each(|v| *v = value);
        out
    }

    #[test]
    fn plain_descent_without_momentum() {
        let start = EncoderParams::init(&[3, 2], 1).unwrap();
        let mut p = start.clone();
        let mut v = p.zeros_like();
        let g = filled(&p, 2.0);
        sgd_step(&mut p, &mut v, &g, 0.01, 0.0).unwrap();
        for (after, before) in p.iter().zip(start.iter()) {
            assert_eq!(*after, before + -0.01 * 2.0);
        }
    }

    #[test]
    fn zero_grad_is_fixed_point() {
        let start = EncoderParams::init(&[3, 2], 1).unwrap();
        let mut p = start.clone();
        let mut v = p.zeros_like();
        let g = p.zeros_like();
        sgd_step(&mut p, &mut v, &g, 0.01, 0.9).unwrap();
        assert_eq!(p, start);
    }

    #[test]
    fn two_steps_match_unrolled_recurrence() {
        let (lr, mu, gval) = (0.01, 0.9, 0.5);
        let start = EncoderParams::init(&[2, 2], 4).unwrap();
        let mut p = start.clone();
        let mut v = p.zeros_like();
        let g = filled(&p, gval);
        sgd_step(&mut p, &mut v, &g, lr, mu).unwrap();
        sgd_step(&mut p, &mut v, &g, lr, mu).unwrap();
        // v1 = -lr g, v2 = -lr g (1 + mu), θ2 = θ0 + v1 + v2
        let v2 = -lr * gval * (1.0 + mu);
        for (vel, (after, before)) in v.iter().zip(p.iter().zip(start.iter())) {
            assert!((vel - v2).abs() < 1e-15);
            assert!((after - (before - lr * gval + v2)).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut p = EncoderParams::init(&[3, 2], 1).unwrap();
        let mut v = EncoderParams::init(&[3, 3], 1).unwrap();
        let g = p.zeros_like();
        assert!(matches!(
            sgd_step(&mut p, &mut v, &g, 0.1, 0.9),
            Err(EmbedError::ShapeMismatch)
        ));
    }
}
