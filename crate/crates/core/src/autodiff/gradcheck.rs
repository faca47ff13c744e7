use super::tape::{MathError, Tape, TensorId};

/// Compares the tape gradient of a scalar function against central finite
/// differences and returns the worst relative error.
///
/// `f` receives a fresh tape and the leaf holding `x`; it must be
/// deterministic (any sampling inside must be frozen by the caller). The
/// relative error uses the denominator `max(|g|, |g_fd|, 1e-8)`.
pub fn finite_diff_check<F>(
    f: F,
    shape: (usize, usize),
    x: &[f64],
    h: f64,
) -> Result<f64, MathError>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId, MathError>,
{
    assert!(h > 0.0, "step size must be positive");
    let mut tape = Tape::new();
    let leaf = tape.leaf(shape, x.to_vec(), true)?;
    let loss = f(&mut tape, leaf)?;
    let grads = tape.backward(loss)?;
    let analytic = grads
        .get(leaf)
        .ok_or(MathError::InvalidArgument {
            op: "finite_diff_check",
            message: "loss does not depend on x".into(),
        })?
        .to_vec();

    let eval = |vals: &[f64]| -> Result<f64, MathError> {
        let mut t = Tape::new();
        let id = t.leaf(shape, vals.to_vec(), false)?;
        let out = f(&mut t, id)?;
        Ok(t.item(out))
    };

    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = eval(&probe)?;
        probe[i] = orig - h;
        let minus = eval(&probe)?;
        probe[i] = orig;
        let estimate = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(estimate.abs()).max(1e-8);
        worst = worst.max((analytic[i] - estimate).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::softmax_cross_entropy;
    use crate::rng::Rng;

    #[test]
    fn sum_of_squares_checks_tightly() {
        let mut rng = Rng::new(2);
        let x = rng.normal_vec(12, 1.0);
        let err = finite_diff_check(
            |tape, x| {
                let sq = tape.mul(x, x)?;
                tape.sum(sq)
            },
            (3, 4),
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        // random 3x4 by 4x2, checking the left operand
        let mut rng = Rng::new(13);
        let a = rng.normal_vec(12, 1.0);
        let b = rng.normal_vec(8, 1.0);
        let err = finite_diff_check(
            move |tape, x| {
                let bt = tape.constant((4, 2), b.clone())?;
                let prod = tape.matmul(x, bt)?;
                // weigh entries unevenly so the gradient is not constant
                let w: Vec<f64> = (0..6).map(|i| 0.3 + i as f64).collect();
                let wt = tape.constant((3, 2), w)?;
                let weighted = tape.mul(prod, wt)?;
                tape.sum(weighted)
            },
            (3, 4),
            &a,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn softmax_cross_entropy_checks() {
        let mut rng = Rng::new(29);
        let logits = rng.normal_vec(15, 2.0);
        let labels = vec![0, 3, 2];
        let err = finite_diff_check(
            move |tape, x| softmax_cross_entropy(tape, x, &labels),
            (3, 5),
            &logits,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn composite_ops_check_across_seeds() {
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let x = rng.normal_vec(10, 1.0);
            let err = finite_diff_check(
                |tape, x| {
                    let act = tape.leaky_relu(x, 0.2)?;
                    let norm = tape.normalize_rows(act)?;
                    let sm = tape.softmax_rows(norm, 0.7)?;
                    let lg = tape.ln(sm)?;
                    let picked = tape.gather_rows(lg, &[1, 0, 1])?;
                    let pooled = tape.col_means(picked)?;
                    tape.mean(pooled)
                },
                (2, 5),
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }
}
