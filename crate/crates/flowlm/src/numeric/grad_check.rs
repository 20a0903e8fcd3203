//! Finite-difference gradient verification.
//!
//! The checker is deliberately independent of the tape: it only ever calls
//! the supplied closure, so it can arbitrate between an analytic gradient and
//! the function it claims to differentiate.

use crate::numeric::array::Array;
use crate::scalar::Scalar;

/// Max over coordinates of |analytic − central difference| / (|central difference| + 1e-12).
///
/// `f` must be deterministic in its inputs; any randomness has to be frozen
/// by the caller. `analytic` holds dL/d(point_i) aligned with `points`.
pub fn grad_check<T: Scalar>(
    f: &mut dyn FnMut(&[Array<T>]) -> T,
    points: &[Array<T>],
    analytic: &[Array<T>],
    h: T,
) -> f64 {
    assert!(h > T::zero(), "step must be positive");
    assert_eq!(points.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut work: Vec<Array<T>> = points.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        assert_eq!(points[pi].shape(), grad.shape(), "gradient shape mismatch");
        for ci in 0..points[pi].len() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let up = f(&work).as_f64();
            work[pi].data_mut()[ci] = orig - h;
            let down = f(&work).as_f64();
            work[pi].data_mut()[ci] = orig;
            let fd = (up - down) / (2.0 * h.as_f64());
            let an = grad.data()[ci].as_f64();
            let rel = (an - fd).abs() / (fd.abs() + 1e-12);
            if rel > worst {
                worst = rel;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::tape::Tape;

    #[test]
    fn dot_product_gradient() {
        // f = dot(x, x) at x = [1, -1]: error < 1e-6 at h = 1e-5.
        let x = Array::from_vec(&[2], vec![1.0f64, -1.0]);
        let grads = {
            let mut t = Tape::new();
            let xn = t.param(x.clone());
            let sq = t.mul(xn, xn).unwrap();
            let loss = t.sum_all(sq);
            let g = t.backward(loss).unwrap();
            vec![g.get(xn).unwrap().clone()]
        };
        let mut f = |pts: &[Array<f64>]| pts[0].data().iter().map(|v| v * v).sum::<f64>();
        let err = grad_check(&mut f, &[x], &grads, 1e-5);
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Array::from_vec(&[3], vec![0.3f64, 0.1, -0.2]);
        let zero = Array::zeros(&[3]);
        let mut f = |_: &[Array<f64>]| 4.0;
        let err = grad_check(&mut f, &[x], &[zero], 1e-5);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn composite_through_tape_matches_fd() {
        // softmax → rms_norm → matmul composite on random-ish values.
        let a = Array::from_vec(&[2, 3], vec![0.5f64, -0.3, 0.8, 0.2, 0.9, -0.6]);
        let w = Array::from_vec(&[3, 2], vec![0.1f64, -0.4, 0.7, 0.3, -0.2, 0.5]);
        let gain = Array::from_vec(&[3], vec![1.1f64, 0.9, 1.0]);

        let build = |pts: &[Array<f64>]| {
            let mut t = Tape::new();
            let an = t.param(pts[0].clone());
            let wn = t.param(pts[1].clone());
            let gn = t.param(pts[2].clone());
            let s = t.softmax_rows(an);
            let n = t.rms_norm(s, gn, 1e-6).unwrap();
            let m = t.matmul(n, wn).unwrap();
            let sl = t.silu(m);
            let loss = t.sum_all(sl);
            (t, [an, wn, gn], loss)
        };

        let pts = vec![a, w, gain];
        let (t, ids, loss) = build(&pts);
        let g = t.backward(loss).unwrap();
        let analytic: Vec<_> = ids.iter().map(|&i| g.get(i).unwrap().clone()).collect();

        let mut f = |p: &[Array<f64>]| {
            let (t, _, loss) = build(p);
            t.value(loss).data()[0]
        };
        let err = grad_check(&mut f, &pts, &analytic, 1e-5);
        assert!(err < 1e-7, "composite gradient error {err}");
    }
}
