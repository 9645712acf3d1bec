//! Non-Bayesian reference estimators.

use num_complex::Complex64;
use rowamp::{ComplexMatrix, ProblemInstance};

/// Relative ridge used when `L < N`.
pub const RIDGE: f64 = 1e-6;

/// Least-squares estimate `pinv(H) Y`; quantized outputs enter as cell midpoints.
/// With fewer measurements than unknowns this is the ridge solution
/// `H^H (H H^H + lambda I)^-1 Y`, `lambda = 1e-6 Tr(H^H H) / N`.
pub fn ls_baseline(instance: &ProblemInstance) -> ComplexMatrix {
    let h = &instance.h;
    let (l, n) = h.shape();
    if l >= n {
        let pinv = h.clone().pseudo_inverse(1e-12).expect("non-negative tolerance");
        return pinv * &instance.y;
    }
    let lambda = RIDGE * h.norm_squared() / n as f64;
    let mut gram = h * h.adjoint();
    for i in 0..l {
        gram[(i, i)] += Complex64::new(lambda, 0.0);
    }
    let sol = gram
        .cholesky()
        .map(|c| c.solve(&instance.y))
        .expect("regularized Gram matrix is positive definite");
    h.adjoint() * sol
}

#[cfg(test)]
mod tests {
    use super::*;
    use rowamp::model::nmse;
    use rowamp::SystemConfig;

    fn instance(l: usize, n: usize, snr: Option<f64>) -> ProblemInstance {
        let channel = match snr {
            Some(s) => serde_json::json!({"type": "awgn", "covariance": {"kind": "scaled-identity"}, "snr_db": s}),
            None => serde_json::json!({"type": "awgn", "covariance": {"kind": "scaled-identity", "trace": 1e-300}}),
        };
        let cfg: SystemConfig = serde_json::from_value(serde_json::json!({
            "L": l, "N": n, "M": 2,
            "prior": {"type": "gaussian", "covariance": {"kind": "uniform-outer"}},
            "channel": channel, "seed": 3
        }))
        .unwrap();
        rowamp::model::generate_instance(&cfg).unwrap()
    }

    #[test]
    fn noiseless_overdetermined_is_exact() {
        let mut inst = instance(40, 20, None);
        inst.y = &inst.h * &inst.x;
        let est = ls_baseline(&inst);
        assert!(nmse(&inst.x, &est).unwrap().nmse_db < -100.0);
    }

    #[test]
    fn zero_output_gives_zero() {
        for (l, n) in [(30, 10), (10, 30)] {
            let mut inst = instance(l, n, Some(10.0));
            inst.y.fill(Complex64::new(0.0, 0.0));
            assert_eq!(ls_baseline(&inst).norm(), 0.0);
        }
    }

    #[test]
    fn satisfies_normal_equations() {
        let inst = instance(30, 12, Some(5.0));
        let est = ls_baseline(&inst);
        let resid = &inst.h * &est - &inst.y;
        let grad = inst.h.adjoint() * resid;
        assert!(grad.norm() < 1e-10 * inst.y.norm());
    }

    #[test]
    fn underdetermined_fits_the_data() {
        let inst = instance(10, 30, Some(10.0));
        let est = ls_baseline(&inst);
        let resid = (&inst.h * &est - &inst.y).norm() / inst.y.norm();
        assert!(resid < 1e-3, "{resid}");
    }
}
