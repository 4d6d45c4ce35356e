//! Stable scalar helpers used by the BTL and policy losses.

/// `ln(1 + e^x)` without overflow or catastrophic underflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softplus_reference_points() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(100.0) - 100.0).abs() < 1e-12);
        let tiny = softplus(-100.0);
        assert!(tiny > 0.0);
        assert!((tiny / (-100.0f64).exp() - 1.0).abs() < 1e-12);
        assert!((tiny - 3.720_075_976_020_836e-44).abs() < 1e-56);
    }

    #[test]
    fn sigmoid_is_softplus_derivative() {
        for &x in &[-40.0, -3.0, -0.1, 0.0, 0.7, 5.0, 35.0] {
            let h = 1e-5;
            let fd = (softplus(x + h) - softplus(x - h)) / (2.0 * h);
            assert!((fd - sigmoid(x)).abs() < 1e-8, "x={x}");
        }
    }

    proptest! {
        #[test]
        fn softplus_dominates_relu(x in -200.0f64..200.0) {
            prop_assert!(softplus(x) >= x.max(0.0));
        }

        #[test]
        fn softplus_monotone(x in -200.0f64..200.0, d in 1e-3f64..10.0) {
            prop_assert!(softplus(x + d) >= softplus(x));
        }
    }
}
