/// Standard normal cumulative distribution function.
///
/// Evaluated as `erfc(-x/√2) / 2`, which keeps full relative precision in the
/// lower tail where `1 + erf(x/√2)` would cancel.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson integration of the density from -40 to `x`.
    fn cdf_by_quadrature(x: f64) -> f64 {
        let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let (a, n) = (-40.0, 20_000);
        let h = (x - a) / n as f64;
        let mut s = pdf(a) + pdf(x);
        for i in 1..n {
            let t = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(t);
        }
        s * h / 3.0
    }

    #[test]
    fn reference_points() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(-1.6448536) - 0.05).abs() < 1e-6);
        assert!((normal_cdf(-1.6448536) - cdf_by_quadrature(-1.6448536)).abs() < 1e-10);
        assert!((normal_cdf(8.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strictly_increasing_on_grid() {
        // Above x ≈ 7.5 neighbouring values differ by less than one ulp of 1.0,
        // so strictness is only checked below that.
        let grid: Vec<f64> = (0..10_000)
            .map(|i| -8.0 + 15.0 * i as f64 / 9_999.0)
            .collect();
        for w in grid.windows(2) {
            assert!(
                normal_cdf(w[1]) > normal_cdf(w[0]),
                "not increasing at {}",
                w[0]
            );
        }
        let wide: Vec<f64> = (0..10_000)
            .map(|i| -8.0 + 16.0 * i as f64 / 9_999.0)
            .collect();
        for w in wide.windows(2) {
            assert!(normal_cdf(w[1]) >= normal_cdf(w[0]));
        }
    }
}
