//! Surrogate derivative used in place of the Heaviside step during training.

/// Triangular pseudo-derivative `max(0, 1 - |u - θ| / a) / a`.
///
/// Peaks at `1/a` on the threshold, has support `(θ - a, θ + a)` and unit area.
pub fn triangular(potential: f32, threshold: f32, width: f32) -> f32 {
    let t = 1.0 - (potential - threshold).abs() / width;
    if t > 0.0 {
        t / width
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trapezoid(width: f32, threshold: f32) -> f64 {
        let steps = 20_000;
        let lo = threshold as f64 - 2.0 * width as f64;
        let hi = threshold as f64 + 2.0 * width as f64;
        let h = (hi - lo) / steps as f64;
        let f = |x: f64| triangular(x as f32, threshold, width) as f64;
        let mut acc = 0.5 * (f(lo) + f(hi));
        for i in 1..steps {
            acc += f(lo + i as f64 * h);
        }
        acc * h
    }

    #[test]
    fn peak_is_inverse_width() {
        for a in [0.5f32, 1.0, 2.0] {
            assert!((triangular(1.0, 1.0, a) - 1.0 / a).abs() < 1e-7);
        }
    }

    #[test]
    fn support_has_width_two_a() {
        let (theta, a) = (1.0f32, 0.5f32);
        assert!(triangular(theta + a, theta, a) == 0.0);
        assert!(triangular(theta - a, theta, a) == 0.0);
        assert!(triangular(theta + 0.99 * a, theta, a) > 0.0);
        assert!(triangular(theta - 0.99 * a, theta, a) > 0.0);
        assert!(triangular(theta + 1.5 * a, theta, a) == 0.0);
    }

    #[test]
    fn integrates_to_one() {
        for a in [0.25f32, 1.0, 3.0] {
            assert!((trapezoid(a, 1.0) - 1.0).abs() < 1e-3, "width {a}");
        }
    }
}
