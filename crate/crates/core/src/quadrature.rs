//! Composite trapezoid helpers shared by the memory-kernel solvers.

/// `∫₀^{(len−1)·dt} f` from uniform samples; zero for fewer than two samples.
pub(crate) fn trapezoid(samples: &[f64], dt: f64) -> f64 {
    match samples.len() {
        0 | 1 => 0.0,
        len => dt * (samples.iter().sum::<f64>() - 0.5 * (samples[0] + samples[len - 1])),
    }
}

/// Weight of sample `m` in the trapezoid rule over samples `0..=last`.
#[inline]
pub(crate) fn weight(m: usize, last: usize, dt: f64) -> f64 {
    if last == 0 {
        0.0
    } else if m == 0 || m == last {
        0.5 * dt
    } else {
        dt
    }
}

/// Trapezoid weights on a sorted, possibly non-uniform list of grid indices:
/// `w[b]` is the weight of node `b` for the integral over `nodes[0..=last]`.
pub(crate) fn node_weight(nodes: &[usize], b: usize, last: usize, dt: f64) -> f64 {
    if last == 0 {
        return 0.0;
    }
    let left = if b > 0 { nodes[b] - nodes[b - 1] } else { 0 };
    let right = if b < last { nodes[b + 1] - nodes[b] } else { 0 };
    0.5 * dt * (left + right) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let dt = 0.1;
        let f: Vec<f64> = (0..=10).map(|k| 3.0 * k as f64 * dt + 1.0).collect();
        assert!((trapezoid(&f, dt) - 2.5).abs() < 1e-14);
        assert_eq!(trapezoid(&f[..1], dt), 0.0);
    }

    #[test]
    fn node_weights_match_uniform() {
        let nodes: Vec<usize> = (0..=6).collect();
        for b in 0..=6 {
            assert!((node_weight(&nodes, b, 6, 0.2) - weight(b, 6, 0.2)).abs() < 1e-15);
        }
        let uneven = [0, 2, 4, 5];
        let total: f64 = (0..4).map(|b| node_weight(&uneven, b, 3, 1.0)).sum();
        assert!((total - 5.0).abs() < 1e-15);
    }
}
