//! Finite-difference weights on arbitrary node sets (Fornberg's recursion).

/// Weights `c[m][j]` such that `f^(m)(x0) ≈ Σ_j c[m][j] f(nodes[j])` for `m = 0..=max_order`.
pub fn fornberg(x0: f64, nodes: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Index window used for a derivative at position `i` of an `n`-point axis:
/// centred three points in the interior, one-sided at the ends. `width` is 3
/// for first derivatives and 4 for one-sided second derivatives.
pub fn window(i: usize, n: usize, one_sided_width: usize) -> std::ops::Range<usize> {
    if i > 0 && i + 1 < n {
        i - 1..i + 2
    } else if i == 0 {
        0..one_sided_width.min(n)
    } else {
        n.saturating_sub(one_sided_width)..n
    }
}

/// First and second derivative at every node of `values` sampled on `axis`,
/// second-order accurate throughout.
pub fn derivatives(axis: &[f64], values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = axis.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 0..n {
        let r = window(i, n, 3);
        let w = fornberg(axis[i], &axis[r.clone()], 1);
        d1[i] = w[1].iter().zip(&values[r]).map(|(a, b)| a * b).sum();
        let r = window(i, n, 4);
        let w = fornberg(axis[i], &axis[r.clone()], 2);
        d2[i] = w[2].iter().zip(&values[r]).map(|(a, b)| a * b).sum();
    }
    (d1, d2)
}

/// Second-order first derivative only.
pub fn first_derivative(axis: &[f64], values: &[f64]) -> Vec<f64> {
    let n = axis.len();
    (0..n)
        .map(|i| {
            let r = window(i, n, 3);
            let w = fornberg(axis[i], &axis[r.clone()], 1);
            w[1].iter().zip(&values[r]).map(|(a, b)| a * b).sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_central_weights() {
        let w = fornberg(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(w[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(w[2], vec![1.0, -2.0, 1.0]);
    }

    #[test]
    fn one_sided_second_derivative() {
        let w = fornberg(0.0, &[0.0, 1.0, 2.0, 3.0], 2);
        for (a, b) in w[2].iter().zip([2.0, -5.0, 4.0, -1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_on_quadratics_with_uneven_nodes() {
        let axis = [0.1, 0.15, 0.4, 0.45, 1.0, 1.7];
        let vals: Vec<f64> = axis.iter().map(|t| t * t).collect();
        let (d1, d2) = derivatives(&axis, &vals);
        for (i, t) in axis.iter().enumerate() {
            assert!((d1[i] - 2.0 * t).abs() < 1e-12);
            assert!((d2[i] - 2.0).abs() < 1e-10);
        }
    }
}
