//! Cubic Hermite element on `[x0, x0 + h]`.
//!
//! Local dofs are ordered `[u(x0), u'(x0), u(x0+h), u'(x0+h)]`.

/// Gauss–Legendre nodes on `[0, 1]`, 6 points (exact through degree 11).
pub const GAUSS6_NODES: [f64; 6] = [
    0.033_765_242_898_423_975,
    0.169_395_306_766_867_76,
    0.380_690_406_958_401_5,
    0.619_309_593_041_598_5,
    0.830_604_693_233_132_2,
    0.966_234_757_101_576,
];

pub const GAUSS6_WEIGHTS: [f64; 6] = [
    0.085_662_246_189_584_87,
    0.180_380_786_524_069_47,
    0.233_956_967_286_345_69,
    0.233_956_967_286_345_69,
    0.180_380_786_524_069_47,
    0.085_662_246_189_584_87,
];

/// Values of the four shape functions and their first three x-derivatives
/// at local coordinate `xi` in `[0, 1]`. `out[d][k]` is `d^d N_k / dx^d`.
pub fn shape(xi: f64, h: f64) -> [[f64; 4]; 4] {
    let x2 = xi * xi;
    let x3 = x2 * xi;
    let v = [
        1.0 - 3.0 * x2 + 2.0 * x3,
        h * (xi - 2.0 * x2 + x3),
        3.0 * x2 - 2.0 * x3,
        h * (x3 - x2),
    ];
    let d1 = [
        (-6.0 * xi + 6.0 * x2) / h,
        1.0 - 4.0 * xi + 3.0 * x2,
        (6.0 * xi - 6.0 * x2) / h,
        3.0 * x2 - 2.0 * xi,
    ];
    let h2 = h * h;
    let d2 = [
        (-6.0 + 12.0 * xi) / h2,
        (-4.0 + 6.0 * xi) / h,
        (6.0 - 12.0 * xi) / h2,
        (6.0 * xi - 2.0) / h,
    ];
    let h3 = h2 * h;
    let d3 = [12.0 / h3, 6.0 / h2, -12.0 / h3, 6.0 / h2];
    [v, d1, d2, d3]
}

/// Consistent mass matrix, `∫ N_a N_b dx`.
pub fn mass(h: f64) -> [[f64; 4]; 4] {
    let c = h / 420.0;
    let h2 = h * h;
    [
        [156.0 * c, 22.0 * h * c, 54.0 * c, -13.0 * h * c],
        [22.0 * h * c, 4.0 * h2 * c, 13.0 * h * c, -3.0 * h2 * c],
        [54.0 * c, 13.0 * h * c, 156.0 * c, -22.0 * h * c],
        [-13.0 * h * c, -3.0 * h2 * c, -22.0 * h * c, 4.0 * h2 * c],
    ]
}

/// `∫ N_a' N_b' dx`.
pub fn stiffness1(h: f64) -> [[f64; 4]; 4] {
    let c = 1.0 / (30.0 * h);
    let h2 = h * h;
    [
        [36.0 * c, 3.0 * h * c, -36.0 * c, 3.0 * h * c],
        [3.0 * h * c, 4.0 * h2 * c, -3.0 * h * c, -h2 * c],
        [-36.0 * c, -3.0 * h * c, 36.0 * c, -3.0 * h * c],
        [3.0 * h * c, -h2 * c, -3.0 * h * c, 4.0 * h2 * c],
    ]
}

/// `∫ N_a'' N_b'' dx`.
pub fn stiffness2(h: f64) -> [[f64; 4]; 4] {
    let c = 1.0 / (h * h * h);
    let h2 = h * h;
    [
        [12.0 * c, 6.0 * h * c, -12.0 * c, 6.0 * h * c],
        [6.0 * h * c, 4.0 * h2 * c, -6.0 * h * c, 2.0 * h2 * c],
        [-12.0 * c, -6.0 * h * c, 12.0 * c, -6.0 * h * c],
        [6.0 * h * c, 2.0 * h2 * c, -6.0 * h * c, 4.0 * h2 * c],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadrature(h: f64, d: usize) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for (xi, w) in GAUSS6_NODES.iter().zip(GAUSS6_WEIGHTS) {
            let s = shape(*xi, h)[d];
            for a in 0..4 {
                for b in 0..4 {
                    out[a][b] += w * h * s[a] * s[b];
                }
            }
        }
        out
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for h in [1.0, 0.25, 0.03125, 1.7] {
            for (d, closed) in [(0, mass(h)), (1, stiffness1(h)), (2, stiffness2(h))] {
                let q = quadrature(h, d);
                for a in 0..4 {
                    for b in 0..4 {
                        let scale = closed[a][a].abs().max(closed[b][b].abs());
                        assert!((q[a][b] - closed[a][b]).abs() <= 1e-13 * scale, "d={d} h={h}");
                    }
                }
            }
        }
    }

    #[test]
    fn shape_functions_interpolate_nodal_data() {
        let h = 0.3;
        let s0 = shape(0.0, h);
        let s1 = shape(1.0, h);
        assert_eq!(s0[0], [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(s1[0], [0.0, 0.0, 1.0, 0.0]);
        for k in 0..4 {
            let expect0 = if k == 1 { 1.0 } else { 0.0 };
            let expect1 = if k == 3 { 1.0 } else { 0.0 };
            assert!((s0[1][k] - expect0).abs() < 1e-15);
            assert!((s1[1][k] - expect1).abs() < 1e-15);
        }
    }

    #[test]
    fn gauss_rule_integrates_degree_eleven() {
        let exact = 1.0 / 12.0;
        let q: f64 = GAUSS6_NODES
            .iter()
            .zip(GAUSS6_WEIGHTS)
            .map(|(x, w)| w * x.powi(11))
            .sum();
        assert!((q - exact).abs() < 1e-15);
        assert!((GAUSS6_WEIGHTS.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
