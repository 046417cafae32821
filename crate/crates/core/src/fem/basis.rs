//! Quadratic Lagrange basis on triangles and the quadrature rules used with it.
//!
//! Local node order: vertices 0, 1, 2 then the midpoints of edges
//! (0,1), (1,2), (2,0). Points are given in barycentric coordinates.

/// Local vertex pairs spanned by the three edge nodes.
pub const EDGE_LOCAL: [[usize; 2]; 3] = [[0, 1], [1, 2], [2, 0]];

/// 7-point rule exact for polynomials of degree 5; weights sum to 1.
pub const QUAD_POINTS: [[f64; 3]; 7] = {
    const A1: f64 = 0.101_286_507_323_456_338_800_987_361_915_123;
    const B1: f64 = 0.797_426_985_353_087_322_398_025_276_169_754;
    const A2: f64 = 0.470_142_064_105_115_089_770_441_209_513_447;
    const B2: f64 = 0.059_715_871_789_769_820_459_117_580_973_106;
    const C: f64 = 1.0 / 3.0;
    [
        [C, C, C],
        [A1, A1, B1],
        [A1, B1, A1],
        [B1, A1, A1],
        [A2, A2, B2],
        [A2, B2, A2],
        [B2, A2, A2],
    ]
};

pub const QUAD_WEIGHTS: [f64; 7] = {
    const W1: f64 = 0.125_939_180_544_827_152_595_683_945_500_181;
    const W2: f64 = 0.132_394_152_788_506_180_737_649_387_833_153;
    [0.225, W1, W1, W1, W2, W2, W2]
};

/// Two-point Gauss rule on `[0, 1]`: (parameter, weight).
pub const EDGE_GAUSS: [(f64, f64); 2] = [
    (0.211_324_865_405_187_117_745_425_609_749_021, 0.5),
    (0.788_675_134_594_812_882_254_574_390_250_979, 0.5),
];

pub fn p2_values(l: [f64; 3]) -> [f64; 6] {
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ]
}

/// Physical gradients of the six basis functions given the (constant)
/// gradients of the barycentric coordinates.
pub fn p2_gradients(l: [f64; 3], gl: &[[f64; 2]; 3]) -> [[f64; 2]; 6] {
    let mut g = [[0.0; 2]; 6];
    for i in 0..3 {
        let s = 4.0 * l[i] - 1.0;
        g[i] = [s * gl[i][0], s * gl[i][1]];
    }
    for (k, &[a, b]) in EDGE_LOCAL.iter().enumerate() {
        g[3 + k] = [
            4.0 * (l[a] * gl[b][0] + l[b] * gl[a][0]),
            4.0 * (l[a] * gl[b][1] + l[b] * gl[a][1]),
        ];
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Exact integral of l0^a l1^b l2^c over a triangle of unit area.
    fn bary_monomial(a: u32, b: u32, c: u32) -> f64 {
        2.0 * factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 2)
    }

    #[test]
    fn rule_is_exact_to_degree_five() {
        assert!((QUAD_WEIGHTS.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for p in &QUAD_POINTS {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        for a in 0..=5u32 {
            for b in 0..=5 - a {
                for c in 0..=5 - a - b {
                    let q: f64 = QUAD_POINTS
                        .iter()
                        .zip(QUAD_WEIGHTS)
                        .map(|(l, w)| {
                            w * l[0].powi(a as i32) * l[1].powi(b as i32) * l[2].powi(c as i32)
                        })
                        .sum();
                    assert!((q - bary_monomial(a, b, c)).abs() < 1e-15, "({a},{b},{c})");
                }
            }
        }
    }

    #[test]
    fn gauss_edge_rule_is_exact_to_degree_three() {
        for k in 0..=3 {
            let q: f64 = EDGE_GAUSS.iter().map(|&(s, w)| w * s.powi(k)).sum();
            assert!((q - 1.0 / (k as f64 + 1.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn nodal_basis_property() {
        let nodes = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.5, 0.5, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
        ];
        for (i, n) in nodes.iter().enumerate() {
            let v = p2_values(*n);
            for (j, vj) in v.iter().enumerate() {
                assert_eq!(*vj, if i == j { 1.0 } else { 0.0 });
            }
        }
        let v = p2_values([0.2, 0.3, 0.5]);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradients_sum_to_zero() {
        let gl = [[-1.0, -0.5], [1.0, -0.5], [0.0, 1.0]];
        let g = p2_gradients([0.2, 0.3, 0.5], &gl);
        let sx: f64 = g.iter().map(|v| v[0]).sum();
        let sy: f64 = g.iter().map(|v| v[1]).sum();
        assert!(sx.abs() < 1e-14 && sy.abs() < 1e-14);
    }
}
