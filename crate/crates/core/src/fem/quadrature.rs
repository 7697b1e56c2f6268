//! Quadrature rules: Gauss-Legendre on [0, 1], Gauss-Lobatto nodes for the
//! lumped 1D elements, and symmetric triangle rules.

/// Gauss-Legendre nodes and weights on [0, 1]; exact for degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Tabulated on [-1, 1], shifted below.
    let (x, w): (Vec<f64>, Vec<f64>) = match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => (
            vec![
                -0.8611363115940526,
                -0.3399810435848563,
                0.3399810435848563,
                0.8611363115940526,
            ],
            vec![
                0.3478548451374538,
                0.6521451548625461,
                0.6521451548625461,
                0.3478548451374538,
            ],
        ),
        5 => (
            vec![
                -0.9061798459386640,
                -0.5384693101056831,
                0.0,
                0.5384693101056831,
                0.9061798459386640,
            ],
            vec![
                0.2369268850561891,
                0.4786286704993665,
                0.5688888888888889,
                0.4786286704993665,
                0.2369268850561891,
            ],
        ),
        6 => (
            vec![
                -0.9324695142031521,
                -0.6612093864662645,
                -0.2386191860831969,
                0.2386191860831969,
                0.6612093864662645,
                0.9324695142031521,
            ],
            vec![
                0.1713244923791704,
                0.3607615730481386,
                0.4679139345726910,
                0.4679139345726910,
                0.3607615730481386,
                0.1713244923791704,
            ],
        ),
        8 => (
            vec![
                -0.9602898564975363,
                -0.7966664774136267,
                -0.5255324099163290,
                -0.1834346424956498,
                0.1834346424956498,
                0.5255324099163290,
                0.7966664774136267,
                0.9602898564975363,
            ],
            vec![
                0.1012285362903763,
                0.2223810344533745,
                0.3137066458778873,
                0.3626837833783620,
                0.3626837833783620,
                0.3137066458778873,
                0.2223810344533745,
                0.1012285362903763,
            ],
        ),
        _ => panic!("gauss_legendre: unsupported point count {n}"),
    };
    (
        x.iter().map(|t| 0.5 * (t + 1.0)).collect(),
        w.iter().map(|t| 0.5 * t).collect(),
    )
}

/// Gauss-Lobatto nodes on [0, 1] for `order + 1` points, with weights.
/// These are the 1D element nodes; the weights are the order-preserving
/// lumped mass entries. Exact for degree `2(order + 1) - 3`.
pub fn gauss_lobatto(order: usize) -> (Vec<f64>, Vec<f64>) {
    match order {
        1 => (vec![0.0, 1.0], vec![0.5, 0.5]),
        2 => (vec![0.0, 0.5, 1.0], vec![1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0]),
        3 => {
            let a = 1.0 / 5f64.sqrt();
            (
                vec![0.0, 0.5 * (1.0 - a), 0.5 * (1.0 + a), 1.0],
                vec![1.0 / 12.0, 5.0 / 12.0, 5.0 / 12.0, 1.0 / 12.0],
            )
        }
        _ => panic!("gauss_lobatto: unsupported order {order}"),
    }
}

/// Symmetric quadrature on the reference triangle in barycentric form.
/// Weights are normalized to sum to 1 (multiply by the element area).
pub fn triangle_rule(min_degree: usize) -> &'static [([f64; 3], f64)] {
    const D2: [([f64; 3], f64); 3] = [
        ([4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
        ([1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0], 1.0 / 3.0),
        ([1.0 / 6.0, 1.0 / 6.0, 4.0 / 6.0], 1.0 / 3.0),
    ];
    const A1: f64 = 0.445948490915965;
    const B1: f64 = 1.0 - 2.0 * A1;
    const W1: f64 = 0.223381589678011;
    const A2: f64 = 0.091576213509771;
    const B2: f64 = 1.0 - 2.0 * A2;
    const W2: f64 = 0.109951743655322;
    const D4: [([f64; 3], f64); 6] = [
        ([A1, A1, B1], W1),
        ([A1, B1, A1], W1),
        ([B1, A1, A1], W1),
        ([A2, A2, B2], W2),
        ([A2, B2, A2], W2),
        ([B2, A2, A2], W2),
    ];
    const C1: f64 = 0.470142064105115;
    const D1: f64 = 1.0 - 2.0 * C1;
    const V1: f64 = 0.132394152788506;
    const C2: f64 = 0.101286507323456;
    const D2B: f64 = 1.0 - 2.0 * C2;
    const V2: f64 = 0.125939180544827;
    const D5: [([f64; 3], f64); 7] = [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 9.0 / 40.0),
        ([C1, C1, D1], V1),
        ([C1, D1, C1], V1),
        ([D1, C1, C1], V1),
        ([C2, C2, D2B], V2),
        ([C2, D2B, C2], V2),
        ([D2B, C2, C2], V2),
    ];
    match min_degree {
        0..=2 => &D2,
        3..=4 => &D4,
        5 => &D5,
        _ => panic!("triangle_rule: unsupported degree {min_degree}"),
    }
}

/// Values of the Lagrange basis on the given nodes at point `x`.
pub fn lagrange_values(nodes: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut vals = vec![1.0; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                vals[i] *= (x - nodes[j]) / (nodes[i] - nodes[j]);
            }
        }
    }
    vals
}

/// Derivatives of the Lagrange basis on the given nodes at point `x`.
pub fn lagrange_derivs(nodes: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut ders = vec![0.0; n];
    for i in 0..n {
        let mut sum = 0.0;
        for k in 0..n {
            if k == i {
                continue;
            }
            let mut term = 1.0 / (nodes[i] - nodes[k]);
            for j in 0..n {
                if j != i && j != k {
                    term *= (x - nodes[j]) / (nodes[i] - nodes[j]);
                }
            }
            sum += term;
        }
        ders[i] = sum;
    }
    ders
}
