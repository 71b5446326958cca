use nalgebra::{Matrix6, Vector6};

/// Relative off-diagonal size at which the iteration stops.
const TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 64;

/// Eigen-decomposition of a symmetric 6×6 matrix by cyclic Jacobi rotations.
/// Eigenvalues are sorted in descending order; column `i` of the returned
/// matrix is the unit eigenvector of eigenvalue `i`.
pub fn jacobi_eigen(m: &Matrix6<f64>) -> (Vector6<f64>, Matrix6<f64>) {
    let mut a = *m;
    let mut v = Matrix6::<f64>::identity();
    let scale = a.norm();
    if scale > 0.0 {
        for _ in 0..MAX_SWEEPS {
            let off: f64 = (0..6)
                .flat_map(|i| (i + 1..6).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum::<f64>()
                .sqrt();
            if off <= TOLERANCE * scale {
                break;
            }
            for p in 0..5 {
                for q in p + 1..6 {
                    rotate(&mut a, &mut v, p, q);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = Vector6::from_fn(|k, _| a[(order[k], order[k])]);
    let vectors = Matrix6::from_fn(|r, c| v[(r, order[c])]);
    (values, vectors)
}

fn rotate(a: &mut Matrix6<f64>, v: &mut Matrix6<f64>, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    for k in 0..6 {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..6 {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    for k in 0..6 {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}
