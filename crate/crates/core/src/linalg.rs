//! Small dense helpers shared by the filter and the analysis code.

use faer::{c64, Mat};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            let mut blk = out.view_mut((i * br, j * bc), (br, bc));
            blk.copy_from(b);
            blk *= s;
        }
    }
    out
}

/// Block-diagonal matrix from square or rectangular blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `m^k` by repeated squaring; `m^0 = I`.
pub fn mat_pow(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    assert!(m.is_square(), "mat_pow needs a square matrix");
    let mut result = DMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Maximum eigenvalue modulus.
///
/// Runs a balancing pass first, then refines clusters: the closed-loop
/// matrices here inherit the Jordan structure of the NCV transition, and a
/// defective eigenvalue of multiplicity m comes back from any backward-stable
/// solver split into a ring of radius ~ε^(1/m). The cluster mean is well
/// conditioned, so each tight cluster is replaced by its mean.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(distinct_eigenvalues(m)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Eigenvalues with tight clusters merged into their means.
pub fn distinct_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<c64>> {
    let eig = eigenvalues(m)?;
    let scale = eig.iter().map(|z| z.norm()).fold(1.0, f64::max);
    Ok(cluster_means(&eig, 8.0 * f64::EPSILON.sqrt() * scale))
}

/// All eigenvalues of a finite square matrix (balanced first).
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<c64>> {
    check_square_finite(m)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    to_faer(&balance(m.clone()))
        .eigenvalues()
        .map_err(|e| Error::NumericFailure(format!("eigensolver: {e:?}")))
}

fn check_square_finite(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::param(format!(
            "spectral radius of non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("non-finite matrix entry".into()));
    }
    Ok(())
}

pub(crate) fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Single-linkage clusters of points closer than `tol`, each replaced by its mean.
fn cluster_means(z: &[c64], tol: f64) -> Vec<c64> {
    let n = z.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (z[i] - z[j]).norm() < tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    let mut sums: std::collections::BTreeMap<usize, (c64, usize)> = Default::default();
    for (i, &zi) in z.iter().enumerate() {
        let r = find(&mut parent, i);
        let e = sums.entry(r).or_insert((c64::new(0.0, 0.0), 0));
        e.0 += zi;
        e.1 += 1;
    }
    sums.values().map(|(s, c)| *s / *c as f64).collect()
}

/// Parlett-Reinsch diagonal similarity scaling with powers of two.
pub(crate) fn balance(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let radix = 2.0_f64;
    let sqrdx = radix * radix;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut g = r / radix;
            let mut f = 1.0;
            let s = c + r;
            while c < g {
                f *= radix;
                c *= sqrdx;
            }
            g = r * radix;
            while c > g {
                f /= radix;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let inv = 1.0 / f;
                for j in 0..n {
                    a[(i, j)] *= inv;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
    }
    a
}

/// Numeric rank with the threshold `max_dim · σ_max · rel_tol`.
pub fn numeric_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let thresh = m.nrows().max(m.ncols()) as f64 * smax * rel_tol;
    sv.iter().filter(|&&s| s > thresh).count()
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_shapes_and_entries() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let k = kron(&a, &b);
        assert_eq!(k.shape(), (2, 4));
        assert_eq!(
            k.row(1).iter().cloned().collect::<Vec<_>>(),
            vec![0.0, 3.0, 0.0, 4.0]
        );
    }

    #[test]
    fn mat_pow_matches_repeated_product() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        let p = mat_pow(&m, 5);
        assert_eq!(p[(0, 1)], 2.5);
        assert_eq!(mat_pow(&m, 0), DMatrix::identity(2, 2));
    }

    #[test]
    fn spectral_radius_basics() {
        assert!((spectral_radius(&DMatrix::identity(6, 6)).unwrap() - 1.0).abs() < 1e-12);
        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(spectral_radius(&nil).unwrap().abs() < 1e-12);
        let rect = DMatrix::<f64>::zeros(2, 3);
        assert!(matches!(
            spectral_radius(&rect),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn defective_kron_radius_is_exact() {
        // W ⊗ F with W stochastic and F a double Jordan block at 1.
        let w = DMatrix::from_fn(6, 6, |i, j| {
            if i == j || (i + 1) % 6 == j || (j + 1) % 6 == i {
                1.0 / 3.0
            } else {
                0.0
            }
        });
        let mut f = DMatrix::identity(6, 6);
        for a in 0..3 {
            f[(a, a + 3)] = 1.0;
        }
        let r = spectral_radius(&kron(&w, &f)).unwrap();
        assert!((r - 1.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn cluster_means_leave_separated_points() {
        let z = vec![c64::new(0.5, 0.0), c64::new(-0.5, 0.0), c64::new(0.5, 1e-9)];
        let mut m: Vec<f64> = cluster_means(&z, 1e-7).iter().map(|c| c.re).collect();
        m.sort_by(f64::total_cmp);
        assert_eq!(m, vec![-0.5, 0.5]);
    }

    #[test]
    fn rank_of_rank_one() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(numeric_rank(&m, 1e-12), 1);
        assert_eq!(numeric_rank(&DMatrix::zeros(3, 3), 1e-12), 0);
    }
}
