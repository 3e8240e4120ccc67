//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Relative threshold for numerical rank and kernel decisions.
pub const KERNEL_RTOL: f64 = 1e-10;

/// Singular values (descending) and the full right singular basis of `m`.
/// Wide matrices are padded with zero rows so that every column of V is returned.
fn svd_full(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    if c == 0 {
        return (vec![], DMatrix::zeros(0, 0));
    }
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut idx: Vec<usize> = (0..c).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(c, c);
    for (k, &i) in idx.iter().enumerate() {
        v.set_column(k, &vt.row(i).transpose());
    }
    (sv, v)
}

fn svd_full_c(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let (r, c) = m.shape();
    if c == 0 {
        return (vec![], DMatrix::zeros(0, 0));
    }
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut idx: Vec<usize> = (0..c).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let mut v = DMatrix::zeros(c, c);
    for (k, &i) in idx.iter().enumerate() {
        v.set_column(k, &vt.row(i).adjoint());
    }
    (sv, v)
}

fn count_above(sv: &[f64], abs_tol: f64) -> usize {
    sv.iter().filter(|&&s| s > abs_tol).count()
}

/// Absolute cut-off for a matrix with singular values `sv`.
fn cutoff(sv: &[f64], rtol: f64) -> f64 {
    rtol * sv.first().copied().unwrap_or(0.0)
}

pub fn rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    let (sv, _) = svd_full(m);
    count_above(&sv, cutoff(&sv, rtol))
}

fn rank_abs(m: &DMatrix<f64>, abs_tol: f64) -> usize {
    let (sv, _) = svd_full(m);
    count_above(&sv, abs_tol)
}

/// Orthonormal basis of the kernel, singular values below `rtol * sigma_max` count as zero.
pub fn null_space(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (sv, v) = svd_full(m);
    let k = count_above(&sv, cutoff(&sv, rtol));
    v.columns(k, v.ncols() - k).into_owned()
}

pub fn null_space_abs(m: &DMatrix<f64>, abs_tol: f64) -> DMatrix<f64> {
    let (sv, v) = svd_full(m);
    let k = count_above(&sv, abs_tol);
    v.columns(k, v.ncols() - k).into_owned()
}

pub fn null_space_c(m: &DMatrix<C64>, rtol: f64) -> DMatrix<C64> {
    let (sv, v) = svd_full_c(m);
    let k = count_above(&sv, cutoff(&sv, rtol));
    v.columns(k, v.ncols() - k).into_owned()
}

/// Orthonormal basis of the column space.
pub fn orth(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    orth_abs(m, cutoff(&singular_values(m), rtol))
}

fn orth_abs(m: &DMatrix<f64>, abs_tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested u");
    let mut cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > abs_tol)
        .collect();
    cols.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = DMatrix::zeros(m.nrows(), cols.len());
    for (k, &i) in cols.iter().enumerate() {
        out.set_column(k, &u.column(i));
    }
    out
}

/// Orthonormal basis of the orthogonal complement of the column space.
fn orth_complement_abs(m: &DMatrix<f64>, abs_tol: f64) -> DMatrix<f64> {
    null_space_abs(&m.transpose(), abs_tol)
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    svd_full(m).0
}

pub fn singular_values_c(m: &DMatrix<C64>) -> Vec<f64> {
    svd_full_c(m).0
}

/// Intersection of two subspaces given by basis columns.
pub fn intersect(a: &DMatrix<f64>, b: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    if a.ncols() == 0 || b.ncols() == 0 {
        return DMatrix::zeros(n, 0);
    }
    let mut stacked = DMatrix::zeros(n, a.ncols() + b.ncols());
    stacked.view_mut((0, 0), (n, a.ncols())).copy_from(a);
    stacked
        .view_mut((0, a.ncols()), (n, b.ncols()))
        .copy_from(&(-b));
    let k = null_space(&stacked, rtol);
    let coords = k.rows(0, a.ncols()).into_owned();
    orth(&(a * coords), rtol)
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let se = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigensolver("symmetric eigen-decomposition".into()))?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let vals = idx.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &se.eigenvectors.column(i));
    }
    Ok((vals, vecs))
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>> {
    if m.nrows() == 0 {
        return Ok(vec![]);
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entries".into()));
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Eigensolver("Schur decomposition".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().exp()
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Where the matrix pencil `lambda * E + F` loses column rank.
#[derive(Debug, Clone, PartialEq)]
pub enum RankDrops {
    /// The pencil has a non-trivial kernel for every `lambda`.
    Everywhere,
    /// Candidate values, possibly empty. Candidates still need verification.
    Finite(Vec<C64>),
}

/// Locate the values where `lambda * E + F` has a non-trivial kernel.
///
/// Works by repeated deflation of the kernel of `E`, so it handles
/// rectangular pencils and singular leading matrices; `tol` is absolute.
pub fn pencil_rank_drops(e: &DMatrix<f64>, f: &DMatrix<f64>, tol: f64) -> Result<RankDrops> {
    let (p, q) = e.shape();
    if q == 0 {
        return Ok(RankDrops::Finite(vec![]));
    }
    if p < q {
        return Ok(RankDrops::Everywhere);
    }
    let (sv, v) = svd_full(e);
    let k = count_above(&sv, tol);
    if k == q {
        // Rows outside range(E) must be annihilated by F alone.
        let q2 = orth_complement_abs(e, tol);
        let z = if q2.ncols() == 0 {
            DMatrix::identity(q, q)
        } else {
            null_space_abs(&(q2.transpose() * f), tol)
        };
        if z.ncols() == 0 {
            return Ok(RankDrops::Finite(vec![]));
        }
        if z.ncols() < q {
            return pencil_rank_drops(&(e * &z), &(f * &z), tol);
        }
        let pinv = e
            .clone()
            .pseudo_inverse(tol)
            .map_err(|s| Error::Numeric(s.to_string()))?;
        return Ok(RankDrops::Finite(eigenvalues(&(-(pinv * f)))?));
    }
    let v1 = v.columns(0, k).into_owned();
    let v0 = v.columns(k, q - k).into_owned();
    let g = f * &v0;
    if rank_abs(&g, tol) < q - k {
        return Ok(RankDrops::Everywhere);
    }
    let q0 = orth_complement_abs(&g, tol);
    let e2 = q0.transpose() * e * &v1;
    let f2 = q0.transpose() * f * &v1;
    pencil_rank_drops(&e2, &f2, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_wide_matrix_is_complete() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let k = null_space(&m, KERNEL_RTOL);
        assert_eq!(k.ncols(), 2);
        assert!((&m * &k).norm() < 1e-12);
        assert!((k.transpose() * &k - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn intersection_of_planes_is_a_line() {
        let a = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let b = DMatrix::from_column_slice(3, 2, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let i = intersect(&a, &b, KERNEL_RTOL);
        assert_eq!(i.ncols(), 1);
        assert!((i[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn square_pencil_drops_at_generalized_eigenvalues() {
        // lambda I + F loses rank at the eigenvalues of -F.
        let f = DMatrix::from_row_slice(2, 2, &[-2.0, 0.0, 0.0, 3.0]);
        let e = DMatrix::identity(2, 2);
        let RankDrops::Finite(mut d) = pencil_rank_drops(&e, &f, 1e-12).unwrap() else {
            panic!("expected finite drops");
        };
        d.sort_by(|a, b| a.re.total_cmp(&b.re));
        assert!((d[0].re + 3.0).abs() < 1e-12 && (d[1].re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_leading_matrix_deflates() {
        // x' = -x + u, y = x has no invariant zeros.
        let e = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let f = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 0.0]);
        assert_eq!(
            pencil_rank_drops(&e, &f, 1e-12).unwrap(),
            RankDrops::Finite(vec![])
        );
        // Kernel needs x1 = 0, then x2 (s + a) = 0.
        let a = 0.7;
        let e = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let f = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 1.0, -1.0, a, 0.0, -1.0, 0.0, 0.0]);
        let RankDrops::Finite(d) = pencil_rank_drops(&e, &f, 1e-12).unwrap() else {
            panic!("expected finite drops");
        };
        assert_eq!(d.len(), 1);
        assert!((d[0].re + a).abs() < 1e-12);
    }

    #[test]
    fn tall_pencil_without_common_drop() {
        let e = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let f = DMatrix::from_row_slice(2, 1, &[-1.0, -2.0]);
        assert_eq!(
            pencil_rank_drops(&e, &f, 1e-12).unwrap(),
            RankDrops::Finite(vec![])
        );
        let f = DMatrix::from_row_slice(2, 1, &[-2.0, -2.0]);
        let RankDrops::Finite(d) = pencil_rank_drops(&e, &f, 1e-12).unwrap() else {
            panic!()
        };
        assert_eq!(d.len(), 1);
        assert!((d[0].re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wide_pencil_drops_everywhere() {
        let e = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let f = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        assert_eq!(
            pencil_rank_drops(&e, &f, 1e-12).unwrap(),
            RankDrops::Everywhere
        );
    }
}
