//! Dense symmetric linear algebra used by the scoring pipeline: scatter
//! matrices, a generalized symmetric eigensolver based on Cholesky
//! whitening, power iteration for the largest eigenvalue, nuclear norm,
//! and a numerically safe softmax.
//!
//! All functions are pure; inputs are f64 and row-major.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayViewMut1};

use crate::error::{Error, Result};

/// Between/within scatter decomposition of a labeled feature matrix.
#[derive(Debug, Clone)]
pub struct ScatterMatrices {
    /// S_B, shape (D, D): scatter of class means around the global mean,
    /// weighted by class size.
    pub between: Array2<f64>,
    /// S_W, shape (D, D): scatter of samples around their class mean.
    pub within: Array2<f64>,
    /// Global mean, length D.
    pub mean: Array1<f64>,
    /// Per-class means, shape (C, D).
    pub class_means: Array2<f64>,
    /// Per-class sample counts, length C.
    pub class_counts: Vec<usize>,
}

/// Eigenpairs sorted by descending eigenvalue; column `i` of `vectors`
/// pairs with `values[i]`.
///
/// Vectors from [`symmetric_eig`] have unit Euclidean norm. Vectors from
/// the generalized solvers are B-normalized instead (`uᵀBu = 1`), which
/// is the discriminant-analysis convention.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().copied())
}

fn column_major_to_array(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Computes between- and within-class scatter of `features` (N, D) under
/// `labels` (class ids in `[0, num_classes)`).
///
/// Class means are arithmetic means. `S_B = Σ_c N_c (μ_c−μ)(μ_c−μ)ᵀ` and
/// `S_W = Σ_c Σ_n (x_n−μ_c)(x_n−μ_c)ᵀ`, so `S_B + S_W` equals the total
/// scatter around the global mean.
pub fn scatter_matrices(
    features: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
) -> Result<ScatterMatrices> {
    let n = features.nrows();
    let d = features.ncols();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: n,
            got: labels.len(),
        });
    }
    if n < 2 || num_classes < 2 {
        return Err(Error::InvalidParameter {
            name: "scatter_matrices",
            message: format!("need N >= 2 and C >= 2, got N = {n}, C = {num_classes}"),
        });
    }
    for (index, &label) in labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                num_classes,
            });
        }
    }

    let mut class_counts = vec![0usize; num_classes];
    let mut class_sums = Array2::<f64>::zeros((num_classes, d));
    for (row, &label) in features.outer_iter().zip(labels) {
        class_counts[label] += 1;
        let mut sum = class_sums.row_mut(label);
        sum += &row;
    }
    if let Some(class) = class_counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass { class });
    }

    let mut class_means = class_sums;
    for (mut row, &count) in class_means.outer_iter_mut().zip(&class_counts) {
        row /= count as f64;
    }
    let mean = class_means
        .outer_iter()
        .zip(&class_counts)
        .fold(Array1::<f64>::zeros(d), |acc, (row, &count)| {
            acc + &row * count as f64
        })
        / n as f64;

    let h = between_factor(&class_means, &mean, &class_counts);
    let mut between = h.t().dot(&h);

    // S_W = Xcᵀ Xc with Xc the class-mean-centered features.
    let mut centered = features.clone();
    for (mut row, &label) in centered.outer_iter_mut().zip(labels) {
        row -= &class_means.row(label);
    }
    let mut within = centered.t().dot(&centered);

    for m in [&mut between, &mut within] {
        for i in 0..d {
            for j in (i + 1)..d {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    }

    Ok(ScatterMatrices {
        between,
        within,
        mean,
        class_means,
        class_counts,
    })
}

/// Between-scatter Gram factor: rows `√N_c (μ_c − μ)`, shape (C, D), so
/// that `S_B = factor ᵀ factor`.
pub fn between_scatter_factor(scatter: &ScatterMatrices) -> Array2<f64> {
    between_factor(&scatter.class_means, &scatter.mean, &scatter.class_counts)
}

fn between_factor(
    class_means: &Array2<f64>,
    mean: &Array1<f64>,
    class_counts: &[usize],
) -> Array2<f64> {
    let (c, d) = class_means.dim();
    let mut h = Array2::<f64>::zeros((c, d));
    for ((mut out, class_mean), &count) in h
        .outer_iter_mut()
        .zip(class_means.outer_iter())
        .zip(class_counts)
    {
        let w = (count as f64).sqrt();
        out.assign(&class_mean);
        out -= mean;
        out *= w;
    }
    h
}

fn cholesky_checked(b: &Array2<f64>) -> Result<Cholesky<f64, Dyn>> {
    let d = b.nrows();
    let trace: f64 = (0..d).map(|i| b[(i, i)]).sum();
    let tolerance = 1e-12 * trace / d as f64;
    let chol = Cholesky::new(to_dmatrix(b)).ok_or(Error::NotPositiveDefinite {
        pivot: 0.0,
        tolerance,
    })?;
    let l = chol.l_dirty();
    let min_pivot = (0..d)
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if min_pivot.is_nan() || min_pivot <= tolerance {
        return Err(Error::NotPositiveDefinite {
            pivot: min_pivot,
            tolerance,
        });
    }
    Ok(chol)
}

fn symmetric_eig_sorted(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 0).ok_or(Error::Numerical {
        what: "symmetric eigendecomposition",
    })?;
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Dense symmetric eigendecomposition, all pairs, descending eigenvalues,
/// unit-norm eigenvectors.
pub fn symmetric_eig(m: &Array2<f64>) -> Result<EigenPairs> {
    let mut dm = to_dmatrix(m);
    symmetrize(&mut dm);
    let (values, vectors) = symmetric_eig_sorted(dm)?;
    let mut vectors = column_major_to_array(&vectors);
    fix_column_signs(&mut vectors);
    Ok(EigenPairs { values, vectors })
}

fn fix_column_signs(vectors: &mut Array2<f64>) {
    for mut col in vectors.columns_mut() {
        let mut lead = 0;
        let mut best = f64::NEG_INFINITY;
        for (i, &v) in col.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                lead = i;
            }
        }
        if col[lead] < 0.0 {
            col *= -1.0;
        }
    }
}

fn back_transform(
    chol: &Cholesky<f64, Dyn>,
    b: &Array2<f64>,
    pairs: Vec<(f64, DVector<f64>)>,
) -> Result<EigenPairs> {
    let d = b.nrows();
    let k = pairs.len();
    let lt = chol.l_dirty().transpose();
    let mut whitened = DMatrix::<f64>::zeros(d, k);
    for (j, (_, w)) in pairs.iter().enumerate() {
        whitened.set_column(j, w);
    }
    let raw = lt
        .solve_upper_triangular(&whitened)
        .ok_or(Error::Numerical {
            what: "triangular back-substitution",
        })?;

    let mut vectors = column_major_to_array(&raw);
    // Enforce uᵀBu = 1 exactly rather than relying on the whitening identity.
    let b_u = b.dot(&vectors);
    for j in 0..k {
        let norm_sq = vectors.column(j).dot(&b_u.column(j));
        if norm_sq > 0.0 {
            let scale = norm_sq.sqrt().recip();
            vectors.column_mut(j).mapv_inplace(|v| v * scale);
        }
    }
    fix_column_signs(&mut vectors);
    Ok(EigenPairs {
        values: pairs.into_iter().map(|(v, _)| v).collect(),
        vectors,
    })
}

fn validate_eig_inputs(d_a: usize, b: &Array2<f64>, k: usize) -> Result<()> {
    let d = b.nrows();
    if b.ncols() != d || d_a != d {
        return Err(Error::DimensionMismatch {
            what: "generalized eigenproblem operands",
            expected: d,
            got: if b.ncols() != d { b.ncols() } else { d_a },
        });
    }
    if k == 0 || k > d {
        return Err(Error::InvalidParameter {
            name: "k",
            message: format!("k must be in [1, {d}], got {k}"),
        });
    }
    Ok(())
}

/// Solves `A u = v B u` for the top-`k` pairs, with `A` symmetric PSD and
/// `B` symmetric positive definite.
///
/// `B` is Cholesky-whitened (`B = LLᵀ`), the whitened operator
/// `L⁻¹ A L⁻ᵀ` is eigendecomposed, and vectors are mapped back through
/// `u = L⁻ᵀ w`. Returned vectors satisfy `uᵀBu = 1` and are sign-fixed so
/// the largest-magnitude entry is positive.
pub fn generalized_symmetric_eig(
    a: &Array2<f64>,
    b: &Array2<f64>,
    k: usize,
) -> Result<EigenPairs> {
    validate_eig_inputs(a.nrows(), b, k)?;
    if a.ncols() != a.nrows() {
        return Err(Error::DimensionMismatch {
            what: "generalized eigenproblem operands",
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let chol = cholesky_checked(b)?;
    let l = chol.l_dirty();

    let am = to_dmatrix(a);
    let y = l.solve_lower_triangular(&am).ok_or(Error::Numerical {
        what: "triangular solve",
    })?;
    let mut w = l
        .solve_lower_triangular(&y.transpose())
        .ok_or(Error::Numerical {
            what: "triangular solve",
        })?;
    symmetrize(&mut w);

    let (values, vectors) = symmetric_eig_sorted(w)?;
    let pairs = (0..k)
        .map(|j| (values[j], vectors.column(j).into_owned()))
        .collect();
    back_transform(&chol, b, pairs)
}

/// Same contract as [`generalized_symmetric_eig`] with `A` supplied in
/// Gram-factored form `A = HᵀH` (`H` of shape (C, D)).
///
/// The whitened operator then factors as `GGᵀ` with `G = L⁻¹Hᵀ`, so only
/// a C×C eigenproblem is solved; this is what makes high-dimensional fits
/// cheap, since C is the class count. Eigenpairs beyond the rank of `H`
/// are completed with eigenvalue 0 and vectors from the nullspace.
pub fn generalized_symmetric_eig_gram(
    h: &Array2<f64>,
    b: &Array2<f64>,
    k: usize,
) -> Result<EigenPairs> {
    validate_eig_inputs(h.ncols(), b, k)?;
    let d = b.nrows();
    let chol = cholesky_checked(b)?;
    let l = chol.l_dirty();

    let ht = to_dmatrix(h).transpose();
    // gt = L⁻¹ Hᵀ, shape (D, C); whitened operator is gt · gtᵀ.
    let gt = l.solve_lower_triangular(&ht).ok_or(Error::Numerical {
        what: "triangular solve",
    })?;
    let mut small = gt.transpose() * &gt;
    symmetrize(&mut small);
    let (values, z) = symmetric_eig_sorted(small)?;

    // Columns gt·z_i are mutually orthogonal with squared norm equal to
    // the eigenvalue; normalizing them yields whitened eigenvectors.
    // Eigenvalues below the rank tolerance are numerical zeros whose
    // directions carry no information; they are re-derived as exact
    // nullspace vectors below instead.
    let v_max = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank_tol = v_max * 1e-10;
    let mut range_basis: Vec<DVector<f64>> = Vec::new();
    let mut pairs: Vec<(f64, DVector<f64>)> = Vec::new();
    for (i, &value) in values.iter().enumerate() {
        let w = &gt * z.column(i);
        let norm = w.norm();
        if norm > 0.0 {
            let unit = w / norm;
            if value > rank_tol && pairs.len() < k {
                pairs.push((value, unit.clone()));
            }
            range_basis.push(unit);
        }
    }

    // Not enough trustworthy eigenpairs: pad with nullspace directions,
    // which are exact eigenvectors for eigenvalue 0.
    if pairs.len() < k {
        let mut taken: Vec<DVector<f64>> = range_basis.clone();
        for j in 0..d {
            if pairs.len() == k {
                break;
            }
            let mut candidate = DVector::<f64>::zeros(d);
            candidate[j] = 1.0;
            for _ in 0..2 {
                for basis in &taken {
                    let proj = basis.dot(&candidate);
                    candidate -= basis * proj;
                }
            }
            let norm = candidate.norm();
            if norm > 1e-6 {
                let unit = candidate / norm;
                taken.push(unit.clone());
                pairs.push((0.0, unit));
            }
        }
        if pairs.len() < k {
            return Err(Error::Numerical {
                what: "nullspace completion of a rank-deficient eigenproblem",
            });
        }
    }

    back_transform(&chol, b, pairs)
}

/// Estimates the largest eigenvalue of a symmetric PSD matrix by the
/// alternating matrix-vector iteration
/// `v_s = S u_{s-1} / ‖S u_{s-1}‖`, `u_s = S v_s / ‖S v_s‖`
/// started from the all-ones vector, returning `u_Sᵀ S v_S` after
/// `steps` rounds. Returns exactly 0 when an iterate is annihilated
/// (degenerate scatter).
pub fn power_iteration_largest(s: &Array2<f64>, steps: usize) -> f64 {
    assert!(s.nrows() == s.ncols(), "matrix must be square");
    assert!(steps >= 1, "steps must be >= 1");
    let d = s.nrows();
    let mut u = Array1::<f64>::ones(d);
    let mut last_sv = Array1::<f64>::zeros(d);
    for _ in 0..steps {
        let su = s.dot(&u);
        let nu = su.dot(&su).sqrt();
        if nu == 0.0 {
            return 0.0;
        }
        let v = su / nu;
        let sv = s.dot(&v);
        let nv = sv.dot(&sv).sqrt();
        if nv == 0.0 {
            return 0.0;
        }
        u = &sv / nv;
        last_sv = sv;
    }
    u.dot(&last_sv)
}

/// Sum of singular values.
pub fn nuclear_norm(f: &Array2<f64>) -> Result<f64> {
    if f.nrows() == 0 || f.ncols() == 0 {
        return Err(Error::InvalidParameter {
            name: "nuclear_norm",
            message: "matrix must be non-empty".to_string(),
        });
    }
    let svd = nalgebra::SVD::try_new(to_dmatrix(f), false, false, f64::EPSILON, 0).ok_or(
        Error::Numerical {
            what: "singular value decomposition",
        },
    )?;
    Ok(svd.singular_values.iter().sum())
}

/// Softmax with max-subtraction; output sums to 1 and preserves argmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let mut out = scores.to_vec();
    softmax_slice(&mut out);
    out
}

/// In-place row softmax.
pub fn softmax_inplace(mut row: ArrayViewMut1<f64>) {
    if let Some(slice) = row.as_slice_mut() {
        softmax_slice(slice);
        return;
    }
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    row.mapv_inplace(|v| (v - max).exp());
    let total = row.sum();
    row.mapv_inplace(|v| v / total);
}

fn softmax_slice(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}
