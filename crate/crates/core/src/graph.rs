//! Supervised k-nearest-neighbor similarity graph and its Laplacian.

use nalgebra::{DMatrix, DVector};

use crate::exec::Execution;
use crate::{Error, Result};

/// Heat-kernel width used by [`build_similarity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelWidth {
    /// Median of the nonzero neighbor distances.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LaplacianMode {
    /// `L = D - W`
    Unnormalized,
    /// `L = I - D^{-1/2} W D^{-1/2}`
    SymmetricNormalized,
}

#[derive(Debug, Clone)]
pub struct LocalityGraph {
    pub w: DMatrix<f64>,
    pub degrees: DVector<f64>,
    pub laplacian: DMatrix<f64>,
    pub mode: LaplacianMode,
    /// Nodes with zero degree. Always empty in symmetric-normalized mode.
    pub isolated: Vec<usize>,
}

/// Euclidean distances between all pairs of columns of `y`.
pub fn pairwise_distances(y: &DMatrix<f64>, exec: Execution) -> DMatrix<f64> {
    let n = y.ncols();
    let rows = exec.map_indices(n, |i| {
        let yi = y.column(i);
        (0..n)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    (yi - y.column(j)).norm()
                }
            })
            .collect::<Vec<f64>>()
    });
    let mut d = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            d[(i, j)] = v;
        }
    }
    // the two triangles are computed independently; force exact symmetry
    for i in 0..n {
        for j in (i + 1)..n {
            d[(j, i)] = d[(i, j)];
        }
    }
    d
}

/// Heat-kernel kNN similarity matrix over the columns of `y`.
///
/// When `labels` is given, neighbors are searched among same-label samples
/// only. Neighbor ties are broken by lower index. The directed kNN relation is
/// symmetrized with an element-wise max.
pub fn build_similarity(
    y: &DMatrix<f64>,
    labels: Option<&[usize]>,
    k_nn: usize,
    width: KernelWidth,
) -> Result<DMatrix<f64>> {
    build_similarity_with(y, labels, k_nn, width, Execution::default())
}

pub fn build_similarity_with(
    y: &DMatrix<f64>,
    labels: Option<&[usize]>,
    k_nn: usize,
    width: KernelWidth,
    exec: Execution,
) -> Result<DMatrix<f64>> {
    let n = y.ncols();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "similarity graph needs at least 2 samples, got {n}"
        )));
    }
    if k_nn == 0 || k_nn >= n {
        return Err(Error::InvalidParameter(format!(
            "k_nn must satisfy 1 <= k_nn < n = {n}, got {k_nn}"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "feature matrix contains non-finite entries".into(),
        ));
    }
    if let KernelWidth::Fixed(w) = width {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel width must be positive and finite, got {w}"
            )));
        }
    }
    if let Some(labels) = labels {
        if labels.len() != n {
            return Err(Error::Dimension {
                context: "build_similarity labels",
                expected: n,
                found: labels.len(),
            });
        }
        let c = labels.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; c];
        for &l in labels {
            counts[l] += 1;
        }
        if let Some((class, &found)) = counts
            .iter()
            .enumerate()
            .find(|(_, &cnt)| cnt > 0 && cnt <= k_nn)
        {
            return Err(Error::InsufficientClassSamples {
                class,
                found,
                k_nn,
                required: k_nn + 1,
            });
        }
    }

    let dist = pairwise_distances(y, exec);
    let neighbors: Vec<Vec<usize>> = exec.map_indices(n, |i| {
        let mut cand: Vec<usize> = (0..n)
            .filter(|&j| j != i && labels.is_none_or(|l| l[j] == l[i]))
            .collect();
        cand.sort_by(|&a, &b| dist[(i, a)].total_cmp(&dist[(i, b)]).then(a.cmp(&b)));
        cand.truncate(k_nn);
        cand
    });

    let delta = match width {
        KernelWidth::Fixed(w) => w,
        KernelWidth::Auto => {
            let mut nz: Vec<f64> = neighbors
                .iter()
                .enumerate()
                .flat_map(|(i, nb)| nb.iter().map(move |&j| (i, j)))
                .map(|(i, j)| dist[(i, j)])
                .filter(|&d| d > 0.0)
                .collect();
            if nz.is_empty() {
                return Err(Error::DegenerateKernelWidth);
            }
            median(&mut nz)
        }
    };

    let mut w = DMatrix::zeros(n, n);
    for (i, nb) in neighbors.iter().enumerate() {
        for &j in nb {
            let v = (-dist[(i, j)] / delta).exp();
            w[(i, j)] = f64::max(w[(i, j)], v);
            w[(j, i)] = f64::max(w[(j, i)], v);
        }
    }
    Ok(w)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Degrees and Laplacian of a symmetric similarity matrix.
pub fn laplacian(w: &DMatrix<f64>, mode: LaplacianMode) -> Result<LocalityGraph> {
    let n = w.nrows();
    if w.ncols() != n {
        return Err(Error::Dimension {
            context: "laplacian (similarity must be square)",
            expected: n,
            found: w.ncols(),
        });
    }
    for i in 0..n {
        if w[(i, i)] != 0.0 {
            return Err(Error::InvalidSimilarity(format!("nonzero diagonal at {i}")));
        }
        for j in 0..n {
            let v = w[(i, j)];
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidSimilarity(format!(
                    "entry ({i}, {j}) = {v} is not a nonnegative finite weight"
                )));
            }
            if v != w[(j, i)] {
                return Err(Error::InvalidSimilarity(format!(
                    "asymmetric at ({i}, {j})"
                )));
            }
        }
    }

    let degrees = DVector::from_iterator(n, w.column_iter().map(|c| c.sum()));
    let isolated: Vec<usize> = (0..n).filter(|&i| degrees[i] == 0.0).collect();

    let lap = match mode {
        LaplacianMode::Unnormalized => DMatrix::from_diagonal(&degrees) - w,
        LaplacianMode::SymmetricNormalized => {
            if let Some(&i) = isolated.first() {
                return Err(Error::IsolatedNode(i));
            }
            let inv_sqrt = degrees.map(|d| 1.0 / d.sqrt());
            let mut l = DMatrix::from_fn(n, n, |i, j| -w[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
            for i in 0..n {
                l[(i, i)] = 1.0;
            }
            l
        }
    };

    Ok(LocalityGraph {
        w: w.clone(),
        degrees,
        laplacian: lap,
        mode,
        isolated,
    })
}

impl LocalityGraph {
    pub fn from_data(
        y: &DMatrix<f64>,
        labels: Option<&[usize]>,
        k_nn: usize,
        width: KernelWidth,
        mode: LaplacianMode,
    ) -> Result<Self> {
        laplacian(&build_similarity(y, labels, k_nn, width)?, mode)
    }

    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn p_vector(&self, i: usize) -> Result<DVector<f64>> {
        p_vector(&self.laplacian, i)
    }

    /// All p-vectors as the columns of an `n×n` matrix.
    pub fn p_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.len();
        let mut p = DMatrix::zeros(n, n);
        for i in 0..n {
            p.set_column(i, &self.p_vector(i)?);
        }
        Ok(p)
    }
}

/// `Tr(X L Xᵀ)`.
pub fn laplacian_quadratic(x: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<f64> {
    if l.nrows() != l.ncols() || x.ncols() != l.nrows() {
        return Err(Error::Dimension {
            context: "laplacian_quadratic (code columns vs Laplacian size)",
            expected: l.nrows(),
            found: x.ncols(),
        });
    }
    let xl = x * l;
    Ok(xl.component_mul(x).sum().max(0.0))
}

/// Coupling vector of sample `i`: `p[k] = L[i][k] / (2 L[i][i])`, `p[i] = 0`.
pub fn p_vector(l: &DMatrix<f64>, i: usize) -> Result<DVector<f64>> {
    let n = l.nrows();
    if i >= n {
        return Err(Error::InvalidParameter(format!(
            "sample index {i} out of range for {n} nodes"
        )));
    }
    let lii = l[(i, i)];
    if lii.is_nan() || lii <= 0.0 {
        return Err(Error::DegenerateDiagonal {
            index: i,
            value: lii,
        });
    }
    let mut p = DVector::from_fn(n, |k, _| l[(i, k)] / (2.0 * lii));
    p[i] = 0.0;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairwise_oracle(x: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
        let n = x.ncols();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += (x.column(i) - x.column(j)).norm_squared() * w[(i, j)];
            }
        }
        0.5 * s
    }

    fn random_similarity(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v: f64 = rng.random();
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
        w
    }

    #[test]
    fn identical_pair_has_unit_weight() {
        let y = DMatrix::from_column_slice(1, 2, &[3.0, 3.0]);
        let w = build_similarity(&y, None, 1, KernelWidth::Fixed(1.0)).unwrap();
        assert_eq!(w, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn unit_distance_weight() {
        let y = DMatrix::from_column_slice(1, 2, &[0.0, 1.0]);
        let w = build_similarity(&y, None, 1, KernelWidth::Fixed(1.0)).unwrap();
        assert_abs_diff_eq!(w[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(w[(0, 1)], 0.36787944117144233, epsilon = 1e-15);
        assert_eq!(w[(0, 0)], 0.0);
    }

    #[test]
    fn supervised_graph_is_block_diagonal() {
        // two well-separated same-label triples
        let pts = [
            [0.0, 0.0],
            [0.1, 0.0],
            [0.0, 0.2],
            [10.0, 10.0],
            [10.1, 10.0],
            [10.0, 10.3],
        ];
        let y = DMatrix::from_fn(2, 6, |r, c| pts[c][r]);
        let labels = [0, 0, 0, 1, 1, 1];
        let w = build_similarity(&y, Some(&labels), 2, KernelWidth::Auto).unwrap();

        // brute-force kNN: with 3 same-label points and k_nn = 2 every
        // in-class pair is an edge and no cross-class pair is
        for i in 0..6 {
            for j in 0..6 {
                let same = labels[i] == labels[j];
                if i != j && same {
                    assert!(w[(i, j)] > 0.0, "missing in-class edge {i}-{j}");
                } else {
                    assert_eq!(w[(i, j)], 0.0);
                }
            }
        }
        assert_eq!(w, w.transpose());
    }

    #[test]
    fn insufficient_class_is_named() {
        let y = DMatrix::from_fn(2, 5, |r, c| (r + c) as f64);
        let err = build_similarity(&y, Some(&[0, 0, 0, 1, 1]), 2, KernelWidth::Auto).unwrap_err();
        match err {
            Error::InsufficientClassSamples { class, .. } => assert_eq!(class, 1),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_only_data_rejects_auto_width() {
        let y = DMatrix::from_element(3, 4, 1.5);
        assert!(matches!(
            build_similarity(&y, None, 2, KernelWidth::Auto),
            Err(Error::DegenerateKernelWidth)
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        let y = DMatrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        assert!(build_similarity(&y, None, 3, KernelWidth::Auto).is_err());
        assert!(build_similarity(&y, None, 0, KernelWidth::Auto).is_err());
        let mut bad = y.clone();
        bad[(0, 1)] = f64::NAN;
        assert!(build_similarity(&bad, None, 1, KernelWidth::Auto).is_err());
    }

    #[test]
    fn execution_strategies_give_identical_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = DMatrix::from_fn(5, 40, |_, _| rng.random::<f64>());
        let a = build_similarity_with(&y, None, 4, KernelWidth::Auto, Execution::Sequential);
        let b = build_similarity_with(&y, None, 4, KernelWidth::Auto, Execution::Parallel);
        assert_eq!(a.unwrap(), b.unwrap());
    }

    #[test]
    fn pair_laplacians() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        for mode in [
            LaplacianMode::Unnormalized,
            LaplacianMode::SymmetricNormalized,
        ] {
            let g = laplacian(&w, mode).unwrap();
            assert_eq!(g.laplacian, expected);
            assert_eq!(g.degrees.as_slice(), &[1.0, 1.0]);
        }
    }

    #[test]
    fn random_laplacians_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let w = random_similarity(8, &mut rng);
            for mode in [
                LaplacianMode::Unnormalized,
                LaplacianMode::SymmetricNormalized,
            ] {
                let g = laplacian(&w, mode).unwrap();
                let eig = SymmetricEigen::new(g.laplacian.clone());
                assert!(eig.eigenvalues.min() >= -1e-10);
            }
        }
    }

    #[test]
    fn unnormalized_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_similarity(9, &mut rng);
        let g = laplacian(&w, LaplacianMode::Unnormalized).unwrap();
        let ones = DVector::from_element(9, 1.0);
        assert!((&g.laplacian * ones).amax() <= 1e-10 * 9.0);
    }

    #[test]
    fn symmetric_normalized_has_unit_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random_similarity(7, &mut rng);
        let g = laplacian(&w, LaplacianMode::SymmetricNormalized).unwrap();
        assert!(g.laplacian.diagonal().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn isolated_nodes() {
        let mut w = DMatrix::zeros(3, 3);
        w[(0, 1)] = 0.5;
        w[(1, 0)] = 0.5;
        let g = laplacian(&w, LaplacianMode::Unnormalized).unwrap();
        assert_eq!(g.isolated, vec![2]);
        assert!(matches!(
            laplacian(&w, LaplacianMode::SymmetricNormalized),
            Err(Error::IsolatedNode(2))
        ));
    }

    #[test]
    fn rejects_asymmetric_similarity() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert!(laplacian(&w, LaplacianMode::Unnormalized).is_err());
    }

    #[test]
    fn quadratic_of_constant_codes_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_similarity(6, &mut rng);
        let g = laplacian(&w, LaplacianMode::Unnormalized).unwrap();
        let col = DVector::from_fn(3, |_, _| rng.random::<f64>());
        let x = DMatrix::from_fn(3, 6, |r, _| col[r]);
        assert!(laplacian_quadratic(&x, &g.laplacian).unwrap() < 1e-12);
    }

    #[test]
    fn quadratic_small_example() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_abs_diff_eq!(laplacian_quadratic(&x, &l).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn quadratic_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_similarity(6, &mut rng);
        let g = laplacian(&w, LaplacianMode::Unnormalized).unwrap();
        let x = DMatrix::from_fn(4, 6, |_, _| rng.random::<f64>() - 0.5);
        let got = laplacian_quadratic(&x, &g.laplacian).unwrap();
        let want = pairwise_oracle(&x, &w);
        assert!((got - want).abs() <= 1e-10 * want.abs());
    }

    #[test]
    fn quadratic_dimension_mismatch() {
        let x = DMatrix::zeros(2, 3);
        let l = DMatrix::zeros(4, 4);
        assert!(matches!(
            laplacian_quadratic(&x, &l),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn p_vector_examples() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(p_vector(&l, 0).unwrap().as_slice(), &[0.0, -0.5]);

        // 5-node path graph
        let mut w = DMatrix::zeros(5, 5);
        for i in 0..4 {
            w[(i, i + 1)] = 1.0;
            w[(i + 1, i)] = 1.0;
        }
        let g = laplacian(&w, LaplacianMode::Unnormalized).unwrap();
        let p = g.p_vector(2).unwrap();
        for k in 0..5 {
            let want = if k == 2 {
                0.0
            } else {
                g.laplacian[(2, k)] / (2.0 * g.laplacian[(2, 2)])
            };
            assert_eq!(p[k], want);
        }
        assert_eq!(p.as_slice(), &[0.0, -0.25, 0.0, -0.25, 0.0]);
    }

    #[test]
    fn p_vector_rejects_degenerate_diagonal() {
        let l = DMatrix::zeros(3, 3);
        assert!(matches!(
            p_vector(&l, 1),
            Err(Error::DegenerateDiagonal { index: 1, .. })
        ));
    }
}
