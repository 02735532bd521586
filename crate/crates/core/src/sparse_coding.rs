//! Greedy sparse coding and the synthesis K-SVD sweep over the
//! locality-augmented system.
//!
//! The augmented system stacks, for every sample `i`,
//!
//! ```text
//! y_new_i = [ Ω y_i ; -s X_prev p_i ]      Q_new = [ R ; s I ]
//! ```
//!
//! with `s = sqrt(α L_ii)`. Coding each `y_new_i` against `Q_new` minimises
//! the representation error plus the Laplacian coupling to the previous
//! codes. `L_ii` must be the same for all samples so that one `Q_new` serves
//! the whole batch, which holds for the symmetric-normalized Laplacian.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::exec::Execution;
use crate::graph::LocalityGraph;
use crate::{Error, Result};

const UNIT_NORM_TOL: f64 = 1e-8;
const RESIDUAL_TOL: f64 = 1e-12;
/// Minimum squared distance of a new atom from the span of the selected
/// ones (unit-norm atoms) before the support counts as rank deficient.
const RANK_TOL: f64 = 1e-10;
const DIAGONAL_TOL: f64 = 1e-9;

/// Column-sparse code matrix (`k×n`), each column with at most `t0` nonzeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodes {
    pub x: DMatrix<f64>,
    pub t0: usize,
}

impl SparseCodes {
    pub fn new(x: DMatrix<f64>, t0: usize) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "codes contain non-finite entries".into(),
            ));
        }
        if let Some(col) = x
            .column_iter()
            .position(|c| c.iter().filter(|v| **v != 0.0).count() > t0)
        {
            return Err(Error::InvalidParameter(format!(
                "code column {col} has more than t0 = {t0} nonzeros"
            )));
        }
        Ok(Self { x, t0 })
    }

    pub fn nnz(&self) -> usize {
        self.x.iter().filter(|v| **v != 0.0).count()
    }
}

/// Keep the `t0` largest-magnitude entries, ties to the lower index.
pub fn hard_threshold(x: &DVector<f64>, t0: usize) -> DVector<f64> {
    if t0 >= x.len() {
        return x.clone();
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    let mut out = DVector::zeros(x.len());
    for &i in &order[..t0] {
        out[i] = x[i];
    }
    out
}

fn check_dictionary(d: &DMatrix<f64>, t0: usize) -> Result<()> {
    let limit = d.nrows().min(d.ncols());
    if t0 > limit {
        return Err(Error::InvalidParameter(format!(
            "sparsity budget t0 = {t0} exceeds min(d, k) = {limit}"
        )));
    }
    if let Some(j) = d
        .column_iter()
        .position(|c| (c.norm() - 1.0).abs() > UNIT_NORM_TOL)
    {
        return Err(Error::InvalidParameter(format!(
            "dictionary column {j} is not unit-norm"
        )));
    }
    Ok(())
}

/// Orthogonal matching pursuit against a dictionary with unit-norm columns.
///
/// Each step selects the atom most correlated with the residual (lowest
/// index on ties) and re-fits least squares on the support. Stops after `t0`
/// atoms, when the residual norm drops below `1e-12`, or when the next atom
/// would make the support rank deficient.
pub fn omp(d: &DMatrix<f64>, y: &DVector<f64>, t0: usize) -> Result<DVector<f64>> {
    if y.len() != d.nrows() {
        return Err(Error::Dimension {
            context: "omp signal length",
            expected: d.nrows(),
            found: y.len(),
        });
    }
    check_dictionary(d, t0)?;
    Ok(omp_unchecked(d, y, t0))
}

/// [`omp`] applied to every column of `signals`.
pub fn omp_batch(
    d: &DMatrix<f64>,
    signals: &DMatrix<f64>,
    t0: usize,
    exec: Execution,
) -> Result<DMatrix<f64>> {
    if signals.nrows() != d.nrows() {
        return Err(Error::Dimension {
            context: "omp_batch signal length",
            expected: d.nrows(),
            found: signals.nrows(),
        });
    }
    check_dictionary(d, t0)?;
    let cols = exec.map_indices(signals.ncols(), |i| {
        omp_unchecked(d, &signals.column(i).into_owned(), t0)
    });
    let mut x = DMatrix::zeros(d.ncols(), signals.ncols());
    for (i, c) in cols.into_iter().enumerate() {
        x.set_column(i, &c);
    }
    Ok(x)
}

fn omp_unchecked(d: &DMatrix<f64>, y: &DVector<f64>, t0: usize) -> DVector<f64> {
    let k = d.ncols();
    let dty = d.tr_mul(y);
    let mut support: Vec<usize> = Vec::with_capacity(t0);
    let mut selected = vec![false; k];
    // lower-triangular Cholesky factor of the support Gram matrix
    let mut chol = DMatrix::<f64>::zeros(t0, t0);
    let mut coef: Vec<f64> = Vec::new();
    let mut residual = y.clone();

    while support.len() < t0 {
        if residual.norm() < RESIDUAL_TOL {
            break;
        }
        let corr = d.tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in corr.iter().enumerate() {
            if selected[j] {
                continue;
            }
            if best.is_none_or(|(_, b)| c.abs() > b) {
                best = Some((j, c.abs()));
            }
        }
        let Some((atom, magnitude)) = best else { break };
        if magnitude < RESIDUAL_TOL * 1e-2 {
            break;
        }

        let s = support.len();
        let atom_col = d.column(atom);
        let mut w: Vec<f64> = support
            .iter()
            .map(|&j| d.column(j).dot(&atom_col))
            .collect();
        for r in 0..s {
            let mut acc = w[r];
            for c in 0..r {
                acc -= chol[(r, c)] * w[c];
            }
            w[r] = acc / chol[(r, r)];
        }
        let diag2 = atom_col.norm_squared() - w.iter().map(|v| v * v).sum::<f64>();
        if diag2 <= RANK_TOL {
            break;
        }
        for (c, wc) in w.iter().enumerate() {
            chol[(s, c)] = *wc;
        }
        chol[(s, s)] = diag2.sqrt();
        support.push(atom);
        selected[atom] = true;

        // solve L Lᵀ c = D_Sᵀ y
        let n = support.len();
        let mut z: Vec<f64> = support.iter().map(|&j| dty[j]).collect();
        for r in 0..n {
            let mut acc = z[r];
            for c in 0..r {
                acc -= chol[(r, c)] * z[c];
            }
            z[r] = acc / chol[(r, r)];
        }
        for r in (0..n).rev() {
            let mut acc = z[r];
            for c in (r + 1)..n {
                acc -= chol[(c, r)] * z[c];
            }
            z[r] = acc / chol[(r, r)];
        }
        coef = z;

        residual.copy_from(y);
        for (&j, &cj) in support.iter().zip(&coef) {
            residual.axpy(-cj, &d.column(j), 1.0);
        }
    }

    let mut code = DVector::zeros(k);
    for (&j, &cj) in support.iter().zip(&coef) {
        code[j] = cj;
    }
    code
}

/// Stacked signals and dictionary for one coding pass.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    /// `2k×n` (or `k×n` for a system without the locality block).
    pub y_new: DMatrix<f64>,
    /// Column-normalized stacked dictionary.
    pub q_new: DMatrix<f64>,
    /// Synthesis companion, the top block of the un-normalized `Q_new`.
    pub r: DMatrix<f64>,
    /// `sqrt(α L_ii)`.
    pub scale: f64,
    /// Column norms of the un-normalized `Q_new`.
    pub atom_norms: DVector<f64>,
}

impl AugmentedSystem {
    /// Plain coding of `omega_y` against `r`, with no locality block.
    pub fn plain(omega_y: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Self> {
        let k = check_square(r)?;
        if omega_y.nrows() != k {
            return Err(Error::Dimension {
                context: "system signal rows vs dictionary size",
                expected: k,
                found: omega_y.nrows(),
            });
        }
        Ok(Self::assemble(
            omega_y.clone(),
            repair_dead_columns(r),
            0.0,
            false,
        ))
    }

    fn assemble(y_new: DMatrix<f64>, r: DMatrix<f64>, scale: f64, stacked: bool) -> Self {
        let k = r.ncols();
        let mut q = if stacked {
            let mut q = DMatrix::zeros(2 * k, k);
            q.view_mut((0, 0), (k, k)).copy_from(&r);
            for j in 0..k {
                q[(k + j, j)] = scale;
            }
            q
        } else {
            r.clone()
        };
        let norms = DVector::from_iterator(k, q.column_iter().map(|c| c.norm()));
        for (j, mut col) in q.column_iter_mut().enumerate() {
            col /= norms[j];
        }
        Self {
            y_new,
            q_new: q,
            r,
            scale,
            atom_norms: norms,
        }
    }

    pub fn dict_size(&self) -> usize {
        self.r.ncols()
    }

    pub fn has_locality_block(&self) -> bool {
        self.q_new.nrows() == 2 * self.dict_size()
    }

    /// `Q_new` before column normalization.
    pub fn q_unnormalized(&self) -> DMatrix<f64> {
        let mut q = self.q_new.clone();
        for (j, mut col) in q.column_iter_mut().enumerate() {
            col *= self.atom_norms[j];
        }
        q
    }

    /// Convert codes over the normalized dictionary to codes over the
    /// un-normalized one.
    pub fn unnormalize_codes(&self, x_normalized: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = x_normalized.clone();
        for (j, mut row) in x.row_iter_mut().enumerate() {
            row /= self.atom_norms[j];
        }
        x
    }
}

fn check_square(r: &DMatrix<f64>) -> Result<usize> {
    if r.nrows() != r.ncols() {
        return Err(Error::Dimension {
            context: "synthesis companion must be square",
            expected: r.ncols(),
            found: r.nrows(),
        });
    }
    Ok(r.ncols())
}

/// All-zero columns of `r` would have no direction after normalization;
/// they restart from the matching unit vector.
fn repair_dead_columns(r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut r = r.clone();
    for j in 0..r.ncols() {
        if r.column(j).norm() == 0.0 {
            r[(j, j)] = 1.0;
        }
    }
    r
}

/// Build the locality-augmented system from `Ω·Y`, the previous codes, and
/// the graph. The Laplacian diagonal must be constant.
pub fn build_augmented(
    omega_y: &DMatrix<f64>,
    x_prev: &DMatrix<f64>,
    graph: &LocalityGraph,
    alpha: f64,
    r: &DMatrix<f64>,
) -> Result<AugmentedSystem> {
    let k = check_square(r)?;
    let n = omega_y.ncols();
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be nonnegative and finite, got {alpha}"
        )));
    }
    if omega_y.nrows() != k {
        return Err(Error::Dimension {
            context: "build_augmented Ω·Y rows vs dictionary size",
            expected: k,
            found: omega_y.nrows(),
        });
    }
    if x_prev.shape() != omega_y.shape() {
        return Err(Error::Dimension {
            context: "build_augmented previous codes columns",
            expected: n,
            found: x_prev.ncols(),
        });
    }
    if graph.len() != n {
        return Err(Error::Dimension {
            context: "build_augmented graph size vs samples",
            expected: n,
            found: graph.len(),
        });
    }

    let diag = graph.laplacian.diagonal();
    let reference = diag[0];
    if let Some(index) = (0..n).find(|&i| (diag[i] - reference).abs() > DIAGONAL_TOL) {
        return Err(Error::NonUniformDiagonal {
            index,
            value: diag[index],
            reference,
        });
    }
    let p = graph.p_matrix()?;
    let scale = (alpha * reference).sqrt();

    let mut y_new = DMatrix::zeros(2 * k, n);
    y_new.view_mut((0, 0), (k, n)).copy_from(omega_y);
    if scale > 0.0 {
        let coupled = x_prev * p * (-scale);
        y_new.view_mut((k, 0), (k, n)).copy_from(&coupled);
    }
    Ok(AugmentedSystem::assemble(
        y_new,
        repair_dead_columns(r),
        scale,
        true,
    ))
}

/// What a single atom update did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomUpdate {
    /// Rank-1 SVD refit of the atom and its nonzero coefficients.
    Refit,
    /// Unused atom re-seeded from the worst-represented signal.
    Replaced,
    /// Unused atom left as is (no signal with residual to seed from).
    Unchanged,
}

/// Coding-stage result plus mutable atoms, advanced one atom at a time.
#[derive(Debug, Clone)]
pub struct KsvdState<'a> {
    system: &'a AugmentedSystem,
    q: DMatrix<f64>,
    x: DMatrix<f64>,
    residual: DMatrix<f64>,
    replaced_from: Vec<bool>,
}

impl<'a> KsvdState<'a> {
    /// Coding stage: OMP of every `y_new` column against `Q_new`.
    pub fn code(system: &'a AugmentedSystem, t0: usize, exec: Execution) -> Result<Self> {
        let x = omp_batch(&system.q_new, &system.y_new, t0, exec)?;
        let residual = &system.y_new - &system.q_new * &x;
        Ok(Self {
            system,
            q: system.q_new.clone(),
            replaced_from: vec![false; system.y_new.ncols()],
            x,
            residual,
        })
    }

    /// Current normalized dictionary.
    pub fn dictionary(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Current codes over [`Self::dictionary`].
    pub fn codes(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// `‖Y_new − Q X‖_F` recomputed from scratch.
    pub fn reconstruction_error(&self) -> f64 {
        (&self.system.y_new - &self.q * &self.x).norm()
    }

    pub fn update_atom(&mut self, k: usize) -> AtomUpdate {
        let support: Vec<usize> = (0..self.x.ncols())
            .filter(|&i| self.x[(k, i)] != 0.0)
            .collect();
        if support.is_empty() {
            return self.replace_dead_atom(k);
        }

        let rows = self.q.nrows();
        let atom = self.q.column(k).into_owned();
        let mut restricted = DMatrix::zeros(rows, support.len());
        for (c, &i) in support.iter().enumerate() {
            let col = self.residual.column(i) + &atom * self.x[(k, i)];
            restricted.set_column(c, &col);
        }

        let (mut u, sigma, mut v) = leading_singular_triplet(&restricted);
        // keep the orientation of the previous atom
        if u.dot(&atom) < 0.0 {
            u = -u;
            v = -v;
        }
        self.q.set_column(k, &u);
        for (c, &i) in support.iter().enumerate() {
            let coeff = sigma * v[c];
            self.x[(k, i)] = coeff;
            let col = restricted.column(c) - &u * coeff;
            self.residual.set_column(i, &col);
        }
        AtomUpdate::Refit
    }

    fn replace_dead_atom(&mut self, k: usize) -> AtomUpdate {
        let dim = self.system.dict_size();
        let worst = (0..self.residual.ncols())
            .filter(|&i| !self.replaced_from[i])
            .map(|i| (i, self.residual.column(i).norm_squared()))
            .filter(|&(_, e)| e > 0.0)
            .fold(None::<(usize, f64)>, |acc, (i, e)| match acc {
                Some((_, best)) if best >= e => acc,
                _ => Some((i, e)),
            });
        let Some((i, _)) = worst else {
            return AtomUpdate::Unchanged;
        };
        let top = self.system.y_new.column(i).rows(0, dim).into_owned();
        let norm = top.norm();
        if norm == 0.0 {
            return AtomUpdate::Unchanged;
        }
        self.replaced_from[i] = true;
        let mut atom = DVector::zeros(self.q.nrows());
        atom.rows_mut(0, dim).copy_from(&(top / norm));
        // zero coefficients, so the residual is unaffected
        self.q.set_column(k, &atom);
        AtomUpdate::Replaced
    }

    /// Write the updated atoms back into `R` and un-normalize the codes.
    ///
    /// Only the top block of each atom survives; the locality block is
    /// rebuilt from `scale·I` by the next [`build_augmented`].
    pub fn finish(self) -> Result<(DMatrix<f64>, SparseCodes)> {
        let dim = self.system.dict_size();
        let norms = &self.system.atom_norms;
        let mut r = self.q.rows(0, dim).into_owned();
        for (j, mut col) in r.column_iter_mut().enumerate() {
            col *= norms[j];
        }
        let x = self.system.unnormalize_codes(&self.x);
        let t0 = self
            .x
            .column_iter()
            .map(|c| c.iter().filter(|v| **v != 0.0).count())
            .max()
            .unwrap_or(0);
        Ok((r, SparseCodes::new(x, t0)?))
    }
}

/// Leading singular triplet `(u, σ, v)` of `a`.
///
/// Taken from the top eigenvector of the smaller Gram matrix, then polished
/// by power iteration. The returned `σ·v` equals `aᵀu`, the least-squares
/// coefficients for the unit vector `u`.
fn leading_singular_triplet(a: &DMatrix<f64>) -> (DVector<f64>, f64, DVector<f64>) {
    let mut u = if a.nrows() <= a.ncols() {
        top_eigenvector(a * a.transpose())
    } else {
        let v = top_eigenvector(a.tr_mul(a));
        let u = a * v;
        let n = u.norm();
        if n == 0.0 {
            return (DVector::zeros(a.nrows()), 0.0, DVector::zeros(a.ncols()));
        }
        u / n
    };
    for _ in 0..POWER_STEPS {
        let next = a * a.tr_mul(&u);
        let n = next.norm();
        if n == 0.0 {
            break;
        }
        u = next / n;
    }
    let coeffs = a.tr_mul(&u);
    let sigma = coeffs.norm();
    let v = if sigma > 0.0 { coeffs / sigma } else { coeffs };
    (u, sigma, v)
}

const POWER_STEPS: usize = 2;

fn top_eigenvector(gram: DMatrix<f64>) -> DVector<f64> {
    let eig = gram.symmetric_eigen();
    let idx = eig.eigenvalues.imax();
    eig.eigenvectors.column(idx).into_owned()
}

/// Result of one K-SVD sweep.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// Updated synthesis companion.
    pub r: DMatrix<f64>,
    pub codes: SparseCodes,
    /// `‖Y_new − Q X‖_F` after the coding stage, then after each atom update.
    pub error_trace: Vec<f64>,
}

/// One K-SVD sweep: OMP coding stage, then rank-1 atom updates in a random
/// permutation order drawn from `rng`.
pub fn ksvd_sweep<R: Rng + ?Sized>(
    system: &AugmentedSystem,
    t0: usize,
    rng: &mut R,
) -> Result<SweepOutcome> {
    ksvd_sweep_with(system, t0, rng, Execution::default())
}

pub fn ksvd_sweep_with<R: Rng + ?Sized>(
    system: &AugmentedSystem,
    t0: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<SweepOutcome> {
    let mut state = KsvdState::code(system, t0, exec)?;
    let mut order: Vec<usize> = (0..system.dict_size()).collect();
    order.shuffle(rng);
    let mut error_trace = Vec::with_capacity(order.len() + 1);
    error_trace.push(state.residual.norm());
    for k in order {
        state.update_atom(k);
        error_trace.push(state.residual.norm());
    }
    let (r, mut codes) = state.finish()?;
    codes.t0 = t0;
    Ok(SweepOutcome {
        r,
        codes,
        error_trace,
    })
}
