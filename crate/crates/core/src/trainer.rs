//! Alternating optimization of the analysis dictionary and the sparse codes.

use nalgebra::{Cholesky, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::classifier;
use crate::dataset::DataSet;
use crate::graph::{self, KernelWidth, LaplacianMode, LocalityGraph};
use crate::sparse_coding::{self, AugmentedSystem, SparseCodes};
use crate::{Error, Result};

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the Laplacian locality term.
    pub alpha: f64,
    /// Ridge weight of the dictionary update.
    pub beta: f64,
    /// Ridge weight of the classifier.
    pub ridge_delta: f64,
    pub k_nn: usize,
    pub kernel_width: KernelWidth,
    pub t0: usize,
    pub dict_size: usize,
    pub epsilon: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub laplacian_mode: LaplacianMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta: 0.03,
            ridge_delta: 0.01,
            k_nn: 3,
            kernel_width: KernelWidth::Auto,
            t0: 45,
            dict_size: 570,
            epsilon: 1e-4,
            max_iter: 30,
            seed: 0,
            laplacian_mode: LaplacianMode::SymmetricNormalized,
        }
    }
}

/// Tuned `(alpha, beta)` pairs for the benchmark image datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    ExtendedYaleB,
    Ar,
    Scene15,
    Ucf50,
}

impl Preset {
    pub fn alpha_beta(self) -> (f64, f64) {
        match self {
            Preset::ExtendedYaleB => (10.0, 0.03),
            Preset::Ar => (10.0, 0.05),
            Preset::Scene15 => (20.0, 0.11),
            Preset::Ucf50 => (10.0, 0.01),
        }
    }
}

impl TrainConfig {
    pub fn with_preset(mut self, preset: Preset) -> Self {
        (self.alpha, self.beta) = preset.alpha_beta();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be nonnegative, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(self.ridge_delta > 0.0 && self.ridge_delta.is_finite()) {
            return bad(format!(
                "ridge_delta must be positive, got {}",
                self.ridge_delta
            ));
        }
        if self.k_nn == 0 {
            return bad("k_nn must be positive".into());
        }
        if self.dict_size == 0 {
            return bad("dict_size must be positive".into());
        }
        if self.t0 == 0 || self.t0 > self.dict_size {
            return bad(format!(
                "t0 ({}) must be in 1..=dict_size ({})",
                self.t0, self.dict_size
            ));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        Ok(())
    }
}

/// Objective terms for one iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    /// `‖X − ΩY‖_F²`
    pub recon: f64,
    /// Number of nonzero code entries (reported, not weighted).
    pub sparsity: usize,
    /// `α·Tr(X L Xᵀ)`
    pub laplacian: f64,
    /// `recon + laplacian`
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub objective: Objective,
    /// `‖X − ΩY‖_∞`
    pub convergence: f64,
}

/// A trained analysis dictionary with its classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct SkladlModel {
    /// `k×m` analysis dictionary with unit-norm rows.
    pub omega: DMatrix<f64>,
    /// `k×k` synthesis companion.
    pub r: DMatrix<f64>,
    /// `c×k` ridge classifier.
    pub classifier: DMatrix<f64>,
    pub config: TrainConfig,
    pub history: Vec<IterationRecord>,
    /// Names of the classes, when the training data had them.
    pub class_names: Vec<String>,
}

impl SkladlModel {
    pub fn dict_size(&self) -> usize {
        self.omega.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.omega.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.nrows()
    }
}

/// Full training output: the model plus the final codes and graph.
#[derive(Debug, Clone)]
pub struct Training {
    pub model: SkladlModel,
    pub codes: SparseCodes,
    pub graph: Option<LocalityGraph>,
}

/// Seeded standard-normal matrix with unit-norm rows.
pub fn init_dictionary(dict_size: usize, feature_dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // fill row by row so the stream order follows the rows
    let mut omega = DMatrix::zeros(dict_size, feature_dim);
    for i in 0..dict_size {
        for j in 0..feature_dim {
            omega[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    normalize_rows(&mut omega);
    omega
}

/// Scale every nonzero row to unit norm; returns the indices of zero rows.
pub fn normalize_rows(m: &mut DMatrix<f64>) -> Vec<usize> {
    let mut zero = Vec::new();
    for (i, mut row) in m.row_iter_mut().enumerate() {
        let n = row.norm();
        if n == 0.0 {
            zero.push(i);
        } else {
            row /= n;
        }
    }
    zero
}

/// Stationary point `Ω = X Yᵀ (Y Yᵀ + βI)⁻¹` of the summed ridge
/// objective, before row normalization.
pub fn solve_dictionary(x: &DMatrix<f64>, y: &DMatrix<f64>, beta: f64) -> Result<DMatrix<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension {
            context: "dictionary update sample count",
            expected: y.ncols(),
            found: x.ncols(),
        });
    }
    if y.ncols() == 0 {
        return Err(Error::InvalidParameter(
            "dictionary update needs samples".into(),
        ));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "beta must be nonnegative, got {beta}"
        )));
    }
    let m = y.nrows();
    let gram = y * y.transpose() + DMatrix::identity(m, m) * beta;
    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::Singular(format!(
            "Y Yᵀ + βI is not positive definite (beta = {beta}); use beta > 0"
        ))
    })?;
    if ill_conditioned(&chol) {
        return Err(Error::Singular(format!(
            "Y Yᵀ + βI is numerically singular (beta = {beta}); use beta > 0"
        )));
    }
    // (YYᵀ + βI) Ωᵀ = Y Xᵀ
    let omega_t = chol.solve(&(y * x.transpose()));
    if omega_t.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!(
            "dictionary solve produced non-finite entries (beta = {beta}); use beta > 0"
        )));
    }
    Ok(omega_t.transpose())
}

/// Squared ratio of the extreme Cholesky pivots estimates the reciprocal
/// condition number.
fn ill_conditioned(chol: &Cholesky<f64, nalgebra::Dyn>) -> bool {
    let l = chol.l_dirty();
    let diag = l.diagonal();
    let (lo, hi) = (diag.min(), diag.max());
    let rcond = (lo / hi).powi(2);
    rcond.is_nan() || rcond <= f64::EPSILON * diag.len() as f64
}

#[derive(Debug, Clone)]
pub struct DictionaryUpdate {
    pub omega: DMatrix<f64>,
    /// Rows that came out exactly zero and were left unnormalized.
    pub zero_rows: Vec<usize>,
}

/// Closed-form dictionary update followed by row normalization.
pub fn update_dictionary(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    beta: f64,
) -> Result<DictionaryUpdate> {
    let mut omega = solve_dictionary(x, y, beta)?;
    let zero_rows = normalize_rows(&mut omega);
    Ok(DictionaryUpdate { omega, zero_rows })
}

pub fn objective(
    omega: &DMatrix<f64>,
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    alpha: f64,
    graph: Option<&LocalityGraph>,
) -> Result<Objective> {
    check_shapes(x, omega, y)?;
    let recon = (x - omega * y).norm_squared();
    let sparsity = x.iter().filter(|v| **v != 0.0).count();
    let laplacian = match graph {
        Some(g) if alpha != 0.0 => alpha * graph::laplacian_quadratic(x, &g.laplacian)?,
        _ => 0.0,
    };
    Ok(Objective {
        recon,
        sparsity,
        laplacian,
        total: recon + laplacian,
    })
}

fn check_shapes(x: &DMatrix<f64>, omega: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if omega.ncols() != y.nrows() {
        return Err(Error::Dimension {
            context: "dictionary columns vs feature dimension",
            expected: y.nrows(),
            found: omega.ncols(),
        });
    }
    if x.shape() != (omega.nrows(), y.ncols()) {
        return Err(Error::Dimension {
            context: "code matrix shape (rows = atoms, columns = samples)",
            expected: omega.nrows() * y.ncols(),
            found: x.nrows() * x.ncols(),
        });
    }
    Ok(())
}

/// `‖X − ΩY‖_∞` (largest absolute entry).
pub fn convergence_metric(x: &DMatrix<f64>, omega: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    (x - omega * y).amax()
}

pub fn converged(x: &DMatrix<f64>, omega: &DMatrix<f64>, y: &DMatrix<f64>, epsilon: f64) -> bool {
    convergence_metric(x, omega, y) < epsilon
}

pub fn train(dataset: &DataSet, config: &TrainConfig) -> Result<SkladlModel> {
    train_detailed(dataset, config).map(|t| t.model)
}

/// Train with the locality graph built from the labeled samples.
pub fn train_detailed(dataset: &DataSet, config: &TrainConfig) -> Result<Training> {
    check_dataset(dataset, config)?;
    let graph = LocalityGraph::from_data(
        &dataset.features,
        Some(&dataset.labels),
        config.k_nn,
        config.kernel_width,
        config.laplacian_mode,
    )?;
    run(dataset, config, Some(graph))
}

/// Train the plain analysis model: same alternation with no locality block.
pub fn train_without_locality(dataset: &DataSet, config: &TrainConfig) -> Result<Training> {
    check_dataset(dataset, config)?;
    run(dataset, config, None)
}

fn check_dataset(dataset: &DataSet, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    let c = dataset.num_classes();
    if c < 2 {
        return Err(Error::InvalidParameter(format!(
            "training needs at least 2 classes, got {c}"
        )));
    }
    if config.dict_size < c {
        return Err(Error::InvalidParameter(format!(
            "dict_size ({}) must be at least the number of classes ({c})",
            config.dict_size
        )));
    }
    Ok(())
}

fn run(dataset: &DataSet, config: &TrainConfig, graph: Option<LocalityGraph>) -> Result<Training> {
    let y = &dataset.features;
    let k = config.dict_size;
    let mut omega = init_dictionary(k, y.nrows(), config.seed);
    let mut r = DMatrix::identity(k, k);
    let mut sweep_rng = ChaCha8Rng::seed_from_u64(config.seed);
    sweep_rng.set_stream(1);

    let omega_y = &omega * y;
    let mut x_prev = DMatrix::zeros(k, y.ncols());
    for (i, col) in omega_y.column_iter().enumerate() {
        x_prev.set_column(
            i,
            &sparse_coding::hard_threshold(&col.into_owned(), config.t0),
        );
    }

    let mut history = Vec::new();
    let mut codes = None;
    for iteration in 0..config.max_iter {
        let omega_y = &omega * y;
        let system = match &graph {
            Some(g) => sparse_coding::build_augmented(&omega_y, &x_prev, g, config.alpha, &r)?,
            None => AugmentedSystem::plain(&omega_y, &r)?,
        };
        let sweep = sparse_coding::ksvd_sweep(&system, config.t0, &mut sweep_rng)?;
        r = sweep.r;
        let update = update_dictionary(&sweep.codes.x, y, config.beta)?;
        // atoms without any code keep their previous analysis row
        let mut next = update.omega;
        for &i in &update.zero_rows {
            next.set_row(i, &omega.row(i));
        }
        omega = next;

        let objective = objective(&omega, y, &sweep.codes.x, config.alpha, graph.as_ref())?;
        let convergence = convergence_metric(&sweep.codes.x, &omega, y);
        if !(objective.total.is_finite() && convergence.is_finite()) {
            return Err(Error::NonFinite {
                iteration,
                detail: format!(
                    "recon = {}, laplacian = {}, convergence = {}",
                    objective.recon, objective.laplacian, convergence
                ),
            });
        }
        history.push(IterationRecord {
            objective,
            convergence,
        });
        x_prev = sweep.codes.x.clone();
        codes = Some(sweep.codes);
        if convergence < config.epsilon {
            break;
        }
    }
    let codes = codes.expect("max_iter >= 1");

    let labels = classifier::one_hot(&dataset.labels, dataset.num_classes())?;
    let w = classifier::fit_ridge(&codes.x, &labels, config.ridge_delta)?;

    Ok(Training {
        model: SkladlModel {
            omega,
            r,
            classifier: w,
            config: config.clone(),
            history,
            class_names: dataset.class_names.clone(),
        },
        codes,
        graph,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_dataset;
    use rand::Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn init_is_deterministic_and_normalized() {
        let a = init_dictionary(30, 12, 9);
        let b = init_dictionary(30, 12, 9);
        assert_eq!(a, b);
        assert_ne!(a, init_dictionary(30, 12, 10));
        for row in a.row_iter() {
            assert!((row.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn init_large_shape() {
        let o = init_dictionary(500, 300, 1);
        assert_eq!(o.shape(), (500, 300));
        assert!(o.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn identity_data_returns_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(4, 5, &mut rng);
        let omega = solve_dictionary(&x, &DMatrix::identity(5, 5), 0.0).unwrap();
        assert!((omega - x).amax() < 1e-12);
    }

    #[test]
    fn recovers_planted_dictionary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut planted = random(7, 4, &mut rng);
        normalize_rows(&mut planted);
        let y = random(4, 30, &mut rng);
        let x = &planted * &y;
        let got = update_dictionary(&x, &y, 1e-12).unwrap().omega;
        assert!((got - planted).amax() < 1e-6);
    }

    #[test]
    fn singular_system_without_ridge() {
        let y = DMatrix::from_element(3, 2, 1.0);
        let x = DMatrix::zeros(2, 2);
        assert!(matches!(
            solve_dictionary(&x, &y, 0.0),
            Err(Error::Singular(_))
        ));
        assert!(solve_dictionary(&x, &y, 0.1).is_ok());
    }

    #[test]
    fn zero_rows_are_flagged() {
        let y = DMatrix::identity(3, 3);
        let mut x = DMatrix::from_element(2, 3, 1.0);
        x.row_mut(1).fill(0.0);
        let upd = update_dictionary(&x, &y, 0.1).unwrap();
        assert_eq!(upd.zero_rows, vec![1]);
    }

    #[test]
    fn objective_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let omega = random(3, 4, &mut rng);
        let y = random(4, 6, &mut rng);
        let x = &omega * &y;
        let o = objective(&omega, &y, &x, 0.0, None).unwrap();
        assert_eq!(o.recon, 0.0);
        assert_eq!(o.laplacian, 0.0);
        assert_eq!(o.sparsity, 18);

        // constant codes lie in the null space of the unnormalized Laplacian
        let g =
            LocalityGraph::from_data(&y, None, 2, KernelWidth::Auto, LaplacianMode::Unnormalized)
                .unwrap();
        let constant = DMatrix::from_fn(3, 6, |r, _| r as f64 + 1.0);
        let o = objective(&omega, &y, &constant, 5.0, Some(&g)).unwrap();
        assert!(o.laplacian < 1e-10);
        assert_eq!(o.total, o.recon + o.laplacian);
    }

    #[test]
    fn recon_matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let omega = random(3, 5, &mut rng);
        let y = random(5, 7, &mut rng);
        let x = random(3, 7, &mut rng);
        let mut naive = 0.0;
        for i in 0..3 {
            for j in 0..7 {
                let mut oy = 0.0;
                for l in 0..5 {
                    oy += omega[(i, l)] * y[(l, j)];
                }
                naive += (x[(i, j)] - oy).powi(2);
            }
        }
        let got = objective(&omega, &y, &x, 0.0, None).unwrap().recon;
        assert!((got - naive).abs() <= 1e-10 * naive);
        assert!(objective(&omega, &y, &random(2, 7, &mut rng), 0.0, None).is_err());
    }

    #[test]
    fn convergence_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let omega = random(3, 4, &mut rng);
        let y = random(4, 5, &mut rng);
        let mut x = &omega * &y;
        assert!(converged(&x, &omega, &y, 1e-300));
        x[(1, 2)] += 1.0;
        assert!(!converged(&x, &omega, &y, 0.5));
        assert!(converged(&x, &omega, &y, f64::INFINITY));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        let bad = TrainConfig {
            t0: 600,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            ridge_delta: 0.0,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let scene = TrainConfig::default().with_preset(Preset::Scene15);
        assert_eq!((scene.alpha, scene.beta), (20.0, 0.11));
    }

    #[test]
    fn training_is_deterministic_and_keeps_unit_rows() {
        let data = synth_dataset(3, 10, 6, 8.0, 1.0, 3);
        let config = TrainConfig {
            dict_size: 9,
            t0: 3,
            max_iter: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&data, &config).unwrap();
        let b = train(&data, &config).unwrap();
        assert_eq!(a, b);
        assert!(a.history.len() <= 4);
        for row in a.omega.row_iter() {
            assert!((row.norm() - 1.0).abs() <= 1e-8);
        }
        assert!(a
            .history
            .iter()
            .all(|h| h.objective.recon >= 0.0 && h.objective.laplacian >= 0.0));
    }

    #[test]
    fn training_rejects_small_dictionary() {
        let data = synth_dataset(4, 6, 5, 8.0, 1.0, 3);
        let config = TrainConfig {
            dict_size: 3,
            t0: 2,
            ..TrainConfig::default()
        };
        assert!(train(&data, &config).is_err());
    }

    #[test]
    fn early_convergence_ends_history() {
        let data = synth_dataset(2, 8, 4, 6.0, 0.5, 1);
        let config = TrainConfig {
            dict_size: 4,
            t0: 4,
            epsilon: 1e9,
            max_iter: 10,
            ..TrainConfig::default()
        };
        let model = train(&data, &config).unwrap();
        assert_eq!(model.history.len(), 1);
        assert!(model.history[0].convergence < config.epsilon);
    }
}
