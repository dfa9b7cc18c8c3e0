//! Client-indexed loss families with exact gradients, stochastic gradients,
//! and analytic regularity constants (smoothness, strong convexity, noise
//! level, dissimilarity).

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{FedsimError, Result};
use crate::numeric::{ParamVector, RngStream};

/// One sparse feature row: strictly increasing (index, value) pairs.
pub type SparseRow = Vec<(u32, f64)>;

/// Quadratic client objective F_i(x) = 0.5 (x - b_i)' A_i (x - b_i).
#[derive(Debug, Clone)]
pub struct QuadraticClient {
    pub curvature: DMatrix<f64>,
    pub center: ParamVector,
}

impl QuadraticClient {
    /// Identity-curvature client: F_i(x) = 0.5 ||x - b_i||^2.
    pub fn identity(center: ParamVector) -> Self {
        let d = center.dim();
        QuadraticClient {
            curvature: DMatrix::identity(d, d),
            center,
        }
    }

    pub fn new(curvature: DMatrix<f64>, center: ParamVector) -> Result<Self> {
        let d = center.dim();
        if curvature.nrows() != d || curvature.ncols() != d {
            return Err(FedsimError::config("curvature matrix shape mismatch"));
        }
        Ok(QuadraticClient { curvature, center })
    }

    fn loss(&self, x: &ParamVector) -> f64 {
        let diff = x.sub(&self.center);
        let dv = nalgebra::DVector::from_column_slice(diff.values());
        0.5 * dv.dot(&(&self.curvature * &dv))
    }

    fn gradient(&self, x: &ParamVector) -> ParamVector {
        let diff = x.sub(&self.center);
        let dv = nalgebra::DVector::from_column_slice(diff.values());
        let g = &self.curvature * dv;
        ParamVector::new(g.iter().copied().collect()).expect("finite gradient")
    }
}

/// Regularized logistic regression over a sparse local dataset, labels in
/// {-1, +1}.
#[derive(Debug, Clone)]
pub struct LogisticClient {
    pub rows: Vec<SparseRow>,
    pub labels: Vec<f64>,
    pub l2_reg: f64,
    pub batch_size: usize,
}

fn sparse_dot(row: &SparseRow, x: &ParamVector) -> f64 {
    row.iter().map(|&(i, v)| v * x[i as usize]).sum()
}

/// log(1 + exp(-z)) without overflow.
fn log1p_exp_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticClient {
    pub fn new(rows: Vec<SparseRow>, labels: Vec<f64>, l2_reg: f64, batch_size: usize) -> Result<Self> {
        if rows.is_empty() || rows.len() != labels.len() {
            return Err(FedsimError::config("logistic client needs matching rows/labels"));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(FedsimError::config("logistic labels must be -1 or +1"));
        }
        if l2_reg < 0.0 {
            return Err(FedsimError::config("l2_reg must be >= 0"));
        }
        Ok(LogisticClient {
            rows,
            labels,
            l2_reg,
            batch_size: batch_size.max(1),
        })
    }

    fn loss(&self, x: &ParamVector) -> f64 {
        let n = self.rows.len() as f64;
        let data: f64 = self
            .rows
            .iter()
            .zip(&self.labels)
            .map(|(row, &y)| log1p_exp_neg(y * sparse_dot(row, x)))
            .sum();
        data / n + 0.5 * self.l2_reg * x.norm_sq()
    }

    fn gradient_over(&self, indices: impl Iterator<Item = usize>, count: usize, x: &ParamVector) -> ParamVector {
        let mut g = vec![0.0; x.dim()];
        for j in indices {
            let row = &self.rows[j];
            let y = self.labels[j];
            let coef = -y * sigmoid(-y * sparse_dot(row, x));
            for &(i, v) in row {
                g[i as usize] += coef * v;
            }
        }
        let inv = 1.0 / count as f64;
        for (gi, xi) in g.iter_mut().zip(x.values()) {
            *gi = *gi * inv + self.l2_reg * xi;
        }
        ParamVector::new(g).expect("finite gradient")
    }

    fn gradient(&self, x: &ParamVector) -> ParamVector {
        self.gradient_over(0..self.rows.len(), self.rows.len(), x)
    }
}

/// Two-parameter least-squares fit of points scattered around a line
/// y = a_i x + b_i; model is w = [slope, intercept].
#[derive(Debug, Clone)]
pub struct LinearToyClient {
    pub slope: f64,
    pub intercept: f64,
    pub points: Vec<(f64, f64)>,
}

impl LinearToyClient {
    /// Generates `n` points on y = slope*x + intercept with Gaussian jitter,
    /// x spread uniformly over [-1, 1].
    pub fn generate(slope: f64, intercept: f64, n: usize, jitter_std: f64, stream: &mut RngStream) -> Self {
        let noise = Normal::new(0.0, jitter_std.max(0.0)).expect("valid normal");
        let points = (0..n)
            .map(|_| {
                let x: f64 = stream.rng().random_range(-1.0..1.0);
                let y = slope * x + intercept + noise.sample(stream.rng());
                (x, y)
            })
            .collect();
        LinearToyClient {
            slope,
            intercept,
            points,
        }
    }

    fn loss(&self, w: &ParamVector) -> f64 {
        let n = self.points.len() as f64;
        self.points
            .iter()
            .map(|&(x, y)| {
                let r = w[0] * x + w[1] - y;
                r * r
            })
            .sum::<f64>()
            / n
    }

    fn gradient(&self, w: &ParamVector) -> ParamVector {
        let n = self.points.len() as f64;
        let mut g = [0.0; 2];
        for &(x, y) in &self.points {
            let r = w[0] * x + w[1] - y;
            g[0] += 2.0 * r * x;
            g[1] += 2.0 * r;
        }
        ParamVector::new(vec![g[0] / n, g[1] / n]).expect("finite gradient")
    }

    /// Hessian is constant: (2/n) sum [x^2, x; x, 1].
    fn hessian(&self) -> DMatrix<f64> {
        let n = self.points.len() as f64;
        let (mut xx, mut xs) = (0.0, 0.0);
        for &(x, _) in &self.points {
            xx += x * x;
            xs += x;
        }
        DMatrix::from_row_slice(2, 2, &[2.0 * xx / n, 2.0 * xs / n, 2.0 * xs / n, 2.0])
    }
}

#[derive(Debug, Clone)]
pub enum ClientObjective {
    Quadratic(QuadraticClient),
    Logistic(LogisticClient),
    LinearToy(LinearToyClient),
}

/// A client-indexed loss family plus its analytic constants.
#[derive(Debug, Clone)]
pub struct ObjectiveSpec {
    clients: Vec<ClientObjective>,
    dim: usize,
    l_smooth: f64,
    mu: f64,
    sigma: f64,
}

fn sym_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

impl ObjectiveSpec {
    /// Quadratic family; L and mu are the exact extreme eigenvalues of the
    /// curvature matrices. `sigma` controls Gaussian gradient noise.
    pub fn quadratic(clients: Vec<QuadraticClient>, sigma: f64) -> Result<Self> {
        if clients.is_empty() {
            return Err(FedsimError::config("need at least one client"));
        }
        let dim = clients[0].center.dim();
        let mut l_smooth: f64 = 0.0;
        let mut mu = f64::INFINITY;
        for c in &clients {
            if c.center.dim() != dim {
                return Err(FedsimError::config("client dimension mismatch"));
            }
            let (lo, hi) = sym_eigen_range(&c.curvature);
            if lo <= 0.0 {
                return Err(FedsimError::config("curvature must be positive definite"));
            }
            l_smooth = l_smooth.max(hi);
            mu = mu.min(lo);
        }
        Ok(ObjectiveSpec {
            clients: clients.into_iter().map(ClientObjective::Quadratic).collect(),
            dim,
            l_smooth,
            mu,
            sigma,
        })
    }

    /// Logistic family over a shared feature dimension. Noise is realized by
    /// uniform mini-batch sampling; `sigma = 0` forces full-batch gradients.
    pub fn logistic(clients: Vec<LogisticClient>, dim: usize, sigma: f64) -> Result<Self> {
        if clients.is_empty() {
            return Err(FedsimError::config("need at least one client"));
        }
        let mut l_smooth: f64 = 0.0;
        let mut mu = f64::INFINITY;
        for c in &clients {
            // Per-client L = lmax(X'X)/(4 n) + l2.
            let n = c.rows.len();
            let mut gram = DMatrix::zeros(dim, dim);
            for row in &c.rows {
                for &(i, vi) in row {
                    for &(j, vj) in row {
                        gram[(i as usize, j as usize)] += vi * vj;
                    }
                }
            }
            let (_, hi) = sym_eigen_range(&gram);
            l_smooth = l_smooth.max(hi / (4.0 * n as f64) + c.l2_reg);
            mu = mu.min(c.l2_reg);
        }
        Ok(ObjectiveSpec {
            clients: clients.into_iter().map(ClientObjective::Logistic).collect(),
            dim,
            l_smooth,
            mu,
            sigma,
        })
    }

    /// Linear toy family, always dimension 2 (slope, intercept).
    pub fn linear_toy(clients: Vec<LinearToyClient>, sigma: f64) -> Result<Self> {
        if clients.is_empty() {
            return Err(FedsimError::config("need at least one client"));
        }
        let mut l_smooth: f64 = 0.0;
        let mut mu = f64::INFINITY;
        for c in &clients {
            let (lo, hi) = sym_eigen_range(&c.hessian());
            l_smooth = l_smooth.max(hi);
            mu = mu.min(lo.max(0.0));
        }
        Ok(ObjectiveSpec {
            clients: clients.into_iter().map(ClientObjective::LinearToy).collect(),
            dim: 2,
            l_smooth,
            mu,
            sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn l_smooth(&self) -> f64 {
        self.l_smooth
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn client(&self, id: usize) -> Result<&ClientObjective> {
        self.clients
            .get(id)
            .ok_or_else(|| FedsimError::config(format!("unknown client id {id}")))
    }

    pub fn quadratic_clients(&self) -> Option<Vec<&QuadraticClient>> {
        self.clients
            .iter()
            .map(|c| match c {
                ClientObjective::Quadratic(q) => Some(q),
                _ => None,
            })
            .collect()
    }

    pub fn client_loss(&self, id: usize, x: &ParamVector) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self.client(id)? {
            ClientObjective::Quadratic(c) => c.loss(x),
            ClientObjective::Logistic(c) => c.loss(x),
            ClientObjective::LinearToy(c) => c.loss(x),
        })
    }

    /// Full-batch gradient of client `id`'s objective.
    pub fn exact_gradient(&self, id: usize, x: &ParamVector) -> Result<ParamVector> {
        self.check_dim(x)?;
        Ok(match self.client(id)? {
            ClientObjective::Quadratic(c) => c.gradient(x),
            ClientObjective::Logistic(c) => c.gradient(x),
            ClientObjective::LinearToy(c) => c.gradient(x),
        })
    }

    /// Unbiased estimate of the exact gradient. Quadratic and LinearToy add
    /// zero-mean Gaussian noise of per-coordinate variance sigma^2/d; Logistic
    /// samples a uniform mini-batch.
    pub fn stochastic_gradient(&self, id: usize, x: &ParamVector, stream: &mut RngStream) -> Result<ParamVector> {
        if self.sigma == 0.0 {
            return self.exact_gradient(id, x);
        }
        self.check_dim(x)?;
        match self.client(id)? {
            ClientObjective::Logistic(c) => {
                let n = c.rows.len();
                let batch = c.batch_size.min(n);
                let indices: Vec<usize> = (0..batch).map(|_| stream.rng().random_range(0..n)).collect();
                Ok(c.gradient_over(indices.into_iter(), batch, x))
            }
            other => {
                let exact = match other {
                    ClientObjective::Quadratic(c) => c.gradient(x),
                    ClientObjective::LinearToy(c) => c.gradient(x),
                    ClientObjective::Logistic(_) => unreachable!(),
                };
                let std = self.sigma / (self.dim as f64).sqrt();
                let noise = Normal::new(0.0, std).map_err(|e| FedsimError::config(e.to_string()))?;
                let values = exact
                    .values()
                    .iter()
                    .map(|&g| g + noise.sample(stream.rng()))
                    .collect();
                ParamVector::new(values)
            }
        }
    }

    /// F(x) = sum_i weights[i] * F_i(x); weights must sum to 1.
    pub fn global_objective(&self, weights: &[f64], x: &ParamVector) -> Result<f64> {
        self.check_weights(weights)?;
        let mut total = 0.0;
        for (i, w) in weights.iter().enumerate() {
            total += w * self.client_loss(i, x)?;
        }
        Ok(total)
    }

    pub fn global_gradient(&self, weights: &[f64], x: &ParamVector) -> Result<ParamVector> {
        self.check_weights(weights)?;
        let grads: Vec<ParamVector> = (0..self.clients.len())
            .map(|i| self.exact_gradient(i, x))
            .collect::<Result<_>>()?;
        let refs: Vec<&ParamVector> = grads.iter().collect();
        crate::numeric::weighted_sum(weights, &refs)
    }

    fn check_dim(&self, x: &ParamVector) -> Result<()> {
        if x.dim() != self.dim {
            return Err(FedsimError::config(format!(
                "vector dimension {} does not match objective dimension {}",
                x.dim(),
                self.dim
            )));
        }
        Ok(())
    }

    fn check_weights(&self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.clients.len() {
            return Err(FedsimError::config("weight count mismatch"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FedsimError::config(format!("weights sum to {sum}, expected 1")));
        }
        Ok(())
    }
}
