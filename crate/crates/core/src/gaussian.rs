//! Closed-form Gaussian updates: linear-Gaussian likelihoods, marginal
//! Gaussian mixing, Gaussian variational inference and its diagonal
//! partial-consensus variant.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::density::{conditional_marginal_product, geometric_mean, GaussianDensity, Var, VarId, VariableLayout};
use crate::error::{Error, Result};
use crate::estimators::StepOutput;
use crate::network::Network;

/// `q(z | x) = φ(z | Hx, V⁻¹)` over the listed variables (columns of `H` follow `vars`).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianModel {
    vars: Vec<Var>,
    h: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl LinearGaussianModel {
    pub fn new(vars: Vec<Var>, h: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let d: usize = vars.iter().map(|v| v.dim).sum();
        if h.ncols() != d || v.nrows() != h.nrows() || v.ncols() != h.nrows() {
            return Err(Error::layout(format!(
                "H is {}x{}, V is {}x{}, state dimension {d}",
                h.nrows(),
                h.ncols(),
                v.nrows(),
                v.ncols()
            )));
        }
        crate::density::check_symmetric(&v)?;
        crate::density::check_positive_definite(&v)?;
        Ok(LinearGaussianModel { vars, h, v })
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn measurement_dim(&self) -> usize {
        self.h.nrows()
    }

    /// Draws `z ~ N(Hx, V⁻¹)` for a state `x` ordered like `vars`.
    pub fn sample(&self, x: &DVector<f64>, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        let cov = Cholesky::new(self.v.clone())
            .ok_or_else(|| Error::numerical("measurement information not positive definite"))?
            .inverse();
        let l = Cholesky::new(crate::density::symmetrize(cov))
            .ok_or_else(|| Error::numerical("measurement covariance not positive definite"))?
            .l();
        let eps = DVector::from_fn(self.h.nrows(), |_, _| StandardNormal.sample(rng));
        Ok(&self.h * x + l * eps)
    }
}

/// `Ω + α HᵀVH`, `Ωμ + α HᵀVz`, lifted into the prior's variables.
pub fn linear_gaussian_posterior(
    prior: &GaussianDensity,
    model: &LinearGaussianModel,
    z: &DVector<f64>,
    alpha: f64,
) -> Result<GaussianDensity> {
    if z.len() != model.measurement_dim() {
        return Err(Error::layout("measurement has the wrong dimension"));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::numerical(format!("step size must be finite and nonnegative, got {alpha}")));
    }
    for v in &model.vars {
        if !prior.vars().contains(v) {
            return Err(Error::layout(format!("likelihood variable {} is not in the prior", v.id)));
        }
    }
    if alpha == 0.0 {
        return Ok(prior.clone());
    }
    let ht_v = model.h.transpose() * &model.v;
    let d_info = &ht_v * &model.h * alpha;
    let d_vec = &ht_v * z * alpha;
    let ids: Vec<VarId> = model.vars.iter().map(|v| v.id).collect();
    prior.add_information(&ids, &d_info, &d_vec)
}

/// Agent `i`'s marginal mixing step in closed form: neighbor marginals are
/// merged with the own conditional, then pooled with the self term.
pub fn gaussian_marginal_mix(
    own: &GaussianDensity,
    self_weight: f64,
    neighbors: &[(f64, &GaussianDensity)],
) -> Result<GaussianDensity> {
    let merged = neighbors
        .iter()
        .map(|(_, q)| conditional_marginal_product(own, q))
        .collect::<Result<Vec<_>>>()?;
    let mut items = vec![own];
    items.extend(merged.iter());
    let mut weights = vec![self_weight];
    weights.extend(neighbors.iter().map(|(w, _)| *w));
    geometric_mean(&items, &weights)
}

/// `R_ij` and `S_ij` for a pair of agents.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexMaps {
    /// For each of agent `i`'s scalar indices, the matching index in agent `j`'s vector.
    shared: Vec<Option<usize>>,
    dim_j: usize,
}

impl IndexMaps {
    pub fn new(layout: &VariableLayout, i: usize, j: usize) -> Self {
        let offsets_j: Vec<(VarId, usize)> = {
            let mut acc = 0;
            layout
                .agent_vars(j)
                .iter()
                .map(|&v| {
                    let o = acc;
                    acc += layout.dim(v);
                    (v, o)
                })
                .collect()
        };
        let mut shared = Vec::with_capacity(layout.agent_dim(i));
        for &v in layout.agent_vars(i) {
            let hit = offsets_j.iter().find(|(w, _)| *w == v).map(|(_, o)| *o);
            for k in 0..layout.dim(v) {
                shared.push(hit.map(|o| o + k));
            }
        }
        IndexMaps { shared, dim_j: layout.agent_dim(j) }
    }

    pub fn local(&self) -> &[Option<usize>] {
        &self.shared
    }

    /// `𝔡_i × 𝔡_j` selection of shared indices.
    pub fn r(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.shared.len(), self.dim_j);
        for (a, s) in self.shared.iter().enumerate() {
            if let Some(b) = s {
                m[(a, *b)] = 1.0;
            }
        }
        m
    }

    /// Diagonal selector of agent-`i`-only indices.
    pub fn s(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            self.shared.len(),
            self.shared.iter().map(|s| if s.is_none() { 1.0 } else { 0.0 }),
        ))
    }
}

/// A twice-differentiable log-likelihood over a set of variables.
pub trait LogLikelihood: Sync {
    fn vars(&self) -> &[Var];
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Exact or quadrature-exact `(E[∇], E[∇²])` under `N(mean, cov)`, if the model has one.
    fn analytic_expectations(&self, _mean: &DVector<f64>, _cov: &DMatrix<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        None
    }
}

/// Scaled unscented transform parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Unscented {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for Unscented {
    fn default() -> Self {
        Unscented { alpha: 1e-3, beta: 2.0, kappa: 0.0 }
    }
}

/// How GVI evaluates `E[∇ log q]` and `E[∇² log q]` under the current Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
#[derive(Default)]
pub enum ExpectationRule {
    #[default]
    Analytic,
    Unscented(Unscented),
    MonteCarlo { samples: usize, seed: u64 },
}


/// `(E[∇], E[∇²])` of `loglik` under `N(mean, cov)`.
pub fn expected_derivatives(
    loglik: &dyn LogLikelihood,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rule: ExpectationRule,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = mean.len();
    match rule {
        ExpectationRule::Analytic => loglik
            .analytic_expectations(mean, cov)
            .ok_or_else(|| Error::Contract("likelihood provides no analytic expectation rule".into())),
        ExpectationRule::Unscented(u) => {
            let lambda = u.alpha * u.alpha * (d as f64 + u.kappa) - d as f64;
            let scale = d as f64 + lambda;
            let l = Cholesky::new(cov * scale)
                .ok_or_else(|| Error::numerical("unscented: covariance not positive definite"))?
                .l();
            let w0 = lambda / scale;
            let wi = 1.0 / (2.0 * scale);
            let mut g = loglik.gradient(mean) * w0;
            let mut h = loglik.hessian(mean) * w0;
            for k in 0..d {
                let col = l.column(k);
                for x in [mean + col, mean - col] {
                    g += loglik.gradient(&x) * wi;
                    h += loglik.hessian(&x) * wi;
                }
            }
            Ok((g, h))
        }
        ExpectationRule::MonteCarlo { samples, seed } => {
            if samples == 0 {
                return Err(Error::config("expectation_rule.samples", "must be positive"));
            }
            let l = Cholesky::new(cov.clone())
                .ok_or_else(|| Error::numerical("monte-carlo: covariance not positive definite"))?
                .l();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = DVector::zeros(d);
            let mut h = DMatrix::zeros(d, d);
            for _ in 0..samples {
                let eps = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                let x = mean + &l * eps;
                g += loglik.gradient(&x);
                h += loglik.hessian(&x);
            }
            let n = samples as f64;
            Ok((g / n, h / n))
        }
    }
}

/// `Ω' = Ω − α E[∇²]`, `μ' = μ + Ω'⁻¹ α E[∇]`, expectations under the prior.
pub fn gvi_update(
    prior: &GaussianDensity,
    loglik: &dyn LogLikelihood,
    rule: ExpectationRule,
    alpha: f64,
) -> Result<GaussianDensity> {
    let ids: Vec<VarId> = loglik.vars().iter().map(|v| v.id).collect();
    let idx = prior.indices_of(&ids)?;
    let mean = prior.mean()?;
    let cov = prior.covariance()?;
    let sub_mean = crate::density::select_vec(&mean, &idx);
    let sub_cov = crate::density::select(&cov, &idx, &idx);
    let (g, h) = expected_derivatives(loglik, &sub_mean, &sub_cov, rule)?;
    if g.iter().chain(h.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite expected derivatives"));
    }
    let mut info = prior.info_matrix().clone();
    let mut grad = DVector::zeros(prior.dim());
    for (a, &ia) in idx.iter().enumerate() {
        grad[ia] = alpha * g[a];
        for (b, &ib) in idx.iter().enumerate() {
            info[(ia, ib)] -= alpha * h[(a, b)];
        }
    }
    let info = crate::density::symmetrize(info);
    let chol = Cholesky::new(info.clone())
        .ok_or_else(|| Error::Curvature("updated information matrix is not positive definite".into()))?;
    let new_mean = mean + chol.solve(&grad);
    let eta = &info * new_mean;
    GaussianDensity::new(prior.vars().to_vec(), info, eta).map_err(|e| match e {
        Error::Numerical(m) => Error::Curvature(m),
        other => other,
    })
}

fn gauss_hermite() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    NODES.get_or_init(|| {
        let n = 40;
        let mut j = DMatrix::zeros(n, n);
        for k in 1..n {
            let b = (k as f64 / 2.0).sqrt();
            j[(k, k - 1)] = b;
            j[(k - 1, k)] = b;
        }
        let eig = j.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().unzip()
    })
}

/// `E[f(s)]` for `s ~ N(mean, var)` by 40-node Gauss–Hermite quadrature.
pub fn gauss_hermite_expectation(mean: f64, var: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = gauss_hermite();
    let s = (2.0 * var.max(0.0)).sqrt();
    x.iter().zip(w).map(|(xi, wi)| wi * f(mean + s * xi)).sum()
}

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^s)` without overflow.
pub fn softplus(s: f64) -> f64 {
    s.max(0.0) + (-s.abs()).exp().ln_1p()
}

/// Sum of Bernoulli-logistic terms `y log σ(Φᵀx) + (1−y) log(1−σ(Φᵀx))`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticLikelihood {
    vars: Vec<Var>,
    points: Vec<(DVector<f64>, f64)>,
}

impl LogisticLikelihood {
    pub fn new(vars: Vec<Var>, points: Vec<(DVector<f64>, f64)>) -> Result<Self> {
        let d: usize = vars.iter().map(|v| v.dim).sum();
        for (phi, y) in &points {
            if phi.len() != d {
                return Err(Error::layout(format!("feature vector of length {} for state dimension {d}", phi.len())));
            }
            if !(0.0..=1.0).contains(y) {
                return Err(Error::layout("labels must lie in [0, 1]"));
            }
        }
        Ok(LogisticLikelihood { vars, points })
    }

    /// `E[log q]` under `N(mean, cov)`.
    pub fn expected_value(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        self.points
            .iter()
            .map(|(phi, y)| {
                let m = phi.dot(mean);
                let v = phi.dot(&(cov * phi));
                gauss_hermite_expectation(m, v, |s| -y * softplus(-s) - (1.0 - y) * softplus(s))
            })
            .sum()
    }
}

impl LogLikelihood for LogisticLikelihood {
    fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.points
            .iter()
            .map(|(phi, y)| {
                let s = phi.dot(x);
                -y * softplus(-s) - (1.0 - y) * softplus(s)
            })
            .sum()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for (phi, y) in &self.points {
            g += phi * (y - sigmoid(phi.dot(x)));
        }
        g
    }

    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(x.len(), x.len());
        for (phi, _) in &self.points {
            let s = sigmoid(phi.dot(x));
            h -= phi * phi.transpose() * (s * (1.0 - s));
        }
        h
    }

    fn analytic_expectations(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let d = mean.len();
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for (phi, y) in &self.points {
            let m = phi.dot(mean);
            let v = phi.dot(&(cov * phi));
            let e_sig = gauss_hermite_expectation(m, v, sigmoid);
            let e_curv = gauss_hermite_expectation(m, v, |s| {
                let q = sigmoid(s);
                q * (1.0 - q)
            });
            g += phi * (y - e_sig);
            h -= phi * phi.transpose() * e_curv;
        }
        Some((g, h))
    }
}

/// Linear-Gaussian likelihood viewed as a [`LogLikelihood`].
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianLogLik {
    pub model: LinearGaussianModel,
    pub z: DVector<f64>,
}

impl LogLikelihood for LinearGaussianLogLik {
    fn vars(&self) -> &[Var] {
        self.model.vars()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let r = &self.z - self.model.h() * x;
        -0.5 * r.dot(&(self.model.v() * &r))
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.model.h().transpose() * self.model.v() * (&self.z - self.model.h() * x)
    }

    fn hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        -(self.model.h().transpose() * self.model.v() * self.model.h())
    }

    fn analytic_expectations(&self, mean: &DVector<f64>, _cov: &DMatrix<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        Some((self.gradient(mean), self.hessian(mean)))
    }
}

/// Gaussian with diagonal information matrix, stored as `(diag Ω, μ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagGaussian {
    vars: Vec<Var>,
    info: DVector<f64>,
    mean: DVector<f64>,
}

impl DiagGaussian {
    pub fn new(vars: Vec<Var>, info: DVector<f64>, mean: DVector<f64>) -> Result<Self> {
        let d: usize = vars.iter().map(|v| v.dim).sum();
        if info.len() != d || mean.len() != d {
            return Err(Error::layout("diagonal Gaussian parameters do not match variable dimension"));
        }
        if !vars.windows(2).all(|w| w[0].id < w[1].id) {
            return Err(Error::layout("diagonal Gaussian variables must be in ascending order"));
        }
        if info.iter().any(|v| !(v.is_finite() && *v > crate::density::EIGEN_FLOOR)) {
            return Err(Error::numerical("diagonal information entries must be finite and positive"));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("non-finite mean"));
        }
        Ok(DiagGaussian { vars, info, mean })
    }

    /// Accepts only an exactly diagonal information matrix.
    pub fn try_from_dense(p: &GaussianDensity) -> Result<Self> {
        let m = p.info_matrix();
        let d = m.nrows();
        for r in 0..d {
            for c in 0..d {
                if r != c && m[(r, c)] != 0.0 {
                    return Err(Error::Contract(format!("information matrix has off-diagonal entry at ({r},{c})")));
                }
            }
        }
        let info = m.diagonal();
        let mean = p.info_vector().component_div(&info);
        DiagGaussian::new(p.vars().to_vec(), info, mean)
    }

    pub fn to_dense(&self) -> Result<GaussianDensity> {
        GaussianDensity::new(
            self.vars.clone(),
            DMatrix::from_diagonal(&self.info),
            self.info.component_mul(&self.mean),
        )
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn info(&self) -> &DVector<f64> {
        &self.info
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
}

/// Mixing plan for the diagonal step: for every agent, `(j, A_ij, maps_ij)` over `V_i`.
#[derive(Clone, Debug)]
pub struct DiagMixPlan {
    rows: Vec<Vec<(usize, f64, IndexMaps)>>,
}

impl DiagMixPlan {
    pub fn new(layout: &VariableLayout, network: &Network) -> Result<Self> {
        if layout.n_agents() != network.n() {
            return Err(Error::layout("layout and network have different agent counts"));
        }
        let rows = (0..network.n())
            .map(|i| {
                network
                    .closed_neighborhood(i)
                    .into_iter()
                    .map(|j| (j, network.weight(i, j), IndexMaps::new(layout, i, j)))
                    .collect()
            })
            .collect();
        Ok(DiagMixPlan { rows })
    }
}

/// Mixing for diagonal Gaussians:
/// `Ω̃_ji = R_ij Ω_j + S_ij Ω_i`, `μ̃_ji = R_ij μ_j + S_ij μ_i`,
/// `Ω^v = Σ_j A_ij Ω̃_ji`, `Ω^v μ^v = Σ_j A_ij Ω̃_ji μ̃_ji`.
pub fn diag_mix(states: &[DiagGaussian], plan: &DiagMixPlan) -> Result<Vec<DiagGaussian>> {
    if states.len() != plan.rows.len() {
        return Err(Error::layout("state count does not match the mixing plan"));
    }
    plan.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let own = &states[i];
            let d = own.info.len();
            let mut info = DVector::zeros(d);
            let mut eta = DVector::zeros(d);
            for (j, w, maps) in row {
                let other = &states[*j];
                for (a, s) in maps.local().iter().enumerate() {
                    let (om, mu) = match s {
                        Some(b) => (other.info[*b], other.mean[*b]),
                        None => (own.info[a], own.mean[a]),
                    };
                    info[a] += w * om;
                    eta[a] += w * om * mu;
                }
            }
            let mean = eta.component_div(&info);
            DiagGaussian::new(own.vars.clone(), info, mean)
        })
        .collect()
}

/// GVI update restricted to the diagonal: `Ω' = Ω^v − α diag E[∇²]`,
/// `μ' = μ^v + α E[∇] / Ω'`.
pub fn diag_gvi_update(
    prior: &DiagGaussian,
    loglik: &dyn LogLikelihood,
    rule: ExpectationRule,
    alpha: f64,
) -> Result<DiagGaussian> {
    if loglik.vars() != prior.vars() {
        return Err(Error::layout("likelihood variables differ from the estimate's"));
    }
    let cov = DMatrix::from_diagonal(&prior.info.map(|v| 1.0 / v));
    let (g, h) = expected_derivatives(loglik, &prior.mean, &cov, rule)?;
    let info = &prior.info - h.diagonal() * alpha;
    if let Some(k) = info.iter().position(|v| !(v.is_finite() && *v > crate::density::EIGEN_FLOOR)) {
        return Err(Error::Curvature(format!("diagonal information entry {k} became {}", info[k])));
    }
    let mean = &prior.mean + (g * alpha).component_div(&info);
    DiagGaussian::new(prior.vars.clone(), info, mean)
}

/// One round of the diagonal partial-consensus estimator.
pub fn diag_gvi_step(
    states: &[DiagGaussian],
    plan: &DiagMixPlan,
    likelihoods: &[&dyn LogLikelihood],
    rule: ExpectationRule,
    alpha: f64,
) -> Result<StepOutput<DiagGaussian>> {
    if likelihoods.len() != states.len() {
        return Err(Error::layout("one likelihood per agent required"));
    }
    let mixed = diag_mix(states, plan)?;
    let next = mixed
        .iter()
        .zip(likelihoods)
        .map(|(v, l)| diag_gvi_update(v, *l, rule, alpha))
        .collect::<Result<Vec<_>>>()?;
    Ok(StepOutput { mixed, next })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::kl_divergence;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn std1() -> GaussianDensity {
        GaussianDensity::new(vec![Var::scalar(0)], dmatrix![1.0], dvector![0.0]).unwrap()
    }

    #[test]
    fn scalar_posterior() {
        let m = LinearGaussianModel::new(vec![Var::scalar(0)], dmatrix![1.0], dmatrix![1.0]).unwrap();
        let post = linear_gaussian_posterior(&std1(), &m, &dvector![1.0], 1.0).unwrap();
        assert_relative_eq!(post.mean().unwrap()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(post.covariance().unwrap()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_eq!(linear_gaussian_posterior(&std1(), &m, &dvector![1.0], 0.0).unwrap(), std1());
    }

    #[test]
    fn relative_measurement_block() {
        let prior = GaussianDensity::isotropic(vec![Var::scalar(0), Var::scalar(1)], dvector![0.0, 0.0], 1.0).unwrap();
        let m = LinearGaussianModel::new(vec![Var::scalar(0), Var::scalar(1)], dmatrix![1.0, -1.0], dmatrix![2.0]).unwrap();
        let post = linear_gaussian_posterior(&prior, &m, &dvector![0.3], 1.0).unwrap();
        let gain = post.info_matrix() - prior.info_matrix();
        assert_eq!(gain, dmatrix![2.0, -2.0; -2.0, 2.0]);
    }

    #[test]
    fn gvi_linear_reduces_to_posterior() {
        let prior = GaussianDensity::new(
            vec![Var::scalar(0), Var::scalar(1)],
            dmatrix![2.0, 0.4; 0.4, 1.0],
            dvector![0.5, -0.2],
        )
        .unwrap();
        let model = LinearGaussianModel::new(vec![Var::scalar(1)], dmatrix![2.0], dmatrix![3.0]).unwrap();
        let z = dvector![1.3];
        let exact = linear_gaussian_posterior(&prior, &model, &z, 1.0).unwrap();
        let ll = LinearGaussianLogLik { model, z };
        for rule in [ExpectationRule::Analytic, ExpectationRule::Unscented(Unscented::default())] {
            let gvi = gvi_update(&prior, &ll, rule, 1.0).unwrap();
            assert!(kl_divergence(&gvi, &exact).unwrap() < 1e-12);
        }
    }

    struct Flat(Vec<Var>);

    impl LogLikelihood for Flat {
        fn vars(&self) -> &[Var] {
            &self.0
        }
        fn value(&self, _: &DVector<f64>) -> f64 {
            0.0
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(x.len())
        }
        fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(x.len(), x.len())
        }
    }

    #[test]
    fn gvi_flat_is_identity() {
        let out = gvi_update(&std1(), &Flat(vec![Var::scalar(0)]), ExpectationRule::Unscented(Unscented::default()), 1.0)
            .unwrap();
        assert!(kl_divergence(&out, &std1()).unwrap() < 1e-15);
        assert!(matches!(
            gvi_update(&std1(), &Flat(vec![Var::scalar(0)]), ExpectationRule::Analytic, 1.0),
            Err(Error::Contract(_))
        ));
    }

    struct Convex(Vec<Var>);

    impl LogLikelihood for Convex {
        fn vars(&self) -> &[Var] {
            &self.0
        }
        fn value(&self, x: &DVector<f64>) -> f64 {
            2.0 * x.dot(x)
        }
        fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
            x * 4.0
        }
        fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(x.len(), x.len()) * 4.0
        }
    }

    #[test]
    fn gvi_curvature_error() {
        let r = gvi_update(&std1(), &Convex(vec![Var::scalar(0)]), ExpectationRule::Unscented(Unscented::default()), 1.0);
        assert!(matches!(r, Err(Error::Curvature(_))));
    }

    #[test]
    fn logistic_gradient_finite_difference() {
        let ll = LogisticLikelihood::new(vec![Var::new(0, 2)], vec![(dvector![0.7, -1.2], 1.0), (dvector![0.1, 0.5], 0.0)]).unwrap();
        let x = dvector![0.3, -0.4];
        let g = ll.gradient(&x);
        let h = 1e-6;
        for k in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (ll.value(&xp) - ll.value(&xm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-5);
        }
    }

    #[test]
    fn gauss_hermite_moments() {
        assert_relative_eq!(gauss_hermite_expectation(1.5, 2.0, |s| s), 1.5, epsilon = 1e-12);
        assert_relative_eq!(gauss_hermite_expectation(1.5, 2.0, |s| s * s), 2.0 + 2.25, epsilon = 1e-11);
    }

    #[test]
    fn diag_contract() {
        let p = GaussianDensity::new(vec![Var::scalar(0), Var::scalar(1)], dmatrix![2.0, 0.1; 0.1, 1.0], dvector![0.0, 0.0])
            .unwrap();
        assert!(matches!(DiagGaussian::try_from_dense(&p), Err(Error::Contract(_))));
        let q = GaussianDensity::new(vec![Var::scalar(0), Var::scalar(1)], dmatrix![2.0, 0.0; 0.0, 1.0], dvector![1.0, 3.0])
            .unwrap();
        let d = DiagGaussian::try_from_dense(&q).unwrap();
        assert_eq!(d.mean(), &dvector![0.5, 3.0]);
        assert_eq!(d.to_dense().unwrap(), q);
    }

    #[test]
    fn index_maps_partition() {
        let layout = VariableLayout::new(
            vec![("a".into(), 1), ("b".into(), 2), ("c".into(), 1)],
            vec![vec![VarId(0), VarId(1)], vec![VarId(1), VarId(2)]],
        )
        .unwrap();
        let m = IndexMaps::new(&layout, 0, 1);
        assert_eq!(m.local(), &[None, Some(0), Some(1)]);
        let ones = DVector::from_element(3, 1.0);
        let cover = m.r() * ones + m.s() * DVector::from_element(3, 1.0);
        assert_eq!(cover, DVector::from_element(3, 1.0));
    }
}
