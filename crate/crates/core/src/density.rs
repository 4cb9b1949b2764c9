//! Gaussian densities in information form and the exact algebra shared by
//! every estimator: products, marginals, conditionals, weighted geometric
//! pooling and divergences.
//!
//! A density stores `(Ω, Ωμ)` over an ordered list of variables. Variables are
//! always kept in ascending [`VarId`] order, which is the global order of the
//! owning [`VariableLayout`]; constructors permute their input to that order,
//! so two densities over the same variable set always have aligned blocks.
//!
//! Geometric pooling uses the additive rule `Ω = Σ w_j Ω_j`, `Ωμ = Σ w_j Ω_jμ_j`
//! for any nonnegative weights. For weights summing to one this is exactly the
//! renormalized weighted geometric mean of the inputs; for sub-stochastic rows
//! the same rule is applied and the result is the Gaussian proportional to
//! `Π p_j^{w_j}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry tolerance relative to the largest absolute entry.
pub const SYMMETRY_RTOL: f64 = 1e-12;
/// Smallest admissible eigenvalue of an information matrix.
pub const EIGEN_FLOOR: f64 = 1e-12;
/// Accuracy declared for quadrature-based TV between Gaussians.
pub const GAUSSIAN_TV_ACCURACY: f64 = 1e-4;

/// Index of a variable in the global [`VariableLayout`] order.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// A variable together with its dimension.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Var {
    pub id: VarId,
    pub dim: usize,
}

impl Var {
    pub fn new(id: usize, dim: usize) -> Self {
        Var { id: VarId(id), dim }
    }

    pub fn scalar(id: usize) -> Self {
        Var::new(id, 1)
    }
}

/// Global registry of variables and of the subset `X_i` each agent estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableLayout {
    names: Vec<String>,
    dims: Vec<usize>,
    agent_subsets: Vec<Vec<VarId>>,
}

impl VariableLayout {
    /// Builds a layout; agent subsets are sorted into global order.
    pub fn new(variables: Vec<(String, usize)>, agent_subsets: Vec<Vec<VarId>>) -> Result<Self> {
        if variables.is_empty() {
            return Err(Error::layout("layout has no variables"));
        }
        let mut seen = BTreeSet::new();
        for (name, dim) in &variables {
            if !seen.insert(name.clone()) {
                return Err(Error::layout(format!("duplicate variable `{name}`")));
            }
            if *dim == 0 {
                return Err(Error::layout(format!("variable `{name}` has zero dimension")));
            }
        }
        let m = variables.len();
        let mut covered = vec![false; m];
        let mut subsets = Vec::with_capacity(agent_subsets.len());
        for (agent, subset) in agent_subsets.into_iter().enumerate() {
            let mut ids: Vec<VarId> = subset;
            ids.sort();
            ids.dedup();
            if ids.is_empty() {
                return Err(Error::layout(format!("agent {agent} has an empty variable subset")));
            }
            for id in &ids {
                if id.0 >= m {
                    return Err(Error::layout(format!("agent {agent} references unknown {id}")));
                }
                covered[id.0] = true;
            }
            subsets.push(ids);
        }
        if subsets.is_empty() {
            return Err(Error::layout("layout has no agents"));
        }
        if let Some(v) = covered.iter().position(|c| !c) {
            return Err(Error::layout(format!(
                "variable `{}` is not estimated by any agent",
                variables[v].0
            )));
        }
        let (names, dims) = variables.into_iter().unzip();
        Ok(VariableLayout { names, dims, agent_subsets: subsets })
    }

    /// Every agent estimates every variable.
    pub fn replicated(variables: Vec<(String, usize)>, n_agents: usize) -> Result<Self> {
        let all: Vec<VarId> = (0..variables.len()).map(VarId).collect();
        VariableLayout::new(variables, vec![all; n_agents])
    }

    pub fn n_agents(&self) -> usize {
        self.agent_subsets.len()
    }

    pub fn n_vars(&self) -> usize {
        self.dims.len()
    }

    pub fn dim(&self, id: VarId) -> usize {
        self.dims[id.0]
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.names[id.0]
    }

    /// Total dimension `d = Σ d_v`.
    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.dims.iter().enumerate().map(|(i, &d)| Var::new(i, d)).collect()
    }

    /// `X_i` for agent `i`.
    pub fn agent_vars(&self, agent: usize) -> &[VarId] {
        &self.agent_subsets[agent]
    }

    /// Dimension of `X_i`.
    pub fn agent_dim(&self, agent: usize) -> usize {
        self.agent_subsets[agent].iter().map(|v| self.dims[v.0]).sum()
    }

    /// `X_ij = X_i ∩ X_j` in global order.
    pub fn shared(&self, i: usize, j: usize) -> Vec<VarId> {
        let b: BTreeSet<_> = self.agent_subsets[j].iter().collect();
        self.agent_subsets[i].iter().filter(|v| b.contains(v)).copied().collect()
    }

    /// Agents whose subset contains `id`.
    pub fn owners(&self, id: VarId) -> Vec<usize> {
        (0..self.n_agents()).filter(|&a| self.agent_subsets[a].contains(&id)).collect()
    }

    pub fn vars_of(&self, ids: &[VarId]) -> Vec<Var> {
        ids.iter().map(|&id| Var { id, dim: self.dims[id.0] }).collect()
    }

    /// Storage for the marginal scheme, `Σ_i 𝔡_i`.
    pub fn marginal_storage(&self) -> usize {
        (0..self.n_agents()).map(|a| self.agent_dim(a)).sum()
    }

    /// Storage for full replication, `n·d`.
    pub fn replicated_storage(&self) -> usize {
        self.n_agents() * self.total_dim()
    }
}

/// Multivariate normal in information form.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianDensity {
    vars: Vec<Var>,
    info_matrix: DMatrix<f64>,
    info_vector: DVector<f64>,
}

impl GaussianDensity {
    /// Validating constructor. Variables may be given in any order; blocks are
    /// permuted into ascending id order.
    pub fn new(vars: Vec<Var>, info_matrix: DMatrix<f64>, info_vector: DVector<f64>) -> Result<Self> {
        check_symmetric(&info_matrix)?;
        Self::assemble(vars, info_matrix, info_vector)
    }

    /// Builds from mean and covariance.
    pub fn from_moments(vars: Vec<Var>, mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&covariance)?;
        let chol = Cholesky::new(covariance)
            .ok_or_else(|| Error::numerical("covariance is not positive definite"))?;
        let info = symmetrize(chol.inverse());
        let eta = &info * mean;
        Self::assemble(vars, info, eta)
    }

    /// Independent standard-form blocks `N(mean, (precision·I)^{-1})`.
    pub fn isotropic(vars: Vec<Var>, mean: DVector<f64>, precision: f64) -> Result<Self> {
        let d = mean.len();
        let info = DMatrix::identity(d, d) * precision;
        let eta = &info * mean;
        Self::assemble(vars, info, eta)
    }

    /// Constructor for results of internal algebra: symmetrizes away rounding
    /// asymmetry, then runs the same positive-definiteness check.
    pub(crate) fn from_algebra(vars: Vec<Var>, info_matrix: DMatrix<f64>, info_vector: DVector<f64>) -> Result<Self> {
        Self::assemble(vars, symmetrize(info_matrix), info_vector)
    }

    fn assemble(vars: Vec<Var>, info_matrix: DMatrix<f64>, info_vector: DVector<f64>) -> Result<Self> {
        if vars.is_empty() {
            return Err(Error::layout("density must have at least one variable"));
        }
        let d: usize = vars.iter().map(|v| v.dim).sum();
        if vars.iter().any(|v| v.dim == 0) {
            return Err(Error::layout("variable with zero dimension"));
        }
        if info_matrix.nrows() != d || info_matrix.ncols() != d || info_vector.len() != d {
            return Err(Error::layout(format!(
                "information matrix {}x{} / vector {} do not match variable dimension {d}",
                info_matrix.nrows(),
                info_matrix.ncols(),
                info_vector.len()
            )));
        }
        let mut uniq = BTreeSet::new();
        for v in &vars {
            if !uniq.insert(v.id) {
                return Err(Error::layout(format!("duplicate variable {}", v.id)));
            }
        }
        if info_matrix.iter().chain(info_vector.iter()).any(|x| !x.is_finite()) {
            return Err(Error::numerical("non-finite information parameter"));
        }
        let sorted = vars.windows(2).all(|w| w[0].id < w[1].id);
        let (vars, info_matrix, info_vector) = if sorted {
            (vars, info_matrix, info_vector)
        } else {
            let mut order: Vec<usize> = (0..vars.len()).collect();
            order.sort_by_key(|&k| vars[k].id);
            let offsets = offsets(&vars);
            let perm: Vec<usize> = order
                .iter()
                .flat_map(|&k| offsets[k]..offsets[k] + vars[k].dim)
                .collect();
            let m = select(&info_matrix, &perm, &perm);
            let v = select_vec(&info_vector, &perm);
            (order.iter().map(|&k| vars[k]).collect(), m, v)
        };
        check_positive_definite(&info_matrix)?;
        Ok(GaussianDensity { vars, info_matrix, info_vector })
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var_ids(&self) -> Vec<VarId> {
        self.vars.iter().map(|v| v.id).collect()
    }

    pub fn dim(&self) -> usize {
        self.info_vector.len()
    }

    pub fn info_matrix(&self) -> &DMatrix<f64> {
        &self.info_matrix
    }

    pub fn info_vector(&self) -> &DVector<f64> {
        &self.info_vector
    }

    pub fn contains(&self, id: VarId) -> bool {
        self.vars.iter().any(|v| v.id == id)
    }

    fn cholesky(&self) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.info_matrix.clone())
            .ok_or_else(|| Error::numerical("information matrix is not positive definite"))
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        Ok(self.cholesky()?.solve(&self.info_vector))
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(symmetrize(self.cholesky()?.inverse()))
    }

    /// `ln det Ω`.
    pub fn log_det_info(&self) -> Result<f64> {
        let chol = self.cholesky()?;
        Ok(2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>())
    }

    /// Scalar offsets of each variable block within the density vector.
    pub fn indices_of(&self, ids: &[VarId]) -> Result<Vec<usize>> {
        let offs = offsets(&self.vars);
        let mut out = Vec::new();
        for id in ids {
            let k = self
                .vars
                .iter()
                .position(|v| v.id == *id)
                .ok_or_else(|| Error::layout(format!("variable {id} not in density")))?;
            out.extend(offs[k]..offs[k] + self.vars[k].dim);
        }
        Ok(out)
    }

    /// Mean of one variable block.
    pub fn mean_of(&self, id: VarId) -> Result<DVector<f64>> {
        let idx = self.indices_of(&[id])?;
        Ok(select_vec(&self.mean()?, &idx))
    }

    /// Log density at `x` (full normalization).
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let chol = self.cholesky()?;
        let mu = chol.solve(&self.info_vector);
        let diff = x - &mu;
        let quad = diff.dot(&(&self.info_matrix * &diff));
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let d = self.dim() as f64;
        Ok(-0.5 * quad + 0.5 * logdet - 0.5 * d * (2.0 * std::f64::consts::PI).ln())
    }

    /// Product with a Gaussian factor over a subset of this density's variables,
    /// given as an information contribution `(ΔΩ, Δη)` on those variables.
    pub fn add_information(&self, on: &[VarId], delta_info: &DMatrix<f64>, delta_vec: &DVector<f64>) -> Result<Self> {
        let idx = self.indices_of(on)?;
        if delta_info.nrows() != idx.len() || delta_info.ncols() != idx.len() || delta_vec.len() != idx.len() {
            return Err(Error::layout("information increment has the wrong dimension"));
        }
        let mut m = self.info_matrix.clone();
        let mut v = self.info_vector.clone();
        for (a, &ia) in idx.iter().enumerate() {
            v[ia] += delta_vec[a];
            for (b, &ib) in idx.iter().enumerate() {
                m[(ia, ib)] += delta_info[(a, b)];
            }
        }
        GaussianDensity::from_algebra(self.vars.clone(), m, v)
    }

    pub fn marginalize(&self, keep: &[VarId]) -> Result<Self> {
        marginalize(self, keep)
    }

    pub fn condition(&self, given: &[VarId]) -> Result<ConditionalGaussian> {
        condition(self, given)
    }
}

/// Linear-Gaussian conditional `p(x_a | x_b)` in information form:
/// `Ω_{a|b} = Ω_aa`, `η_{a|b}(x_b) = η_a − Ω_ab x_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalGaussian {
    free: Vec<Var>,
    given: Vec<Var>,
    info: DMatrix<f64>,
    info_vector: DVector<f64>,
    coupling: DMatrix<f64>,
}

impl ConditionalGaussian {
    pub fn free_vars(&self) -> &[Var] {
        &self.free
    }

    pub fn given_vars(&self) -> &[Var] {
        &self.given
    }

    /// `Ω_aa`, independent of the conditioning values.
    pub fn info_matrix(&self) -> &DMatrix<f64> {
        &self.info
    }

    /// `Ω_ab`.
    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    /// The conditional density for a particular assignment of the given variables.
    pub fn at(&self, given_values: &DVector<f64>) -> Result<GaussianDensity> {
        if given_values.len() != self.coupling.ncols() {
            return Err(Error::layout("conditioning value has the wrong dimension"));
        }
        let eta = &self.info_vector - &self.coupling * given_values;
        GaussianDensity::from_algebra(self.free.clone(), self.info.clone(), eta)
    }

    /// Joint density `p(x_a | x_b) q(x_b)`.
    pub fn times_marginal(&self, marginal: &GaussianDensity) -> Result<GaussianDensity> {
        let given_ids: Vec<VarId> = self.given.iter().map(|v| v.id).collect();
        if marginal.var_ids() != given_ids || marginal.vars() != self.given.as_slice() {
            return Err(Error::layout("marginal variables do not match the conditioning set"));
        }
        let chol = Cholesky::new(self.info.clone())
            .ok_or_else(|| Error::numerical("conditional information is not positive definite"))?;
        // Ω_ba Ω_aa^{-1} Ω_ab and Ω_ba Ω_aa^{-1} η_a
        let solved = chol.solve(&self.coupling);
        let bb = self.coupling.transpose() * &solved + marginal.info_matrix();
        let eb = self.coupling.transpose() * chol.solve(&self.info_vector) + marginal.info_vector();

        let mut vars: Vec<Var> = self.free.iter().chain(self.given.iter()).copied().collect();
        let na = self.info.nrows();
        let nb = bb.nrows();
        let mut m = DMatrix::zeros(na + nb, na + nb);
        m.view_mut((0, 0), (na, na)).copy_from(&self.info);
        m.view_mut((0, na), (na, nb)).copy_from(&self.coupling);
        m.view_mut((na, 0), (nb, na)).copy_from(&self.coupling.transpose());
        m.view_mut((na, na), (nb, nb)).copy_from(&bb);
        let mut v = DVector::zeros(na + nb);
        v.rows_mut(0, na).copy_from(&self.info_vector);
        v.rows_mut(na, nb).copy_from(&eb);
        // assemble permutes back to global order
        let out = GaussianDensity::from_algebra(std::mem::take(&mut vars), m, v)?;
        Ok(out)
    }
}

/// Closed-form `KL[p, g]`.
pub fn kl_divergence(p: &GaussianDensity, g: &GaussianDensity) -> Result<f64> {
    if p.vars() != g.vars() {
        return Err(Error::layout("KL between densities over different variables"));
    }
    let chol_p = p.cholesky()?;
    let chol_g = g.cholesky()?;
    let cov_p = chol_p.inverse();
    let mu_p = chol_p.solve(p.info_vector());
    let mu_g = chol_g.solve(g.info_vector());
    let diff = &mu_g - &mu_p;
    let trace = (g.info_matrix() * &cov_p).trace();
    let quad = diff.dot(&(g.info_matrix() * &diff));
    let logdet_p = 2.0 * chol_p.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let logdet_g = 2.0 * chol_g.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let k = p.dim() as f64;
    let kl = 0.5 * (trace + quad - k + logdet_p - logdet_g);
    if !kl.is_finite() {
        return Err(Error::numerical("non-finite KL divergence"));
    }
    Ok(kl.max(0.0))
}

/// Total variation between Gaussians by midpoint quadrature on a shared box of
/// ±6σ per axis, refined until successive levels agree. Supports up to three
/// scalar dimensions.
pub fn tv_distance(p: &GaussianDensity, g: &GaussianDensity) -> Result<f64> {
    if p.vars() != g.vars() {
        return Err(Error::layout("TV between densities over different variables"));
    }
    let d = p.dim();
    if d > 3 {
        return Err(Error::layout(format!(
            "quadrature TV supports at most 3 scalar dimensions, got {d}"
        )));
    }
    let (mp, cp) = (p.mean()?, p.covariance()?);
    let (mg, cg) = (g.mean()?, g.covariance()?);
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    for k in 0..d {
        let (sp, sg) = (cp[(k, k)].sqrt(), cg[(k, k)].sqrt());
        lo[k] = (mp[k] - 6.0 * sp).min(mg[k] - 6.0 * sg);
        hi[k] = (mp[k] + 6.0 * sp).max(mg[k] + 6.0 * sg);
    }
    let eval_p = QuadForm::new(p)?;
    let eval_g = QuadForm::new(g)?;
    let max_n = match d {
        1 => 6401,
        2 => 801,
        _ => 201,
    };
    let mut n = 101;
    let mut prev = tv_on_grid(&eval_p, &eval_g, &lo, &hi, n);
    while n < max_n {
        n = 2 * n - 1;
        let cur = tv_on_grid(&eval_p, &eval_g, &lo, &hi, n);
        if (cur - prev).abs() < 0.1 * GAUSSIAN_TV_ACCURACY {
            return Ok(cur.clamp(0.0, 1.0));
        }
        prev = cur;
    }
    Ok(prev.clamp(0.0, 1.0))
}

struct QuadForm {
    info: DMatrix<f64>,
    mean: DVector<f64>,
    log_norm: f64,
}

impl QuadForm {
    fn new(p: &GaussianDensity) -> Result<Self> {
        let d = p.dim() as f64;
        Ok(QuadForm {
            info: p.info_matrix().clone(),
            mean: p.mean()?,
            log_norm: 0.5 * p.log_det_info()? - 0.5 * d * (2.0 * std::f64::consts::PI).ln(),
        })
    }

    fn density(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut q = 0.0;
        for a in 0..d {
            let da = x[a] - self.mean[a];
            for b in 0..d {
                q += da * self.info[(a, b)] * (x[b] - self.mean[b]);
            }
        }
        (self.log_norm - 0.5 * q).exp()
    }
}

fn tv_on_grid(p: &QuadForm, g: &QuadForm, lo: &[f64], hi: &[f64], n: usize) -> f64 {
    let d = lo.len();
    let h: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / n as f64).collect();
    let vol: f64 = h.iter().product();
    let total = n.pow(d as u32);
    let mut x = vec![0.0; d];
    let mut acc = 0.0;
    for cell in 0..total {
        let mut rem = cell;
        for k in (0..d).rev() {
            let i = rem % n;
            rem /= n;
            x[k] = lo[k] + (i as f64 + 0.5) * h[k];
        }
        acc += (p.density(&x) - g.density(&x)).abs();
    }
    0.5 * acc * vol
}

/// Weighted geometric pooling `∝ Π p_j^{w_j}` by additive information.
pub fn geometric_mean(densities: &[&GaussianDensity], weights: &[f64]) -> Result<GaussianDensity> {
    if densities.is_empty() || densities.len() != weights.len() {
        return Err(Error::layout("geometric mean needs one weight per density"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::numerical("geometric-mean weights must be finite and nonnegative"));
    }
    let first = densities[0];
    let d = first.dim();
    let mut m = DMatrix::zeros(d, d);
    let mut v = DVector::zeros(d);
    for (p, &w) in densities.iter().zip(weights) {
        if p.vars() != first.vars() {
            return Err(Error::layout("geometric mean of densities over different variables"));
        }
        if w == 0.0 {
            continue;
        }
        m += p.info_matrix() * w;
        v += p.info_vector() * w;
    }
    GaussianDensity::from_algebra(first.vars.clone(), m, v)
}

/// Schur-complement marginal over `keep`.
pub fn marginalize(p: &GaussianDensity, keep: &[VarId]) -> Result<GaussianDensity> {
    if keep.is_empty() {
        return Err(Error::layout("marginalize: empty keep set"));
    }
    let keep_set: BTreeSet<VarId> = keep.iter().copied().collect();
    for id in &keep_set {
        if !p.contains(*id) {
            return Err(Error::layout(format!("marginalize: unknown variable {id}")));
        }
    }
    if keep_set.len() == p.vars.len() {
        return Ok(p.clone());
    }
    let (kept, dropped): (Vec<Var>, Vec<Var>) = p.vars.iter().partition(|v| keep_set.contains(&v.id));
    let a = p.indices_of(&kept.iter().map(|v| v.id).collect::<Vec<_>>())?;
    let b = p.indices_of(&dropped.iter().map(|v| v.id).collect::<Vec<_>>())?;
    let oaa = select(&p.info_matrix, &a, &a);
    let oab = select(&p.info_matrix, &a, &b);
    let obb = select(&p.info_matrix, &b, &b);
    let ea = select_vec(&p.info_vector, &a);
    let eb = select_vec(&p.info_vector, &b);
    let chol = Cholesky::new(obb).ok_or_else(|| Error::numerical("marginalize: dropped block not positive definite"))?;
    let m = oaa - &oab * chol.solve(&oab.transpose());
    let v = ea - &oab * chol.solve(&eb);
    GaussianDensity::from_algebra(kept, m, v)
}

/// Conditional of the remaining variables given `given`.
pub fn condition(p: &GaussianDensity, given: &[VarId]) -> Result<ConditionalGaussian> {
    let given_set: BTreeSet<VarId> = given.iter().copied().collect();
    for id in &given_set {
        if !p.contains(*id) {
            return Err(Error::layout(format!("condition: unknown variable {id}")));
        }
    }
    if given_set.len() == p.vars.len() {
        return Err(Error::layout("condition: cannot condition on every variable"));
    }
    let (given_vars, free): (Vec<Var>, Vec<Var>) = p.vars.iter().partition(|v| given_set.contains(&v.id));
    let a = p.indices_of(&free.iter().map(|v| v.id).collect::<Vec<_>>())?;
    let b = p.indices_of(&given_vars.iter().map(|v| v.id).collect::<Vec<_>>())?;
    Ok(ConditionalGaussian {
        info: select(&p.info_matrix, &a, &a),
        coupling: select(&p.info_matrix, &a, &b),
        info_vector: select_vec(&p.info_vector, &a),
        free,
        given: given_vars,
    })
}

/// `p_self(X_i \ X_ij | X_ij) · q(X_ij)`: the density over `X_i` whose
/// `X_ij` marginal is `q` and whose conditional is that of `p_self`.
pub fn conditional_marginal_product(p_self: &GaussianDensity, neighbor_marginal: &GaussianDensity) -> Result<GaussianDensity> {
    for v in neighbor_marginal.vars() {
        if !p_self.vars().contains(v) {
            return Err(Error::layout(format!(
                "neighbor marginal variable {} is not held by the receiving agent",
                v.id
            )));
        }
    }
    if neighbor_marginal.vars().len() == p_self.vars().len() {
        return Ok(neighbor_marginal.clone());
    }
    condition(p_self, &neighbor_marginal.var_ids())?.times_marginal(neighbor_marginal)
}

/// Merges per-variable means from several densities, for reporting.
pub fn means_by_var(p: &GaussianDensity) -> Result<BTreeMap<VarId, DVector<f64>>> {
    let mu = p.mean()?;
    let offs = offsets(&p.vars);
    Ok(p.vars
        .iter()
        .zip(offs)
        .map(|(v, o)| (v.id, mu.rows(o, v.dim).into_owned()))
        .collect())
}

pub(crate) fn offsets(vars: &[Var]) -> Vec<usize> {
    let mut acc = 0;
    vars.iter()
        .map(|v| {
            let o = acc;
            acc += v.dim;
            o
        })
        .collect()
}

pub(crate) fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

pub(crate) fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |r, _| v[idx[r]])
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::layout("matrix is not square"));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            if (m[(r, c)] - m[(c, r)]).abs() > SYMMETRY_RTOL * scale {
                return Err(Error::numerical(format!("matrix not symmetric at ({r},{c})")));
            }
        }
    }
    Ok(())
}

pub(crate) fn check_positive_definite(m: &DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    // Diagonal matrices need no decomposition.
    let is_diag = (0..n).all(|r| (0..n).all(|c| r == c || m[(r, c)] == 0.0));
    let min = if is_diag {
        m.diagonal().min()
    } else {
        m.clone().symmetric_eigenvalues().min()
    };
    if !(min > EIGEN_FLOOR) {
        return Err(Error::numerical(format!(
            "information matrix not positive definite (smallest eigenvalue {min:e})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn n1(id: usize, mean: f64, var: f64) -> GaussianDensity {
        GaussianDensity::from_moments(vec![Var::scalar(id)], dvector![mean], dmatrix![var]).unwrap()
    }

    fn coupled() -> GaussianDensity {
        GaussianDensity::new(
            vec![Var::scalar(0), Var::scalar(1)],
            dmatrix![2.0, -1.0; -1.0, 2.0],
            dvector![0.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn kl_identical_is_zero() {
        let p = coupled();
        assert!(kl_divergence(&p, &p).unwrap() < 1e-14);
    }

    #[test]
    fn kl_unit_shift() {
        let kl = kl_divergence(&n1(0, 0.0, 1.0), &n1(0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(kl, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn kl_rejects_mismatched_vars() {
        assert!(matches!(kl_divergence(&n1(0, 0.0, 1.0), &n1(1, 0.0, 1.0)), Err(Error::Layout(_))));
    }

    #[test]
    fn tv_shift_of_three() {
        let tv = tv_distance(&n1(0, 0.0, 1.0), &n1(0, 3.0, 1.0)).unwrap();
        // 2Φ(1.5) − 1
        assert!((tv - 0.866_385_597).abs() < 1e-5, "{tv}");
        assert!(tv_distance(&n1(0, 0.0, 1.0), &n1(0, 0.0, 1.0)).unwrap() < 1e-12);
    }

    #[test]
    fn tv_rejects_high_dimension() {
        let vars: Vec<Var> = (0..4).map(Var::scalar).collect();
        let p = GaussianDensity::isotropic(vars, DVector::zeros(4), 1.0).unwrap();
        assert!(tv_distance(&p, &p).is_err());
    }

    #[test]
    fn geometric_mean_of_two() {
        let a = n1(0, 0.0, 1.0);
        let b = n1(0, 2.0, 1.0);
        let m = geometric_mean(&[&a, &b], &[0.5, 0.5]).unwrap();
        assert_relative_eq!(m.mean().unwrap()[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(m.info_matrix()[(0, 0)], 1.0, epsilon = 1e-14);
        let same = geometric_mean(&[&a], &[1.0]).unwrap();
        assert_eq!(same, a);
    }

    #[test]
    fn geometric_mean_degenerate_weights_fail() {
        let a = n1(0, 0.0, 1.0);
        assert!(matches!(geometric_mean(&[&a], &[0.0]), Err(Error::Numerical(_))));
        assert!(geometric_mean(&[&a], &[-0.5]).is_err());
    }

    #[test]
    fn marginal_of_coupled_pair() {
        let m = coupled().marginalize(&[VarId(0)]).unwrap();
        assert_relative_eq!(m.info_matrix()[(0, 0)], 1.5, epsilon = 1e-14);
        assert_eq!(coupled().marginalize(&[VarId(0), VarId(1)]).unwrap(), coupled());
        assert!(coupled().marginalize(&[]).is_err());
        assert!(coupled().marginalize(&[VarId(7)]).is_err());
    }

    #[test]
    fn marginal_of_block_diagonal_is_block() {
        let p = GaussianDensity::new(
            vec![Var::scalar(0), Var::new(1, 2)],
            dmatrix![3.0, 0.0, 0.0; 0.0, 2.0, 0.5; 0.0, 0.5, 1.0],
            dvector![1.0, 2.0, 3.0],
        )
        .unwrap();
        let m = p.marginalize(&[VarId(1)]).unwrap();
        assert_eq!(m.info_matrix(), &dmatrix![2.0, 0.5; 0.5, 1.0]);
        assert_eq!(m.info_vector(), &dvector![2.0, 3.0]);
    }

    #[test]
    fn conditional_of_coupled_pair() {
        let c = coupled().condition(&[VarId(1)]).unwrap();
        let at = c.at(&dvector![1.0]).unwrap();
        assert_relative_eq!(at.mean().unwrap()[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(at.info_matrix()[(0, 0)], 2.0, epsilon = 1e-14);
        assert!(coupled().condition(&[VarId(0), VarId(1)]).is_err());
    }

    #[test]
    fn block_diagonal_conditional_ignores_given() {
        let p = GaussianDensity::new(
            vec![Var::scalar(0), Var::scalar(1)],
            dmatrix![2.0, 0.0; 0.0, 5.0],
            dvector![1.0, 1.0],
        )
        .unwrap();
        let c = p.condition(&[VarId(1)]).unwrap();
        assert_eq!(c.at(&dvector![-3.0]).unwrap(), c.at(&dvector![4.0]).unwrap());
    }

    #[test]
    fn chain_rule_reconstruction() {
        let p = GaussianDensity::new(
            vec![Var::scalar(0), Var::scalar(1), Var::scalar(2)],
            dmatrix![4.0, 1.0, 0.5; 1.0, 3.0, -0.7; 0.5, -0.7, 2.0],
            dvector![0.3, -1.0, 2.0],
        )
        .unwrap();
        let given = [VarId(0), VarId(2)];
        let back = p.condition(&given).unwrap().times_marginal(&p.marginalize(&given).unwrap()).unwrap();
        assert_eq!(back.vars(), p.vars());
        for (a, b) in back.info_matrix().iter().zip(p.info_matrix().iter()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-10, epsilon = 1e-12);
        }
        for (a, b) in back.info_vector().iter().zip(p.info_vector().iter()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn conditional_marginal_product_self_consistent() {
        let p = coupled();
        let own = p.marginalize(&[VarId(1)]).unwrap();
        let out = conditional_marginal_product(&p, &own).unwrap();
        assert!(kl_divergence(&out, &p).unwrap() < 1e-14);
    }

    #[test]
    fn conditional_marginal_product_independent_replaces_block() {
        let p = GaussianDensity::new(
            vec![Var::scalar(0), Var::scalar(1)],
            dmatrix![2.0, 0.0; 0.0, 5.0],
            dvector![1.0, 1.0],
        )
        .unwrap();
        let q = n1(1, 3.0, 0.25);
        let out = conditional_marginal_product(&p, &q).unwrap();
        assert_relative_eq!(out.info_matrix()[(1, 1)], 4.0, epsilon = 1e-12);
        assert_relative_eq!(out.info_vector()[1], 12.0, epsilon = 1e-12);
        assert_relative_eq!(out.info_matrix()[(0, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(out.info_vector()[0], 1.0, epsilon = 1e-12);
        assert_eq!(out.info_matrix()[(0, 1)], 0.0);
    }

    #[test]
    fn conditional_marginal_product_rejects_foreign_vars() {
        assert!(matches!(
            conditional_marginal_product(&n1(0, 0.0, 1.0), &n1(3, 0.0, 1.0)),
            Err(Error::Layout(_))
        ));
    }

    #[test]
    fn constructor_permutes_to_global_order() {
        let p = GaussianDensity::new(
            vec![Var::scalar(1), Var::scalar(0)],
            dmatrix![2.0, 0.3; 0.3, 1.0],
            dvector![5.0, 7.0],
        )
        .unwrap();
        assert_eq!(p.var_ids(), vec![VarId(0), VarId(1)]);
        assert_eq!(p.info_matrix(), &dmatrix![1.0, 0.3; 0.3, 2.0]);
        assert_eq!(p.info_vector(), &dvector![7.0, 5.0]);
    }

    #[test]
    fn constructor_rejects_bad_matrices() {
        let v = vec![Var::scalar(0), Var::scalar(1)];
        assert!(GaussianDensity::new(v.clone(), dmatrix![1.0, 0.5; 0.4, 1.0], dvector![0.0, 0.0]).is_err());
        assert!(GaussianDensity::new(v.clone(), dmatrix![1.0, 2.0; 2.0, 1.0], dvector![0.0, 0.0]).is_err());
        assert!(GaussianDensity::new(v, dmatrix![1.0, 0.0; 0.0, 1.0], dvector![0.0]).is_err());
    }

    #[test]
    fn layout_validation() {
        let vars = vec![("a".to_string(), 1), ("b".to_string(), 2)];
        assert!(VariableLayout::new(vars.clone(), vec![vec![VarId(0)]]).is_err());
        assert!(VariableLayout::new(vars.clone(), vec![vec![VarId(0)], vec![]]).is_err());
        let l = VariableLayout::new(vars, vec![vec![VarId(1), VarId(0)], vec![VarId(1)]]).unwrap();
        assert_eq!(l.agent_vars(0), &[VarId(0), VarId(1)]);
        assert_eq!(l.shared(0, 1), vec![VarId(1)]);
        assert_eq!(l.total_dim(), 3);
        assert_eq!(l.marginal_storage(), 5);
        assert_eq!(l.replicated_storage(), 6);
        assert_eq!(l.owners(VarId(1)), vec![0, 1]);
    }
}
