//! Brute-force densities on rectangular grids.
//!
//! A [`GridDensity`] holds log density values at the nodes of a tensor grid,
//! one scalar variable per axis. Each node stands for a cell of volume `Π h_k`,
//! so integrals are plain sums times the cell volume. Everything is kept in
//! the log domain and renormalized with log-sum-exp.

use nalgebra::{DMatrix, DVector};

use crate::density::{GaussianDensity, Var, VarId};
use crate::error::{Error, Result};

/// Tolerance on `Σ p·vol = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// One grid axis: a scalar variable sampled at `n` equispaced nodes on `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    pub var: VarId,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(var: VarId, min: f64, max: f64, n: usize) -> Result<Self> {
        if n < 2 || !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(Error::layout(format!("invalid axis for {var}: [{min}, {max}] with {n} nodes")));
        }
        Ok(Axis { var, min, max, n })
    }

    /// `mean ± half_width·sd` with `n` nodes.
    pub fn around(var: VarId, mean: f64, sd: f64, half_width: f64, n: usize) -> Result<Self> {
        Axis::new(var, mean - half_width * sd, mean + half_width * sd, n)
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / (self.n - 1) as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        self.min + k as f64 * self.step()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|k| self.point(k)).collect()
    }

    /// Index of the node nearest to `x`, clamped to the axis.
    pub fn nearest(&self, x: f64) -> usize {
        let k = ((x - self.min) / self.step()).round();
        k.clamp(0.0, (self.n - 1) as f64) as usize
    }
}

/// Normalized density on a tensor grid, stored as log density values.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    axes: Vec<Axis>,
    log_p: Vec<f64>,
}

/// Conditional `p(a | b)` on the joint grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridConditional {
    axes: Vec<Axis>,
    given: Vec<VarId>,
    log_cond: Vec<f64>,
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn validate_axes(axes: &[Axis]) -> Result<()> {
    if axes.is_empty() {
        return Err(Error::layout("grid needs at least one axis"));
    }
    if !axes.windows(2).all(|w| w[0].var < w[1].var) {
        return Err(Error::layout("grid axes must be unique and in ascending variable order"));
    }
    Ok(())
}

fn same_axes(a: &[Axis], b: &[Axis]) -> Result<()> {
    if a != b {
        return Err(Error::layout("grid axes differ"));
    }
    Ok(())
}

impl GridDensity {
    /// Normalizes arbitrary log weights (one per node) into a density.
    pub fn from_log_weights(mut axes: Vec<Axis>, log_w: Vec<f64>) -> Result<Self> {
        let mut order: Vec<usize> = (0..axes.len()).collect();
        order.sort_by_key(|&k| axes[k].var);
        let mut log_w = log_w;
        if order.iter().enumerate().any(|(a, &b)| a != b) {
            let sorted: Vec<Axis> = order.iter().map(|&k| axes[k]).collect();
            log_w = permute_cells(&axes, &sorted, &log_w);
            axes = sorted;
        }
        validate_axes(&axes)?;
        let total: usize = axes.iter().map(|a| a.n).product();
        if log_w.len() != total {
            return Err(Error::layout(format!("grid has {total} cells but {} values given", log_w.len())));
        }
        if log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::numerical("grid log weights contain NaN or +inf"));
        }
        let mut g = GridDensity { axes, log_p: log_w };
        g.normalize()?;
        Ok(g)
    }

    /// Evaluates `f` (log of an unnormalized density) at every node.
    pub fn from_log_fn(axes: Vec<Axis>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::layout("grid needs at least one axis"));
        }
        let probe = GridDensity { axes: axes.clone(), log_p: Vec::new() };
        let total = probe.n_cells();
        let mut x = vec![0.0; axes.len()];
        let mut w = Vec::with_capacity(total);
        for c in 0..total {
            probe.coords_into(c, &mut x);
            w.push(f(&x));
        }
        GridDensity::from_log_weights(axes, w)
    }

    pub fn uniform(axes: Vec<Axis>) -> Result<Self> {
        let total: usize = axes.iter().map(|a| a.n).product();
        GridDensity::from_log_weights(axes, vec![0.0; total])
    }

    /// All mass on the node nearest to `x`.
    pub fn point_mass(axes: Vec<Axis>, x: &[f64]) -> Result<Self> {
        validate_axes(&axes)?;
        if x.len() != axes.len() {
            return Err(Error::layout("point has the wrong dimension"));
        }
        let idx: Vec<usize> = axes.iter().zip(x).map(|(a, &v)| a.nearest(v)).collect();
        let probe = GridDensity { axes: axes.clone(), log_p: Vec::new() };
        let cell = probe.cell_of(&idx);
        let mut w = vec![f64::NEG_INFINITY; probe.n_cells()];
        w[cell] = 0.0;
        GridDensity::from_log_weights(axes, w)
    }

    /// Discretizes a Gaussian whose variables are all scalar and match the axes.
    pub fn discretize(p: &GaussianDensity, axes: Vec<Axis>) -> Result<Self> {
        validate_axes(&axes)?;
        let ids: Vec<VarId> = axes.iter().map(|a| a.var).collect();
        if p.vars().iter().any(|v| v.dim != 1) || p.var_ids() != ids {
            return Err(Error::layout("grid axes must match the Gaussian's scalar variables"));
        }
        let mu = p.mean()?;
        let info = p.info_matrix().clone();
        let d = ids.len();
        GridDensity::from_log_fn(axes, |x| {
            let mut q = 0.0;
            for a in 0..d {
                for b in 0..d {
                    q += (x[a] - mu[a]) * info[(a, b)] * (x[b] - mu[b]);
                }
            }
            -0.5 * q
        })
    }

    /// Default oracle axes for a Gaussian: ±8σ, 401 nodes in 1D, 161 per axis otherwise.
    pub fn default_axes(ps: &[&GaussianDensity]) -> Result<Vec<Axis>> {
        let first = ps.first().ok_or_else(|| Error::layout("no densities"))?;
        let d = first.dim();
        let n = if d == 1 { 401 } else { 161 };
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for p in ps {
            if p.vars() != first.vars() {
                return Err(Error::layout("densities over different variables"));
            }
            let mu = p.mean()?;
            let cov = p.covariance()?;
            for k in 0..d {
                let sd = cov[(k, k)].sqrt();
                lo[k] = lo[k].min(mu[k] - 8.0 * sd);
                hi[k] = hi[k].max(mu[k] + 8.0 * sd);
            }
        }
        first
            .var_ids()
            .into_iter()
            .enumerate()
            .map(|(k, id)| Axis::new(id, lo[k], hi[k], n))
            .collect()
    }

    fn normalize(&mut self) -> Result<f64> {
        let log_z = log_sum_exp(&self.log_p) + self.log_cell_volume();
        if !log_z.is_finite() {
            return Err(Error::numerical("grid density has no finite mass"));
        }
        for v in &mut self.log_p {
            *v -= log_z;
        }
        Ok(log_z)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn var_ids(&self) -> Vec<VarId> {
        self.axes.iter().map(|a| a.var).collect()
    }

    pub fn vars(&self) -> Vec<Var> {
        self.axes.iter().map(|a| Var { id: a.var, dim: 1 }).collect()
    }

    pub fn n_cells(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.step()).product()
    }

    pub fn log_cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.step().ln()).sum()
    }

    /// Log density values, row-major with the last axis fastest.
    pub fn log_density(&self) -> &[f64] {
        &self.log_p
    }

    /// Density values.
    pub fn density(&self) -> Vec<f64> {
        self.log_p.iter().map(|v| v.exp()).collect()
    }

    /// Cell probabilities `p·vol`, summing to one.
    pub fn probabilities(&self) -> Vec<f64> {
        let lv = self.log_cell_volume();
        self.log_p.iter().map(|v| (v + lv).exp()).collect()
    }

    /// Multi-index of a flat cell.
    pub fn index_of(&self, cell: usize) -> Vec<usize> {
        let mut idx = vec![0; self.axes.len()];
        let mut rem = cell;
        for k in (0..self.axes.len()).rev() {
            idx[k] = rem % self.axes[k].n;
            rem /= self.axes[k].n;
        }
        idx
    }

    pub fn cell_of(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.n + i)
    }

    fn coords_into(&self, cell: usize, x: &mut [f64]) {
        let mut rem = cell;
        for k in (0..self.axes.len()).rev() {
            let n = self.axes[k].n;
            x[k] = self.axes[k].point(rem % n);
            rem /= n;
        }
    }

    pub fn coords(&self, cell: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.axes.len()];
        self.coords_into(cell, &mut x);
        x
    }

    /// Evaluates a function at every node, e.g. to build a log-likelihood field.
    pub fn field(&self, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let mut x = vec![0.0; self.axes.len()];
        (0..self.n_cells())
            .map(|c| {
                self.coords_into(c, &mut x);
                f(&x)
            })
            .collect()
    }

    /// `∫ ψ p`.
    pub fn expectation(&self, psi: &[f64]) -> Result<f64> {
        if psi.len() != self.n_cells() {
            return Err(Error::layout("field has the wrong number of cells"));
        }
        Ok(self.probabilities().iter().zip(psi).map(|(p, f)| if *p == 0.0 { 0.0 } else { p * f }).sum())
    }

    pub fn mean(&self) -> DVector<f64> {
        let d = self.axes.len();
        let probs = self.probabilities();
        let mut m = DVector::zeros(d);
        let mut x = vec![0.0; d];
        for (c, p) in probs.iter().enumerate() {
            self.coords_into(c, &mut x);
            for k in 0..d {
                m[k] += p * x[k];
            }
        }
        m
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.axes.len();
        let mu = self.mean();
        let probs = self.probabilities();
        let mut s = DMatrix::zeros(d, d);
        let mut x = vec![0.0; d];
        for (c, p) in probs.iter().enumerate() {
            self.coords_into(c, &mut x);
            for a in 0..d {
                for b in 0..d {
                    s[(a, b)] += p * (x[a] - mu[a]) * (x[b] - mu[b]);
                }
            }
        }
        s
    }

    /// Moment-matched Gaussian.
    pub fn to_gaussian(&self) -> Result<GaussianDensity> {
        GaussianDensity::from_moments(self.vars(), self.mean(), self.covariance())
    }

    /// `p ∝ exp(α·loglik)·prior`.
    pub fn bayes_update(&self, loglik: &[f64], alpha: f64) -> Result<Self> {
        grid_bayes_update(self, loglik, alpha)
    }

    pub fn marginalize(&self, keep: &[VarId]) -> Result<Self> {
        grid_marginalize(self, keep)
    }

    pub fn condition(&self, given: &[VarId]) -> Result<GridConditional> {
        grid_condition(self, given)
    }

    /// Positions of `ids` among this grid's axes.
    fn axis_positions(&self, ids: &[VarId]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| {
                self.axes
                    .iter()
                    .position(|a| a.var == *id)
                    .ok_or_else(|| Error::layout(format!("variable {id} is not a grid axis")))
            })
            .collect()
    }

    /// Flat cell in the sub-grid spanned by `positions` for a joint cell.
    fn project(&self, idx: &[usize], positions: &[usize]) -> usize {
        positions.iter().fold(0, |acc, &k| acc * self.axes[k].n + idx[k])
    }
}

fn permute_cells(from: &[Axis], to: &[Axis], values: &[f64]) -> Vec<f64> {
    let src = GridDensity { axes: from.to_vec(), log_p: Vec::new() };
    let dst = GridDensity { axes: to.to_vec(), log_p: Vec::new() };
    let pos: Vec<usize> = to.iter().map(|a| from.iter().position(|b| b.var == a.var).unwrap()).collect();
    let mut out = vec![0.0; values.len()];
    for (c, v) in values.iter().enumerate() {
        let idx = src.index_of(c);
        let new_idx: Vec<usize> = pos.iter().map(|&k| idx[k]).collect();
        out[dst.cell_of(&new_idx)] = *v;
    }
    out
}

pub fn grid_bayes_update(prior: &GridDensity, loglik: &[f64], alpha: f64) -> Result<GridDensity> {
    if loglik.len() != prior.n_cells() {
        return Err(Error::layout("log-likelihood field has the wrong number of cells"));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::numerical(format!("step size must be finite and nonnegative, got {alpha}")));
    }
    if let Some(c) = loglik.iter().position(|v| !v.is_finite()) {
        return Err(Error::BoundedGradient(format!(
            "log-likelihood is {} at cell {c}",
            loglik[c]
        )));
    }
    if alpha == 0.0 {
        return Ok(prior.clone());
    }
    let w: Vec<f64> = prior.log_p.iter().zip(loglik).map(|(p, l)| p + alpha * l).collect();
    GridDensity::from_log_weights(prior.axes.clone(), w)
}

/// Cellwise `Π p_j^{w_j}`, renormalized, with `log Z` of the unnormalized product.
pub fn grid_geometric_mix(densities: &[&GridDensity], weights: &[f64]) -> Result<(GridDensity, f64)> {
    if densities.is_empty() || densities.len() != weights.len() {
        return Err(Error::layout("geometric mix needs one weight per density"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::numerical("mixing weights must be finite and nonnegative"));
    }
    let first = densities[0];
    for p in densities {
        same_axes(&first.axes, &p.axes)?;
    }
    let n = first.n_cells();
    let mut acc = vec![0.0; n];
    for (j, (p, &w)) in densities.iter().zip(weights).enumerate() {
        if w == 0.0 {
            continue;
        }
        for (c, (a, &l)) in acc.iter_mut().zip(&p.log_p).enumerate() {
            if l == f64::NEG_INFINITY {
                return Err(Error::Underflow(format!(
                    "density {j} has zero mass at cell {c} with weight {w}"
                )));
            }
            *a += w * l;
        }
    }
    let mut out = GridDensity { axes: first.axes.clone(), log_p: acc };
    let log_z = out.normalize()?;
    Ok((out, log_z))
}

pub fn grid_marginalize(p: &GridDensity, keep: &[VarId]) -> Result<GridDensity> {
    if keep.is_empty() {
        return Err(Error::layout("marginalize: empty keep set"));
    }
    let mut keep: Vec<VarId> = keep.to_vec();
    keep.sort();
    keep.dedup();
    let kpos = p.axis_positions(&keep)?;
    if kpos.len() == p.axes.len() {
        return Ok(p.clone());
    }
    let kept_axes: Vec<Axis> = kpos.iter().map(|&k| p.axes[k]).collect();
    let dropped_log_vol: f64 = (0..p.axes.len())
        .filter(|k| !kpos.contains(k))
        .map(|k| p.axes[k].step().ln())
        .sum();
    let m: usize = kept_axes.iter().map(|a| a.n).product();
    let mut maxes = vec![f64::NEG_INFINITY; m];
    let targets: Vec<usize> = (0..p.n_cells()).map(|c| p.project(&p.index_of(c), &kpos)).collect();
    for (c, &t) in targets.iter().enumerate() {
        maxes[t] = maxes[t].max(p.log_p[c]);
    }
    let mut sums = vec![0.0; m];
    for (c, &t) in targets.iter().enumerate() {
        if maxes[t] > f64::NEG_INFINITY {
            sums[t] += (p.log_p[c] - maxes[t]).exp();
        }
    }
    let log_w: Vec<f64> = maxes
        .iter()
        .zip(&sums)
        .map(|(mx, s)| if *mx == f64::NEG_INFINITY { *mx } else { mx + s.ln() + dropped_log_vol })
        .collect();
    GridDensity::from_log_weights(kept_axes, log_w)
}

/// `p(rest | given)`; where the given-marginal vanishes the conditional is
/// taken uniform.
pub fn grid_condition(p: &GridDensity, given: &[VarId]) -> Result<GridConditional> {
    let mut given: Vec<VarId> = given.to_vec();
    given.sort();
    given.dedup();
    let gpos = p.axis_positions(&given)?;
    if given.is_empty() || gpos.len() == p.axes.len() {
        return Err(Error::layout("condition: given set must be a nonempty proper subset"));
    }
    let marg = grid_marginalize(p, &given)?;
    let free_log_vol: f64 = (0..p.axes.len())
        .filter(|k| !gpos.contains(k))
        .map(|k| p.axes[k].step() * p.axes[k].n as f64)
        .map(f64::ln)
        .sum();
    let log_cond = (0..p.n_cells())
        .map(|c| {
            let lm = marg.log_p[p.project(&p.index_of(c), &gpos)];
            if lm == f64::NEG_INFINITY {
                -free_log_vol
            } else {
                p.log_p[c] - lm
            }
        })
        .collect();
    Ok(GridConditional { axes: p.axes.clone(), given, log_cond })
}

impl GridConditional {
    pub fn given(&self) -> &[VarId] {
        &self.given
    }

    /// Log conditional density on the joint grid.
    pub fn log_values(&self) -> &[f64] {
        &self.log_cond
    }

    /// Joint `p(a | b) q(b)`.
    pub fn times_marginal(&self, q: &GridDensity) -> Result<GridDensity> {
        let probe = GridDensity { axes: self.axes.clone(), log_p: Vec::new() };
        let gpos = probe.axis_positions(&self.given)?;
        let given_axes: Vec<Axis> = gpos.iter().map(|&k| self.axes[k]).collect();
        same_axes(&given_axes, &q.axes)?;
        let w = (0..probe.n_cells())
            .map(|c| self.log_cond[c] + q.log_p[probe.project(&probe.index_of(c), &gpos)])
            .collect();
        GridDensity::from_log_weights(self.axes.clone(), w)
    }
}

/// `p_self(X_i \ X_ij | X_ij) · q(X_ij)` on grids.
pub fn grid_conditional_marginal_product(p_self: &GridDensity, q: &GridDensity) -> Result<GridDensity> {
    let ids = q.var_ids();
    p_self.axis_positions(&ids)?;
    if ids.len() == p_self.axes.len() {
        same_axes(&p_self.axes, &q.axes)?;
        return Ok(q.clone());
    }
    grid_condition(p_self, &ids)?.times_marginal(q)
}

/// `∫ p log(p/g)`, with `0·log 0 = 0`; `+inf` if `p` charges a cell where `g` vanishes.
pub fn grid_kl(p: &GridDensity, g: &GridDensity) -> Result<f64> {
    same_axes(&p.axes, &g.axes)?;
    let lv = p.log_cell_volume();
    let mut kl = 0.0;
    for (lp, lg) in p.log_p.iter().zip(&g.log_p) {
        if *lp == f64::NEG_INFINITY {
            continue;
        }
        if *lg == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        kl += (lp + lv).exp() * (lp - lg);
    }
    Ok(kl.max(0.0))
}

/// `½ Σ |p − g| · vol`.
pub fn grid_tv(p: &GridDensity, g: &GridDensity) -> Result<f64> {
    same_axes(&p.axes, &g.axes)?;
    let lv = p.log_cell_volume();
    let s: f64 = p
        .log_p
        .iter()
        .zip(&g.log_p)
        .map(|(a, b)| ((a + lv).exp() - (b + lv).exp()).abs())
        .sum();
    Ok((0.5 * s).clamp(0.0, 1.0))
}

/// `⟨ψ, p − g⟩`.
pub fn grid_inner_difference(psi: &[f64], p: &GridDensity, g: &GridDensity) -> Result<f64> {
    same_axes(&p.axes, &g.axes)?;
    Ok(p.expectation(psi)? - g.expectation(psi)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{kl_divergence, Var};
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn ax(id: usize, n: usize) -> Axis {
        Axis::new(VarId(id), -4.0, 4.0, n).unwrap()
    }

    fn bump(id: usize, c: f64) -> GridDensity {
        GridDensity::from_log_fn(vec![ax(id, 81)], |x| -0.5 * (x[0] - c).powi(2)).unwrap()
    }

    #[test]
    fn normalization() {
        let g = bump(0, 0.3);
        let s: f64 = g.probabilities().iter().sum();
        assert!((s - 1.0).abs() < NORMALIZATION_TOL);
    }

    #[test]
    fn bayes_trivial_cases() {
        let g = bump(0, 0.3);
        let ll = g.field(|x| x[0].sin());
        assert_eq!(g.bayes_update(&ll, 0.0).unwrap(), g);
        let flat = vec![2.5; g.n_cells()];
        let u = g.bayes_update(&flat, 1.0).unwrap();
        assert!(grid_tv(&u, &g).unwrap() < 1e-14);
        let mut bad = ll.clone();
        bad[3] = f64::NAN;
        assert!(matches!(g.bayes_update(&bad, 1.0), Err(Error::BoundedGradient(_))));
    }

    #[test]
    fn mix_trivial_cases() {
        let a = bump(0, 0.3);
        let b = bump(0, -1.0);
        let (m, lz) = grid_geometric_mix(&[&a, &a], &[0.5, 0.5]).unwrap();
        assert!(lz.abs() < 1e-12);
        assert!(grid_tv(&m, &a).unwrap() < 1e-12);
        let (m, lz) = grid_geometric_mix(&[&a, &b], &[0.0, 1.0]).unwrap();
        assert!(lz.abs() < 1e-12);
        assert!(grid_tv(&m, &b).unwrap() < 1e-12);
        let (_, lz) = grid_geometric_mix(&[&a, &b], &[0.5, 0.5]).unwrap();
        assert!(lz < 0.0);
    }

    #[test]
    fn mix_underflow_detected() {
        let a = bump(0, 0.3);
        let pm = GridDensity::point_mass(vec![ax(0, 81)], &[0.0]).unwrap();
        assert!(matches!(grid_geometric_mix(&[&a, &pm], &[0.5, 0.5]), Err(Error::Underflow(_))));
        assert!(grid_geometric_mix(&[&a, &pm], &[1.0, 0.0]).is_ok());
    }

    #[test]
    fn marginal_of_product() {
        let axes = vec![ax(0, 41), ax(1, 31)];
        let joint = GridDensity::from_log_fn(axes, |x| -0.5 * (x[0] - 1.0).powi(2) - (x[1] + 0.5).abs()).unwrap();
        let px = GridDensity::from_log_fn(vec![ax(0, 41)], |x| -0.5 * (x[0] - 1.0).powi(2)).unwrap();
        let m = joint.marginalize(&[VarId(0)]).unwrap();
        assert!(grid_tv(&m, &px).unwrap() < 1e-12);
    }

    #[test]
    fn chain_rule_reconstruction() {
        let axes = vec![ax(0, 31), ax(1, 21), ax(2, 11)];
        let joint = GridDensity::from_log_fn(axes, |x| -(x[0] * x[1]).abs() * 0.3 - 0.2 * (x[2] - x[0]).powi(2) - 0.1 * x[1].powi(2))
            .unwrap();
        for given in [vec![VarId(1)], vec![VarId(0), VarId(2)]] {
            let back = joint.condition(&given).unwrap().times_marginal(&joint.marginalize(&given).unwrap()).unwrap();
            for (a, b) in back.log_density().iter().zip(joint.log_density()) {
                assert_relative_eq!(*a, *b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn conditional_marginal_product_matches_marginal() {
        let axes = vec![ax(0, 31), ax(1, 31)];
        let joint = GridDensity::from_log_fn(axes, |x| -0.5 * (x[0] - x[1]).powi(2) - 0.1 * x[0].powi(2)).unwrap();
        let q = GridDensity::from_log_fn(vec![ax(1, 31)], |x| -(x[0] - 1.5).powi(2)).unwrap();
        let out = grid_conditional_marginal_product(&joint, &q).unwrap();
        assert!(grid_tv(&out.marginalize(&[VarId(1)]).unwrap(), &q).unwrap() < 1e-12);
        let same = grid_conditional_marginal_product(&joint, &joint.marginalize(&[VarId(1)]).unwrap()).unwrap();
        assert!(grid_tv(&same, &joint).unwrap() < 1e-12);
    }

    #[test]
    fn discretized_gaussian_kl_matches_closed_form() {
        let p = GaussianDensity::from_moments(vec![Var::scalar(0)], dvector![0.0], dmatrix![1.0]).unwrap();
        let g = GaussianDensity::from_moments(vec![Var::scalar(0)], dvector![1.0], dmatrix![1.0]).unwrap();
        let axes = GridDensity::default_axes(&[&p, &g]).unwrap();
        let gp = GridDensity::discretize(&p, axes.clone()).unwrap();
        let gg = GridDensity::discretize(&g, axes).unwrap();
        let kl = grid_kl(&gp, &gg).unwrap();
        assert!((kl - kl_divergence(&p, &g).unwrap()).abs() < 1e-6);
        assert!((kl - 0.5).abs() < 1e-6);
    }

    #[test]
    fn point_mass_kl() {
        let v = bump(0, 0.0);
        let pm = GridDensity::point_mass(vec![ax(0, 81)], &[0.0]).unwrap();
        let c = ax(0, 81).nearest(0.0);
        let expected = -v.probabilities()[c].ln();
        assert_relative_eq!(grid_kl(&pm, &v).unwrap(), expected, epsilon = 1e-12);
        assert_eq!(grid_kl(&v, &pm).unwrap(), f64::INFINITY);
    }

    #[test]
    fn axes_permuted_to_global_order() {
        let a = GridDensity::from_log_fn(vec![ax(1, 5), ax(0, 3)], |x| x[0] + 10.0 * x[1]).unwrap();
        assert_eq!(a.var_ids(), vec![VarId(0), VarId(1)]);
        let b = GridDensity::from_log_fn(vec![ax(0, 3), ax(1, 5)], |x| x[1] + 10.0 * x[0]).unwrap();
        for (x, y) in a.log_density().iter().zip(b.log_density()) {
            assert_relative_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn mismatched_axes_rejected() {
        assert!(grid_tv(&bump(0, 0.0), &bump(1, 0.0)).is_err());
        assert!(grid_kl(&bump(0, 0.0), &bump(1, 0.0)).is_err());
    }
}
