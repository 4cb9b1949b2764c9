//! Small grid problems with bounded likelihoods, used to check the
//! convergence statements directly on densities.
//!
//! Each agent observes `m` Bernoulli draws with success probability
//! `σ(cᵢᵀθ)` over its own variables. The observation is the sequence of
//! draws, so `log q = −k·softplus(−s) − (m−k)·softplus(s)` for `k` successes
//! and is bounded by `m·softplus(max |s|)` on the grid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::density::VarId;
use crate::error::{Error, Result};
use crate::estimators::GridModel;
use crate::gaussian::{sigmoid, softplus};
use crate::grid::{Axis, GridDensity};

/// One agent of a [`BernoulliGridProblem`]: variables and logit coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliAgent {
    pub vars: Vec<VarId>,
    pub coef: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BernoulliGridProblem {
    axes: Vec<Axis>,
    agents: Vec<BernoulliAgent>,
    truth: Vec<f64>,
    draws: usize,
    bound: f64,
}

impl BernoulliGridProblem {
    /// `axes[k]` must be the axis of `VarId(k)`; `truth` is snapped to the nearest node.
    pub fn new(axes: Vec<Axis>, agents: Vec<BernoulliAgent>, truth: &[f64], draws: usize) -> Result<Self> {
        if axes.iter().enumerate().any(|(k, a)| a.var != VarId(k)) {
            return Err(Error::layout("axis k must carry variable k"));
        }
        if truth.len() != axes.len() {
            return Err(Error::layout("one true value per variable required"));
        }
        if agents.is_empty() || draws == 0 {
            return Err(Error::layout("need at least one agent and one draw per round"));
        }
        let mut bound = 0.0f64;
        for (i, a) in agents.iter().enumerate() {
            if a.vars.len() != a.coef.len() || a.vars.is_empty() {
                return Err(Error::layout(format!("agent {i} needs one coefficient per variable")));
            }
            if a.vars.windows(2).any(|w| w[0] >= w[1]) || a.vars.iter().any(|v| v.0 >= axes.len()) {
                return Err(Error::layout(format!("agent {i} variables must be ascending and known")));
            }
            let smax: f64 = a
                .vars
                .iter()
                .zip(&a.coef)
                .map(|(v, c)| c.abs() * axes[v.0].min.abs().max(axes[v.0].max.abs()))
                .sum();
            bound = bound.max(draws as f64 * softplus(smax));
        }
        let truth = axes.iter().zip(truth).map(|(a, &t)| a.point(a.nearest(t))).collect();
        Ok(BernoulliGridProblem { axes, agents, truth, draws, bound })
    }

    /// One scalar variable observed by one agent.
    pub fn scalar(half_width: f64, nodes: usize, coef: f64, truth: f64, draws: usize) -> Result<Self> {
        BernoulliGridProblem::new(
            vec![Axis::new(VarId(0), -half_width, half_width, nodes)?],
            vec![BernoulliAgent { vars: vec![VarId(0)], coef: vec![coef] }],
            &[truth],
            draws,
        )
    }

    /// Two variables, two agents: agent 0 holds `{θ₀, θ₁}` and sees `θ₀ − θ₁`,
    /// agent 1 holds `{θ₁}` and sees `θ₁`.
    pub fn two_agent_marginal(nodes: usize, coef: f64, truth: [f64; 2], draws: usize) -> Result<Self> {
        BernoulliGridProblem::new(
            vec![Axis::new(VarId(0), -1.0, 1.0, nodes)?, Axis::new(VarId(1), -1.0, 1.0, nodes)?],
            vec![
                BernoulliAgent { vars: vec![VarId(0), VarId(1)], coef: vec![coef, -coef] },
                BernoulliAgent { vars: vec![VarId(1)], coef: vec![coef] },
            ],
            &truth,
            draws,
        )
    }

    pub fn agents(&self) -> &[BernoulliAgent] {
        &self.agents
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    /// Truth after snapping to grid nodes.
    pub fn truth(&self) -> &[f64] {
        &self.truth
    }

    pub fn all_vars(&self) -> Vec<VarId> {
        self.axes.iter().map(|a| a.var).collect()
    }

    pub fn axes_for(&self, vars: &[VarId]) -> Vec<Axis> {
        vars.iter().map(|v| self.axes[v.0]).collect()
    }

    pub fn uniform(&self, vars: &[VarId]) -> Result<GridDensity> {
        GridDensity::uniform(self.axes_for(vars))
    }

    /// `p★` restricted to `vars`: all mass on the true node.
    pub fn optimum(&self, vars: &[VarId]) -> Result<GridDensity> {
        let x: Vec<f64> = vars.iter().map(|v| self.truth[v.0]).collect();
        GridDensity::point_mass(self.axes_for(vars), &x)
    }

    fn logit(&self, agent: usize, x: &[f64]) -> f64 {
        self.agents[agent].coef.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    fn true_logit(&self, agent: usize) -> f64 {
        let x: Vec<f64> = self.agents[agent].vars.iter().map(|v| self.truth[v.0]).collect();
        self.logit(agent, &x)
    }

    /// `E_z[−log q_i(z | x)]` at every node of `grid`.
    pub fn expected_nll(&self, agent: usize, grid: &GridDensity) -> Result<Vec<f64>> {
        let ids = grid.var_ids();
        let pos: Vec<usize> = self.agents[agent]
            .vars
            .iter()
            .map(|v| ids.iter().position(|w| w == v).ok_or_else(|| Error::layout(format!("grid lacks {v}"))))
            .collect::<Result<_>>()?;
        let p = sigmoid(self.true_logit(agent));
        let m = self.draws as f64;
        let mut sub = vec![0.0; pos.len()];
        Ok(grid.field(|x| {
            for (s, &k) in sub.iter_mut().zip(&pos) {
                *s = x[k];
            }
            let s = self.logit(agent, &sub);
            m * (p * softplus(-s) + (1.0 - p) * softplus(s))
        }))
    }

    /// `f[p] = E_p Σ_i E_z[−log q_i]` for a density over all variables.
    pub fn objective(&self, p: &GridDensity) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.agents.len() {
            total += p.expectation(&self.expected_nll(i, p)?)?;
        }
        Ok(total)
    }

    /// `f[p★]`, the objective at the true node.
    pub fn optimal_objective(&self) -> Result<f64> {
        self.objective(&self.optimum(&self.all_vars())?)
    }
}

impl GridModel for BernoulliGridProblem {
    type Obs = usize;

    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    fn vars(&self, agent: usize) -> Vec<VarId> {
        self.agents[agent].vars.clone()
    }

    fn bound(&self) -> f64 {
        self.bound
    }

    fn sample(&self, agent: usize, rng: &mut ChaCha8Rng) -> usize {
        let p = sigmoid(self.true_logit(agent));
        (0..self.draws).filter(|_| rng.random::<f64>() < p).count()
    }

    fn log_lik(&self, agent: usize, obs: &usize, x: &[f64]) -> f64 {
        let s = self.logit(agent, x);
        let k = *obs as f64;
        -k * softplus(-s) - (self.draws as f64 - k) * softplus(s)
    }
}

/// Random smooth positive density: a two-bump Gaussian mixture plus a floor.
pub fn random_grid_density(axes: &[Axis], rng: &mut ChaCha8Rng) -> Result<GridDensity> {
    let bumps: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..2)
        .map(|_| {
            let c = axes.iter().map(|a| rng.random_range(a.min..a.max)).collect();
            let w = axes.iter().map(|a| (a.max - a.min) * rng.random_range(0.1..0.5)).collect();
            (c, w, rng.random_range(0.2..1.0))
        })
        .collect();
    let floor = rng.random_range(1e-3..1e-1);
    GridDensity::from_log_fn(axes.to_vec(), |x| {
        let v: f64 = bumps
            .iter()
            .map(|(c, w, h)| {
                let q: f64 = x.iter().zip(c).zip(w).map(|((xi, ci), wi)| ((xi - ci) / wi).powi(2)).sum();
                h * (-0.5 * q).exp()
            })
            .sum();
        (v + floor).ln()
    })
}

/// `p · exp(ε·noise)` renormalized, with `ε` doubled until the TV to `p` reaches `min_tv`.
pub fn perturb(p: &GridDensity, min_tv: f64, rng: &mut ChaCha8Rng) -> Result<GridDensity> {
    let noise: Vec<f64> = (0..p.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut eps = 0.05;
    for _ in 0..30 {
        let w: Vec<f64> = p.log_density().iter().zip(&noise).map(|(l, n)| l + eps * n).collect();
        let q = GridDensity::from_log_weights(p.axes().to_vec(), w)?;
        if crate::grid::grid_tv(p, &q)? >= min_tv {
            return Ok(q);
        }
        eps *= 2.0;
    }
    Err(Error::numerical("perturbation could not reach the requested TV"))
}
