//! Relative localization: agent `i` measures `z_ij ~ N(x_i − x_j, Ω_ij⁻¹)` for
//! each neighbor `j`, and one anchor agent sits at the origin.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bp::{bp_round, circular_bp_round, BPMessage, CircularBPConfig, EdgeFactor};
use crate::density::{geometric_mean, kl_divergence, tv_distance, GaussianDensity, Var, VarId, VariableLayout};
use crate::error::{Error, Result};
use crate::estimators::{distributed_step, marginal_step, observation_rng, Simulator, StepSchedule};
use crate::gaussian::{linear_gaussian_posterior, LinearGaussianModel};
use crate::network::{validate_marginal_consensus, Network, Topology, WeightRule};
use crate::trace::TraceRow;

use super::{geometry_rng, EstimatorKind};

const DIM: usize = 2;

fn default_n() -> usize {
    8
}
fn default_b() -> f64 {
    1.0
}
fn default_box() -> f64 {
    10.0
}
fn default_separation() -> f64 {
    1.0
}
fn default_anchor_info() -> f64 {
    1e8
}
fn default_prior_info() -> f64 {
    1e-2
}
fn default_fraction() -> f64 {
    1.0
}

/// Localization parameters. `b` is the per-edge measurement information `Ω_ij = b I₂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    pub topology: Topology,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub seed: u64,
    /// Side of the square, centred at the origin, holding the true positions.
    #[serde(default = "default_box")]
    pub box_size: f64,
    #[serde(default = "default_separation")]
    pub min_separation: f64,
    #[serde(default)]
    pub anchor: usize,
    #[serde(default = "default_anchor_info")]
    pub anchor_info: f64,
    /// Information of the `(0, 0)` prior on non-anchor positions.
    #[serde(default = "default_prior_info")]
    pub prior_info: f64,
    /// Probability that a directed measurement is taken in a round.
    #[serde(default = "default_fraction")]
    pub edge_fraction: f64,
    #[serde(default)]
    pub weight_rule: WeightRule,
}

impl LocalizationConfig {
    pub fn new(n: usize, topology: Topology, b: f64, seed: u64) -> Self {
        LocalizationConfig {
            n,
            topology,
            b,
            seed,
            box_size: default_box(),
            min_separation: default_separation(),
            anchor: 0,
            anchor_info: default_anchor_info(),
            prior_info: default_prior_info(),
            edge_fraction: default_fraction(),
            weight_rule: WeightRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, path: &str, msg: &str| if ok { Ok(()) } else { Err(Error::config(path, msg)) };
        check(self.n >= 1, "scenario.n", "need at least one agent")?;
        check(self.b > 0.0 && self.b.is_finite(), "scenario.b", "measurement information must be positive")?;
        check(self.anchor < self.n, "scenario.anchor", "anchor must be one of the agents")?;
        check(self.box_size > 0.0, "scenario.box_size", "box must have positive size")?;
        check(self.min_separation >= 0.0, "scenario.min_separation", "separation must be nonnegative")?;
        check(self.anchor_info > 0.0, "scenario.anchor_info", "anchor information must be positive")?;
        check(self.prior_info > 0.0, "scenario.prior_info", "prior information must be positive")?;
        check(
            self.edge_fraction > 0.0 && self.edge_fraction <= 1.0,
            "scenario.edge_fraction",
            "fraction must lie in (0, 1]",
        )
    }
}

/// Relative measurements taken by one agent in one round: `(j, z_ij)`.
pub type AgentObservations = Vec<(usize, DVector<f64>)>;

#[derive(Clone, Debug)]
pub struct LocalizationScenario {
    config: LocalizationConfig,
    network: Network,
    truth: Vec<DVector<f64>>,
    layout: VariableLayout,
}

impl LocalizationScenario {
    pub fn build(config: LocalizationConfig) -> Result<Self> {
        config.validate()?;
        let network = Network::from_topology(config.n, &config.topology, config.weight_rule, config.seed)?;
        let truth = sample_positions(&config)?;
        let vars = (0..config.n).map(|i| (format!("x{i}"), DIM)).collect();
        let subsets = (0..config.n)
            .map(|i| network.closed_neighborhood(i).into_iter().map(VarId).collect())
            .collect();
        let layout = VariableLayout::new(vars, subsets)?;
        validate_marginal_consensus(&layout, &network)?;
        Ok(LocalizationScenario { config, network, truth, layout })
    }

    pub fn config(&self) -> &LocalizationConfig {
        &self.config
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn truth(&self) -> &[DVector<f64>] {
        &self.truth
    }

    /// Marginal-mode layout, `X_i = {x_j : j ∈ V_i}`.
    pub fn layout(&self) -> &VariableLayout {
        &self.layout
    }

    pub fn var(&self, i: usize) -> Var {
        Var::new(i, DIM)
    }

    pub fn all_vars(&self) -> Vec<Var> {
        (0..self.n()).map(|i| self.var(i)).collect()
    }

    fn truth_of(&self, vars: &[Var]) -> DVector<f64> {
        DVector::from_iterator(vars.len() * DIM, vars.iter().flat_map(|v| self.truth[v.id.0].iter().copied()))
    }

    /// Draws agent `i`'s measurements for `round` from its own stream.
    pub fn observe(&self, agent: usize, round: usize) -> AgentObservations {
        let mut rng = observation_rng(self.config.seed, agent, round);
        let sd = 1.0 / self.config.b.sqrt();
        let mut out = Vec::new();
        for j in self.network.neighbors(agent) {
            let keep = rng.random::<f64>() < self.config.edge_fraction;
            let eps = DVector::from_fn(DIM, |_, _| StandardNormal.sample(&mut rng));
            if keep {
                out.push((j, &self.truth[agent] - &self.truth[j] + eps * sd));
            }
        }
        out
    }

    pub fn observe_all(&self, round: usize) -> Vec<AgentObservations> {
        (0..self.n()).map(|i| self.observe(i, round)).collect()
    }

    fn omega(&self) -> DMatrix<f64> {
        DMatrix::identity(DIM, DIM) * self.config.b
    }

    /// Stacked model over `vars`: one row block `[.. I .. −I ..]` per measurement.
    fn model_over(&self, vars: Vec<Var>, agent: usize, obs: &AgentObservations) -> Result<(LinearGaussianModel, DVector<f64>)> {
        let col = |k: usize| {
            vars.iter()
                .position(|v| v.id.0 == k)
                .map(|p| p * DIM)
                .ok_or_else(|| Error::layout(format!("measurement references x{k}, absent from the model")))
        };
        let m = obs.len().max(1);
        let mut h = DMatrix::zeros(m * DIM, vars.len() * DIM);
        let mut z = DVector::zeros(m * DIM);
        let mut v = DMatrix::identity(m * DIM, m * DIM) * self.config.b;
        if obs.is_empty() {
            v.fill_with_identity();
        }
        let ci = col(agent)?;
        for (r, (j, zij)) in obs.iter().enumerate() {
            let cj = col(*j)?;
            for d in 0..DIM {
                h[(r * DIM + d, ci + d)] = 1.0;
                h[(r * DIM + d, cj + d)] = -1.0;
                z[r * DIM + d] = zij[d];
            }
        }
        Ok((LinearGaussianModel::new(vars, h, v)?, z))
    }

    /// `H_i^(d)` over the full state, with the stacked measurement.
    pub fn full_model(&self, agent: usize, obs: &AgentObservations) -> Result<(LinearGaussianModel, DVector<f64>)> {
        self.model_over(self.all_vars(), agent, obs)
    }

    /// `H_i^(m)` over `X_i`.
    pub fn marginal_model(&self, agent: usize, obs: &AgentObservations) -> Result<(LinearGaussianModel, DVector<f64>)> {
        let vars = self.layout.vars_of(self.layout.agent_vars(agent));
        self.model_over(vars, agent, obs)
    }

    fn prior_over(&self, vars: Vec<Var>) -> Result<GaussianDensity> {
        let d = vars.len() * DIM;
        let mut info = DMatrix::zeros(d, d);
        for (k, v) in vars.iter().enumerate() {
            let w = if v.id.0 == self.config.anchor { self.config.anchor_info } else { self.config.prior_info };
            for a in 0..DIM {
                info[(k * DIM + a, k * DIM + a)] = w;
            }
        }
        GaussianDensity::new(vars, info, DVector::zeros(d))
    }

    /// Full-state prior with every mean at `(0, 0)`.
    pub fn full_prior(&self) -> Result<GaussianDensity> {
        self.prior_over(self.all_vars())
    }

    pub fn marginal_prior(&self, agent: usize) -> Result<GaussianDensity> {
        self.prior_over(self.layout.vars_of(self.layout.agent_vars(agent)))
    }

    /// Prior over the agent's own position, used as the BP unary term.
    pub fn own_prior(&self, agent: usize) -> Result<GaussianDensity> {
        self.prior_over(vec![self.var(agent)])
    }

    /// Pairwise BP factors for one round. Both directed measurements of an edge
    /// are fused into one factor; edges measured by neither end are dropped.
    pub fn edge_factors(&self, obs: &[AgentObservations]) -> Result<Vec<EdgeFactor>> {
        let omega = self.omega();
        let mut out = Vec::new();
        for (a, b) in self.network.edges() {
            let find = |i: usize, j: usize| obs[i].iter().find(|(k, _)| *k == j).map(|(_, z)| z);
            match (find(a, b), find(b, a)) {
                (Some(zab), Some(zba)) => out.push(EdgeFactor::fuse(a, b, zab, &omega, zba, &omega)?),
                (Some(zab), None) => out.push(EdgeFactor::new(a, b, omega.clone(), zab.clone())?),
                (None, Some(zba)) => out.push(EdgeFactor::new(b, a, omega.clone(), zba.clone())?),
                (None, None) => {}
            }
        }
        Ok(out)
    }

    /// `‖μ_i − x_i‖` per agent.
    pub fn localization_error(&self, own_means: &[DVector<f64>]) -> Result<Vec<f64>> {
        if own_means.len() != self.n() {
            return Err(Error::layout("one position estimate per agent required"));
        }
        own_means
            .iter()
            .zip(&self.truth)
            .map(|(m, x)| {
                if m.len() != DIM {
                    return Err(Error::layout("position estimates must be two-dimensional"));
                }
                Ok((m - x).norm())
            })
            .collect()
    }

    pub fn truth_state(&self) -> DVector<f64> {
        self.truth_of(&self.all_vars())
    }
}

fn sample_positions(config: &LocalizationConfig) -> Result<Vec<DVector<f64>>> {
    let mut rng = geometry_rng(config.seed);
    let half = config.box_size / 2.0;
    let mut pts = vec![None; config.n];
    pts[config.anchor] = Some(DVector::zeros(DIM));
    for i in 0..config.n {
        if pts[i].is_some() {
            continue;
        }
        let mut tries = 0;
        let p = loop {
            tries += 1;
            if tries > 100_000 {
                return Err(Error::config("scenario.min_separation", "cannot place agents with this separation"));
            }
            let p = DVector::from_fn(DIM, |_, _| rng.random_range(-half..half));
            if pts.iter().flatten().all(|q: &DVector<f64>| (&p - q).norm() >= config.min_separation) {
                break p;
            }
        };
        pts[i] = Some(p);
    }
    Ok(pts.into_iter().flatten().collect())
}

enum State {
    Centralized(GaussianDensity),
    Distributed(Vec<GaussianDensity>),
    Marginal(Vec<GaussianDensity>),
    Bp { beliefs: Vec<GaussianDensity>, inbox: Vec<BPMessage>, circular: Option<CircularBPConfig> },
}

/// One estimator driven over a localization scenario.
pub struct LocalizationRun<'a> {
    scenario: &'a LocalizationScenario,
    state: State,
    schedule: StepSchedule,
    reference: Option<GaussianDensity>,
    consensus_every: usize,
}

impl<'a> LocalizationRun<'a> {
    /// `circular_alpha` is used only by circular BP. `consensus_every = 0` disables the TV metric.
    pub fn new(
        scenario: &'a LocalizationScenario,
        kind: EstimatorKind,
        schedule: StepSchedule,
        circular_alpha: f64,
        consensus_every: usize,
    ) -> Result<Self> {
        schedule.validate()?;
        if matches!(schedule, StepSchedule::AdaptiveOracle { .. }) {
            return Err(Error::config("estimator.schedule", "the oracle schedule needs a grid objective"));
        }
        let n = scenario.n();
        let state = match kind {
            EstimatorKind::Centralized => State::Centralized(scenario.full_prior()?),
            EstimatorKind::Distributed => State::Distributed(vec![scenario.full_prior()?; n]),
            EstimatorKind::Marginal => {
                State::Marginal((0..n).map(|i| scenario.marginal_prior(i)).collect::<Result<_>>()?)
            }
            EstimatorKind::Bp | EstimatorKind::CircularBp => State::Bp {
                beliefs: (0..n).map(|i| scenario.own_prior(i)).collect::<Result<_>>()?,
                inbox: vacuous_all(scenario),
                circular: (kind == EstimatorKind::CircularBp).then(|| CircularBPConfig::new(circular_alpha)).transpose()?,
            },
        };
        Ok(LocalizationRun { scenario, state, schedule, reference: Some(scenario.full_prior()?), consensus_every })
    }

    /// Drops the centralized reference; `kl_ref` is then left empty.
    pub fn without_reference(mut self) -> Self {
        self.reference = None;
        self
    }

    /// Each agent's current mean of its own position.
    pub fn own_means(&self) -> Result<Vec<DVector<f64>>> {
        let s = self.scenario;
        (0..s.n()).map(|i| self.own_marginal(i)?.mean()).collect()
    }

    fn own_marginal(&self, i: usize) -> Result<GaussianDensity> {
        let id = [VarId(i)];
        match &self.state {
            State::Centralized(p) => p.marginalize(&id),
            State::Distributed(ps) | State::Marginal(ps) => ps[i].marginalize(&id),
            State::Bp { beliefs, .. } => Ok(beliefs[i].clone()),
        }
    }

    /// Agent estimates as densities (full-state or marginal); BP beliefs for BP.
    pub fn estimates(&self) -> Vec<GaussianDensity> {
        match &self.state {
            State::Centralized(p) => vec![p.clone()],
            State::Distributed(ps) | State::Marginal(ps) => ps.clone(),
            State::Bp { beliefs, .. } => beliefs.clone(),
        }
    }

    /// Largest TV between two agents' marginals of a commonly held position.
    pub fn consensus_gap(&self) -> Result<Option<f64>> {
        let ps = match &self.state {
            State::Distributed(ps) | State::Marginal(ps) => ps,
            _ => return Ok(None),
        };
        let mut worst = 0.0f64;
        for k in 0..self.scenario.n() {
            let owners: Vec<usize> = (0..ps.len()).filter(|&i| ps[i].contains(VarId(k))).collect();
            let marg = owners.iter().map(|&i| ps[i].marginalize(&[VarId(k)])).collect::<Result<Vec<_>>>()?;
            for a in 0..marg.len() {
                for b in (a + 1)..marg.len() {
                    worst = worst.max(tv_distance(&marg[a], &marg[b])?);
                }
            }
        }
        Ok(Some(worst))
    }
}

fn vacuous_all(s: &LocalizationScenario) -> Vec<BPMessage> {
    s.network.edges().into_iter().flat_map(|(a, b)| [BPMessage::vacuous(a, b, DIM), BPMessage::vacuous(b, a, DIM)]).collect()
}

impl Simulator for LocalizationRun<'_> {
    fn step(&mut self, t: usize) -> Result<()> {
        let s = self.scenario;
        let obs = s.observe_all(t);
        let alpha = self.schedule.alpha(t, None)?;
        let full_update = |i: usize, p: &GaussianDensity, a: f64| {
            let (m, z) = s.full_model(i, &obs[i])?;
            if obs[i].is_empty() {
                return Ok(p.clone());
            }
            linear_gaussian_posterior(p, &m, &z, a)
        };
        if let Some(r) = &self.reference {
            let mut acc = r.clone();
            for i in 0..s.n() {
                acc = full_update(i, &acc, 1.0)?;
            }
            self.reference = Some(acc);
        }
        match &mut self.state {
            State::Centralized(p) => {
                let mut acc = p.clone();
                for i in 0..s.n() {
                    acc = full_update(i, &acc, alpha)?;
                }
                *p = acc;
            }
            State::Distributed(ps) => {
                *ps = distributed_step(ps, &s.network, full_update, alpha)?.next;
            }
            State::Marginal(ps) => {
                let update = |i: usize, p: &GaussianDensity, a: f64| {
                    if obs[i].is_empty() {
                        return Ok(p.clone());
                    }
                    let (m, z) = s.marginal_model(i, &obs[i])?;
                    linear_gaussian_posterior(p, &m, &z, a)
                };
                *ps = marginal_step(ps, &s.network, &s.layout, update, alpha)?.next;
            }
            State::Bp { beliefs, inbox, circular } => {
                let factors = s.edge_factors(&obs)?;
                let (next, out) = match circular {
                    Some(c) => circular_bp_round(beliefs, inbox, &factors, *c)?,
                    None => bp_round(beliefs, inbox, &factors)?,
                };
                let mut merged = vacuous_all(s);
                for m in &mut merged {
                    if let Some(o) = out.iter().find(|o| o.from == m.from && o.to == m.to) {
                        *m = o.clone();
                    }
                }
                *beliefs = next;
                *inbox = merged;
            }
        }
        Ok(())
    }

    fn record(&self, round: usize) -> Result<Vec<TraceRow>> {
        let s = self.scenario;
        let errors = s.localization_error(&self.own_means()?)?;
        let consensus = if self.consensus_every > 0 && round.is_multiple_of(self.consensus_every) {
            self.consensus_gap()?
        } else {
            None
        };
        (0..s.n())
            .map(|i| {
                let kl_ref = match &self.reference {
                    Some(r) => Some(kl_divergence(&r.marginalize(&[VarId(i)])?, &self.own_marginal(i)?)?),
                    None => None,
                };
                Ok(TraceRow { round, agent: i, error: errors[i], consensus_tv: consensus, kl_ref })
            })
            .collect()
    }
}

/// Exact centralized posterior after the given rounds, pooled in one shot.
pub fn batch_posterior(s: &LocalizationScenario, rounds: usize) -> Result<GaussianDensity> {
    let mut p = s.full_prior()?;
    for t in 0..rounds {
        for (i, o) in s.observe_all(t).iter().enumerate() {
            if o.is_empty() {
                continue;
            }
            let (m, z) = s.full_model(i, o)?;
            p = linear_gaussian_posterior(&p, &m, &z, 1.0)?;
        }
    }
    Ok(p)
}

/// Geometric pooling of full-state estimates with uniform weights.
pub fn network_average(ps: &[GaussianDensity]) -> Result<GaussianDensity> {
    let refs: Vec<&GaussianDensity> = ps.iter().collect();
    geometric_mean(&refs, &vec![1.0 / ps.len() as f64; ps.len()])
}
