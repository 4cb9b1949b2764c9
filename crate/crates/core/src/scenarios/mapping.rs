//! Kernel-logistic occupancy mapping. A point `x` has features
//! `Φ(x) = [1, k_1(x), …, k_m(x)]` with `k_s(x) = γ₁ exp(−γ₂‖x − x^(s)‖²)` and
//! label `y ~ Bernoulli(σ(Φ(x)ᵀw))`. Robot `i` only models the kernels whose
//! centers lie within a distance threshold of its own trajectory.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{tv_distance, Var, VarId, VariableLayout};
use crate::error::{Error, Result};
use crate::estimators::{observation_rng, Simulator, StepSchedule};
use crate::gaussian::{diag_gvi_step, diag_gvi_update, sigmoid, DiagGaussian, DiagMixPlan, ExpectationRule, LogLikelihood, LogisticLikelihood};
use crate::network::{validate_marginal_consensus, Network, Topology, WeightRule};
use crate::trace::TraceRow;

use super::{geometry_rng, EstimatorKind};

fn default_robots() -> usize {
    3
}
fn default_centers() -> usize {
    60
}
fn default_threshold() -> f64 {
    6.0
}
fn default_spacing() -> f64 {
    2.0
}
fn default_gamma1() -> f64 {
    1.0
}
fn default_w0() -> f64 {
    2.0
}
fn default_blob_radius() -> f64 {
    5.0
}
fn default_lanes() -> usize {
    3
}
fn default_train() -> usize {
    2000
}
fn default_verify() -> usize {
    300
}
fn default_batch() -> usize {
    10
}
fn default_prior_info() -> f64 {
    1.0
}
fn default_topology() -> Topology {
    Topology::Line
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingConfig {
    #[serde(default = "default_robots")]
    pub robots: usize,
    #[serde(default = "default_centers")]
    pub n_centers: usize,
    /// Largest center-to-trajectory distance at which a robot models a kernel.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    /// Center spacing `ℓ`.
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    #[serde(default = "default_gamma1")]
    pub gamma1: f64,
    /// Defaults to `0.5 / ℓ²`.
    #[serde(default)]
    pub gamma2: Option<f64>,
    /// Magnitude of the true weights.
    #[serde(default = "default_w0")]
    pub w0: f64,
    /// Number of occupied blobs; defaults to one per 15 centers.
    #[serde(default)]
    pub blobs: Option<usize>,
    #[serde(default = "default_blob_radius")]
    pub blob_radius: f64,
    /// Lawnmower lanes per robot strip.
    #[serde(default = "default_lanes")]
    pub lanes: usize,
    #[serde(default = "default_train")]
    pub train_per_robot: usize,
    #[serde(default = "default_verify")]
    pub verify_per_robot: usize,
    /// Training points drawn per robot per round.
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_prior_info")]
    pub prior_info: f64,
    #[serde(default = "default_topology")]
    pub topology: Topology,
    #[serde(default)]
    pub weight_rule: WeightRule,
    #[serde(default)]
    pub expectation_rule: ExpectationRule,
}

impl MappingConfig {
    pub fn new(robots: usize, n_centers: usize, threshold: f64, seed: u64) -> Self {
        MappingConfig {
            robots,
            n_centers,
            threshold,
            seed,
            spacing: default_spacing(),
            gamma1: default_gamma1(),
            gamma2: None,
            w0: default_w0(),
            blobs: None,
            blob_radius: default_blob_radius(),
            lanes: default_lanes(),
            train_per_robot: default_train(),
            verify_per_robot: default_verify(),
            batch: default_batch(),
            prior_info: default_prior_info(),
            topology: default_topology(),
            weight_rule: WeightRule::default(),
            expectation_rule: ExpectationRule::default(),
        }
    }

    /// Desk-scale problem: 3 robots, 60 centers.
    pub fn desk(seed: u64) -> Self {
        MappingConfig::new(3, 60, default_threshold(), seed)
    }

    /// Seven robots and 1000 centers, with the threshold set for roughly 20% ownership.
    pub fn paper_shaped(seed: u64) -> Self {
        MappingConfig::new(7, 1000, 4.0, seed)
    }

    pub fn gamma2(&self) -> f64 {
        self.gamma2.unwrap_or(0.5 / (self.spacing * self.spacing))
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, path: &str, msg: &str| if ok { Ok(()) } else { Err(Error::config(path, msg)) };
        check(self.robots >= 1, "scenario.robots", "need at least one robot")?;
        check(self.n_centers >= 1, "scenario.n_centers", "need at least one kernel center")?;
        check(self.threshold > 0.0, "scenario.threshold", "threshold must be positive")?;
        check(self.spacing > 0.0 && self.spacing.is_finite(), "scenario.spacing", "spacing must be positive")?;
        check(self.gamma1 > 0.0, "scenario.gamma1", "must be positive")?;
        check(self.gamma2() > 0.0, "scenario.gamma2", "must be positive")?;
        check(self.w0 > 0.0, "scenario.w0", "must be positive")?;
        check(self.blob_radius > 0.0, "scenario.blob_radius", "must be positive")?;
        check(self.lanes >= 1, "scenario.lanes", "need at least one lane")?;
        check(self.train_per_robot >= 1, "scenario.train_per_robot", "need training data")?;
        check(self.verify_per_robot >= 1, "scenario.verify_per_robot", "need verification data")?;
        check(self.batch >= 1, "scenario.batch", "batch must be positive")?;
        check(self.prior_info > 0.0, "scenario.prior_info", "must be positive")
    }
}

/// A labelled point `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledPoint {
    pub x: [f64; 2],
    pub y: f64,
}

#[derive(Clone, Debug)]
pub struct MappingScenario {
    config: MappingConfig,
    centers: Vec<[f64; 2]>,
    extent: [f64; 2],
    trajectories: Vec<Vec<[f64; 2]>>,
    /// Owned center indices per robot, ascending.
    owned: Vec<Vec<usize>>,
    truth: DVector<f64>,
    train: Vec<Vec<LabelledPoint>>,
    verify: Vec<Vec<LabelledPoint>>,
    network: Network,
    layout: VariableLayout,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

impl MappingScenario {
    pub fn build(config: MappingConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = geometry_rng(config.seed);
        let ell = config.spacing;
        let rows = ((config.n_centers as f64 / 1.6).sqrt().round() as usize).max(1);
        let cols = config.n_centers.div_ceil(rows);
        let centers: Vec<[f64; 2]> = (0..config.n_centers)
            .map(|k| [((k % cols) as f64 + 0.5) * ell, ((k / cols) as f64 + 0.5) * ell])
            .collect();
        let extent = [cols as f64 * ell, rows as f64 * ell];
        let trajectories = lawnmower(&config, extent);
        let limit = config.threshold * config.threshold;
        let owned: Vec<Vec<usize>> = trajectories
            .iter()
            .map(|traj| {
                (0..centers.len())
                    .filter(|&s| traj.iter().any(|p| dist2(*p, centers[s]) <= limit))
                    .collect()
            })
            .collect();
        if let Some(s) = (0..centers.len()).find(|s| owned.iter().all(|o| !o.contains(s))) {
            return Err(Error::Coverage(format!(
                "kernel center {s} at ({:.2}, {:.2}) is owned by no robot",
                centers[s][0], centers[s][1]
            )));
        }

        let n_blobs = config.blobs.unwrap_or((config.n_centers / 15).max(2));
        let blob_at: Vec<[f64; 2]> = (0..n_blobs)
            .map(|_| [rng.random_range(0.0..extent[0]), rng.random_range(0.0..extent[1])])
            .collect();
        let r2 = config.blob_radius * config.blob_radius;
        let mut truth = DVector::zeros(config.n_centers + 1);
        for (s, c) in centers.iter().enumerate() {
            let occupied = blob_at.iter().any(|b| dist2(*b, *c) <= r2);
            truth[s + 1] = if occupied { config.w0 } else { -config.w0 };
        }

        let mut scenario = MappingScenario {
            centers,
            extent,
            trajectories,
            owned,
            truth,
            train: Vec::new(),
            verify: Vec::new(),
            network: Network::from_topology(config.robots, &config.topology, config.weight_rule, config.seed)?,
            layout: VariableLayout::replicated(vec![("bias".into(), 1)], 1)?,
            config,
        };
        for i in 0..scenario.config.robots {
            let train = scenario.sample_points(i, scenario.config.train_per_robot, &mut rng);
            let verify = scenario.sample_points(i, scenario.config.verify_per_robot, &mut rng);
            scenario.train.push(train);
            scenario.verify.push(verify);
        }
        let mut vars = vec![("bias".to_string(), 1)];
        vars.extend((0..scenario.centers.len()).map(|s| (format!("w{s}"), 1)));
        let subsets = scenario
            .owned
            .iter()
            .map(|o| std::iter::once(VarId(0)).chain(o.iter().map(|s| VarId(s + 1))).collect())
            .collect();
        scenario.layout = VariableLayout::new(vars, subsets)?;
        validate_marginal_consensus(&scenario.layout, &scenario.network)?;
        Ok(scenario)
    }

    /// Points sensed around the robot's trajectory, labelled by the true model.
    fn sample_points(&self, robot: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<LabelledPoint> {
        let traj = &self.trajectories[robot];
        let reach = self.config.spacing;
        (0..count)
            .map(|_| {
                let p = traj[rng.random_range(0..traj.len())];
                let x = [
                    (p[0] + rng.random_range(-reach..reach)).clamp(0.0, self.extent[0]),
                    (p[1] + rng.random_range(-reach..reach)).clamp(0.0, self.extent[1]),
                ];
                let prob = sigmoid(self.full_features(x).dot(&self.truth));
                let y = if rng.random::<f64>() < prob { 1.0 } else { 0.0 };
                LabelledPoint { x, y }
            })
            .collect()
    }

    pub fn config(&self) -> &MappingConfig {
        &self.config
    }

    pub fn robots(&self) -> usize {
        self.config.robots
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn trajectories(&self) -> &[Vec<[f64; 2]>] {
        &self.trajectories
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn layout(&self) -> &VariableLayout {
        &self.layout
    }

    /// Generating weights `[bias, w_1, …, w_m]`.
    pub fn truth(&self) -> &DVector<f64> {
        &self.truth
    }

    pub fn train(&self, robot: usize) -> &[LabelledPoint] {
        &self.train[robot]
    }

    pub fn verification(&self, robot: usize) -> &[LabelledPoint] {
        &self.verify[robot]
    }

    /// Center indices robot `i` models.
    pub fn owned(&self, robot: usize) -> &[usize] {
        &self.owned[robot]
    }

    /// Per-robot parameter counts `𝔡_i` (bias included).
    pub fn parameter_counts(&self) -> Vec<usize> {
        (0..self.robots()).map(|i| self.layout.agent_dim(i)).collect()
    }

    /// Number of parameters robot `i` shares with each other robot.
    pub fn shared_counts(&self, robot: usize) -> Vec<usize> {
        (0..self.robots()).filter(|&j| j != robot).map(|j| self.layout.shared(robot, j).len()).collect()
    }

    /// `Σ_i 𝔡_i` against `n · d`.
    pub fn storage(&self) -> (usize, usize) {
        (self.layout.marginal_storage(), self.layout.replicated_storage())
    }

    fn kernel(&self, x: [f64; 2], s: usize) -> f64 {
        self.config.gamma1 * (-self.config.gamma2() * dist2(x, self.centers[s])).exp()
    }

    /// `Φ(x)` over every center.
    pub fn full_features(&self, x: [f64; 2]) -> DVector<f64> {
        DVector::from_iterator(
            self.centers.len() + 1,
            std::iter::once(1.0).chain((0..self.centers.len()).map(|s| self.kernel(x, s))),
        )
    }

    /// `Φ_i(x)`: bias plus robot `i`'s owned kernels.
    pub fn agent_features(&self, robot: usize, x: [f64; 2]) -> DVector<f64> {
        let owned = &self.owned[robot];
        DVector::from_iterator(owned.len() + 1, std::iter::once(1.0).chain(owned.iter().map(|&s| self.kernel(x, s))))
    }

    fn features(&self, robot: usize, x: [f64; 2], full: bool) -> DVector<f64> {
        if full {
            self.full_features(x)
        } else {
            self.agent_features(robot, x)
        }
    }

    fn vars_of(&self, robot: usize, full: bool) -> Vec<Var> {
        if full {
            (0..=self.centers.len()).map(Var::scalar).collect()
        } else {
            self.layout.vars_of(self.layout.agent_vars(robot))
        }
    }
}

fn lawnmower(config: &MappingConfig, extent: [f64; 2]) -> Vec<Vec<[f64; 2]>> {
    let strip = extent[0] / config.robots as f64;
    let lane = strip / config.lanes as f64;
    let step = config.spacing / 4.0;
    let n_up = (extent[1] / step).ceil() as usize;
    (0..config.robots)
        .map(|r| {
            let mut pts = Vec::new();
            for l in 0..config.lanes {
                let x = r as f64 * strip + (l as f64 + 0.5) * lane;
                for k in 0..=n_up {
                    let y = (k as f64 * step).min(extent[1]);
                    pts.push([x, if l % 2 == 0 { y } else { extent[1] - y }]);
                }
            }
            pts
        })
        .collect()
}

/// Mean `|σ(Φ(x)ᵀw) − y|` over `points`, and the predicted occupancy probabilities.
pub fn mapping_error(weights: &DVector<f64>, features: &[DVector<f64>], points: &[LabelledPoint]) -> Result<(f64, Vec<f64>)> {
    if features.len() != points.len() {
        return Err(Error::layout("one feature vector per point required"));
    }
    if points.is_empty() {
        return Err(Error::layout("empty verification set"));
    }
    let mut probs = Vec::with_capacity(points.len());
    let mut total = 0.0;
    for (phi, p) in features.iter().zip(points) {
        if phi.len() != weights.len() {
            return Err(Error::layout(format!(
                "feature length {} does not match {} weights",
                phi.len(),
                weights.len()
            )));
        }
        let q = sigmoid(phi.dot(weights));
        total += (q - p.y).abs();
        probs.push(q);
    }
    Ok((total / points.len() as f64, probs))
}

struct Agent {
    vars: Vec<Var>,
    train: Vec<(DVector<f64>, f64)>,
    verify_features: Vec<DVector<f64>>,
}

enum MapState {
    Centralized(DiagGaussian),
    Agents { states: Vec<DiagGaussian>, plan: DiagMixPlan },
}

/// Diagonal-GVI estimators over a mapping scenario.
pub struct MappingRun<'a> {
    scenario: &'a MappingScenario,
    agents: Vec<Agent>,
    state: MapState,
    schedule: StepSchedule,
    consensus_every: usize,
}

impl<'a> MappingRun<'a> {
    /// `marginal` uses the threshold layout; `distributed` gives every robot all
    /// weights and full features; `centralized` applies every robot's batch to one estimate.
    pub fn new(scenario: &'a MappingScenario, kind: EstimatorKind, schedule: StepSchedule, consensus_every: usize) -> Result<Self> {
        schedule.validate()?;
        if matches!(schedule, StepSchedule::AdaptiveOracle { .. }) {
            return Err(Error::config("estimator.schedule", "the oracle schedule needs a grid objective"));
        }
        let full = match kind {
            EstimatorKind::Marginal => false,
            EstimatorKind::Distributed | EstimatorKind::Centralized => true,
            other => return Err(Error::config("estimator.kind", format!("`{other}` does not apply to mapping"))),
        };
        let s = scenario;
        let agents: Vec<Agent> = (0..s.robots())
            .map(|i| Agent {
                vars: s.vars_of(i, full),
                train: s.train[i].iter().map(|p| (s.features(i, p.x, full), p.y)).collect(),
                verify_features: s.verify[i].iter().map(|p| s.features(i, p.x, full)).collect(),
            })
            .collect();
        let prior = |vars: &[Var]| {
            DiagGaussian::new(vars.to_vec(), DVector::from_element(vars.len(), s.config.prior_info), DVector::zeros(vars.len()))
        };
        let state = if kind == EstimatorKind::Centralized {
            MapState::Centralized(prior(&agents[0].vars)?)
        } else {
            let layout = if full {
                let names = (0..=s.centers.len()).map(|k| (format!("w{k}"), 1)).collect();
                VariableLayout::replicated(names, s.robots())?
            } else {
                s.layout.clone()
            };
            let states = agents.iter().map(|a| prior(&a.vars)).collect::<Result<Vec<_>>>()?;
            MapState::Agents { states, plan: DiagMixPlan::new(&layout, &s.network)? }
        };
        Ok(MappingRun { scenario, agents, state, schedule, consensus_every })
    }

    fn batch(&self, robot: usize, round: usize) -> Result<LogisticLikelihood> {
        let mut rng = observation_rng(self.scenario.config.seed, robot, round);
        let a = &self.agents[robot];
        let pts = (0..self.scenario.config.batch)
            .map(|_| a.train[rng.random_range(0..a.train.len())].clone())
            .collect();
        LogisticLikelihood::new(a.vars.clone(), pts)
    }

    /// Current estimate of each robot (the single shared estimate when centralized).
    pub fn estimates(&self) -> Vec<&DiagGaussian> {
        match &self.state {
            MapState::Centralized(p) => vec![p; self.agents.len()],
            MapState::Agents { states, .. } => states.iter().collect(),
        }
    }

    /// Verification L¹ error per robot.
    pub fn errors(&self) -> Result<Vec<f64>> {
        self.estimates()
            .iter()
            .enumerate()
            .map(|(i, e)| {
                Ok(mapping_error(e.mean(), &self.agents[i].verify_features, &self.scenario.verify[i])?.0)
            })
            .collect()
    }

    fn shared_pairs(&self) -> Vec<(usize, usize, usize, usize)> {
        let est = self.estimates();
        let mut out = Vec::new();
        for i in 0..est.len() {
            for j in (i + 1)..est.len() {
                for (a, v) in est[i].vars().iter().enumerate() {
                    if let Some(b) = est[j].vars().iter().position(|w| w.id == v.id) {
                        out.push((i, a, j, b));
                    }
                }
            }
        }
        out
    }

    /// Largest absolute difference between two robots' means of a shared weight.
    pub fn shared_disagreement(&self) -> f64 {
        let est = self.estimates();
        self.shared_pairs()
            .into_iter()
            .map(|(i, a, j, b)| (est[i].mean()[a] - est[j].mean()[b]).abs())
            .fold(0.0, f64::max)
    }

    /// Largest TV between two robots' marginals of a shared weight.
    pub fn consensus_gap(&self) -> Result<Option<f64>> {
        if matches!(self.state, MapState::Centralized(_)) {
            return Ok(None);
        }
        let est = self.estimates();
        let mut worst = 0.0f64;
        for (i, a, j, b) in self.shared_pairs() {
            let one = |e: &DiagGaussian, k: usize| {
                crate::density::GaussianDensity::isotropic(vec![e.vars()[k]], DVector::from_element(1, e.mean()[k]), e.info()[k])
            };
            worst = worst.max(tv_distance(&one(est[i], a)?, &one(est[j], b)?)?);
        }
        Ok(Some(worst))
    }
}

impl Simulator for MappingRun<'_> {
    fn step(&mut self, t: usize) -> Result<()> {
        let alpha = self.schedule.alpha(t, None)?;
        let batches = (0..self.agents.len()).map(|i| self.batch(i, t)).collect::<Result<Vec<_>>>()?;
        let rule = self.scenario.config.expectation_rule;
        match &mut self.state {
            MapState::Centralized(p) => {
                for b in &batches {
                    *p = diag_gvi_update(p, b, rule, alpha)?;
                }
            }
            MapState::Agents { states, plan } => {
                let refs: Vec<&dyn LogLikelihood> = batches.iter().map(|b| b as &dyn LogLikelihood).collect();
                *states = diag_gvi_step(states, plan, &refs, rule, alpha)?.next;
            }
        }
        Ok(())
    }

    fn record(&self, round: usize) -> Result<Vec<TraceRow>> {
        let errors = self.errors()?;
        let consensus = if self.consensus_every > 0 && round.is_multiple_of(self.consensus_every) {
            self.consensus_gap()?
        } else {
            None
        };
        Ok(errors
            .into_iter()
            .enumerate()
            .map(|(agent, error)| TraceRow { round, agent, error, consensus_tv: consensus, kl_ref: None })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::run_rounds;

    #[test]
    fn desk_layout_is_valid_and_saves_storage() {
        let s = MappingScenario::build(MappingConfig::desk(1)).unwrap();
        let (marginal, full) = s.storage();
        assert!(marginal < full, "{marginal} vs {full}");
        assert_eq!(s.parameter_counts().len(), 3);
        assert!(s.shared_counts(1).iter().all(|&c| c >= 1));
    }

    #[test]
    fn infinite_threshold_owns_everything() {
        let mut cfg = MappingConfig::desk(2);
        cfg.threshold = 1e9;
        let s = MappingScenario::build(cfg).unwrap();
        assert!(s.parameter_counts().iter().all(|&c| c == 61));
    }

    #[test]
    fn uncovered_center_is_a_coverage_error() {
        let mut cfg = MappingConfig::desk(2);
        cfg.threshold = 0.1;
        assert!(matches!(MappingScenario::build(cfg), Err(Error::Coverage(_))));
    }

    #[test]
    fn zero_weights_give_half_error() {
        let pts = vec![LabelledPoint { x: [0.0, 0.0], y: 1.0 }, LabelledPoint { x: [1.0, 0.0], y: 0.0 }];
        let phi = vec![DVector::from_vec(vec![1.0, 0.3]); 2];
        let (e, p) = mapping_error(&DVector::zeros(2), &phi, &pts).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
        assert_eq!(p, vec![0.5, 0.5]);
        assert!(mapping_error(&DVector::zeros(3), &phi, &pts).is_err());
    }

    #[test]
    fn saturated_weights_drive_error_to_zero() {
        let pts = vec![LabelledPoint { x: [0.0, 0.0], y: 1.0 }, LabelledPoint { x: [0.0, 0.0], y: 0.0 }];
        let phi = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])];
        let errs: Vec<f64> =
            [1.0, 10.0, 40.0].iter().map(|k| mapping_error(&DVector::from_vec(vec![*k]), &phi, &pts).unwrap().0).collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2] && errs[2] < 1e-15);
    }

    #[test]
    fn estimators_run_deterministically() {
        let s = MappingScenario::build(MappingConfig::desk(3)).unwrap();
        for kind in [EstimatorKind::Marginal, EstimatorKind::Distributed, EstimatorKind::Centralized] {
            let go = || {
                let mut run = MappingRun::new(&s, kind, StepSchedule::Constant { alpha: 1.0 }, 10).unwrap();
                run_rounds(&mut run, 20).unwrap()
            };
            let (a, b) = (go(), go());
            assert_eq!(a, b);
            assert!(a.mean_error(20).unwrap() < a.mean_error(0).unwrap());
        }
    }
}
