//! Randomized checks of the convergence propositions, run against the grid
//! representation. Each check reports how many instances it ran and the
//! largest amount by which its inequality was exceeded.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::density::{
    conditional_marginal_product, geometric_mean, GaussianDensity, Var, VarId, VariableLayout,
};
use crate::error::{Error, Result};
use crate::estimators::{distributed_step, grid_update, marginal_step, observation_rng, GridModel, StepSchedule};
use crate::gaussian::{linear_gaussian_posterior, LinearGaussianModel};
use crate::grid::{
    grid_conditional_marginal_product, grid_geometric_mix, grid_kl, grid_marginalize, grid_tv, Axis, GridDensity,
};
use crate::network::{validate_marginal_consensus, Network, Topology, WeightRule};
use crate::scenarios::synthetic::{perturb, random_grid_density, BernoulliAgent, BernoulliGridProblem};

/// Outcome of one inequality over many instances.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub proposition: String,
    pub instances: usize,
    pub violations: usize,
    /// Largest excess over the allowed side of the inequality (0 when none).
    pub max_violation: f64,
    pub tolerance: f64,
    /// Report-only checks never fail a suite.
    pub enforced: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CheckReport {
    fn new(proposition: &str, tolerance: f64) -> Self {
        CheckReport {
            proposition: proposition.into(),
            instances: 0,
            violations: 0,
            max_violation: 0.0,
            tolerance,
            enforced: true,
            note: None,
        }
    }

    fn report_only(mut self) -> Self {
        self.enforced = false;
        self
    }

    /// Records one instance of `lhs ≤ rhs`.
    fn le(&mut self, lhs: f64, rhs: f64) {
        self.instances += 1;
        let excess = lhs - rhs;
        if !(excess <= 0.0) {
            self.violations += 1;
            self.max_violation = self.max_violation.max(if excess.is_nan() { f64::INFINITY } else { excess });
        }
    }

    pub fn passed(&self) -> bool {
        !self.enforced || self.violations == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

pub const SUITES: [&str; 10] = [
    "density-algebra",
    "oracle-equivalence",
    "mixing-propositions",
    "manifold",
    "iterate-gap",
    "contraction",
    "rate-bound",
    "marginal-convergence",
    "pinsker",
    "conjecture",
];

/// Runs a registered suite at its default size.
pub fn run_suite(name: &str, seed: u64) -> Result<SuiteReport> {
    let checks = match name {
        "density-algebra" => density_algebra(200, seed)?,
        "oracle-equivalence" => oracle_equivalence(20, seed)?,
        "mixing-propositions" => mixing_propositions(500, seed)?,
        "manifold" => manifold(100, seed)?,
        "iterate-gap" => iterate_gap(50, 200, seed)?,
        "contraction" => contraction(10, 100, seed)?,
        "rate-bound" => rate_bound(20, 1000, seed)?,
        "marginal-convergence" => vec![marginal_convergence(50, 2000, seed)?.0],
        "pinsker" => pinsker(500, seed)?,
        "conjecture" => conjecture(100, seed)?,
        other => {
            return Err(Error::config("suite", format!("unknown suite `{other}`; known: {}", SUITES.join(", "))))
        }
    };
    Ok(SuiteReport { suite: name.into(), seed, passed: checks.iter().all(CheckReport::passed), checks })
}

fn rng_for(seed: u64, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(instance as u64);
    rng
}

fn random_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Result<GaussianDensity> {
    let vars: Vec<Var> = (0..d).map(Var::scalar).collect();
    let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
    let sd: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
    let mut cov = DMatrix::from_diagonal(&DVector::from_iterator(d, sd.iter().map(|s| s * s)));
    if d == 2 {
        let rho = rng.random_range(-0.8..0.8);
        cov[(0, 1)] = rho * sd[0] * sd[1];
        cov[(1, 0)] = cov[(0, 1)];
    }
    GaussianDensity::from_moments(vars, mean, cov)
}

/// Closed-form Gaussian operations against the grid oracle, KL ≤ 1e-5.
pub fn density_algebra(cases: usize, seed: u64) -> Result<Vec<CheckReport>> {
    const TOL: f64 = 1e-5;
    let mut post = CheckReport::new("linear-Gaussian posterior matches grid Bayes update", TOL);
    let mut marg = CheckReport::new("Gaussian marginal matches grid marginal", TOL);
    let mut cond = CheckReport::new("Gaussian conditional matches grid conditional slices", TOL);
    let mut geo = CheckReport::new("Gaussian geometric mean matches grid geometric mix", TOL);
    let mut cmp = CheckReport::new("conditional-marginal product matches grid product", TOL);
    for case in 0..cases {
        let mut rng = rng_for(seed, case);
        let d = 1 + case % 2;
        let prior = random_gaussian(&mut rng, d)?;

        let rows = rng.random_range(1..=d);
        let h = DMatrix::from_fn(rows, d, |_, _| rng.random_range(-1.5..1.5));
        let noise = rng.random_range(0.5..2.0);
        let v = DMatrix::identity(rows, rows) / (noise * noise);
        let model = LinearGaussianModel::new(prior.vars().to_vec(), h.clone(), v.clone())?;
        let z = DVector::from_fn(rows, |_, _| rng.random_range(-2.0..2.0));
        let alpha = rng.random_range(0.2..1.0);
        let exact = linear_gaussian_posterior(&prior, &model, &z, alpha)?;
        let axes = GridDensity::default_axes(&[&prior, &exact])?;
        let field = GridDensity::discretize(&prior, axes.clone())?.field(|x| {
            let r = &z - &h * DVector::from_column_slice(x);
            let vr = &v * &r;
            -0.5 * r.dot(&vr)
        });
        let grid_post = GridDensity::discretize(&prior, axes.clone())?.bayes_update(&field, alpha)?;
        post.le(grid_kl(&grid_post, &GridDensity::discretize(&exact, axes)?)?, TOL);

        let k = rng.random_range(2..=3);
        let parts = (0..k).map(|_| random_gaussian(&mut rng, d)).collect::<Result<Vec<_>>>()?;
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let refs: Vec<&GaussianDensity> = parts.iter().collect();
        let pooled = geometric_mean(&refs, &weights)?;
        let mut all = refs.clone();
        all.push(&pooled);
        let axes = GridDensity::default_axes(&all)?;
        let grids = parts.iter().map(|p| GridDensity::discretize(p, axes.clone())).collect::<Result<Vec<_>>>()?;
        let (mixed, _) = grid_geometric_mix(&grids.iter().collect::<Vec<_>>(), &weights)?;
        geo.le(grid_kl(&mixed, &GridDensity::discretize(&pooled, axes)?)?, TOL);

        if d == 2 {
            let keep = VarId(rng.random_range(0..2));
            let other = VarId(1 - keep.0);
            let axes = GridDensity::default_axes(&[&prior])?;
            let joint = GridDensity::discretize(&prior, axes.clone())?;
            let gm = grid_marginalize(&joint, &[keep])?;
            let exact_m = GridDensity::discretize(&prior.marginalize(&[keep])?, vec![axes[keep.0]])?;
            marg.le(grid_kl(&gm, &exact_m)?, TOL);

            let gc = joint.condition(&[keep])?;
            let cg = prior.condition(&[keep])?;
            let sd = prior.covariance()?[(keep.0, keep.0)].sqrt();
            let center = prior.mean()?[keep.0];
            for shift in [-1.0, 0.0, 1.5] {
                let node = axes[keep.0].nearest(center + shift * sd);
                let value = axes[keep.0].point(node);
                let slice: Vec<f64> = (0..joint.n_cells())
                    .filter(|&c| joint.index_of(c)[keep.0] == node)
                    .map(|c| gc.log_values()[c])
                    .collect();
                let gslice = GridDensity::from_log_weights(vec![axes[other.0]], slice)?;
                let at = cg.at(&DVector::from_element(1, value))?;
                cond.le(grid_kl(&gslice, &GridDensity::discretize(&at, vec![axes[other.0]])?)?, TOL);
            }

            let q = GaussianDensity::isotropic(
                vec![Var::scalar(keep.0)],
                DVector::from_element(1, rng.random_range(-2.0..2.0)),
                rng.random_range(0.3..2.0),
            )?;
            let product = conditional_marginal_product(&prior, &q)?;
            let axes = GridDensity::default_axes(&[&prior, &product])?;
            let gq = GridDensity::discretize(&q, vec![axes[keep.0]])?;
            let gp = grid_conditional_marginal_product(&GridDensity::discretize(&prior, axes.clone())?, &gq)?;
            cmp.le(grid_kl(&gp, &GridDensity::discretize(&product, axes)?)?, TOL);
        }
    }
    Ok(vec![post, marg, cond, geo, cmp])
}

/// The distributed step run on Gaussians and on grids from the same data.
pub fn oracle_equivalence(cases: usize, seed: u64) -> Result<Vec<CheckReport>> {
    const TOL: f64 = 1e-5;
    let mut check = CheckReport::new("Gaussian distributed SMD matches grid distributed SMD", TOL);
    for case in 0..cases {
        let mut rng = rng_for(seed, case);
        let n = rng.random_range(2..=4);
        let net = Network::from_topology(n, &Topology::Ring, WeightRule::LazySinkhorn, 0)?;
        let vars = vec![Var::scalar(0), Var::scalar(1)];
        let prior = random_gaussian(&mut rng, 2)?;
        let models: Vec<(LinearGaussianModel, f64)> = (0..n)
            .map(|_| {
                let h = DMatrix::from_fn(1, 2, |_, _| rng.random_range(-1.0..1.0));
                let info = rng.random_range(0.5..2.0);
                Ok((LinearGaussianModel::new(vars.clone(), h, DMatrix::from_element(1, 1, info))?, info))
            })
            .collect::<Result<_>>()?;
        let rounds = 3;
        let zs: Vec<Vec<DVector<f64>>> =
            (0..rounds).map(|_| (0..n).map(|_| DVector::from_element(1, rng.random_range(-1.0..1.0))).collect()).collect();
        let alpha = 0.7;
        let mut gauss = vec![prior.clone(); n];
        for z in &zs {
            gauss = distributed_step(&gauss, &net, |i, p, a| linear_gaussian_posterior(p, &models[i].0, &z[i], a), alpha)?.next;
        }
        let refs: Vec<&GaussianDensity> = std::iter::once(&prior).chain(gauss.iter()).collect();
        let axes = GridDensity::default_axes(&refs)?;
        let mut grids = vec![GridDensity::discretize(&prior, axes.clone())?; n];
        for z in &zs {
            grids = distributed_step(
                &grids,
                &net,
                |i, p: &GridDensity, a| {
                    let (m, info) = &models[i];
                    let field = p.field(|x| {
                        let r = z[i][0] - (m.h()[(0, 0)] * x[0] + m.h()[(0, 1)] * x[1]);
                        -0.5 * info * r * r
                    });
                    p.bayes_update(&field, a)
                },
                alpha,
            )?
            .next;
        }
        for (g, p) in grids.iter().zip(&gauss) {
            check.le(grid_kl(g, &GridDensity::discretize(p, axes.clone())?)?, TOL);
        }
    }
    Ok(vec![check])
}

fn random_network(rng: &mut ChaCha8Rng, n: usize) -> Result<Network> {
    let topo = match rng.random_range(0..4) {
        0 => Topology::Ring,
        1 => Topology::Line,
        2 => Topology::Complete,
        _ => Topology::Star,
    };
    let rule = if rng.random::<bool>() { WeightRule::LazySinkhorn } else { WeightRule::Metropolis };
    Network::from_topology(n, &topo, rule, 0)
}

fn random_axes(rng: &mut ChaCha8Rng) -> Result<Vec<Axis>> {
    if rng.random::<bool>() {
        Ok(vec![Axis::new(VarId(0), -3.0, 3.0, 41)?])
    } else {
        Ok(vec![Axis::new(VarId(0), -3.0, 3.0, 15)?, Axis::new(VarId(1), -2.0, 2.0, 13)?])
    }
}

fn max_pairwise_tv(ps: &[GridDensity]) -> Result<f64> {
    let mut worst = 0.0f64;
    for a in 0..ps.len() {
        for b in (a + 1)..ps.len() {
            worst = worst.max(grid_tv(&ps[a], &ps[b])?);
        }
    }
    Ok(worst)
}

fn mix_only<E: crate::estimators::Estimate>(states: &[E], net: &Network) -> Result<Vec<E>> {
    Ok(distributed_step(states, net, |_, v: &E, _| Ok(v.clone()), 0.0)?.mixed)
}

/// Geometric mixing never increases `Σ_i KL(p, ·)`, and strictly decreases it
/// when the inputs differ; the independent-variable likelihood factor stays in
/// `[e^{−αL}, e^{αL}]`.
pub fn mixing_propositions(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut nonincrease = CheckReport::new("Σ KL(p, v_i) ≤ Σ KL(p, p_i)", 1e-9);
    let mut strict = CheckReport::new("strict decrease > 1e-6 when max pairwise TV > 1e-3", 1e-6);
    let mut factor = CheckReport::new("independent-variable likelihood factor within [e^{-αL}, e^{αL}]", 1e-12);
    for k in 0..instances {
        let mut rng = rng_for(seed, k);
        let n = rng.random_range(2..=5);
        let net = random_network(&mut rng, n)?;
        let axes = random_axes(&mut rng)?;
        let ps = (0..n).map(|_| random_grid_density(&axes, &mut rng)).collect::<Result<Vec<_>>>()?;
        let reference = random_grid_density(&axes, &mut rng)?;
        let vs = mix_only(&ps, &net)?;
        let before: f64 = ps.iter().map(|p| grid_kl(&reference, p)).sum::<Result<f64>>()?;
        let after: f64 = vs.iter().map(|v| grid_kl(&reference, v)).sum::<Result<f64>>()?;
        nonincrease.le(after - before, 1e-9);
        if max_pairwise_tv(&ps)? > 1e-3 {
            strict.le(after - before, -1e-6);
        }
        if axes.len() == 2 {
            independent_factor(&mut rng, &axes, &mut factor)?;
        }
    }
    Ok(vec![nonincrease, strict, factor])
}

fn independent_factor(rng: &mut ChaCha8Rng, axes: &[Axis], check: &mut CheckReport) -> Result<()> {
    let a = random_grid_density(&axes[..1], rng)?;
    let b = random_grid_density(&axes[1..], rng)?;
    let joint = GridDensity::from_log_weights(
        axes.to_vec(),
        (0..axes[0].n * axes[1].n).map(|c| a.log_density()[c / axes[1].n] + b.log_density()[c % axes[1].n]).collect(),
    )?;
    let l = 2.0;
    let alpha = rng.random_range(0.05..1.0);
    let (c0, c1) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let loglik = joint.field(|x| l * (c0 * x[0] + c1 * x[1]).tanh());
    let probs = joint.probabilities();
    let marg_b = b.probabilities();
    for i in 0..axes[0].n {
        let mut acc = 0.0;
        for j in 0..axes[1].n {
            let c = i * axes[1].n + j;
            acc += (alpha * loglik[c]).exp() * marg_b[j];
        }
        let lf = acc.ln();
        check.le(lf.abs(), alpha * l + 1e-12);
        let _ = probs[i];
    }
    Ok(())
}

/// Contiguous variable intervals on a line of agents; every adjacent pair shares a variable.
fn random_marginal_layout(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Result<VariableLayout> {
    let mut intervals: Vec<(usize, usize)> = (0..m)
        .map(|_| {
            let a = rng.random_range(0..n);
            let b = rng.random_range(a..n);
            (a, b)
        })
        .collect();
    for agent in 0..n.saturating_sub(1) {
        if !intervals.iter().any(|&(a, b)| a <= agent && agent < b) {
            let k = rng.random_range(0..m);
            let (a, b) = intervals[k];
            intervals[k] = (a.min(agent), b.max(agent + 1));
        }
    }
    for agent in 0..n {
        if !intervals.iter().any(|&(a, b)| a <= agent && agent <= b) {
            let k = rng.random_range(0..m);
            let (a, b) = intervals[k];
            intervals[k] = (a.min(agent), b.max(agent));
        }
    }
    let subsets = (0..n)
        .map(|i| (0..m).filter(|&k| intervals[k].0 <= i && i <= intervals[k].1).map(VarId).collect())
        .collect();
    VariableLayout::new((0..m).map(|k| (format!("x{k}"), 1)).collect(), subsets)
}

/// `Σ_i log Z_i` of one marginal mixing round on grids.
pub fn marginal_log_normalizers(states: &[GridDensity], network: &Network, layout: &VariableLayout) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..network.n() {
        let mut items = vec![states[i].clone()];
        let mut weights = vec![network.weight(i, i)];
        for j in network.neighbors(i) {
            let shared = layout.shared(i, j);
            if shared.is_empty() {
                weights[0] += network.weight(i, j);
                continue;
            }
            let msg = grid_marginalize(&states[j], &shared)?;
            items.push(grid_conditional_marginal_product(&states[i], &msg)?);
            weights.push(network.weight(i, j));
        }
        let (_, log_z) = grid_geometric_mix(&items.iter().collect::<Vec<_>>(), &weights)?;
        total += log_z;
    }
    Ok(total)
}

/// `Σ` over edges of the TV between the two agents' marginals on their shared variables.
pub fn shared_mismatch(states: &[GridDensity], network: &Network, layout: &VariableLayout) -> Result<f64> {
    let mut total = 0.0;
    for (i, j) in network.edges() {
        let shared = layout.shared(i, j);
        if !shared.is_empty() {
            total += grid_tv(&grid_marginalize(&states[i], &shared)?, &grid_marginalize(&states[j], &shared)?)?;
        }
    }
    Ok(total)
}

/// Coherent marginals give `Σ log Z_i = 0`; perturbed ones give a strictly negative sum,
/// and repeated marginal mixing returns them to the manifold.
pub fn manifold(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut coherent = CheckReport::new("coherent marginals: |Σ log Z_i| < 1e-9", 1e-9);
    let mut perturbed = CheckReport::new("perturbed marginals (TV ≥ 1e-2): Σ log Z_i < -1e-6", 1e-6);
    let mut decrease = CheckReport::new("coherent reference: Σ KL(p̄_i, v_i) ≤ Σ KL(p̄_i, p_i)", 1e-9);
    let mut limit = CheckReport::new("200 mixing rounds: Σ_edges tv(p_ij, p_ji) < 1e-6", 1e-6);
    for k in 0..instances {
        let mut rng = rng_for(seed, k);
        let n = rng.random_range(2..=4);
        let net = Network::from_topology(n, &Topology::Line, WeightRule::LazySinkhorn, 0)?;
        let layout = random_marginal_layout(&mut rng, n, 3)?;
        validate_marginal_consensus(&layout, &net)?;
        let axes: Vec<Axis> = (0..3).map(|v| Axis::new(VarId(v), -2.0, 2.0, 7)).collect::<Result<_>>()?;
        let joint = random_grid_density(&axes, &mut rng)?;
        let ps = (0..n).map(|i| grid_marginalize(&joint, layout.agent_vars(i))).collect::<Result<Vec<_>>>()?;
        let s = marginal_log_normalizers(&ps, &net, &layout)?;
        coherent.le(s.abs(), 1e-9);
        let qs = ps.iter().map(|p| perturb(p, 1e-2, &mut rng)).collect::<Result<Vec<_>>>()?;
        let s = marginal_log_normalizers(&qs, &net, &layout)?;
        perturbed.le(s, -1e-6);

        let mut states = marginal_step(&qs, &net, &layout, |_, v: &GridDensity, _| Ok(v.clone()), 0.0)?.mixed;
        let before: f64 = ps.iter().zip(&qs).map(|(p, q)| grid_kl(p, q)).sum::<Result<f64>>()?;
        let after: f64 = ps.iter().zip(&states).map(|(p, v)| grid_kl(p, v)).sum::<Result<f64>>()?;
        decrease.le(after - before, 1e-9);
        for _ in 1..200 {
            states = marginal_step(&states, &net, &layout, |_, v: &GridDensity, _| Ok(v.clone()), 0.0)?.mixed;
        }
        limit.le(shared_mismatch(&states, &net, &layout)?, 1e-6);
    }
    Ok(vec![coherent, perturbed, decrease, limit])
}

fn bernoulli_problem(rng: &mut ChaCha8Rng, n: usize) -> Result<BernoulliGridProblem> {
    let axes = vec![Axis::new(VarId(0), -2.0, 2.0, 21)?, Axis::new(VarId(1), -2.0, 2.0, 21)?];
    let agents = (0..n)
        .map(|_| BernoulliAgent {
            vars: vec![VarId(0), VarId(1)],
            coef: vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
        })
        .collect();
    let truth = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
    BernoulliGridProblem::new(axes, agents, &truth, 1)
}

fn geometric_average(ps: &[GridDensity]) -> Result<GridDensity> {
    let w = vec![1.0 / ps.len() as f64; ps.len()];
    Ok(grid_geometric_mix(&ps.iter().collect::<Vec<_>>(), &w)?.0)
}

/// `tv(v_i, p_{i,t+1}) ≤ α_t L/2` and `tv(p̄_t, p̄_{t+1}) ≤ α_t L/2` along distributed grid runs.
pub fn iterate_gap(runs: usize, rounds: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut local = CheckReport::new("tv(v_i, p_{i,t+1}) ≤ α_t L/2", 1e-12);
    let mut average = CheckReport::new("tv(p̄_t, p̄_{t+1}) ≤ α_t L/2", 1e-12);
    let schedule = StepSchedule::default();
    for r in 0..runs {
        let mut rng = rng_for(seed, r);
        let problem = bernoulli_problem(&mut rng, 4)?;
        let net = Network::from_topology(4, &Topology::Ring, WeightRule::LazySinkhorn, 0)?;
        let l = problem.bound();
        let mut states = (0..4).map(|_| random_grid_density(&problem.axes_for(&problem.all_vars()), &mut rng)).collect::<Result<Vec<_>>>()?;
        let run_seed = seed.wrapping_add(r as u64);
        for t in 0..rounds {
            let alpha = schedule.alpha(t, None)?;
            let obs: Vec<usize> = (0..4).map(|i| problem.sample(i, &mut observation_rng(run_seed, i, t))).collect();
            let out = distributed_step(&states, &net, |i, v, a| grid_update(&problem, i, v, &obs[i], a), alpha)?;
            for (v, p) in out.mixed.iter().zip(&out.next) {
                local.le(grid_tv(v, p)?, alpha * l / 2.0 + 1e-12);
            }
            let before = geometric_average(&states)?;
            let after = geometric_average(&out.next)?;
            average.le(grid_tv(&before, &after)?, alpha * l / 2.0 + 1e-12);
            states = out.next;
        }
    }
    Ok(vec![local, average])
}

/// Variance over cells of `log p − log q`: a seminorm that ignores normalization.
fn log_ratio_spread(p: &GridDensity, q: &GridDensity) -> f64 {
    let d: Vec<f64> = p.log_density().iter().zip(q.log_density()).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64
}

/// Per mixing phase on distributed grid runs from a uniform start, with `p̄` the
/// geometric average: `Σ_i tv(v_i, p̄) ≤ σ(A) Σ_i tv(p_i, p̄)`, and the same
/// contraction (squared) for the log-ratio spread, where mixing is linear.
pub fn contraction(runs: usize, rounds: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for topo in [Topology::Ring, Topology::Line, Topology::Complete] {
        let mut tv = CheckReport::new(&format!("{}: Σ tv(v_i, p̄) ≤ (σ(A)+1e-6) Σ tv(p_i, p̄)", topo.label()), 1e-6);
        let mut spread =
            CheckReport::new(&format!("{}: Σ spread(v_i, p̄) ≤ σ(A)² Σ spread(p_i, p̄)", topo.label()), 1e-9);
        let net = Network::from_topology(5, &topo, WeightRule::LazySinkhorn, 0)?;
        let sigma = net.contraction_rate(None)?;
        let schedule = StepSchedule::default();
        let mut worst = 0.0f64;
        for r in 0..runs {
            let mut rng = rng_for(seed, r);
            let problem = bernoulli_problem(&mut rng, 5)?;
            let axes = problem.axes_for(&problem.all_vars());
            let mut states = vec![GridDensity::uniform(axes.clone())?; 5];
            let run_seed = seed.wrapping_add(r as u64);
            for t in 0..rounds {
                let alpha = schedule.alpha(t, None)?;
                let bar = geometric_average(&states)?;
                let obs: Vec<usize> =
                    (0..5).map(|i| problem.sample(i, &mut observation_rng(run_seed, i, t))).collect();
                let step = distributed_step(&states, &net, |i, v, a| grid_update(&problem, i, v, &obs[i], a), alpha)?;
                let before: f64 = states.iter().map(|p| grid_tv(p, &bar)).sum::<Result<f64>>()?;
                let after: f64 = step.mixed.iter().map(|v| grid_tv(v, &bar)).sum::<Result<f64>>()?;
                tv.le(after, (sigma + 1e-6) * before);
                if before > 1e-12 {
                    worst = worst.max(after / before);
                }
                let before: f64 = states.iter().map(|p| log_ratio_spread(p, &bar)).sum();
                let after: f64 = step.mixed.iter().map(|v| log_ratio_spread(v, &bar)).sum();
                spread.le(after, sigma * sigma * before * (1.0 + 1e-9) + 1e-15);
                states = step.next;
            }
        }
        tv.note = Some(format!("σ(A) = {sigma:.6}, worst observed ratio {worst:.6}"));
        out.push(tv);
        out.push(spread);
    }
    Ok(out)
}

/// Centralized SMD with the oracle step `α_t = (f[p_t] − f★)/(4L²)`:
/// `f[p̄_t] − f★ ≤ √(8L²·KL(p★, p₀)/t)` at `t ∈ {10, 100, 1000}` (capped by `horizon`).
pub fn rate_bound(seeds: usize, horizon: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let problem = BernoulliGridProblem::scalar(2.0, 41, 1.5, 0.5, 1)?;
    let all = problem.all_vars();
    let l = problem.bound();
    let f_star = problem.optimal_objective()?;
    let p0 = problem.uniform(&all)?;
    let kl0 = grid_kl(&problem.optimum(&all)?, &p0)?;
    let schedule = StepSchedule::AdaptiveOracle { l, f_star };
    let logged: Vec<usize> = [10, 100, 1000].into_iter().filter(|&t| t <= horizon).collect();
    let mut check = CheckReport::new("f[p̄_t] − f★ ≤ √(8L²KL(p★,p₀)/t)", 0.0);
    for s in 0..seeds {
        let run_seed = seed.wrapping_add(s as u64);
        let mut p = p0.clone();
        let mut sum_f = 0.0;
        for t in 0..horizon {
            let f = problem.objective(&p)?;
            let alpha = schedule.alpha(t, Some(f))?;
            let z = problem.sample(0, &mut observation_rng(run_seed, 0, t));
            p = grid_update(&problem, 0, &p, &z, alpha)?;
            sum_f += problem.objective(&p)?;
            let k = t + 1;
            if logged.contains(&k) {
                let gap = sum_f / k as f64 - f_star;
                check.le(gap, (8.0 * l * l * kl0 / k as f64).sqrt());
            }
        }
    }
    check.note = Some(format!("L = {l:.4}, KL(p★, p₀) = {kl0:.4}, f★ = {f_star:.6}"));
    Ok(vec![check])
}

/// Two-agent marginal SMD on the Bernoulli grid problem. Returns the check on the
/// median of `Σ_i KL(p★_i, v_{i,T})` across seeds and the per-seed values.
pub fn marginal_convergence(seeds: usize, rounds: usize, seed: u64) -> Result<(CheckReport, Vec<f64>)> {
    let problem = BernoulliGridProblem::two_agent_marginal(11, 3.0, [0.4, -0.2], 10)?;
    let schedule = StepSchedule::RobbinsMonro { a: 1.0, b: 1.0, power: 0.6 };
    marginal_convergence_with(&problem, &schedule, seeds, rounds, seed)
}

/// [`marginal_convergence`] on a caller-supplied two-agent problem and schedule.
pub fn marginal_convergence_with(
    problem: &BernoulliGridProblem,
    schedule: &StepSchedule,
    seeds: usize,
    rounds: usize,
    seed: u64,
) -> Result<(CheckReport, Vec<f64>)> {
    let layout = VariableLayout::new(vec![("t0".into(), 1), ("t1".into(), 1)], vec![vec![VarId(0), VarId(1)], vec![VarId(1)]])?;
    let net = Network::from_topology(2, &Topology::Line, WeightRule::LazySinkhorn, 0)?;
    validate_marginal_consensus(&layout, &net)?;
    let optima = (0..2).map(|i| problem.optimum(layout.agent_vars(i))).collect::<Result<Vec<_>>>()?;
    let mut finals = Vec::with_capacity(seeds);
    for s in 0..seeds {
        let run_seed = seed.wrapping_add(s as u64);
        let mut states = (0..2).map(|i| problem.uniform(layout.agent_vars(i))).collect::<Result<Vec<_>>>()?;
        let mut mixed = states.clone();
        for t in 0..rounds {
            let alpha = schedule.alpha(t, None)?;
            let obs: Vec<usize> = (0..2).map(|i| problem.sample(i, &mut observation_rng(run_seed, i, t))).collect();
            let out = marginal_step(&states, &net, &layout, |i, v, a| grid_update(problem, i, v, &obs[i], a), alpha)?;
            mixed = out.mixed;
            states = out.next;
        }
        let total = mixed.iter().zip(&optima).map(|(v, o)| grid_kl(o, v)).sum::<Result<f64>>()?;
        finals.push(total);
    }
    let mut sorted = finals.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.is_empty() {
        f64::NAN
    } else if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    let mut check = CheckReport::new("median Σ_i KL(p★_i, v_{i,T}) < 1e-2", 1e-2);
    check.le(median, 1e-2);
    check.note = Some(format!("median {median:.3e} over {seeds} seeds at T = {rounds}"));
    Ok((check, finals))
}

/// `tv(p, g) ≤ √(KL(p, g)/2)` on random grid pairs.
pub fn pinsker(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut check = CheckReport::new("tv(p, g) ≤ √(KL(p, g)/2)", 1e-12);
    for k in 0..instances {
        let mut rng = rng_for(seed, k);
        let axes = random_axes(&mut rng)?;
        let p = random_grid_density(&axes, &mut rng)?;
        let g = random_grid_density(&axes, &mut rng)?;
        check.le(grid_tv(&p, &g)?, (grid_kl(&p, &g)? / 2.0).sqrt() + 1e-12);
    }
    Ok(vec![check])
}

/// Report-only: the TV contraction of marginal mixing toward the marginals of a
/// reference joint, on coupled (non-product) grid densities.
pub fn conjecture(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut check =
        CheckReport::new("marginal mixing: tv(v_i, p̄_i) ≤ σ(A) tv(p_i, p̄_i) for p̄ the coherent joint", 1e-9).report_only();
    for k in 0..instances {
        let mut rng = rng_for(seed, k);
        let n = rng.random_range(2..=4);
        let net = Network::from_topology(n, &Topology::Line, WeightRule::LazySinkhorn, 0)?;
        let sigma = net.contraction_rate(None)?;
        let layout = random_marginal_layout(&mut rng, n, 3)?;
        let axes: Vec<Axis> = (0..3).map(|v| Axis::new(VarId(v), -2.0, 2.0, 7)).collect::<Result<_>>()?;
        let joint = random_grid_density(&axes, &mut rng)?;
        let bars = (0..n).map(|i| grid_marginalize(&joint, layout.agent_vars(i))).collect::<Result<Vec<_>>>()?;
        let ps = bars.iter().map(|p| perturb(p, 2e-2, &mut rng)).collect::<Result<Vec<_>>>()?;
        let vs = marginal_step(&ps, &net, &layout, |_, v: &GridDensity, _| Ok(v.clone()), 0.0)?.mixed;
        for i in 0..n {
            check.le(grid_tv(&vs[i], &bars[i])?, sigma * grid_tv(&ps[i], &bars[i])? + 1e-9);
        }
    }
    check.note = Some("unproven in general; reported, not enforced".into());
    Ok(vec![check])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_config_error() {
        assert!(matches!(run_suite("nope", 0), Err(Error::Config { .. })));
    }

    #[test]
    fn small_suites_pass() {
        for checks in [density_algebra(6, 1).unwrap(), mixing_propositions(10, 1).unwrap(), manifold(5, 1).unwrap(), pinsker(10, 1).unwrap()] {
            for c in checks {
                assert!(c.passed(), "{c:?}");
            }
        }
    }
}
