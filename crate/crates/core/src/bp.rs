//! Gaussian belief propagation and circular BP for pairwise relative
//! measurements `x_a − x_b ~ N(d, Ω_e⁻¹)`.
//!
//! Messages are kept in information form so a round-0 message can carry zero
//! information. A message from `i` to `j` is built from
//! `p^g = p_i · m_ji^{1−α} · Π_{k≠j} m_ki` and the edge factor, then
//! marginalized onto `x_j`:
//!
//! `Ω^(m) = Ω_e − Ω_e (Ω^g + Ω_e)⁻¹ Ω_e`,
//! `Ω^(m) μ^(m) = Ω^(m) s + Ω_e (Ω^g + Ω_e)⁻¹ Ω^g μ^g`,
//!
//! where `s` is the offset of `x_j` relative to `x_i`. Standard BP is `α = 1`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::{GaussianDensity, Var};
use crate::error::{Error, Result};

/// Message `m_{from→to}(x_to)` in information form.
#[derive(Clone, Debug, PartialEq)]
pub struct BPMessage {
    pub from: usize,
    pub to: usize,
    pub info: DMatrix<f64>,
    pub info_vector: DVector<f64>,
}

impl BPMessage {
    /// Zero-information message.
    pub fn vacuous(from: usize, to: usize, dim: usize) -> Self {
        BPMessage { from, to, info: DMatrix::zeros(dim, dim), info_vector: DVector::zeros(dim) }
    }

    /// The message as a density over `x_to` (`var` names that variable).
    pub fn density(&self, var: Var) -> Result<GaussianDensity> {
        GaussianDensity::new(vec![var], self.info.clone(), self.info_vector.clone())
    }

    pub fn mean(&self) -> Result<DVector<f64>> {
        Cholesky::new(self.info.clone())
            .map(|c| c.solve(&self.info_vector))
            .ok_or_else(|| Error::numerical("message carries no invertible information"))
    }
}

/// Pairwise factor for the undirected edge `(a, b)`, `a < b`: `x_a − x_b ~ N(offset, info⁻¹)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeFactor {
    pub a: usize,
    pub b: usize,
    pub info: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl EdgeFactor {
    pub fn new(a: usize, b: usize, info: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if a == b {
            return Err(Error::layout("edge factor needs two distinct agents"));
        }
        if info.nrows() != offset.len() || info.ncols() != offset.len() {
            return Err(Error::layout("edge factor dimensions disagree"));
        }
        crate::density::check_symmetric(&info)?;
        crate::density::check_positive_definite(&info)?;
        let (a, b, offset) = if a < b { (a, b, offset) } else { (b, a, -offset) };
        Ok(EdgeFactor { a, b, info, offset })
    }

    /// Fuses two independent measurements of the same edge, given as
    /// `x_i − x_j ~ N(z_ij, Ω_ij⁻¹)` and `x_j − x_i ~ N(z_ji, Ω_ji⁻¹)`.
    pub fn fuse(
        i: usize,
        j: usize,
        z_ij: &DVector<f64>,
        omega_ij: &DMatrix<f64>,
        z_ji: &DVector<f64>,
        omega_ji: &DMatrix<f64>,
    ) -> Result<Self> {
        let info = omega_ij + omega_ji;
        let eta = omega_ij * z_ij - omega_ji * z_ji;
        let offset = Cholesky::new(info.clone())
            .ok_or_else(|| Error::numerical("fused edge information not positive definite"))?
            .solve(&eta);
        EdgeFactor::new(i, j, info, offset)
    }

    /// Offset `s` with `x_to ≈ x_from + s`.
    fn shift(&self, from: usize) -> DVector<f64> {
        if from == self.a {
            -&self.offset
        } else {
            self.offset.clone()
        }
    }

    fn other(&self, k: usize) -> usize {
        if k == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// `α ∈ (0, 1]`; the remaining circular-BP exponents are fixed at 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircularBPConfig {
    pub alpha: f64,
}

impl CircularBPConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::config("estimator.alpha", format!("circular BP alpha must lie in (0, 1], got {alpha}")));
        }
        Ok(CircularBPConfig { alpha })
    }
}

impl Default for CircularBPConfig {
    fn default() -> Self {
        CircularBPConfig { alpha: 0.8 }
    }
}

/// Zero-information messages along both directions of every edge.
pub fn vacuous_inbox(factors: &[EdgeFactor], dim: usize) -> Vec<BPMessage> {
    factors
        .iter()
        .flat_map(|f| [BPMessage::vacuous(f.a, f.b, dim), BPMessage::vacuous(f.b, f.a, dim)])
        .collect()
}

fn lookup(inbox: &[BPMessage], from: usize, to: usize) -> Result<&BPMessage> {
    inbox
        .iter()
        .find(|m| m.from == from && m.to == to)
        .ok_or_else(|| Error::Protocol(format!("no BP message from {from} to {to}")))
}

/// Standard BP round. Returns `p_i · Π_k m_ki` for every agent and the next messages.
pub fn bp_round(
    beliefs: &[GaussianDensity],
    inbox: &[BPMessage],
    factors: &[EdgeFactor],
) -> Result<(Vec<GaussianDensity>, Vec<BPMessage>)> {
    round(beliefs, inbox, factors, 0.0)
}

/// Circular BP round: the recipient's own message enters `p^g` with exponent `1 − α`.
pub fn circular_bp_round(
    beliefs: &[GaussianDensity],
    inbox: &[BPMessage],
    factors: &[EdgeFactor],
    config: CircularBPConfig,
) -> Result<(Vec<GaussianDensity>, Vec<BPMessage>)> {
    CircularBPConfig::new(config.alpha)?;
    round(beliefs, inbox, factors, 1.0 - config.alpha)
}

fn round(
    beliefs: &[GaussianDensity],
    inbox: &[BPMessage],
    factors: &[EdgeFactor],
    reverse_weight: f64,
) -> Result<(Vec<GaussianDensity>, Vec<BPMessage>)> {
    let n = beliefs.len();
    for (i, b) in beliefs.iter().enumerate() {
        if b.vars().len() != 1 {
            return Err(Error::layout(format!("belief of agent {i} must be over its own variable only")));
        }
    }
    let mut incident: Vec<Vec<&EdgeFactor>> = vec![Vec::new(); n];
    for f in factors {
        if f.b >= n {
            return Err(Error::layout(format!("edge ({}, {}) references an unknown agent", f.a, f.b)));
        }
        incident[f.a].push(f);
        incident[f.b].push(f);
    }
    let mut outbox = Vec::with_capacity(2 * factors.len());
    let mut next = Vec::with_capacity(n);
    for i in 0..n {
        let own = &beliefs[i];
        let incoming = incident[i]
            .iter()
            .map(|f| lookup(inbox, f.other(i), i))
            .collect::<Result<Vec<_>>>()?;
        for (f, m) in incident[i].iter().zip(&incoming) {
            if m.info.nrows() != own.dim() || m.info_vector.len() != own.dim() {
                return Err(Error::layout(format!("message {}→{i} has the wrong dimension", m.from)));
            }
            if f.info.nrows() != own.dim() {
                return Err(Error::layout("edge factor dimension differs from belief dimension"));
            }
        }
        for (e, f) in incident[i].iter().enumerate() {
            let j = f.other(i);
            let mut og = own.info_matrix().clone();
            let mut eg = own.info_vector().clone();
            for (k, m) in incoming.iter().enumerate() {
                if k == e {
                    if reverse_weight != 0.0 {
                        og += &m.info * reverse_weight;
                        eg += &m.info_vector * reverse_weight;
                    }
                } else {
                    og += &m.info;
                    eg += &m.info_vector;
                }
            }
            outbox.push(message(i, j, &og, &eg, f)?);
        }
        let mut info = own.info_matrix().clone();
        let mut eta = own.info_vector().clone();
        for m in &incoming {
            info += &m.info;
            eta += &m.info_vector;
        }
        next.push(GaussianDensity::from_algebra(own.vars().to_vec(), info, eta)?);
    }
    Ok((next, outbox))
}

fn message(i: usize, j: usize, og: &DMatrix<f64>, eg: &DVector<f64>, f: &EdgeFactor) -> Result<BPMessage> {
    let oe = &f.info;
    let sum = crate::density::symmetrize(og + oe);
    let chol = Cholesky::new(sum).ok_or_else(|| Error::MessageDegeneracy {
        from: i,
        to: j,
        reason: "Ω^g + Ω_e is not positive definite".into(),
    })?;
    let info = crate::density::symmetrize(oe - oe * chol.solve(oe));
    let min = info.clone().symmetric_eigenvalues().min();
    let scale = oe.amax();
    if !min.is_finite() || min < -1e-12 * scale {
        return Err(Error::MessageDegeneracy { from: i, to: j, reason: format!("message information eigenvalue {min:e}") });
    }
    let info_vector = &info * f.shift(i) + oe * chol.solve(eg);
    if info_vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::MessageDegeneracy { from: i, to: j, reason: "non-finite message".into() });
    }
    Ok(BPMessage { from: i, to: j, info, info_vector })
}
