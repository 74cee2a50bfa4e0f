use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{Bounds, FilterConfig, Prior};
use super::signals::{update_confidence, ConfidenceState, Observation};
use crate::body_models::{local_ellipsoid, FeasibilityOracle};
use crate::error::{Error, Result};
use crate::intent_ds::{eval_pos, eval_rot, PosDsParams, RotDsParams};
use crate::rotmath::{exp_map, integrate, skew, UnitQuaternion};
use crate::types::Pose;

fn normal3(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

fn apply_mask(v: Vector3<f64>, mask: &[bool; 3]) -> Vector3<f64> {
    Vector3::new(
        if mask[0] { v.x } else { 0.0 },
        if mask[1] { v.y } else { 0.0 },
        if mask[2] { v.z } else { 0.0 },
    )
}

fn check_spd(m: &Matrix3<f64>) -> Result<()> {
    let sym = (m - m.transpose()).amax() <= 1e-9 * m.amax().max(1.0);
    if !sym || !m.iter().all(|x| x.is_finite()) || m.cholesky().is_none() {
        return Err(Error::NotSpd);
    }
    Ok(())
}

/// Zero-dynamics prediction for the position filter.
///
/// Each particle takes a random step scaled by `(1 - c)·σ(c)`: isotropic on
/// the dynamics diagonal, and shaped by the local manipulability ellipsoid on
/// the attractor.
pub fn predict_pos(
    particles: &mut [PosDsParams],
    conf: &ConfidenceState,
    e_m: &Matrix3<f64>,
    hand: &Vector3<f64>,
    cfg: &FilterConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    check_spd(e_m)?;
    let scale = (1.0 - conf.c) * cfg.eta6.std(conf.c);
    if scale == 0.0 {
        return Ok(());
    }
    for p in particles.iter_mut() {
        p.a += apply_mask(normal3(rng) * scale, &cfg.pos_mask);
        let local = local_ellipsoid(e_m, &p.attractor, hand, cfg.eta5);
        let l = local.cholesky().ok_or(Error::NotSpd)?.l();
        p.attractor += apply_mask(l * normal3(rng) * scale, &cfg.pos_mask);
    }
    Ok(())
}

/// Zero-dynamics prediction for the rotation filter. The attractor is moved
/// along the group with `integrate(q*, Z, 1)`.
pub fn predict_rot(
    particles: &mut [RotDsParams],
    conf: &ConfidenceState,
    cfg: &FilterConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    let k = 1.0 - conf.c;
    let sa = k * cfg.eta7.std(conf.c);
    let sq = k * cfg.eta8.std(conf.c);
    if sa == 0.0 && sq == 0.0 {
        return Ok(());
    }
    for p in particles.iter_mut() {
        p.a += apply_mask(normal3(rng) * sa, &cfg.rot_mask);
        let z = apply_mask(normal3(rng) * sq, &cfg.rot_mask);
        p.attractor = integrate(&p.attractor, &z, 1.0)?;
    }
    Ok(())
}

/// Observation log-likelihood of a position particle:
/// `-η₁‖ẋ - Â(x - p̂*)‖² - η₂‖ẍ - Â ẋ‖²`.
pub fn log_weight_pos(p: &PosDsParams, obs: &Observation, cfg: &FilterConfig) -> f64 {
    let v_hat = eval_pos(p, &obs.pose.p);
    let a_hat = p.a.component_mul(&obs.v_lin);
    -cfg.eta1 * (obs.v_lin - v_hat).norm_squared() - cfg.eta2 * (obs.a_lin - a_hat).norm_squared()
}

pub fn weigh_pos(p: &PosDsParams, obs: &Observation, cfg: &FilterConfig) -> f64 {
    log_weight_pos(p, obs, cfg).exp()
}

/// Predicted angular acceleration `Â_o d/dt vec(q ⊗ q̄*)` for a measured `ω`.
///
/// `d/dt vec(q ⊗ q̄*) = ½[u* uᵀ + (s* I + S(u*))(s I - S(u))] ω`, with `q*`
/// taken on the hemisphere of `q` so the result is the derivative of
/// [`eval_rot`].
pub fn alpha_hat(p: &RotDsParams, q: &UnitQuaternion, omega: &Vector3<f64>) -> Vector3<f64> {
    let (mut ss, mut us) = (p.attractor.s(), *p.attractor.u());
    if p.attractor.dot(q) < 0.0 {
        ss = -ss;
        us = -us;
    }
    let (s, u) = (q.s(), q.u());
    let jac = us * u.transpose()
        + (Matrix3::identity() * ss + skew(&us)) * (Matrix3::identity() * s - skew(u));
    p.a.component_mul(&(0.5 * jac * omega))
}

pub fn log_weight_rot(p: &RotDsParams, obs: &Observation, cfg: &FilterConfig) -> f64 {
    let w_hat = eval_rot(p, &obs.pose.q);
    let a_hat = alpha_hat(p, &obs.pose.q, &obs.omega);
    -cfg.eta3 * (obs.omega - w_hat).norm_squared() - cfg.eta4 * (obs.alpha - a_hat).norm_squared()
}

pub fn weigh_rot(p: &RotDsParams, obs: &Observation, cfg: &FilterConfig) -> f64 {
    log_weight_rot(p, obs, cfg).exp()
}

/// Zeroes (sets log-weight to -∞) every particle whose dynamics leave the
/// bounds, and every index pair whose goal pose `[p̂*, q̂*]` is unreachable.
/// Returns the number of pairs rejected by the oracle.
pub fn trim(
    pos: &[PosDsParams],
    pos_logw: &mut [f64],
    rot: &[RotDsParams],
    rot_logw: &mut [f64],
    oracle: &dyn FeasibilityOracle,
    cfg: &FilterConfig,
) -> usize {
    let mut infeasible = 0;
    for i in 0..pos.len() {
        if !cfg.a_bounds_pos.contains(&pos[i].a) {
            pos_logw[i] = f64::NEG_INFINITY;
        }
        if !cfg.a_bounds_rot.contains(&rot[i].a) {
            rot_logw[i] = f64::NEG_INFINITY;
        }
        if pos_logw[i] == f64::NEG_INFINITY && rot_logw[i] == f64::NEG_INFINITY {
            continue;
        }
        if !oracle.feasible(&Pose::new(pos[i].attractor, rot[i].attractor)) {
            pos_logw[i] = f64::NEG_INFINITY;
            rot_logw[i] = f64::NEG_INFINITY;
            infeasible += 1;
        }
    }
    infeasible
}

/// Shifts log-weights so they log-sum-exp to zero and returns the linear
/// weights. All-zero weights are a divergence.
pub fn normalize(logw: &mut [f64]) -> Result<Vec<f64>> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return Err(Error::EstimatorDiverged);
    }
    let sum: f64 = logw.iter().map(|l| (l - max).exp()).sum();
    let shift = max + sum.ln();
    for l in logw.iter_mut() {
        *l -= shift;
    }
    Ok(logw.iter().map(|l| l.exp()).collect())
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        1.0 / s2
    } else {
        0.0
    }
}

/// Systematic resampling: indices drawn with one uniform offset and a stride of 1/N.
pub fn systematic_indices(weights: &[f64], rng: &mut impl Rng) -> Result<Vec<usize>> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    if n == 0 || !(total > 0.0) {
        return Err(Error::EstimatorDiverged);
    }
    let step = 1.0 / n as f64;
    let mut u = rng.gen::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    let mut cum = weights[0] / total;
    for _ in 0..n {
        while u > cum && i + 1 < n {
            i += 1;
            cum += weights[i] / total;
        }
        out.push(i);
        u += step;
    }
    Ok(out)
}

/// Resamples particles; the returned set carries uniform weights.
pub fn resample<T: Clone>(particles: &[T], weights: &[f64], rng: &mut impl Rng) -> Result<Vec<T>> {
    Ok(systematic_indices(weights, rng)?
        .into_iter()
        .map(|i| particles[i].clone())
        .collect())
}

/// Weighted mean of the dynamics diagonals and attractors.
pub fn estimate_pos(particles: &[PosDsParams], weights: &[f64]) -> PosDsParams {
    let total: f64 = weights.iter().sum();
    let mut a = Vector3::zeros();
    let mut x = Vector3::zeros();
    for (p, w) in particles.iter().zip(weights) {
        a += p.a * *w;
        x += p.attractor * *w;
    }
    PosDsParams::new(a / total, x / total)
}

/// Weighted mean; quaternions are sign-aligned to the heaviest particle,
/// averaged coordinate-wise and renormalized.
pub fn estimate_rot(particles: &[RotDsParams], weights: &[f64]) -> RotDsParams {
    let total: f64 = weights.iter().sum();
    let best = weights
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, w)| if *w > acc.1 { (i, *w) } else { acc })
        .0;
    let reference = particles[best].attractor.coords();
    let mut a = Vector3::zeros();
    let mut q = Vector4::zeros();
    for (p, w) in particles.iter().zip(weights) {
        a += p.a * *w;
        let c = p.attractor.coords();
        q += if c.dot(&reference) < 0.0 { -c } else { c } * *w;
    }
    let attractor = UnitQuaternion::new(q[0], Vector3::new(q[1], q[2], q[3]))
        .unwrap_or(particles[best].attractor);
    RotDsParams::new(a / total, attractor)
}

fn uniform_in(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn sample_a(rng: &mut impl Rng, b: &Bounds) -> Vector3<f64> {
    Vector3::new(
        uniform_in(rng, b.low, b.high),
        uniform_in(rng, b.low, b.high),
        uniform_in(rng, b.low, b.high),
    )
}

pub fn sample_prior_pos(prior: &Prior, bounds: &Bounds, rng: &mut impl Rng) -> PosDsParams {
    let a = sample_a(rng, bounds);
    let x = Vector3::new(
        uniform_in(rng, prior.pos_lo.x, prior.pos_hi.x),
        uniform_in(rng, prior.pos_lo.y, prior.pos_hi.y),
        uniform_in(rng, prior.pos_lo.z, prior.pos_hi.z),
    );
    PosDsParams::new(a, x)
}

pub fn sample_prior_rot(prior: &Prior, bounds: &Bounds, rng: &mut impl Rng) -> RotDsParams {
    let a = sample_a(rng, bounds);
    let q = if prior.uniform_rotation() {
        loop {
            let c: Vector4<f64> = Vector4::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            if let Ok(q) = UnitQuaternion::new(c[0], Vector3::new(c[1], c[2], c[3])) {
                break q;
            }
        }
    } else {
        let s = prior.rot_span;
        let r = Vector3::new(
            uniform_in(rng, -s.x, s.x),
            uniform_in(rng, -s.y, s.y),
            uniform_in(rng, -s.z, s.z),
        );
        // exp_map halves its argument, so dt = 1 turns r into a rotation by ‖r‖.
        exp_map(&r, 1.0).map(|e| e * prior.rot_center).unwrap_or(prior.rot_center)
    };
    RotDsParams::new(a, q)
}

/// Immutable estimate published to the control loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSnapshot {
    pub step: u64,
    pub pos: PosDsParams,
    pub rot: RotDsParams,
    pub conf_p: ConfidenceState,
    pub conf_o: ConfidenceState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle<T> {
    pub state: T,
    pub weight: f64,
}

/// Full filter state for logging and the live service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterDump {
    pub step: u64,
    pub estimate: EstimateSnapshot,
    pub pos_particles: Vec<Particle<PosDsParams>>,
    pub rot_particles: Vec<Particle<RotDsParams>>,
}

/// Result of one filter step beyond the estimate itself.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub infeasible: usize,
    pub ess_pos: f64,
    pub ess_rot: f64,
    pub resampled_pos: bool,
    pub resampled_rot: bool,
}

/// The paired position and rotation particle filters.
#[derive(Clone, Debug)]
pub struct DualFilter {
    cfg: FilterConfig,
    pos: Vec<PosDsParams>,
    pos_logw: Vec<f64>,
    rot: Vec<RotDsParams>,
    rot_logw: Vec<f64>,
    conf_p: ConfidenceState,
    conf_o: ConfidenceState,
    estimate_p: PosDsParams,
    estimate_o: RotDsParams,
    rng: ChaCha8Rng,
    step: u64,
    last: StepStats,
    audit: bool,
    survivors: Vec<Pose>,
}

impl DualFilter {
    pub fn new(cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mid_p = cfg.a_bounds_pos.mid();
        let mid_o = cfg.a_bounds_rot.mid();
        let mut f = Self {
            pos: Vec::new(),
            pos_logw: Vec::new(),
            rot: Vec::new(),
            rot_logw: Vec::new(),
            conf_p: ConfidenceState::new(cfg.d_p),
            conf_o: ConfidenceState::new(cfg.d_o),
            estimate_p: PosDsParams::new(
                Vector3::repeat(mid_p),
                (cfg.prior.pos_lo + cfg.prior.pos_hi) * 0.5,
            ),
            estimate_o: RotDsParams::new(Vector3::repeat(mid_o), cfg.prior.rot_center),
            rng,
            step: 0,
            last: StepStats::default(),
            audit: false,
            survivors: Vec::new(),
            cfg,
        };
        f.reinitialize();
        Ok(f)
    }

    /// Redraws every particle from the prior and resets confidence to zero.
    pub fn reinitialize(&mut self) {
        let n = self.cfg.n_particles;
        let (prior, bp, bo) = (&self.cfg.prior, self.cfg.a_bounds_pos, self.cfg.a_bounds_rot);
        self.pos = (0..n).map(|_| sample_prior_pos(prior, &bp, &mut self.rng)).collect();
        self.rot = (0..n).map(|_| sample_prior_rot(prior, &bo, &mut self.rng)).collect();
        let l = -(n as f64).ln();
        self.pos_logw = vec![l; n];
        self.rot_logw = vec![l; n];
        self.conf_p = ConfidenceState::new(self.cfg.d_p);
        self.conf_o = ConfidenceState::new(self.cfg.d_o);
        let w = vec![1.0 / n as f64; n];
        self.estimate_p = estimate_pos(&self.pos, &w);
        self.estimate_o = estimate_rot(&self.rot, &w);
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    /// predict → weigh → trim → normalize → estimate → confidence → resample.
    pub fn step(
        &mut self,
        obs: &Observation,
        e_m: &Matrix3<f64>,
        oracle: &dyn FeasibilityOracle,
        dt: f64,
    ) -> Result<EstimateSnapshot> {
        if !(dt > 0.0) {
            return Err(Error::NonPositiveDt(dt));
        }
        if !obs.is_finite() {
            return Err(Error::SimFault("non-finite observation".into()));
        }
        let cfg = &self.cfg;
        predict_pos(&mut self.pos, &self.conf_p, e_m, &obs.human_hand, cfg, &mut self.rng)?;
        predict_rot(&mut self.rot, &self.conf_o, cfg, &mut self.rng)?;

        for (p, l) in self.pos.iter().zip(self.pos_logw.iter_mut()) {
            *l += log_weight_pos(p, obs, cfg);
        }
        for (p, l) in self.rot.iter().zip(self.rot_logw.iter_mut()) {
            *l += log_weight_rot(p, obs, cfg);
        }
        let infeasible = trim(
            &self.pos,
            &mut self.pos_logw,
            &self.rot,
            &mut self.rot_logw,
            oracle,
            cfg,
        );
        if self.audit {
            self.survivors.clear();
            for i in 0..self.pos.len() {
                if self.pos_logw[i] > f64::NEG_INFINITY || self.rot_logw[i] > f64::NEG_INFINITY {
                    self.survivors
                        .push(Pose::new(self.pos[i].attractor, self.rot[i].attractor));
                }
            }
        }
        let wp = normalize(&mut self.pos_logw)?;
        let wo = normalize(&mut self.rot_logw)?;

        self.estimate_p = estimate_pos(&self.pos, &wp);
        self.estimate_o = estimate_rot(&self.rot, &wo);

        let v_est = eval_pos(&self.estimate_p, &obs.pose.p);
        let w_est = eval_rot(&self.estimate_o, &obs.pose.q);
        self.conf_p = update_confidence(&self.conf_p, &obs.v_lin, &v_est, dt);
        self.conf_o = update_confidence(&self.conf_o, &obs.omega, &w_est, dt);

        let n = cfg.n_particles as f64;
        let threshold = cfg.resample_fraction * n;
        let ess_pos = effective_sample_size(&wp);
        let ess_rot = effective_sample_size(&wo);
        let resampled_pos = ess_pos < threshold;
        let resampled_rot = ess_rot < threshold;
        let uniform = -n.ln();
        if resampled_pos {
            self.pos = resample(&self.pos, &wp, &mut self.rng)?;
            self.pos_logw.iter_mut().for_each(|l| *l = uniform);
        }
        if resampled_rot {
            self.rot = resample(&self.rot, &wo, &mut self.rng)?;
            self.rot_logw.iter_mut().for_each(|l| *l = uniform);
        }
        self.step += 1;
        self.last = StepStats {
            infeasible,
            ess_pos,
            ess_rot,
            resampled_pos,
            resampled_rot,
        };
        Ok(self.snapshot())
    }

    pub fn snapshot(&self) -> EstimateSnapshot {
        EstimateSnapshot {
            step: self.step,
            pos: self.estimate_p,
            rot: self.estimate_o,
            conf_p: self.conf_p,
            conf_o: self.conf_o,
        }
    }

    pub fn last_stats(&self) -> StepStats {
        self.last
    }

    pub fn pos_particles(&self) -> &[PosDsParams] {
        &self.pos
    }

    pub fn rot_particles(&self) -> &[RotDsParams] {
        &self.rot
    }

    pub fn pos_weights(&self) -> Vec<f64> {
        self.pos_logw.iter().map(|l| l.exp()).collect()
    }

    pub fn rot_weights(&self) -> Vec<f64> {
        self.rot_logw.iter().map(|l| l.exp()).collect()
    }

    /// Index pairs with non-zero weight in either filter.
    pub fn surviving_pairs(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.pos.len()).filter(|i| {
            self.pos_logw[*i] > f64::NEG_INFINITY || self.rot_logw[*i] > f64::NEG_INFINITY
        })
    }

    /// Keep the goal of every pair that survived trimming in the last step.
    pub fn set_audit(&mut self, on: bool) {
        self.audit = on;
        self.survivors.clear();
    }

    /// Goals that passed the feasibility oracle in the last audited step.
    pub fn last_survivors(&self) -> &[Pose] {
        &self.survivors
    }

    /// Changes the confidence ascent rates without touching the particles.
    pub fn set_ascent_rates(&mut self, d_p: f64, d_o: f64) -> Result<()> {
        if !(d_p >= 0.0 && d_o >= 0.0 && d_p.is_finite() && d_o.is_finite()) {
            return Err(Error::Config("ascent rates must be non-negative".into()));
        }
        self.cfg.d_p = d_p;
        self.cfg.d_o = d_o;
        self.conf_p.d = d_p;
        self.conf_o.d = d_o;
        Ok(())
    }

    /// Overrides both confidences, e.g. to hold them fixed in experiments.
    pub fn set_confidence(&mut self, c_p: f64, c_o: f64) {
        self.conf_p = self.conf_p.with_value(c_p);
        self.conf_o = self.conf_o.with_value(c_o);
    }

    pub fn dump(&self) -> FilterDump {
        let wp = self.pos_weights();
        let wo = self.rot_weights();
        FilterDump {
            step: self.step,
            estimate: self.snapshot(),
            pos_particles: self
                .pos
                .iter()
                .zip(wp)
                .map(|(s, w)| Particle { state: *s, weight: w })
                .collect(),
            rot_particles: self
                .rot
                .iter()
                .zip(wo)
                .map(|(s, w)| Particle { state: *s, weight: w })
                .collect(),
        }
    }
}
