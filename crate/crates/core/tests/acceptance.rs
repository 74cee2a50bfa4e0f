//! Acceptance suite. Runs as a plain binary so every criterion prints its
//! verdict line even when the run passes.

mod common;

use std::path::Path;
use std::time::Instant;

use comanip_core::analysis::{apparent_damping, apparent_stiffness, energy_terms, EnergyLedger};
use comanip_core::control::{desired_wrench, u_ds, ImpedanceGains};
use comanip_core::estimator::{update_confidence, ConfidenceState, FilterConfig};
use comanip_core::experiment::{plan_trials, run_batch, summary_json, trials_csv, write_outputs, ExperimentConfig};
use comanip_core::intent_ds::{eval_pos, eval_rot, lyapunov_pos, lyapunov_rot, PosDsParams, RotDsParams};
use comanip_core::rotmath::{exp_map, integrate, log_map, omega_between, propagate, skew, UnitQuaternion};
use comanip_core::simworld::{run_episode_with, step, ControllerKind, Episode, Locks, Scenario, SimState, SimWorld};
use comanip_core::{Twist, Wrench};
use nalgebra::{Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn random_quat(rng: &mut impl Rng) -> UnitQuaternion {
    loop {
        let c = Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let n = c.norm();
        if n > 0.1 && n <= 1.0 {
            return UnitQuaternion::new(c[0], Vector3::new(c[1], c[2], c[3])).unwrap();
        }
    }
}

fn qdist(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    (a.coords() - b.coords()).norm()
}

/// Quaternion calculus identities on 10⁴ random samples.
fn criterion_1() -> Verdict {
    const TOL: f64 = 1e-9;
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut track = |x: f64| worst = worst.max(x);
    for _ in 0..10_000 {
        let (q1, q2, q3) = (random_quat(&mut rng), random_quat(&mut rng), random_quat(&mut rng));
        // exp ∘ log and log ∘ exp, with log norms up to π/2 on the canonical hemisphere.
        track(qdist(&exp_map(&(2.0 * log_map(&q1).0), 1.0).unwrap(), &q1));
        let v = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize() * rng.gen_range(0.0..1.5);
        track((log_map(&exp_map(&(2.0 * v), 1.0).unwrap()).0 - v).norm());
        // Product identities.
        track(qdist(&((q1 * q2) * q3), &(q1 * (q2 * q3))));
        track(qdist(&(q1 * q1.conj()), &UnitQuaternion::identity()));
        track(qdist(&(q1 * q2).conj(), &(q2.conj() * q1.conj())));
        track(((q1 * q2).coords().norm() - 1.0).abs());
        track(((q1 * q2).to_rotation_matrix() - q1.to_rotation_matrix() * q2.to_rotation_matrix()).norm());
        // Difference product in partitioned form.
        let d = q1 * q2.conj();
        let (s1, u1, s2, u2) = (q1.s(), *q1.u(), q2.s(), *q2.u());
        let sd = s1 * s2 + u1.dot(&u2);
        let ud = -s1 * u2 + s2 * u1 - skew(&u1) * u2;
        let sign = if sd < 0.0 { -1.0 } else { 1.0 };
        track((d.s() - sign * sd).abs());
        track((d.u() - sign * ud).norm());
        // Swapping the operands keeps the scalar part, negates the vector
        // part and the logarithm.
        let e = q2 * q1.conj();
        track((d.s() - e.s()).abs());
        track((d.u() + e.u()).norm());
        track((d.u().norm() - e.u().norm()).abs());
        track((log_map(&d).0 + log_map(&e).0).norm());
        // Propagation is the derivative of the integration map.
        let w = Vector3::from_fn(|_, _| rng.gen_range(-2.0..2.0));
        let h = 1e-5;
        if q1.s() > 1e-3 {
            let fd = (integrate(&q1, &w, h).unwrap().coords() - integrate(&q1, &w, -h).unwrap().coords()) / (2.0 * h);
            track((fd - propagate(&q1, &w)).norm());
        }
        // The angular velocity between two orientations integrates back.
        let dt = rng.gen_range(0.01..1.0);
        let w2 = omega_between(&q1, &q2, dt).unwrap();
        track(qdist(&integrate(&q2, &w2, dt).unwrap(), &q1));
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst < TOL && secs < 5.0,
        format!("10000 samples, worst residual {worst:.2e} (tol 1e-9), {secs:.2} s (limit 5 s)"),
    )
}

/// DS rollouts: Lyapunov monotone and convergence within 30 s at dt = 1e-3.
fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dt = 1e-3;
    let steps = 30_000;
    let mut failures = 0;
    let (mut worst_rot, mut worst_pos) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let a = Vector3::from_fn(|_, _| rng.gen_range(-0.9..=-0.6));
        let ds = RotDsParams::new(a, random_quat(&mut rng));
        let mut q = random_quat(&mut rng);
        let mut v = lyapunov_rot(&ds, &q);
        let mut mono = true;
        for _ in 0..steps {
            q = integrate(&q, &eval_rot(&ds, &q), dt).unwrap();
            let v1 = lyapunov_rot(&ds, &q);
            mono &= v1 <= v + 1e-15;
            v = v1;
        }
        let err = log_map(&(ds.attractor * q.conj())).norm();
        worst_rot = worst_rot.max(err);

        let ap = Vector3::from_fn(|_, _| rng.gen_range(-0.6..=-0.4));
        let dp = PosDsParams::new(ap, Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
        let mut x = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let mut vp = lyapunov_pos(&dp, &x);
        for _ in 0..steps {
            x += dt * eval_pos(&dp, &x);
            let v1 = lyapunov_pos(&dp, &x);
            mono &= v1 <= vp + 1e-15;
            vp = v1;
        }
        let perr = (x - dp.attractor).norm();
        worst_pos = worst_pos.max(perr);
        if !mono || err >= 1e-3 || perr >= 1e-3 {
            failures += 1;
        }
    }
    verdict(
        failures == 0,
        format!("100 rollouts, {failures} failures, worst final log error {worst_rot:.2e}, position {worst_pos:.2e} (tol 1e-3)"),
    )
}

/// Estimator recovery over 50 seeded hidden intents.
fn criterion_3() -> Verdict {
    let t0 = Instant::now();
    let mut ok = 0;
    let mut errs = Vec::new();
    for seed in 0..50 {
        let r = common::recover(seed, FilterConfig::default(), 200, 0.01);
        if r.pos_err < 0.05 && r.rot_err_deg < 10.0 {
            ok += 1;
        }
        errs.push((r.pos_err, r.rot_err_deg));
    }
    let max_p = errs.iter().map(|e| e.0).fold(0.0, f64::max);
    let max_r = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    verdict(
        ok * 100 >= 95 * 50,
        format!(
            "{ok}/50 within 0.05 m and 10 deg after 200 steps (need 48), worst {max_p:.3} m / {max_r:.2} deg, {:.1} s",
            t0.elapsed().as_secs_f64()
        ),
    )
}

/// Audited closed-loop logs: published estimates stable, survivors feasible.
fn criterion_4() -> Verdict {
    let cfg = ExperimentConfig::new(6, 4);
    let plans = plan_trials(&cfg).unwrap();
    let (mut estimates, mut gas_bad, mut survivors, mut infeasible, mut ticks_bad) = (0, 0, 0, 0, 0);
    for plan in &plans {
        let mut sc = Scenario::reaching(
            cfg.start,
            PosDsParams::new(plan.a_pos, Vector3::new(plan.goal.x, plan.goal.y, cfg.goal_box.z)),
            RotDsParams::new(plan.a_rot, UnitQuaternion::from_rpy(plan.goal.roll_deg.to_radians(), 0.0, 0.0)),
        );
        sc.seed = plan.seed;
        let tr = run_episode_with(&sc, true).unwrap();
        for e in &tr.estimates {
            estimates += 1;
            gas_bad += (!e.gas_ok) as usize;
            survivors += e.survivors.unwrap_or(0);
            infeasible += e.survivors_infeasible.unwrap_or(usize::MAX);
        }
        ticks_bad += tr
            .ticks
            .iter()
            .filter(|r| !(r.est_a_p.iter().all(|a| *a < 0.0) && r.est_a_o.iter().all(|a| *a < 0.0)))
            .count();
    }
    verdict(
        gas_bad == 0 && infeasible == 0 && ticks_bad == 0 && estimates > 0,
        format!(
            "{estimates} estimates over {} episodes: {gas_bad} unstable, {infeasible} of {survivors} surviving goals infeasible",
            plans.len()
        ),
    )
}

/// Replays the confidence integrator over a velocity history.
fn replay_confidence(d: f64, v_obs: &[Vector3<f64>], v_est: &[Vector3<f64>], dt: f64) -> ConfidenceState {
    let mut c = ConfidenceState::new(d);
    for (v, ve) in v_obs.iter().zip(v_est) {
        c = update_confidence(&c, v, ve, dt);
    }
    c
}

fn rel_err(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Apparent stiffness and damping against central differences of the
/// closed-loop residual.
fn criterion_5() -> Verdict {
    let gains = ImpedanceGains::default();
    let lambda = gains.lambda_p;
    let cfg = ExperimentConfig::new(8, 5);
    let plans = plan_trials(&cfg).unwrap();
    let mut states = 0;
    let (mut worst_k, mut worst_d) = (0.0f64, 0.0f64);
    let mut replay_ok = true;
    for plan in &plans {
        if states >= 20 {
            break;
        }
        let mut sc = Scenario::reaching(
            cfg.start,
            PosDsParams::new(plan.a_pos, Vector3::new(plan.goal.x, plan.goal.y, cfg.goal_box.z)),
            RotDsParams::new(plan.a_rot, UnitQuaternion::from_rpy(plan.goal.roll_deg.to_radians(), 0.0, 0.0)),
        );
        sc.seed = plan.seed;
        let tr = run_episode_with(&sc, false).unwrap();
        let dt = sc.sim.dt_ctrl * sc.sim.est_every as f64;
        let v_obs: Vec<Vector3<f64>> = tr.estimates.iter().map(|e| e.v_obs).collect();
        let v_est: Vec<Vector3<f64>> = tr.estimates.iter().map(|e| e.v_est).collect();
        let d = sc.filter.d_p;
        let mut taken = 0;
        for k in (0..v_obs.len()).rev() {
            let snap = tr.estimates[k].estimate;
            let conf = snap.conf_p;
            if !(conf.c > 0.05 && conf.c < 0.95) || conf.grad.norm() < 1e-6 || taken >= 3 || states >= 20 {
                continue;
            }
            let replay = replay_confidence(d, &v_obs[..=k], &v_est[..=k], dt);
            replay_ok &= replay == conf;
            let v = v_obs[k];
            let h = 1e-6;
            let mut fd = Matrix3::zeros();
            for j in 0..3 {
                let force = |sgn: f64| {
                    let shifted: Vec<Vector3<f64>> =
                        v_obs[..=k].iter().map(|x| x + sgn * h * Vector3::ith(j, 1.0)).collect();
                    let c = replay_confidence(d, &shifted, &v_est[..=k], dt).c;
                    (lambda * c).component_mul(&shifted[k])
                };
                let col = (force(1.0) - force(-1.0)) / (2.0 * h);
                fd.set_column(j, &col);
            }
            worst_d = worst_d.max(rel_err(&fd, &apparent_damping(conf.c, &lambda, &v, &conf.grad)));

            // Stiffness: residual wrench at fixed velocity and acceleration.
            let x = tr.ticks[tr.estimates[k].tick as usize].x;
            let residual = |p: Vector3<f64>| {
                let v_hat = Twist::new(eval_pos(&snap.pos, &p), Vector3::zeros());
                -u_ds(&Twist::new(v, Vector3::zeros()), &v_hat, conf.c, 0.0, &gains).force
            };
            let mut fk = Matrix3::zeros();
            for j in 0..3 {
                let e = Vector3::ith(j, 1e-6);
                fk.set_column(j, &((residual(x.p + e) - residual(x.p - e)) / 2e-6));
            }
            worst_k = worst_k.max(rel_err(&fk, &apparent_stiffness(conf.c, &lambda, &snap.pos.a)));
            taken += 1;
            states += 1;
        }
    }
    verdict(
        states == 20 && replay_ok && worst_d < 0.05 && worst_k < 0.05,
        format!(
            "{states} states, worst relative error damping {worst_d:.2e}, stiffness {worst_k:.2e} (tol 5%), confidence replay exact: {replay_ok}"
        ),
    )
}

/// Plant without locks or human input, for the energy checks.
fn passive_rig() -> (SimState, SimWorld, Matrix3<f64>) {
    let mut sc = Scenario::reaching(
        Scenario::default_start(),
        PosDsParams::new(Vector3::repeat(-0.5), Vector3::new(0.9, 0.1, 0.3)),
        RotDsParams::new(Vector3::repeat(-0.75), UnitQuaternion::identity()),
    );
    sc.locks = Locks::none();
    // The ledger lives in task space; the shadow arm only has to follow.
    sc.sim.shadow_tol_pos = 1.0;
    sc.sim.shadow_tol_rot = 1.0;
    let ep = Episode::new(sc).unwrap();
    let m3 = ep.world().dynamics.mass().fixed_view::<3, 3>(0, 0).into_owned();
    (ep.state().clone(), ep.world().clone(), m3)
}

fn control_step(
    s: &SimState,
    w: &SimWorld,
    pos: &PosDsParams,
    rot: &RotDsParams,
    c: f64,
    gains: &ImpedanceGains,
    dt: f64,
) -> SimState {
    let v_hat = Twist::new(eval_pos(pos, &s.x.p), eval_rot(rot, &s.x.q));
    let u = u_ds(&s.v, &v_hat, c, c, gains);
    let d = &w.dynamics;
    let u_r = desired_wrench(&u, &d.robot_gravity(), &d.object().gravity(), &d.grasp_t(&s.x)).unwrap();
    step(s, w, &u_r, &Wrench::zero(), dt).unwrap()
}

fn ledger(s: &SimState, m3: &Matrix3<f64>, pos: &PosDsParams, c: f64, c_dot: f64, gains: &ImpedanceGains) -> EnergyLedger {
    energy_terms(
        m3,
        &s.v.lin,
        &(s.x.p - pos.attractor),
        &Vector3::zeros(),
        c,
        c_dot,
        &gains.lambda_p,
        &pos.a,
    )
}

/// Passivity without human input, and the energy a confidence rise injects.
fn criterion_6() -> Verdict {
    let gains = ImpedanceGains::default();
    let (s0, world, m3) = passive_rig();
    let dt = 0.001;
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    // (a) c held at 0, at 1, or decreasing.
    let mut samples = 0;
    let mut violations = 0;
    let mut worst_balance = 0.0f64;
    for run in 0..12 {
        let pos = PosDsParams::new(
            Vector3::from_fn(|_, _| rng.gen_range(-0.6..=-0.4)),
            Vector3::new(rng.gen_range(0.7..0.95), rng.gen_range(-0.25..0.25), 0.3),
        );
        let rot = RotDsParams::new(Vector3::repeat(-0.75), UnitQuaternion::from_rpy(rng.gen_range(-0.5..0.5), 0.0, 0.0));
        let mut s = s0.clone();
        s.v = Twist::new(Vector3::from_fn(|_, _| rng.gen_range(-0.04..0.04)), Vector3::zeros());
        let schedule = |t: f64| -> (f64, f64) {
            match run % 3 {
                0 => (0.0, 0.0),
                1 => (1.0, 0.0),
                _ => ((1.0 - 0.3 * t).max(0.0), if t < 1.0 / 0.3 { -0.3 } else { 0.0 }),
            }
        };
        let mut hist = Vec::new();
        for k in 0..4000 {
            let (c, c_dot) = schedule(k as f64 * dt);
            let l = ledger(&s, &m3, &pos, c, c_dot, &gains);
            samples += 1;
            violations += (l.w_dot > 1e-12) as usize;
            hist.push(l);
            s = control_step(&s, &world, &pos, &rot, c, &gains, dt);
        }
        let integral: f64 = hist.windows(2).map(|p| 0.5 * (p[0].w_dot + p[1].w_dot) * dt).sum();
        let dw = hist.last().unwrap().w - hist[0].w;
        worst_balance = worst_balance.max((dw - integral).abs() / hist[0].w.max(1e-9));
    }

    // (b) 0 → 1 rise from rest at a displacement.
    let pos = PosDsParams::new(Vector3::repeat(-0.5), Vector3::new(0.95, 0.15, 0.3));
    let rot = RotDsParams::new(Vector3::repeat(-0.75), UnitQuaternion::identity());
    let mut s = s0.clone();
    let d_p = FilterConfig::default().d_p;
    let mut conf = ConfidenceState::new(d_p);
    let e0 = s.x.p - pos.attractor;
    let bound = 0.5 * e0.dot(&gains.lambda_p.component_mul(&pos.a).component_mul(&e0)).abs();
    let mut injected = 0.0;
    let mut prev_term = 0.0;
    let (mut last_active, mut t_sat) = (None, None);
    for k in 0..8000 {
        let t = k as f64 * dt;
        let v_hat = eval_pos(&pos, &s.x.p);
        let next = update_confidence(&conf, &s.v.lin, &v_hat, dt);
        let l = ledger(&s, &m3, &pos, conf.c, next.c_dot, &gains);
        let term = -0.5 * next.c_dot * l.e_p;
        if k > 0 {
            injected += 0.5 * (term + prev_term) * dt;
        }
        prev_term = term;
        if l.w_dot > 0.0 {
            last_active = Some(t);
        }
        if t_sat.is_none() && conf.c >= 1.0 {
            t_sat = Some(t);
        }
        s = control_step(&s, &world, &pos, &rot, conf.c, &gains, dt);
        conf = next;
    }
    let ratio = injected / bound;
    let window_ok = matches!((last_active, t_sat), (Some(a), Some(b)) if a < b);
    verdict(
        violations == 0 && worst_balance < 5e-3 && ratio <= 1.02 && window_ok,
        format!(
            "(a) {violations}/{samples} samples with W' > 0, ledger balance error {worst_balance:.1e}; \
             (b) injected {injected:.4} J vs bound {bound:.4} J (ratio {ratio:.3}, limit 1.02), \
             passivity lost until {:.2} s, confidence saturates at {:.2} s",
            last_active.unwrap_or(f64::NAN),
            t_sat.unwrap_or(f64::NAN)
        ),
    )
}

fn batch_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(20, 2024);
    cfg.name = "acceptance".into();
    cfg
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Batch mirror of the reaching study, and its determinism.
fn criteria_7_8() -> (Verdict, Verdict) {
    let cfg = batch_config();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let t0 = Instant::now();
    let first = run_batch(&cfg, Some(&dirs[0].path().join("logs"))).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    write_outputs(&first, dirs[0].path()).unwrap();
    let second = run_batch(&cfg, Some(&dirs[1].path().join("logs"))).unwrap();
    write_outputs(&second, dirs[1].path()).unwrap();

    let by = |k: ControllerKind| first.summary.methods.iter().find(|m| m.controller == k).unwrap();
    let (p, a) = (by(ControllerKind::Proposed), by(ControllerKind::Admittance));
    let c7 = verdict(
        p.completion_rate >= 0.95
            && p.lin_impulse.mean < a.lin_impulse.mean
            && p.completion_time.mean < a.completion_time.mean
            && secs < 600.0,
        format!(
            "proposed completes {}/{} ({} faults), impulse {:.2} vs {:.2} N s, time {:.2} vs {:.2} s (admittance completes {}/{}), batch {secs:.1} s",
            p.completed,
            p.n_trials,
            p.faults,
            p.lin_impulse.mean,
            a.lin_impulse.mean,
            p.completion_time.mean,
            a.completion_time.mean,
            a.completed,
            a.n_trials
        ),
    );

    let files = [read_dir_sorted(dirs[0].path()), read_dir_sorted(dirs[1].path())];
    let same = files[0] == files[1]
        && summary_json(&first.summary).unwrap() == summary_json(&second.summary).unwrap()
        && trials_csv(&first.trials) == trials_csv(&second.trials);
    let bytes: usize = files[0].iter().map(|f| f.1.len()).sum();
    let c8 = verdict(
        same && files[0].len() == 3 + 2 * cfg.n_trials,
        format!("{} files, {bytes} bytes, identical across reruns: {same}", files[0].len()),
    );
    (c7, c8)
}

fn main() {
    let mut results: Vec<(usize, Verdict)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
        (6, criterion_6()),
    ];
    let (c7, c8) = criteria_7_8();
    results.push((7, c7));
    results.push((8, c8));
    let mut failed = 0;
    for (n, v) in &results {
        println!("criterion {n}: {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += (!v.pass) as usize;
    }
    let completed = results.len() - failed;
    println!("acceptance: {completed}/{} criteria pass", results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
