//! End-to-end acceptance suite. Each test prints one `criterion N: PASS|FAIL`
//! line straight to stderr so the summary survives output capture.

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use kiras_core::ece::{ece_loss, ece_loss_and_grads, EceBatch, EceDims, EceNets, Sampling};
use kiras_core::imitation::{dtw_distance, ls_gan_loss, sil_reward_from_score, Discriminator, PremiumBuffer};
use kiras_core::keyframes::{keyframe_from_posture, ImitationFrame};
use kiras_core::numerics::{gradient_check, Activation, AdamConfig, DenseNet};
use kiras_core::ppo::{gae, log_prob, mix_advantages, omega_schedule, surrogate_loss, value_loss, GaussianPolicy, SurrogateBatch};
use kiras_core::sim::{ObsLayout, TerrainType};
use kiras_core::skills::skill_probs;
use kiras_core::trainer::checkpoint::Checkpoint;
use kiras_core::trainer::{Trainer, TrainConfig};
use ndarray::{concatenate, s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n}: {verdict} {name} ({detail})");
}

fn small_run_config(dir: &std::path::Path) -> TrainConfig {
    TrainConfig {
        t1: 5,
        t2: 10,
        num_envs: 8,
        horizon: 16,
        episode_steps: 60,
        premium_horizon: 20,
        discriminator_batch: 32,
        checkpoint_every: 5,
        out_dir: dir.to_string_lossy().into_owned(),
        ..TrainConfig::default()
    }
}

fn read_log(path: &std::path::Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[i].parse().unwrap()).collect()
}

fn oracle_dtw(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn go(i: usize, j: usize, a: &[Vec<f64>], b: &[Vec<f64>], memo: &mut HashMap<(usize, usize), f64>) -> f64 {
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let cost = a[i].iter().zip(&b[j]).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let v = if i == 0 && j == 0 {
            cost
        } else if i == 0 {
            cost + go(0, j - 1, a, b, memo)
        } else if j == 0 {
            cost + go(i - 1, 0, a, b, memo)
        } else {
            cost + go(i - 1, j, a, b, memo)
                .min(go(i, j - 1, a, b, memo))
                .min(go(i - 1, j - 1, a, b, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a.len() - 1, b.len() - 1, a, b, &mut HashMap::new())
}

#[test]
fn criterion_01_dtw_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let dim = rng.random_range(1..=6);
        let la = rng.random_range(1..=12);
        let lb = rng.random_range(1..=12);
        let mut seq = |l: usize| -> Vec<Vec<f64>> {
            (0..l).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
        };
        let a = seq(la);
        let b = seq(lb);
        worst = worst.max((dtw_distance(&a, &b).unwrap() - oracle_dtw(&a, &b)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && secs < 5.0;
    report(1, "DTW oracle", pass, &format!("max abs error {worst:e}, {secs:.2}s"));
    assert!(pass);
}

#[test]
fn criterion_02_gradient_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let adam = AdamConfig::default();
    let mut errors = Vec::new();

    let policy = GaussianPolicy::new(12, &[32, 32], 4, adam, &mut rng).unwrap();
    let obs = Array2::from_shape_fn((16, 12), |_| rng.random_range(-1.0..1.0));
    let actions = Array2::from_shape_fn((16, 4), |_| rng.random_range(-1.0..1.0));
    let means = policy.mean_batch(obs.view()).unwrap();
    let old: Vec<f64> = (0..16)
        .map(|i| log_prob(&means.row(i).to_vec(), &policy.log_std, &actions.row(i).to_vec()) + rng.random_range(-0.1..0.1))
        .collect();
    let adv: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let batch = SurrogateBatch {
        obs: obs.view(),
        actions: actions.view(),
        old_log_probs: &old,
        advantages: &adv,
    };
    let (_, g, gls) = surrogate_loss(&policy.actor.net, &policy.log_std, &batch, 0.2, 0.005).unwrap();
    let np = policy.actor.net.num_params();
    let mut flat = policy.actor.net.flat_params();
    flat.extend_from_slice(&policy.log_std);
    let mut analytic = g.flatten();
    analytic.extend(gls);
    let mut probe = policy.actor.net.clone();
    let e = gradient_check(
        &flat,
        &analytic,
        |x| {
            probe.set_flat_params(&x[..np]).unwrap();
            surrogate_loss(&probe, &x[np..], &batch, 0.2, 0.005).unwrap().0.loss
        },
        64,
        1e-5,
        &mut rng,
    );
    errors.push(("actor", e));

    for name in ["task critic", "imitation critic"] {
        let critic = DenseNet::new(&[20, 32, 32, 1], Activation::Elu, Activation::Linear, 1.0, &mut rng).unwrap();
        let x = Array2::from_shape_fn((24, 20), |_| rng.random_range(-1.0..1.0));
        let ret: Vec<f64> = (0..24).map(|_| rng.random_range(-3.0..3.0)).collect();
        let (_, g) = value_loss(&critic, x.view(), &ret).unwrap();
        let mut probe = critic.clone();
        let e = gradient_check(
            &critic.flat_params(),
            &g.flatten(),
            |p| {
                probe.set_flat_params(p).unwrap();
                value_loss(&probe, x.view(), &ret).unwrap().0
            },
            64,
            1e-5,
            &mut rng,
        );
        errors.push((name, e));
    }

    let d = Discriminator::new(11, &[32, 32], adam, &mut rng).unwrap();
    let real = Array2::from_shape_fn((12, 22), |_| rng.random_range(-1.0..1.0));
    let fake = Array2::from_shape_fn((12, 22), |_| rng.random_range(-1.0..1.0));
    let (_, g) = ls_gan_loss(&d.model.net, real.view(), fake.view()).unwrap();
    let mut probe = d.model.net.clone();
    let e = gradient_check(
        &d.model.net.flat_params(),
        &g.flatten(),
        |p| {
            probe.set_flat_params(p).unwrap();
            ls_gan_loss(&probe, real.view(), fake.view()).unwrap().0
        },
        64,
        1e-5,
        &mut rng,
    );
    errors.push(("discriminator", e));

    let dims = EceDims {
        history: 3,
        proprio: 19,
        num_skills: 5,
        velocity: 2,
        latent: 8,
    };
    let mut nets = EceNets::new(dims, &[32, 16], &[16, 32], adam, &mut rng).unwrap();
    let prior: Vec<f64> = (0..nets.prior.net.num_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
    nets.prior.net.set_flat_params(&prior).unwrap();
    let n = 10;
    let h = Array2::from_shape_fn((n, dims.encoder_in()), |_| rng.random_range(-1.0..1.0));
    let sk = Array2::from_shape_fn((n, 5), |(i, j)| if i % 5 == j { 1.0 } else { 0.0 });
    let v = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
    let o = Array2::from_shape_fn((n, 19), |_| rng.random_range(-1.0..1.0));
    let eps = Array2::from_shape_fn((n, 8), |_| rng.sample(StandardNormal));
    let eb = EceBatch {
        history: h.view(),
        skills: sk.view(),
        velocity: v.view(),
        next_obs: o.view(),
    };
    let (_, g) = ece_loss_and_grads(&nets, &eb, eps.view(), 0.1).unwrap();
    let ne = nets.encoder.net.num_params();
    let nd = nets.decoder.net.num_params();
    let mut flat = nets.encoder.net.flat_params();
    flat.extend(nets.decoder.net.flat_params());
    flat.extend(nets.prior.net.flat_params());
    let mut analytic = g.encoder.flatten();
    analytic.extend(g.decoder.flatten());
    analytic.extend(g.prior.flatten());
    let mut probe = nets.clone();
    let e = gradient_check(
        &flat,
        &analytic,
        |x| {
            probe.encoder.net.set_flat_params(&x[..ne]).unwrap();
            probe.decoder.net.set_flat_params(&x[ne..ne + nd]).unwrap();
            probe.prior.net.set_flat_params(&x[ne + nd..]).unwrap();
            let out = probe.forward::<ChaCha8Rng>(h.view(), sk.view(), Sampling::Fixed(eps.view())).unwrap();
            ece_loss(&eb, &out, 0.1).unwrap().total
        },
        64,
        1e-5,
        &mut rng,
    );
    errors.push(("ECE", e));

    let secs = start.elapsed().as_secs_f64();
    let pass = errors.iter().all(|(_, e)| *e < 1e-4) && secs < 60.0;
    let detail: Vec<String> = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    report(2, "gradient suite", pass, &format!("{}; {secs:.2}s", detail.join(", ")));
    assert!(pass);
}

#[test]
fn criterion_03_sil_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let exact = sil_reward_from_score(1.0) == 1.0 && sil_reward_from_score(-1.0) == 0.0 && sil_reward_from_score(3.0) == 0.0;
    let bounded = (0..10_000).all(|_| {
        let r = sil_reward_from_score(rng.random_range(-10.0..10.0));
        (0.0..=1.0).contains(&r)
    });
    let pass = exact && bounded;
    report(3, "SIL reward", pass, &format!("exact points {exact}, bounded {bounded}"));
    assert!(pass);
}

#[test]
fn criterion_04_skill_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut failures = Vec::new();
    for trial in 0..1000 {
        let n = rng.random_range(2..=8);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let p = skill_probs(&values).unwrap();
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            failures.push(format!("trial {trial}: sum {sum}"));
        }
        let cap = 1.0 / (n - 1) as f64;
        if p.iter().any(|&x| !(0.0..=cap).contains(&x)) {
            failures.push(format!("trial {trial}: out of [0, 1/(N-1)]"));
        }
        for i in 0..n {
            for j in 0..n {
                if values[i] < values[j] && !(p[i] > p[j]) {
                    failures.push(format!("trial {trial}: not monotone"));
                }
            }
        }
        let equal = skill_probs(&vec![values[0]; n]).unwrap();
        if equal.iter().any(|&x| (x - 1.0 / n as f64).abs() > 1e-12) {
            failures.push(format!("trial {trial}: equal values not uniform"));
        }
    }
    let pass = failures.is_empty();
    report(4, "skill probabilities", pass, &format!("{} violations", failures.len()));
    assert!(pass, "{failures:?}");
}

#[test]
fn criterion_05_advantage_mixing() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut ok = true;
    let mut worst_scale: f64 = 0.0;
    let mut worst_stat: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(2..200);
        let task: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let imit: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..3.0)).collect();
        let t1 = 100;
        let t = rng.random_range(t1..3 * t1);
        let (w1, w2) = omega_schedule(t, t1, 0.8);
        let late = mix_advantages(&task, &imit, w1, w2).unwrap();
        ok &= late.mixed == late.task;
        let (w1, w2) = omega_schedule(rng.random_range(0..t1), t1, 0.8);
        let base = mix_advantages(&task, &imit, w1, w2).unwrap();
        let c1 = rng.random_range(0.01..100.0);
        let c2 = rng.random_range(0.01..100.0);
        let scaled_task: Vec<f64> = task.iter().map(|x| x * c1).collect();
        let scaled_imit: Vec<f64> = imit.iter().map(|x| x * c2).collect();
        let scaled = mix_advantages(&scaled_task, &scaled_imit, w1, w2).unwrap();
        for (a, b) in base.mixed.iter().zip(&scaled.mixed) {
            worst_scale = worst_scale.max((a - b).abs());
        }
        for stream in [&base.task, &base.imitation] {
            let m = stream.iter().sum::<f64>() / n as f64;
            let sd = (stream.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt();
            worst_stat = worst_stat.max(m.abs()).max((sd - 1.0).abs());
        }
    }
    let pass = ok && worst_scale <= 1e-9 && worst_stat < 1e-6;
    report(
        5,
        "advantage mixing",
        pass,
        &format!("late stage bit-exact {ok}, scale drift {worst_scale:.1e}, moment error {worst_stat:.1e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_gae_oracle() {
    let rewards = [1.0, 0.0, 2.0, -1.0, 0.5];
    let values = [0.5, 0.2, 1.0, 0.3, -0.1];
    let dones = [false, false, true, false, false];
    let (adv, ret) = gae(&rewards, &values, &dones, 0.4, 0.9, 0.8).unwrap();
    // delta_4 = 0.5 + 0.9*0.4 + 0.1 = 0.96
    // delta_3 = -1 + 0.9*(-0.1) - 0.3 = -1.39, A_3 = -1.39 + 0.72*0.96
    // delta_2 = 2 - 1 = 1 (terminal)
    // delta_1 = 0.9 - 0.2 = 0.7, A_1 = 0.7 + 0.72*1
    // delta_0 = 1 + 0.18 - 0.5 = 0.68, A_0 = 0.68 + 0.72*1.42
    let expected = [1.7024, 1.42, 1.0, -0.6988, 0.96];
    let worst = adv
        .iter()
        .zip(&expected)
        .chain(ret.iter().zip(&[2.2024, 1.62, 2.0, -0.3988, 0.86]))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let pass = worst <= 1e-12;
    report(6, "GAE oracle", pass, &format!("max abs error {worst:e}"));
    assert!(pass);
}

#[test]
fn criterion_07_premium_buffer() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let horizon = 10;
    let skills = 3;
    let keyframes: Vec<Vec<Vec<f64>>> = (0..skills).map(|s| vec![vec![s as f64; 4]; horizon]).collect();
    let mut buf = PremiumBuffer::new(keyframes.clone(), 8).unwrap();
    let mut monotone = true;
    let mut retained = true;
    for s in 0..skills {
        let mut last = buf.epsilon(s);
        for _ in 0..10_000 {
            let traj: Vec<Vec<f64>> = (0..horizon).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let score = rng.random_range(-100.0..100.0);
            buf.maybe_admit(s, traj, score).unwrap();
            let eps = buf.epsilon(s);
            monotone &= eps >= last;
            last = eps;
            retained &= buf.skill(s).keyframe() == &keyframes[s] && buf.skill(s).all().any(|t| t == &keyframes[s]);
        }
    }
    let pass = monotone && retained;
    report(7, "premium buffer", pass, &format!("epsilon non-decreasing {monotone}, keyframe retained {retained}"));
    assert!(pass);
}

#[test]
fn criterion_08_schedule_from_training_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path());
    let t1 = cfg.t1 as f64;
    let mut tr = Trainer::new(cfg).unwrap();
    tr.train(|_| {}).unwrap();
    let (h, rows) = read_log(&dir.path().join("metrics.csv"));
    let it = column(&h, &rows, "iteration");
    let w1 = column(&h, &rows, "omega_task");
    let w2 = column(&h, &rows, "omega_imitation");
    let r_res = column(&h, &rows, "reward_r_res");
    let at_t1 = it.iter().position(|&t| t == t1).map(|i| w1[i]);
    let sums = w1.iter().zip(&w2).all(|(a, b)| (a + b - 1.0).abs() < 1e-12);
    let res_zero = it.iter().zip(&r_res).filter(|(t, _)| **t < t1).all(|(_, r)| *r == 0.0);
    let pass = rows.len() == 10 && at_t1 == Some(1.0) && sums && res_zero;
    report(
        8,
        "schedule",
        pass,
        &format!("omega1(T1) = {at_t1:?}, omega sums {sums}, r_res zero before T1 {res_zero}"),
    );
    assert!(pass);
}

#[test]
fn criterion_09_determinism_and_resume() {
    let run = |dir: &std::path::Path| {
        let mut tr = Trainer::new(small_run_config(dir)).unwrap();
        tr.train(|_| {}).unwrap();
        std::fs::read(dir.join("metrics.csv")).unwrap()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run(a.path());
    let identical = first == run(b.path());

    let ckpt = a.path().join("ckpt_000005.kira");
    let bytes = std::fs::read(&ckpt).unwrap();
    let resave_identical = Trainer::load(&ckpt).unwrap().to_checkpoint().unwrap().to_bytes().unwrap() == bytes;
    let c = tempfile::tempdir().unwrap();
    let mut resumed = Trainer::load(&ckpt).unwrap();
    resumed.resume_with(&small_run_config(c.path())).unwrap();
    let next = resumed.iterate().unwrap().row().join(",");
    let original = String::from_utf8(first).unwrap();
    let expected = original.lines().nth(6).unwrap().to_string();
    let resume_matches = next == expected;
    let pass = identical && resume_matches && resave_identical;
    report(
        9,
        "determinism and checkpointing",
        pass,
        &format!("repeat run identical {identical}, resume-at-5 matches iteration 5 {resume_matches}, re-save identical {resave_identical}"),
    );
    assert!(pass);
}

/// Tolerances of the desk-scale outcome check.
const HEIGHT_TOL: f64 = 0.03;
const PITCH_TOL_DEG: f64 = 5.0;
const COSINE_MIN: f64 = 0.9;
const DESK_SEEDS: [u64; 3] = [1, 2, 3];
const EVAL_EPISODES: usize = 5;

struct DeskRun {
    seed: u64,
    skills_passing: usize,
    summary: String,
    probs_final: Vec<f64>,
    min_prob_ever: f64,
}

fn desk_runs() -> &'static Vec<DeskRun> {
    static RUNS: OnceLock<Vec<DeskRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        std::thread::scope(|scope| {
            let handles: Vec<_> = DESK_SEEDS
                .iter()
                .map(|&seed| {
                    scope.spawn(move || {
                        let cfg = TrainConfig {
                            seed,
                            ..TrainConfig::default()
                        };
                        let mut tr = Trainer::new(cfg).unwrap();
                        let mut min_prob_ever = f64::INFINITY;
                        let mut probs_final = Vec::new();
                        while tr.state.iteration < tr.state.t1 {
                            let m = tr.iterate().unwrap();
                            min_prob_ever = m.skill_probs.iter().copied().fold(min_prob_ever, f64::min);
                            probs_final = m.skill_probs;
                        }
                        let mut passing = 0;
                        let mut parts = Vec::new();
                        for name in tr.skill_names() {
                            let r = tr.evaluate(&name, TerrainType::Flat, 0, EVAL_EPISODES).unwrap();
                            let ok = (r.mean_base_height - r.target_base_height).abs() <= HEIGHT_TOL
                                && (r.mean_pitch_deg - r.target_pitch_deg).abs() <= PITCH_TOL_DEG
                                && r.cosine_similarity > COSINE_MIN;
                            passing += usize::from(ok);
                            parts.push(format!(
                                "{name}: h {:.3}/{:.2} pitch {:.1}/{:.0} cos {:.3}{}",
                                r.mean_base_height,
                                r.target_base_height,
                                r.mean_pitch_deg,
                                r.target_pitch_deg,
                                r.cosine_similarity,
                                if ok { "" } else { " x" }
                            ));
                        }
                        DeskRun {
                            seed,
                            skills_passing: passing,
                            summary: parts.join("; "),
                            probs_final,
                            min_prob_ever,
                        }
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    })
}

#[test]
fn criterion_10_desk_skill_acquisition() {
    let runs = desk_runs();
    let seeds_ok = runs.iter().filter(|r| r.skills_passing >= 4).count();
    let pass = seeds_ok >= 2;
    let detail: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {} {}/5 [{}]", r.seed, r.skills_passing, r.summary))
        .collect();
    report(10, "desk skill acquisition", pass, &format!("{seeds_ok}/3 seeds pass; {}", detail.join(" | ")));
    assert!(pass);
}

#[test]
fn criterion_11_skill_sampler_convergence() {
    let run = &desk_runs()[0];
    let converged = run.probs_final.iter().all(|p| (0.15..=0.25).contains(p));
    let never_zero = run.min_prob_ever > 0.0;
    let pass = converged && never_zero;
    let probs: Vec<String> = run.probs_final.iter().map(|p| format!("{p:.3}")).collect();
    report(
        11,
        "skill sampler convergence",
        pass,
        &format!("seed {} final [{}], min logged {:.2e}", run.seed, probs.join(", "), run.min_prob_ever),
    );
    assert!(pass);
}

#[test]
fn criterion_12_add_skill_widening() {
    let mut cfg = TrainConfig {
        num_envs: 6,
        horizon: 8,
        ..TrainConfig::default()
    };
    cfg.premium_horizon = 20;
    let mut tr = Trainer::new(cfg).unwrap();
    tr.iterate().unwrap();
    let n = tr.num_skills();
    let layout = ObsLayout::new(n);
    let p = layout.proprio_dim();
    let col = ObsLayout::SKILL + n;
    let stack = |f: &dyn Fn(usize) -> Vec<f64>| {
        let rows: Vec<Vec<f64>> = (0..tr.state.envs.len()).map(f).collect();
        Array2::from_shape_vec((rows.len(), rows[0].len()), rows.concat()).unwrap()
    };
    let proprio = stack(&|e| tr.state.envs[e].obs.proprio.clone());
    let privileged = stack(&|e| tr.state.envs[e].obs.privileged.clone());
    let history = stack(&|e| tr.state.envs[e].obs.history.clone());
    let pairs = stack(&|e| [tr.state.envs[e].obs.imitation.to_vec(), tr.state.envs[e].obs.imitation.to_vec()].concat());
    let (actor_in, _) = tr.actor_inputs(&proprio, &history).unwrap();
    let before = [
        tr.policy.mean_batch(actor_in.view()).unwrap(),
        tr.critic_task.net.forward_batch(privileged.view()).unwrap(),
        tr.critic_imitation.net.forward_batch(privileged.view()).unwrap(),
        tr.ece.encoder.net.forward_batch(history.view()).unwrap(),
        tr.discriminator.model.net.forward_batch(pairs.view()).unwrap(),
    ];

    tr.add_skill(keyframe_from_posture(n, "low_walk", 0.15, 0.0).unwrap()).unwrap();

    let widen = |x: &Array2<f64>, cols: &[usize]| {
        let mut out = x.clone();
        for &c in cols {
            let z = Array2::<f64>::zeros((out.nrows(), 1));
            out = concatenate![Axis(1), out.slice(s![.., ..c]), z, out.slice(s![.., c..])];
        }
        out
    };
    let hist_cols: Vec<usize> = (0..tr.config.history).map(|k| k * (p + 1) + col).collect();
    let (actor_in2, _) = tr.actor_inputs(&widen(&proprio, &[col]), &widen(&history, &hist_cols)).unwrap();
    let on = ImitationFrame::ONEHOT_OFFSET + n;
    let after = [
        tr.policy.mean_batch(actor_in2.view()).unwrap(),
        tr.critic_task.net.forward_batch(widen(&privileged, &[col]).view()).unwrap(),
        tr.critic_imitation.net.forward_batch(widen(&privileged, &[col]).view()).unwrap(),
        tr.ece.encoder.net.forward_batch(widen(&history, &hist_cols).view()).unwrap(),
        tr.discriminator.model.net.forward_batch(widen(&pairs, &[on, ImitationFrame::dim(n) + 1 + on]).view()).unwrap(),
    ];
    let names = ["actor", "task critic", "imitation critic", "ECE encoder", "discriminator"];
    let identical: Vec<bool> = before.iter().zip(&after).map(|(a, b)| a == b).collect();
    let buffer_ok = tr.state.premium.skill(n).premium_len() == 0 && tr.state.premium.skill(n).all().count() == 1;
    let pass = identical.iter().all(|&b| b) && buffer_ok;
    let detail: Vec<String> = names.iter().zip(&identical).map(|(n, b)| format!("{n} {b}")).collect();
    report(12, "add_skill widening", pass, &format!("{}, new buffer holds only the keyframe {buffer_ok}", detail.join(", ")));
    assert!(pass);
}
