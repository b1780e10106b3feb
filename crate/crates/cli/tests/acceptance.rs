//! Acceptance suite: runs every acceptance criterion and prints one
//! PASS/FAIL line per criterion. Long-running (tens of minutes on one core).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scaffold_core::bandit::ZoomingState;
use scaffold_core::cem::{cem_argmax, CemConfig};
use scaffold_core::curriculum::{continue_training, CurriculumConfig, CurriculumMode};
use scaffold_core::envs::{
    optimal_fixture, reward_of, suboptimal_fixture, EnvConfig, EnvState, Scene, TaskKind, FAR_REWARD, SUCCESS_REWARD,
};
use scaffold_core::geometry::ActionBox;
use scaffold_core::innerloop::{gradient_check, train_policy, Policy, Sample, TrainConfig, ValueFn};
use scaffold_core::orchestrator::{run_outer_loop, test_time_policy, OuterConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let t0 = Instant::now();
    let mut o = f();
    let took = t0.elapsed();
    o.detail += &format!(" [{:.1}s", took.as_secs_f64());
    if let Some(limit) = limit {
        o.detail += &format!(" of {:.0}s allowed", limit.as_secs_f64());
        o.pass &= took < limit;
    }
    o.detail += "]";
    o
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    let s: Vec<String> = v.iter().map(|x| format!("{x:.2}")).collect();
    s.join("/")
}

/// Scaled L∞ distance written out independently of the library metric.
fn linf(a: &[f64], b: &[f64], widths: &[f64]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..a.len() {
        d = d.max((a[i] - b[i]).abs() / widths[i]);
    }
    d
}

fn radius_law(horizon: usize, n: usize) -> f64 {
    (2.0 * (horizon as f64).ln() / (n as f64 + 1.0)).sqrt()
}

/// Every ball's (n, mean, r) recounted from the raw history after each
/// round, starting from the previous round's recounted radius.
fn replay_oracle() -> Outcome {
    let rounds = 2000;
    let bx = ActionBox::new(vec![0.0, -1.0], vec![1.0, 3.0]).unwrap();
    let widths = bx.widths();
    let mut st = ZoomingState::with_default_metric(bx.clone(), 0.2, rounds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut noise = ChaCha8Rng::seed_from_u64(12);
    let mut prev_r: Vec<f64> = st.balls().iter().map(|b| b.radius).collect();
    let mut history: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut mismatches = 0usize;
    let mut worst_law: f64 = 0.0;
    for _ in 0..rounds {
        let sel = st.select_arm(&mut rng);
        let x = &sel.action;
        let reward = (-(x[0] - 0.7).powi(2) - 0.1 * (x[1] - 1.0).powi(2)).exp() + 0.1 * noise.random::<f64>();
        st.update(x, reward).unwrap();
        history.push((x.clone(), reward));
        let count = |c: &[f64], r: f64| {
            let mut n = 0usize;
            let mut sum = 0.0;
            for (a, y) in &history {
                if linf(c, a, &widths) <= r {
                    n += 1;
                    sum += y;
                }
            }
            (n, sum)
        };
        for b in st.balls() {
            let (n, mean, r) = if b.id < prev_r.len() {
                let (n1, _) = count(&b.center, prev_r[b.id]);
                let (n, sum) = count(&b.center, radius_law(rounds, n1));
                (n, if n > 0 { sum / n as f64 } else { 0.0 }, radius_law(rounds, n))
            } else {
                (0, 0.0, radius_law(rounds, 0))
            };
            if b.n != n || b.mean_reward != mean || (b.radius - r).abs() > 1e-12 {
                mismatches += 1;
            }
            worst_law = worst_law.max((b.radius - radius_law(rounds, b.n)).abs());
        }
        prev_r = st.balls().iter().map(|b| b.radius).collect();
    }
    Outcome {
        pass: mismatches == 0 && worst_law <= 1e-12,
        detail: format!(
            "{rounds} rounds, {} balls, {mismatches} mismatched ball states, radius law error {worst_law:.1e}",
            st.balls().len()
        ),
    }
}

fn half_h_grid(bx: &ActionBox, h: f64) -> Vec<Vec<f64>> {
    let step = h / 2.0;
    let mut pts = vec![vec![]];
    for i in 0..bx.dims() {
        let (lo, hi) = (bx.lower()[i], bx.upper()[i]);
        let w = hi - lo;
        let mut axis = vec![];
        let mut k = 0;
        loop {
            let v = lo + k as f64 * step * w;
            if v >= hi - 1e-12 * w {
                axis.push(hi);
                break;
            }
            axis.push(v);
            k += 1;
        }
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(*v);
                    q
                })
            })
            .collect();
    }
    pts
}

/// 50 random boxes in 1-3 dimensions, 100 rounds each: every point of an
/// independently built h/2 grid is inside some ball after every round.
fn coverage() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut uncovered = 0usize;
    let mut rounds = 0usize;
    for case in 0..50 {
        let d = 1 + case % 3;
        let lo: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.1..4.0)).collect();
        let bx = ActionBox::new(lo, hi).unwrap();
        let widths = bx.widths();
        let h = rng.random_range(0.1..0.4);
        let centre: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let sharp = rng.random_range(1.0..30.0);
        let grid = half_h_grid(&bx, h);
        let mut st = ZoomingState::with_default_metric(bx.clone(), h, 100).unwrap();
        for _ in 0..100 {
            let sel = st.select_arm(&mut rng);
            let u = bx.normalize(&sel.action);
            let r2: f64 = u.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum();
            let reward = (-sharp * r2).exp() + 0.2 * rng.random::<f64>();
            st.update(&sel.action, reward).unwrap();
            rounds += 1;
            uncovered += grid
                .iter()
                .filter(|p| !st.balls().iter().any(|b| linf(&b.center, p, &widths) <= b.radius))
                .count();
        }
    }
    Outcome {
        pass: uncovered == 0 && rounds == 5000,
        detail: format!("{rounds} rounds over 50 boxes, {uncovered} uncovered grid points"),
    }
}

/// Reward 1 on a width-0.1 interval of [0, 1], 0 elsewhere.
fn step_landscape() -> Outcome {
    let step = |x: &[f64]| if (0.6..0.7).contains(&x[0]) { 1.0 } else { 0.0 };
    let mut wins = 0;
    let mut ratios = vec![];
    for seed in 0..10u64 {
        let mut st = ZoomingState::with_default_metric(ActionBox::unit(1), 0.05, 5000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zz = st.run(step, 5000, &mut rng).unwrap();
        let zz_tail = zz.rounds[4000..].iter().map(|r| r.reward).sum::<f64>() / 1000.0;
        let mut urng = ChaCha8Rng::seed_from_u64(seed + 100);
        let uni_tail = (0..5000)
            .map(|_| step(&[urng.random::<f64>()]))
            .skip(4000)
            .sum::<f64>()
            / 1000.0;
        ratios.push(zz_tail / uni_tail);
        if zz_tail >= 2.0 * uni_tail {
            wins += 1;
        }
    }
    Outcome {
        pass: wins >= 8,
        detail: format!("{wins}/10 seeds at >= 2x uniform (ratios {})", fmt(&ratios)),
    }
}

/// Sums of three Gaussian bumps over [0, 1]^2 against a 200x200 grid.
fn cem_vs_grid() -> Outcome {
    let mut hits = 0;
    for case in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let bumps: Vec<[f64; 4]> = (0..3)
            .map(|_| {
                [
                    rng.random_range(0.5..1.0),
                    rng.random::<f64>(),
                    rng.random::<f64>(),
                    rng.random_range(0.15..0.35),
                ]
            })
            .collect();
        let f = |x: &[f64]| {
            bumps
                .iter()
                .map(|[a, cx, cy, s]| a * (-((x[0] - cx).powi(2) + (x[1] - cy).powi(2)) / (2.0 * s * s)).exp())
                .sum::<f64>()
        };
        let mut grid_max = f64::NEG_INFINITY;
        for i in 0..200 {
            for j in 0..200 {
                grid_max = grid_max.max(f(&[i as f64 / 199.0, j as f64 / 199.0]));
            }
        }
        let cfg = CemConfig::default();
        assert_eq!((cfg.batch_size, cfg.elite_count, cfg.iterations), (64, 6, 6));
        let r = cem_argmax(f, &ActionBox::unit(2), &cfg, &mut rng).unwrap();
        if f(&r.best) >= grid_max - 0.01 * grid_max.abs() {
            hits += 1;
        }
    }
    Outcome {
        pass: hits >= 18,
        detail: format!("{hits}/20 functions within 1% of the grid maximum"),
    }
}

fn gradient_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    for draw in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + draw);
        let (obs_dim, act_dim) = (8, 3);
        let mut policy = Policy::new(obs_dim, act_dim, 32, &mut rng);
        let mut value = ValueFn::new(obs_dim, 32, &mut rng);
        for p in policy.net.params.iter_mut().chain(value.net.params.iter_mut()) {
            *p += rng.random_range(-0.3..0.3);
        }
        let batch: Vec<Sample> = (0..16)
            .map(|_| Sample {
                obs: (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: (0..act_dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
                ret: rng.random_range(-2.0..5.0),
            })
            .collect();
        worst = worst.max(gradient_check(&policy, &value, &batch, 0.01));
    }
    Outcome {
        pass: worst < 1e-4,
        detail: format!("max relative error {worst:.2e} over 50 random batches"),
    }
}

fn scaffold_train(seed: u64) -> TrainConfig {
    TrainConfig {
        workers: 1,
        total_steps: 150_000,
        eval_interval: 150_000,
        eval_episodes: 100,
        seed,
        actor_lr: 5e-4,
        critic_lr: 2e-3,
        ..TrainConfig::default()
    }
}

type Trained = Vec<(Policy, ValueFn)>;

fn scaffolding(trained: &mut Trained) -> Outcome {
    let env = EnvConfig::insertion();
    let scenes = [
        Scene::with_fixture(optimal_fixture(&env)),
        Scene::with_fixture(suboptimal_fixture(&env)),
        Scene::empty(),
    ];
    let mut finals = [vec![], vec![], vec![]];
    for seed in 0..5 {
        for (k, scene) in scenes.iter().enumerate() {
            let cfg = scaffold_train(seed);
            let (p, v, c) = train_policy(&env, scene, &cfg).unwrap();
            assert_eq!(c.last().unwrap().env_steps, cfg.total_steps);
            finals[k].push(c.final_success());
            if k == 0 {
                trained.push((p, v));
            }
        }
    }
    let (opt, sub, none) = (mean(&finals[0]), mean(&finals[1]), mean(&finals[2]));
    Outcome {
        pass: opt >= 0.6 && opt >= 3.0 * none && none < sub && sub < opt,
        detail: format!(
            "150k steps x 5 seeds: optimal {opt:.3} ({}), suboptimal {sub:.3} ({}), none {none:.3} ({})",
            fmt(&finals[0]),
            fmt(&finals[1]),
            fmt(&finals[2])
        ),
    }
}

fn qmap_sanity() -> Outcome {
    let mut env = EnvConfig::insertion();
    env.noise_stddev = vec![0.0; env.noise_stddev.len()];
    let mut outer = OuterConfig::for_env(&env);
    outer.inner_episodes_per_trial = 1000;
    outer.inner_seed = Some(0);
    outer.train.actor_lr = 5e-4;
    outer.train.critic_lr = 2e-3;
    assert_eq!(outer.outer_rounds, 60);
    let result = run_outer_loop(&env, &outer, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let best = test_time_policy(&result.model, &[], &outer.cem, &mut rng).unwrap();
    let target = outer.box_pose(&optimal_fixture(&env).pose);
    let dist = linf(&best.best, &target, &outer.fixture_pose_box.widths());
    Outcome {
        pass: dist <= 2.0 * outer.h,
        detail: format!(
            "argmax {:?} vs optimal {:?}: normalized distance {dist:.3}, allowed {:.3}",
            best.best.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            target.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            2.0 * outer.h
        ),
    }
}

fn removal_curriculum(trained: &Trained) -> Outcome {
    let env = EnvConfig::insertion();
    let wall = optimal_fixture(&env);
    let cc = CurriculumConfig::default();
    let (mut pre, mut hard, mut field) = (vec![], vec![], vec![]);
    for (seed, (p, v)) in trained.iter().enumerate() {
        let cfg = scaffold_train(seed as u64);
        let h = continue_training(p.clone(), v.clone(), &env, &wall, CurriculumMode::HardRemoval, &cc, &cfg).unwrap();
        let f = continue_training(p.clone(), v.clone(), &env, &wall, CurriculumMode::PotentialField, &cc, &cfg).unwrap();
        pre.push(h.initial.success_rate);
        hard.push(h.final_success());
        field.push(f.final_success());
    }
    let (pre_m, hard_m, field_m) = (mean(&pre), mean(&hard), mean(&field));
    Outcome {
        pass: trained.len() == 5 && pre_m >= 0.6 && field_m >= 2.0 * hard_m && hard_m <= 0.5 * pre_m,
        detail: format!(
            "5 seeds: pre-removal {pre_m:.3} ({}), potential field {field_m:.3} ({}), hard {hard_m:.3} ({})",
            fmt(&pre),
            fmt(&field),
            fmt(&hard)
        ),
    }
}

fn run_cli(out: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_scaffold"))
        .args(args)
        .env("SCAFFOLD_OUT", out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
}

fn only_run_dir(out: &Path, prefix: &str) -> PathBuf {
    let dirs: Vec<PathBuf> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs[0].clone()
}

fn data_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "pgm")))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

const SMALL_CONFIG: &str = "\
[bandit_bench]
rounds = 400
horizon = 400
[train]
total_steps = 4000
eval_interval = 1000
eval_episodes = 10
[outer]
outer_rounds = 4
inner_episodes_per_trial = 6
[curriculum.schedule]
max_stages = 2
steps_per_stage = 600
[compare]
budget = 2000
seeds = [0, 1, 2]
";

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("small.toml");
    std::fs::write(&config, SMALL_CONFIG).unwrap();
    let config = config.to_str().unwrap();
    let policy = {
        let out = tmp.path().join("policy-src");
        run_cli(&out, &["train", "--config", config, "--seed", "3", "--threads", "1"]);
        only_run_dir(&out, "train").join("policy.json")
    };
    let policy = policy.to_str().unwrap();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("bandit-bench", vec!["bandit-bench"]),
        ("train", vec!["train", "--fixture-mode", "suboptimal"]),
        ("outer", vec!["outer"]),
        ("curriculum", vec!["curriculum", "--mode", "potential-field", "--policy", policy]),
        ("compare", vec!["compare"]),
    ];
    let mut differing = vec![];
    let mut compared = 0;
    for (name, args) in &commands {
        let mut runs = vec![];
        for k in 0..2 {
            let out = tmp.path().join(format!("{name}-{k}"));
            let mut full = args.clone();
            full.extend(["--config", config, "--seed", "7", "--threads", "1"]);
            run_cli(&out, &full);
            runs.push(data_files(&only_run_dir(&out, name)));
        }
        compared += runs[0].len();
        if runs[0].is_empty() || runs[0] != runs[1] {
            differing.push(name.to_string());
        }
    }
    Outcome {
        pass: differing.is_empty(),
        detail: format!("5 commands run twice, {compared} CSV/PGM files compared, differing commands: {differing:?}"),
    }
}

fn blank_state(pose: Vec<f64>) -> EnvState {
    EnvState {
        pose,
        grip: true,
        eta: 0.0,
        zeta: 0.0,
        jitter: [0.0; 3],
        step_index: 3,
        done: false,
        in_hole: false,
        contact: false,
        success: false,
        far: false,
    }
}

fn reward_branches() -> Outcome {
    let mut failures = vec![];
    let mut check = |what: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-12 {
            failures.push(format!("{what}: got {got}, want {want}"));
        }
    };
    for kind in TaskKind::ALL {
        let cfg = EnvConfig::for_task(kind);
        let pose = match kind {
            TaskKind::Insertion => vec![cfg.target[0], cfg.target[1], cfg.target[2]],
            TaskKind::Wrench => vec![cfg.target[0], cfg.target[1], cfg.target[2], 0.0, 0.0, 0.0],
            TaskKind::SdInsertion => vec![cfg.target[0], cfg.target[2], 0.0],
        };
        let before = blank_state(pose.clone());
        let mut s = before.clone();
        s.success = true;
        check(&format!("{} success", kind.name()), reward_of(&cfg, &before, &s), 5.0);
        let mut s = before.clone();
        s.far = true;
        check(&format!("{} far", kind.name()), reward_of(&cfg, &before, &s), -1.0);
    }
    assert_eq!((SUCCESS_REWARD, FAR_REWARD), (5.0, -1.0));

    let ins = EnvConfig::insertion();
    let t = &ins.target;
    for off in [[0.0, 0.0, 0.0], [0.02, -0.01, 0.005], [0.039, 0.0, 0.0]] {
        let s = blank_state(vec![t[0] + off[0], t[1] + off[1], t[2] + off[2]]);
        check("insertion otherwise", reward_of(&ins, &s, &s), 0.0);
    }

    let wr = EnvConfig::wrench();
    let mut s = blank_state(vec![wr.target[0], wr.target[1], wr.target[2], 0.0, 0.0, 0.0]);
    s.eta = 17.5;
    check("wrench otherwise", reward_of(&wr, &s, &s), wr.progress_gain * 17.5);

    let mut sd = EnvConfig::sd_insertion();
    sd.dist_scale = 1.0;
    let h = sd.target.clone();
    for (dx, dz, zeta) in [(0.0, 0.0, 0.0), (-0.01, 0.02, 12.0), (0.03, -0.004, 40.0)] {
        let mut s = blank_state(vec![h[0] + dx, h[2] + dz, 10.0]);
        s.zeta = zeta;
        let dist = (dx.powi(2) + dz.powi(2)).sqrt();
        check("sd otherwise", reward_of(&sd, &s, &s), 0.1 * (-dist).exp() + sd.progress_gain * zeta);
    }
    Outcome {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            "success, far and shaping branches exact for all three tasks".into()
        } else {
            failures.join("; ")
        },
    }
}

#[test]
fn acceptance() {
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    let mut trained = Trained::new();
    let results = vec![
        ("1 replay oracle", timed(min(1), replay_oracle)),
        ("2 coverage", timed(min(2), coverage)),
        ("3 step landscape", timed(min(1), step_landscape)),
        ("4 CEM vs grid", timed(min(1), cem_vs_grid)),
        ("5 gradient fidelity", timed(min(1), gradient_fidelity)),
        ("6 scaffolding effect", timed(min(20), || scaffolding(&mut trained))),
        ("7 Q-map sanity", timed(min(30), qmap_sanity)),
        ("8 removal curriculum", timed(min(30), || removal_curriculum(&trained))),
        ("9 CLI determinism", timed(None, cli_determinism)),
        ("10 reward branches", timed(None, reward_branches)),
    ];
    println!();
    for (name, o) in &results {
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
