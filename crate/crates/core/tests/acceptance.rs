use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use gdnlab::constructions::{
    assign_labels_rni, assign_labels_uid, multiset_eps_equal, OrbitTargets,
};
use gdnlab::envs::boxpushing::SpawnMode;
use gdnlab::envs::{
    mask_to_graph, BoxPushing, DroneScatter, EnvConfig, EnvName, Environment, Metric,
};
use gdnlab::gdn::{
    augment, equivariance_check, max_abs_diff, CommMatrices, GdnModel, HiddenState, LayerKind,
    ModelConfig,
};
use gdnlab::graph::families::{complete, cycle, path, two_cycles};
use gdnlab::graph::{parse_graph, AttributedGraph, NodePermutation};
use gdnlab::harness::{
    aggregate, best_during_training, evaluate, run_experiment_with, ActMode, Actor, MetricRecord,
    RunConfig,
};
use gdnlab::learn::{check_model_gradients, epsilon, regression_sanity, TrainConfig};
use gdnlab::orbits::{are_isomorphic, orbit_partition};
use gdnlab::wl::wl_indistinguishable;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Easy Traffic Junction with the commnet preset.
const TJ_PRESET: &str = "\
env_name = traffic_junction
model = commnet
optimizer = rmsprop
seed = 1
num_epochs = 300
stop = success >= 0.9
";

type Outcome = (bool, String);

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64, directed: bool) -> AttributedGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && (directed || i < j) && rng.random_bool(p) {
                edges.push((i, j));
                if !directed {
                    edges.push((j, i));
                }
            }
        }
    }
    AttributedGraph::unlabeled(n, edges).unwrap()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn small_model(kind: LayerKind, obs_dim: usize, rng: &mut ChaCha8Rng) -> GdnModel {
    let cfg = ModelConfig {
        hidden: 8,
        key_dim: 4,
        value_dim: 5,
        layers: vec![kind; 2],
        readout: rng.random_bool(0.5),
        value_head: true,
        ..ModelConfig::new(obs_dim, 3, kind)
    };
    GdnModel::new(cfg, rng).unwrap()
}

fn wl_pairs() -> Outcome {
    let t = Instant::now();
    let blind = wl_indistinguishable(&cycle(8), &two_cycles(4));
    let split = !wl_indistinguishable(&complete(3), &path(3));
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/wl");
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    let load = |name: &str| {
        parse_graph(&std::fs::read_to_string(dir.join(format!("{name}.graph"))).unwrap()).unwrap()
    };
    let mut listed = false;
    let mut fixtures_ok = true;
    for line in manifest
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
    {
        let f: Vec<&str> = line.split_whitespace().collect();
        let same = wl_indistinguishable(&load(f[0]), &load(f[1]));
        fixtures_ok &= same == (f[2] == "blind");
        listed |= f[2] == "blind" && [f[0], f[1]] == ["c8", "two_c4"];
    }
    let secs = t.elapsed().as_secs_f64();
    (
        blind && split && listed && fixtures_ok && secs < 1.0,
        format!("C8~2C4 {blind}, K3/P3 split {split}, fixture listed {listed}, manifest ok {fixtures_ok}, {secs:.3}s"),
    )
}

fn box_pushing() -> Outcome {
    let mut env = BoxPushing::new(EnvConfig::defaults(EnvName::BoxPushing)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut good = 0;
    for _ in 0..100 {
        let large = mask_to_graph(&env.reset_with_mode(SpawnMode::Large, &mut rng).comm_mask);
        let small = mask_to_graph(&env.reset_with_mode(SpawnMode::Small, &mut rng).comm_mask);
        if wl_indistinguishable(&large, &small) && !are_isomorphic(&large, &small).unwrap() {
            good += 1;
        }
    }
    (
        good == 100,
        format!("{good}/100 resets blind and non-isomorphic"),
    )
}

fn orbit_lock() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let kind = LayerKind::ALL[trial % LayerKind::ALL.len()];
        let n = rng.random_range(2..=7);
        let g = if trial % 5 == 0 {
            cycle(n.max(3))
        } else {
            random_graph(&mut rng, n, 0.4, trial % 2 == 0)
        };
        let n = g.node_count();
        let part = orbit_partition(&g).unwrap();
        let per_orbit = random_rows(&mut rng, part.len(), 3);
        let obs: Vec<_> = (0..n)
            .map(|i| per_orbit[part.orbit_of[i]].clone())
            .collect();
        let m = small_model(kind, 3, &mut rng);
        let out = m.forward(&g, &obs, None).unwrap();
        for orbit in &part.orbits {
            for &v in &orbit[1..] {
                worst = worst.max(max_abs_diff(
                    &out.outputs[v..=v],
                    &out.outputs[orbit[0]..=orbit[0]],
                ));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    (
        worst <= 1e-6 && secs < 30.0,
        format!("max spread {worst:.2e}, {secs:.2}s"),
    )
}

fn equivariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut parts = Vec::new();
    let mut ok = true;
    for kind in LayerKind::ALL {
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let m = small_model(kind, 3, &mut rng);
            let n = rng.random_range(1..=6);
            let g = random_graph(&mut rng, n, 0.4, true);
            let obs = random_rows(&mut rng, n, 3);
            let s = NodePermutation::random(n, &mut rng);
            worst = worst.max(equivariance_check(&m, &g, &obs, &s).unwrap());
        }
        ok &= worst <= 1e-6;
        parts.push(format!("{kind:?} {worst:.1e}"));
    }
    (ok, parts.join(", "))
}

fn constructions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut uid_ok, mut rni_ok) = (0, 0);
    for _ in 0..100 {
        let n = rng.random_range(1..=8);
        let g = random_graph(&mut rng, n, 0.35, false);
        let p = orbit_partition(&g).unwrap();
        let t = OrbitTargets::random(&p, &mut rng);
        let exact = |labels: &[f64]| {
            (0..p.len()).all(|k| {
                let got: Vec<f64> = p.orbits[k].iter().map(|&v| labels[v]).collect();
                multiset_eps_equal(&got, t.orbit(k), 0.0)
            })
        };
        uid_ok += usize::from(exact(&assign_labels_uid(&g, &t).unwrap()));
        rni_ok += usize::from(exact(&assign_labels_rni(&g, &t, &mut rng).unwrap()));
    }
    (
        uid_ok == 100 && rni_ok == 100,
        format!("uid {uid_ok}/100, rni {rni_ok}/100"),
    )
}

/// Greedy DroneScatter episode with a fresh untrained commnet; returns
/// whether all actions agreed at every step and whether the drones stayed
/// stacked.
fn drone_episode(rni: u8, seed: u64) -> (bool, bool) {
    let text = format!(
        "env_name = drone_scatter\nmodel = commnet\nrni = {rni}\nrecurrent = false\nseed = {seed}"
    );
    let cfg = RunConfig::parse(&text, &[]).unwrap();
    let mut env = DroneScatter::new(cfg.env.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = GdnModel::new(
        cfg.model_config(env.obs_dim(), env.n_actions()).unwrap(),
        &mut rng,
    )
    .unwrap();
    let mut actor = Actor::new(Some(&model), env.n_actions());
    let mut step = env.reset(&mut rng);
    let spawn = env.mean_pairwise();
    let (mut identical, mut stacked) = (true, true);
    while !step.done {
        let obs = augment(&step.observations, &cfg.augmentation(), &mut rng).unwrap();
        let a = actor
            .act(
                &obs,
                &CommMatrices::from_mask(&step.comm_mask),
                &step.alive,
                ActMode::Greedy,
                &mut rng,
            )
            .unwrap();
        identical &= a.iter().all(|&x| x == a[0]);
        step = env.step(&a, &mut rng).unwrap();
        stacked &= env.mean_pairwise() == spawn;
    }
    (identical, stacked)
}

fn symmetry_lock() -> Outcome {
    let locked = (0..50)
        .filter(|&s| drone_episode(0, s) == (true, true))
        .count();
    let broken = (0..100).filter(|&s| !drone_episode(1, 1000 + s).0).count();
    (
        locked == 50 && broken >= 99,
        format!(
            "no augmentation locked {locked}/50, unique ids broke symmetry {broken}/100 (need 99)"
        ),
    )
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for kind in LayerKind::ALL {
        for _ in 0..20 {
            let obs_dim = rng.random_range(2..5);
            let mut cfg = ModelConfig::new(obs_dim, rng.random_range(2..5), kind);
            cfg.hidden = rng.random_range(3..7);
            cfg.layers = vec![kind; rng.random_range(1..3)];
            cfg.key_dim = 3;
            cfg.value_dim = 3;
            cfg.recurrent = rng.random_bool(0.5);
            cfg.value_head = rng.random_bool(0.5);
            cfg.readout = rng.random_bool(0.5);
            let mut m = GdnModel::new(cfg.clone(), &mut rng).unwrap();
            let n = rng.random_range(2..6);
            let mask: Vec<Vec<bool>> = (0..n)
                .map(|i| (0..n).map(|j| i != j && rng.random_bool(0.6)).collect())
                .collect();
            let obs = random_rows(&mut rng, n, obs_dim);
            let h = cfg.recurrent.then(|| {
                HiddenState(Array2::from_shape_fn((n, cfg.hidden), |_| {
                    rng.random_range(-0.5..0.5)
                }))
            });
            let r = check_model_gradients(
                &mut m,
                &CommMatrices::from_mask(&mask),
                &obs,
                h.as_ref(),
                1e-5,
                &mut rng,
            )
            .unwrap();
            worst = worst.max(r.max_rel_error);
        }
    }
    (worst < 1e-4, format!("max relative error {worst:.2e}"))
}

fn random_baseline() -> Outcome {
    let cfg = RunConfig::parse("env_name = drone_scatter\nmodel = random", &[]).unwrap();
    let res = evaluate(&cfg, None, 1000, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    let get = |m| {
        res.iter()
            .find(|(k, _)| *k == m)
            .map(|p| p.1)
            .unwrap_or(f64::NAN)
    };
    let (steps, pair) = (get(Metric::StepsTaken), get(Metric::PairwiseDistance));
    (
        (steps - 17.39).abs() <= 1.0 && (pair - 5.8).abs() <= 0.5,
        format!("steps_taken {steps:.2} (17.39 +- 1.0), pairwise_distance {pair:.2} (5.8 +- 0.5)"),
    )
}

fn traffic_junction() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::parse(TJ_PRESET, &[]).unwrap();
    cfg.out_dir = Some(dir.path().to_path_buf());
    let t = Instant::now();
    let mut best = 0.0f64;
    let out = run_experiment_with(&cfg, &mut |epoch, res| {
        let s = res
            .iter()
            .find(|(m, _)| *m == Metric::Success)
            .map_or(0.0, |p| p.1);
        best = best.max(s);
        eprintln!("  traffic junction epoch {epoch}: success {s:.3}");
    })
    .unwrap();
    let mins = t.elapsed().as_secs_f64() / 60.0;
    match out.stopped_at {
        Some(e) => (
            true,
            format!("success {best:.2} at epoch {e}, {mins:.1} min"),
        ),
        None => (
            false,
            format!("best success {best:.2} after 300 epochs, {mins:.1} min"),
        ),
    }
}

fn dqn_and_epsilon() -> Outcome {
    let (first, last) = regression_sanity(10, 100).unwrap();
    let eps = epsilon(45000, &TrainConfig::default());
    (
        first >= 10.0 * last && eps == 0.1,
        format!(
            "loss {first:.3e} -> {last:.3e} ({:.0}x), epsilon(45000) = {eps}",
            first / last
        ),
    )
}

fn protocol() -> Outcome {
    let a = aggregate(&[0.0, 1.0]).unwrap();
    let ci = a.ci.unwrap_or(f64::NAN);
    let series = |m, v: &[f64]| -> Vec<MetricRecord> {
        v.iter()
            .enumerate()
            .map(|(epoch, &value)| MetricRecord {
                epoch,
                metric: m,
                value,
            })
            .collect()
    };
    let hi = best_during_training(&series(Metric::Success, &[0.2, 0.7, 0.5])).unwrap();
    let lo = best_during_training(&series(Metric::StepsTaken, &[18.0, 12.5, 14.0])).unwrap();
    let ok = a.mean == 0.5
        && (ci - 0.980).abs() < 5e-4
        && hi == [(Metric::Success, 0.7)]
        && lo == [(Metric::StepsTaken, 12.5)];
    (
        ok,
        format!("aggregate 0.5 +- {ci:.3}, best success 0.7, best steps 12.5"),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1 wl oracle", wl_pairs),
        ("2 box pushing blind pair", box_pushing),
        ("3 orbit lock-in", orbit_lock),
        ("4 equivariance", equivariance),
        ("5 construction exactness", constructions),
        ("6 drone symmetry lock", symmetry_lock),
        ("7 gradient checks", gradients),
        ("8 random drone baseline", random_baseline),
        ("9 traffic junction learning", traffic_junction),
        ("10 dqn sanity", dqn_and_epsilon),
        ("11 protocol", protocol),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty()
            && !only
                .iter()
                .any(|o| name.split_whitespace().next() == Some(o.as_str()))
        {
            continue;
        }
        let (ok, detail) = f();
        println!(
            "{} criterion {name}: {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!ok);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
