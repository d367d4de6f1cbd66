use gdnlab::envs::boxpushing::SpawnMode;
use gdnlab::envs::{mask_to_graph, BoxPushing, DroneScatter, EnvConfig, EnvName, Environment};
use gdnlab::gdn::{augment, CommMatrices, GdnModel};
use gdnlab::harness::{ActMode, Actor, RunConfig};
use gdnlab::orbits::are_isomorphic;
use gdnlab::wl::wl_indistinguishable;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn box_spawns_are_wl_blind_but_not_isomorphic() {
    let mut env = BoxPushing::new(EnvConfig::defaults(EnvName::BoxPushing)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..30 {
        let large = mask_to_graph(&env.reset_with_mode(SpawnMode::Large, &mut rng).comm_mask);
        let small = mask_to_graph(&env.reset_with_mode(SpawnMode::Small, &mut rng).comm_mask);
        assert!(wl_indistinguishable(&large, &small));
        assert!(!are_isomorphic(&large, &small).unwrap());
    }
}

/// Runs one greedy drone episode and reports whether every step had equal
/// actions and whether the drones stayed stacked.
fn drone_episode(model_name: &str, rni: &str, seed: u64) -> (bool, bool) {
    let cfg = RunConfig::parse(&format!("env_name = drone_scatter\nmodel = {model_name}\nrni = {rni}\nrecurrent = false\nseed = {seed}"), &[]).unwrap();
    let mut env = DroneScatter::new(cfg.env.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = GdnModel::new(
        cfg.model_config(env.obs_dim(), env.n_actions()).unwrap(),
        &mut rng,
    )
    .unwrap();
    let mut actor = Actor::new(Some(&model), env.n_actions());
    let mut step = env.reset(&mut rng);
    let (mut identical, mut stacked) = (true, env.mean_pairwise() == 0.0);
    loop {
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
        stacked &= env.mean_pairwise() == 0.0;
        if step.done {
            break;
        }
    }
    (identical, stacked)
}

#[test]
fn identical_drones_stay_locked_without_augmentation() {
    for (k, model) in ["commnet", "ic3net", "tarmac", "t-ic3net", "dgn"]
        .iter()
        .enumerate()
    {
        for seed in 0..4 {
            assert_eq!(
                drone_episode(model, "0", 100 * k as u64 + seed),
                (true, true),
                "{model} seed {seed}"
            );
        }
    }
}

#[test]
fn unique_ids_can_break_the_lock() {
    let broken: Vec<u64> = (0..20)
        .filter(|&s| !drone_episode("commnet", "1", s).0)
        .collect();
    assert!(!broken.is_empty());
    for s in broken {
        assert!(drone_episode("commnet", "0", s).0);
    }
}

