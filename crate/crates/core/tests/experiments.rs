use fedloc_core::analysis::{delta_from_gradients, evaluate_mae};
use fedloc_core::channel::measure;
use fedloc_core::federation::{compute_weights, run_federated, AggregationStrategy, Architecture, FederationConfig};
use fedloc_core::neural::{train_local, TrainConfig};
use fedloc_core::rng::{stream, Domain};
use fedloc_core::scenario::{make_scenario, make_test_set, FingerprintDatabase, FingerprintRecord, ScenarioConfig, ScenarioKind};
use fedloc_core::Point2;

#[test]
fn spatial_superset_trains_better() {
    let cfg = ScenarioConfig::default();
    let arch = Architecture::regression(&[64]);
    let train = TrainConfig { learning_rate: 1e-5, local_steps: 1000, batch_size: 32 };
    let mut wins = 0;
    for seed in 0..10 {
        let ch = cfg.channel(seed).unwrap();
        let test = make_test_set(&cfg, &ch, seed).unwrap();
        let mut rng = stream(seed, Domain::RandomDatabase, 0);
        let survey = |rng: &mut _, side: f64| -> FingerprintDatabase {
            let records = (0..200)
                .map(|_| {
                    let p = cfg.aoi.sample_uniform(rng);
                    let p = Point2::new(p.x * side / cfg.aoi.width, p.y * side / cfg.aoi.height);
                    FingerprintRecord::new(measure(p, &ch, cfg.n_avg, rng).unwrap(), p)
                })
                .collect();
            FingerprintDatabase::new(0, records).unwrap()
        };
        let full = survey(&mut rng, 50.0);
        let quarter = survey(&mut rng, 25.0);
        let init = arch.initial_model(4, seed).unwrap();
        let mae = |db: &FingerprintDatabase| {
            let model = train_local(&init, db, &train, &mut stream(seed, Domain::LocalTraining, 0)).unwrap();
            evaluate_mae(&model, &test).unwrap()
        };
        if mae(&full) <= mae(&quarter) {
            wins += 1;
        }
    }
    assert!(wins >= 8, "superset won {wins}/10");
}

#[test]
fn heterogeneous_split_has_larger_divergence() {
    let cfg = ScenarioConfig::default();
    let arch = Architecture::regression(&[64]);
    for seed in 0..5 {
        let ch = cfg.channel(seed).unwrap();
        let model = arch.initial_model(4, seed).unwrap();
        let delta = |kind, strategy| {
            let sc = make_scenario(kind, &cfg, &ch, seed).unwrap();
            let w = compute_weights(&sc.databases, strategy).unwrap();
            delta_from_gradients(&sc.databases, &model, &w.values).unwrap()
        };
        let het = delta(ScenarioKind::Heterogeneous, AggregationStrategy::Uniform);
        let hom = delta(ScenarioKind::Homogeneous, AggregationStrategy::Uniform);
        assert!(het >= hom, "seed {seed}: heterogeneous {het} < homogeneous {hom}");
        // hull weights discount the stragglers, which carry most of the divergence
        let het_hull = delta(ScenarioKind::Heterogeneous, AggregationStrategy::ConvexHullArea);
        assert!(het_hull < het, "seed {seed}: hull-weighted {het_hull} >= uniform {het}");
    }
}

#[test]
fn hull_weighting_wins_paired_seeds_on_heterogeneous_split() {
    let cfg = ScenarioConfig::default();
    let mut wins = 0;
    let mut finals = Vec::new();
    for seed in 0..5 {
        let ch = cfg.channel(seed).unwrap();
        let sc = make_scenario(ScenarioKind::Heterogeneous, &cfg, &ch, seed).unwrap();
        let final_mae = |strategy| {
            let fc = FederationConfig {
                rounds: 100,
                train: TrainConfig { learning_rate: 1e-5, local_steps: 40, batch_size: 32 },
                strategy,
                seed,
                architecture: Architecture::regression(&[64]),
                eval_every: 100,
            };
            run_federated(&sc.databases, &sc.test_set, &fc).unwrap().metrics.last().unwrap().test_mae.unwrap()
        };
        let (u, h) = (final_mae(AggregationStrategy::Uniform), final_mae(AggregationStrategy::ConvexHullArea));
        if h < u {
            wins += 1;
        }
        finals.push((u, h));
    }
    assert!(wins >= 4, "hull-area lower in {wins}/5 seeds; (uniform, hullarea) = {finals:?}");
}
