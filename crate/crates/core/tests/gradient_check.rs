use fedloc_core::channel::RssVector;
use fedloc_core::neural::{gradient, loss, Head, InputScaling, MlpModel};
use fedloc_core::rng::{stream, Domain};
use fedloc_core::scenario::FingerprintRecord;
use fedloc_core::Point2;
use rand::Rng;

fn random_case(seed: u64, head: Head) -> (MlpModel, Vec<FingerprintRecord>) {
    let mut rng = stream(seed, Domain::ModelInit, head as u64);
    let n_in = rng.random_range(1..=6);
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![n_in];
    sizes.extend((0..depth - 1).map(|_| rng.random_range(2..=8)));
    let classes = rng.random_range(2..=4);
    sizes.push(if head == Head::Regression { 2 } else { classes });
    let mut model = MlpModel::init(&sizes, head, &mut rng).unwrap().with_scaling(InputScaling { shift: -60.0, scale: 0.05 });
    for p in model.params_mut() {
        *p += rng.random_range(-0.1..0.1);
    }
    let batch = (0..rng.random_range(1..=8))
        .map(|_| FingerprintRecord {
            rss: RssVector((0..n_in).map(|_| rng.random_range(-100.0..-30.0)).collect()),
            position: Point2::new(rng.random_range(0.0..50.0), rng.random_range(0.0..50.0)),
            floor: Some(rng.random_range(0..classes) as i64),
        })
        .collect();
    (model, batch)
}

/// `|analytic - numeric| / max(|analytic|, |numeric|)` over the whole
/// parameter vector, with central differences of step `h`.
fn relative_error(model: &MlpModel, batch: &[FingerprintRecord], h: f64) -> f64 {
    let analytic = gradient(model, batch).unwrap().0;
    let mut probe = model.clone();
    let numeric: Vec<f64> = (0..model.params().len())
        .map(|i| {
            let w = model.params()[i];
            probe.params_mut()[i] = w + h;
            let up = loss(&probe, batch).unwrap();
            probe.params_mut()[i] = w - h;
            let down = loss(&probe, batch).unwrap();
            probe.params_mut()[i] = w;
            (up - down) / (2.0 * h)
        })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / norm(&analytic).max(norm(&numeric)).max(1e-300)
}

#[test]
fn backprop_matches_central_differences() {
    for head in [Head::Regression, Head::Classification] {
        for seed in 0..50 {
            let (model, batch) = random_case(seed, head);
            let err = relative_error(&model, &batch, 1e-6);
            assert!(err < 1e-4, "{head:?} seed {seed} sizes {:?}: relative error {err:e}", model.sizes());
        }
    }
}
