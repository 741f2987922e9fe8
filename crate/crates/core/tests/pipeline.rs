use onenn::analysis::{evaluate_shift, Predictor};
use onenn::data::{gen_shifted_test_with, LabelDist};
use onenn::gradients::grad_population;
use onenn::mc::{substream, Workers};
use onenn::model::{AttentionWeights, DiagonalParams};
use onenn::training::{sigma_threshold, train, Regime, SgdConfig, TrainConfig, TrainLog};
use onenn::Prompt;

fn csv(log: &TrainLog) -> Vec<u8> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    buf
}

fn config(regime: Regime) -> TrainConfig {
    TrainConfig {
        n: 6,
        d: 4,
        sigma: sigma_threshold(6, 4, 1.0).unwrap().value,
        eta: 0.5,
        steps: 6,
        mc_samples_per_step: 1500,
        regime,
        sgd: (regime == Regime::Sgd).then(|| SgdConfig { dataset_size: 200, batch_size: 32, epochs: 3, test_size: 50, ..SgdConfig::default() }),
        seed: 99,
    }
}

#[test]
fn every_regime_is_identical_across_worker_counts() {
    for regime in [Regime::PopulationGd, Regime::DiagDynamics, Regime::Sgd] {
        let c = config(regime);
        let logs: Vec<Vec<u8>> = [1, 2, 5].iter().map(|&t| Workers::new(t).unwrap().install(|| csv(&train(&c).unwrap()))).collect();
        assert_eq!(logs[0], logs[1], "{regime}");
        assert_eq!(logs[0], logs[2], "{regime}");
        assert_eq!(csv(&train(&c).unwrap()), logs[0], "{regime} rerun");
    }
}

#[test]
fn population_gradient_is_identical_across_worker_counts() {
    let w = AttentionWeights::initial(4, 3.0);
    let a = Workers::new(1).unwrap().install(|| grad_population(5, 4, &w, 3000, 7).unwrap());
    let b = Workers::new(4).unwrap().install(|| grad_population(5, 4, &w, 3000, 7).unwrap());
    assert_eq!(a.mean.to_flat(), b.mean.to_flat());
    assert_eq!(a.stderr.to_flat(), b.stderr.to_flat());
}

#[test]
fn population_and_diagonal_runs_agree_on_the_diagonal() {
    // same step seeds, same drift: the full-weight run stays on the diagonal
    // subspace up to Monte-Carlo noise
    let mut c = config(Regime::PopulationGd);
    c.mc_samples_per_step = 20_000;
    let pop = train(&c).unwrap();
    c.regime = Regime::DiagDynamics;
    let diag = train(&c).unwrap();
    let (a, b) = (pop.records.last().unwrap(), diag.records.last().unwrap());
    assert!((a.xi1.unwrap() - b.xi1.unwrap()).abs() < 0.05, "{:?} vs {:?}", a.xi1, b.xi1);
    assert!((a.xi2.unwrap() - b.xi2.unwrap()).abs() < 0.05, "{:?} vs {:?}", a.xi2, b.xi2);
    assert!(pop.records.iter().all(|r| r.offpattern_z.unwrap_or(0.0) < 6.0));
}

#[test]
fn mismatches_shrink_along_a_diagonal_trajectory() {
    let c = TrainConfig { n: 16, d: 8, steps: 300, mc_samples_per_step: 2000, ..config(Regime::DiagDynamics) };
    let c = TrainConfig { sigma: sigma_threshold(16, 8, 1.0).unwrap().value, ..c };
    let log = train(&c).unwrap();
    let mut rng = substream(5, &[1]);
    let set: Vec<Prompt> =
        (0..400).map(|_| gen_shifted_test_with(16, 8, 0.1, LabelDist::UniformInt { low: 1, high: 3 }, &mut rng).unwrap()).collect();
    let counts: Vec<u64> = [0, 10, 50, 150, 300]
        .iter()
        .map(|&k| {
            let r = &log.records[k];
            let model = Predictor::Diag(DiagonalParams::new(r.xi1.unwrap(), r.xi2.unwrap()));
            evaluate_shift(&model, &set, true).unwrap().mismatches.unwrap()
        })
        .collect();
    for w in counts.windows(2) {
        assert!(w[1] <= w[0] + 1, "{counts:?}");
    }
    assert!(counts.last() < counts.first(), "{counts:?}");
}

#[test]
fn trained_weights_feed_the_shift_evaluation() {
    let log = train(&config(Regime::Sgd)).unwrap();
    let w = log.final_weights.clone().unwrap();
    let mut rng = substream(3, &[2]);
    let set: Vec<Prompt> = (0..100).map(|_| gen_shifted_test_with(6, 4, 0.1, LabelDist::Gaussian, &mut rng).unwrap()).collect();
    let rep = evaluate_shift(&Predictor::Weights(w), &set, false).unwrap();
    assert!(rep.mse_vs_1nn.is_finite() && rep.mse_stderr > 0.0);
    assert_eq!(rep.n_instances, 100);
    assert!(rep.bound.is_none());
}
