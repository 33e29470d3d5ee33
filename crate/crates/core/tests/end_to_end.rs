//! The sampler and evaluator around a ground-truth oracle.

use diffbox_core::evaluation::{evaluate, EvalContext, Model};
use diffbox_core::sampler::SamplerConfig;
use diffbox_core::synthdata::{generate, DatasetSpec};
use diffbox_core::Schedule;

#[test]
fn oracle_is_perfect_for_every_budget() {
    let scenes = generate(&DatasetSpec { num_scenes: 100, seed: 5, ..DatasetSpec::default() }).unwrap();
    let schedule = Schedule::cosine(1000).unwrap();
    let ctx = EvalContext { scenes: &scenes, grid_size: 16, schedule: &schedule, seed: 3 };
    for steps in [1, 2, 4] {
        for n_eval in [50, 300] {
            let r = evaluate(Model::Oracle, &ctx, &SamplerConfig { n_eval, steps, ..SamplerConfig::default() }).unwrap();
            assert_eq!(r.ap50, 1.0, "steps {steps}, n_eval {n_eval}");
            assert_eq!(r.recall, 1.0);
        }
    }
}

#[test]
fn untrained_decoder_scores_near_zero() {
    use diffbox_core::denoiser::{Decoder, DecoderConfig};
    let scenes = generate(&DatasetSpec { num_scenes: 200, seed: 6, ..DatasetSpec::default() }).unwrap();
    let schedule = Schedule::cosine(1000).unwrap();
    let ctx = EvalContext { scenes: &scenes, grid_size: 16, schedule: &schedule, seed: 3 };
    let dec = Decoder::new(DecoderConfig::for_classes(3), &mut diffbox_core::rng::seeded(8)).unwrap();
    let r = evaluate(Model::Network(&dec), &ctx, &SamplerConfig::default()).unwrap();
    assert!(r.ap50 < 0.05, "{}", r.ap50);
}
