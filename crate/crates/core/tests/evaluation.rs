mod common;

use std::collections::BTreeMap;

use common::{tiny_config, tiny_data, tiny_world};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use v2f_core::augment::{eval_decoder, generate_augmented_set, train_toy_decoder, RidgeDecoder};
use v2f_core::autograd::Mat;
use v2f_core::data::{sample_dataset, Dataset, FmriSample, SemanticEmbedding, Split, SplitSizes};
use v2f_core::evaluation::{evaluate, stimulus_gallery, stochastic_consistency, EvalOptions, Embedder};
use v2f_core::s2n::S2nMapper;
use v2f_core::vae::BrainVae;
use v2f_core::world::{make_synthetic_world, SyntheticWorldSpec};
use v2f_core::Error;

/// Dataset whose fMRI vectors are the pooled embeddings themselves.
fn self_matching() -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut embeddings = BTreeMap::new();
    let mut samples = Vec::new();
    for id in 0..30u32 {
        let tokens = Array2::from_shape_simple_fn((4, 8), || rand::Rng::random_range(&mut rng, -1.0f32..1.0));
        let emb = SemanticEmbedding { stimulus: id, tokens };
        let values = emb.pooled().iter().map(|&v| v as f32).collect();
        embeddings.insert(id, emb);
        samples.push(FmriSample {
            subject: 0,
            stimulus: id,
            trial: 0,
            split: if id < 20 { Split::Train } else { Split::Test },
            session: 0,
            values,
        });
    }
    Dataset::new(samples, embeddings, 1).unwrap()
}

fn identity_probe(d: usize) -> RidgeDecoder {
    RidgeDecoder {
        weights: Mat::eye(d),
        x_mean: vec![0.0; d],
        y_mean: vec![0.0; d],
    }
}

#[test]
fn self_matching_raw_retrieval_is_perfect() {
    let data = self_matching();
    let mut config = tiny_config();
    config.voxel_counts_by_subject = [(0, 8)].into();
    let vae = BrainVae::new(&config).unwrap();
    let s2n = S2nMapper::new(&config).unwrap();
    let probe = identity_probe(8);
    let opts = EvalOptions { candidates: 30, repeats: 5, ..EvalOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let report = evaluate(&vae, Some(&s2n), Embedder::Probe(&probe), &data, 0, &opts, &mut rng).unwrap();
    assert_eq!(report.retrieval_top1_raw.mean, 1.0);
    assert_eq!(report.retrieval_top1_raw.sd, 0.0);
    for v in [report.retrieval_top1_syn.mean, report.two_way_acc] {
        assert!((0.0..=1.0).contains(&v));
    }
    assert!((-1.0..=1.0).contains(&report.cosine));
    let json = serde_json::to_string(&report).unwrap();
    assert!(json.contains("retrieval_top1_syn"));
    assert!(report.render_table().contains("Pearson"));
}

#[test]
fn evaluation_rejects_unknown_subject() {
    let data = tiny_data(0);
    let vae = BrainVae::new(&tiny_config()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = evaluate(&vae, None, Embedder::Encoder(&vae), &data, 7, &EvalOptions::default(), &mut rng);
    assert!(err.is_err());
}

#[test]
fn zero_noise_synthesis_is_perfectly_consistent() {
    let data = tiny_data(1);
    let config = tiny_config();
    let vae = BrainVae::new(&config).unwrap();
    let s2n = S2nMapper::new(&config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let c = stochastic_consistency(&vae, &s2n, Embedder::Encoder(&vae), &data, 0, 0.0, 5, &mut rng).unwrap();
    assert_eq!(c, 1.0);
}

fn one_session_setup() -> (Dataset, Dataset, BrainVae, S2nMapper) {
    let data = tiny_data(3);
    let config = tiny_config();
    let real = data.for_subject(1).train().subset_hours(1).unwrap();
    (data, real, BrainVae::new(&config).unwrap(), S2nMapper::new(&config).unwrap())
}

#[test]
fn augmented_set_contract() {
    let (data, real, vae, s2n) = one_session_setup();
    let real_stimuli = real.stimuli();
    let unseen: Vec<_> = data
        .train()
        .stimuli()
        .into_iter()
        .filter(|s| !real_stimuli.contains(s))
        .map(|s| data.embedding(s).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let one = generate_augmented_set(&vae, &s2n, "m", &real, &unseen, 1, 0.0, &mut rng).unwrap();
    assert_eq!(one.synthetic.len(), real.len());
    for p in &one.synthetic {
        assert!(!real_stimuli.contains(&p.stimulus));
        assert_eq!((p.source_model.as_str(), p.nf), ("m", 0.0));
        assert_eq!(p.values.len(), 40);
    }
    let again = generate_augmented_set(&vae, &s2n, "m", &real, &unseen, 1, 0.0, &mut rng).unwrap();
    assert_eq!(one.synthetic, again.synthetic);
    let (xs, ys) = one.pairs().unwrap();
    assert_eq!((xs.len(), ys.len()), (2 * real.len(), 2 * real.len()));

    let overlap = vec![data.embedding(*real_stimuli.iter().next().unwrap()).unwrap()];
    let err = generate_augmented_set(&vae, &s2n, "m", &real, &overlap, 1, 0.0, &mut rng);
    assert!(matches!(err, Err(Error::Protocol(_))));
    let err = generate_augmented_set(&vae, &s2n, "m", &real, &unseen[..1], 4, 0.0, &mut rng);
    assert!(matches!(err, Err(Error::Size(_))));

    let dir = tempfile::tempdir().unwrap();
    one.save(dir.path()).unwrap();
    let loaded = Dataset::load(dir.path()).unwrap();
    assert_eq!(loaded.len(), 2 * real.len());
    let prov: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("provenance.json")).unwrap()).unwrap();
    let entries = prov["entries"].as_array().unwrap();
    assert_eq!(entries.len(), loaded.len());
    assert_eq!(entries.iter().filter(|e| e["source"] == "synthetic").count(), real.len());
}

#[test]
fn decoder_evaluation_guards_leakage_and_zero_decoder_is_chance() {
    let data = tiny_data(5);
    let test = data.test().for_subject(0);
    let gallery = stimulus_gallery(&data);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let constant = RidgeDecoder::constant(48, vec![0.0; 8]);
    let report = eval_decoder(&constant, &data.train().stimuli(), &test, &gallery, 10, 20, 1000, &mut rng).unwrap();
    assert!((report.image_retrieval.mean - 0.1).abs() < 1e-12, "{:?}", report.image_retrieval);
    assert!((report.brain_retrieval.mean - 1.0 / 6.0).abs() < 1e-12);
    assert_eq!(report.two_way_image, 0.5);

    let leaky = test.stimuli();
    let err = eval_decoder(&constant, &leaky, &test, &gallery, 10, 20, 1000, &mut rng);
    assert!(matches!(err, Err(Error::Protocol(_))));
}

#[test]
fn noiseless_world_decoder_reaches_ceiling() {
    let spec = SyntheticWorldSpec { trial_noise_sd: 0.0, ..tiny_world(0).spec };
    let world = make_synthetic_world(&spec, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data = sample_dataset(&world, SplitSizes { train: 40, test: 6, sessions: 1 }, &mut rng).unwrap();
    let train = data.train().for_subject(0);
    let xs: Vec<Vec<f64>> = train.samples().iter().map(|s| s.values.iter().map(|&v| v as f64).collect()).collect();
    let ys: Vec<Vec<f64>> = train.samples().iter().map(|s| data.embedding(s.stimulus).unwrap().pooled()).collect();
    let decoder = train_toy_decoder(&xs, &ys, 1e-3).unwrap();
    let report = eval_decoder(
        &decoder,
        &train.stimuli(),
        &data.test().for_subject(0),
        &stimulus_gallery(&data),
        20,
        20,
        1000,
        &mut rng,
    )
    .unwrap();
    assert!(report.image_retrieval.mean > 0.9, "{:?}", report.image_retrieval);
    assert!(report.two_way_image > 0.95);
}
