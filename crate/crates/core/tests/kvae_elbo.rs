use kvae_autodiff::{Tape, Tensor};
use kvae_core::dynparam::AlphaVariant;
use kvae_core::kvae::{
    elbo_estimate, elbo_masked, episode_gradients, generate, ElboNoise, GenerateOptions, KvaeModel, MaskedOptions,
    ModelConfig, Sequence,
};
use kvae_core::lgssm::{LgssmGlobals, NoiseScales, ObservationMask, TimeVaryingParams};
use kvae_core::oracle::{elbo_gradient_probes, gauss_hermite, joint_log_density_terms, linear_toy_elbo, DenseJoint};
use kvae_core::vae::Likelihood;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> ModelConfig {
    ModelConfig {
        a_dim: 2,
        z_dim: 3,
        k: 3,
        height: 3,
        width: 4,
        lstm_hidden: 5,
        alpha_mlp_hidden: vec![4],
        vae_hidden: vec![6],
        init_scale: 0.5,
        ..ModelConfig::default()
    }
}

fn binary_sequence(rng: &mut impl Rng, steps: usize, pixels: usize) -> Sequence {
    let data = (0..steps * pixels).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    Sequence::new(Tensor::matrix(steps, pixels, data).unwrap(), None)
}

fn noise_for(model: &KvaeModel, rng: &mut impl Rng, steps: usize) -> ElboNoise {
    ElboNoise::draw(rng, steps, model.config.a_dim, model.config.z_dim)
}

#[test]
fn all_ones_mask_reproduces_unmasked_bound_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for variant in [AlphaVariant::Lstm, AlphaVariant::Mlp, AlphaVariant::FifoMlp] {
        let model = KvaeModel::new(ModelConfig { alpha: variant, ..small_config() }, 11).unwrap();
        for _ in 0..5 {
            let steps = rng.random_range(1..7);
            let seq = binary_sequence(&mut rng, steps, 12);
            let noise = noise_for(&model, &mut rng, steps);
            let all = ObservationMask::all_observed(steps);
            let (a, ga) = episode_gradients(&model, &seq, None, &noise, 0.3, MaskedOptions::default()).unwrap();
            let (b, gb) = episode_gradients(&model, &seq, Some(&all), &noise, 0.3, MaskedOptions::default()).unwrap();
            for (x, y) in [
                (a.recon, b.recon),
                (a.lgssm_joint, b.lgssm_joint),
                (a.entropy_q, b.entropy_q),
                (a.neg_post, b.neg_post),
                (a.total, b.total),
                (a.weighted, b.weighted),
            ] {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for ((na, ta), (nb, tb)) in ga.iter().zip(&gb) {
                assert_eq!(na, nb);
                assert!(ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{na}");
            }
        }
    }
}

#[test]
fn decomposition_is_exact_and_unit_weight_matches_total() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = KvaeModel::new(small_config(), 5).unwrap();
    let seq = binary_sequence(&mut rng, 5, 12);
    let noise = noise_for(&model, &mut rng, 5);
    let tape = Tape::new();
    let p = model.params.bind(&tape).unwrap();
    let e = elbo_estimate(&model, &p, &seq, &noise, 1.0).unwrap().values();
    assert_eq!(e.total, e.recon + e.lgssm_joint + e.entropy_q + e.neg_post);
    assert_eq!(e.weighted, e.total);
}

fn log_sigmoid(l: f64) -> f64 {
    -(1.0 + (-l).exp()).ln()
}

#[test]
fn terms_match_direct_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = KvaeModel::new(small_config(), 8).unwrap();
    let steps = 4;
    let seq = binary_sequence(&mut rng, steps, 12);
    let noise = noise_for(&model, &mut rng, steps);
    let tape = Tape::new();
    let p = model.params.bind(&tape).unwrap();
    let e = elbo_estimate(&model, &p, &seq, &noise, 0.3).unwrap();

    let a = Tensor::matrix(steps, 2, e.a.iter().flat_map(|v| v.value().into_data()).collect()).unwrap();
    let z = Tensor::matrix(steps, 3, e.z.iter().flat_map(|v| v.value().into_data()).collect()).unwrap();
    let tv = TimeVaryingParams {
        a: e.params.iter().map(|s| s.a.value()).collect(),
        b: Vec::new(),
        c: e.params.iter().map(|s| s.c.value()).collect(),
    };
    let noise_scales = LgssmGlobals::noise_scales(&model.params).unwrap();
    let all = ObservationMask::all_observed(steps);
    let joint = joint_log_density_terms(&tv, &a, &z, None, &all, noise_scales);
    assert!((e.lgssm_joint.item() - joint).abs() < 1e-10);
    let post = DenseJoint::new(&tv, None, noise_scales).posterior_log_density(&all, &a, &z);
    assert!((e.neg_post.item() + post).abs() < 1e-8 * post.abs().max(1.0));

    // encoder and decoder evaluated pixel by pixel
    let tape2 = Tape::new();
    let p2 = model.params.bind_frozen(&tape2).unwrap();
    let q = model.vae.encode(&p2, tape2.constant(seq.frames.clone()).unwrap()).unwrap();
    let (mu, lv) = (q.mean.value(), q.log_var.value());
    let mut log_q = 0.0;
    for t in 0..steps {
        for j in 0..2 {
            let var = lv.get(t, j).exp();
            let d = a.get(t, j) - mu.get(t, j);
            log_q += -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var);
        }
    }
    assert!((e.entropy_q.item() + log_q).abs() < 1e-10);
    let logits = model.vae.decode_logits(&p2, tape2.constant(a.clone()).unwrap()).unwrap().value();
    let mut recon = 0.0;
    for t in 0..steps {
        for j in 0..12 {
            let (l, x) = (logits.get(t, j), seq.frames.get(t, j));
            recon += x * log_sigmoid(l) + (1.0 - x) * log_sigmoid(-l);
        }
    }
    assert!((e.recon.item() - recon).abs() < 1e-10);
}

#[test]
fn masked_frames_are_never_read() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = KvaeModel::new(small_config(), 2).unwrap();
    let seq = binary_sequence(&mut rng, 5, 12);
    let noise = noise_for(&model, &mut rng, 5);
    let mask = ObservationMask::new(vec![true, false, true, false, true]);
    let mut poisoned = seq.clone();
    for t in [1, 3] {
        for j in 0..12 {
            poisoned.frames.set(t, j, f64::NAN);
        }
    }
    let tape = Tape::new();
    let p = model.params.bind(&tape).unwrap();
    let a = elbo_masked(&model, &p, &seq, &mask, &noise, 0.3, MaskedOptions::default()).unwrap().values();
    let b = elbo_masked(&model, &p, &poisoned, &mask, &noise, 0.3, MaskedOptions::default()).unwrap().values();
    assert_eq!(a, b);
}

#[test]
fn masked_step_leaves_other_recon_and_entropy_terms_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let model = KvaeModel::new(small_config(), 3).unwrap();
    let long = binary_sequence(&mut rng, 5, 12);
    let noise = noise_for(&model, &mut rng, 5);
    let short = Sequence::new(Tensor::matrix(4, 12, long.frames.data()[..48].to_vec()).unwrap(), None);
    let short_noise = ElboNoise {
        enc: Tensor::matrix(4, 2, noise.enc.data()[..8].to_vec()).unwrap(),
        state: Tensor::matrix(4, 3, noise.state.data()[..12].to_vec()).unwrap(),
        pred_z: Tensor::matrix(4, 3, noise.pred_z.data()[..12].to_vec()).unwrap(),
        pred_a: Tensor::matrix(4, 2, noise.pred_a.data()[..8].to_vec()).unwrap(),
    };
    let tape = Tape::new();
    let p = model.params.bind(&tape).unwrap();
    let mask = ObservationMask::new(vec![true, true, false, true, false]);
    let short_mask = ObservationMask::new(vec![true, true, false, true]);
    let a = elbo_masked(&model, &p, &long, &mask, &noise, 0.3, MaskedOptions::default()).unwrap().values();
    let b = elbo_masked(&model, &p, &short, &short_mask, &short_noise, 0.3, MaskedOptions::default())
        .unwrap()
        .values();
    assert_eq!(a.recon.to_bits(), b.recon.to_bits());
    assert_eq!(a.entropy_q.to_bits(), b.entropy_q.to_bits());
}

#[test]
fn sampled_predictive_masked_bound_is_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let model = KvaeModel::new(small_config(), 4).unwrap();
    let seq = binary_sequence(&mut rng, 6, 12);
    let noise = noise_for(&model, &mut rng, 6);
    let mask = ObservationMask::new(vec![true, false, false, true, false, true]);
    let opts = MaskedOptions { sample_predictive: true };
    let (v, grads) = episode_gradients(&model, &seq, Some(&mask), &noise, 0.3, opts).unwrap();
    assert!(v.total.is_finite());
    assert!(grads.iter().all(|(_, g)| g.is_finite()));
}

#[test]
fn full_gradient_matches_finite_differences() {
    let config = ModelConfig {
        a_dim: 1,
        z_dim: 2,
        k: 2,
        height: 2,
        width: 2,
        lstm_hidden: 3,
        alpha_mlp_hidden: vec![4],
        fifo_window: 2,
        vae_hidden: vec![3],
        init_scale: 0.5,
        init_noise: NoiseScales { q: 0.3, r: 0.2, sigma0: 2.0 },
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for variant in [AlphaVariant::Lstm, AlphaVariant::Mlp, AlphaVariant::FifoMlp] {
        let mut model = KvaeModel::new(ModelConfig { alpha: variant, ..config.clone() }, 21).unwrap();
        // zero biases and a0 = 0 put relu units exactly on their kink
        for p in model.params.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
        let seq = binary_sequence(&mut rng, 3, 4);
        let noise = noise_for(&model, &mut rng, 3);
        let probes = elbo_gradient_probes(&model, &seq, None, &noise, 0.3, 1e-5).unwrap();
        assert!(probes.len() > 50);
        for pr in &probes {
            assert!(pr.rel_err() < 1e-4, "{pr:?}");
        }
        let mask = ObservationMask::new(vec![true, false, true]);
        for pr in elbo_gradient_probes(&model, &seq, Some(&mask), &noise, 0.3, 1e-5).unwrap() {
            assert!(pr.rel_err() < 1e-4, "{pr:?}");
        }
    }
}

#[test]
fn frozen_noise_gets_no_gradient_and_alpha_net_does() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let model = KvaeModel::new(ModelConfig { freeze_noise: true, ..small_config() }, 6).unwrap();
    let seq = binary_sequence(&mut rng, 5, 12);
    let noise = noise_for(&model, &mut rng, 5);
    let (_, grads) = episode_gradients(&model, &seq, None, &noise, 0.3, MaskedOptions::default()).unwrap();
    for name in [LgssmGlobals::LOG_Q, LgssmGlobals::LOG_R, LgssmGlobals::LOG_SIGMA0] {
        assert!(grads.iter().all(|(n, _)| n != name));
    }
    let alpha_norm: f64 =
        grads.iter().filter(|(n, _)| n.starts_with("alpha.")).flat_map(|(_, g)| g.data().iter().map(|v| v * v)).sum();
    assert!(alpha_norm > 0.0);
}

#[test]
fn generation_from_full_seed_is_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let model = KvaeModel::new(small_config(), 7).unwrap();
    let seq = binary_sequence(&mut rng, 4, 12);
    let out = generate(&model, 4, None, Some(&seq.frames), &mut rng, GenerateOptions::default()).unwrap();
    let tape = Tape::new();
    let p = model.params.bind_frozen(&tape).unwrap();
    let mean = model.vae.encode(&p, tape.constant(seq.frames.clone()).unwrap()).unwrap().mean;
    assert_eq!(out.a, mean.value());
    assert_eq!(out.frames, model.vae.decode_mean(&p, mean).unwrap().value());
}

#[test]
fn untrained_generation_is_sane() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let model = KvaeModel::new(small_config(), 8).unwrap();
    let seed = binary_sequence(&mut rng, 2, 12);
    for seed_frames in [None, Some(&seed.frames)] {
        let out = generate(&model, 10, None, seed_frames, &mut rng, GenerateOptions::default()).unwrap();
        assert_eq!(out.frames.shape(), &[10, 12]);
        assert!(out.frames.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(out.a.is_finite());
        for t in 0..10 {
            assert!((out.alpha.row_slice(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    let bin = generate(&model, 3, None, None, &mut rng, GenerateOptions { sample: false, binarize: true }).unwrap();
    assert!(bin.frames.data().iter().all(|&v| v == 0.0 || v == 1.0));
}

#[test]
fn gauss_hermite_integrates_polynomials() {
    let (x, w) = gauss_hermite(20);
    let pi = std::f64::consts::PI;
    let moment = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
    assert!((moment(0) - pi.sqrt()).abs() < 1e-12);
    assert!(moment(1).abs() < 1e-12);
    assert!((moment(2) - pi.sqrt() / 2.0).abs() < 1e-12);
    assert!((moment(4) - 3.0 * pi.sqrt() / 4.0).abs() < 1e-11);
}

pub fn linear_toy() -> KvaeModel {
    let config = ModelConfig {
        a_dim: 1,
        z_dim: 1,
        k: 2,
        height: 1,
        width: 1,
        alpha: AlphaVariant::Mlp,
        alpha_mlp_hidden: vec![3],
        vae_hidden: vec![],
        likelihood: Likelihood::Gaussian,
        init_scale: 0.8,
        init_noise: NoiseScales { q: 0.5, r: 0.3, sigma0: 1.5 },
        ..ModelConfig::default()
    };
    let mut model = KvaeModel::new(config, 3).unwrap();
    model.params.value_mut("vae.enc.l0.b").unwrap().data_mut()[1] = -1.0;
    model
}

#[test]
fn single_sample_estimates_average_to_the_quadrature_bound() {
    let model = linear_toy();
    let frames = Tensor::matrix(2, 1, vec![0.7, -0.4]).unwrap();
    let exact = linear_toy_elbo(&model, &frames, 40).unwrap();
    let seq = Sequence::new(frames, None);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 2000;
    let samples: Vec<f64> = (0..n)
        .map(|_| {
            let noise = noise_for(&model, &mut rng, 2);
            kvae_core::oracle::elbo_value(&model, &seq, None, &noise, 1.0).unwrap()
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "mean {mean} exact {exact} se {se}");
}
