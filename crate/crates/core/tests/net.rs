use depthkit::net::blocks::TransformerBlock;
use depthkit::net::{probe_receptive_field, receptive_field, NetConfig, Network, StageBlock};
use depthkit::ImageGrid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(h: usize, w: usize, seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageGrid::new(h, w, 3, (0..h * w * 3).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

fn small_config() -> NetConfig {
    NetConfig::parse_kv(
        "dims = 8, 16, 32\ndepth = 2, 1, 2\ntransformer_blocks = 1, 0, 1\n\
         dilations = 2; 1; 3\ndecoder_channels = 4, 8, 8\nheads = 1, 2, 1\n",
    )
    .unwrap()
}

fn assert_contracts(net: &Network, h: usize, w: usize, seed: u64) {
    let out = net.forward(&random_image(h, w, seed)).unwrap();
    for (i, f) in out.features.levels.iter().enumerate() {
        let stride = 4 << i;
        assert_eq!(f.shape(), (h / stride, w / stride, net.config.dims[i]));
    }
    assert_eq!(
        out.scales.keys().copied().collect::<Vec<_>>(),
        net.config.scales
    );
    for (&s, o) in &out.scales {
        assert_eq!(o.disparity.shape(), (h >> s, w >> s, 1));
        assert_eq!(o.normals.shape(), (h >> s, w >> s, 3));
        assert!(o.disparity.data().iter().all(|&v| v > 0.0 && v < 1.0));
        for n in o.normals.data().chunks(3) {
            let norm = (n.iter().map(|v| (*v as f64).powi(2)).sum::<f64>()).sqrt();
            assert!((norm - 1.0).abs() <= 1e-5, "norm {norm}");
        }
    }
}

#[test]
fn default_network_shapes_at_64() {
    let net = Network::new(NetConfig::default(), 3).unwrap();
    assert_contracts(&net, 64, 64, 1);
}

#[test]
fn non_square_input() {
    let net = Network::new(small_config(), 3).unwrap();
    assert_contracts(&net, 32, 80, 2);
}

#[test]
fn skips_disabled_still_produce_all_scales() {
    let mut cfg = small_config();
    cfg.use_skips = false;
    let net = Network::new(cfg, 9).unwrap();
    assert_contracts(&net, 48, 48, 4);
}

#[test]
fn scale_subset() {
    let mut cfg = small_config();
    cfg.scales = vec![1];
    let net = Network::new(cfg, 9).unwrap();
    let out = net.forward(&random_image(32, 32, 0)).unwrap();
    assert_eq!(out.scales.len(), 1);
    assert_eq!(out.scales[&1].disparity.shape(), (16, 16, 1));
}

#[test]
fn zero_and_extreme_inputs_stay_finite() {
    let net = Network::new(small_config(), 1).unwrap();
    for fill in [0.0f32, 1.0, 255.0] {
        let out = net.forward(&ImageGrid::filled(32, 32, 3, fill)).unwrap();
        for o in out.scales.values() {
            assert!(o
                .disparity
                .data()
                .iter()
                .all(|v| v.is_finite() && *v > 0.0 && *v < 1.0));
            assert!(o.normals.data().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn same_seed_same_weights_different_seed_differs() {
    let a = Network::new(small_config(), 11).unwrap();
    let b = Network::new(small_config(), 11).unwrap();
    let c = Network::new(small_config(), 12).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_ne!(a.weights, c.weights);
    let x = random_image(32, 32, 5);
    assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
}

#[test]
fn worker_count_does_not_change_bits() {
    let net = Network::new(small_config(), 21).unwrap();
    let x = random_image(48, 32, 8);
    let one = net.forward_with_workers(&x, 1).unwrap();
    for workers in [2, 8] {
        assert_eq!(net.forward_with_workers(&x, workers).unwrap(), one);
    }
}

#[test]
fn attention_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let block = TransformerBlock::new(&mut rng, 16, 4, 2.0);
    let x = ImageGrid::new(
        5,
        3,
        16,
        (0..5 * 3 * 16).map(|_| rng.gen_range(-3.0..3.0)).collect(),
    )
    .unwrap();
    let probs = block.attention_probs(&x);
    assert_eq!(probs.len(), 4);
    for head in &probs {
        assert_eq!(head.len(), 15);
        for row in head {
            assert!(row.iter().all(|p| *p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn transformer_blocks_trail_each_stage() {
    let net = Network::new(small_config(), 0).unwrap();
    for (i, stage) in net.weights.stages.iter().enumerate() {
        let t = net.config.transformer_blocks[i];
        let n = stage.len();
        for (j, b) in stage.iter().enumerate() {
            assert_eq!(matches!(b, StageBlock::Transformer(_)), j >= n - t);
        }
    }
}

#[test]
fn param_count_is_positive_and_seed_independent() {
    let a = Network::new(NetConfig::default(), 0).unwrap();
    let b = Network::new(NetConfig::default(), 1).unwrap();
    assert!(a.weights.param_count() > 100_000);
    assert_eq!(a.weights.param_count(), b.weights.param_count());
}

#[test]
fn bad_configs_are_rejected() {
    assert!(NetConfig::parse_kv("scales = 0, 3").is_err());
    assert!(NetConfig::parse_kv("dims = 32, 64, 100\nheads = 1, 2, 3").is_err());
    assert!(NetConfig::parse_kv("input_std = 0.2, 0, 0.2").is_err());
    assert!(NetConfig::parse_kv("dilations = 1,2; 1,2").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn receptive_field_probe_agrees(k in prop::sample::select(vec![1usize, 3, 5, 7]), d in 1usize..5, seed in 0u64..100) {
        prop_assert_eq!(probe_receptive_field(k, d, seed).unwrap(), receptive_field(k, d).unwrap());
    }

    #[test]
    fn output_shapes_follow_input(hm in 1usize..4, wm in 1usize..4, seed in 0u64..1000) {
        let net = Network::new(small_config(), seed).unwrap();
        assert_contracts(&net, 16 * hm, 16 * wm, seed);
    }
}
