mod support;

use inod::encoder::{EncoderConfig, FeaturePyramid, Network};
use inod::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::injection::{empty_mask_is_plain, injection_mismatches, random_case, toy};
use support::random_tensor;

#[test]
fn composite_is_noise_inside_and_source_outside() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        assert_eq!(injection_mismatches(&random_case(&mut rng)), 0);
    }
}

#[test]
fn empty_mask_reproduces_plain_encoding_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        assert!(empty_mask_is_plain(&random_case(&mut rng)));
    }
}

#[test]
fn first_level_sees_only_its_own_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let case = random_case(&mut rng);
        let noise = case.net.encode_plain(&case.noise).unwrap();
        let comp = case.net.encode_with_injection(&case.source, &noise, &case.layers).unwrap();
        let other_noise = case.net.encode_plain(&random_tensor(case.noise.shape(), &mut rng)).unwrap();
        let comp_n = case.net.encode_with_injection(&case.source, &other_noise, &case.layers).unwrap();
        let other_source = random_tensor(case.source.shape(), &mut rng);
        let comp_s = case.net.encode_with_injection(&other_source, &noise, &case.layers).unwrap();
        let grid = &case.layers.layer_grids[0];
        let (c, h, w) = comp.levels[0].chw("test").unwrap();
        for i in 0..c * h * w {
            let cell = i % (h * w);
            if grid.cells()[cell] {
                assert_eq!(comp.levels[0].data()[i], comp_s.levels[0].data()[i]);
            } else {
                assert_eq!(comp.levels[0].data()[i], comp_n.levels[0].data()[i]);
            }
        }
    }
}

#[test]
fn neck_of_constant_pyramid_is_constant_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..50 {
        let cfg = toy(&mut rng);
        let net = Network::<f64>::init(&cfg).unwrap();
        let consts: Vec<Vec<f64>> = cfg.channels.iter().map(|&c| (0..c).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let top = 1usize << (cfg.levels() - 1);
        let pyramid = FeaturePyramid {
            levels: consts
                .iter()
                .enumerate()
                .map(|(l, v)| {
                    let s = 2 * top >> l;
                    Tensor::from_vec(&[v.len(), s, s], v.iter().flat_map(|&c| std::iter::repeat_n(c, s * s)).collect()).unwrap()
                })
                .collect(),
            strides: cfg.cumulative_strides(),
        };
        let out = (3 * top, 2 * top);
        let fused = net.neck(&pyramid, out).unwrap();
        assert_eq!(fused.shape(), &[cfg.neck_channels, out.0, out.1]);
        for k in 0..cfg.neck_channels {
            let mut expect = 0.0;
            for (l, v) in consts.iter().enumerate() {
                let w = net.param(&format!("neck{}.weight", l + 1)).unwrap();
                let b = net.param(&format!("neck{}.bias", l + 1)).unwrap();
                expect += b.data()[k] + v.iter().enumerate().map(|(c, &x)| w.data()[k * v.len() + c] * x).sum::<f64>();
            }
            for &got in &fused.data()[k * out.0 * out.1..(k + 1) * out.0 * out.1] {
                assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
            }
        }
    }
}

#[test]
fn level_extents_follow_cumulative_strides() {
    let cfg = EncoderConfig::default();
    let net = Network::<f32>::init(&cfg).unwrap();
    let img = Tensor::zeros(&[3, 224, 224]);
    let pyr = net.encode_plain(&img).unwrap();
    assert_eq!(pyr.strides, vec![4, 8, 16, 32]);
    assert_eq!(pyr.dims(), vec![(56, 56), (28, 28), (14, 14), (7, 7)]);
    assert_eq!(pyr.levels[3].shape()[0], 128);
}
