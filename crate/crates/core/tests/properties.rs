use codec_core::contrib::{
    actgrad, batch_contributions, hidden_ig, hidden_ig_with_rule, ig_input, BaselineSpec, ContribMethod, Execution,
    RiemannRule, TargetSpec,
};
use codec_core::metrics::{channel_sum, ei_split_sum, hoyer_sparsity};
use codec_core::{ChannelMask, LayerSpec, ModelSpec, Tap, Tensor};
use proptest::prelude::*;

fn tensor(shape: &[usize], vals: &[f64]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), vals.iter().copied().cycle().take(n).collect()).unwrap()
}

/// dense(4→5) → relu → dense(5→5) → softplus → dense(5→3); taps after each block.
fn mlp(vals: &[f64]) -> ModelSpec {
    let layers = vec![
        LayerSpec::Dense {
            weight: tensor(&[5, 4], vals),
            bias: tensor(&[5], &vals[3..]),
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            weight: tensor(&[5, 5], &vals[5..]),
            bias: tensor(&[5], &vals[1..]),
        },
        LayerSpec::Softplus,
        LayerSpec::Dense {
            weight: tensor(&[3, 5], &vals[7..]),
            bias: tensor(&[3], &vals[2..]),
        },
    ];
    let taps = vec![
        Tap { name: "a".into(), layer: 1 },
        Tap { name: "b".into(), layer: 3 },
    ];
    ModelSpec::new(vec![4], layers, taps).unwrap()
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, 32)
}

fn input() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, 4).prop_map(Tensor::from_vec)
}

fn target_gap(model: &ModelSpec, x: &Tensor, target: &TargetSpec) -> f64 {
    let out = model.forward(x).unwrap();
    let resolved = target.resolve(out.output()).unwrap();
    let base = model.forward(&Tensor::zeros(&[4])).unwrap();
    resolved.value(out.output()) - resolved.value(base.output())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Past the last nonlinearity the network is affine, so (h - h(0)) ⊙ ∂y/∂h
    // already satisfies completeness there.
    #[test]
    fn actgrad_is_complete_before_affine_head(vals in weights(), x in input()) {
        let model = mlp(&vals);
        let target = TargetSpec::new(codec_core::TargetKind::SingleOutput { index: 1 });
        let c = actgrad(&model, &x, "b", &target, &BaselineSpec::ZeroInput).unwrap();
        let dy = target_gap(&model, &x, &target);
        prop_assert!((c.values.sum() - dy).abs() <= 1e-10 * dy.abs().max(1.0));
    }

    #[test]
    fn hidden_ig_converges_to_the_target_gap(vals in weights(), x in input()) {
        let model = mlp(&vals);
        let target = TargetSpec::new(codec_core::TargetKind::SingleOutput { index: 0 });
        let dy = target_gap(&model, &x, &target);
        let c = hidden_ig(&model, &x, "a", &target, &BaselineSpec::ZeroInput, 4096).unwrap();
        prop_assert!((c.values.sum() - dy).abs() <= 1e-3 * dy.abs().max(1.0));
    }

    // Summed over channels, the tangent rule is the input-space IG sum.
    #[test]
    fn tangent_rule_total_matches_input_ig(vals in weights(), x in input()) {
        let model = mlp(&vals);
        let target = TargetSpec::top1();
        let c = hidden_ig_with_rule(&model, &x, "a", &target, &BaselineSpec::ZeroInput, 16, RiemannRule::Tangent).unwrap();
        let ig = ig_input(&model, &x, &target, &BaselineSpec::ZeroInput, 16).unwrap();
        prop_assert!((c.values.sum() - ig.sum()).abs() <= 1e-10 * ig.sum().abs().max(1.0));
    }

    #[test]
    fn contributions_scale_with_the_readout(vals in weights(), x in input(), c in 0.1f64..4.0) {
        let model = mlp(&vals);
        let mut layers = model.layers().to_vec();
        if let LayerSpec::Dense { weight, bias } = &mut layers[4] {
            *weight = weight.scale(c);
            *bias = bias.scale(c);
        }
        let scaled = ModelSpec::new(vec![4], layers, model.taps().to_vec()).unwrap();
        let target = TargetSpec::new(codec_core::TargetKind::SingleOutput { index: 2 });
        for tap in ["a", "b"] {
            let base = actgrad(&model, &x, tap, &target, &BaselineSpec::ZeroHidden).unwrap();
            let other = actgrad(&scaled, &x, tap, &target, &BaselineSpec::ZeroHidden).unwrap();
            let diff = other.values.sub(&base.values.scale(c)).max_abs();
            prop_assert!(diff <= 1e-12 * base.values.max_abs().max(1.0) * c);
            let ig = hidden_ig(&model, &x, tap, &target, &BaselineSpec::ZeroInput, 8).unwrap();
            let ig_s = hidden_ig(&scaled, &x, tap, &target, &BaselineSpec::ZeroInput, 8).unwrap();
            prop_assert!(ig_s.values.sub(&ig.values.scale(c)).max_abs() <= 1e-12 * ig.values.max_abs().max(1.0) * c);
        }
    }

    #[test]
    fn hoyer_is_scale_invariant_and_bounded(v in prop::collection::vec(-5.0f64..5.0, 2..40), c in 1e-3f64..1e3) {
        prop_assume!(v.iter().any(|x| x.abs() > 1e-9));
        let h = hoyer_sparsity(&v).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
        let flipped: Vec<f64> = v.iter().map(|x| -x).collect();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&h));
        prop_assert!((hoyer_sparsity(&scaled).unwrap() - h).abs() <= 1e-9);
        prop_assert!((hoyer_sparsity(&flipped).unwrap() - h).abs() <= 1e-12);
    }

    #[test]
    fn ei_split_partitions_the_channel_sum(vals in prop::collection::vec(-3.0f64..3.0, 24)) {
        let t = Tensor::new(vec![2, 3, 4], vals).unwrap();
        let (pos, neg) = ei_split_sum(&t, &[1, 2]).unwrap();
        let net = channel_sum(&t, &[1, 2]).unwrap();
        prop_assert!(pos.data().iter().all(|&p| p >= 0.0));
        prop_assert!(neg.data().iter().all(|&n| n <= 0.0));
        prop_assert!(pos.add(&neg).sub(&net).max_abs() <= 1e-12);
    }

    #[test]
    fn full_mask_is_the_identity(vals in weights(), x in input()) {
        let model = mlp(&vals);
        let plain = model.forward(&x).unwrap();
        let masked = model.forward_masked(&x, &ChannelMask::all("a", 5)).unwrap();
        prop_assert!(plain.output().bit_eq(masked.output()));
    }

    #[test]
    fn masked_channels_are_zero_and_the_rest_untouched(vals in weights(), x in input(), keep in prop::collection::vec(any::<bool>(), 5)) {
        let model = mlp(&vals);
        let mask = ChannelMask { tap: "a".into(), keep: keep.clone() };
        let plain = model.forward(&x).unwrap();
        let masked = model.forward_masked(&x, &mask).unwrap();
        let (h, hm) = (plain.activation("a").unwrap(), masked.activation("a").unwrap());
        for (c, &k) in keep.iter().enumerate() {
            prop_assert_eq!(hm.data()[c], if k { h.data()[c] } else { 0.0 });
        }
        // zeroing every channel leaves only the downstream biases
        let none = model.forward_masked(&x, &ChannelMask::all("a", 5).complement()).unwrap();
        let other = model.forward_masked(&Tensor::from_vec(vec![0.7, -0.2, 1.0, 3.0]), &ChannelMask::all("a", 5).complement()).unwrap();
        prop_assert!(none.output().bit_eq(other.output()));
    }
}

#[test]
fn parallel_and_serial_batches_are_bit_identical() {
    let vals: Vec<f64> = (0..32).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect();
    let model = mlp(&vals);
    let inputs: Vec<Tensor> = (0..40)
        .map(|i| Tensor::from_vec((0..4).map(|j| ((i * 7 + j * 3) % 9) as f64 / 3.0 - 1.5).collect()))
        .collect();
    let target = TargetSpec::top1();
    for method in [ContribMethod::default_ig(), ContribMethod::actgrad(), ContribMethod::hinput_grad()] {
        let s = batch_contributions(&model, &inputs, "a", &target, &method, Execution::Serial).unwrap();
        let p = batch_contributions(&model, &inputs, "a", &target, &method, Execution::Parallel).unwrap();
        assert!(s.iter().zip(&p).all(|(a, b)| a.values.bit_eq(&b.values)));
    }
}

#[test]
fn increment_rule_is_exact_for_affine_downstream() {
    let vals: Vec<f64> = (0..32).map(|i| ((i * 13 % 7) as f64 - 3.0) / 2.0).collect();
    let model = mlp(&vals);
    let x = Tensor::from_vec(vec![0.5, -1.0, 2.0, 0.25]);
    let target = TargetSpec::new(codec_core::TargetKind::SingleOutput { index: 0 });
    let dy = target_gap(&model, &x, &target);
    for m in [1, 3, 10] {
        let c = hidden_ig(&model, &x, "b", &target, &BaselineSpec::ZeroInput, m).unwrap();
        assert!((c.values.sum() - dy).abs() < 1e-10, "m={m}");
    }
}

#[test]
fn algorithm_names_match_their_ids() {
    use codec_core::inputmap::MapAlgorithm;
    use codec_core::Algorithm;
    for a in [Algorithm::ActGrad, Algorithm::HInputGrad, Algorithm::HiddenIg] {
        assert_eq!(serde_json::to_value(a).unwrap(), a.id());
        assert_eq!(serde_json::from_value::<Algorithm>(a.id().into()).unwrap(), a);
        assert_eq!(a.id().parse::<Algorithm>().unwrap(), a);
    }
    for a in [MapAlgorithm::InputGrad, MapAlgorithm::ActGradDecomp, MapAlgorithm::HigDecomp] {
        assert_eq!(serde_json::to_value(a).unwrap(), a.id());
        assert_eq!(a.id().parse::<MapAlgorithm>().unwrap(), a);
    }
}
