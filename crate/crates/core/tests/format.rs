use codec_core::zoo::format::{model_from_envelope, Envelope};
use codec_core::zoo::{load_model, save_model};
use codec_core::{CodecError, LayerSpec, ModelSpec, Tap, Tensor};
use proptest::prelude::*;
use serde_json::json;

/// Writes the envelope layout byte by byte, without going through the crate.
fn hand_written(header: serde_json::Value, blocks: &[(&str, Vec<usize>, Vec<f64>)]) -> Vec<u8> {
    let mut header = header;
    header["blocks"] = blocks.iter().map(|(n, s, _)| json!({ "name": n, "shape": s })).collect();
    let h = serde_json::to_vec(&header).unwrap();
    let mut out = b"CDEC".to_vec();
    out.extend_from_slice(&1u32.to_le_bytes());
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&h);
    for (_, _, data) in blocks {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn two_layer_bytes() -> Vec<u8> {
    let header = json!({
        "kind": "model",
        "input_shape": [3],
        "layers": [
            { "kind": "dense", "weight_shape": [2, 3] },
            { "kind": "relu" },
            { "kind": "dense", "weight_shape": [1, 2] },
        ],
        "taps": [{ "name": "h", "layer": 1 }],
    });
    hand_written(
        header,
        &[
            ("layer0.weight", vec![2, 3], vec![1.0, -2.0, 0.5, 0.0, 1.0, 1.0]),
            ("layer0.bias", vec![2], vec![0.25, -0.5]),
            ("layer2.weight", vec![1, 2], vec![2.0, -1.0]),
            ("layer2.bias", vec![1], vec![0.125]),
        ],
    )
}

#[test]
fn reads_independently_written_model() {
    let env = Envelope::from_bytes(&two_layer_bytes()).unwrap();
    let model = model_from_envelope(&env).unwrap();
    let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
    // h = relu([1 - 4 + 1.5 + 0.25, 0 + 2 + 3 - 0.5]) = [0, 4.5]
    let trace = model.forward(&x).unwrap();
    assert_eq!(trace.activation("h").unwrap().data(), &[0.0, 4.5]);
    assert_eq!(trace.output().data(), &[-4.5 + 0.125]);
}

#[test]
fn writer_matches_independent_layout() {
    let env = Envelope::from_bytes(&two_layer_bytes()).unwrap();
    let model = model_from_envelope(&env).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cdec");
    save_model(&path, &model).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"CDEC");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let n = bytes.len();
    assert_eq!(u32::from_le_bytes(bytes[n - 4..].try_into().unwrap()), crc32fast::hash(&bytes[..n - 4]));
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload = &bytes[16 + header_len..n - 4];
    assert_eq!(payload.len(), 8 * (6 + 2 + 2 + 1));
    assert_eq!(f64::from_le_bytes(payload[8..16].try_into().unwrap()), -2.0);
}

#[test]
fn every_single_byte_corruption_is_detected() {
    let bytes = two_layer_bytes();
    for i in 0..bytes.len() {
        let mut bad = bytes.clone();
        bad[i] ^= 0x10;
        assert!(Envelope::from_bytes(&bad).is_err(), "flip at byte {i} went unnoticed");
    }
}

#[test]
fn checksum_error_reports_both_values() {
    let mut bytes = two_layer_bytes();
    let n = bytes.len();
    bytes[n - 10] ^= 1;
    match Envelope::from_bytes(&bytes) {
        Err(CodecError::Checksum { stored, computed }) => assert_ne!(stored, computed),
        other => panic!("expected a checksum error, got {other:?}"),
    }
}

#[test]
fn missing_file_is_a_missing_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_model(&dir.path().join("absent.cdec")).unwrap_err();
    assert!(matches!(err, CodecError::MissingArtifact(_)));
}

fn arb_model() -> impl Strategy<Value = ModelSpec> {
    (1usize..4, 2usize..5, 1usize..4, prop::collection::vec(-3.0f64..3.0, 64)).prop_map(|(ci, co, k, pool)| {
        let side = 5;
        let mut vals = pool.into_iter().cycle();
        let mut take = |n: usize| -> Vec<f64> { (0..n).map(|_| vals.next().unwrap()).collect() };
        let out_side = side - k + 1;
        let flat = co * out_side * out_side;
        let layers = vec![
            LayerSpec::Conv2d {
                weight: Tensor::new(vec![co, ci, k, k], take(co * ci * k * k)).unwrap(),
                bias: Tensor::new(vec![co], take(co)).unwrap(),
                stride: 1,
                padding: 0,
            },
            LayerSpec::Softplus,
            LayerSpec::Flatten,
            LayerSpec::Dense {
                weight: Tensor::new(vec![3, flat], take(3 * flat)).unwrap(),
                bias: Tensor::new(vec![3], take(3)).unwrap(),
            },
        ];
        ModelSpec::new(vec![ci, side, side], layers, vec![Tap { name: "c".into(), layer: 1 }]).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn model_roundtrip_preserves_outputs(model in arb_model()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cdec");
        save_model(&path, &model).unwrap();
        let back = load_model(&path).unwrap();
        let x = Tensor::full(model.input_shape(), 0.3);
        prop_assert!(model.forward(&x).unwrap().output().bit_eq(back.forward(&x).unwrap().output()));
        prop_assert_eq!(model.layers().len(), back.layers().len());
        prop_assert_eq!(model.taps(), back.taps());
    }
}
