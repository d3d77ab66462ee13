use super::*;
use crate::testutil::{randomise, worst_gradient_error};

fn config(backbone: Backbone) -> EncoderConfig {
    EncoderConfig {
        backbone,
        dim: 8,
        num_layers: 2,
        vocab_hash_size: 64,
        seed: 11,
        max_len: 16,
        cnn_filters: 3,
        ..EncoderConfig::default()
    }
}

fn build(backbone: Backbone) -> (ParamStore<f64>, Encoder) {
    let mut store = ParamStore::new();
    let enc = Encoder::new("enc", &config(backbone), &mut store).unwrap();
    (store, enc)
}

#[test]
fn output_shapes() {
    for backbone in [Backbone::ToyTransformer, Backbone::ToyCnn] {
        let (store, enc) = build(backbone);
        let out = enc.encode(&store, "a short test sentence").unwrap();
        assert_eq!(out.layer_reps.len(), 2);
        assert_eq!(out.pooled.len(), 8);
        for rep in &out.layer_reps {
            assert_eq!(rep.cols(), 8);
        }
        let tokens = enc.tokenize("a short test sentence").unwrap().len();
        // the transformer prepends a summary position
        let extra = usize::from(backbone == Backbone::ToyTransformer);
        assert_eq!(out.layer_reps[0].rows(), tokens + extra);
    }
}

#[test]
fn fresh_head_predicts_one_half() {
    for backbone in [Backbone::ToyTransformer, Backbone::ToyCnn] {
        let (store, enc) = build(backbone);
        assert_eq!(enc.encode(&store, "anything at all").unwrap().prob, 0.5);
    }
}

#[test]
fn same_seed_same_parameters() {
    let (a, _) = build(Backbone::ToyTransformer);
    let (b, _) = build(Backbone::ToyTransformer);
    for (id, p) in a.iter() {
        assert_eq!(p.value, *b.get(id));
    }
    let mut c = ParamStore::<f64>::new();
    Encoder::new("enc", &config(Backbone::ToyTransformer).with_seed(12), &mut c).unwrap();
    assert!(a.iter().any(|(id, p)| p.value != *c.get(id)));
}

#[test]
fn hash_seed_changes_representations() {
    let (store, enc) = build(Backbone::ToyTransformer);
    let mut other_cfg = config(Backbone::ToyTransformer);
    other_cfg.hash_seed = 99;
    let mut store2 = ParamStore::<f64>::new();
    let enc2 = Encoder::new("enc", &other_cfg, &mut store2).unwrap();
    let a = enc.encode(&store, "the quick brown fox").unwrap();
    let b = enc2.encode(&store2, "the quick brown fox").unwrap();
    assert_ne!(a.pooled, b.pooled);
}

#[test]
fn layer_range_is_checked() {
    let (store, enc) = build(Backbone::ToyCnn);
    assert!(enc.layer_representation(&store, "some words", 1).is_ok());
    assert!(enc.layer_representation(&store, "some words", 2).is_ok());
    for bad in [0, 3] {
        let err = enc.layer_representation(&store, "some words", bad).unwrap_err();
        assert!(err.to_string().contains("valid layers are 1..=2"), "{err}");
    }
}

#[test]
fn empty_text_is_rejected() {
    let (store, enc) = build(Backbone::ToyTransformer);
    assert!(enc.encode(&store, "   ").is_err());
}

#[test]
fn external_adapter_has_no_builtin_weights() {
    let mut store = ParamStore::<f32>::new();
    let cfg = config(Backbone::ExternalAdapter);
    assert!(matches!(Encoder::new("x", &cfg, &mut store), Err(Error::Encoder(_))));
}

#[test]
fn backbone_names_round_trip() {
    for b in [Backbone::ToyTransformer, Backbone::ToyCnn, Backbone::ExternalAdapter] {
        assert_eq!(b.to_string().parse::<Backbone>().unwrap(), b);
    }
    assert!("lstm".parse::<Backbone>().is_err());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let json = r#"{"backbone":"toy-cnn","dim":8,"num_layers":1,"vocab_hash_size":32,"seed":0,"dropout":0.1}"#;
    assert!(serde_json::from_str::<EncoderConfig>(json).is_err());
}

fn gradient_check(backbone: Backbone) {
    let (mut store, enc) = build(backbone);
    let ids = enc.param_ids().to_vec();
    randomise(&mut store, &ids, 0.5, 3);
    let tokens = enc.tokenize("gradient checks cover every layer here").unwrap();
    let f = |g: &mut Graph<'_, f64>| {
        let vars = enc.forward(g, &tokens).unwrap();
        let first = g.mean(vars.layer_tokens[0]);
        let bce = g.bce_prob(vars.prob, 1.0, 1e-7);
        g.add(first, bce)
    };
    let worst = worst_gradient_error(&mut store, &ids, 4, &f);
    assert!(worst < 1e-4, "{backbone}: worst relative error {worst}");
}

#[test]
fn transformer_gradients_match_finite_differences() {
    gradient_check(Backbone::ToyTransformer);
}

#[test]
fn cnn_gradients_match_finite_differences() {
    gradient_check(Backbone::ToyCnn);
}

#[test]
fn frozen_forward_matches_trainable_forward() {
    let (store, enc) = build(Backbone::ToyTransformer);
    let tokens = enc.tokenize("frozen or not").unwrap();
    let mut g1 = Graph::new(&store);
    let v1 = enc.forward_with(&mut g1, &tokens, true).unwrap();
    let mut g2 = Graph::new(&store);
    let v2 = enc.forward_with(&mut g2, &tokens, false).unwrap();
    assert_eq!(g1.value(v1.pooled), g2.value(v2.pooled));
    assert!(g2.backward(v2.prob).is_empty());
}

#[test]
fn derived_seeds_differ_by_stream() {
    assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
    assert_ne!(derive_seed(0, 1), derive_seed(1, 1));
    assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
}
