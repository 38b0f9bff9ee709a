use std::path::PathBuf;

use mssfc::network::{ModelConfig, Network};
use mssfc::{Rng, Shape, Tape, Tensor};

/// One `name shape` line per parameter, in registration order.
fn census(cfg: &ModelConfig) -> String {
    let (_, store) = Network::new::<f32>(cfg).unwrap();
    let mut out: String = store
        .iter()
        .map(|(_, p)| format!("{} {}\n", p.name, p.value.shape()))
        .collect();
    out += &format!("total {}\n", store.numel());
    out
}

/// Compare against `tests/golden/<name>`; set `MSSFC_BLESS=1` to rewrite it.
fn check_golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("MSSFC_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).expect("golden file present");
    assert!(expected == actual, "{name} differs from the golden census");
}

#[test]
fn default_parameter_census() {
    check_golden("census_default.txt", &census(&ModelConfig::default()));
}

#[test]
fn tiny_parameter_census() {
    check_golden("census_tiny.txt", &census(&ModelConfig::tiny()));
}

#[test]
fn encoder_is_siamese_and_difference_term_is_symmetric() {
    let cfg = ModelConfig::tiny();
    let (net, store) = Network::new::<f64>(&cfg).unwrap();
    let mut rng = Rng::new(8);
    let img = Shape::new(2, 3, 32, 32);
    let mut tape = Tape::new();
    let a = tape.constant(rng.uniform_tensor(img, 0.0, 1.0));
    let b = tape.constant(rng.uniform_tensor(img, 0.0, 1.0));
    let fwd = net.encode(&mut tape, &store, a, b).unwrap();
    let rev = net.encode(&mut tape, &store, b, a).unwrap();
    for s in 0..cfg.stages {
        assert_eq!(tape.value(fwd.f1[s]), tape.value(rev.f2[s]), "stage {s}");
        assert_eq!(tape.value(fwd.f2[s]), tape.value(rev.f1[s]), "stage {s}");
        assert_eq!(tape.value(fwd.diff_terms[s]), tape.value(rev.diff_terms[s]), "stage {s}");
    }
}

#[test]
fn zero_task_embedding_predicts_one_half() {
    let cfg = ModelConfig::tiny();
    let (net, store) = Network::new::<f64>(&cfg).unwrap();
    let mut rng = Rng::new(9);
    let img = Shape::new(1, 3, 32, 32);
    let mut tape = Tape::new();
    let a = tape.constant(rng.uniform_tensor(img, 0.0, 1.0));
    let b = tape.constant(rng.uniform_tensor(img, 0.0, 1.0));
    let pyr = net.encode(&mut tape, &store, a, b).unwrap();
    let zero = Tensor::zeros(Shape::new(1, cfg.decoder_dim, 1, 1));
    let e = tape.constant(zero);
    let masks = net.predict_masks(&mut tape, &store, &pyr, &[e; 3]).unwrap();
    for p in masks.probs {
        let v = tape.value(p);
        assert_eq!(v.shape(), Shape::new(1, 1, 32, 32));
        assert!(v.data().iter().all(|&x| x == 0.5));
    }
}
