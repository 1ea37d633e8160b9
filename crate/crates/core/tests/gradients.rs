use speech_simclr::nn::gradcheck::{check_model, primitive_suite, ModelCheck};

#[test]
fn every_primitive_passes() {
    let suite = primitive_suite().unwrap();
    assert!(suite.len() >= 30);
    for (name, rep) in &suite {
        assert!(rep.passed(), "{name}: {rep:?}");
    }
}

#[test]
fn toy_model_combined_loss() {
    let rep = check_model(&ModelCheck::toy(3)).unwrap();
    assert!(rep.passed(), "worst {} in {:?}", rep.worst(), rep.entries.iter().filter(|e| !e.passed).collect::<Vec<_>>());
    assert!(rep.entries.iter().any(|e| e.name == "layers.1.attn.wq"));
}

#[test]
fn toy_model_with_prenet() {
    let mut chk = ModelCheck::toy(4);
    chk.encoder.use_prenet = true;
    chk.encoder.prenet_channels = 6;
    chk.encoder.num_layers = 1;
    chk.frames = 9;
    let rep = check_model(&chk).unwrap();
    assert!(rep.passed(), "worst {}", rep.worst());
    assert!(rep.entries.iter().any(|e| e.name == "prenet.conv2.w"));
}
