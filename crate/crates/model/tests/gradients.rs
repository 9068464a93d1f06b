use apeorder_model::network::loss_and_grad;
use apeorder_model::{loss, Model, ModelConfig, ModelInput, Target, Vocab};

fn toy(seed: u64) -> Model {
    let vocab = Vocab::build(["a", "b", "c"]);
    let config = ModelConfig { layers: 2, hidden: 8, heads: 2, ffn: 16, max_len: 10, vocab_size: vocab.len() };
    Model::init(config, vocab, 0.5, seed).unwrap()
}

/// Relative error per tensor between the analytic gradient and central differences.
fn check(model: &Model, input: &ModelInput, target: Target, smoothing: f64) -> Vec<(String, f64)> {
    let mut analytic = vec![0.0; model.num_params()];
    loss_and_grad(model, input, target, smoothing, None, &mut analytic).unwrap();
    let step = 1e-5;
    let mut probe = model.clone();
    let mut out = Vec::new();
    for t in &model.layout().tensors {
        let mut diff = 0.0;
        let (mut na, mut nn) = (0.0, 0.0);
        for i in t.range() {
            let orig = probe.params[i];
            probe.params[i] = orig + step;
            let up = loss(&probe, input, target, smoothing).unwrap();
            probe.params[i] = orig - step;
            let down = loss(&probe, input, target, smoothing).unwrap();
            probe.params[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            diff += (analytic[i] - numeric).powi(2);
            na += analytic[i].powi(2);
            nn += numeric.powi(2);
        }
        let scale = na.sqrt().max(nn.sqrt());
        // The key bias has an identically zero gradient (a shared shift of
        // all keys cancels in the softmax), so both sides are rounding noise.
        let rel = if scale < 1e-7 { diff.sqrt() } else { diff.sqrt() / scale };
        out.push((t.name.clone(), rel));
    }
    out
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..3 {
        let m = toy(seed);
        let input = ModelInput::new(&m.vocab, &["a", "b", "c"], &["c", "a", "b", "b"], 10).unwrap();
        assert_eq!(input.len(), 10);
        let targets = [
            Target::from_action(&m.vocab, &input, &"I:2:c".parse().unwrap()).unwrap(),
            Target::from_action(&m.vocab, &input, &"D:1:a".parse().unwrap()).unwrap(),
            Target::from_action(&m.vocab, &input, &"STOP".parse().unwrap()).unwrap(),
        ];
        for target in targets {
            for (name, rel) in check(&m, &input, target, 0.1) {
                assert!(rel < 1e-4, "seed {seed} {target:?} {name}: {rel:e}");
            }
        }
    }
}

#[test]
fn every_tensor_receives_gradient() {
    let m = toy(9);
    let input = ModelInput::new(&m.vocab, &["a"], &["b", "c"], 10).unwrap();
    let target = Target::from_action(&m.vocab, &input, &"I:0:a".parse().unwrap()).unwrap();
    let mut g = vec![0.0; m.num_params()];
    loss_and_grad(&m, &input, target, 0.1, None, &mut g).unwrap();
    for t in m.layout().tensors.iter().filter(|t| !t.name.ends_with("attn.key.bias")) {
        assert!(g[t.range()].iter().any(|&x| x.abs() > 1e-12), "{}", t.name);
    }
}
