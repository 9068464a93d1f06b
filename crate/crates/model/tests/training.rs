use apeorder_core::{l2r_trace, min_edit_script, tokenize};
use apeorder_model::train::dev_ter;
use apeorder_model::{encode, loss, train, Checkpoint, Model, ModelConfig, ModelInput, Target, TrainConfig, TrainExample, Vocab};

fn example(id: &str, src: &str, mt: &str, pe: &str) -> TrainExample {
    let (mt, pe) = (tokenize(mt), tokenize(pe));
    let trace = l2r_trace(&min_edit_script(&mt, &pe));
    TrainExample { id: id.into(), src: tokenize(src), mt, pe, trace }
}

fn data() -> Vec<TrainExample> {
    vec![
        example("a", "s1 s2 s3", "t1 t9 t3", "t1 t2 t3"),
        example("b", "s4 s5", "t5 t4", "t4 t5"),
        example("c", "s6", "t6", "t6"),
    ]
}

fn small_model(examples: &[TrainExample], seed: u64) -> Model {
    let vocab = Vocab::build(examples.iter().flat_map(|e| e.src.iter().chain(&e.mt).chain(&e.pe)).map(String::as_str));
    let config = ModelConfig { layers: 1, hidden: 16, heads: 2, ffn: 32, max_len: 16, vocab_size: vocab.len() };
    Model::init(config, vocab, 0.02, seed).unwrap()
}

fn config() -> TrainConfig {
    TrainConfig { peak_lr: 1e-3, warmup_steps: 5, max_steps: 30, checkpoint_interval: 10, tokens_per_batch: 20, ..Default::default() }
}

#[test]
fn equal_seeds_give_equal_runs() {
    let d = data();
    let a = train(small_model(&d, 1), &d, &d, &config(), |_| Ok(())).unwrap();
    let b = train(small_model(&d, 1), &d, &d, &config(), |_| Ok(())).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.last, b.last);
    assert_eq!(a.log.len(), 30);
    assert!(a.log.iter().all(|r| r.loss.is_finite()));
    let c = train(small_model(&d, 1), &d, &d, &TrainConfig { seed: 9, ..config() }, |_| Ok(())).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn checkpoints_and_selection() {
    let d = data();
    let dir = tempfile::tempdir().unwrap();
    let mut seen = Vec::new();
    let out = train(small_model(&d, 2), &d, &d, &config(), |c| {
        let path = dir.path().join(format!("step{}.json", c.step));
        c.save(&path)?;
        seen.push((c.step, c.dev_ter, path));
        Ok(())
    })
    .unwrap();
    assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), vec![10, 20, 30]);
    let best = seen.iter().filter_map(|s| s.1).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_dev_ter, Some(best));
    let (_, ter, path) = seen.iter().find(|s| s.0 == out.best_step).unwrap();
    assert_eq!(*ter, Some(best));
    let loaded = Checkpoint::load(path).unwrap();
    assert_eq!(loaded.model, out.best);
    assert_eq!(dev_ter(&loaded.model, &d, 50).unwrap(), best);
    let logged: Vec<usize> = out.log.iter().filter(|r| r.dev_ter.is_some()).map(|r| r.step).collect();
    assert_eq!(logged, vec![10, 20, 30]);
}

#[test]
fn bad_trace_is_reported() {
    let mut d = data();
    d[1].trace = "D:0:t5 STOP".parse().unwrap();
    let err = train(small_model(&d, 3), &d, &[], &config(), |_| Ok(())).unwrap_err();
    assert!(err.to_string().contains("`b`"), "{err}");
}

#[test]
fn peaked_parameters_drive_the_loss_to_zero() {
    let d = data();
    let mut m = small_model(&d, 4);
    let x = ModelInput::new(&m.vocab, &d[2].src, &d[2].mt, 16).unwrap();
    let h = encode(&m, &x).unwrap();
    let stop = Target::from_action(&m.vocab, &x, &apeorder_core::EditAction::Stop).unwrap();
    let edit = m.layout().edit;
    let mut previous = f64::INFINITY;
    for scale in [1e2, 1e3, 1e4] {
        // Column 0 aligned with the <T> row; the other DEL logits are dot products with it.
        let hr = h.row(x.end_row()).to_owned();
        let others = (x.start_row + 1..x.end_row()).map(|r| h.row(r).dot(&hr)).fold(f64::NEG_INFINITY, f64::max);
        assert!(others < hr.dot(&hr));
        m.view_mut(edit).column_mut(0).assign(&(&hr * scale));
        m.view_mut(edit).column_mut(1).fill(0.0);
        let l = loss(&m, &x, stop, 0.0).unwrap();
        assert!(l <= previous);
        previous = l;
    }
    assert!(previous < 1e-6, "{previous}");
}
