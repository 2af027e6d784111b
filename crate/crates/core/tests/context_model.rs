use sceme::numkit::softmax;
use sceme::sceme::{
    clean_accuracy, extract_context_profiles, message_pass, train_sceme, ScemeConfig, ScemeHyper, ScemeModel,
};
use sceme::synthworld::{Corpus, Scene, World, WorldConfig};

fn world() -> World {
    World::new(WorldConfig {
        signature_scale: 2.0,
        ..Default::default()
    })
    .unwrap()
}

fn hyper(epochs: usize) -> ScemeHyper {
    ScemeHyper {
        epochs,
        lr: 5e-3,
        ..Default::default()
    }
}

fn stub_accuracy(corpus: &Corpus) -> f64 {
    let hits = corpus
        .scenes
        .iter()
        .flat_map(|s| &s.proposals)
        .filter(|p| p.pred_label == p.gt_label)
        .count();
    hits as f64 / corpus.num_proposals() as f64
}

#[test]
fn training_halves_loss_and_keeps_stub_accuracy() {
    let w = world();
    let train = w.generate_corpus(1000, 1).unwrap();
    let test = w.generate_corpus(300, 2).unwrap();
    let trained = train_sceme(&train, &w.stub, ScemeConfig::default(), &hyper(5)).unwrap();
    let h = &trained.loss_history;
    assert!(h.last().unwrap() <= &(0.5 * h[0]), "loss history {h:?}");
    let acc = clean_accuracy(&trained.model, &test).unwrap();
    let stub = stub_accuracy(&test);
    assert!(acc >= stub - 0.02, "context model {acc:.4}, stub {stub:.4}");
}

#[test]
fn zero_epochs_return_the_initial_model() {
    let w = world();
    let train = w.generate_corpus(20, 1).unwrap();
    let cfg = ScemeConfig::default();
    let h = hyper(0);
    let trained = train_sceme(&train, &w.stub, cfg.clone(), &h).unwrap();
    assert_eq!(trained.model, ScemeModel::init(cfg, h.seed));
    assert_eq!(trained.steps, 0);
}

fn nll(model: &ScemeModel, updated: &[f64], label: usize) -> f64 {
    let mut logits = model.cls_bias.as_slice().to_vec();
    model.cls_weight.matvec_acc(updated, &mut logits);
    -softmax(&logits)[label].ln()
}

/// Mean correct-class NLL of every region, in its own scene and with its
/// neighbors and scene node taken from another scene. Accuracy alone
/// saturates because node features are nearly always decisive.
fn context_reliance(model: &ScemeModel, scenes: &[Scene]) -> (f64, f64) {
    let (mut own, mut swapped, mut n) = (0.0, 0.0, 0.0);
    for (s, scene) in scenes.iter().enumerate() {
        let donor = &scenes[(s + 1) % scenes.len()];
        let ctx = message_pass(model, scene, false, 0).unwrap();
        for (i, p) in scene.proposals.iter().enumerate() {
            let mut probe = donor.clone();
            probe.id = scene.id;
            probe.proposals.push(p.clone());
            let moved = message_pass(model, &probe, false, 0).unwrap();
            own += nll(model, &ctx[i].updated, p.gt_label);
            swapped += nll(model, &moved.last().unwrap().updated, p.gt_label);
            n += 1.0;
        }
    }
    (own / n, swapped / n)
}

#[test]
fn dropout_trained_model_leans_on_context() {
    let w = world();
    let train = w.generate_corpus(1000, 3).unwrap();
    let test = w.generate_corpus(150, 4).unwrap();
    let degradation = |rate: f64| {
        let cfg = ScemeConfig {
            dropout: rate,
            ..Default::default()
        };
        let m = train_sceme(&train, &w.stub, cfg, &hyper(4)).unwrap().model;
        let (own, swapped) = context_reliance(&m, &test.scenes);
        println!("dropout {rate}: nll {own:.4} -> {swapped:.4}");
        swapped - own
    };
    let (none, half) = (degradation(0.0), degradation(0.5));
    assert!(
        half > none,
        "degradation without dropout {none:.4}, with 0.5 dropout {half:.4}"
    );
}

#[test]
fn profiles_are_conserved_deterministic_and_grouped_by_prediction() {
    let w = world();
    let corpus = w.generate_corpus(60, 5).unwrap();
    let model = ScemeModel::init(ScemeConfig::default(), 3);
    let a = extract_context_profiles(&model, &corpus, &w.stub).unwrap();
    let b = extract_context_profiles(&model, &corpus, &w.stub).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.values().map(Vec::len).sum::<usize>(), corpus.num_proposals());

    // relabel every proposal with its ground truth prototype so the stub
    // is always right
    let mut exact = corpus.clone();
    for p in exact.scenes.iter_mut().flat_map(|s| s.proposals.iter_mut()) {
        p.features = w.stub.prototypes[p.gt_label].clone();
    }
    let groups = extract_context_profiles(&model, &exact, &w.stub).unwrap();
    for (c, ps) in &groups {
        let truth = exact
            .scenes
            .iter()
            .flat_map(|s| &s.proposals)
            .filter(|p| p.gt_label == *c)
            .count();
        assert_eq!(ps.len(), truth, "category {c}");
    }
}
