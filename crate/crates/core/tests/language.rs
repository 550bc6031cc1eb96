mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidcap::autodiff::gradcheck::{random_projection, random_tensor};
use vidcap::data::{sample_clip, Color, Motion, ShapeKind};
use vidcap::graph::Graph;
use vidcap::language::{
    argmax, assemble_prompt, generate, generate_from_features, init_projector, layout_tokens, lm_forward,
    normalize_text, project_visual, Vocabulary, CLS, EOS, PAD, SYSTEM_PROMPT, UNK, VIS,
};
use vidcap::model::{batch_loss, training_items, ModelBundle, ModelConfig};
use vidcap::tensor::Tensor;
use vidcap::vision::{FrameFeatures, NormMode};
use vidcap::Error;

fn shape_strategy() -> impl Strategy<Value = (ShapeKind, Color, Motion)> {
    (0usize..3, 0usize..4, 0usize..4).prop_map(|(s, c, m)| (ShapeKind::ALL[s], Color::ALL[c], Motion::ALL[m]))
}

#[test]
fn tokenize_examples() {
    let v = Vocabulary::from_grammar();
    assert!(v.tokenize("").is_empty());
    let words = ["the", "red", "square", "moves", "right", "."];
    let want: Vec<usize> = words.iter().map(|w| v.id(w).unwrap()).collect();
    assert_eq!(v.tokenize("The red square moves right."), want);
    assert_eq!(v.detokenize(&want), "the red square moves right .");
    assert_eq!(v.tokenize("the zebra"), vec![v.id("the").unwrap(), UNK]);
}

#[test]
fn specials_occupy_fixed_slots() {
    let v = Vocabulary::from_grammar();
    for (id, tok) in [(PAD, "<pad>"), (EOS, "<eos>"), (CLS, "<cls>"), (VIS, "<vis>"), (UNK, "<unk>")] {
        assert_eq!(v.token(id), Some(tok));
        assert!(Vocabulary::is_special(id));
    }
    assert!(!Vocabulary::is_special(6));
    let mut seen = std::collections::HashSet::new();
    for (i, t) in v.tokens().iter().enumerate() {
        assert_eq!(v.id(t), Some(i));
        assert!(seen.insert(t.clone()));
    }
    assert_eq!(v.detokenize(&[CLS, VIS, v.id("red").unwrap(), EOS, PAD]), "red");
}

#[test]
fn vocabulary_json_round_trip() {
    let v = Vocabulary::from_grammar();
    let json = v.to_json().unwrap();
    let value: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!(value["tokens"].is_array());
    assert_eq!(value["specials"]["eos"], 2);
    assert_eq!(Vocabulary::from_json(&json).unwrap(), v);
    assert!(Vocabulary::from_json(r#"{"tokens": ["a", "b"], "specials": {}}"#).is_err());
}

#[test]
fn projector_linear_cases() {
    let mut store = init_projector::<f64>(64, 64, 0).unwrap();
    store.get_mut("projector.weight").unwrap().values_mut().fill(0.0);
    let feats = random_tensor(&[3, 64], -1.0, 1.0, 1);
    let mut g = Graph::inference(&store);
    let f = g.tape.constant(feats.clone());
    let out = project_visual(&mut g, f).unwrap();
    assert!(g.tape.values(out).iter().all(|&v| v == 0.0));

    let w = store.get_mut("projector.weight").unwrap();
    for i in 0..64 {
        w.values_mut()[i * 64 + i] = 1.0;
    }
    let mut g = Graph::inference(&store);
    let f = g.tape.constant(feats.clone());
    let out = project_visual(&mut g, f).unwrap();
    assert_eq!(g.tape.values(out), feats.values());

    let bad = g.tape.constant(Tensor::zeros(&[3, 32]));
    assert!(project_visual(&mut g, bad).is_err());
}

#[test]
fn projector_gradients_match_finite_differences() {
    let store = init_projector::<f64>(6, 4, 3).unwrap();
    let feats = random_tensor(&[3, 6], -1.0, 1.0, 4);
    let (report, skipped) = common::store_gradcheck(&store, |g| {
        let f = g.tape.constant(feats.clone());
        let y = project_visual(g, f)?;
        random_projection(&mut g.tape, y, 5)
    });
    assert_eq!(skipped, 0);
    assert_eq!(report.checked, 6 * 4 + 4);
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn prompt_layout_examples() {
    let v = Vocabulary::from_grammar();
    let bundle = ModelBundle::<f64>::new(ModelConfig::toy(), 0).unwrap();
    let mut g = Graph::inference(&bundle.store);
    let vis = g.tape.constant(Tensor::zeros(&[2, 64]));
    let p = assemble_prompt(&mut g, vis, "describe", "", Some(""), &v, 256).unwrap();
    assert_eq!(p.tokens.layout.lengths(), [1, 2, 1, 0, 0]);
    assert_eq!(g.tape.shape(p.embeddings), &[4, 64]);
    let cls = bundle.store.get("lm.cls").unwrap().values();
    assert_eq!(&g.tape.values(p.embeddings)[..64], cls);
    assert!(g.tape.values(p.embeddings)[64..192].iter().all(|&x| x == 0.0));

    let vis = g.tape.constant(Tensor::zeros(&[8, 64]));
    let p = assemble_prompt(&mut g, vis, SYSTEM_PROMPT, "", Some("a red square moves right"), &v, 256).unwrap();
    assert_eq!(p.tokens.masked_count(), 6);
    assert_eq!(*p.tokens.masked_targets().last().unwrap(), EOS);

    let err = assemble_prompt(&mut g, vis, SYSTEM_PROMPT, "what shape is it?", None, &v, 10);
    assert!(matches!(err, Err(Error::ContextOverflow { len: 17, max: 10 })));
}

#[test]
fn logits_shape_and_overflow() {
    let bundle = ModelBundle::<f64>::new(ModelConfig::toy(), 0).unwrap();
    let cfg = &bundle.config.lm;
    let mut g = Graph::inference(&bundle.store);
    for len in [1, 5, 256] {
        let e = g.tape.constant(random_tensor(&[len, 64], -1.0, 1.0, len as u64));
        let logits = lm_forward(&mut g, cfg, e).unwrap();
        assert_eq!(g.tape.shape(logits), &[len, cfg.vocab_size]);
    }
    let e = g.tape.constant(Tensor::zeros(&[257, 64]));
    assert!(matches!(lm_forward(&mut g, cfg, e), Err(Error::ContextOverflow { .. })));
}

#[test]
fn later_positions_cannot_affect_earlier_logits() {
    let bundle = ModelBundle::<f64>::new(ModelConfig::toy(), 2).unwrap();
    let cfg = &bundle.config.lm;
    let base = random_tensor(&[12, 64], -1.0, 1.0, 7);
    let logits = |emb: Tensor<f64>| {
        let mut g = Graph::inference(&bundle.store);
        let e = g.tape.constant(emb);
        let l = lm_forward(&mut g, cfg, e).unwrap();
        g.tape.values(l).to_vec()
    };
    let reference = logits(base.clone());
    let v = cfg.vocab_size;
    for j in [0usize, 4, 11] {
        let mut perturbed = base.clone();
        for x in &mut perturbed.values_mut()[j * 64..(j + 1) * 64] {
            *x += 0.5;
        }
        let out = logits(perturbed);
        for pos in 0..12 {
            let same = reference[pos * v..(pos + 1) * v] == out[pos * v..(pos + 1) * v];
            assert_eq!(same, pos < j, "perturbing {j} vs logits at {pos}");
        }
    }
}

#[test]
fn trailing_padding_leaves_loss_unchanged() {
    let bundle = ModelBundle::<f64>::new(ModelConfig::toy(), 4).unwrap();
    let cfg = &bundle.config.lm;
    let v = &bundle.vocab;
    let tokens = layout_tokens(3, &v.tokenize(SYSTEM_PROMPT), &[], Some(&v.tokenize("the red circle moves up")), 256).unwrap();
    let emb = random_tensor(&[tokens.ids.len(), 64], -1.0, 1.0, 1);
    let loss = |extra: usize, seed: u64| {
        let mut g = Graph::inference(&bundle.store);
        let mut rows = emb.values().to_vec();
        rows.extend(random_tensor(&[extra.max(1), 64], -5.0, 5.0, seed).values().iter().take(extra * 64));
        let e = g.tape.constant(Tensor::new(&[tokens.ids.len() + extra, 64], rows).unwrap());
        let logits = lm_forward(&mut g, cfg, e).unwrap();
        let mut targets = tokens.targets.clone();
        targets.extend(std::iter::repeat_n(PAD, extra));
        let l = g.tape.cross_entropy(logits, &targets, PAD).unwrap();
        g.tape.values(l)[0]
    };
    let reference = loss(0, 0);
    for (extra, seed) in [(1, 1), (5, 2), (20, 3)] {
        assert!((loss(extra, seed) - reference).abs() < 1e-12);
    }
}

#[test]
fn visual_slots_influence_the_loss() {
    let bundle = ModelBundle::<f64>::new(ModelConfig::toy(), 5).unwrap();
    let video = common::toy_video(ShapeKind::Square, Color::Red, Motion::Right, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clip = sample_clip(&video, &bundle.config.sampler, &mut rng).unwrap();
    let items = vec![training_items(&video)];
    let loss = |b: &ModelBundle<f64>| {
        let mut g = Graph::inference(&b.store);
        let out = batch_loss(&mut g, &b.config, &b.vocab, std::slice::from_ref(&clip), &items, NormMode::Eval).unwrap();
        g.tape.values(out.loss)[0]
    };
    let mut zeroed = bundle.clone();
    zeroed.store.get_mut("projector.weight").unwrap().values_mut().fill(0.0);
    zeroed.store.get_mut("projector.bias").unwrap().values_mut().fill(0.0);
    assert_ne!(loss(&bundle), loss(&zeroed));
}

#[test]
fn argmax_prefers_lowest_id_on_ties() {
    assert_eq!(argmax(&[0.5f32, 2.0, 2.0, 1.0]), 1);
    assert_eq!(argmax(&[3.0f64, 3.0]), 0);
}

#[test]
fn generation_bounds_and_determinism() {
    let bundle = ModelBundle::<f32>::new(ModelConfig::toy(), 6).unwrap();
    let video = common::toy_video(ShapeKind::Triangle, Color::Green, Motion::Left, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let clip = sample_clip(&video, &bundle.config.sampler, &mut rng).unwrap();

    let a = generate(&bundle, &clip, SYSTEM_PROMPT, "", 12).unwrap();
    let b = generate(&bundle, &clip, SYSTEM_PROMPT, "", 12).unwrap();
    assert_eq!(a, b);
    assert!(a.ids.len() <= 12);

    let one = generate(&bundle, &clip, SYSTEM_PROMPT, "what shape is it?", 1).unwrap();
    assert!(one.ids.len() <= 1);
    assert!(one.text.split_whitespace().count() <= 1);

    assert!(generate(&bundle, &clip, SYSTEM_PROMPT, "", 0).is_err());
}

#[test]
fn full_context_truncates_generation() {
    let mut bundle = ModelBundle::<f32>::new(ModelConfig::toy(), 7).unwrap();
    let red = bundle.vocab.id("red").unwrap();
    bundle.store.get_mut("lm.head.bias").unwrap().values_mut()[red] = 1e4;
    let system = bundle.vocab.tokenize(SYSTEM_PROMPT).len();
    let features = FrameFeatures {
        values: Tensor::zeros(&[8, 64]),
    };
    let prompt = 1 + 8 + system;
    bundle.config.lm.max_context = prompt + 3;
    let out = generate_from_features(&bundle, &features, SYSTEM_PROMPT, "", 10).unwrap();
    assert!(out.truncated);
    assert_eq!(out.ids, vec![red; 4]);
    assert_eq!(out.text, "red red red red");

    let within = generate_from_features(&bundle, &features, SYSTEM_PROMPT, "", 4).unwrap();
    assert!(!within.truncated);

    bundle.config.lm.max_context = prompt - 1;
    assert!(matches!(
        generate_from_features(&bundle, &features, SYSTEM_PROMPT, "", 3),
        Err(Error::ContextOverflow { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grammar_text_round_trips((shape, color, motion) in shape_strategy(), shout in any::<bool>()) {
        let v = Vocabulary::from_grammar();
        let spec = vidcap::data::SyntheticVideoSpec::toy(shape, color, motion);
        let mut texts = vec![spec.caption()];
        for qa in spec.qa_pairs() {
            texts.extend([qa.question, qa.question_alt, qa.answer]);
        }
        for text in texts {
            let text = if shout { text.to_uppercase() } else { text };
            let ids = v.tokenize(&text);
            prop_assert!(!ids.contains(&UNK));
            prop_assert_eq!(v.detokenize(&ids), normalize_text(&text));
        }
    }

    #[test]
    fn mask_covers_answer_and_eos(
        visual in 0usize..10,
        system in proptest::collection::vec(6usize..40, 0..5),
        question in proptest::collection::vec(6usize..40, 0..8),
        answer in proptest::collection::vec(6usize..40, 0..8),
    ) {
        let p = layout_tokens(visual, &system, &question, Some(&answer), 256).unwrap();
        prop_assert_eq!(p.masked_count(), answer.len() + 1);
        let mut want = answer.clone();
        want.push(EOS);
        prop_assert_eq!(p.masked_targets(), want);
        prop_assert_eq!(p.layout.lengths(), [1, visual, system.len(), question.len(), answer.len()]);
    }
}
