#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vidcap::autodiff::gradcheck::{check_gradients, random_projection, random_tensor, GradCheckReport, FD_EPS};
use vidcap::autodiff::{BatchNormMode, Tape, Var};
use vidcap::data::{generate_video, sample_clip, Color, FrameBatch, Motion, ShapeKind, SyntheticVideoSpec};
use vidcap::graph::Graph;
use vidcap::model::{batch_loss, training_items, ModelBundle, ModelConfig, TextItem};
use vidcap::tensor::Tensor;
use vidcap::vision::NormMode;
use vidcap::Result;

type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn project(t: &mut Tape<f64>, y: Var) -> Result<Var> {
    random_projection(t, y, 99)
}

/// Random values bounded away from zero, so ReLU kinks are never straddled.
fn off_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut t = random_tensor(shape, 0.05, 1.0, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
    for v in t.values_mut() {
        if *[true, false].choose(&mut rng).unwrap() {
            *v = -*v;
        }
    }
    t
}

/// Every differentiable operation with representative inputs.
pub fn op_cases() -> Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> {
    let r = |shape: &[usize], seed| random_tensor(shape, -1.0, 1.0, seed);
    let mut cases: Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> = Vec::new();
    cases.push((
        "add",
        vec![r(&[3, 4], 1), r(&[3, 4], 2)],
        Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y)
        }),
    ));
    cases.push((
        "add_bias",
        vec![r(&[3, 4], 3), r(&[4], 4)],
        Box::new(|t, v| {
            let y = t.add_bias(v[0], v[1])?;
            project(t, y)
        }),
    ));
    cases.push((
        "mul",
        vec![r(&[2, 5], 5), r(&[2, 5], 6)],
        Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y)
        }),
    ));
    cases.push((
        "scale",
        vec![r(&[7], 7)],
        Box::new(|t, v| {
            let y = t.scale(v[0], -1.7)?;
            project(t, y)
        }),
    ));
    cases.push((
        "relu",
        vec![off_zero(&[4, 5], 8)],
        Box::new(|t, v| {
            let y = t.relu(v[0])?;
            project(t, y)
        }),
    ));
    cases.push((
        "matmul",
        vec![r(&[3, 4], 9), r(&[4, 2], 10)],
        Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y)
        }),
    ));
    cases.push((
        "transpose",
        vec![r(&[3, 5], 11)],
        Box::new(|t, v| {
            let y = t.transpose(v[0])?;
            project(t, y)
        }),
    ));
    cases.push((
        "reshape",
        vec![r(&[2, 6], 12)],
        Box::new(|t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            project(t, y)
        }),
    ));
    cases.push((
        "slice_cols",
        vec![r(&[3, 6], 13)],
        Box::new(|t, v| {
            let y = t.slice_cols(v[0], 2, 3)?;
            project(t, y)
        }),
    ));
    cases.push((
        "concat_cols",
        vec![r(&[3, 2], 14), r(&[3, 4], 15)],
        Box::new(|t, v| {
            let y = t.concat_cols(&[v[0], v[1], v[0]])?;
            project(t, y)
        }),
    ));
    cases.push((
        "concat_rows",
        vec![r(&[1, 3], 16), r(&[4, 3], 17)],
        Box::new(|t, v| {
            let y = t.concat_rows(&[v[0], v[1]])?;
            project(t, y)
        }),
    ));
    cases.push((
        "gather_rows",
        vec![r(&[5, 3], 18)],
        Box::new(|t, v| {
            let y = t.gather_rows(v[0], &[4, 0, 4, 2])?;
            project(t, y)
        }),
    ));
    cases.push((
        "global_avg_pool_2d",
        vec![r(&[2, 3, 4, 4], 19)],
        Box::new(|t, v| {
            let y = t.global_avg_pool_2d(v[0])?;
            project(t, y)
        }),
    ));
    cases.push((
        "softmax_rows",
        vec![r(&[3, 5], 20)],
        Box::new(|t, v| {
            let y = t.softmax(v[0], 1)?;
            project(t, y)
        }),
    ));
    cases.push((
        "softmax_cols",
        vec![r(&[4, 3], 21)],
        Box::new(|t, v| {
            let y = t.softmax(v[0], 0)?;
            project(t, y)
        }),
    ));
    cases.push((
        "causal_mask",
        vec![r(&[4, 4], 22)],
        Box::new(|t, v| {
            let m = t.causal_mask(v[0])?;
            let y = t.softmax(m, 1)?;
            project(t, y)
        }),
    ));
    cases.push((
        "sum",
        vec![r(&[3, 3], 23)],
        Box::new(|t, v| {
            let y = t.mul(v[0], v[0])?;
            t.sum(y)
        }),
    ));
    cases.push((
        "mean",
        vec![r(&[2, 7], 24)],
        Box::new(|t, v| {
            let y = t.mul(v[0], v[0])?;
            t.mean(y)
        }),
    ));
    cases.push((
        "linear",
        vec![r(&[3, 4], 25), r(&[4, 5], 26), r(&[5], 27)],
        Box::new(|t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            project(t, y)
        }),
    ));
    cases.push((
        "conv2d_same",
        vec![r(&[2, 2, 5, 5], 28), r(&[3, 2, 3, 3], 29)],
        Box::new(|t, v| {
            let y = t.conv2d(v[0], v[1], 1, 1)?;
            project(t, y)
        }),
    ));
    cases.push((
        "conv2d_strided",
        vec![r(&[1, 3, 6, 6], 30), r(&[2, 3, 1, 1], 31)],
        Box::new(|t, v| {
            let y = t.conv2d(v[0], v[1], 2, 0)?;
            project(t, y)
        }),
    ));
    cases.push((
        "batch_norm_train",
        vec![r(&[3, 2, 3, 3], 32), random_tensor(&[2], 0.5, 1.5, 33), r(&[2], 34)],
        Box::new(|t, v| {
            let (y, _) = t.batch_norm_2d(v[0], v[1], v[2], BatchNormMode::Train)?;
            project(t, y)
        }),
    ));
    cases.push((
        "batch_norm_eval",
        vec![r(&[2, 2, 3, 3], 35), random_tensor(&[2], 0.5, 1.5, 36), r(&[2], 37)],
        Box::new(|t, v| {
            let mode = BatchNormMode::Eval {
                running_mean: &[0.1, -0.2],
                running_var: &[0.8, 1.3],
            };
            let (y, _) = t.batch_norm_2d(v[0], v[1], v[2], mode)?;
            project(t, y)
        }),
    ));
    cases.push((
        "layer_norm",
        vec![r(&[3, 6], 38), random_tensor(&[6], 0.5, 1.5, 39), r(&[6], 40)],
        Box::new(|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            project(t, y)
        }),
    ));
    cases.push((
        "cross_entropy",
        vec![r(&[4, 5], 41)],
        Box::new(|t, v| t.cross_entropy(v[0], &[1, 0, 4, 3], 0)),
    ));
    cases
}

/// Finite-difference report per operation.
pub fn op_gradcheck_suite() -> Vec<(&'static str, GradCheckReport)> {
    op_cases()
        .into_iter()
        .map(|(name, inputs, f)| (name, check_gradients(&inputs, FD_EPS, f).expect(name)))
        .collect()
}

pub fn toy_video(shape: ShapeKind, color: Color, motion: Motion, seed: u64) -> vidcap::data::VideoRecord {
    generate_video(&SyntheticVideoSpec::toy(shape, color, motion), seed).unwrap()
}

/// Model configuration with two frames per clip, small enough for finite differences.
pub fn composite_config() -> ModelConfig {
    let mut cfg = ModelConfig::toy();
    cfg.sampler.count = 2;
    cfg
}

fn composite_loss(bundle: &ModelBundle<f64>, clip: &FrameBatch, items: &[TextItem]) -> (f64, Vec<bool>) {
    let mut g = Graph::inference(&bundle.store);
    let out = batch_loss(
        &mut g,
        &bundle.config,
        &bundle.vocab,
        std::slice::from_ref(clip),
        &[items.to_vec()],
        NormMode::Train,
    )
    .unwrap();
    (g.tape.values(out.loss)[0], g.tape.relu_pattern())
}

/// 32-bit backpropagated gradients of the encoder→projector→decoder loss
/// against 64-bit central differences, `per_tensor` sampled elements of
/// every parameter tensor.
///
/// A central difference is only an estimate of the derivative when both
/// probes lie on the same linear piece of the network. Elements whose probes
/// straddle a ReLU kink are replaced by other elements of the same tensor;
/// the number replaced is returned alongside the report.
pub fn composite_gradcheck(per_tensor: usize, seed: u64) -> (GradCheckReport, usize) {
    let bundle64 = ModelBundle::<f64>::new(composite_config(), seed).unwrap();
    let bundle32: ModelBundle<f32> = bundle64.cast();
    let bundle64: ModelBundle<f64> = bundle32.cast();
    let video = toy_video(ShapeKind::Circle, Color::Blue, Motion::Up, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip = sample_clip(&video, &bundle64.config.sampler, &mut rng).unwrap();
    let items: Vec<TextItem> = training_items(&video).into_iter().take(2).collect();

    let mut store32 = bundle32.store.clone();
    let mut g = Graph::new(&bundle32.store);
    let out = batch_loss(
        &mut g,
        &bundle32.config,
        &bundle32.vocab,
        std::slice::from_ref(&clip),
        std::slice::from_ref(&items),
        NormMode::Train,
    )
    .unwrap();
    let mut tape = g.into_tape();
    tape.backward(out.loss).unwrap();
    tape.flush_param_grads(&mut store32);

    let mut report = GradCheckReport::default();
    let mut work = bundle64.clone();
    let names: Vec<String> = bundle64.store.params().iter().map(|p| p.name.clone()).collect();
    let mut straddled = 0;
    for (pi, name) in names.iter().enumerate() {
        let analytic = store32.get(name).unwrap().grad().expect("every parameter gets a gradient").to_vec();
        let n = analytic.len();
        let mut picks: Vec<usize> = (0..n).collect();
        picks.shuffle_in_place(&mut rng);
        let mut taken = 0;
        for &j in &picks {
            if taken == per_tensor {
                break;
            }
            let orig = work.store.get(name).unwrap().values()[j];
            work.store.get_mut(name).unwrap().values_mut()[j] = orig + FD_EPS;
            let (up, up_pattern) = composite_loss(&work, &clip, &items);
            work.store.get_mut(name).unwrap().values_mut()[j] = orig - FD_EPS;
            let (down, down_pattern) = composite_loss(&work, &clip, &items);
            work.store.get_mut(name).unwrap().values_mut()[j] = orig;
            if up_pattern != down_pattern {
                straddled += 1;
                continue;
            }
            report.record(pi, j, analytic[j] as f64, (up - down) / (2.0 * FD_EPS));
            taken += 1;
        }
    }
    (report, straddled)
}

trait ShuffleInPlace {
    fn shuffle_in_place(&mut self, rng: &mut ChaCha8Rng);
}

impl ShuffleInPlace for Vec<usize> {
    fn shuffle_in_place(&mut self, rng: &mut ChaCha8Rng) {
        use rand::seq::SliceRandom;
        self.shuffle(rng);
    }
}

/// Backprop against central differences for every element of every
/// parameter in `store`. Elements whose probes straddle a ReLU kink are
/// not comparable and are skipped; their count is returned.
pub fn store_gradcheck(
    store: &vidcap::params::ParamStore<f64>,
    f: impl Fn(&mut Graph<'_, f64>) -> Result<Var>,
) -> (GradCheckReport, usize) {
    let mut grads = store.clone();
    let mut g = Graph::new(store);
    let loss = f(&mut g).unwrap();
    let mut tape = g.into_tape();
    tape.backward(loss).unwrap();
    tape.flush_param_grads(&mut grads);

    let eval = |s: &vidcap::params::ParamStore<f64>| {
        let mut g = Graph::inference(s);
        let loss = f(&mut g).unwrap();
        (g.tape.values(loss)[0], g.tape.relu_pattern())
    };
    let mut report = GradCheckReport::default();
    let mut skipped = 0;
    let mut work = store.clone();
    let names: Vec<String> = store.params().iter().map(|p| p.name.clone()).collect();
    for (pi, name) in names.iter().enumerate() {
        let analytic = grads.get(name).unwrap().grad().map(|g| g.to_vec());
        let Some(analytic) = analytic else { continue };
        for (j, &a) in analytic.iter().enumerate() {
            let orig = work.get(name).unwrap().values()[j];
            work.get_mut(name).unwrap().values_mut()[j] = orig + FD_EPS;
            let (up, pu) = eval(&work);
            work.get_mut(name).unwrap().values_mut()[j] = orig - FD_EPS;
            let (down, pd) = eval(&work);
            work.get_mut(name).unwrap().values_mut()[j] = orig;
            if pu != pd {
                skipped += 1;
                continue;
            }
            report.record(pi, j, a, (up - down) / (2.0 * FD_EPS));
        }
    }
    (report, skipped)
}
