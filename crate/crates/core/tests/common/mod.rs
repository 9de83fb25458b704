#![allow(dead_code)]

use fragroup_core::embedding::{tokenize_text, EmbedConfig, Features};
use fragroup_core::encoder::Mode;
use fragroup_core::model::{Model, ModelConfig};
use fragroup_core::synth::IMAGE_LEN;
use fragroup_tensor::gradcheck::{check_gradients, GradCheckOptions, GradCheckReport};
use fragroup_tensor::{Graph, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 8] = ["icon", "bg", "card", "title", "arrow", "status", "bar", "avatar"];

/// Random element features. Images are uniform noise so the CNN's ReLUs sit
/// away from their kinks.
pub fn random_features(n: usize, cfg: &EmbedConfig, rng: &mut ChaCha8Rng) -> Features {
    let mut tokens = Vec::with_capacity(n * cfg.text_len);
    for _ in 0..n {
        let k = rng.gen_range(0..4);
        let name: Vec<&str> = (0..k).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
        tokens.extend(tokenize_text(&name.join(" "), cfg.text_vocab, cfg.text_len));
    }
    let unit4 = |rng: &mut ChaCha8Rng| [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
    Features {
        n,
        images: (0..n * IMAGE_LEN).map(|_| rng.gen::<f32>()).collect(),
        tokens,
        colors: (0..n).map(|_| unit4(rng)).collect(),
        frames: (0..n).map(|_| unit4(rng)).collect(),
        classes: (0..n).map(|_| rng.gen_range(0..8)).collect(),
    }
}

/// Central-difference check of the weighted cross-entropy loss of the small
/// model on eight elements, dropout included under a fixed mask.
///
/// Key-projection biases have an exactly zero gradient (softmax ignores a
/// per-row shift), so their finite differences are pure rounding noise of
/// about 1e-10. The 1e-4 denominator floor keeps that noise from reading as
/// a relative error.
pub fn model_gradcheck(per_input: usize) -> GradCheckReport {
    let cfg = ModelConfig::tiny();
    let model = Model::<f64>::new(cfg.clone(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_features(8, &cfg.embed, &mut rng);
    let targets: Vec<usize> = (0..8).map(|i| i % 3).collect();
    let weights = [2.0, 1.5, 0.5];
    let options = GradCheckOptions { step: 1e-6, floor: 1e-4, per_input: Some(per_input) };
    check_gradients(model.params.tensors(), options, &mut rng, |g, vars| {
        let p = model.params.bind_vars(vars.to_vec())?;
        let mut mask_rng = ChaCha8Rng::seed_from_u64(3);
        let mut mode = Mode { dropout: cfg.encoder.dropout, rng: Some(&mut mask_rng) };
        let logits = model.logits(g, &p, &x, &mut mode).map_err(|e| TensorError::Contract(e.to_string()))?;
        g.cross_entropy(logits, &targets, &weights)
    })
    .unwrap()
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalarizes `out` through fixed random weights.
fn project(g: &Graph<f64>, out: Var, seed: u64) -> Result<Var, TensorError> {
    let w = uniform(&g.shape(out), &mut ChaCha8Rng::seed_from_u64(seed));
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

/// Central-difference checks of every differentiable tape operation.
pub fn primitive_gradchecks() -> Vec<(&'static str, GradCheckReport)> {
    type Case = (&'static str, Vec<Tensor<f64>>, Box<dyn Fn(&Graph<f64>, &[Var]) -> Result<Var, TensorError>>);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let r = &mut rng;
    let kinkless = Tensor::new(&[3, 4], (0..12).map(|i| if i % 2 == 0 { 0.2 + i as f64 * 0.1 } else { -0.3 - i as f64 * 0.1 }).collect()).unwrap();
    let cases: Vec<Case> = vec![
        ("add", vec![uniform(&[3, 4], r), uniform(&[3, 4], r)], Box::new(|g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, 1)
        })),
        ("add_row", vec![uniform(&[3, 4], r), uniform(&[4], r)], Box::new(|g, v| {
            let y = g.add_row(v[0], v[1])?;
            project(g, y, 2)
        })),
        ("mul", vec![uniform(&[3, 4], r), uniform(&[3, 4], r)], Box::new(|g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, 3)
        })),
        ("scale", vec![uniform(&[3, 4], r)], Box::new(|g, v| {
            let y = g.scale(v[0], -1.7)?;
            project(g, y, 4)
        })),
        ("matmul", vec![uniform(&[3, 4], r), uniform(&[4, 5], r)], Box::new(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y, 5)
        })),
        ("transpose", vec![uniform(&[3, 4], r)], Box::new(|g, v| {
            let y = g.transpose(v[0])?;
            project(g, y, 6)
        })),
        ("relu", vec![kinkless], Box::new(|g, v| {
            let y = g.relu(v[0])?;
            project(g, y, 7)
        })),
        ("softmax", vec![uniform(&[4, 5], r).map(|x| x * 3.0)], Box::new(|g, v| {
            let y = g.softmax(v[0])?;
            project(g, y, 8)
        })),
        ("layer_norm", vec![uniform(&[3, 6], r), uniform(&[6], r), uniform(&[6], r)], Box::new(|g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(g, y, 9)
        })),
        ("slice_cols", vec![uniform(&[3, 6], r)], Box::new(|g, v| {
            let y = g.slice_cols(v[0], 2, 3)?;
            project(g, y, 10)
        })),
        ("concat_cols", vec![uniform(&[3, 2], r), uniform(&[3, 4], r)], Box::new(|g, v| {
            let y = g.concat_cols(&[v[0], v[1], v[0]])?;
            project(g, y, 11)
        })),
        ("concat_rows", vec![uniform(&[2, 3], r), uniform(&[4, 3], r)], Box::new(|g, v| {
            let y = g.concat_rows(&[v[1], v[0]])?;
            project(g, y, 12)
        })),
        ("reshape", vec![uniform(&[3, 4], r)], Box::new(|g, v| {
            let y = g.reshape(v[0], &[2, 3, 2])?;
            project(g, y, 13)
        })),
        ("conv2d", vec![uniform(&[2, 2, 7, 7], r), uniform(&[3, 2, 3, 3], r), uniform(&[3], r)], Box::new(|g, v| {
            let y = g.conv2d(v[0], v[1], v[2], 2)?;
            project(g, y, 14)
        })),
        ("global_avg_pool", vec![uniform(&[2, 3, 4, 4], r)], Box::new(|g, v| {
            let y = g.global_avg_pool(v[0])?;
            project(g, y, 15)
        })),
        ("embedding", vec![uniform(&[5, 3], r)], Box::new(|g, v| {
            let y = g.embedding(v[0], &[1, 0, 4, 4, 2], Some(0))?;
            project(g, y, 16)
        })),
        ("segment_sum", vec![uniform(&[6, 3], r)], Box::new(|g, v| {
            let y = g.segment_sum(v[0], 2)?;
            project(g, y, 17)
        })),
        ("sum", vec![uniform(&[3, 4], r)], Box::new(|g, v| g.sum(v[0]))),
        ("cross_entropy", vec![uniform(&[5, 3], r).map(|x| x * 2.0)], Box::new(|g, v| {
            g.cross_entropy(v[0], &[2, 0, 1, 1, 0], &[7.141, 4.565, 0.3787])
        })),
        ("dropout", vec![uniform(&[4, 4], r)], Box::new(|g, v| {
            let mut mask = ChaCha8Rng::seed_from_u64(18);
            let y = g.dropout(v[0], 0.3, true, &mut mask)?;
            project(g, y, 19)
        })),
    ];
    let mut check_rng = ChaCha8Rng::seed_from_u64(99);
    cases
        .into_iter()
        .map(|(name, inputs, f)| {
            let report = check_gradients(&inputs, GradCheckOptions::default(), &mut check_rng, f).unwrap();
            (name, report)
        })
        .collect()
}
