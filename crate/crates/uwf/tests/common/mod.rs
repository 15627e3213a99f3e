//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use uwf::data::{gen_squares, synthesize, Container, Tensor, TensorData};
use uwf::forward::{make_gaussian, ForwardMap, ScaleRule};
use uwf::linalg::c;
use uwf::rng::Prng;
use uwf::train::{params_mut, prepare, Prepared, TrainConfig};
use uwf::unrolled::{ModelActivations, ModelSpec, UnrolledModel};

pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    num / (den + 1e-12)
}

pub fn toy() -> (ForwardMap, UnrolledModel, Vec<Prepared>) {
    let n = 6;
    let f = make_gaussian(18, n, 3).unwrap();
    let spec = ModelSpec {
        n_y: 3,
        l: 2,
        encoder_dims: vec![5],
        decoder_dims: vec![5],
        activations: ModelActivations::default(),
        gamma_init: 0.3,
    };
    let mut model = UnrolledModel::init(n, &spec, 21).unwrap();
    let mut rng = Prng::new(5);
    for p in params_mut(&mut model) {
        for v in p.iter_mut() {
            *v += 0.05 * rng.normal();
        }
    }
    let imgs = gen_squares(3, 4, 4, 2).unwrap().into_iter().map(|v| v[..n].to_vec()).collect::<Vec<_>>();
    let samples = synthesize(&f, &imgs, Some(25.0), 8).unwrap();
    let prepared = prepare(&f, &samples, ScaleRule::SqrtLambda).unwrap();
    (f, model, prepared)
}

pub fn full_cfg() -> TrainConfig {
    TrainConfig {
        eta: 0.3,
        eta1: 0.05,
        eta2: 0.07,
        eta3: 0.02,
        eta4: 0.03,
        target_mu_r: 0.5,
        target_mu_g: Some(vec![0.8]),
        target_mu_h: Some(vec![1.1, 0.9]),
        max_pixel_prior: Some(0.2),
        ..TrainConfig::default()
    }
}

/// Seeded container with special floats (NaN, ±inf, −0, subnormals, raw bit patterns).
fn special(rng: &mut Prng) -> f64 {
    match rng.int_in(0, 7) {
        0 => f64::NAN,
        1 => f64::INFINITY,
        2 => f64::NEG_INFINITY,
        3 => -0.0,
        4 => f64::MIN_POSITIVE / 3.0,
        5 => f64::from_bits(rng.next_u64()),
        _ => rng.normal() * 10f64.powi(rng.int_in(0, 40) as i32 - 20),
    }
}

pub fn random_container(seed: u64) -> Container {
    let mut rng = Prng::derive(seed, "container-fuzz", 0);
    let mut out = Container::default();
    for t in 0..rng.int_in(0, 5) {
        let rank = rng.int_in(0, 3);
        let shape: Vec<usize> = (0..rank).map(|_| rng.int_in(0, 4)).collect();
        let len: usize = shape.iter().product();
        let name = format!("t{t}.{}", rng.next_u64() % 1000);
        let tensor = if rng.uniform() < 0.5 {
            Tensor::f64(name, shape, (0..len).map(|_| special(&mut rng)).collect()).unwrap()
        } else {
            Tensor::c128(name, shape, (0..len).map(|_| c(special(&mut rng), special(&mut rng))).collect()).unwrap()
        };
        out.put(tensor);
    }
    for k in 0..rng.int_in(0, 3) {
        out.meta.insert(format!("k{k}"), serde_json::json!({"v": rng.next_u64(), "s": "ü\"\\"}));
    }
    out
}

pub fn bits(c: &Container) -> Vec<(String, Vec<usize>, Vec<u64>)> {
    c.tensors
        .iter()
        .map(|t| {
            let b = match &t.data {
                TensorData::F64(v) => v.iter().map(|x| x.to_bits()).collect(),
                TensorData::C128(v) => v.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect(),
            };
            (t.name.clone(), t.shape.clone(), b)
        })
        .collect()
}

