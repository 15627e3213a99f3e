//! Synthetic scenes, measurement synthesis, and persistence of maps, models,
//! datasets and training state in the UWFD container.

pub mod container;
pub mod idx;

use rayon::prelude::*;
use serde_json::json;

pub use container::{Container, Tensor, TensorData};
pub use idx::{load_idx, parse_idx_images, IdxImages};

use crate::error::{check_len, Error, Result};
use crate::forward::{ForwardMap, MapKind};
use crate::linalg::{rnorm, CMat};
use crate::nets::{Activation, Layer, Net};
use crate::rng::Prng;
use crate::train::{param_names, params, AdamState, HistoryRow, SpectralWarm, TrainState};
use crate::unrolled::UnrolledModel;

/// Ground truth (row-major H×W) and its measured intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub rho_star: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub h: usize,
    pub w: usize,
    pub snr_db: Option<f64>,
    pub samples: Vec<Sample>,
}

/// Square scenes: uniform background in [0.1, 0.3] with one square of side
/// in [2, min(H, W)/3] and amplitude in [0.7, 1.0] at a uniform position.
pub fn gen_squares(count: usize, h: usize, w: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if h < 4 || w < 4 {
        return Err(Error::Config(format!("square scenes need H, W >= 4 (got {h}x{w})")));
    }
    let max_side = (h.min(w) / 3).max(2);
    Ok((0..count)
        .into_par_iter()
        .map(|t| {
            let mut rng = Prng::derive(seed, "squares", t as u64);
            let bg = rng.uniform_in(0.1, 0.3);
            let side = rng.int_in(2, max_side);
            let amp = rng.uniform_in(0.7, 1.0);
            let r0 = rng.int_in(0, h - side);
            let c0 = rng.int_in(0, w - side);
            let mut img = vec![bg; h * w];
            for r in r0..r0 + side {
                for c in c0..c0 + side {
                    img[r * w + c] = amp;
                }
            }
            img
        })
        .collect())
}

/// Top-left corner of the square in a scene from [`gen_squares`].
pub fn square_position(img: &[f64], w: usize) -> Option<(usize, usize)> {
    let top = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    img.iter().position(|v| *v == top && top >= 0.7).map(|i| (i / w, i % w))
}

/// Intensities of each image, plus white Gaussian noise scaled so that
/// 10 log₁₀(‖intensity‖²/‖noise‖²) equals `snr_db` exactly.
pub fn synthesize(f: &ForwardMap, images: &[Vec<f64>], snr_db: Option<f64>, seed: u64) -> Result<Vec<Sample>> {
    images
        .par_iter()
        .enumerate()
        .map(|(t, img)| {
            check_len("image", img.len(), f.n())?;
            let mut d = f.intensity_real(img)?;
            if let Some(snr) = snr_db {
                let mut rng = Prng::derive(seed, "noise", t as u64);
                let n: Vec<f64> = (0..d.len()).map(|_| rng.normal()).collect();
                let nn = rnorm(&n);
                let k = if nn > 0.0 { rnorm(&d) * 10f64.powf(-snr / 20.0) / nn } else { 0.0 };
                d.iter_mut().zip(&n).for_each(|(di, ni)| *di += k * ni);
            }
            Ok(Sample { rho_star: img.clone(), d })
        })
        .collect()
}

/// Realized SNR in dB of noisy intensities against clean ones.
pub fn measured_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let noise: Vec<f64> = noisy.iter().zip(clean).map(|(a, b)| a - b).collect();
    20.0 * (rnorm(clean) / rnorm(&noise)).log10()
}

fn meta_usize(c: &Container, key: &str) -> Result<usize> {
    c.meta
        .get(key)
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or_else(|| Error::Format(format!("missing integer meta field {key}")))
}

pub fn map_to_container(f: &ForwardMap, c: &mut Container) -> Result<()> {
    c.put(Tensor::c128("forward.A", vec![f.m(), f.n()], f.a.data.clone())?);
    c.meta.insert("map_kind".into(), serde_json::to_value(f.kind).expect("enum"));
    c.meta.insert("map_seed".into(), json!(f.seed));
    Ok(())
}

pub fn map_from_container(c: &Container) -> Result<ForwardMap> {
    let (shape, data) = c.c128("forward.A")?;
    if shape.len() != 2 {
        return Err(Error::Format("forward.A must be 2-D".into()));
    }
    let kind = c
        .meta
        .get("map_kind")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or(MapKind::File);
    let seed = c.meta.get("map_seed").and_then(|v| v.as_u64());
    ForwardMap::from_rows(CMat::from_rows(shape[0], shape[1], data.to_vec())?, kind, seed)
}

pub fn dataset_to_container(ds: &Dataset, c: &mut Container) -> Result<()> {
    let t = ds.samples.len();
    let n = ds.h * ds.w;
    let m = ds.samples.first().map_or(0, |s| s.d.len());
    for s in &ds.samples {
        check_len("sample image", s.rho_star.len(), n)?;
        check_len("sample measurements", s.d.len(), m)?;
    }
    c.put(Tensor::f64("data.rho_star", vec![t, n], ds.samples.iter().flat_map(|s| s.rho_star.clone()).collect())?);
    c.put(Tensor::f64("data.d", vec![t, m], ds.samples.iter().flat_map(|s| s.d.clone()).collect())?);
    c.meta.insert("H".into(), json!(ds.h));
    c.meta.insert("W".into(), json!(ds.w));
    c.meta.insert("snr_db".into(), json!(ds.snr_db));
    Ok(())
}

pub fn dataset_from_container(c: &Container) -> Result<Dataset> {
    let (rs, rho) = c.f64("data.rho_star")?;
    let (ds, d) = c.f64("data.d")?;
    if rs.len() != 2 || ds.len() != 2 || rs[0] != ds[0] {
        return Err(Error::Format("data tensors must be [T, N] and [T, M] with equal T".into()));
    }
    let (t, n, m) = (rs[0], rs[1], ds[1]);
    let samples = (0..t)
        .map(|i| Sample { rho_star: rho[i * n..(i + 1) * n].to_vec(), d: d[i * m..(i + 1) * m].to_vec() })
        .collect();
    let h = meta_usize(c, "H")?;
    let w = meta_usize(c, "W")?;
    if h * w != n {
        return Err(Error::Format(format!("H·W = {} but images have {n} pixels", h * w)));
    }
    let snr_db = c.meta.get("snr_db").and_then(|v| v.as_f64());
    Ok(Dataset { h, w, snr_db, samples })
}

fn net_to_container(net: &Net, tag: &str, c: &mut Container) -> Result<()> {
    for (j, l) in net.layers.iter().enumerate() {
        c.put(Tensor::f64(format!("{tag}.L{j}.W"), vec![l.n_out, l.n_in], l.w.clone())?);
        c.put(Tensor::f64(format!("{tag}.L{j}.b"), vec![l.n_out], l.b.clone())?);
    }
    let acts: Vec<String> = net.layers.iter().map(|l| l.activation.to_string()).collect();
    c.meta.insert(format!("{tag}_activations"), json!(acts));
    Ok(())
}

fn net_from_container(c: &Container, tag: &str) -> Result<Net> {
    let acts: Vec<String> = c
        .meta
        .get(&format!("{tag}_activations"))
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .ok_or_else(|| Error::Format(format!("missing {tag}_activations")))?;
    let mut layers = Vec::with_capacity(acts.len());
    for (j, a) in acts.iter().enumerate() {
        let (ws, w) = c.f64(&format!("{tag}.L{j}.W"))?;
        let (_, b) = c.f64(&format!("{tag}.L{j}.b"))?;
        if ws.len() != 2 {
            return Err(Error::Format(format!("{tag}.L{j}.W must be 2-D")));
        }
        let act: Activation = a.parse().map_err(|e: Error| Error::Format(e.to_string()))?;
        layers.push(Layer::new(w.to_vec(), b.to_vec(), ws[1], act)?);
    }
    Net::new(layers)
}

pub fn model_to_container(model: &UnrolledModel, c: &mut Container) -> Result<()> {
    net_to_container(&model.encoder, "enc", c)?;
    net_to_container(&model.decoder, "dec", c)?;
    c.put(Tensor::f64("rnn.gamma", vec![model.gammas.len()], model.gammas.clone())?);
    Ok(())
}

pub fn model_from_container(c: &Container) -> Result<UnrolledModel> {
    let (_, g) = c.f64("rnn.gamma")?;
    UnrolledModel::new(net_from_container(c, "enc")?, net_from_container(c, "dec")?, g.to_vec())
}

/// Model, optimizer moments, warm starts, learning rate and history.
pub fn state_to_container(state: &TrainState, c: &mut Container) -> Result<()> {
    model_to_container(&state.model, c)?;
    let names = param_names(&state.model);
    for (k, (name, p)) in names.iter().zip(params(&state.model)).enumerate() {
        c.put(Tensor::f64(format!("adam.m.{name}"), vec![p.len()], state.adam.m[k].clone())?);
        c.put(Tensor::f64(format!("adam.v.{name}"), vec![p.len()], state.adam.v[k].clone())?);
    }
    let a = &state.adam;
    c.put(Tensor::f64("adam.hyper", vec![3], vec![a.beta1, a.beta2, a.eps])?);
    c.meta.insert("adam_t".into(), json!(a.t));
    for (tag, vs) in [("enc", &state.warm.enc), ("dec", &state.warm.dec)] {
        c.meta.insert(format!("warm_{tag}_layers"), json!(vs.len()));
        for (j, v) in vs.iter().enumerate() {
            c.put(Tensor::f64(format!("warm.{tag}.L{j}"), vec![v.len()], v.clone())?);
        }
    }
    c.put(Tensor::f64("train.lr", vec![1], vec![state.lr])?);
    let rows: Vec<f64> = state
        .history
        .iter()
        .flat_map(|r| [r.epoch as f64, r.train_mse, r.val_mse, r.data_term, r.c1, r.c2, r.c3, r.c4])
        .collect();
    c.put(Tensor::f64("train.history", vec![state.history.len(), 8], rows)?);
    Ok(())
}

pub fn state_from_container(c: &Container) -> Result<TrainState> {
    let model = model_from_container(c)?;
    let names = param_names(&model);
    let mut m = Vec::with_capacity(names.len());
    let mut v = Vec::with_capacity(names.len());
    for (name, p) in names.iter().zip(params(&model)) {
        let (_, mk) = c.f64(&format!("adam.m.{name}"))?;
        let (_, vk) = c.f64(&format!("adam.v.{name}"))?;
        check_len("adam moment", mk.len(), p.len())?;
        check_len("adam moment", vk.len(), p.len())?;
        m.push(mk.to_vec());
        v.push(vk.to_vec());
    }
    let (_, hyper) = c.f64("adam.hyper")?;
    let t = c.meta.get("adam_t").and_then(|x| x.as_u64()).ok_or_else(|| Error::Format("missing adam_t".into()))?;
    let adam = AdamState { m, v, t, beta1: hyper[0], beta2: hyper[1], eps: hyper[2] };
    let mut warm = SpectralWarm::default();
    for (tag, slot) in [("enc", &mut warm.enc), ("dec", &mut warm.dec)] {
        let n = c.meta.get(&format!("warm_{tag}_layers")).and_then(|x| x.as_u64()).unwrap_or(0) as usize;
        for j in 0..n {
            slot.push(c.f64(&format!("warm.{tag}.L{j}"))?.1.to_vec());
        }
    }
    let lr = c.f64("train.lr")?.1[0];
    let (hs, h) = c.f64("train.history")?;
    let history = (0..hs[0])
        .map(|i| {
            let r = &h[8 * i..8 * i + 8];
            HistoryRow {
                epoch: r[0] as usize,
                train_mse: r[1],
                val_mse: r[2],
                data_term: r[3],
                c1: r[4],
                c2: r[5],
                c3: r[6],
                c4: r[7],
            }
        })
        .collect();
    Ok(TrainState { model, adam, warm, history, lr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::make_gaussian;

    #[test]
    fn squares_are_in_range_and_seeded() {
        assert!(gen_squares(0, 8, 8, 1).unwrap().is_empty());
        let a = gen_squares(50, 8, 8, 4).unwrap();
        assert!(a.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, gen_squares(50, 8, 8, 4).unwrap());
        assert!(gen_squares(1, 3, 8, 0).is_err());
    }

    #[test]
    fn noise_hits_target_snr() {
        let f = make_gaussian(32, 16, 2).unwrap();
        let imgs = gen_squares(5, 4, 4, 1).unwrap();
        let clean = synthesize(&f, &imgs, None, 0).unwrap();
        let noisy = synthesize(&f, &imgs, Some(17.0), 0).unwrap();
        for (c0, n0) in clean.iter().zip(&noisy) {
            assert!((measured_snr_db(&c0.d, &n0.d) - 17.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_image_gets_zero_measurements() {
        let f = make_gaussian(8, 4, 2).unwrap();
        let s = synthesize(&f, &[vec![0.0; 4]], Some(10.0), 0).unwrap();
        assert!(s[0].d.iter().all(|v| *v == 0.0));
    }
}
