//! Run configuration shared by the command-line subcommands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{gen_squares, idx::load_idx, map_from_container, Container};
use crate::error::{Error, Result};
use crate::forward::{make_fourier, make_gaussian, ForwardMap, MapKind};
use crate::train::TrainConfig;
use crate::unrolled::ModelSpec;
use crate::wf::WfConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub kind: MapKind,
    #[serde(rename = "M", default)]
    pub m: Option<usize>,
    #[serde(rename = "N", default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Container holding `forward.A`, for `kind = "file"`.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Squares,
    Idx,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub count: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// IDX image file, for `source = "idx"`.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub map: MapConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataConfig,
    /// Classic-WF baseline settings.
    #[serde(default)]
    pub wf: WfConfig,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        RunConfig::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn n(&self) -> usize {
        self.data.h * self.data.w
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 || self.data.count == 0 {
            return Err(Error::Config("data needs H, W and count >= 1".into()));
        }
        match self.map.kind {
            MapKind::Gaussian | MapKind::Fourier => {
                let m = self.map.m.ok_or_else(|| Error::Config("map.M is required".into()))?;
                if m == 0 {
                    return Err(Error::Config("map.M must be positive".into()));
                }
                if let Some(mn) = self.map.n {
                    if mn != n {
                        return Err(Error::Config(format!("map.N = {mn} but H·W = {n}")));
                    }
                }
            }
            MapKind::File => {
                if self.map.path.is_none() {
                    return Err(Error::Config("map.kind = file needs map.path".into()));
                }
            }
        }
        if self.data.source == DataSource::Idx && self.data.path.is_none() {
            return Err(Error::Config("data.source = idx needs data.path".into()));
        }
        if self.model.n_y == 0 || self.model.l == 0 {
            return Err(Error::Config("model needs N_y >= 1 and L >= 1".into()));
        }
        self.train.validate()
    }

    /// WF settings with the max-pixel prior mirrored from training.
    pub fn wf_config(&self) -> WfConfig {
        WfConfig { max_pixel_norm: self.wf.max_pixel_norm || self.train.max_pixel_prior.is_some(), ..self.wf.clone() }
    }

    pub fn build_map(&self) -> Result<ForwardMap> {
        let n = self.n();
        let f = match self.map.kind {
            MapKind::Gaussian => make_gaussian(self.map.m.unwrap_or(0), n, self.map.seed)?,
            MapKind::Fourier => make_fourier(self.map.m.unwrap_or(0), n)?,
            MapKind::File => {
                let path = self.map.path.as_ref().expect("validated");
                map_from_container(&Container::load(path)?)?
            }
        };
        if f.n() != n {
            return Err(Error::Config(format!("map has N = {} but H·W = {n}", f.n())));
        }
        Ok(f)
    }

    /// Ground-truth images for generation, `data.count` of them.
    pub fn images(&self) -> Result<Vec<Vec<f64>>> {
        let d = &self.data;
        match d.source {
            DataSource::Squares => gen_squares(d.count, d.h, d.w, d.seed),
            DataSource::Idx => {
                let idx = load_idx(d.path.as_ref().expect("validated"))?;
                if (idx.rows, idx.cols) != (d.h, d.w) {
                    return Err(Error::Config(format!(
                        "IDX images are {}x{} but config says {}x{}",
                        idx.rows, idx.cols, d.h, d.w
                    )));
                }
                if idx.images.len() < d.count {
                    return Err(Error::Config(format!("IDX file holds {} images, need {}", idx.images.len(), d.count)));
                }
                Ok(idx.images.into_iter().take(d.count).collect())
            }
        }
    }
}
