//! Contextual visual-aid controllable patch transform.
//!
//! A contextual encoder maps [synthetic-view global, mention-text global]
//! (2d) to a context vector VTEs (d); with several synthetic views the
//! encodings are max-pooled elementwise. Two predictor networks map
//! [feature, VTEs] to per-dimension scale and shift pairs (alpha, beta), and
//! the feature is updated residually:
//!
//! ```text
//! v_hat = v + w * (alpha ⊙ v + beta)
//! ```
//!
//! The global vector gets one (alpha, beta); each patch row gets its own
//! from the shared local predictor, the 1x1-convolution equivalent of a
//! per-patch stack. All three networks are two affine layers with a ReLU
//! between them. `w = 0` leaves the bundle bit-identical.

use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_embeddings, save_embeddings, EmbeddingStore};
use crate::kb::FeatureBundle;

/// Dense affine layer, weight stored row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Affine {
    pub fn new(out_dim: usize, in_dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weight.len() != out_dim * in_dim || bias.len() != out_dim {
            return Err(Error::ShapeMismatch {
                name: "affine".to_string(),
                expected_rows: out_dim,
                expected_cols: in_dim,
                rows: if in_dim == 0 { 0 } else { weight.len() / in_dim },
                cols: in_dim,
            });
        }
        Ok(Affine {
            out_dim,
            in_dim,
            weight,
            bias,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Affine {
            out_dim,
            in_dim,
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            out.push(acc);
        }
        out
    }
}

/// Two affine layers with ReLU between.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerNet {
    pub l1: Affine,
    pub l2: Affine,
}

impl TwoLayerNet {
    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let mut hidden = self.l1.apply(x);
        for v in &mut hidden {
            *v = v.max(0.0);
        }
        self.l2.apply(&hidden)
    }
}

/// All transform parameters for one feature dimension d.
///
/// - `ce`: 2d -> d -> d contextual encoder.
/// - `a_global` / `a_local`: 2d -> d -> 2d predictors; the 2d output splits
///   into (alpha, beta).
/// - `w`: blend coefficient in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct CvacptParams {
    pub dim: usize,
    pub w: f32,
    pub ce: TwoLayerNet,
    pub a_global: TwoLayerNet,
    pub a_local: TwoLayerNet,
}

/// Synthetic-view global embeddings for one mention, n_s >= 1.
#[derive(Debug, Clone)]
pub struct ViewSet {
    views: Vec<Vec<f32>>,
    dim: usize,
}

impl ViewSet {
    pub fn new(views: Vec<Vec<f32>>) -> Result<Self> {
        let dim = match views.first() {
            Some(v) if !v.is_empty() => v.len(),
            _ => return Err(Error::EmptyViewSet),
        };
        for v in &views {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        Ok(ViewSet { views, dim })
    }

    pub fn views(&self) -> &[Vec<f32>] {
        &self.views
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}

impl CvacptParams {
    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        let shapes = [
            ("ce.l1", &self.ce.l1, d, 2 * d),
            ("ce.l2", &self.ce.l2, d, d),
            ("a_global.l1", &self.a_global.l1, d, 2 * d),
            ("a_global.l2", &self.a_global.l2, 2 * d, d),
            ("a_local.l1", &self.a_local.l1, d, 2 * d),
            ("a_local.l2", &self.a_local.l2, 2 * d, d),
        ];
        for (name, layer, out_dim, in_dim) in shapes {
            if layer.out_dim != out_dim || layer.in_dim != in_dim {
                return Err(Error::ShapeMismatch {
                    name: name.to_string(),
                    expected_rows: out_dim,
                    expected_cols: in_dim,
                    rows: layer.out_dim,
                    cols: layer.in_dim,
                });
            }
            for v in layer.weight.iter().chain(&layer.bias) {
                if !v.is_finite() {
                    return Err(Error::InvalidConfig(format!("non-finite weight in {name}")));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::InvalidConfig(format!(
                "blend coefficient w must be in [0, 1], got {}",
                self.w
            )));
        }
        Ok(())
    }
}

fn concat(a: &[f32], b: &[f32]) -> Vec<f32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    out
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Encodes one synthetic view in the context of the mention text:
/// `ce([view, text_global])`.
pub fn contextual_encode(
    view: &[f32],
    text_global: &[f32],
    params: &CvacptParams,
) -> Result<Vec<f32>> {
    check_dim(params.dim, view.len())?;
    check_dim(params.dim, text_global.len())?;
    Ok(params.ce.apply(&concat(view, text_global)))
}

/// Elementwise max over the encodings of every view; a single view reduces
/// to `contextual_encode`.
pub fn pool_views(
    views: &ViewSet,
    text_global: &[f32],
    params: &CvacptParams,
) -> Result<Vec<f32>> {
    let mut pooled: Option<Vec<f32>> = None;
    for view in views.views() {
        let encoded = contextual_encode(view, text_global, params)?;
        pooled = Some(match pooled {
            None => encoded,
            Some(mut acc) => {
                for (a, e) in acc.iter_mut().zip(&encoded) {
                    *a = a.max(*e);
                }
                acc
            }
        });
    }
    pooled.ok_or(Error::EmptyViewSet)
}

fn affine_pair(net: &TwoLayerNet, feature: &[f32], vtes: &[f32], d: usize) -> (Vec<f32>, Vec<f32>) {
    let out = net.apply(&concat(feature, vtes));
    (out[..d].to_vec(), out[d..].to_vec())
}

/// Applies the controllable transform to one visual bundle. Shapes are
/// preserved exactly; `w = 0` returns the input unchanged.
pub fn transform(
    visual: &FeatureBundle,
    vtes: &[f32],
    params: &CvacptParams,
) -> Result<FeatureBundle> {
    params.validate()?;
    let d = params.dim;
    check_dim(d, visual.dim())?;
    check_dim(d, vtes.len())?;
    if params.w == 0.0 {
        return Ok(visual.clone());
    }
    let w = params.w;
    let (alpha_g, beta_g) = affine_pair(&params.a_global, visual.global(), vtes, d);
    let global: Vec<f32> = visual
        .global()
        .iter()
        .zip(alpha_g.iter().zip(&beta_g))
        .map(|(&v, (&a, &b))| v + w * (a * v + b))
        .collect();
    let mut local = Vec::with_capacity(visual.local().len());
    for p in 0..visual.n_patches() {
        let patch = visual.patch(p);
        let (alpha_l, beta_l) = affine_pair(&params.a_local, patch, vtes, d);
        for (i, &v) in patch.iter().enumerate() {
            local.push(v + w * (alpha_l[i] * v + beta_l[i]));
        }
    }
    FeatureBundle::new(global, local, visual.n_patches())
}

/// Seeded uniform initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for
/// every layer (bias included), w = 0.5.
pub fn init_params(dim: usize, seed: u64) -> Result<CvacptParams> {
    if dim == 0 {
        return Err(Error::InvalidConfig("dimension must be positive".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = |out_dim: usize, in_dim: usize| {
        let bound = 1.0 / (in_dim as f32).sqrt();
        let weight: Vec<f32> = (0..out_dim * in_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let bias: Vec<f32> = (0..out_dim).map(|_| rng.random_range(-bound..=bound)).collect();
        Affine::new(out_dim, in_dim, weight, bias).expect("consistent shapes")
    };
    let params = CvacptParams {
        dim,
        w: 0.5,
        ce: TwoLayerNet {
            l1: layer(dim, 2 * dim),
            l2: layer(dim, dim),
        },
        a_global: TwoLayerNet {
            l1: layer(dim, 2 * dim),
            l2: layer(2 * dim, dim),
        },
        a_local: TwoLayerNet {
            l1: layer(dim, 2 * dim),
            l2: layer(2 * dim, dim),
        },
    };
    params.validate()?;
    Ok(params)
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    w: f32,
    matrices: Vec<MatrixEntry>,
}

#[derive(Serialize, Deserialize)]
struct MatrixEntry {
    name: String,
    rows: usize,
    cols: usize,
    file: String,
}

fn layers_of(params: &CvacptParams) -> [(&Affine, &str, &str); 6] {
    [
        (&params.ce.l1, "ce_w1", "ce_b1"),
        (&params.ce.l2, "ce_w2", "ce_b2"),
        (&params.a_global.l1, "ag_w1", "ag_b1"),
        (&params.a_global.l2, "ag_w2", "ag_b2"),
        (&params.a_local.l1, "al_w1", "al_b1"),
        (&params.a_local.l2, "al_w2", "al_b2"),
    ]
}

/// Saves parameters as a directory: `manifest.json` with shapes and the
/// blend coefficient, and one EMB1 matrix file per weight and bias.
pub fn save_params(params: &CvacptParams, dir: impl AsRef<Path>) -> Result<()> {
    params.validate()?;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut matrices = Vec::new();
    for (layer, w_name, b_name) in layers_of(params) {
        let entries = [
            (w_name, layer.out_dim, layer.in_dim, &layer.weight),
            (b_name, 1usize, layer.out_dim, &layer.bias),
        ];
        for (name, rows, cols, data) in entries {
            let file = format!("{name}.emb");
            let store = EmbeddingStore::new(rows, cols, data.clone())?;
            save_embeddings(&store, dir.join(&file))?;
            matrices.push(MatrixEntry {
                name: name.to_string(),
                rows,
                cols,
                file,
            });
        }
    }
    let manifest = Manifest {
        dim: params.dim,
        w: params.w,
        matrices,
    };
    let f = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(f, &manifest)?;
    Ok(())
}

/// Loads parameters saved by [`save_params`], verifying every shape.
pub fn load_params(dir: impl AsRef<Path>) -> Result<CvacptParams> {
    let dir = dir.as_ref();
    let f = std::fs::File::open(dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_reader(f)?;
    let d = manifest.dim;
    let mut stores: std::collections::HashMap<String, EmbeddingStore> =
        std::collections::HashMap::new();
    for entry in &manifest.matrices {
        let store = load_embeddings(dir.join(&entry.file))?;
        if store.rows() != entry.rows || store.dim() != entry.cols {
            return Err(Error::ShapeMismatch {
                name: entry.name.clone(),
                expected_rows: entry.rows,
                expected_cols: entry.cols,
                rows: store.rows(),
                cols: store.dim(),
            });
        }
        stores.insert(entry.name.clone(), store);
    }
    let mut fetch = |name: &str, out_dim: usize, in_dim: usize| -> Result<(Vec<f32>, usize)> {
        let store = stores.remove(name).ok_or_else(|| Error::ShapeMismatch {
            name: name.to_string(),
            expected_rows: out_dim,
            expected_cols: in_dim,
            rows: 0,
            cols: 0,
        })?;
        if store.rows() * store.dim() != out_dim * in_dim {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected_rows: out_dim,
                expected_cols: in_dim,
                rows: store.rows(),
                cols: store.dim(),
            });
        }
        Ok((store.data().to_vec(), out_dim))
    };
    let mut layer = |w_name: &str, b_name: &str, out_dim: usize, in_dim: usize| -> Result<Affine> {
        let (weight, _) = fetch(w_name, out_dim, in_dim)?;
        let (bias, _) = fetch(b_name, 1, out_dim)?;
        Affine::new(out_dim, in_dim, weight, bias)
    };
    let params = CvacptParams {
        dim: d,
        w: manifest.w,
        ce: TwoLayerNet {
            l1: layer("ce_w1", "ce_b1", d, 2 * d)?,
            l2: layer("ce_w2", "ce_b2", d, d)?,
        },
        a_global: TwoLayerNet {
            l1: layer("ag_w1", "ag_b1", d, 2 * d)?,
            l2: layer("ag_w2", "ag_b2", 2 * d, d)?,
        },
        a_local: TwoLayerNet {
            l1: layer("al_w1", "al_b1", d, 2 * d)?,
            l2: layer("al_w2", "al_b2", 2 * d, d)?,
        },
    };
    params.validate()?;
    Ok(params)
}

/// All-zero networks with the given blend: the identity transform for any w.
pub fn zero_params(dim: usize, w: f32) -> CvacptParams {
    CvacptParams {
        dim,
        w,
        ce: TwoLayerNet {
            l1: Affine::zeros(dim, 2 * dim),
            l2: Affine::zeros(dim, dim),
        },
        a_global: TwoLayerNet {
            l1: Affine::zeros(dim, 2 * dim),
            l2: Affine::zeros(2 * dim, dim),
        },
        a_local: TwoLayerNet {
            l1: Affine::zeros(dim, 2 * dim),
            l2: Affine::zeros(2 * dim, dim),
        },
    }
}
