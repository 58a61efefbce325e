//! Encoder branches, 512-wide heads and the fusion layer.
//!
//! Each branch maps an input to a feature vector (a small CNN over the image,
//! or a lookup of precomputed features by sample id), then through its own
//! affine head to 512 values. Head outputs are concatenated in branch
//! declaration order and fused by one affine map to the final 512-d embedding.
//! Swapping two branches changes the embedding.

mod emb1;

use std::collections::HashMap;
use std::sync::Arc;

use crate::diffcore::{Graph, ParamId, ParamStore, Real, Tensor, Var};
use crate::imgproc::RasterImage;
use crate::losses::LossConfig;
use crate::rng::{derive_seed, SplitMix64};
use crate::{Error, Result};

pub use emb1::{
    load_emb1, sha256_hex, sidecar_path, write_emb1, EmbeddingSidecar, EmbeddingTable, EMB1_MAGIC,
};

/// Width of every head output and of the fused embedding.
pub const EMBED_DIM: usize = 512;
/// Feature width produced by the toy CNN.
pub const TOY_FEATURE_WIDTH: usize = 32;

const TOY_LAYERS: [(usize, usize); 3] = [(1, 8), (8, 16), (16, 32)];

/// Images addressed by sample id.
pub trait ImageSource {
    fn image(&self, id: &str) -> Option<&RasterImage>;
}

impl ImageSource for HashMap<String, RasterImage> {
    fn image(&self, id: &str) -> Option<&RasterImage> {
        self.get(id)
    }
}

/// For models whose branches never look at pixels.
pub struct NoImages;

impl ImageSource for NoImages {
    fn image(&self, _: &str) -> Option<&RasterImage> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchKind {
    ToyCnn,
    ExternalEmbedding,
}

#[derive(Clone, Debug)]
enum Backbone {
    /// `(weight, bias)` per conv layer.
    Toy([(ParamId, ParamId); 3]),
    External(Arc<EmbeddingTable>),
}

/// One encoder branch together with its parameters.
#[derive(Clone, Debug)]
pub struct Branch<T> {
    name: String,
    backbone: Backbone,
    feature_width: usize,
    head: (ParamId, ParamId),
    params: ParamStore<T>,
}

impl<T: Real> Branch<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> BranchKind {
        match self.backbone {
            Backbone::Toy(_) => BranchKind::ToyCnn,
            Backbone::External(_) => BranchKind::ExternalEmbedding,
        }
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    /// Freezes or unfreezes the backbone. Heads stay trainable; external
    /// backbones have no parameters.
    pub fn set_backbone_frozen(&mut self, frozen: bool) {
        if let Backbone::Toy(layers) = self.backbone {
            for (w, b) in layers {
                self.params.set_frozen(w, frozen);
                self.params.set_frozen(b, frozen);
            }
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    fn shift(&mut self, offset: usize) {
        if let Backbone::Toy(layers) = &mut self.backbone {
            for (w, b) in layers.iter_mut() {
                *w = w.shifted(offset);
                *b = b.shifted(offset);
            }
        }
        self.head = (self.head.0.shifted(offset), self.head.1.shifted(offset));
    }

    fn features(&self, g: &mut Graph<T>, store: &ParamStore<T>, ids: &[&str], images: &dyn ImageSource) -> Result<Var> {
        match &self.backbone {
            Backbone::External(table) => {
                let mut data = Vec::with_capacity(ids.len() * self.feature_width);
                for id in ids {
                    let v = table.get(id).ok_or_else(|| {
                        Error::MissingSample(format!("`{id}` has no features in branch `{}`", self.name))
                    })?;
                    data.extend(v.iter().map(|&x| T::of(x as f64)));
                }
                g.input(Tensor::new(vec![ids.len(), self.feature_width], data)?)
            }
            Backbone::Toy(layers) => {
                let x = g.input(image_batch(ids, images, &self.name)?)?;
                let mut h = x;
                for (i, &(w, b)) in layers.iter().enumerate() {
                    let (w, b) = (g.param(store, w), g.param(store, b));
                    h = g.conv2d(h, w, Some(b), 2, 1)?;
                    h = g.relu(h)?;
                    if i == 1 {
                        h = g.max_pool2d(h, 2)?;
                    }
                }
                let h = g.global_avg_pool(h)?;
                g.flatten(h)
            }
        }
    }
}

/// Stacks grayscale images into `[N, 1, H, W]` with values in `[0, 1]`.
fn image_batch<T: Real>(ids: &[&str], images: &dyn ImageSource, branch: &str) -> Result<Tensor<T>> {
    let mut data = Vec::new();
    let mut size = None;
    for id in ids {
        let img = images.image(id).ok_or_else(|| {
            Error::MissingSample(format!("`{id}` has no image for branch `{branch}`"))
        })?;
        let dims = (img.width(), img.height());
        if *size.get_or_insert(dims) != dims {
            return Err(Error::shape(
                "image batch",
                format!("`{id}` is {}x{}, batch is {:?}", dims.0, dims.1, size.unwrap()),
            ));
        }
        data.extend(img.pixels().iter().map(|&p| T::of(p as f64 / 255.0)));
    }
    let (w, h) = size.unwrap_or((0, 0));
    Tensor::new(vec![ids.len(), 1, h, w], data)
}

fn head<T: Real>(params: &mut ParamStore<T>, width: usize, rng: &mut SplitMix64) -> (ParamId, ParamId) {
    let w = params.add_uniform("head.weight", &[EMBED_DIM, width], width, rng);
    let b = params.add_uniform("head.bias", &[EMBED_DIM], width, rng);
    (w, b)
}

/// Small CNN: three stride-2 3x3 convolutions (1->8->16->32, padding 1) with
/// ReLU, a 2x2 max pool after the second, global average pooling, then a
/// 32->512 head. Initialisation depends only on `seed`.
pub fn build_toy_encoder<T: Real>(seed: u64) -> Branch<T> {
    let mut rng = SplitMix64::new(seed);
    let mut params = ParamStore::new();
    let layers = TOY_LAYERS.map(|(cin, cout)| {
        let fan_in = cin * 9;
        let w = params.add_uniform(format!("conv{cout}.weight"), &[cout, cin, 3, 3], fan_in, &mut rng);
        let b = params.add_uniform(format!("conv{cout}.bias"), &[cout], fan_in, &mut rng);
        (w, b)
    });
    let head = head(&mut params, TOY_FEATURE_WIDTH, &mut rng);
    Branch {
        name: "toy_cnn".into(),
        backbone: Backbone::Toy(layers),
        feature_width: TOY_FEATURE_WIDTH,
        head,
        params,
    }
}

/// Branch whose backbone is a lookup into precomputed features.
pub fn build_external_branch<T: Real>(
    feature_width: usize,
    table: Arc<EmbeddingTable>,
    seed: u64,
) -> Result<Branch<T>> {
    if feature_width == 0 {
        return Err(Error::param("feature_width must be positive"));
    }
    if table.dim() != feature_width {
        return Err(Error::shape(
            "external branch",
            format!("table width {} but declared feature_width {feature_width}", table.dim()),
        ));
    }
    let mut rng = SplitMix64::new(seed);
    let mut params = ParamStore::new();
    let head = head(&mut params, feature_width, &mut rng);
    Ok(Branch {
        name: "external".into(),
        backbone: Backbone::External(table),
        feature_width,
        head,
        params,
    })
}

/// Fused multi-branch encoder with a single parameter registry.
#[derive(Clone, Debug)]
pub struct EnsembleModel<T> {
    branches: Vec<Branch<T>>,
    fusion: (ParamId, ParamId),
    params: ParamStore<T>,
    normalize: bool,
}

impl<T: Real> EnsembleModel<T> {
    /// Takes ownership of the branches' parameters (branch order is kept) and
    /// adds an `N*512 -> 512` fusion layer initialised from `seed`.
    pub fn new(branches: Vec<Branch<T>>, seed: u64) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::param("an ensemble needs at least one branch"));
        }
        let mut params = ParamStore::new();
        let mut owned = Vec::with_capacity(branches.len());
        for (i, mut b) in branches.into_iter().enumerate() {
            let mut local = std::mem::take(&mut b.params);
            for p in local.iter_mut() {
                p.name = format!("branch{i}.{}.{}", b.name, p.name);
            }
            let offset = params.append(local);
            b.shift(offset);
            owned.push(b);
        }
        let width = owned.len() * EMBED_DIM;
        let mut rng = SplitMix64::new(derive_seed(seed, "fusion"));
        let w = params.add_uniform("fusion.weight", &[EMBED_DIM, width], width, &mut rng);
        let b = params.add_uniform("fusion.bias", &[EMBED_DIM], width, &mut rng);
        Ok(Self {
            branches: owned,
            fusion: (w, b),
            params,
            normalize: false,
        })
    }

    /// L2-normalise embeddings before they are returned (off by default).
    pub fn with_normalization(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn branches(&self) -> &[Branch<T>] {
        &self.branches
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn fusion_params(&self) -> usize {
        self.params.get(self.fusion.0).numel() + self.params.get(self.fusion.1).numel()
    }

    /// `(total, trainable)` scalar parameter counts.
    pub fn count_parameters(&self) -> (usize, usize) {
        self.params.count()
    }

    /// Records the forward pass for a batch and returns the `[N, 512]`
    /// embedding node. With `dropout = Some((rate, rng))` the concatenated
    /// head outputs are masked with inverted dropout.
    pub fn embed(
        &self,
        g: &mut Graph<T>,
        ids: &[&str],
        images: &dyn ImageSource,
        dropout: Option<(f64, &mut SplitMix64)>,
    ) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::shape("embed", "empty batch"));
        }
        let mut heads = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let f = b.features(g, &self.params, ids, images)?;
            let (w, bias) = (g.param(&self.params, b.head.0), g.param(&self.params, b.head.1));
            heads.push(g.linear(f, w, Some(bias))?);
        }
        let mut joined = g.concat(&heads, 1)?;
        if let Some((rate, rng)) = dropout {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
            }
            if rate > 0.0 {
                let shape = g.value(joined).shape().to_vec();
                let keep = 1.0 / (1.0 - rate);
                let mask = Tensor::from_fn(&shape, |_| {
                    T::of(if rng.next_f64() < rate { 0.0 } else { keep })
                });
                let mask = g.input(mask)?;
                joined = g.mul(joined, mask)?;
            }
        }
        let (w, b) = (g.param(&self.params, self.fusion.0), g.param(&self.params, self.fusion.1));
        let out = g.linear(joined, w, Some(b))?;
        if self.normalize {
            g.l2_normalize(out)
        } else {
            Ok(out)
        }
    }

    /// Embeddings for `ids`, evaluated in chunks of at most `batch`.
    pub fn embed_vectors(&self, ids: &[&str], images: &dyn ImageSource, batch: usize) -> Result<Vec<Vec<T>>> {
        let mut out = Vec::with_capacity(ids.len());
        for chunk in ids.chunks(batch.max(1)) {
            let mut g = Graph::new();
            let e = self.embed(&mut g, chunk, images, None)?;
            out.extend(g.value(e).data().chunks(EMBED_DIM).map(<[T]>::to_vec));
        }
        Ok(out)
    }

    /// `(d(a, p), d(a, n))` with one shared parameter set.
    pub fn triplet_forward(
        &self,
        a: &str,
        p: &str,
        n: &str,
        images: &dyn ImageSource,
        cfg: &LossConfig,
    ) -> Result<(T, T)> {
        cfg.validate()?;
        let mut g = Graph::new();
        let ea = self.embed(&mut g, &[a], images, None)?;
        let ep = self.embed(&mut g, &[p], images, None)?;
        let en = self.embed(&mut g, &[n], images, None)?;
        let dap = g.pairwise_distance(ea, ep, cfg.p, cfg.distance_eps)?;
        let dan = g.pairwise_distance(ea, en, cfg.p, cfg.distance_eps)?;
        Ok((g.value(dap).data()[0], g.value(dan).data()[0]))
    }
}
