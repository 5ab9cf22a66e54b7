//! The classification model: a small convolutional encoder, a projector head
//! used only during contrastive pre-training, and a single-layer linear
//! classifier.
//!
//! Parameters live outside any graph; each forward pass binds them into a
//! fresh [`Graph`] as leaves, trainable or frozen. Input gradients flow the
//! same way, which is what the attacks differentiate through.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::data::LabeledImage;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, TensorId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Network dimensions.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ArchitectureConfig {
    /// Input side length (square, single channel).
    pub input: usize,
    /// Channel width per convolution stage; pooling halves the spatial size
    /// after every stage except the last, which global-average-pools.
    pub channels: Vec<usize>,
    /// Representation dimension D.
    pub repr_dim: usize,
    pub projector_hidden: usize,
    pub projector_out: usize,
    pub class_count: usize,
    /// Optional deeper stages with residual connections.
    pub residual: bool,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            input: 64,
            channels: vec![16, 32, 64],
            repr_dim: 128,
            projector_hidden: 64,
            projector_out: 32,
            class_count: 4,
            residual: false,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::InvalidArg("encoder needs at least one stage".into()));
        }
        if self.input < 1 << self.channels.len() {
            return Err(Error::InvalidArg(format!(
                "input {} too small for {} pooling stages",
                self.input,
                self.channels.len() - 1
            )));
        }
        let dims = [
            self.repr_dim,
            self.projector_hidden,
            self.projector_out,
            self.class_count,
        ];
        if dims.iter().any(|&d| d == 0) || self.channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidArg("all dimensions must be positive".into()));
        }
        if self.repr_dim < self.class_count {
            return Err(Error::InvalidArg(format!(
                "representation dim {} below class count {}",
                self.repr_dim, self.class_count
            )));
        }
        Ok(())
    }

    /// Input channel count of stage `i`.
    fn stage_in(&self, i: usize) -> usize {
        if i == 0 {
            1
        } else {
            self.channels[i - 1]
        }
    }
}

/// One convolution stage's parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvStage {
    Plain {
        w: Tensor,
    },
    Residual {
        a: Tensor,
        b: Tensor,
        /// 1x1 projection, present when the stage changes channel count.
        skip: Option<Tensor>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub stages: Vec<ConvStage>,
    pub fc_w: Tensor,
    pub fc_b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub w: Tensor,
    pub b: Tensor,
}

/// Every trainable tensor of the model, grouped by role.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchitectureConfig,
    pub encoder: EncoderParams,
    pub projector: ProjectorParams,
    pub classifier: ClassifierParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    Projector,
    Classifier,
}

impl ModelParams {
    /// Tensors of the selected groups, always in canonical declaration order
    /// (encoder, projector, classifier) regardless of selector order.
    pub fn tensors(&self, groups: &[ParamGroup]) -> Vec<&Tensor> {
        let mut out = Vec::new();
        if groups.contains(&ParamGroup::Encoder) {
            for s in &self.encoder.stages {
                match s {
                    ConvStage::Plain { w } => out.push(w),
                    ConvStage::Residual { a, b, skip } => {
                        out.push(a);
                        out.push(b);
                        if let Some(s) = skip {
                            out.push(s);
                        }
                    }
                }
            }
            out.push(&self.encoder.fc_w);
            out.push(&self.encoder.fc_b);
        }
        if groups.contains(&ParamGroup::Projector) {
            out.extend([
                &self.projector.w1,
                &self.projector.b1,
                &self.projector.w2,
                &self.projector.b2,
            ]);
        }
        if groups.contains(&ParamGroup::Classifier) {
            out.extend([&self.classifier.w, &self.classifier.b]);
        }
        out
    }

    /// Mutable view in the same canonical order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self, groups: &[ParamGroup]) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        if groups.contains(&ParamGroup::Encoder) {
            for s in &mut self.encoder.stages {
                match s {
                    ConvStage::Plain { w } => out.push(w),
                    ConvStage::Residual { a, b, skip } => {
                        out.push(a);
                        out.push(b);
                        if let Some(s) = skip {
                            out.push(s);
                        }
                    }
                }
            }
            out.push(&mut self.encoder.fc_w);
            out.push(&mut self.encoder.fc_b);
        }
        if groups.contains(&ParamGroup::Projector) {
            let p = &mut self.projector;
            out.push(&mut p.w1);
            out.push(&mut p.b1);
            out.push(&mut p.w2);
            out.push(&mut p.b2);
        }
        if groups.contains(&ParamGroup::Classifier) {
            let c = &mut self.classifier;
            out.push(&mut c.w);
            out.push(&mut c.b);
        }
        out
    }
}

fn kaiming_uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(data, shape).expect("shape matches data")
}

/// Fan-in scaled uniform initialization, deterministic per seed. Biases
/// start at zero.
pub fn init_params(arch: &ArchitectureConfig, rng_seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut stages = Vec::with_capacity(arch.channels.len());
    for (i, &cout) in arch.channels.iter().enumerate() {
        let cin = arch.stage_in(i);
        if arch.residual {
            let a = kaiming_uniform(&mut rng, vec![cout, cin, 3, 3], cin * 9);
            let b = kaiming_uniform(&mut rng, vec![cout, cout, 3, 3], cout * 9);
            let skip = (cin != cout)
                .then(|| kaiming_uniform(&mut rng, vec![cout, cin, 1, 1], cin));
            stages.push(ConvStage::Residual { a, b, skip });
        } else {
            stages.push(ConvStage::Plain {
                w: kaiming_uniform(&mut rng, vec![cout, cin, 3, 3], cin * 9),
            });
        }
    }
    let c_last = *arch.channels.last().unwrap();
    let encoder = EncoderParams {
        stages,
        fc_w: kaiming_uniform(&mut rng, vec![c_last, arch.repr_dim], c_last),
        fc_b: Tensor::zeros(vec![arch.repr_dim]),
    };
    let projector = ProjectorParams {
        w1: kaiming_uniform(
            &mut rng,
            vec![arch.repr_dim, arch.projector_hidden],
            arch.repr_dim,
        ),
        b1: Tensor::zeros(vec![arch.projector_hidden]),
        w2: kaiming_uniform(
            &mut rng,
            vec![arch.projector_hidden, arch.projector_out],
            arch.projector_hidden,
        ),
        b2: Tensor::zeros(vec![arch.projector_out]),
    };
    let classifier = ClassifierParams {
        w: kaiming_uniform(&mut rng, vec![arch.repr_dim, arch.class_count], arch.repr_dim),
        b: Tensor::zeros(vec![arch.class_count]),
    };
    Ok(ModelParams {
        arch: arch.clone(),
        encoder,
        projector,
        classifier,
    })
}

/// Graph handles of bound encoder parameters.
pub struct BoundEncoder {
    arch: ArchitectureConfig,
    stages: Vec<BoundStage>,
    fc_w: TensorId,
    fc_b: TensorId,
}

enum BoundStage {
    Plain { w: TensorId },
    Residual { a: TensorId, b: TensorId, skip: Option<TensorId> },
}

pub struct BoundProjector {
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
}

pub struct BoundClassifier {
    w: TensorId,
    b: TensorId,
}

fn bind(g: &mut Graph, t: &Tensor, trainable: bool) -> TensorId {
    let mut leaf = t.clone();
    leaf.requires_grad = trainable;
    leaf.grad = None;
    g.leaf(leaf)
}

pub fn bind_encoder(g: &mut Graph, params: &ModelParams, trainable: bool) -> BoundEncoder {
    let stages = params
        .encoder
        .stages
        .iter()
        .map(|s| match s {
            ConvStage::Plain { w } => BoundStage::Plain {
                w: bind(g, w, trainable),
            },
            ConvStage::Residual { a, b, skip } => BoundStage::Residual {
                a: bind(g, a, trainable),
                b: bind(g, b, trainable),
                skip: skip.as_ref().map(|s| bind(g, s, trainable)),
            },
        })
        .collect();
    BoundEncoder {
        arch: params.arch.clone(),
        stages,
        fc_w: bind(g, &params.encoder.fc_w, trainable),
        fc_b: bind(g, &params.encoder.fc_b, trainable),
    }
}

pub fn bind_projector(g: &mut Graph, params: &ModelParams, trainable: bool) -> BoundProjector {
    BoundProjector {
        w1: bind(g, &params.projector.w1, trainable),
        b1: bind(g, &params.projector.b1, trainable),
        w2: bind(g, &params.projector.w2, trainable),
        b2: bind(g, &params.projector.b2, trainable),
    }
}

pub fn bind_classifier(g: &mut Graph, params: &ModelParams, trainable: bool) -> BoundClassifier {
    BoundClassifier {
        w: bind(g, &params.classifier.w, trainable),
        b: bind(g, &params.classifier.b, trainable),
    }
}

impl BoundEncoder {
    /// Gradient handles in the same order as
    /// `ModelParams::tensors(&[ParamGroup::Encoder])`.
    pub fn param_ids(&self) -> Vec<TensorId> {
        let mut ids = Vec::new();
        for s in &self.stages {
            match s {
                BoundStage::Plain { w } => ids.push(*w),
                BoundStage::Residual { a, b, skip } => {
                    ids.push(*a);
                    ids.push(*b);
                    if let Some(s) = skip {
                        ids.push(*s);
                    }
                }
            }
        }
        ids.push(self.fc_w);
        ids.push(self.fc_b);
        ids
    }
}

impl BoundProjector {
    pub fn param_ids(&self) -> Vec<TensorId> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }
}

impl BoundClassifier {
    pub fn param_ids(&self) -> Vec<TensorId> {
        vec![self.w, self.b]
    }
}

/// Gain applied to the global-average-pooled features. Pooling over the
/// whole spatial extent shrinks per-image feature variation far below the
/// scale the dense layers train well at; a fixed gain restores it (there is
/// no batch normalization in this stack).
pub const POOLED_FEATURE_GAIN: f64 = 6.0;

/// Map a batch of images `[B, 1, H, W]` to representations `[B, D]`.
///
/// Pixels are centered from `[0, 1]` to `[-1, 1]` first. Per stage: 3x3
/// convolution (stride 1, pad 1), relu, then 2x2 max pooling, except the
/// last stage which global-average-pools (scaled by
/// [`POOLED_FEATURE_GAIN`]); a final dense layer produces the
/// representation.
pub fn encode(g: &mut Graph, enc: &BoundEncoder, x: TensorId) -> Result<TensorId> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != enc.arch.input || shape[3] != enc.arch.input
    {
        return Err(Error::BadShape {
            op: "encode",
            shape,
            reason: format!("expected [B, 1, {0}, {0}]", enc.arch.input),
        });
    }
    let n: usize = shape.iter().product();
    let half = g.constant(vec![0.5; n], shape.clone())?;
    let centered = g.sub(x, half)?;
    let mut h = g.scalar_mul(centered, 2.0)?;
    let n_stages = enc.stages.len();
    for (i, stage) in enc.stages.iter().enumerate() {
        h = match stage {
            BoundStage::Plain { w } => {
                let c = g.conv2d(h, *w, 1, 1)?;
                g.relu(c)?
            }
            BoundStage::Residual { a, b, skip } => {
                let c1 = g.conv2d(h, *a, 1, 1)?;
                let r1 = g.relu(c1)?;
                let c2 = g.conv2d(r1, *b, 1, 1)?;
                let sk = match skip {
                    Some(s) => g.conv2d(h, *s, 1, 0)?,
                    None => h,
                };
                let sum = g.add(c2, sk)?;
                g.relu(sum)?
            }
        };
        if i + 1 < n_stages {
            h = g.max_pool_2x2(h)?;
        }
    }
    let pooled = g.global_avg_pool(h)?;
    let pooled = g.scalar_mul(pooled, POOLED_FEATURE_GAIN)?;
    g.dense(pooled, enc.fc_w, enc.fc_b)
}

/// Projection head used only during pre-training: dense, relu, dense, then
/// L2 normalization, so rows have unit norm.
pub fn project(g: &mut Graph, proj: &BoundProjector, reps: TensorId) -> Result<TensorId> {
    let h = g.dense(reps, proj.w1, proj.b1)?;
    let h = g.relu(h)?;
    let h = g.dense(h, proj.w2, proj.b2)?;
    g.l2_normalize(h)
}

/// The linear classifier: one affine map, no activation.
pub fn classify(g: &mut Graph, cls: &BoundClassifier, reps: TensorId) -> Result<TensorId> {
    g.dense(reps, cls.w, cls.b)
}

/// Stack images into a `[B, 1, H, W]` tensor.
pub fn images_to_tensor(images: &[&LabeledImage]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArg("empty image batch".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for im in images {
        if im.height != h || im.width != w {
            return Err(Error::BadShape {
                op: "images-to-tensor",
                shape: vec![im.height, im.width],
                reason: "images in a batch share one shape".into(),
            });
        }
        data.extend_from_slice(&im.pixels);
    }
    Tensor::new(data, vec![images.len(), 1, h, w])
}

/// Labels of a batch in the same order.
pub fn batch_labels(images: &[&LabeledImage]) -> Vec<usize> {
    images.iter().map(|im| im.label).collect()
}

#[cfg(test)]
mod tests;
