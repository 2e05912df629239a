//! Scoring models: univariate DNN, groupwise GSF(m), and the
//! squeeze-and-excitation sequencewise models with their ablation variants.
//! Every model maps one query's masked `L x C` document matrix to `L` scores.

mod checkpoint;
mod forward;

pub use checkpoint::{load_model, save_model, write_note};
pub use forward::{
    excite, extract_scores, group_tensor, se_b_block, se_block, squeeze, BnBatchStats,
    ForwardOutput, Mode,
};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use rand::Rng;
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Per-document MLP; identical to GSF with group size 1.
    Univariate,
    /// Groupwise scoring over circular document windows of size m.
    Gsf,
    /// SE block (pool, then bottleneck excitation) around every dense layer.
    Serank,
    /// SE-b block: per-document reduction first, pooling afterwards.
    SerankB,
    /// Ablation: excitation per document from its own row, no pooling.
    SerankNoSqueeze,
    /// Ablation: gate vector concatenated onto the block input instead of
    /// multiplied; downstream widths double.
    SerankNoExcitation,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "univariate" => Variant::Univariate,
            "gsf" => Variant::Gsf,
            "serank" => Variant::Serank,
            "serank_b" => Variant::SerankB,
            "serank_no_squeeze" => Variant::SerankNoSqueeze,
            "serank_no_excitation" => Variant::SerankNoExcitation,
            other => return Err(Error::Config(format!("unknown variant {other:?}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Univariate => "univariate",
            Variant::Gsf => "gsf",
            Variant::Serank => "serank",
            Variant::SerankB => "serank_b",
            Variant::SerankNoSqueeze => "serank_no_squeeze",
            Variant::SerankNoExcitation => "serank_no_excitation",
        }
    }

    fn has_blocks(&self) -> bool {
        matches!(
            self,
            Variant::Serank
                | Variant::SerankB
                | Variant::SerankNoSqueeze
                | Variant::SerankNoExcitation
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    Mean,
    Max,
}

impl Pooling {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "mean" => Pooling::Mean,
            "max" => Pooling::Max,
            other => return Err(Error::Config(format!("unknown pooling {other:?}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
        }
    }
}

/// Declarative description of a scoring model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub variant: Variant,
    /// Feature channels per document (C).
    pub input_width: usize,
    pub hidden_widths: Vec<usize>,
    /// Group size m; used by `Gsf` only.
    pub group_size: usize,
    /// Excitation bottleneck shrinkage r: widths reduce to floor(w / r).
    pub shrinkage: usize,
    pub pooling: Pooling,
    pub batch_norm: bool,
    /// Place a block on the raw input in addition to the hidden layers.
    pub se_on_input: bool,
    /// Fidelity flag: use relu instead of sigmoid as the outer excitation
    /// activation.
    pub double_relu_excitation: bool,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(variant: Variant, input_width: usize) -> Self {
        ModelSpec {
            variant,
            input_width,
            hidden_widths: vec![64, 32, 16],
            group_size: 2,
            shrinkage: 2,
            pooling: Pooling::Mean,
            batch_norm: false,
            se_on_input: true,
            double_relu_excitation: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(Error::Config("input_width must be positive".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::Config(
                "hidden_widths must be non-empty and positive".into(),
            ));
        }
        if self.shrinkage == 0 {
            return Err(Error::Config("shrinkage must be at least 1".into()));
        }
        if self.variant == Variant::Gsf && self.group_size == 0 {
            return Err(Error::Config("group_size must be at least 1".into()));
        }
        if self.variant.has_blocks() {
            let mut widths = self.hidden_widths.clone();
            if self.se_on_input {
                widths.push(self.input_width);
            }
            if widths.iter().any(|&w| w / self.shrinkage == 0) {
                return Err(Error::Config(format!(
                    "shrinkage {} collapses a block width to zero",
                    self.shrinkage
                )));
            }
        }
        Ok(())
    }
}

/// How a block transforms its input, fixed by the variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BlockKind {
    Se,
    SeB,
    NoSqueeze,
    NoExcitation,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockPlan {
    pub name: String,
    pub width: usize,
    pub bottleneck: usize,
    pub kind: BlockKind,
}

impl BlockPlan {
    /// Rows leaving the block carry this many channels.
    pub fn out_width(&self) -> usize {
        match self.kind {
            BlockKind::NoExcitation => 2 * self.width,
            _ => self.width,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerPlan {
    pub index: usize,
    pub fan_in: usize,
    pub width: usize,
    pub batch_norm: bool,
    pub block: Option<BlockPlan>,
}

/// The layer walk shared by initialization, the forward builder, and the
/// FLOPs counter.
#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub input_block: Option<BlockPlan>,
    pub layers: Vec<LayerPlan>,
    pub out_in: usize,
    pub out_dim: usize,
}

pub(crate) fn plan(spec: &ModelSpec) -> Result<Plan> {
    spec.validate()?;
    let kind = match spec.variant {
        Variant::Serank => Some(BlockKind::Se),
        Variant::SerankB => Some(BlockKind::SeB),
        Variant::SerankNoSqueeze => Some(BlockKind::NoSqueeze),
        Variant::SerankNoExcitation => Some(BlockKind::NoExcitation),
        Variant::Univariate | Variant::Gsf => None,
    };
    let block_at = |name: String, width: usize| -> Option<BlockPlan> {
        kind.map(|kind| BlockPlan {
            name,
            width,
            bottleneck: width / spec.shrinkage,
            kind,
        })
    };

    let input_block = if spec.se_on_input {
        block_at("se_in".into(), spec.input_width)
    } else {
        None
    };
    let mut fan_in = match (&input_block, spec.variant) {
        (_, Variant::Gsf) => spec.group_size * spec.input_width,
        (Some(b), _) => b.out_width(),
        (None, _) => spec.input_width,
    };
    let mut layers = Vec::new();
    for (i, &w) in spec.hidden_widths.iter().enumerate() {
        let block = block_at(format!("se{i}"), w);
        let next_in = block.as_ref().map_or(w, BlockPlan::out_width);
        layers.push(LayerPlan {
            index: i,
            fan_in,
            width: w,
            batch_norm: spec.batch_norm,
            block,
        });
        fan_in = next_in;
    }
    Ok(Plan {
        input_block,
        layers,
        out_in: fan_in,
        out_dim: if spec.variant == Variant::Gsf {
            spec.group_size
        } else {
            1
        },
    })
}

/// A named parameter; `trainable` is false for batch-norm moving statistics.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// A scoring model: spec plus named parameters in a fixed registration
/// order. Immutable during inference; training mutates tensors in place.
#[derive(Debug, Clone)]
pub struct ScoringModel {
    pub spec: ModelSpec,
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

/// Graph leaves for every parameter, aligned with the model's param order.
pub struct Bound {
    pub ids: Vec<NodeId>,
}

impl ScoringModel {
    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> &Param {
        &self.params[self.by_name[name]]
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Param {
        &mut self.params[self.by_name[name]]
    }

    pub(crate) fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) {
        self.by_name.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            tensor,
            trainable,
        });
    }

    /// Register every parameter as a graph leaf. Trainable tensors are
    /// marked for gradient accumulation.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        let ids = self
            .params
            .iter()
            .map(|p| {
                let t = p.tensor.clone();
                graph.leaf(if p.trainable { t.with_grad() } else { t })
            })
            .collect();
        Bound { ids }
    }

    pub(crate) fn bound_id(&self, bound: &Bound, name: &str) -> NodeId {
        bound.ids[self.by_name[name]]
    }
}

/// Build a model with seeded Glorot-uniform weights (bound
/// sqrt(6 / (fan_in + fan_out))), zero biases, and identity batch-norm.
pub fn init(spec: &ModelSpec) -> Result<ScoringModel> {
    let plan = plan(spec)?;
    let mut model = ScoringModel {
        spec: spec.clone(),
        params: Vec::new(),
        by_name: HashMap::new(),
    };
    let mut rng = rng_from_seed(derive_seed(spec.seed, "model-init"));
    let mut glorot = |rows: usize, cols: usize| -> Tensor {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Tensor::new(vec![rows, cols], data).expect("sized data")
    };

    let add_block = |model: &mut ScoringModel, b: &BlockPlan, g: &mut dyn FnMut(usize, usize) -> Tensor| {
        model.insert(&format!("{}.w1", b.name), g(b.width, b.bottleneck), true);
        model.insert(&format!("{}.w2", b.name), g(b.bottleneck, b.width), true);
    };

    if let Some(b) = &plan.input_block {
        add_block(&mut model, b, &mut glorot);
    }
    for layer in &plan.layers {
        let i = layer.index;
        model.insert(
            &format!("fc{i}.weight"),
            glorot(layer.fan_in, layer.width),
            true,
        );
        model.insert(
            &format!("fc{i}.bias"),
            Tensor::zeros(1, layer.width),
            true,
        );
        if layer.batch_norm {
            model.insert(&format!("bn{i}.gamma"), Tensor::full(1, layer.width, 1.0), true);
            model.insert(&format!("bn{i}.beta"), Tensor::zeros(1, layer.width), true);
            model.insert(
                &format!("bn{i}.moving_mean"),
                Tensor::zeros(1, layer.width),
                false,
            );
            model.insert(
                &format!("bn{i}.moving_var"),
                Tensor::full(1, layer.width, 1.0),
                false,
            );
        }
        if let Some(b) = &layer.block {
            add_block(&mut model, b, &mut glorot);
        }
    }
    model.insert(
        "out.weight",
        glorot(plan.out_in, plan.out_dim),
        true,
    );
    model.insert("out.bias", Tensor::zeros(1, plan.out_dim), true);
    Ok(model)
}
