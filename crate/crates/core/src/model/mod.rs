//! The DDxNet classifier: a convolutional stem, stages of densely connected
//! blocks (bottleneck + dilated causal convolution, each appending
//! `growth_rate` channels), temporal-aggregation transitions between stages,
//! and a pooled linear head.

mod config;

pub use config::{DdxConfig, DilationMode, Head, Init, ParamSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::ops;
use crate::param::{ParamId, ParamSet};
use crate::tape::{NodeId, Tape};
use crate::tensor::{lit, Elem, Tensor};

/// Whether normalization uses batch statistics (and updates running ones) or
/// frozen running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running normalization statistics for one site.
#[derive(Debug, Clone)]
pub struct BnSite<E: Elem> {
    pub name: String,
    pub mean: Vec<E>,
    pub var: Vec<E>,
}

#[derive(Debug, Clone, Copy)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    site: usize,
}

#[derive(Debug, Clone, Copy)]
struct BlockIds {
    bn1: BnIds,
    bottleneck_w: ParamId,
    bottleneck_b: ParamId,
    bn2: BnIds,
    conv_w: ParamId,
    conv_b: ParamId,
    dilation: usize,
}

#[derive(Debug, Clone, Copy)]
struct TransitionIds {
    bn: BnIds,
    conv_w: ParamId,
    conv_b: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    stem_w: ParamId,
    stem_b: ParamId,
    stages: Vec<Vec<BlockIds>>,
    transitions: Vec<TransitionIds>,
    head_bn: BnIds,
    head_w: ParamId,
    head_b: ParamId,
}

/// A materialized DDxNet: config, named parameters, and running statistics.
#[derive(Debug, Clone)]
pub struct Model<E: Elem> {
    config: DdxConfig,
    params: ParamSet<E>,
    running: Vec<BnSite<E>>,
    layout: Layout,
}

/// Eval-mode forward pass with intermediate feature maps exposed.
#[derive(Debug)]
pub struct EvalTrace<E: Elem> {
    /// Output of every stage-0 block (pre-pooling resolution).
    pub stage0_blocks: Vec<Tensor<E>>,
    /// Final feature map after the head normalization and activation, before
    /// global pooling.
    pub final_features: Tensor<E>,
    pub logits: Tensor<E>,
}

impl<E: Elem> Model<E> {
    /// Builds a model with He-normal weights from a seeded generator; biases
    /// and betas start at 0, gammas at 1, running stats at mean 0 / var 1.
    /// The same seed always yields bitwise-identical parameters.
    pub fn build(config: &DdxConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for spec in config.parameter_specs() {
            let numel: usize = spec.shape.iter().product();
            let data: Vec<E> = match spec.init {
                Init::HeNormal { fan_in } => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    (0..numel)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            E::from_f64(z * std)
                        })
                        .collect()
                }
                Init::Zero => vec![E::zero(); numel],
                Init::One => vec![E::one(); numel],
            };
            params.insert(spec.name, Tensor::from_vec(&spec.shape, data)?)?;
        }
        let running = config
            .norm_sites()
            .into_iter()
            .map(|(name, c)| BnSite { name, mean: vec![E::zero(); c], var: vec![E::one(); c] })
            .collect();
        let layout = Layout::resolve(config, &params)?;
        Ok(Model { config: config.clone(), params, running, layout })
    }

    /// Reassembles a model from loaded parts, cross-checking every shape
    /// against the config-derived layout.
    pub fn from_parts(
        config: DdxConfig,
        params: ParamSet<E>,
        running: Vec<BnSite<E>>,
    ) -> Result<Self> {
        config.validate()?;
        let specs = config.parameter_specs();
        if specs.len() != params.len() {
            return Err(Error::Corruption {
                tensor: "<parameter set>".into(),
                message: format!("expected {} parameters, got {}", specs.len(), params.len()),
            });
        }
        for spec in &specs {
            let p = params.by_name(&spec.name).ok_or_else(|| Error::Corruption {
                tensor: spec.name.clone(),
                message: "missing parameter".into(),
            })?;
            if p.value.shape() != spec.shape.as_slice() {
                return Err(Error::Corruption {
                    tensor: spec.name.clone(),
                    message: format!(
                        "shape {:?} contradicts config-derived shape {:?}",
                        p.value.shape(),
                        spec.shape
                    ),
                });
            }
        }
        let sites = config.norm_sites();
        if sites.len() != running.len() {
            return Err(Error::Corruption {
                tensor: "<running stats>".into(),
                message: format!("expected {} norm sites, got {}", sites.len(), running.len()),
            });
        }
        for ((name, c), site) in sites.iter().zip(&running) {
            if &site.name != name || site.mean.len() != *c || site.var.len() != *c {
                return Err(Error::Corruption {
                    tensor: site.name.clone(),
                    message: format!("running stats do not match site `{name}` ({c} channels)"),
                });
            }
        }
        let layout = Layout::resolve(&config, &params)?;
        Ok(Model { config, params, running, layout })
    }

    pub fn config(&self) -> &DdxConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<E> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<E> {
        &mut self.params
    }

    pub fn running(&self) -> &[BnSite<E>] {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut [BnSite<E>] {
        &mut self.running
    }

    fn check_input(&self, x: &Tensor<E>) -> Result<()> {
        let (_, c, t) = x.dims3()?;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "input has {c} channels, model expects {}",
                self.config.in_channels
            )));
        }
        let min_len = self.config.min_input_len();
        if t < min_len {
            return Err(Error::InvalidArgument(format!(
                "input length {t} is too short; {} stages require at least {min_len} samples",
                self.config.stages
            )));
        }
        Ok(())
    }

    // ---- recorded forward (training path) ------------------------------

    /// Full forward pass recorded on `tape`; returns the logits node.
    /// In Train mode, running statistics are updated with momentum 0.1.
    pub fn forward(&mut self, x: &Tensor<E>, mode: Mode, tape: &mut Tape<E>) -> Result<NodeId> {
        self.check_input(x)?;
        let x = tape.leaf(x.clone());
        let stem_w = tape.param(&self.params, self.layout.stem_w);
        let stem_b = tape.param(&self.params, self.layout.stem_b);
        let mut h = tape.conv1d_causal(x, stem_w, stem_b, 1)?;
        let layout = self.layout.clone();
        for (s, blocks) in layout.stages.iter().enumerate() {
            for block in blocks {
                h = self.block_forward(tape, h, block, mode)?;
            }
            if s < layout.transitions.len() {
                h = self.transition_forward(tape, h, &layout.transitions[s], mode)?;
            }
        }
        let bn = self.bn_forward(tape, h, &layout.head_bn, mode)?;
        let act = tape.relu(bn);
        let pooled = tape.global_avg_pool(act)?;
        let head_w = tape.param(&self.params, layout.head_w);
        let head_b = tape.param(&self.params, layout.head_b);
        tape.linear(pooled, head_w, head_b)
    }

    fn bn_forward(
        &mut self,
        tape: &mut Tape<E>,
        x: NodeId,
        ids: &BnIds,
        mode: Mode,
    ) -> Result<NodeId> {
        let gamma = tape.param(&self.params, ids.gamma);
        let beta = tape.param(&self.params, ids.beta);
        match mode {
            Mode::Train => {
                let (y, mean, var) = tape.batchnorm1d_train(x, gamma, beta)?;
                let momentum = lit::<E>(ops::BN_MOMENTUM);
                let keep = E::one() - momentum;
                let site = &mut self.running[ids.site];
                for (r, b) in site.mean.iter_mut().zip(&mean) {
                    *r = keep * *r + momentum * *b;
                }
                for (r, b) in site.var.iter_mut().zip(&var) {
                    *r = keep * *r + momentum * *b;
                }
                Ok(y)
            }
            Mode::Eval => {
                let site = &self.running[ids.site];
                tape.batchnorm1d_eval(x, gamma, beta, &site.mean, &site.var)
            }
        }
    }

    fn block_forward(
        &mut self,
        tape: &mut Tape<E>,
        x: NodeId,
        ids: &BlockIds,
        mode: Mode,
    ) -> Result<NodeId> {
        let bn1 = self.bn_forward(tape, x, &ids.bn1, mode)?;
        let act1 = tape.relu(bn1);
        let bw = tape.param(&self.params, ids.bottleneck_w);
        let bb = tape.param(&self.params, ids.bottleneck_b);
        let hidden = tape.conv1d_causal(act1, bw, bb, 1)?;
        let bn2 = self.bn_forward(tape, hidden, &ids.bn2, mode)?;
        let act2 = tape.relu(bn2);
        let cw = tape.param(&self.params, ids.conv_w);
        let cb = tape.param(&self.params, ids.conv_b);
        let fresh = tape.conv1d_causal(act2, cw, cb, ids.dilation)?;
        tape.concat_channels(&[x, fresh])
    }

    fn transition_forward(
        &mut self,
        tape: &mut Tape<E>,
        x: NodeId,
        ids: &TransitionIds,
        mode: Mode,
    ) -> Result<NodeId> {
        let bn = self.bn_forward(tape, x, &ids.bn, mode)?;
        let act = tape.relu(bn);
        let w = tape.param(&self.params, ids.conv_w);
        let b = tape.param(&self.params, ids.conv_b);
        let compressed = tape.conv1d_causal(act, w, b, 1)?;
        tape.avg_pool1d(compressed, 2, 2)
    }

    /// Output channels of block `l` in stage `s`: stage entry + `(l+1) * k`.
    pub fn block_out_channels(&self, stage: usize, block: usize) -> Result<usize> {
        let entries = self.config.stage_entry_channels()?;
        Ok(entries[stage] + (block + 1) * self.config.growth_rate)
    }

    // ---- tape-free Eval-mode inference ----------------------------------

    /// Eval-mode logits without recording; shareable across threads.
    pub fn infer(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self.eval_trace_inner(x, false)?.logits)
    }

    /// Eval-mode forward that also returns intermediate feature maps.
    pub fn eval_trace(&self, x: &Tensor<E>) -> Result<EvalTrace<E>> {
        self.eval_trace_inner(x, true)
    }

    fn eval_trace_inner(&self, x: &Tensor<E>, keep_blocks: bool) -> Result<EvalTrace<E>> {
        self.check_input(x)?;
        let mut h = ops::conv1d_causal_forward(
            x,
            &self.params.get(self.layout.stem_w).value,
            &self.params.get(self.layout.stem_b).value,
            1,
        )?;
        let mut stage0_blocks = Vec::new();
        for (s, blocks) in self.layout.stages.iter().enumerate() {
            for block in blocks {
                h = self.block_infer(&h, block)?;
                if s == 0 && keep_blocks {
                    stage0_blocks.push(h.clone());
                }
            }
            if s < self.layout.transitions.len() {
                h = self.transition_infer(&h, &self.layout.transitions[s])?;
            }
        }
        let final_features = {
            let bn = self.bn_infer(&h, &self.layout.head_bn)?;
            ops::relu_forward(&bn)
        };
        let pooled = ops::global_avg_pool_forward(&final_features)?;
        let logits = ops::linear_forward(
            &pooled,
            &self.params.get(self.layout.head_w).value,
            &self.params.get(self.layout.head_b).value,
        )?;
        Ok(EvalTrace { stage0_blocks, final_features, logits })
    }

    fn bn_infer(&self, x: &Tensor<E>, ids: &BnIds) -> Result<Tensor<E>> {
        let site = &self.running[ids.site];
        ops::batchnorm1d_eval_forward(
            x,
            &self.params.get(ids.gamma).value,
            &self.params.get(ids.beta).value,
            &site.mean,
            &site.var,
        )
    }

    fn block_infer(&self, x: &Tensor<E>, ids: &BlockIds) -> Result<Tensor<E>> {
        let act1 = ops::relu_forward(&self.bn_infer(x, &ids.bn1)?);
        let hidden = ops::conv1d_causal_forward(
            &act1,
            &self.params.get(ids.bottleneck_w).value,
            &self.params.get(ids.bottleneck_b).value,
            1,
        )?;
        let act2 = ops::relu_forward(&self.bn_infer(&hidden, &ids.bn2)?);
        let fresh = ops::conv1d_causal_forward(
            &act2,
            &self.params.get(ids.conv_w).value,
            &self.params.get(ids.conv_b).value,
            ids.dilation,
        )?;
        ops::concat_channels_forward(&[x, &fresh])
    }

    fn transition_infer(&self, x: &Tensor<E>, ids: &TransitionIds) -> Result<Tensor<E>> {
        let act = ops::relu_forward(&self.bn_infer(x, &ids.bn)?);
        let compressed = ops::conv1d_causal_forward(
            &act,
            &self.params.get(ids.conv_w).value,
            &self.params.get(ids.conv_b).value,
            1,
        )?;
        ops::avg_pool1d_forward(&compressed, 2, 2)
    }

    /// Converts element width (used when persisting f64 verification models).
    pub fn cast<F: Elem>(&self) -> Result<Model<F>> {
        let mut params = ParamSet::new();
        for p in self.params.iter() {
            params.insert(p.name.clone(), p.value.cast::<F>())?;
        }
        let running = self
            .running
            .iter()
            .map(|s| BnSite {
                name: s.name.clone(),
                mean: s.mean.iter().map(|v| F::from_f64(v.as_f64())).collect(),
                var: s.var.iter().map(|v| F::from_f64(v.as_f64())).collect(),
            })
            .collect();
        Model::from_parts(self.config.clone(), params, running)
    }
}

impl Layout {
    fn resolve<E: Elem>(config: &DdxConfig, params: &ParamSet<E>) -> Result<Layout> {
        let id = |name: String| {
            params
                .id_of(&name)
                .ok_or_else(|| Error::Internal(format!("parameter `{name}` missing from layout")))
        };
        let site_index: std::collections::HashMap<String, usize> = config
            .norm_sites()
            .into_iter()
            .enumerate()
            .map(|(i, (name, _))| (name, i))
            .collect();
        let bn = |prefix: &str| -> Result<BnIds> {
            Ok(BnIds {
                gamma: id(format!("{prefix}.gamma"))?,
                beta: id(format!("{prefix}.beta"))?,
                site: *site_index
                    .get(prefix)
                    .ok_or_else(|| Error::Internal(format!("norm site `{prefix}` missing")))?,
            })
        };
        let schedule = config.dilation_schedule();
        let mut stages = Vec::with_capacity(config.stages);
        for (s, dilations) in schedule.iter().enumerate() {
            let mut blocks = Vec::with_capacity(config.blocks_per_stage);
            for (l, &dilation) in dilations.iter().enumerate() {
                let prefix = format!("stage{s}.block{l}");
                blocks.push(BlockIds {
                    bn1: bn(&format!("{prefix}.bn1"))?,
                    bottleneck_w: id(format!("{prefix}.bottleneck.w"))?,
                    bottleneck_b: id(format!("{prefix}.bottleneck.b"))?,
                    bn2: bn(&format!("{prefix}.bn2"))?,
                    conv_w: id(format!("{prefix}.conv.w"))?,
                    conv_b: id(format!("{prefix}.conv.b"))?,
                    dilation,
                });
            }
            stages.push(blocks);
        }
        let mut transitions = Vec::new();
        for s in 0..config.stages.saturating_sub(1) {
            transitions.push(TransitionIds {
                bn: bn(&format!("transition{s}.bn"))?,
                conv_w: id(format!("transition{s}.conv.w"))?,
                conv_b: id(format!("transition{s}.conv.b"))?,
            });
        }
        Ok(Layout {
            stem_w: id("stem.conv.w".into())?,
            stem_b: id("stem.conv.b".into())?,
            stages,
            transitions,
            head_bn: bn("head.bn")?,
            head_w: id("head.linear.w".into())?,
            head_b: id("head.linear.b".into())?,
        })
    }
}
