use std::path::Path;

use super::layers::{GatV2Layer, GraphBlock, GraphState, SagPoolLayer};
use super::params::{read_checkpoint, write_checkpoint, ParamStore};
use crate::error::{Error, Result};
use crate::graphbuild::{FeatureSpaceMode, MultiResGraph};
use crate::numkit::{softmax, Gradients, ParamId, Rng, Tape, Var};
use crate::pipeline::ModelConfig;
use crate::slideio::{Magnification, NUM_CLASSES};

pub const LEAKY_SLOPE: f64 = 0.2;

/// Shape of a [`PatchGraphModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub mode: FeatureSpaceMode,
    /// Ascending; one or a doubling pair.
    pub mags: Vec<Magnification>,
    /// Extractor feature width per magnification.
    pub input_dim: usize,
    /// Width `d` of every graph layer.
    pub embedding: usize,
    pub message_passings: usize,
    pub graph_poolings: usize,
    pub pooling_factor: f64,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl Architecture {
    pub fn from_config(config: &ModelConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Architecture {
            mode: config.feature_space_mode,
            mags: config.mags()?,
            input_dim,
            embedding: config.embedding_size,
            message_passings: config.message_passings,
            graph_poolings: config.graph_poolings,
            pooling_factor: config.pooling_factor,
            dropout: config.dropout,
            leaky_slope: LEAKY_SLOPE,
        })
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("architecture", m));
        if self.input_dim == 0 || self.embedding == 0 {
            return bad("zero-width layer".into());
        }
        if self.graph_poolings == 0 || self.message_passings == 0 {
            return bad("need at least one block with one message-passing layer".into());
        }
        if !(self.pooling_factor > 0.0 && self.pooling_factor <= 1.0) {
            return bad(format!("pooling factor {} outside (0, 1]", self.pooling_factor));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match self.mags.as_slice() {
            [_] if !self.mode.is_concat() => {}
            [lo, hi] if lo.is_half_of(*hi) => {}
            other => return bad(format!("{} with magnifications {other:?}", self.mode)),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum InputProjection {
    /// `F → d` with bias, shared by all nodes.
    Shared { weight: ParamId, bias: ParamId },
    /// Each `d_in` slot mapped to `d` by its magnification's bias-free map, then the
    /// `2d` concatenation merged to `d`.
    Slots {
        low: ParamId,
        high: ParamId,
        merge: ParamId,
        merge_bias: ParamId,
    },
}

/// GATv2/SAGPool slide classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGraphModel {
    arch: Architecture,
    params: ParamStore,
    input: InputProjection,
    blocks: Vec<GraphBlock>,
    head: ParamId,
    head_bias: ParamId,
}

pub struct ForwardPass {
    pub logits: Var,
    /// Summed block readouts before dropout, `1 × 2d`.
    pub slide_embedding: Var,
    /// Node count entering each block, then after the last block.
    pub node_counts: Vec<usize>,
}

/// Builds a model sized by `config` for extractor features of width `feature_dim`.
pub fn init_model(config: &ModelConfig, feature_dim: usize, rng: &mut Rng) -> Result<PatchGraphModel> {
    PatchGraphModel::new(Architecture::from_config(config, feature_dim)?, rng)
}

impl PatchGraphModel {
    /// Parameters are created (and drawn from `rng`) in a fixed order: input projection,
    /// then per block its message layers and pooling scorer, then the head.
    pub fn new(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.check()?;
        let d = arch.embedding;
        let mut params = ParamStore::new();
        let input = if arch.mode.is_concat() {
            let low = params.add_weight(format!("input.{}x.weight", arch.mags[0]), arch.input_dim, d, rng);
            let high = params.add_weight(format!("input.{}x.weight", arch.mags[1]), arch.input_dim, d, rng);
            let merge = params.add_weight("input.merge.weight", 2 * d, d, rng);
            let merge_bias = params.add_bias("input.merge.bias", d);
            InputProjection::Slots { low, high, merge, merge_bias }
        } else {
            let weight = params.add_weight("input.shared.weight", arch.input_dim, d, rng);
            let bias = params.add_bias("input.shared.bias", d);
            InputProjection::Shared { weight, bias }
        };
        let blocks = (0..arch.graph_poolings)
            .map(|b| {
                let message_layers = (0..arch.message_passings)
                    .map(|l| GatV2Layer::new(&mut params, &format!("block{b}.gat{l}"), d, d, arch.leaky_slope, rng))
                    .collect();
                let pool = SagPoolLayer::new(
                    &mut params,
                    &format!("block{b}.pool"),
                    d,
                    arch.pooling_factor,
                    arch.leaky_slope,
                    rng,
                );
                GraphBlock { message_layers, pool }
            })
            .collect();
        let head = params.add_weight("head.weight", 2 * d, NUM_CLASSES, rng);
        let head_bias = params.add_bias("head.bias", NUM_CLASSES);
        Ok(PatchGraphModel {
            arch,
            params,
            input,
            blocks,
            head,
            head_bias,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn blocks(&self) -> &[GraphBlock] {
        &self.blocks
    }

    fn check_graph(&self, graph: &MultiResGraph) -> Result<()> {
        if graph.is_empty() {
            return Err(Error::EmptySlide("graph has no nodes".into()));
        }
        if graph.mode != self.arch.mode || graph.mags != self.arch.mags {
            return Err(Error::invalid(
                "graph",
                format!(
                    "{} graph at {:?} for a {} model at {:?}",
                    graph.mode, graph.mags, self.arch.mode, self.arch.mags
                ),
            ));
        }
        let width = if self.arch.mode.is_concat() { 2 * self.arch.input_dim } else { self.arch.input_dim };
        if graph.features.cols() != width {
            return Err(Error::shape(
                "model input",
                format!("{} feature columns, model expects {width}", graph.features.cols()),
            ));
        }
        Ok(())
    }

    /// Records the forward pass. Dropout is applied iff `dropout_rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[Var],
        graph: &MultiResGraph,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<ForwardPass> {
        self.check_graph(graph)?;
        let x = tape.constant(graph.features.clone());
        let mut h = match self.input {
            InputProjection::Shared { weight, bias } => {
                let p = tape.matmul(x, params[weight.0])?;
                tape.add_row(p, params[bias.0])?
            }
            InputProjection::Slots { low, high, merge, merge_bias } => {
                let d_in = self.arch.input_dim;
                let lo = tape.slice_cols(x, 0, d_in)?;
                let hi = tape.slice_cols(x, d_in, 2 * d_in)?;
                let lo = tape.matmul(lo, params[low.0])?;
                let hi = tape.matmul(hi, params[high.0])?;
                let cat = tape.concat_cols(&[lo, hi])?;
                let merged = tape.matmul(cat, params[merge.0])?;
                tape.add_row(merged, params[merge_bias.0])?
            }
        };

        let mut state = GraphState {
            x: h,
            keys: graph.nodes.clone(),
            edges: graph.edges.clone(),
        };
        let mut node_counts = vec![state.keys.len()];
        let mut total: Option<Var> = None;
        for block in &self.blocks {
            let (next, readout) = block.forward(tape, params, state)?;
            node_counts.push(next.keys.len());
            total = Some(match total {
                None => readout,
                Some(t) => tape.add(t, readout)?,
            });
            state = next;
        }
        let slide_embedding = total.expect("at least one block");
        h = slide_embedding;
        if let Some(rng) = dropout_rng {
            let p = self.arch.dropout;
            if p > 0.0 {
                let keep = 1.0 / (1.0 - p);
                let mask = (0..tape.value(h).len())
                    .map(|_| if rng.bernoulli(p) { 0.0 } else { keep })
                    .collect();
                h = tape.mul_const(h, mask)?;
            }
        }
        let logits = tape.matmul(h, params[self.head.0])?;
        let logits = tape.add_row(logits, params[self.head_bias.0])?;
        Ok(ForwardPass {
            logits,
            slide_embedding,
            node_counts,
        })
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, graph: &MultiResGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape);
        let pass = self.forward(&mut tape, &params, graph, None)?;
        Ok(tape.value(pass.logits).data().to_vec())
    }

    pub fn predict_proba(&self, graph: &MultiResGraph) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(graph)?))
    }

    /// Cross-entropy of `label` and its parameter gradients.
    pub fn loss_and_grads(
        &self,
        graph: &MultiResGraph,
        label: usize,
        dropout_rng: Option<&mut Rng>,
    ) -> Result<(f64, Gradients)> {
        let mut tape = Tape::new();
        let params = self.params.bind(&mut tape);
        let pass = self.forward(&mut tape, &params, graph, dropout_rng)?;
        let loss = tape.softmax_cross_entropy(pass.logits, label)?;
        let value = tape.value(loss).data()[0];
        Ok((value, tape.backward(loss)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_checkpoint(&self.params, path)
    }

    /// Loads a checkpoint into a model of matching architecture.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let entries = read_checkpoint(path)?;
        self.params.load(&entries)
    }
}
