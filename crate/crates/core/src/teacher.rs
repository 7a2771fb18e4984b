//! Multimodal heatmap teacher.
//!
//! One pathway per modality: two strided 3D conv blocks over the modality's
//! `J × T × H × W` heatmap volume. Between the blocks every pathway receives
//! the 1×1×1-projected stage-1 features of every other pathway. Pathway
//! outputs are average-pooled, concatenated and fused into the social
//! representation.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::heads::{ChainHeads, ChainLogits};
use crate::heatmap::{keypoints_to_heatmaps, HeatmapStack, Modality};
use crate::nn::{glorot, Linear};
use crate::pose::PoseSequence;
use crate::seed;
use crate::tensor::{Bound, ParamId, ParamStore, Real, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    /// Heatmap grid side (square grids).
    pub grid: usize,
    pub sigma: f64,
    pub stage1_channels: usize,
    pub stage2_channels: usize,
    /// Spatial stride of both conv stages.
    pub spatial_stride: usize,
    pub laterals: bool,
    /// Localized modalities removed from the teacher (face, hands, gaze).
    pub drop: Vec<Modality>,
    pub repr_dim: usize,
    /// Substitute zero volumes for modalities a sequence lacks instead of
    /// failing.
    pub lenient: bool,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            grid: 56,
            sigma: 1.0,
            stage1_channels: 16,
            stage2_channels: 32,
            spatial_stride: 2,
            laterals: true,
            drop: Vec::new(),
            repr_dim: 16,
            lenient: false,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.drop.iter().find(|m| matches!(m, Modality::Pose | Modality::Image)) {
            return Err(Error::Config(format!(
                "the {} pathway is foundational and cannot be dropped (only face, hands, gaze)",
                m.name()
            )));
        }
        if self.grid < 2 || self.stage1_channels == 0 || self.stage2_channels == 0 || self.repr_dim == 0 {
            return Err(Error::Config("teacher grid must be ≥ 2 and channel widths positive".into()));
        }
        if self.spatial_stride == 0 {
            return Err(Error::Config("teacher spatial_stride must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("teacher sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Pathways in canonical order.
    pub fn modalities(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|m| !self.drop.contains(m)).collect()
    }
}

/// Teacher template with the given localized modalities removed.
pub fn modality_ablation(config: &TeacherConfig, drop: &[Modality]) -> Result<TeacherConfig> {
    let mut out = config.clone();
    for &m in drop {
        if !out.drop.contains(&m) {
            out.drop.push(m);
        }
    }
    out.drop.sort();
    out.validate()?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Pathway {
    pub modality: Modality,
    pub conv1: ParamId,
    pub bias1: ParamId,
    pub conv2: ParamId,
    pub bias2: ParamId,
}

#[derive(Clone, Debug)]
pub struct Lateral {
    pub from: usize,
    pub to: usize,
    pub weight: ParamId,
}

#[derive(Clone, Debug)]
pub struct Teacher<R> {
    pub config: TeacherConfig,
    pub num_actions: usize,
    pub params: ParamStore<R>,
    pub pathways: Vec<Pathway>,
    pub laterals: Vec<Lateral>,
    pub fusion: Linear,
    pub heads: ChainHeads,
}

fn conv_block<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    w: Var,
    b: Var,
    stride: usize,
) -> crate::tensor::Result<Var> {
    let y = tape.conv3d(x, w, [1, stride, stride], [1, 1, 1])?;
    let y = tape.add(y, b)?;
    tape.relu(y)
}

impl<R: Real> Teacher<R> {
    pub fn new(config: TeacherConfig, num_actions: usize, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let (c1, c2) = (config.stage1_channels, config.stage2_channels);
        let pathways: Vec<Pathway> = config
            .modalities()
            .into_iter()
            .map(|m| {
                let mut rng = seed::rng(init_seed, &[seed::hash_str("teacher"), seed::hash_str(m.name())]);
                let j = m.channels();
                let name = m.name();
                Pathway {
                    modality: m,
                    conv1: store.add(format!("{name}.conv1.weight"), he(&[c1, j, 3, 3, 3], j * 27, &mut rng)),
                    bias1: store.add(format!("{name}.conv1.bias"), Tensor::zeros(&[1, c1, 1, 1, 1])),
                    conv2: store.add(format!("{name}.conv2.weight"), he(&[c2, c1, 3, 3, 3], c1 * 27, &mut rng)),
                    bias2: store.add(format!("{name}.conv2.bias"), Tensor::zeros(&[1, c2, 1, 1, 1])),
                }
            })
            .collect();
        let mut rng = seed::rng(init_seed, &[seed::hash_str("teacher"), seed::hash_str("fusion")]);
        let mut laterals = Vec::new();
        if config.laterals {
            for to in 0..pathways.len() {
                for from in 0..pathways.len() {
                    if from == to {
                        continue;
                    }
                    let name =
                        format!("lateral.{}_to_{}.weight", pathways[from].modality.name(), pathways[to].modality.name());
                    // Small init so laterals start as a gentle perturbation.
                    let w = glorot::<R, _>(&[c1, c1, 1, 1, 1], c1, c1, &mut rng);
                    let w = Tensor::new(w.shape().to_vec(), w.data().iter().map(|&v| v * R::from_f64_lossy(0.1)).collect())?;
                    laterals.push(Lateral { from, to, weight: store.add(name, w) });
                }
            }
        }
        let fusion = Linear::new(&mut store, "fusion", pathways.len() * c2, config.repr_dim, true, &mut rng);
        let heads = ChainHeads::new(&mut store, "heads", config.repr_dim, num_actions, &mut rng);
        Ok(Teacher { config, num_actions, params: store, pathways, laterals, fusion, heads })
    }

    pub fn count_params(&self) -> usize {
        self.params.numel()
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.pathways.iter().map(|p| p.modality).collect()
    }

    /// Heatmap volumes `[B, J, T, H, W]`, one per pathway.
    pub fn batch_inputs(&self, seqs: &[&PoseSequence]) -> Result<Vec<(Vec<usize>, Vec<R>)>> {
        (0..self.pathways.len()).map(|i| self.pathway_input(i, seqs)).collect()
    }

    /// Heatmap volume `[B, J, T, H, W]` of pathway `idx`.
    pub fn pathway_input(&self, idx: usize, seqs: &[&PoseSequence]) -> Result<(Vec<usize>, Vec<R>)> {
        let g = self.config.grid;
        let t = seqs.first().map_or(0, |s| s.len());
        let m = self.pathways[idx].modality;
        let mut data = Vec::with_capacity(seqs.len() * m.channels() * t * g * g);
        for seq in seqs {
            if seq.len() != t {
                return Err(Error::Contract(format!("batch mixes {} and {} frame sequences", t, seq.len())));
            }
            let stack: HeatmapStack<R> = if m.present_in(seq) {
                keypoints_to_heatmaps(seq, m, (g, g), self.config.sigma)?
            } else if self.config.lenient {
                warn!("sequence {} lacks {}; substituting a zero volume", seq.id, m.name());
                HeatmapStack::zeros(m, t, (g, g), self.config.sigma)
            } else {
                return Err(Error::Modality(format!("sequence {} lacks the {} modality", seq.id, m.name())));
            };
            data.extend(stack.channels_first());
        }
        Ok((vec![seqs.len(), m.channels(), t, g, g], data))
    }

    /// Records the heatmap volumes of `seqs` as constants.
    pub fn input_vars(&self, tape: &mut Tape<R>, seqs: &[&PoseSequence]) -> Result<Vec<Var>> {
        self.batch_inputs(seqs)?
            .into_iter()
            .map(|(shape, data)| tape.constant(&shape, data).map_err(Error::from))
            .collect()
    }

    /// Stage-1 features of one pathway.
    pub fn stage1(&self, tape: &mut Tape<R>, p: &Bound, idx: usize, x: Var) -> Result<Var> {
        let pw = &self.pathways[idx];
        Ok(conv_block(tape, x, p[pw.conv1], p[pw.bias1], self.config.spatial_stride)?)
    }

    /// Stage 2 plus global average pooling: `[B, C2]`.
    pub fn stage2_pooled(&self, tape: &mut Tape<R>, p: &Bound, idx: usize, h: Var) -> Result<Var> {
        let pw = &self.pathways[idx];
        let y = conv_block(tape, h, p[pw.conv2], p[pw.bias2], self.config.spatial_stride)?;
        let s = tape.shape(y)?.to_vec();
        let flat = tape.reshape(y, &[s[0], s[1], s[2] * s[3] * s[4]])?;
        Ok(tape.mean_axis(flat, 2, false)?)
    }

    /// One pathway in isolation (no laterals), pooled to `[B, C2]`.
    pub fn pathway_forward(&self, tape: &mut Tape<R>, p: &Bound, idx: usize, x: Var) -> Result<Var> {
        let h = self.stage1(tape, p, idx, x)?;
        self.stage2_pooled(tape, p, idx, h)
    }

    /// Social representation `[B, repr_dim]` from per-pathway inputs.
    pub fn forward(&self, tape: &mut Tape<R>, p: &Bound, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != self.pathways.len() {
            return Err(Error::Contract(format!("teacher has {} pathways, got {} inputs", self.pathways.len(), inputs.len())));
        }
        let stage1: Vec<Var> =
            (0..inputs.len()).map(|i| self.stage1(tape, p, i, inputs[i])).collect::<Result<_>>()?;
        let mut mixed = stage1.clone();
        for lat in &self.laterals {
            let proj = tape.conv3d(stage1[lat.from], p[lat.weight], [1, 1, 1], [0, 0, 0])?;
            mixed[lat.to] = tape.add(mixed[lat.to], proj)?;
        }
        let pooled: Vec<Var> =
            (0..inputs.len()).map(|i| self.stage2_pooled(tape, p, i, mixed[i])).collect::<Result<_>>()?;
        let cat = tape.concat(&pooled, 1)?;
        Ok(self.fusion.forward(tape, p, cat)?)
    }

    pub fn forward_full(&self, tape: &mut Tape<R>, p: &Bound, inputs: &[Var]) -> Result<(Var, ChainLogits)> {
        let r = self.forward(tape, p, inputs)?;
        let logits = self.heads.forward(tape, p, r)?;
        Ok((r, logits))
    }

    /// Inference helper: representations `[B, repr_dim]` of `seqs`.
    pub fn represent(&self, seqs: &[&PoseSequence]) -> Result<Vec<R>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let inputs = self.input_vars(&mut tape, seqs)?;
        let r = self.forward(&mut tape, &p, &inputs)?;
        Ok(tape.value(r)?.to_vec())
    }
}

/// He-uniform initialization for ReLU layers.
fn he<R: Real, G: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut G) -> Tensor<R> {
    crate::nn::uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}
