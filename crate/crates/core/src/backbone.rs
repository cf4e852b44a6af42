//! The hierarchical backbone: patch partition, linear embedding, four block
//! stages joined by patch merging, and the classification head.
//!
//! Stage `i` runs at channel width `C * 2^(i-1)` and spatial downsampling
//! `p * 2^(i-1)`. The head normalizes, projects every position to class
//! logits and averages them over space; by linearity this equals pooling
//! first and projecting once, and it makes the instrumented MAC count of the
//! head an exact function of the final resolution.

use crate::baselines::BaselineKind;
use crate::error::{Error, Result};
use crate::layers::{LayerNormRef, LinearRef};
use crate::params::{Binding, ParamStore};
use crate::rng::{labels, Stream};
use crate::shift::{BlockRef, Connection, ForwardMode, ShiftConfig};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

pub const STAGES: usize = 4;

/// Which spatial-mixing core every block carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoreKind {
    /// The axial-shift unit, sized by [`VariantConfig::shift`].
    AxialShift,
    GlobalMlp,
    AxialMlp,
    WindowMlp,
}

/// Named architecture variant or custom configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantConfig {
    pub name: String,
    pub patch_size: usize,
    pub channels: usize,
    pub blocks: [usize; STAGES],
    pub mlp_ratio: usize,
    pub shift: ShiftConfig,
    pub connection: Connection,
    pub num_classes: usize,
    pub drop_path_max: f64,
    pub in_channels: usize,
    /// Swap the axial-shift core for a baseline in every block.
    pub core: CoreKind,
}

impl VariantConfig {
    fn named(name: &str, channels: usize, blocks: [usize; STAGES], drop_path_max: f64) -> Self {
        VariantConfig {
            name: name.to_string(),
            patch_size: 4,
            channels,
            blocks,
            mlp_ratio: 4,
            shift: ShiftConfig::default(),
            connection: Connection::Parallel,
            num_classes: 1000,
            drop_path_max,
            in_channels: 3,
            core: CoreKind::AxialShift,
        }
    }

    /// Reconfigure for one ablation-grid kind.
    pub fn apply_baseline(&mut self, kind: BaselineKind) -> Result<()> {
        match kind {
            BaselineKind::GlobalMlp => self.core = CoreKind::GlobalMlp,
            BaselineKind::AxialMlp => self.core = CoreKind::AxialMlp,
            BaselineKind::WindowMlp => self.core = CoreKind::WindowMlp,
            BaselineKind::Shift(s_h, s_v) => {
                self.core = CoreKind::AxialShift;
                self.shift = ShiftConfig::new(s_h, s_v, self.shift.dilation, self.shift.padding)?;
            }
        }
        Ok(())
    }

    pub fn tiny() -> Self {
        Self::named("tiny", 96, [2, 2, 6, 2], 0.2)
    }

    pub fn small() -> Self {
        Self::named("small", 96, [2, 2, 18, 2], 0.3)
    }

    pub fn base() -> Self {
        Self::named("base", 128, [2, 2, 18, 2], 0.5)
    }

    pub fn mobile() -> Self {
        Self::named("mobile", 64, [2, 2, 2, 2], 0.2)
    }

    /// Desk-scale variant for training and gradient checks.
    pub fn toy(num_classes: usize) -> Self {
        let mut v = Self::named("toy", 16, [1, 1, 2, 1], 0.1);
        v.num_classes = num_classes;
        v
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "small" => Ok(Self::small()),
            "base" => Ok(Self::base()),
            "mobile" => Ok(Self::mobile()),
            "toy" => Ok(Self::toy(4)),
            other => Err(Error::invalid("variant", format!("unknown variant '{other}'"))),
        }
    }

    /// Channel width of stage `i` (0-based): `C * 2^i`.
    pub fn stage_channels(&self, stage: usize) -> usize {
        self.channels << stage
    }

    /// Total spatial downsampling entering stage `i`: `p * 2^i`.
    pub fn stage_downsample(&self, stage: usize) -> usize {
        self.patch_size << stage
    }

    pub fn total_blocks(&self) -> usize {
        self.blocks.iter().sum()
    }

    /// Linear stochastic-depth schedule from 0 to `drop_path_max` across all
    /// blocks in depth order.
    pub fn drop_path_rates(&self) -> Vec<f64> {
        let n = self.total_blocks();
        (0..n)
            .map(|k| {
                if n <= 1 {
                    0.0
                } else {
                    self.drop_path_max * k as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    /// Smallest input divisor: patch size times the three mergings.
    pub fn input_divisor(&self) -> usize {
        self.patch_size * (1 << (STAGES - 1))
    }

    fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.input_divisor();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::shape(
                "forward",
                format!("input {h}x{w} must be positive and divisible by {d}"),
            ));
        }
        Ok(())
    }
}

struct EmbedRef {
    proj: LinearRef,
    norm: LayerNormRef,
}

struct MergeRef {
    norm: LayerNormRef,
    reduction: LinearRef,
}

struct StageRef {
    merge: Option<MergeRef>,
    blocks: Vec<BlockRef>,
}

struct HeadRef {
    norm: LayerNormRef,
    proj: LinearRef,
}

/// A built model: configuration, parameter store and layer wiring.
pub struct Model<T: Real> {
    pub cfg: VariantConfig,
    pub store: ParamStore<T>,
    embed: EmbedRef,
    stages: Vec<StageRef>,
    head: HeadRef,
}

impl<T: Real> Model<T> {
    /// Build with truncated-normal(0.02) projections, zero biases, unit/zero
    /// layer-norm affines, drawn in construction order from `seed`.
    pub fn new(cfg: VariantConfig) -> Result<Self> {
        Self::with_seed(cfg, 0)
    }

    pub fn with_seed(cfg: VariantConfig, seed: u64) -> Result<Self> {
        Self::build(cfg, seed, None)
    }

    /// Build a model whose stage resolutions are bound to a fixed input size
    /// (required by the Global/Axial-MLP baselines).
    pub fn with_input_size(cfg: VariantConfig, seed: u64, input: (usize, usize)) -> Result<Self> {
        Self::build(cfg, seed, Some(input))
    }

    fn build(cfg: VariantConfig, seed: u64, input: Option<(usize, usize)>) -> Result<Self> {
        let needs_resolution = matches!(cfg.core, CoreKind::GlobalMlp | CoreKind::AxialMlp | CoreKind::WindowMlp);
        let (bind_h, bind_w) = match (input, needs_resolution) {
            (Some((h, w)), _) => {
                cfg.check_input(h, w)?;
                (h, w)
            }
            (None, false) => (cfg.input_divisor() * 2, cfg.input_divisor() * 2), // unused
            (None, true) => {
                return Err(Error::invalid(
                    "model",
                    "this core binds to a stage resolution; build with an input size",
                ))
            }
        };

        let mut rng = Stream::new(seed, labels::INIT);
        let mut store = ParamStore::new();
        let embed = EmbedRef {
            proj: LinearRef::init(
                &mut store,
                "embed.proj",
                cfg.in_channels * cfg.patch_size * cfg.patch_size,
                cfg.channels,
                &mut rng,
            ),
            norm: LayerNormRef::init(&mut store, "embed.norm", cfg.channels),
        };

        let rates = cfg.drop_path_rates();
        let mut rate_iter = rates.into_iter();
        let mut stages = Vec::with_capacity(STAGES);
        for si in 0..STAGES {
            let dim = cfg.stage_channels(si);
            let merge = if si == 0 {
                None
            } else {
                let prev = cfg.stage_channels(si - 1);
                Some(MergeRef {
                    norm: LayerNormRef::init(&mut store, &format!("stages.{si}.merge.norm"), 4 * prev),
                    reduction: LinearRef::init(
                        &mut store,
                        &format!("stages.{si}.merge.reduction"),
                        4 * prev,
                        2 * prev,
                        &mut rng,
                    ),
                })
            };
            let sh = bind_h / cfg.stage_downsample(si);
            let sw = bind_w / cfg.stage_downsample(si);
            let mut blocks = Vec::with_capacity(cfg.blocks[si]);
            for bi in 0..cfg.blocks[si] {
                let rate = rate_iter.next().expect("schedule covers every block");
                let name = format!("stages.{si}.blocks.{bi}");
                let block = match cfg.core {
                    CoreKind::AxialShift => BlockRef::init(
                        &mut store,
                        &name,
                        dim,
                        cfg.shift,
                        cfg.connection,
                        cfg.mlp_ratio,
                        rate,
                        &mut rng,
                    ),
                    CoreKind::GlobalMlp => crate::baselines::make_baseline_block(
                        &mut store, &name, BaselineKind::GlobalMlp, dim, sh, sw, cfg.mlp_ratio, rate, &mut rng,
                    )?,
                    CoreKind::AxialMlp => crate::baselines::make_baseline_block(
                        &mut store, &name, BaselineKind::AxialMlp, dim, sh, sw, cfg.mlp_ratio, rate, &mut rng,
                    )?,
                    CoreKind::WindowMlp => crate::baselines::make_baseline_block(
                        &mut store, &name, BaselineKind::WindowMlp, dim, sh, sw, cfg.mlp_ratio, rate, &mut rng,
                    )?,
                };
                blocks.push(block);
            }
            stages.push(StageRef { merge, blocks });
        }

        let final_dim = cfg.stage_channels(STAGES - 1);
        let head = HeadRef {
            norm: LayerNormRef::init(&mut store, "head.norm", final_dim),
            proj: LinearRef::init(&mut store, "head.proj", final_dim, cfg.num_classes, &mut rng),
        };
        Ok(Model { cfg, store, embed, stages, head })
    }

    /// Full forward pass from an image batch `[b, 3, H, W]` to logits
    /// `[b, classes]`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        image: Var,
        mode: &mut ForwardMode<'_>,
    ) -> Result<Var> {
        let dims = tape.value(image).dims().to_vec();
        if dims.len() != 4 || dims[1] != self.cfg.in_channels {
            return Err(Error::shape(
                "forward",
                format!("expected [b, {}, H, W], got {:?}", self.cfg.in_channels, dims),
            ));
        }
        self.cfg.check_input(dims[2], dims[3])?;

        let mut x = tape.patch_partition(image, self.cfg.patch_size)?;
        x = self.embed.proj.forward(tape, bind, x)?;
        x = self.embed.norm.forward(tape, bind, x)?;
        for stage in &self.stages {
            if let Some(merge) = &stage.merge {
                x = tape.merge_neighborhoods(x)?;
                x = merge.norm.forward(tape, bind, x)?;
                x = merge.reduction.forward(tape, bind, x)?;
            }
            for block in &stage.blocks {
                x = block.forward(tape, bind, x, mode)?;
            }
        }
        // head: norm, per-position class projection, logit average over space
        let x = self.head.norm.forward(tape, bind, x)?;
        let logits_map = self.head.proj.forward(tape, bind, x)?;
        tape.reduce_mean(logits_map, &[2, 3])
    }

    /// Eval-mode forward returning the logits tensor.
    pub fn forward_eval(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::eval();
        let bind = self.store.bind(&mut tape);
        let iv = tape.leaf(image);
        let out = self.forward(&mut tape, &bind, iv, &mut ForwardMode::Eval)?;
        Ok(tape.value(out).clone())
    }

    /// Per-stage feature maps in eval mode (before the head).
    pub fn stage_features(&self, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut tape = Tape::eval();
        let bind = self.store.bind(&mut tape);
        let iv = tape.leaf(image);
        let mut x = tape.patch_partition(iv, self.cfg.patch_size)?;
        x = self.embed.proj.forward(&mut tape, &bind, x)?;
        x = self.embed.norm.forward(&mut tape, &bind, x)?;
        let mut feats = Vec::with_capacity(STAGES);
        for stage in &self.stages {
            if let Some(merge) = &stage.merge {
                x = tape.merge_neighborhoods(x)?;
                x = merge.norm.forward(&mut tape, &bind, x)?;
                x = merge.reduction.forward(&mut tape, &bind, x)?;
            }
            for block in &stage.blocks {
                x = block.forward(&mut tape, &bind, x, &mut ForwardMode::Eval)?;
            }
            feats.push(tape.value(x).clone());
        }
        Ok(feats)
    }

    /// Counting-only forward: walk the wiring at resolution `H x W` and
    /// accumulate per-(stage, component) MACs for one image. Independent of
    /// the closed-form accounting, and equal to the tape counter on a real
    /// forward.
    pub fn mac_walk(&self, h: usize, w: usize) -> Result<Vec<(String, String, u64)>> {
        self.cfg.check_input(h, w)?;
        let p = self.cfg.patch_size;
        let mut rows = Vec::new();
        let (mut gh, mut gw) = (h / p, w / p);
        rows.push(("stage1".to_string(), "linear-embedding".to_string(), self.embed.proj.macs((gh * gw) as u64)));
        for (si, stage) in self.stages.iter().enumerate() {
            if let Some(merge) = &stage.merge {
                gh /= 2;
                gw /= 2;
                rows.push((
                    format!("stage{}", si + 1),
                    "patch-merging".to_string(),
                    merge.reduction.macs((gh * gw) as u64),
                ));
            }
            let blocks: u64 = stage.blocks.iter().map(|b| b.macs(gh, gw)).sum();
            rows.push((format!("stage{}", si + 1), "blocks".to_string(), blocks));
        }
        rows.push((
            "head".to_string(),
            "head".to_string(),
            self.head.proj.macs((gh * gw) as u64),
        ));
        Ok(rows)
    }

    /// Sum of `mac_walk` for one image.
    pub fn macs_per_image(&self, h: usize, w: usize) -> Result<u64> {
        Ok(self.mac_walk(h, w)?.iter().map(|(_, _, m)| m).sum())
    }
}
