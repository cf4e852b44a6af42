//! The axial shift operation and the block built around it.
//!
//! `shift` splits channels into `s` groups and translates group `g` by
//! `(g - s/2) * d` positions along one spatial axis, so that a following
//! channel projection mixes information from neighboring positions. Group
//! sizing is `ceil(C/s)` with the remainder in the last group. Out-of-range
//! reads are resolved by the configured padding rule; circular mode wraps.
//!
//! `shift_oracle` evaluates the same index map directly, element by element,
//! with no chunk/roll/pad machinery; the two must agree exactly for every
//! configuration.

use crate::baselines::{AxialMixRef, GlobalMixRef, WindowMixRef};
use crate::error::{Error, Result};
use crate::layers::{LayerNormRef, LinearRef, MlpRef};
use crate::params::{Binding, ParamStore};
use crate::rng::Stream;
use crate::tensor::ops::{self, PadMode};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{idx4, Real, Tensor};
use std::collections::BTreeSet;

/// Spatial axis of a `[b, C, h, w]` feature map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Height,
    Width,
}

impl Axis {
    pub fn dim(self) -> usize {
        match self {
            Axis::Height => 2,
            Axis::Width => 3,
        }
    }
}

/// Out-of-range handling for shifted reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Zero,
    /// Pure wraparound; equivalent to applying no padding at all.
    Circular,
    Reflect,
    Replicate,
}

impl Padding {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Padding::Zero),
            "circular" | "none" => Ok(Padding::Circular),
            "reflect" => Ok(Padding::Reflect),
            "replicate" => Ok(Padding::Replicate),
            other => Err(Error::invalid("padding", format!("unknown mode '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Padding::Zero => "zero",
            Padding::Circular => "circular",
            Padding::Reflect => "reflect",
            Padding::Replicate => "replicate",
        }
    }

    pub const ALL: [Padding; 4] = [Padding::Zero, Padding::Circular, Padding::Reflect, Padding::Replicate];
}

/// How the horizontal and vertical branches combine inside one unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connection {
    Parallel,
    Serial,
}

/// Per-axis shift sizes, dilation and padding rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShiftConfig {
    /// Groups along the width axis (horizontal shift size); odd.
    pub s_h: usize,
    /// Groups along the height axis (vertical shift size); odd.
    pub s_v: usize,
    pub dilation: usize,
    pub padding: Padding,
}

impl Default for ShiftConfig {
    /// The operating point used throughout: s = (5, 5), zero padding, d = 1.
    fn default() -> Self {
        ShiftConfig { s_h: 5, s_v: 5, dilation: 1, padding: Padding::Zero }
    }
}

impl ShiftConfig {
    pub fn new(s_h: usize, s_v: usize, dilation: usize, padding: Padding) -> Result<Self> {
        if s_h == 0 || s_h % 2 == 0 || s_v == 0 || s_v % 2 == 0 {
            return Err(Error::invalid(
                "shift_config",
                format!("shift sizes must be odd and positive, got ({s_h}, {s_v})"),
            ));
        }
        if dilation == 0 {
            return Err(Error::invalid("shift_config", "dilation must be >= 1"));
        }
        Ok(ShiftConfig { s_h, s_v, dilation, padding })
    }

    pub fn square(s: usize) -> Result<Self> {
        Self::new(s, s, 1, Padding::Zero)
    }

    pub fn size(self, axis: Axis) -> usize {
        match axis {
            Axis::Height => self.s_v,
            Axis::Width => self.s_h,
        }
    }

    /// Largest displacement, which is also the pad amount: `(s/2) * d`.
    pub fn pad_amount(self, axis: Axis) -> usize {
        (self.size(axis) / 2) * self.dilation
    }

    /// Read offset applied to channel `c` of a C-channel map along `axis`:
    /// output position `j` reads input `j + offset`.
    pub fn channel_offset(self, axis: Axis, c: usize, channels: usize) -> i64 {
        let s = self.size(axis);
        let group = c / channels.div_ceil(s);
        (group as i64 - (s / 2) as i64) * self.dilation as i64
    }
}

fn check_shift_pre<T: Real>(x: &Tensor<T>, axis: Axis, cfg: &ShiftConfig) -> Result<(usize, usize)> {
    let (_, c, h, w) = x.dims4("shift")?;
    let s = cfg.size(axis);
    if s > c {
        return Err(Error::invalid(
            "shift",
            format!("shift size {s} exceeds {c} channels"),
        ));
    }
    let extent = match axis {
        Axis::Height => h,
        Axis::Width => w,
    };
    if cfg.padding == Padding::Reflect && cfg.pad_amount(axis) >= extent {
        return Err(Error::invalid(
            "shift",
            format!("reflect shift reach {} must stay below extent {}", cfg.pad_amount(axis), extent),
        ));
    }
    Ok((c, extent))
}

/// Axial shift on a tape: pad, chunk channels, roll each group, concatenate,
/// crop. Circular padding skips the pad/crop and rolls with wraparound.
pub fn shift<T: Real>(tape: &mut Tape<T>, x: Var, axis: Axis, cfg: &ShiftConfig) -> Result<Var> {
    let (c, _) = check_shift_pre(tape.value(x), axis, cfg)?;
    let s = cfg.size(axis);
    let dim = axis.dim();
    let bounds = ops::chunk_bounds(c, s).expect("checked above");
    let half = (s / 2) as i64;
    let d = cfg.dilation as i64;

    let padded = match cfg.padding {
        Padding::Circular => x,
        Padding::Zero => tape.pad_axis(x, dim, cfg.pad_amount(axis), PadMode::Zero)?,
        Padding::Reflect => tape.pad_axis(x, dim, cfg.pad_amount(axis), PadMode::Reflect)?,
        Padding::Replicate => tape.pad_axis(x, dim, cfg.pad_amount(axis), PadMode::Replicate)?,
    };

    let mut groups = Vec::with_capacity(s);
    for (g, &(start, len)) in bounds.iter().enumerate() {
        let chunk = tape.slice_axis(padded, 1, start, len)?;
        // group g reads position j + (g - s/2)*d, i.e. roll by (s/2 - g)*d
        let rolled = tape.roll(chunk, dim, (half - g as i64) * d)?;
        groups.push(rolled);
    }
    let cat = tape.concat_axis(&groups, 1)?;
    match cfg.padding {
        Padding::Circular => Ok(cat),
        _ => tape.crop_axis(cat, dim, cfg.pad_amount(axis)),
    }
}

/// Value-level convenience wrapper around [`shift`].
pub fn shift_eval<T: Real>(x: &Tensor<T>, axis: Axis, cfg: &ShiftConfig) -> Result<Tensor<T>> {
    let mut tape = Tape::eval();
    let xv = tape.leaf(x);
    let out = shift(&mut tape, xv, axis, cfg)?;
    Ok(tape.value(out).clone())
}

/// Direct index-map evaluation: output channel `c` at axis position `j`
/// reads input position `j + (c / ceil(C/s) - s/2) * d`, resolved by the
/// padding rule. Shares no machinery with [`shift`].
pub fn shift_oracle<T: Real>(x: &Tensor<T>, axis: Axis, cfg: &ShiftConfig) -> Result<Tensor<T>> {
    let (c, _) = check_shift_pre(x, axis, cfg)?;
    let (b, _, h, w) = x.dims4("shift_oracle")?;
    let mut out = Tensor::zeros(x.dims());
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            let off = cfg.channel_offset(axis, ci, c);
            for i in 0..h {
                for j in 0..w {
                    let (si, sj) = match axis {
                        Axis::Height => (i as i64 + off, j as i64),
                        Axis::Width => (i as i64, j as i64 + off),
                    };
                    let (extent, pos, other) = match axis {
                        Axis::Height => (h, si, sj),
                        Axis::Width => (w, sj, si),
                    };
                    let resolved = match cfg.padding {
                        Padding::Circular => Some(pos.rem_euclid(extent as i64) as usize),
                        Padding::Zero => ops::pad_source_index(pos, extent, PadMode::Zero),
                        Padding::Reflect => ops::pad_source_index(pos, extent, PadMode::Reflect),
                        Padding::Replicate => ops::pad_source_index(pos, extent, PadMode::Replicate),
                    };
                    od[idx4(c, h, w, bi, ci, i, j)] = match resolved {
                        None => T::zero(),
                        Some(p) => {
                            let (ri, rj) = match axis {
                                Axis::Height => (p, other as usize),
                                Axis::Width => (other as usize, p),
                            };
                            xd[idx4(c, h, w, bi, ci, ri, rj)]
                        }
                    };
                }
            }
        }
    }
    Ok(out)
}

/// Circular-shift a map with explicit per-group read offsets (group `g` reads
/// position `j + offsets[g]`). Used by the involution property.
pub fn circular_group_shift<T: Real>(x: &Tensor<T>, axis: Axis, offsets: &[i64]) -> Result<Tensor<T>> {
    let (_, c, _, _) = x.dims4("circular_group_shift")?;
    let bounds = ops::chunk_bounds(c, offsets.len())
        .ok_or_else(|| Error::invalid("circular_group_shift", "bad group count"))?;
    let mut groups = Vec::new();
    for (& (start, len), &off) in bounds.iter().zip(offsets) {
        let chunk = ops::slice_axis(x, 1, start, len)?;
        groups.push(ops::roll(&chunk, axis.dim(), -off)?);
    }
    let refs: Vec<&Tensor<T>> = groups.iter().collect();
    ops::concat_axis(&refs, 1)
}

/// Cross-shaped set of input offsets `(di, dj)` one axial-shift unit reads,
/// relative to an output position.
pub fn sampling_locations(cfg: &ShiftConfig) -> BTreeSet<(i64, i64)> {
    let mut set = BTreeSet::new();
    let d = cfg.dilation as i64;
    let va = (cfg.s_v / 2) as i64;
    let ha = (cfg.s_h / 2) as i64;
    for k in -va..=va {
        set.insert((k * d, 0));
    }
    for k in -ha..=ha {
        set.insert((0, k * d));
    }
    set
}

// ---------------------------------------------------------------------------
// axial shift unit
// ---------------------------------------------------------------------------

/// The axial-shift unit: pre-norm, input projection, the two shifted and
/// projected branches (parallel sum or serial composition), output norm and
/// projection. Exactly four `C x C` projections, so one unit costs
/// `4 h w C^2` MACs regardless of shift size, dilation or padding.
#[derive(Clone, Copy, Debug)]
pub struct AxialShiftUnitRef {
    pub dim: usize,
    pub norm_pre: LayerNormRef,
    pub proj_in: LinearRef,
    pub norm_in: LayerNormRef,
    pub proj_h: LinearRef,
    pub proj_v: LinearRef,
    pub norm_out: LayerNormRef,
    pub proj_out: LinearRef,
    pub shift: ShiftConfig,
    pub connection: Connection,
}

impl AxialShiftUnitRef {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        shift: ShiftConfig,
        connection: Connection,
        rng: &mut Stream,
    ) -> Self {
        AxialShiftUnitRef {
            dim,
            norm_pre: LayerNormRef::init(store, &format!("{name}.norm_pre"), dim),
            proj_in: LinearRef::init(store, &format!("{name}.proj_in"), dim, dim, rng),
            norm_in: LayerNormRef::init(store, &format!("{name}.norm_in"), dim),
            proj_h: LinearRef::init(store, &format!("{name}.proj_h"), dim, dim, rng),
            proj_v: LinearRef::init(store, &format!("{name}.proj_v"), dim, dim, rng),
            norm_out: LayerNormRef::init(store, &format!("{name}.norm_out"), dim),
            proj_out: LinearRef::init(store, &format!("{name}.proj_out"), dim, dim, rng),
            shift,
            connection,
        }
    }

    /// The residual branch: everything except the shortcut add.
    pub fn branch<T: Real>(&self, tape: &mut Tape<T>, bind: &Binding, x: Var) -> Result<Var> {
        let x = self.norm_pre.forward(tape, bind, x)?;
        let x = self.proj_in.forward(tape, bind, x)?;
        let x = self.norm_in.forward(tape, bind, x)?;
        let x = tape.gelu(x)?;
        let y = match self.connection {
            Connection::Parallel => {
                let sh = shift(tape, x, Axis::Width, &self.shift)?;
                let lr = self.proj_h.forward(tape, bind, sh)?;
                let lr = tape.gelu(lr)?;
                let sv = shift(tape, x, Axis::Height, &self.shift)?;
                let td = self.proj_v.forward(tape, bind, sv)?;
                let td = tape.gelu(td)?;
                tape.add(lr, td)?
            }
            Connection::Serial => {
                let sh = shift(tape, x, Axis::Width, &self.shift)?;
                let lr = self.proj_h.forward(tape, bind, sh)?;
                let lr = tape.gelu(lr)?;
                let sv = shift(tape, lr, Axis::Height, &self.shift)?;
                let td = self.proj_v.forward(tape, bind, sv)?;
                tape.gelu(td)?
            }
        };
        let y = self.norm_out.forward(tape, bind, y)?;
        self.proj_out.forward(tape, bind, y)
    }

    /// Standalone unit: branch plus shortcut.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bind: &Binding, x: Var) -> Result<Var> {
        let b = self.branch(tape, bind, x)?;
        tape.add(b, x)
    }

    /// MACs of one unit forward at `h x w` (batch 1): the four projections.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let positions = (h * w) as u64;
        self.proj_in.macs(positions)
            + self.proj_h.macs(positions)
            + self.proj_v.macs(positions)
            + self.proj_out.macs(positions)
    }
}

// ---------------------------------------------------------------------------
// block
// ---------------------------------------------------------------------------

/// Spatial-mixing core of a block: the axial-shift unit, or one of the
/// ablation token mixes dropped in its place.
#[derive(Clone, Debug)]
pub enum CoreRef {
    AxialShift(AxialShiftUnitRef),
    GlobalMix(GlobalMixRef),
    AxialMix(AxialMixRef),
    WindowMix(WindowMixRef),
}

impl CoreRef {
    pub fn branch<T: Real>(&self, tape: &mut Tape<T>, bind: &Binding, x: Var) -> Result<Var> {
        match self {
            CoreRef::AxialShift(u) => u.branch(tape, bind, x),
            CoreRef::GlobalMix(m) => m.branch(tape, bind, x),
            CoreRef::AxialMix(m) => m.branch(tape, bind, x),
            CoreRef::WindowMix(m) => m.branch(tape, bind, x),
        }
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        match self {
            CoreRef::AxialShift(u) => u.macs(h, w),
            CoreRef::GlobalMix(m) => m.macs(h, w),
            CoreRef::AxialMix(m) => m.macs(h, w),
            CoreRef::WindowMix(m) => m.macs(h, w),
        }
    }
}

/// Training/eval context for a forward pass; training carries the stochastic
/// depth stream.
pub enum ForwardMode<'a> {
    Eval,
    Train(&'a mut Stream),
}

impl ForwardMode<'_> {
    fn drop_factors<T: Real>(&mut self, batch: usize, rate: f64) -> Result<Option<Vec<T>>> {
        match self {
            ForwardMode::Eval => crate::layers::drop_path_factors::<T>(batch, rate, false, &mut Stream::new(0, 0)),
            ForwardMode::Train(rng) => crate::layers::drop_path_factors::<T>(batch, rate, true, rng),
        }
    }
}

/// One backbone block: spatial core with DropPath residual, then MLP with
/// DropPath residual. Weight-only parameter count for the axial-shift core is
/// `(4 + 2r) C^2`.
#[derive(Clone, Debug)]
pub struct BlockRef {
    pub dim: usize,
    pub core: CoreRef,
    pub norm_mlp: LayerNormRef,
    pub mlp: MlpRef,
    pub drop_path_rate: f64,
}

impl BlockRef {
    pub fn init<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        shift: ShiftConfig,
        connection: Connection,
        mlp_ratio: usize,
        drop_path_rate: f64,
        rng: &mut Stream,
    ) -> Self {
        let core = CoreRef::AxialShift(AxialShiftUnitRef::init(
            store,
            &format!("{name}.unit"),
            dim,
            shift,
            connection,
            rng,
        ));
        Self::init_with_core(store, name, dim, core, mlp_ratio, drop_path_rate, rng)
    }

    pub fn init_with_core<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        core: CoreRef,
        mlp_ratio: usize,
        drop_path_rate: f64,
        rng: &mut Stream,
    ) -> Self {
        BlockRef {
            dim,
            core,
            norm_mlp: LayerNormRef::init(store, &format!("{name}.norm_mlp"), dim),
            mlp: MlpRef::init(store, &format!("{name}.mlp"), dim, mlp_ratio, rng),
            drop_path_rate,
        }
    }

    fn residual<T: Real>(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        branch: Var,
        mode: &mut ForwardMode<'_>,
    ) -> Result<Var> {
        let batch = tape.value(branch).dims()[0];
        let branch = match mode.drop_factors::<T>(batch, self.drop_path_rate)? {
            None => branch,
            Some(f) => tape.scale_per_sample(branch, f)?,
        };
        tape.add(x, branch)
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: Var,
        mode: &mut ForwardMode<'_>,
    ) -> Result<Var> {
        let b1 = self.core.branch(tape, bind, x)?;
        let x = self.residual(tape, x, b1, mode)?;
        let n = self.norm_mlp.forward(tape, bind, x)?;
        let b2 = self.mlp.forward(tape, bind, n)?;
        self.residual(tape, x, b2, mode)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let positions = (h * w) as u64;
        self.core.macs(h, w) + self.mlp.fc1.macs(positions) + self.mlp.fc2.macs(positions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand(dims: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Stream::new(seed, 17);
        let mut t = Tensor::zeros(dims);
        t.fill_uniform(&mut rng, -1.0, 1.0);
        t
    }

    #[test]
    fn config_rejects_even_sizes_and_zero_dilation() {
        assert!(ShiftConfig::new(4, 3, 1, Padding::Zero).is_err());
        assert!(ShiftConfig::new(3, 2, 1, Padding::Zero).is_err());
        assert!(ShiftConfig::new(3, 3, 0, Padding::Zero).is_err());
        let def = ShiftConfig::default();
        assert_eq!((def.s_h, def.s_v, def.dilation, def.padding), (5, 5, 1, Padding::Zero));
    }

    #[test]
    fn shift_size_one_is_identity() {
        let x = rand(&[2, 4, 3, 5], 1);
        for pad in Padding::ALL {
            for d in [1, 2, 3] {
                let cfg = ShiftConfig::new(1, 1, d, pad).unwrap();
                let y = shift_eval(&x, Axis::Width, &cfg).unwrap();
                assert_eq!(y.data(), x.data(), "pad {pad:?} d {d}");
            }
        }
    }

    #[test]
    fn fig_style_three_group_shift_with_zero_border() {
        // C=3, w=5, s=3, d=1, zero padding: channel groups read offsets
        // {-1, 0, +1}; vacated border cells are zero.
        let x = Tensor::from_vec(
            vec![1, 3, 1, 5],
            vec![
                1.0, 2.0, 3.0, 4.0, 5.0, // channel 0
                10.0, 20.0, 30.0, 40.0, 50.0, // channel 1
                100.0, 200.0, 300.0, 400.0, 500.0, // channel 2
            ],
        )
        .unwrap();
        let cfg = ShiftConfig::new(3, 3, 1, Padding::Zero).unwrap();
        let y = shift_eval(&x, Axis::Width, &cfg).unwrap();
        // channel 0 (group 0): reads j-1 -> shifted right, left cell vacated
        assert_eq!(&y.data()[0..5], &[0.0, 1.0, 2.0, 3.0, 4.0]);
        // channel 1 (group 1): unshifted
        assert_eq!(&y.data()[5..10], &[10.0, 20.0, 30.0, 40.0, 50.0]);
        // channel 2 (group 2): reads j+1 -> shifted left, right cell vacated
        assert_eq!(&y.data()[10..15], &[200.0, 300.0, 400.0, 500.0, 0.0]);
        assert!(y.max_abs_diff(&shift_oracle(&x, Axis::Width, &cfg).unwrap()) == 0.0);
    }

    #[test]
    fn shift_matches_index_oracle_exactly() {
        // the dilated case pinned by hand: b=1, C=6, h=4, w=5, s=3, d=2, zero
        let x = rand(&[1, 6, 4, 5], 2);
        let cfg = ShiftConfig::new(3, 3, 2, Padding::Zero).unwrap();
        for axis in [Axis::Width, Axis::Height] {
            let y = shift_eval(&x, axis, &cfg).unwrap();
            let o = shift_oracle(&x, axis, &cfg).unwrap();
            assert_eq!(y.data(), o.data());
        }
        // a sweep over sizes, dilations, paddings and channel counts
        let mut case = 0;
        for &s in &[1usize, 3, 5] {
            for &d in &[1usize, 2] {
                for pad in Padding::ALL {
                    for &c in &[5usize, 8] {
                        if s > c {
                            continue;
                        }
                        let cfg = ShiftConfig::new(s, s, d, pad).unwrap();
                        if pad == Padding::Reflect && (s / 2) * d >= 4 {
                            continue;
                        }
                        let x = rand(&[2, c, 4, 6], 100 + case);
                        for axis in [Axis::Width, Axis::Height] {
                            let y = shift_eval(&x, axis, &cfg).unwrap();
                            let o = shift_oracle(&x, axis, &cfg).unwrap();
                            assert_eq!(y.data(), o.data(), "s={s} d={d} pad={pad:?} c={c}");
                        }
                        case += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn shift_precondition_errors() {
        let x = rand(&[1, 2, 4, 4], 3);
        let cfg = ShiftConfig::new(3, 3, 1, Padding::Zero).unwrap();
        assert!(shift_eval(&x, Axis::Width, &cfg).is_err(), "s > C");
        let x = rand(&[1, 8, 3, 3], 4);
        let cfg = ShiftConfig::new(7, 7, 1, Padding::Reflect).unwrap();
        assert!(shift_eval(&x, Axis::Width, &cfg).is_err(), "reflect reach");
    }

    #[test]
    fn circular_shift_involution() {
        let x = rand(&[1, 7, 4, 5], 5);
        let cfg = ShiftConfig::new(3, 3, 2, Padding::Circular).unwrap();
        let y = shift_eval(&x, Axis::Width, &cfg).unwrap();
        let offsets: Vec<i64> = (0..3)
            .map(|g| -cfg.channel_offset(Axis::Width, g * 7usize.div_ceil(3), 7))
            .collect();
        let back = circular_group_shift(&y, Axis::Width, &offsets).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn channel_offset_closed_form() {
        let cfg = ShiftConfig::new(3, 5, 2, Padding::Zero).unwrap();
        // C=7, s_h=3: groups of ceil(7/3)=3 -> offsets -2,-2,-2, 0,0,0, +2
        let offs: Vec<i64> = (0..7).map(|c| cfg.channel_offset(Axis::Width, c, 7)).collect();
        assert_eq!(offs, vec![-2, -2, -2, 0, 0, 0, 2]);
        // C=10, s_v=5: groups of 2
        let offs: Vec<i64> = (0..10).map(|c| cfg.channel_offset(Axis::Height, c, 10)).collect();
        assert_eq!(offs, vec![-4, -4, -2, -2, 0, 0, 2, 2, 4, 4]);
    }

    #[test]
    fn sampling_locations_cross() {
        let cfg = ShiftConfig::new(3, 3, 1, Padding::Zero).unwrap();
        let locs = sampling_locations(&cfg);
        let expect: BTreeSet<(i64, i64)> =
            [(-1, 0), (0, 0), (1, 0), (0, -1), (0, 1)].into_iter().collect();
        assert_eq!(locs, expect);
        assert_eq!(sampling_locations(&ShiftConfig::new(1, 1, 1, Padding::Zero).unwrap()).len(), 1);
        let wide = sampling_locations(&ShiftConfig::new(5, 5, 2, Padding::Zero).unwrap());
        assert_eq!(wide.len(), 9);
        assert!(wide.contains(&(0, 4)) && wide.contains(&(-4, 0)) && wide.contains(&(2, 0)));
    }

    #[test]
    fn unit_zero_weights_propagate_zero_and_block_is_identity() {
        let mut rng = Stream::new(7, 0);
        let mut store = ParamStore::<f64>::new();
        let block = BlockRef::init(
            &mut store,
            "blk",
            6,
            ShiftConfig::default(),
            Connection::Parallel,
            2,
            0.0,
            &mut rng,
        );
        // zero every projection weight; biases/betas start at zero
        for e in store.entries_mut() {
            if e.tensor.rank() == 2 {
                e.tensor.data_mut().fill(0.0);
            }
        }
        let x = rand(&[2, 6, 4, 4], 8);
        let mut tape = Tape::eval();
        let bind = store.bind(&mut tape);
        let xv = tape.leaf(&x);
        let y = block.forward(&mut tape, &bind, xv, &mut ForwardMode::Eval).unwrap();
        assert!(tape.value(y).max_abs_diff(&x) < 1e-15, "pure shortcuts");

        // weight-only parameter count per block: (4 + 2r) C^2
        assert_eq!(store.param_count(true), (4 + 2 * 2) * 36);
    }

    #[test]
    fn unit_size_one_never_mixes_positions() {
        let mut rng = Stream::new(9, 0);
        let mut store = ParamStore::<f64>::new();
        let unit = AxialShiftUnitRef::init(
            &mut store,
            "unit",
            5,
            ShiftConfig::new(1, 1, 1, Padding::Zero).unwrap(),
            Connection::Parallel,
            &mut rng,
        );
        let x = rand(&[1, 5, 4, 4], 10);
        let run = |input: &Tensor<f64>| {
            let mut tape = Tape::eval();
            let bind = store.bind(&mut tape);
            let xv = tape.leaf(input);
            let y = unit.forward(&mut tape, &bind, xv, ).unwrap();
            tape.value(y).clone()
        };
        let y0 = run(&x);
        let mut x1 = x.clone();
        // perturb position (2, 3) on every channel
        for c in 0..5 {
            x1.data_mut()[idx4(5, 4, 4, 0, c, 2, 3)] += 0.37;
        }
        let y1 = run(&x1);
        for c in 0..5 {
            for i in 0..4 {
                for j in 0..4 {
                    let same = y0.data()[idx4(5, 4, 4, 0, c, i, j)] == y1.data()[idx4(5, 4, 4, 0, c, i, j)];
                    assert_eq!(same, !(i == 2 && j == 3), "({c},{i},{j})");
                }
            }
        }
    }

    #[test]
    fn unit_mac_law_and_counter_agree() {
        let mut rng = Stream::new(11, 0);
        let mut store = ParamStore::<f64>::new();
        let unit = AxialShiftUnitRef::init(
            &mut store,
            "unit",
            96,
            ShiftConfig::default(),
            Connection::Parallel,
            &mut rng,
        );
        // the closed form at the stage-1 resolution
        assert_eq!(unit.macs(56, 56), 115_605_504);

        // instrumented counter agrees at a small size, for either connection
        for conn in [Connection::Parallel, Connection::Serial] {
            let mut store = ParamStore::<f64>::new();
            let unit = AxialShiftUnitRef::init(
                &mut store,
                "unit",
                8,
                ShiftConfig::new(3, 5, 1, Padding::Zero).unwrap(),
                conn,
                &mut rng,
            );
            let x = rand(&[1, 8, 5, 6], 12);
            let mut tape = Tape::eval();
            let bind = store.bind(&mut tape);
            let xv = tape.leaf(&x);
            unit.forward(&mut tape, &bind, xv).unwrap();
            assert_eq!(tape.macs(), unit.macs(5, 6), "{conn:?}");
            assert_eq!(tape.macs(), 4 * 5 * 6 * 8 * 8);
        }
    }

    #[test]
    fn shift_composition_is_differentiable() {
        use crate::tensor::tape::{max_rel_err, numeric_grad};
        let cfg = ShiftConfig::new(3, 3, 1, Padding::Reflect).unwrap();
        let x = rand(&[1, 6, 4, 4], 13);
        let proj = rand(&[1, 6, 4, 4], 14);
        let f = |ts: &[Tensor<f64>]| -> f64 {
            let y = shift_eval(&ts[0], Axis::Width, &cfg).unwrap();
            y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        };
        let mut tape = Tape::new();
        let xv = tape.watched_leaf(&x);
        let y = shift(&mut tape, xv, Axis::Width, &cfg).unwrap();
        let pv = tape.leaf(&proj);
        let prod = tape.mul(y, pv).unwrap();
        let loss = tape.reduce_sum(prod, &[0, 1, 2, 3]).unwrap();
        tape.backward(loss).unwrap();
        let err = max_rel_err(tape.grad(xv).unwrap(), &numeric_grad(&f, &[x], 0, 1e-5), 1e-3);
        assert!(err < 1e-6, "err {err}");
    }
}
