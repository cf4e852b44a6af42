//! Ablation baselines isolating the contribution of the axial shift.
//!
//! Each baseline drops a token-mixing core into the standard block skeleton
//! in place of the axial-shift unit: Global-MLP mixes all spatial positions
//! per channel, Axial-MLP mixes rows and columns in parallel, Window-MLP
//! mixes within fixed non-overlapping windows. The single-direction kinds
//! reuse the axial-shift unit with shift sizes (5, 1) / (1, 5).
//!
//! Global and Axial mixers are bound to the resolution they were built for;
//! running them at any other input size is a resolution-mismatch error. The
//! axial-shift and window cores carry no such binding.

use crate::error::{Error, Result};
use crate::layers::LayerNormRef;
use crate::params::{Binding, ParamId, ParamStore};
use crate::rng::Stream;
use crate::shift::{AxialShiftUnitRef, BlockRef, Connection, CoreRef, ShiftConfig};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

pub use crate::tensor::ops::{axial_token_mix, global_token_mix, window_token_mix};

/// Value-level mixer weights for one stage resolution.
#[derive(Clone, Debug)]
pub enum TokenMixParams<T: Real> {
    /// `[hw, hw]` mixer bound to an `h x w` grid.
    Global { w: Tensor<T>, h: usize, wd: usize },
    /// Row mixer `[w, w]` and column mixer `[h, h]` bound to an `h x w` grid.
    Axial { w_h: Tensor<T>, w_v: Tensor<T>, h: usize, wd: usize },
    /// `[M*M, M*M]` mixer shared across windows.
    Window { w: Tensor<T>, m: usize },
}

impl<T: Real> TokenMixParams<T> {
    pub fn global(w: Tensor<T>, h: usize, wd: usize) -> Result<Self> {
        if w.dims() != [h * wd, h * wd] {
            return Err(Error::shape(
                "token_mix",
                format!("mixer {:?} does not bind to {}x{}", w.dims(), h, wd),
            ));
        }
        Ok(TokenMixParams::Global { w, h, wd })
    }
}

fn check_resolution(expected_h: usize, expected_w: usize, got_h: usize, got_w: usize) -> Result<()> {
    if (expected_h, expected_w) != (got_h, got_w) {
        return Err(Error::ResolutionMismatch { expected_h, expected_w, got_h, got_w });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// store-backed cores (block drop-ins)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct GlobalMixRef {
    pub norm: LayerNormRef,
    pub w: ParamId,
    pub dim: usize,
    pub h: usize,
    pub wd: usize,
}

impl GlobalMixRef {
    pub fn init<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, h: usize, wd: usize, rng: &mut Stream) -> Self {
        let norm = LayerNormRef::init(store, &format!("{name}.norm"), dim);
        let mut w = Tensor::zeros(&[h * wd, h * wd]);
        w.fill_trunc_normal(rng, crate::layers::INIT_STD);
        let w = store.add(format!("{name}.mixer.weight"), w, true);
        GlobalMixRef { norm, w, dim, h, wd }
    }

    pub fn branch<T: Real>(&self, tape: &mut Tape<T>, bind: &Binding, x: Var) -> Result<Var> {
        let d = tape.value(x).dims();
        check_resolution(self.h, self.wd, d[2], d[3])?;
        let n = self.norm.forward(tape, bind, x)?;
        let m = tape.global_token_mix(n, bind.var(self.w))?;
        tape.gelu(m)
    }

    /// Per image: every channel mixes all `hw` positions.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let hw = (h * w) as u64;
        self.dim as u64 * hw * hw
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AxialMixRef {
    pub norm: LayerNormRef,
    pub w_h: ParamId,
    pub w_v: ParamId,
    pub dim: usize,
    pub h: usize,
    pub wd: usize,
    pub serial: bool,
}

impl AxialMixRef {
    pub fn init<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, h: usize, wd: usize, rng: &mut Stream) -> Self {
        let norm = LayerNormRef::init(store, &format!("{name}.norm"), dim);
        let mut wh = Tensor::zeros(&[wd, wd]);
        wh.fill_trunc_normal(rng, crate::layers::INIT_STD);
        let mut wv = Tensor::zeros(&[h, h]);
        wv.fill_trunc_normal(rng, crate::layers::INIT_STD);
        let w_h = store.add(format!("{name}.mixer_h.weight"), wh, true);
        let w_v = store.add(format!("{name}.mixer_v.weight"), wv, true);
        AxialMixRef { norm, w_h, w_v, dim, h, wd, serial: false }
    }

    pub fn branch<T: Real>(&self, tape: &mut Tape<T>, bind: &Binding, x: Var) -> Result<Var> {
        let d = tape.value(x).dims();
        check_resolution(self.h, self.wd, d[2], d[3])?;
        let n = self.norm.forward(tape, bind, x)?;
        if self.serial {
            let zero_v = tape.leaf(&Tensor::zeros(&[self.h, self.h]));
            let zero_h = tape.leaf(&Tensor::zeros(&[self.wd, self.wd]));
            let row = tape.axial_token_mix(n, bind.var(self.w_h), zero_v)?;
            let row = tape.gelu(row)?;
            let col = tape.axial_token_mix(row, zero_h, bind.var(self.w_v))?;
            tape.gelu(col)
        } else {
            let m = tape.axial_token_mix(n, bind.var(self.w_h), bind.var(self.w_v))?;
            tape.gelu(m)
        }
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        // serial and parallel touch the same weight set once each
        self.dim as u64 * (h * w * w + w * h * h) as u64
    }
}

#[derive(Clone, Copy, Debug)]
pub struct WindowMixRef {
    pub norm: LayerNormRef,
    pub w: ParamId,
    pub dim: usize,
    pub m: usize,
}

impl WindowMixRef {
    pub fn init<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize, m: usize, rng: &mut Stream) -> Self {
        let norm = LayerNormRef::init(store, &format!("{name}.norm"), dim);
        let mut w = Tensor::zeros(&[m * m, m * m]);
        w.fill_trunc_normal(rng, crate::layers::INIT_STD);
        let w = store.add(format!("{name}.mixer.weight"), w, true);
        WindowMixRef { norm, w, dim, m }
    }

    pub fn branch<T: Real>(&self, tape: &mut Tape<T>, bind: &Binding, x: Var) -> Result<Var> {
        let n = self.norm.forward(tape, bind, x)?;
        let m = tape.window_token_mix(n, bind.var(self.w), self.m)?;
        tape.gelu(m)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.dim as u64 * (h * w * self.m * self.m) as u64
    }
}

// ---------------------------------------------------------------------------
// baseline block construction
// ---------------------------------------------------------------------------

/// The block kinds of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    /// Full-resolution token-mixing MLP per channel.
    GlobalMlp,
    /// Horizontal plus vertical token mixes.
    AxialMlp,
    /// Token mixing inside fixed 7x7 windows.
    WindowMlp,
    /// Axial shift with `(s_h, s_v)`.
    Shift(usize, usize),
}

impl BaselineKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(BaselineKind::GlobalMlp),
            "axial" => Ok(BaselineKind::AxialMlp),
            "window" => Ok(BaselineKind::WindowMlp),
            "5x1" => Ok(BaselineKind::Shift(5, 1)),
            "1x5" => Ok(BaselineKind::Shift(1, 5)),
            "5x5" => Ok(BaselineKind::Shift(5, 5)),
            "1x1" => Ok(BaselineKind::Shift(1, 1)),
            other => Err(Error::invalid("baseline", format!("unknown kind '{other}'"))),
        }
    }
}

pub const WINDOW_MLP_SIZE: usize = 7;

/// Build one block with the requested spatial core dropped into the standard
/// skeleton at a given stage resolution.
#[allow(clippy::too_many_arguments)]
pub fn make_baseline_block<T: Real>(
    store: &mut ParamStore<T>,
    name: &str,
    kind: BaselineKind,
    dim: usize,
    h: usize,
    w: usize,
    mlp_ratio: usize,
    drop_path_rate: f64,
    rng: &mut Stream,
) -> Result<BlockRef> {
    let core = match kind {
        BaselineKind::GlobalMlp => {
            CoreRef::GlobalMix(GlobalMixRef::init(store, &format!("{name}.unit"), dim, h, w, rng))
        }
        BaselineKind::AxialMlp => {
            CoreRef::AxialMix(AxialMixRef::init(store, &format!("{name}.unit"), dim, h, w, rng))
        }
        BaselineKind::WindowMlp => {
            if h % WINDOW_MLP_SIZE != 0 || w % WINDOW_MLP_SIZE != 0 {
                return Err(Error::shape(
                    "baseline",
                    format!("window {WINDOW_MLP_SIZE} must divide stage resolution {h}x{w}"),
                ));
            }
            CoreRef::WindowMix(WindowMixRef::init(store, &format!("{name}.unit"), dim, WINDOW_MLP_SIZE, rng))
        }
        BaselineKind::Shift(s_h, s_v) => {
            let cfg = ShiftConfig::new(s_h, s_v, 1, crate::shift::Padding::Zero)?;
            CoreRef::AxialShift(AxialShiftUnitRef::init(
                store,
                &format!("{name}.unit"),
                dim,
                cfg,
                Connection::Parallel,
                rng,
            ))
        }
    };
    Ok(BlockRef::init_with_core(store, name, dim, core, mlp_ratio, drop_path_rate, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shift::ForwardMode;
    use crate::tensor::ops;

    fn rand(dims: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = Stream::new(seed, 31);
        let mut t = Tensor::zeros(dims);
        t.fill_uniform(&mut rng, -1.0, 1.0);
        t
    }

    #[test]
    fn baseline_kinds_select_shift_sizes() {
        let mut rng = Stream::new(1, 0);
        let mut store = ParamStore::<f64>::new();
        let b51 = make_baseline_block(&mut store, "b", BaselineKind::Shift(5, 1), 8, 8, 8, 2, 0.0, &mut rng).unwrap();
        match &b51.core {
            CoreRef::AxialShift(u) => {
                assert_eq!((u.shift.s_h, u.shift.s_v), (5, 1));
            }
            _ => panic!("expected shift core"),
        }
        let b15 = make_baseline_block(&mut store, "c", BaselineKind::Shift(1, 5), 8, 8, 8, 2, 0.0, &mut rng).unwrap();
        match &b15.core {
            CoreRef::AxialShift(u) => assert_eq!((u.shift.s_h, u.shift.s_v), (1, 5)),
            _ => panic!("expected shift core"),
        }
        let bw = make_baseline_block(&mut store, "d", BaselineKind::WindowMlp, 8, 14, 14, 2, 0.0, &mut rng).unwrap();
        match &bw.core {
            CoreRef::WindowMix(m) => assert_eq!(m.m, 7),
            _ => panic!("expected window core"),
        }
        assert!(make_baseline_block(&mut store, "e", BaselineKind::WindowMlp, 8, 8, 8, 2, 0.0, &mut rng).is_err());
    }

    #[test]
    fn global_core_rejects_other_resolutions() {
        let mut rng = Stream::new(2, 0);
        let mut store = ParamStore::<f64>::new();
        let blk = make_baseline_block(&mut store, "g", BaselineKind::GlobalMlp, 4, 4, 4, 2, 0.0, &mut rng).unwrap();
        let ok = rand(&[1, 4, 4, 4], 3);
        let bad = rand(&[1, 4, 8, 8], 4);
        let mut tape = Tape::eval();
        let bind = store.bind(&mut tape);
        let xv = tape.leaf(&ok);
        assert!(blk.forward(&mut tape, &bind, xv, &mut ForwardMode::Eval).is_ok());
        let bv = tape.leaf(&bad);
        let err = blk.forward(&mut tape, &bind, bv, &mut ForwardMode::Eval);
        assert!(matches!(err, Err(Error::ResolutionMismatch { .. })), "{err:?}");
    }

    #[test]
    fn axial_core_parallel_equals_sum_of_directions() {
        // with identity mixers the parallel core's mix output is 2x the norm
        let mut rng = Stream::new(5, 0);
        let mut store = ParamStore::<f64>::new();
        let mix = AxialMixRef::init(&mut store, "a", 3, 4, 5, &mut rng);
        let x = rand(&[2, 3, 4, 5], 6);
        let mut tape = Tape::eval();
        let bind = store.bind(&mut tape);
        let xv = tape.leaf(&x);
        let y = mix.branch(&mut tape, &bind, xv).unwrap();
        // oracle: gelu(row_mix + col_mix) over the normed input
        let normed = {
            let p = crate::layers::LayerNormParams::identity(3);
            crate::layers::layer_norm(&x, &p).unwrap()
        };
        let wh = store.tensor(mix.w_h).clone();
        let wv = store.tensor(mix.w_v).clone();
        let mixed = ops::axial_token_mix(&normed, &wh, &wv).unwrap();
        let expect = ops::gelu(&mixed);
        assert!(tape.value(y).max_abs_diff(&expect) < 1e-12);
    }
}
