//! Closed-form parameter and MAC accounting, the complexity comparators, and
//! empirical counters that cross-check the formulas against built models.
//!
//! Two independent routes must reconcile exactly: `formula_*` evaluates the
//! per-stage closed forms from the configuration alone, while
//! [`measure_model`] counts the tensors actually stored in a built model and
//! walks its wiring for MACs. The FLOP convention is 1 MAC = 1 FLOP, which
//! reproduces the published G-counts.

use crate::backbone::{Model, VariantConfig, STAGES};
use crate::error::{Error, Result};
use crate::shift::{sampling_locations, AxialShiftUnitRef, Connection, ShiftConfig};
use crate::tensor::tape::Tape;
use crate::tensor::{idx4, Real, Tensor};
use std::collections::BTreeSet;

/// One accounting entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub stage: String,
    pub component: String,
    pub params: u64,
    pub macs: u64,
}

/// Per-stage cost entries with exact integer totals.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CostBreakdown {
    pub rows: Vec<CostRow>,
}

impl CostBreakdown {
    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn row(&self, stage: &str, component: &str) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.stage == stage && r.component == component)
    }

    /// Sum over one component kind across stages.
    pub fn component_total(&self, component: &str) -> (u64, u64) {
        self.rows
            .iter()
            .filter(|r| r.component == component)
            .fold((0, 0), |(p, m), r| (p + r.params, m + r.macs))
    }

    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let w1 = self.rows.iter().map(|r| r.stage.len()).chain([5]).max().unwrap();
        let w2 = self.rows.iter().map(|r| r.component.len()).chain([9]).max().unwrap();
        out.push_str(&format!("{:<w1$}  {:<w2$}  {:>14}  {:>16}\n", "stage", "component", "params", "macs"));
        for r in &self.rows {
            out.push_str(&format!("{:<w1$}  {:<w2$}  {:>14}  {:>16}\n", r.stage, r.component, r.params, r.macs));
        }
        out.push_str(&format!(
            "{:<w1$}  {:<w2$}  {:>14}  {:>16}\n",
            "total",
            "",
            self.total_params(),
            self.total_macs()
        ));
        out
    }

    /// Comma-separated records: stage,component,params,macs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,component,params,macs\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.stage, r.component, r.params, r.macs));
        }
        out.push_str(&format!("total,,{},{}\n", self.total_params(), self.total_macs()));
        out
    }
}

/// Round an integer count to one decimal in units of 10^`exp` (half away
/// from zero), e.g. `round_to_tenth(4_387_289_088, 9) == 4.4`.
pub fn round_to_tenth(count: u64, exp: u32) -> f64 {
    let unit = 10u64.pow(exp);
    let tenths = (count * 10 + unit / 2) / unit;
    tenths as f64 / 10.0
}

/// Round to the nearest whole unit of 10^`exp` (half away from zero).
pub fn round_to_unit(count: u64, exp: u32) -> u64 {
    let unit = 10u64.pow(exp);
    (count + unit / 2) / unit
}

// ---------------------------------------------------------------------------
// closed forms
// ---------------------------------------------------------------------------

/// Weight-only closed forms per stage; `include_aux` adds biases, norm
/// affines and the classification head's auxiliaries.
///
/// Weight-only entries: embedding `3Cp^2`, stage-i blocks `(4+2r)(2^(i-1)C)^2
/// n_i`, merging into stage i `8(2^(i-2)C)^2`, head `K * 8C`.
pub fn formula_params(v: &VariantConfig, include_aux: bool) -> CostBreakdown {
    let c = v.channels as u64;
    let p = v.patch_size as u64;
    let r = v.mlp_ratio as u64;
    let k = v.num_classes as u64;
    let inc = v.in_channels as u64;
    let mut rows = Vec::new();

    let mut params = inc * c * p * p;
    if include_aux {
        params += c + 2 * c; // bias + embed norm affine
    }
    rows.push(CostRow { stage: "stage1".into(), component: "linear-embedding".into(), params, macs: 0 });

    for si in 0..STAGES as u64 {
        let d = c << si;
        let n = v.blocks[si as usize] as u64;
        if si > 0 {
            let prev = c << (si - 1);
            let mut params = 8 * prev * prev;
            if include_aux {
                params += 2 * prev; // reduction bias
                params += 2 * 4 * prev; // norm affine over 4C
            }
            rows.push(CostRow {
                stage: format!("stage{}", si + 1),
                component: "patch-merging".into(),
                params,
                macs: 0,
            });
        }
        let mut params = (4 + 2 * r) * d * d * n;
        if include_aux {
            // four projection biases + mlp biases (r+1)C, four norms 2C each
            params += n * (4 * d + (r + 1) * d + 8 * d);
        }
        rows.push(CostRow { stage: format!("stage{}", si + 1), component: "blocks".into(), params, macs: 0 });
    }

    let final_c = c << (STAGES as u64 - 1);
    let mut params = k * final_c;
    if include_aux {
        params += k + 2 * final_c;
    }
    rows.push(CostRow { stage: "head".into(), component: "head".into(), params, macs: 0 });
    CostBreakdown { rows }
}

/// Per-stage MAC totals for one image at `H x W` under 1 MAC = 1 FLOP:
/// embedding `3Cp^2 (H/p)(W/p)`, blocks `(4+2r)C_i^2 hw_i n_i`, mergings
/// `8C_prev^2 hw_next`, head `hw_final * C_final * K`.
pub fn formula_flops(v: &VariantConfig, h: usize, w: usize) -> Result<CostBreakdown> {
    let div = v.input_divisor();
    if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
        return Err(Error::shape(
            "formula_flops",
            format!("input {h}x{w} must be positive and divisible by {div}"),
        ));
    }
    let c = v.channels as u64;
    let p = v.patch_size as u64;
    let r = v.mlp_ratio as u64;
    let k = v.num_classes as u64;
    let inc = v.in_channels as u64;
    let hw = |si: u64| -> u64 {
        let ds = v.stage_downsample(si as usize) as u64;
        (h as u64 / ds) * (w as u64 / ds)
    };
    let mut rows = Vec::new();
    rows.push(CostRow {
        stage: "stage1".into(),
        component: "linear-embedding".into(),
        params: 0,
        macs: inc * c * p * p * hw(0),
    });
    for si in 0..STAGES as u64 {
        let d = c << si;
        let n = v.blocks[si as usize] as u64;
        if si > 0 {
            let prev = c << (si - 1);
            rows.push(CostRow {
                stage: format!("stage{}", si + 1),
                component: "patch-merging".into(),
                params: 0,
                macs: 8 * prev * prev * hw(si),
            });
        }
        rows.push(CostRow {
            stage: format!("stage{}", si + 1),
            component: "blocks".into(),
            params: 0,
            macs: (4 + 2 * r) * d * d * hw(si) * n,
        });
    }
    let final_c = c << (STAGES as u64 - 1);
    rows.push(CostRow {
        stage: "head".into(),
        component: "head".into(),
        params: 0,
        macs: hw(STAGES as u64 - 1) * final_c * k,
    });
    Ok(CostBreakdown { rows })
}

/// The three attention/shift complexity closed forms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Complexity {
    pub msa: u64,
    pub wmsa: u64,
    pub axial_shift: u64,
}

/// `MSA = 4hwC^2 + 2(hw)^2 C`, `W-MSA = 4hwC^2 + 2M^2 hw C`,
/// `AS = 4hwC^2`. `AS <= W-MSA <= MSA` whenever `M^2 <= hw`.
pub fn complexity_compare(h: usize, w: usize, c: usize, m: usize) -> Complexity {
    let (h, w, c, m) = (h as u64, w as u64, c as u64, m as u64);
    let hw = h * w;
    let base = 4 * hw * c * c;
    Complexity {
        msa: base + 2 * hw * hw * c,
        wmsa: base + 2 * m * m * hw * c,
        axial_shift: base,
    }
}

// ---------------------------------------------------------------------------
// measured counts
// ---------------------------------------------------------------------------

/// Count the parameters actually stored in a built model and walk a
/// counting-only forward at `H x W` for per-image MACs, grouped by
/// (stage, component).
pub fn measure_model<T: Real>(model: &Model<T>, h: usize, w: usize, include_aux: bool) -> Result<CostBreakdown> {
    let mut rows: Vec<CostRow> = Vec::new();
    let upsert = |rows: &mut Vec<CostRow>, stage: String, component: String, params: u64, macs: u64| {
        if let Some(r) = rows.iter_mut().find(|r| r.stage == stage && r.component == component) {
            r.params += params;
            r.macs += macs;
        } else {
            rows.push(CostRow { stage, component, params, macs });
        }
    };

    for e in model.store.entries() {
        if include_aux || e.tensor.rank() == 2 {
            let (stage, component) = classify(&e.name);
            upsert(&mut rows, stage, component, e.tensor.len() as u64, 0);
        }
    }
    for (stage, component, macs) in model.mac_walk(h, w)? {
        upsert(&mut rows, stage, component, 0, macs);
    }
    Ok(CostBreakdown { rows })
}

fn classify(name: &str) -> (String, String) {
    if name.starts_with("embed.") {
        return ("stage1".into(), "linear-embedding".into());
    }
    if name.starts_with("head.") {
        return ("head".into(), "head".into());
    }
    if let Some(rest) = name.strip_prefix("stages.") {
        let si: usize = rest.split('.').next().unwrap_or("0").parse().unwrap_or(0);
        let component = if rest.contains(".merge.") { "patch-merging" } else { "blocks" };
        return (format!("stage{}", si + 1), component.into());
    }
    ("other".into(), "other".into())
}

// ---------------------------------------------------------------------------
// receptive field probes
// ---------------------------------------------------------------------------

/// Input offsets that influence the output at a reference position, found by
/// exact perturbation of a stack of `depth` randomly initialized units in
/// eval mode. Offsets probe the window `|di|, |dj| <= radius`.
pub fn unit_receptive_field(
    cfg: &ShiftConfig,
    connection: Connection,
    depth: usize,
    channels: usize,
    seed: u64,
) -> Result<BTreeSet<(i64, i64)>> {
    if depth == 0 {
        return Err(Error::invalid("receptive_field", "depth must be >= 1"));
    }
    let arm = cfg.pad_amount(crate::shift::Axis::Height).max(cfg.pad_amount(crate::shift::Axis::Width));
    let radius = arm * depth + 1;
    let side = 2 * radius + 3;
    let reference = (radius + 1, radius + 1);

    let mut rng = crate::rng::Stream::new(seed, crate::rng::labels::INIT);
    let mut store = crate::params::ParamStore::<f64>::new();
    let units: Vec<AxialShiftUnitRef> = (0..depth)
        .map(|i| AxialShiftUnitRef::init(&mut store, &format!("probe.{i}"), channels, *cfg, connection, &mut rng))
        .collect();
    // O(1) random weights: training-scale init attenuates the residual
    // branch so hard that deep-tip perturbations fall below one f64 ulp
    for e in store.entries_mut() {
        if e.tensor.rank() == 2 {
            e.tensor.fill_uniform(&mut rng, -0.5, 0.5);
        } else {
            e.tensor.fill_uniform(&mut rng, -0.2, 0.2);
        }
    }

    let run = |input: &Tensor<f64>| -> Result<Tensor<f64>> {
        let mut tape = Tape::eval();
        let bind = store.bind(&mut tape);
        let mut x = tape.leaf(input);
        for u in &units {
            x = u.forward(&mut tape, &bind, x)?;
        }
        Ok(tape.value(x).clone())
    };

    let mut base_img = Tensor::<f64>::zeros(&[1, channels, side, side]);
    base_img.fill_uniform(&mut rng, -1.0, 1.0);
    let base = run(&base_img)?;

    let read_ref = |t: &Tensor<f64>| -> Vec<f64> {
        (0..channels)
            .map(|c| t.data()[idx4(channels, side, side, 0, c, reference.0, reference.1)])
            .collect()
    };
    let base_ref = read_ref(&base);

    let mut influencing = BTreeSet::new();
    let r = radius as i64;
    for di in -r..=r {
        for dj in -r..=r {
            let (pi, pj) = ((reference.0 as i64 + di) as usize, (reference.1 as i64 + dj) as usize);
            let mut perturbed = base_img.clone();
            for c in 0..channels {
                perturbed.data_mut()[idx4(channels, side, side, 0, c, pi, pj)] += 0.5 + 0.1 * c as f64;
            }
            let out = run(&perturbed)?;
            if read_ref(&out) != base_ref {
                influencing.insert((di, dj));
            }
        }
    }
    Ok(influencing)
}

/// Minkowski sum of two offset sets (the stacking law for receptive fields).
pub fn minkowski_sum(a: &BTreeSet<(i64, i64)>, b: &BTreeSet<(i64, i64)>) -> BTreeSet<(i64, i64)> {
    let mut out = BTreeSet::new();
    for &(ai, aj) in a {
        for &(bi, bj) in b {
            out.insert((ai + bi, aj + bj));
        }
    }
    out
}

/// Expected field of `depth` stacked units: the unit cross folded into
/// itself `depth` times.
pub fn stacked_sampling_locations(cfg: &ShiftConfig, depth: usize) -> BTreeSet<(i64, i64)> {
    let unit = sampling_locations(cfg);
    let mut acc = unit.clone();
    for _ in 1..depth {
        acc = minkowski_sum(&acc, &unit);
    }
    acc
}

/// Render an offset set as a text grid (`#` influencing, `o` reference).
pub fn render_field(set: &BTreeSet<(i64, i64)>) -> String {
    let r = set
        .iter()
        .map(|&(i, j)| i.abs().max(j.abs()))
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    for i in -r..=r {
        for j in -r..=r {
            out.push(if (i, j) == (0, 0) {
                'o'
            } else if set.contains(&(i, j)) {
                '#'
            } else {
                '.'
            });
            if j < r {
                out.push(' ');
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shift::Padding;

    #[test]
    fn rounding_conventions() {
        assert_eq!(round_to_tenth(4_387_289_088, 9), 4.4);
        assert_eq!(round_to_tenth(8_549_087_232, 9), 8.5);
        assert_eq!(round_to_tenth(15_175_229_440, 9), 15.2);
        assert_eq!(round_to_tenth(9_598_376, 6), 9.6);
        assert_eq!(round_to_unit(28_284_040, 6), 28);
        assert_eq!(round_to_unit(49_596_040, 6), 50);
        assert_eq!(round_to_unit(87_754_600, 6), 88);
    }

    #[test]
    fn embedding_closed_form() {
        let t = VariantConfig::tiny();
        let b = formula_params(&t, false);
        assert_eq!(b.row("stage1", "linear-embedding").unwrap().params, 3 * 96 * 16);
        // r = 0 degenerate case: blocks hold only the four shift projections
        let mut v = VariantConfig::tiny();
        v.mlp_ratio = 0;
        let b = formula_params(&v, false);
        assert_eq!(b.row("stage1", "blocks").unwrap().params, 4 * 96 * 96 * 2);
    }

    #[test]
    fn merging_closed_form() {
        let t = VariantConfig::tiny();
        let b = formula_params(&t, false);
        assert_eq!(b.row("stage2", "patch-merging").unwrap().params, 8 * 96 * 96);
        assert_eq!(b.row("stage3", "patch-merging").unwrap().params, 32 * 96 * 96);
        assert_eq!(b.row("stage4", "patch-merging").unwrap().params, 128 * 96 * 96);
    }

    #[test]
    fn block_param_closed_form() {
        let t = VariantConfig::tiny();
        let b = formula_params(&t, false);
        // (4+2r) C^2 per block, r=4, C=96, two blocks in stage 1
        assert_eq!(b.row("stage1", "blocks").unwrap().params, 12 * 96 * 96 * 2);
    }

    #[test]
    fn flops_closed_forms_and_totals() {
        let t = VariantConfig::tiny();
        let f = formula_flops(&t, 224, 224).unwrap();
        let blocks: u64 = (1..=4).map(|i| f.row(&format!("stage{i}"), "blocks").unwrap().macs).sum();
        assert_eq!(blocks, 4_161_798_144);
        let no_head = blocks
            + f.row("stage1", "linear-embedding").unwrap().macs
            + (2..=4).map(|i| f.row(&format!("stage{i}"), "patch-merging").unwrap().macs).sum::<u64>();
        assert_eq!(no_head, 4_349_657_088); // ~4.35G before the head
        assert_eq!(f.total_macs(), 4_387_289_088);
        assert!(formula_flops(&t, 0, 0).is_err());
        assert!(formula_flops(&t, 224, 225).is_err());
        let toy = VariantConfig::toy(4);
        assert!(formula_flops(&toy, 32, 32).unwrap().total_macs() > 0);
    }

    #[test]
    fn complexity_forms() {
        let c = complexity_compare(56, 56, 96, 7);
        assert_eq!(c.axial_shift, 115_605_504);
        assert_eq!(c.wmsa - c.axial_shift, 29_503_488);
        assert!(c.axial_shift <= c.wmsa && c.wmsa <= c.msa);
        // M^2 == hw collapses W-MSA to MSA
        let eq = complexity_compare(8, 8, 16, 8);
        assert_eq!(eq.wmsa, eq.msa);
        // doubling C multiplies the shift complexity by exactly 4
        let c2 = complexity_compare(56, 56, 192, 7);
        assert_eq!(c2.axial_shift, 4 * c.axial_shift);
    }

    #[test]
    fn measured_equals_formula_for_toy() {
        let v = VariantConfig::toy(4);
        let model = Model::<f32>::with_seed(v.clone(), 1).unwrap();
        for include_aux in [false, true] {
            let formula = formula_params(&v, include_aux);
            let measured = measure_model(&model, 32, 32, include_aux).unwrap();
            assert_eq!(measured.total_params(), formula.total_params(), "aux={include_aux}");
        }
        let f = formula_flops(&v, 32, 32).unwrap();
        let m = measure_model(&model, 32, 32, true).unwrap();
        assert_eq!(m.total_macs(), f.total_macs());
        for row in &f.rows {
            let got = m.row(&row.stage, &row.component).unwrap();
            assert_eq!(got.macs, row.macs, "{}/{}", row.stage, row.component);
        }
    }

    #[test]
    fn receptive_field_single_unit_cross() {
        let cfg = ShiftConfig::new(3, 3, 1, Padding::Zero).unwrap();
        let field = unit_receptive_field(&cfg, Connection::Parallel, 1, 9, 7).unwrap();
        assert_eq!(field, sampling_locations(&cfg));
        // dilation widens the arms
        let cfg = ShiftConfig::new(3, 3, 2, Padding::Zero).unwrap();
        let field = unit_receptive_field(&cfg, Connection::Parallel, 1, 9, 8).unwrap();
        assert_eq!(field, sampling_locations(&cfg));
    }

    #[test]
    fn receptive_field_stacks_as_minkowski_sum() {
        let cfg = ShiftConfig::new(3, 3, 1, Padding::Zero).unwrap();
        let field = unit_receptive_field(&cfg, Connection::Parallel, 2, 9, 9).unwrap();
        let expect = stacked_sampling_locations(&cfg, 2);
        assert_eq!(field, expect);
        assert_eq!(expect.len(), 13);
    }

    #[test]
    fn table_and_csv_render() {
        let b = formula_params(&VariantConfig::tiny(), true);
        let table = b.to_table();
        assert!(table.contains("stage1") && table.contains("total"));
        let csv = b.to_csv();
        assert!(csv.starts_with("stage,component,params,macs\n"));
        assert_eq!(csv.lines().count(), b.rows.len() + 2);
    }
}
