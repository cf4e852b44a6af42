//! Fixed test fixtures binding desk-scale numbers to files.
//!
//! Layout: `fixtures/<suite>/<case>/{inputs,expected,meta}`. Inputs and
//! expected values are stored in the checkpoint tensor format so one reader
//! serves all; `meta` is a flat `key = value` text file recording the case's
//! origin (oracle, closed-form, constant or identity), the generator seed,
//! and the generating function. Every case regenerates from its recorded
//! seed; verification recomputes each case and fails on any byte difference,
//! then additionally checks the implementation against the stored expecteds.

use crate::analysis;
use crate::backbone::VariantConfig;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::shift::{sampling_locations, shift_oracle, Axis, Padding, ShiftConfig};
use crate::tensor::{idx4, ops, Tensor};
use std::path::Path;

pub struct FixtureCase {
    pub suite: &'static str,
    pub name: &'static str,
    pub inputs: Checkpoint,
    pub expected: Checkpoint,
    pub meta: String,
}

fn meta(suite: &str, name: &str, origin: &str, seed: u64, generator: &str) -> String {
    format!("name = {name}\nsuite = {suite}\norigin = {origin}\nseed = {seed}\ngenerator = {generator}\n")
}

fn rand64(dims: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = Stream::new(seed, crate::rng::labels::DATA);
    let mut t = Tensor::zeros(dims);
    t.fill_uniform(&mut rng, -1.0, 1.0);
    t
}

fn shift_case(name: &'static str, seed: u64, s: usize, d: usize, pad: Padding) -> Result<FixtureCase> {
    let cfg = ShiftConfig::new(s, s, d, pad)?;
    let x = rand64(&[1, 8, 6, 7], seed);
    let mut inputs = Checkpoint::new();
    inputs.push("x", x.clone());
    inputs.push_u64("s", s as u64);
    inputs.push_u64("d", d as u64);
    inputs.push_u64("padding", pad as u64);
    let mut expected = Checkpoint::new();
    expected.push("width", shift_oracle(&x, Axis::Width, &cfg)?);
    expected.push("height", shift_oracle(&x, Axis::Height, &cfg)?);
    let origin = if s == 1 { "identity" } else { "oracle" };
    Ok(FixtureCase {
        suite: "shift_oracle",
        name,
        inputs,
        expected,
        meta: meta("shift_oracle", name, origin, seed, "fixtures::shift_case"),
    })
}

fn matmul_case(seed: u64) -> Result<FixtureCase> {
    let x = rand64(&[2, 5, 3, 3], seed);
    let w = rand64(&[4, 5], seed + 1);
    let b = rand64(&[4], seed + 2);
    // independent five-nested-loop evaluation
    let mut y = Tensor::<f64>::zeros(&[2, 4, 3, 3]);
    for bi in 0..2 {
        for o in 0..4 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut acc = b.data()[o];
                    for c in 0..5 {
                        acc += w.data()[o * 5 + c] * x.data()[idx4(5, 3, 3, bi, c, i, j)];
                    }
                    y.data_mut()[idx4(4, 3, 3, bi, o, i, j)] = acc;
                }
            }
        }
    }
    let mut inputs = Checkpoint::new();
    inputs.push("x", x);
    inputs.push("w", w);
    inputs.push("b", b);
    let mut expected = Checkpoint::new();
    expected.push("y", y);
    Ok(FixtureCase {
        suite: "matmul_oracle",
        name: "loop_oracle",
        inputs,
        expected,
        meta: meta("matmul_oracle", "loop_oracle", "oracle", seed, "fixtures::matmul_case"),
    })
}

fn gelu_case() -> Result<FixtureCase> {
    // standard-normal CDF values at the probe points (error-function table)
    let points = [-10.0, -1.0, 0.0, 1.0, 2.0];
    let phi = [
        7.619853024160527e-24,
        0.15865525393145707,
        0.5,
        0.8413447460685429,
        0.9772498680518208,
    ];
    let x = Tensor::<f64>::from_vec(vec![5], points.to_vec())?;
    let y = Tensor::<f64>::from_vec(
        vec![5],
        points.iter().zip(phi).map(|(x, p)| x * p).collect(),
    )?;
    let mut inputs = Checkpoint::new();
    inputs.push("x", x);
    let mut expected = Checkpoint::new();
    expected.push("y", y);
    Ok(FixtureCase {
        suite: "gelu",
        name: "reference_points",
        inputs,
        expected,
        meta: meta("gelu", "reference_points", "constant", 0, "fixtures::gelu_case"),
    })
}

fn counts_case(name: &'static str) -> Result<FixtureCase> {
    let v = VariantConfig::by_name(name)?;
    let mut expected = Checkpoint::new();
    expected.push_u64("params_weight_only", analysis::formula_params(&v, false).total_params());
    expected.push_u64("params_include_aux", analysis::formula_params(&v, true).total_params());
    expected.push_u64("macs_224", analysis::formula_flops(&v, 224, 224)?.total_macs());
    let mut inputs = Checkpoint::new();
    inputs.push_u64("input_size", 224);
    Ok(FixtureCase {
        suite: "counts",
        name,
        inputs,
        expected,
        meta: meta("counts", name, "closed-form", 0, "fixtures::counts_case"),
    })
}

fn rfield_case(name: &'static str, s: usize, d: usize) -> Result<FixtureCase> {
    let cfg = ShiftConfig::new(s, s, d, Padding::Zero)?;
    let locs = sampling_locations(&cfg);
    let mut flat = Vec::with_capacity(locs.len() * 2);
    for (di, dj) in &locs {
        flat.push(*di as f64);
        flat.push(*dj as f64);
    }
    let mut inputs = Checkpoint::new();
    inputs.push_u64("s", s as u64);
    inputs.push_u64("d", d as u64);
    let mut expected = Checkpoint::new();
    expected.push("offsets", Tensor::<f64>::from_vec(vec![locs.len(), 2], flat)?);
    Ok(FixtureCase {
        suite: "rfield",
        name,
        inputs,
        expected,
        meta: meta("rfield", name, "closed-form", 0, "fixtures::rfield_case"),
    })
}

/// Regenerate every fixture case from its oracles and recorded seeds.
pub fn all_cases() -> Result<Vec<FixtureCase>> {
    Ok(vec![
        shift_case("s3_d1_zero", 101, 3, 1, Padding::Zero)?,
        shift_case("s5_d2_circular", 102, 5, 2, Padding::Circular)?,
        shift_case("s3_d1_reflect", 103, 3, 1, Padding::Reflect)?,
        shift_case("s5_d1_replicate", 104, 5, 1, Padding::Replicate)?,
        shift_case("s1_identity", 105, 1, 1, Padding::Zero)?,
        matmul_case(120)?,
        gelu_case()?,
        counts_case("tiny")?,
        counts_case("small")?,
        counts_case("base")?,
        counts_case("mobile")?,
        rfield_case("s3_d1", 3, 1)?,
        rfield_case("s5_d2", 5, 2)?,
    ])
}

/// Write all fixtures under `root`; returns the case count.
pub fn write_all(root: &Path) -> Result<usize> {
    let cases = all_cases()?;
    for case in &cases {
        let dir = root.join(case.suite).join(case.name);
        std::fs::create_dir_all(&dir)?;
        case.inputs.save(dir.join("inputs"))?;
        case.expected.save(dir.join("expected"))?;
        std::fs::write(dir.join("meta"), &case.meta)?;
    }
    Ok(cases.len())
}

/// Compare stored fixtures against regenerated ones byte for byte, then
/// check the implementation against the stored expected values. Returns one
/// `(case, ok, detail)` row per case.
pub fn verify_all(root: &Path) -> Result<Vec<(String, bool, String)>> {
    let mut rows = Vec::new();
    for case in all_cases()? {
        let dir = root.join(case.suite).join(case.name);
        let label = format!("{}/{}", case.suite, case.name);
        let row = (|| -> Result<(bool, String)> {
            let stored_inputs = std::fs::read(dir.join("inputs"))?;
            let stored_expected = std::fs::read(dir.join("expected"))?;
            let stored_meta = std::fs::read_to_string(dir.join("meta"))?;
            if stored_inputs != case.inputs.to_bytes()? {
                return Ok((false, "inputs differ from regeneration".into()));
            }
            if stored_expected != case.expected.to_bytes()? {
                return Ok((false, "expected values differ from regeneration".into()));
            }
            if stored_meta != case.meta {
                return Ok((false, "meta differs from regeneration".into()));
            }
            check_against_impl(&case)
        })();
        match row {
            Ok((ok, detail)) => rows.push((label, ok, detail)),
            Err(e) => rows.push((label, false, e.to_string())),
        }
    }
    Ok(rows)
}

/// Run the implementation against the stored inputs and compare to the
/// stored expected values.
fn check_against_impl(case: &FixtureCase) -> Result<(bool, String)> {
    match case.suite {
        "shift_oracle" => {
            let x = case.inputs.get("x").expect("input tensor").as_f64();
            let s = case.inputs.get_u64("s")? as usize;
            let d = case.inputs.get_u64("d")? as usize;
            let pad = match case.inputs.get_u64("padding")? {
                0 => Padding::Zero,
                1 => Padding::Circular,
                2 => Padding::Reflect,
                _ => Padding::Replicate,
            };
            let cfg = ShiftConfig::new(s, s, d, pad)?;
            for (axis, key) in [(Axis::Width, "width"), (Axis::Height, "height")] {
                let expect = case.expected.get(key).expect("expected tensor").as_f64();
                let got = crate::shift::shift_eval(&x, axis, &cfg)?;
                if got.data() != expect.data() {
                    return Ok((false, format!("implementation differs from oracle along {key}")));
                }
            }
            Ok((true, "implementation equals oracle exactly".into()))
        }
        "matmul_oracle" => {
            let x = case.inputs.get("x").expect("x").as_f64();
            let w = case.inputs.get("w").expect("w").as_f64();
            let b = case.inputs.get("b").expect("b").as_f64();
            let expect = case.expected.get("y").expect("y").as_f64();
            let got = ops::matmul_channels(&x, &w, &b)?;
            let err = got.max_abs_diff(&expect);
            Ok((err < 1e-12, format!("max abs diff {err:.2e}")))
        }
        "gelu" => {
            let x = case.inputs.get("x").expect("x").as_f64();
            let expect = case.expected.get("y").expect("y").as_f64();
            let got = ops::gelu(&x);
            let err = got.max_abs_diff(&expect);
            Ok((err < 1e-12, format!("max abs diff {err:.2e}")))
        }
        "counts" => {
            let v = VariantConfig::by_name(case.name)?;
            let ok = analysis::formula_params(&v, false).total_params()
                == case.expected.get_u64("params_weight_only")?
                && analysis::formula_params(&v, true).total_params()
                    == case.expected.get_u64("params_include_aux")?
                && analysis::formula_flops(&v, 224, 224)?.total_macs()
                    == case.expected.get_u64("macs_224")?;
            Ok((ok, "closed forms match stored totals".into()))
        }
        "rfield" => {
            let s = case.inputs.get_u64("s")? as usize;
            let d = case.inputs.get_u64("d")? as usize;
            let cfg = ShiftConfig::new(s, s, d, Padding::Zero)?;
            let field = analysis::unit_receptive_field(
                &cfg,
                crate::shift::Connection::Parallel,
                1,
                3 * s,
                9,
            )?;
            let expect = case.expected.get("offsets").expect("offsets").as_f64();
            let mut stored = std::collections::BTreeSet::new();
            for pair in expect.data().chunks(2) {
                stored.insert((pair[0] as i64, pair[1] as i64));
            }
            Ok((field == stored, format!("probe found {} positions", field.len())))
        }
        other => Err(Error::invalid("fixtures", format!("unknown suite {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_regenerate_deterministically() {
        let a = all_cases().unwrap();
        let b = all_cases().unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.inputs.to_bytes().unwrap(), y.inputs.to_bytes().unwrap(), "{}", x.name);
            assert_eq!(x.expected.to_bytes().unwrap(), y.expected.to_bytes().unwrap(), "{}", x.name);
        }
    }

    #[test]
    fn write_then_verify_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let n = write_all(dir.path()).unwrap();
        assert!(n >= 10);
        let rows = verify_all(dir.path()).unwrap();
        assert_eq!(rows.len(), n);
        for (case, ok, detail) in rows {
            assert!(ok, "{case}: {detail}");
        }
    }

    #[test]
    fn tampering_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_all(dir.path()).unwrap();
        // corrupt one expected file (valid checkpoint, wrong content)
        let path = dir.path().join("gelu/reference_points/expected");
        let mut ck = Checkpoint::load(&path).unwrap();
        if let crate::checkpoint::AnyTensor::F64(t) = &mut ck.entries[0].1 {
            t.data_mut()[1] += 0.5;
        }
        ck.save(&path).unwrap();
        let rows = verify_all(dir.path()).unwrap();
        let bad: Vec<_> = rows.iter().filter(|(_, ok, _)| !ok).collect();
        assert_eq!(bad.len(), 1);
        assert!(bad[0].0.contains("gelu"));
    }
}
