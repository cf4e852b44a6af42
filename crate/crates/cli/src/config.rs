//! Flat `key = value` run configuration: UTF-8, one pair per line, `#`
//! comments. Unknown keys are an error, not a warning. Command-line
//! `--set key=value` pairs override file values.

use asmlp_core::backbone::{CoreKind, VariantConfig};
use asmlp_core::shift::{Connection, Padding, ShiftConfig};
use asmlp_core::train::{Precision, TrainConfig};
use asmlp_core::Error;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub precision: Precision,
    pub timing: bool,
    pub out_checkpoint: PathBuf,
    pub out_metrics: PathBuf,
}

fn parse_pairs(text: &str, source: &str) -> Result<BTreeMap<String, String>, Error> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{source}:{}: expected 'key = value', got '{raw}'",
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

pub fn load_run_config(path: &Path, overrides: &[String]) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = parse_pairs(&text, &path.display().to_string())?;
    for o in overrides {
        let Some((key, value)) = o.split_once('=') else {
            return Err(Error::Config(format!("override '{o}' is not KEY=VALUE")));
        };
        pairs.insert(key.trim().to_string(), value.trim().to_string());
    }
    build(pairs)
}

fn build(mut pairs: BTreeMap<String, String>) -> Result<RunConfig, Error> {
    let mut take = |key: &str| pairs.remove(key);
    macro_rules! parse_as {
        ($key:expr, $default:expr, $ty:ty) => {
            match take($key) {
                None => $default,
                Some(v) => v
                    .parse::<$ty>()
                    .map_err(|_| Error::Config(format!("bad value '{v}' for key '{}'", $key)))?,
            }
        };
    }

    let variant_name = take("variant").unwrap_or_else(|| "toy".to_string());
    let mut variant = VariantConfig::by_name(&variant_name)?;
    variant.channels = parse_as!("channels", variant.channels, usize);
    variant.patch_size = parse_as!("patch_size", variant.patch_size, usize);
    variant.mlp_ratio = parse_as!("mlp_ratio", variant.mlp_ratio, usize);
    variant.num_classes = parse_as!("classes", variant.num_classes, usize);
    variant.drop_path_max = parse_as!("drop_path_max", variant.drop_path_max, f64);
    if let Some(blocks) = take("blocks") {
        let parts: Result<Vec<usize>, _> = blocks.split(',').map(|p| p.trim().parse()).collect();
        let parts = parts.map_err(|_| Error::Config(format!("bad blocks list '{blocks}'")))?;
        if parts.len() != 4 {
            return Err(Error::Config("blocks must list four stage counts".into()));
        }
        variant.blocks = [parts[0], parts[1], parts[2], parts[3]];
    }
    let s_h = parse_as!("shift_h", variant.shift.s_h, usize);
    let s_v = parse_as!("shift_v", variant.shift.s_v, usize);
    let dilation = parse_as!("dilation", variant.shift.dilation, usize);
    let padding = match take("padding") {
        None => variant.shift.padding,
        Some(v) => Padding::parse(&v)?,
    };
    variant.shift = ShiftConfig::new(s_h, s_v, dilation, padding)?;
    variant.connection = match take("connection").as_deref() {
        None | Some("parallel") => Connection::Parallel,
        Some("serial") => Connection::Serial,
        Some(other) => return Err(Error::Config(format!("bad connection '{other}'"))),
    };
    variant.core = match take("core").as_deref() {
        None | Some("axial-shift") => CoreKind::AxialShift,
        Some("global-mlp") => CoreKind::GlobalMlp,
        Some("axial-mlp") => CoreKind::AxialMlp,
        Some("window-mlp") => CoreKind::WindowMlp,
        Some(other) => return Err(Error::Config(format!("bad core '{other}'"))),
    };

    let mut train = TrainConfig::toy(parse_as!("seed", 7, u64));
    train.variant = variant;
    train.epochs = parse_as!("epochs", train.epochs, usize);
    train.warmup_epochs = parse_as!("warmup_epochs", train.warmup_epochs, usize);
    train.base_lr = parse_as!("base_lr", train.base_lr, f64);
    train.min_lr = parse_as!("min_lr", train.min_lr, f64);
    train.weight_decay = parse_as!("weight_decay", train.weight_decay, f64);
    train.batch_size = parse_as!("batch_size", train.batch_size, usize);
    train.smoothing = parse_as!("smoothing", train.smoothing, f64);
    train.hflip = parse_as!("hflip", train.hflip, bool);
    train.dataset.classes = train.variant.num_classes;
    train.dataset.samples = parse_as!("data_samples", train.dataset.samples, usize);
    train.dataset.size = parse_as!("data_size", train.dataset.size, usize);
    train.dataset.seed = parse_as!("data_seed", train.dataset.seed, u64);
    train.dataset.noise = parse_as!("data_noise", train.dataset.noise, f64);
    train.dataset.separation = parse_as!("data_separation", train.dataset.separation, usize);

    let precision = match take("precision") {
        None => Precision::F32,
        Some(v) => Precision::parse(&v)?,
    };
    train.precision = precision;
    let timing = parse_as!("timing", true, bool);
    let out_checkpoint = PathBuf::from(take("out_checkpoint").unwrap_or_else(|| "train.ckpt".into()));
    let out_metrics = PathBuf::from(take("out_metrics").unwrap_or_else(|| "metrics.csv".into()));

    if let Some((key, _)) = pairs.iter().next() {
        return Err(Error::Config(format!("unknown config key '{key}'")));
    }
    train.validate()?;
    Ok(RunConfig { train, precision, timing, out_checkpoint, out_metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_from(text: &str) -> Result<RunConfig, Error> {
        build(parse_pairs(text, "test")?)
    }

    #[test]
    fn defaults_and_overrides() {
        let run = cfg_from("").unwrap();
        assert_eq!(run.train.epochs, 30);
        assert_eq!(run.train.variant.channels, 16);
        let run = cfg_from("epochs = 5\nwarmup_epochs = 1\nseed = 3 # comment\n").unwrap();
        assert_eq!(run.train.epochs, 5);
        assert_eq!(run.train.seed, 3);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = cfg_from("epochz = 5\n");
        assert!(matches!(err, Err(Error::Config(_))), "{err:?}");
    }

    #[test]
    fn malformed_lines_are_errors() {
        assert!(cfg_from("just a line\n").is_err());
        assert!(cfg_from("epochs : 5\n").is_err());
    }

    #[test]
    fn shift_and_baseline_keys() {
        let run = cfg_from("shift_h = 3\nshift_v = 1\npadding = reflect\nconnection = serial\n").unwrap();
        assert_eq!(run.train.variant.shift.s_h, 3);
        assert_eq!(run.train.variant.shift.s_v, 1);
        assert_eq!(run.train.variant.shift.padding, Padding::Reflect);
        assert_eq!(run.train.variant.connection, Connection::Serial);
        assert!(cfg_from("shift_h = 4\n").is_err(), "even size rejected");
        let run = cfg_from("core = global-mlp\n").unwrap();
        assert_eq!(run.train.variant.core, CoreKind::GlobalMlp);
    }
}
