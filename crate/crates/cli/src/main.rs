//! Command-line surface: describe, verify, train, bench, probe.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error.

mod config;

use asmlp_core::analysis;
use asmlp_core::backbone::{Model, VariantConfig};
use asmlp_core::checkpoint::Checkpoint;
use asmlp_core::shift::{Connection, Padding, ShiftConfig};
use asmlp_core::train::{self, Precision};
use asmlp_core::verify;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "asmlp", about = "Axial-shift MLP backbone: accounting, verification, training and probing", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the per-stage parameter/MAC breakdown for a variant.
    Describe(DescribeArgs),
    /// Run a property suite and report per-check results.
    Verify(VerifyArgs),
    /// Train on the synthetic dataset per a key=value config file.
    Train(TrainArgs),
    /// Time an operation and report its instrumented MAC count.
    Bench(BenchArgs),
    /// Write the receptive-field grid of a unit stack.
    Probe(ProbeArgs),
}

#[derive(Args)]
struct DescribeArgs {
    /// tiny | small | base | mobile | toy
    #[arg(long)]
    variant: String,
    #[arg(long, default_value_t = 224)]
    input_size: usize,
    /// Count biases, norm affines and head auxiliaries too.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    include_aux: bool,
    /// Emit comma-separated records instead of the aligned table.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// oracle | gradcheck | counts | rfield | all
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override config keys, e.g. --set epochs=10 --set seed=3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct BenchArgs {
    /// axial-shift | unit | block
    #[arg(long)]
    op: String,
    /// Shape as BxCxHxW.
    #[arg(long, default_value = "1x96x56x56")]
    shape: String,
    #[arg(long, default_value_t = 30)]
    repeats: usize,
}

#[derive(Args)]
struct ProbeArgs {
    /// Model checkpoint whose shift configuration is probed.
    #[arg(long, conflicts_with = "random_init")]
    checkpoint: Option<PathBuf>,
    /// Probe freshly initialized units instead of a checkpoint.
    #[arg(long)]
    random_init: bool,
    /// Stacked unit count.
    #[arg(long, default_value_t = 1)]
    depth: usize,
    /// Shift size for --random-init units.
    #[arg(long, default_value_t = 5)]
    s: usize,
    /// Dilation for --random-init units.
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Channels for --random-init units (defaults to 3*s).
    #[arg(long)]
    channels: Option<usize>,
    /// Write the grid to this file as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Describe(a) => cmd_describe(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Train(a) => cmd_train(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Probe(a) => cmd_probe(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type CmdResult = Result<ExitCode, asmlp_core::Error>;

fn cmd_describe(a: DescribeArgs) -> CmdResult {
    let v = VariantConfig::by_name(&a.variant)?;
    let params = analysis::formula_params(&v, a.include_aux);
    let flops = analysis::formula_flops(&v, a.input_size, a.input_size)?;
    // merge the two accountings into one breakdown
    let mut merged = params.clone();
    for row in &mut merged.rows {
        row.macs = flops.row(&row.stage, &row.component).map(|r| r.macs).unwrap_or(0);
    }
    if a.csv {
        print!("{}", merged.to_csv());
    } else {
        println!(
            "{} @ {}x{} ({} parameters counted)",
            v.name,
            a.input_size,
            a.input_size,
            if a.include_aux { "all" } else { "projection weights only" }
        );
        print!("{}", merged.to_table());
        // match the published precision: whole millions from 10M up,
        // one decimal below that
        let params = merged.total_params();
        let params_m = if params >= 10_000_000 {
            format!("{}M", analysis::round_to_unit(params, 6))
        } else {
            format!("{}M", analysis::round_to_tenth(params, 6))
        };
        println!(
            "~{} params, ~{}G MACs",
            params_m,
            analysis::round_to_tenth(merged.total_macs(), 9),
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let reports = verify::run_suite(&a.suite, a.seed)?;
    let mut all_ok = true;
    for report in &reports {
        print!("{}", report.render());
        all_ok &= report.all_passed();
    }
    if all_ok {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let run = config::load_run_config(&a.config, &a.overrides)?;
    match run.precision {
        Precision::F32 => run_train::<f32>(&run, a.resume.as_deref()),
        Precision::F64 => run_train::<f64>(&run, a.resume.as_deref()),
    }
}

fn run_train<T: asmlp_core::Real>(run: &config::RunConfig, resume: Option<&std::path::Path>) -> CmdResult {
    let outcome: train::TrainOutcome<T> = match resume {
        None => train::train(&run.train)?,
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            train::resume(&run.train, &ck)?
        }
    };
    let mut records = outcome.metrics.clone();
    if !run.timing {
        for r in &mut records {
            r.wallclock_seconds = 0.0;
        }
    }
    for r in &records {
        println!(
            "epoch {:>3}  lr {:.6}  loss {:.6}  acc {:.4}",
            r.epoch, r.lr, r.train_loss, r.train_acc
        );
    }
    std::fs::write(&run.out_metrics, train::metrics_to_csv(&records))?;
    outcome.checkpoint.save(&run.out_checkpoint)?;
    let last = outcome.metrics.last().expect("at least one epoch ran");
    println!("final train accuracy {:.4}", last.train_acc);
    println!("metrics -> {}", run.out_metrics.display());
    println!("checkpoint -> {}", run.out_checkpoint.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_shape(s: &str) -> Result<Vec<usize>, asmlp_core::Error> {
    let dims: Result<Vec<usize>, _> = s.split('x').map(str::parse).collect();
    let dims = dims.map_err(|_| asmlp_core::Error::Config(format!("bad shape '{s}', expected BxCxHxW")))?;
    if dims.len() != 4 || dims.iter().any(|&d| d == 0) {
        return Err(asmlp_core::Error::Config(format!("bad shape '{s}', expected four positive dims")));
    }
    Ok(dims)
}

fn time_op<F: FnMut() -> Result<u64, asmlp_core::Error>>(
    repeats: usize,
    mut f: F,
) -> Result<(f64, f64, u64), asmlp_core::Error> {
    let mut times = Vec::with_capacity(repeats);
    let mut macs = 0;
    for i in 0..repeats + 2 {
        let t0 = std::time::Instant::now();
        macs = f()?;
        if i >= 2 {
            times.push(t0.elapsed().as_secs_f64());
        }
    }
    times.sort_by(f64::total_cmp);
    Ok((times[times.len() / 2], times[0], macs))
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let dims = parse_shape(&a.shape)?;
    let (b, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    let mut rng = asmlp_core::rng::Stream::new(3, 0x77);
    let mut x = asmlp_core::Tensor::<f32>::zeros(&dims);
    x.fill_uniform(&mut rng, -1.0, 1.0);

    match a.op.as_str() {
        "axial-shift" => {
            // the shift-size insensitivity probe: zero MACs, flat time
            let (samples, cv) = verify::shift_cost_probe(&dims, a.repeats, 1, Padding::Zero)?;
            println!("shape {}x{}x{}x{} ({} repeats per size)", b, c, h, w, a.repeats);
            println!("{:>5} {:>10} {:>14} {:>14}", "s", "macs", "median_s", "min_s");
            for s in &samples {
                println!(
                    "{:>5} {:>10} {:>14.6} {:>14.6}",
                    s.shift_size, s.macs, s.median_seconds, s.min_seconds
                );
            }
            println!("coefficient of variation of medians: {cv:.4}");
        }
        "unit" => {
            let mut store = asmlp_core::params::ParamStore::<f32>::new();
            let unit = asmlp_core::shift::AxialShiftUnitRef::init(
                &mut store,
                "unit",
                c,
                ShiftConfig::default(),
                Connection::Parallel,
                &mut rng,
            );
            let mut run = |seq: bool| -> Result<(f64, f64, u64), asmlp_core::Error> {
                asmlp_core::par::set_force_sequential(seq);
                let out = time_op(a.repeats, || {
                    let mut tape = asmlp_core::Tape::eval();
                    let bind = store.bind(&mut tape);
                    let xv = tape.leaf(&x);
                    unit.forward(&mut tape, &bind, xv)?;
                    Ok(tape.macs())
                });
                asmlp_core::par::set_force_sequential(false);
                out
            };
            report_both("unit forward", &mut run)?;
        }
        "block" => {
            let mut store = asmlp_core::params::ParamStore::<f32>::new();
            let block = asmlp_core::shift::BlockRef::init(
                &mut store,
                "blk",
                c,
                ShiftConfig::default(),
                Connection::Parallel,
                4,
                0.0,
                &mut rng,
            );
            let mut run = |seq: bool| -> Result<(f64, f64, u64), asmlp_core::Error> {
                asmlp_core::par::set_force_sequential(seq);
                let out = time_op(a.repeats, || {
                    let mut tape = asmlp_core::Tape::eval();
                    let bind = store.bind(&mut tape);
                    let xv = tape.leaf(&x);
                    block.forward(&mut tape, &bind, xv, &mut asmlp_core::shift::ForwardMode::Eval)?;
                    Ok(tape.macs())
                });
                asmlp_core::par::set_force_sequential(false);
                out
            };
            report_both("block forward", &mut run)?;
        }
        other => {
            return Err(asmlp_core::Error::Config(format!(
                "unknown op '{other}' (expected axial-shift | unit | block)"
            )))
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn report_both<F>(label: &str, run: &mut F) -> Result<(), asmlp_core::Error>
where
    F: FnMut(bool) -> Result<(f64, f64, u64), asmlp_core::Error>,
{
    let (med_par, min_par, macs) = run(false)?;
    println!("{label}: {macs} MACs");
    if asmlp_core::par::parallel_enabled() {
        let (med_seq, min_seq, _) = run(true)?;
        println!("  parallel   median {med_par:.6}s  min {min_par:.6}s");
        println!("  sequential median {med_seq:.6}s  min {min_seq:.6}s");
    } else {
        println!("  sequential median {med_par:.6}s  min {min_par:.6}s");
    }
    Ok(())
}

fn cmd_probe(a: ProbeArgs) -> CmdResult {
    if a.depth == 0 {
        return Err(asmlp_core::Error::Config("depth must be >= 1".into()));
    }
    let (cfg, channels) = if let Some(path) = &a.checkpoint {
        let ck = Checkpoint::load(path)?;
        let model: Model<f32> = train::model_from_checkpoint(&ck)?;
        (model.cfg.shift, model.cfg.channels)
    } else if a.random_init {
        (
            ShiftConfig::new(a.s, a.s, a.d, Padding::Zero)?,
            a.channels.unwrap_or(3 * a.s),
        )
    } else {
        return Err(asmlp_core::Error::Config(
            "provide --checkpoint or --random-init".into(),
        ));
    };
    let field = analysis::unit_receptive_field(&cfg, Connection::Parallel, a.depth, channels, a.seed)?;
    let grid = analysis::render_field(&field);
    println!(
        "receptive field of {} unit(s), s=({}, {}), d={}: {} positions",
        a.depth,
        cfg.s_h,
        cfg.s_v,
        cfg.dilation,
        field.len()
    );
    print!("{grid}");
    if let Some(out) = &a.out {
        std::fs::write(out, &grid)?;
        println!("grid -> {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}
