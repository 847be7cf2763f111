use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};
use ptta_core::backbone::save_checkpoint;
use ptta_core::harness::{self, read_key_value_file, RunConfig, KEYS};
use ptta_core::numerics::Matrix;
use ptta_core::output_adaptation::{refine, LambdaRule, RefineConfig};
use ptta_core::streamgen::{cd_metric, id_metric, write_manifest};
use ptta_core::{Error, Result};

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn config_args() -> Vec<Arg> {
    let mut args = vec![Arg::new("config")
        .long("config")
        .value_name("FILE")
        .value_parser(clap::value_parser!(PathBuf))
        .help("key=value file; flags given on the command line override it")];
    for &(key, default) in KEYS {
        let shown = if default.is_empty() { "unset" } else { default };
        let mut arg = Arg::new(key).long(flag_name(key)).value_name("VALUE").help(format!("[default: {shown}]"));
        if key.contains('_') {
            arg = arg.alias(key);
        }
        args.push(arg);
    }
    args
}

fn out_arg(help: &'static str) -> Arg {
    Arg::new("out").long("out").value_name("PATH").required(true).value_parser(clap::value_parser!(PathBuf)).help(help)
}

fn cli() -> Command {
    Command::new("ptta")
        .about("Test-time adaptation under continual covariate and label shift")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("pretrain")
                .about("Train the source model and save a checkpoint")
                .args(config_args())
                .arg(out_arg("checkpoint file to write")),
        )
        .subcommand(
            Command::new("gen-stream")
                .about("Generate a test stream from the pool split and save its manifest")
                .args(config_args())
                .arg(out_arg("manifest file to write")),
        )
        .subcommand(Command::new("run").about("Run a method over a stream and report its errors").args(config_args()))
        .subcommand(
            Command::new("refine-file")
                .about("Refine a batch of predicted probabilities using its features")
                .args(config_args())
                .arg(
                    Arg::new("predictions")
                        .long("predictions")
                        .value_name("CSV")
                        .required(true)
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("one row of class probabilities per sample"),
                )
                .arg(
                    Arg::new("features")
                        .long("features")
                        .value_name("CSV")
                        .required(true)
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("one feature row per sample, same order"),
                )
                .arg(
                    Arg::new("lambda")
                        .long("lambda")
                        .value_name("adaptive|VALUE")
                        .default_value("adaptive")
                        .help("graph weight: adaptive, or a fixed value in [0, 1)"),
                )
                .arg(out_arg("CSV of refined classes and probabilities")),
        )
}

fn run_config(matches: &ArgMatches) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = matches.get_one::<PathBuf>("config") {
        config.apply(&read_key_value_file(path)?)?;
    }
    for &(key, _) in KEYS {
        if let Some(raw) = matches.get_one::<String>(key) {
            config.set(key, raw)?;
        }
    }
    Ok(config)
}

fn read_matrix(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: n + 1,
                    message: format!("{}: not a number: {cell:?}", path.display()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_owned()));
    }
    Matrix::from_rows(&rows)
}

fn lambda_rule(raw: &str) -> Result<LambdaRule> {
    if raw == "adaptive" {
        return Ok(LambdaRule::Adaptive);
    }
    match raw.parse::<f64>() {
        Ok(v) if (0.0..1.0).contains(&v) => Ok(LambdaRule::Fixed(v)),
        _ => Err(Error::Config(format!("lambda: expected adaptive or a value in [0, 1), got {raw:?}"))),
    }
}

fn pretrain(matches: &ArgMatches) -> Result<()> {
    let config = run_config(matches)?;
    let out = matches.get_one::<PathBuf>("out").expect("required");
    let (model, acc) = harness::pretrain(&config)?;
    save_checkpoint(&model, out)?;
    println!("pool_accuracy={acc}");
    println!("checkpoint={}", out.display());
    Ok(())
}

fn gen_stream(matches: &ArgMatches) -> Result<()> {
    let config = run_config(matches)?;
    let out = matches.get_one::<PathBuf>("out").expect("required");
    let (_, pool) = config.data.load()?;
    let stream = config.stream.generate(&pool)?;
    write_manifest(&stream.manifest, out)?;
    println!("batches={}", stream.batches.len());
    println!("id={}", id_metric(&stream.period_dists)?);
    if stream.period_dists.len() >= 2 {
        println!("cd={}", cd_metric(&stream.period_dists)?);
    }
    println!("manifest={}", out.display());
    Ok(())
}

fn run(matches: &ArgMatches) -> Result<()> {
    let config = run_config(matches)?;
    let result = harness::run(&config)?;
    println!("method={}", result.method);
    println!("steps={}", result.steps.len());
    println!("final_error={}", result.final_error);
    println!("id={}", result.id);
    println!("cd={}", result.cd);
    println!("mean_zeta={}", result.mean_zeta);
    if let Some(dir) = &config.output {
        println!("output={}", dir.display());
    }
    Ok(())
}

fn refine_file(matches: &ArgMatches) -> Result<()> {
    let config = run_config(matches)?;
    let p = read_matrix(matches.get_one::<PathBuf>("predictions").expect("required"))?;
    let f = read_matrix(matches.get_one::<PathBuf>("features").expect("required"))?;
    let lambda = lambda_rule(matches.get_one::<String>("lambda").expect("has default"))?;
    let result = refine(&p, &f, &RefineConfig { affinity: config.affinity(), lambda })?;

    let mut text = String::from("class");
    for c in 0..p.cols() {
        let _ = write!(text, ",z{c}");
    }
    text.push('\n');
    for (row, class) in result.z_final.row_iter().zip(result.classes()) {
        let _ = write!(text, "{class}");
        for v in row {
            let _ = write!(text, ",{v:e}");
        }
        text.push('\n');
    }
    let out = matches.get_one::<PathBuf>("out").expect("required");
    fs::write(out, text)?;
    println!("zeta={}", result.zeta);
    println!("lambda={}", result.lambda);
    println!("output={}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let outcome = match matches.subcommand() {
        Some(("pretrain", m)) => pretrain(m),
        Some(("gen-stream", m)) => gen_stream(m),
        Some(("run", m)) => run(m),
        Some(("refine-file", m)) => refine_file(m),
        _ => unreachable!("subcommand required"),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
