use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quadsc::channel::ChannelModel;
use quadsc::config::{default_rate_set, SystemConfig};
use quadsc::corpus::{generate_corpus, load_corpus, write_corpus};
use quadsc::lic::lic_decode;
use quadsc::pipeline::{
    report_bd, run_baseline_capacity, run_deepsc, run_lic, sweep, LinkSettings, SweepAxis,
    SweepReport,
};
use quadsc::{Error, ImagePlane, Result};

#[derive(Parser)]
#[command(
    name = "quadsc",
    version,
    about = "Quadtree partition coding and semantic transmission simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode and decode images, writing a report and (with --dump) bitstreams.
    LicEncode {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Decode one bitstream to a PPM image.
    LicDecode {
        stream: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Send images through the analog symbol path.
    DeepscRun {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        link: LinkArgs,
    },
    /// Repeat a run over values of one parameter.
    Sweep {
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values; channel specs may use `;` as separator.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        link: LinkArgs,
    },
    /// LIC over an ideal capacity-achieving link (IDEALIZED reference).
    Baseline {
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        snr: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// BD metric of sweep B against sweep A.
    ReportBd {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the procedural test corpus as PPM files.
    GenCorpus {
        #[arg(long, default_value = "corpus")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// PPM files or directories of PPM files; the built-in corpus when empty.
    inputs: Vec<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for intermediate artifacts.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    rate_set: Option<Vec<usize>>,
    #[arg(long)]
    sigma_min: Option<f64>,
    #[arg(long)]
    side_link_eff: Option<f64>,
    #[arg(long)]
    quant_step: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LinkArgs {
    /// `awgn`, `rayleigh`, `gauss_markov`, `gilbert_elliott` or `blockage`,
    /// optionally with `:key=value,...` parameters.
    #[arg(long, default_value = "awgn")]
    channel: ChannelModel,
    /// SNR in dB, or `inf` for a noiseless link.
    #[arg(long, default_value = "10", allow_negative_numbers = true)]
    snr: String,
    /// CSI error in dB, or `perfect`.
    #[arg(long, default_value = "perfect", allow_negative_numbers = true)]
    nmse: String,
}

impl ConfigArgs {
    fn build(&self) -> Result<SystemConfig> {
        let mut config = match &self.config {
            Some(path) => SystemConfig::load(path)?,
            None => SystemConfig::default(),
        };
        if let Some(b) = self.block_size {
            config = SystemConfig {
                eta: config.eta,
                sigma_min: config.sigma_min,
                side_link_eff: config.side_link_eff,
                quant_step: config.quant_step,
                master_seed: config.master_seed,
                context: config.context,
                ..SystemConfig::for_block_size(b)
            };
        }
        if let Some(c) = self.channels {
            config.channels_cy = c;
            config.rate_set = default_rate_set(c);
        }
        if let Some(v) = self.eta {
            config.eta = v;
        }
        if let Some(v) = &self.rate_set {
            config.rate_set = v.clone();
        }
        if let Some(v) = self.sigma_min {
            config.sigma_min = v;
        }
        if let Some(v) = self.side_link_eff {
            config.side_link_eff = v;
        }
        if let Some(v) = self.quant_step {
            config.quant_step = v;
        }
        if let Some(v) = self.seed {
            config.master_seed = v;
        }
        config.validated()
    }
}

impl LinkArgs {
    fn build(&self) -> Result<LinkSettings> {
        let snr = match self.snr.as_str() {
            "inf" => None,
            s => Some(
                s.parse()
                    .map_err(|_| Error::Param(format!("bad SNR {s:?}")))?,
            ),
        };
        let nmse = match self.nmse.as_str() {
            "perfect" => None,
            s => Some(
                s.parse()
                    .map_err(|_| Error::Param(format!("bad NMSE {s:?}")))?,
            ),
        };
        Ok(LinkSettings {
            channel: self.channel.clone(),
            snr_db: snr,
            nmse_db: nmse,
        })
    }
}

fn load_inputs(inputs: &[PathBuf]) -> Result<Vec<(String, ImagePlane)>> {
    if inputs.is_empty() {
        return Ok(generate_corpus());
    }
    let mut images = Vec::new();
    for path in inputs {
        if path.is_dir() {
            images.extend(load_corpus(path)?);
        } else {
            let id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            images.push((id, ImagePlane::read(path)?));
        }
    }
    Ok(images)
}

fn emit(out: Option<&Path>, json: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, format!("{json}\n"))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::LicEncode { run } => {
            let report = run_lic(
                &load_inputs(&run.inputs)?,
                &run.config.build()?,
                run.dump.as_deref(),
            )?;
            emit(run.out.as_deref(), &report.to_json())?;
            Ok(report.passed())
        }
        Command::LicDecode {
            stream,
            out,
            config,
        } => {
            let decoded = lic_decode(&std::fs::read(stream)?, &config.build()?)?;
            decoded.image.save(out)?;
            Ok(true)
        }
        Command::DeepscRun { run, link } => {
            let report = run_deepsc(
                &load_inputs(&run.inputs)?,
                &run.config.build()?,
                &link.build()?,
                run.dump.as_deref(),
            )?;
            emit(run.out.as_deref(), &report.to_json())?;
            Ok(report.passed())
        }
        Command::Sweep {
            axis,
            values,
            run,
            link,
        } => {
            let sep = if axis == SweepAxis::Channel { ';' } else { ',' };
            let values: Vec<String> = values.split(sep).map(|v| v.trim().to_string()).collect();
            let report = sweep(
                axis,
                &values,
                &load_inputs(&run.inputs)?,
                &run.config.build()?,
                &link.build()?,
            )?;
            emit(run.out.as_deref(), &report.to_json())?;
            Ok(report.passed())
        }
        Command::Baseline { snr, run } => {
            let report =
                run_baseline_capacity(&load_inputs(&run.inputs)?, &run.config.build()?, snr)?;
            emit(run.out.as_deref(), &report.to_json())?;
            Ok(report.passed())
        }
        Command::ReportBd { a, b, out } => {
            let read = |p: &Path| -> Result<SweepReport> {
                Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
            };
            let bd = report_bd(&read(&a)?, &read(&b)?)?;
            let json = serde_json::json!({ "version": quadsc::pipeline::REPORT_VERSION, "bd_percent": bd });
            emit(out.as_deref(), &serde_json::to_string_pretty(&json)?)?;
            Ok(true)
        }
        Command::GenCorpus { out } => {
            for path in write_corpus(&out)? {
                println!("{}", path.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("quadsc: some per-image checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("quadsc: {e}");
            ExitCode::from(2)
        }
    }
}
