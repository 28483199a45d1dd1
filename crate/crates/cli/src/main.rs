use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pico::codec::{decode_image, decode_image_pipelined, encode_image, ModelBundle, Preset, QualityLevel};
use pico::coding::ContextSchedule;
use pico::image_io::{read_image, write_image};
use pico::metrics::{
    bayesian_elo, bd_rate, curve, evaluate_dirs, read_rd_csv, read_votes, SCORE_COLUMNS,
};
use pico::nas::{
    count_in_band, filter_space, rank_candidates, read_records, sample_and_cost, write_records, CandidateRecord,
    ConstantCost, CostModel, KmacsLinearCost, SearchSpace, TableCost,
};
use pico::quant::GoldenFile;

#[derive(Parser)]
#[command(name = "pico", version, about = "Tiled learned image codec and its tooling")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compress a PPM/PNG image.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Quality level, 0 (smallest) to 70.
        #[arg(long)]
        level: usize,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Decompress a `.pico` file.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Decode tiles one after another instead of overlapping stages.
        #[arg(long)]
        sequential: bool,
    },
    /// Write a synthetic weights container.
    Weights {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = PresetArg::Tiny)]
        preset: PresetArg,
        #[arg(long, value_enum, default_value_t = ScheduleArg::Grid2x2)]
        schedule: ScheduleArg,
    },
    /// Record or check golden vectors of the integer scale decoder.
    Golden {
        #[command(subcommand)]
        cmd: GoldenCmd,
    },
    /// Architecture search utilities.
    Nas {
        #[command(subcommand)]
        cmd: NasCmd,
    },
    /// Evaluation metrics and statistics.
    Eval {
        #[command(subcommand)]
        cmd: EvalCmd,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Weights container.
    #[arg(long, conflicts_with = "seed", required_unless_present = "seed")]
    weights: Option<PathBuf>,
    /// Build synthetic weights from this seed instead.
    #[arg(long)]
    seed: Option<u64>,
    /// Context schedule; with `--weights` it must match the container.
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    /// Size of synthetic weights.
    #[arg(long, value_enum, default_value_t = PresetArg::Tiny)]
    preset: PresetArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Grid2x2,
    Checkerboard,
    Channelwise4,
    None,
}

impl From<ScheduleArg> for ContextSchedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Grid2x2 => ContextSchedule::Grid2x2,
            ScheduleArg::Checkerboard => ContextSchedule::Checkerboard,
            ScheduleArg::Channelwise4 => ContextSchedule::Channelwise4,
            ScheduleArg::None => ContextSchedule::None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Tiny,
    Final,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Tiny => Preset::Tiny,
            PresetArg::Final => Preset::Final,
        }
    }
}

#[derive(Subcommand)]
enum GoldenCmd {
    Record {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Spatial size `HxW` of each hyper-latent input.
        #[arg(long, default_value = "4x4", value_parser = parse_dims)]
        size: (usize, usize),
        #[arg(long = "case-seed", default_value_t = 0)]
        case_seed: u64,
    },
    Verify {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        golden: PathBuf,
    },
}

#[derive(Args)]
struct SpaceArg {
    /// `encoder`, `decoder` or a space file.
    #[arg(long, default_value = "decoder")]
    space: String,
}

#[derive(Subcommand)]
enum NasCmd {
    /// List every configuration of a space.
    Enumerate {
        #[command(flatten)]
        space: SpaceArg,
        /// Print only the cardinality.
        #[arg(long)]
        count: bool,
        #[arg(long)]
        limit: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep configurations within a kMACs/pixel band.
    Filter {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long = "kmacs-lo")]
        kmacs_lo: f64,
        #[arg(long = "kmacs-hi")]
        kmacs_hi: f64,
        #[arg(long)]
        count: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample candidates, cost them and keep those near a runtime target.
    Sample {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "target-ms")]
        target_ms: f64,
        #[arg(long, default_value_t = 0.1)]
        tol: f64,
        /// `const:MS`, `linear:A,B` (ms = A * kmacs + B) or `table:PATH`.
        #[arg(long, default_value = "linear:1,0")]
        cost: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top candidates by the `metric` column.
    Rank {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Higher metric is better.
        #[arg(long)]
        descending: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Per-image distortion and tile-seam metrics as CSV.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Tile core size `WxH`.
        #[arg(long, default_value = "504x504", value_parser = parse_dims)]
        grid: (usize, usize),
    },
    /// BD-rate of `--test` against `--anchor`, from RD CSV files.
    Bdrate {
        #[arg(long)]
        anchor: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Metric column to integrate over; defaults to the anchor's first.
        #[arg(long)]
        metric: Option<String>,
    },
    /// Ratings from pairwise votes (`a,b,wins_a,wins_b`).
    Elo {
        #[arg(long)]
        votes: PathBuf,
    },
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected AxB, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((p(a)?, p(b)?))
}

fn load_bundle(m: &ModelArgs) -> Result<ModelBundle> {
    let schedule = m.schedule.map(ContextSchedule::from);
    if let Some(path) = &m.weights {
        let b = ModelBundle::read(path).with_context(|| format!("reading weights {}", path.display()))?;
        if let Some(s) = schedule {
            if s != b.schedule() {
                bail!("--schedule {s} does not match the weights, which use {}", b.schedule());
            }
        }
        return Ok(b);
    }
    let seed = m.seed.expect("clap requires --weights or --seed");
    let schedule = schedule.unwrap_or(ContextSchedule::Grid2x2);
    log::info!("building synthetic weights, seed {seed}, schedule {schedule}");
    Ok(ModelBundle::synthetic(m.preset.into(), schedule, seed)?)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn records_in(path: &Path, space: &SearchSpace) -> Result<Vec<CandidateRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_records(f, space.role)?)
}

fn cost_model(spec: &str) -> Result<Box<dyn CostModel>> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match kind {
        "const" => Box::new(ConstantCost(arg.parse().context("const cost")?)),
        "linear" => {
            let (a, b) = arg.split_once(',').context("linear cost needs A,B")?;
            Box::new(KmacsLinearCost {
                a: a.trim().parse()?,
                b: b.trim().parse()?,
            })
        }
        "table" => Box::new(TableCost::from_csv(File::open(arg).with_context(|| format!("opening {arg}"))?)?),
        _ => bail!("unknown cost model `{spec}`"),
    })
}

fn run_nas(cmd: NasCmd) -> Result<()> {
    match cmd {
        NasCmd::Enumerate {
            space,
            count,
            limit,
            out,
        } => {
            let space = SearchSpace::resolve(&space.space)?;
            if count {
                println!("{}", space.cardinality());
                return Ok(());
            }
            let n = limit.unwrap_or(u64::MAX).min(space.cardinality());
            let recs: Vec<_> = (0..n).map(|i| CandidateRecord::new(i, space.config_at(i))).collect();
            write_records(output(&out)?, &recs)?;
        }
        NasCmd::Filter {
            space,
            kmacs_lo,
            kmacs_hi,
            count,
            out,
        } => {
            let space = SearchSpace::resolve(&space.space)?;
            if count {
                if !(kmacs_lo < kmacs_hi) {
                    bail!("empty kMACs band [{kmacs_lo}, {kmacs_hi}]");
                }
                let kept = count_in_band(&space, kmacs_lo, kmacs_hi);
                println!("{kept} of {}", space.cardinality());
                return Ok(());
            }
            let recs = filter_space(&space, kmacs_lo, kmacs_hi)?;
            eprintln!("kept {} of {}", recs.len(), space.cardinality());
            write_records(output(&out)?, &recs)?;
        }
        NasCmd::Sample {
            space,
            input,
            n,
            seed,
            target_ms,
            tol,
            cost,
            out,
        } => {
            let space = SearchSpace::resolve(&space.space)?;
            let recs = records_in(&input, &space)?;
            let cm = cost_model(&cost)?;
            let s = sample_and_cost(&recs, n, seed, cm.as_ref(), target_ms, tol)?;
            eprintln!(
                "sampled {}, cost model failed on {}, retained {}",
                s.sampled,
                s.dropped,
                s.retained.len()
            );
            write_records(output(&out)?, &s.retained)?;
        }
        NasCmd::Rank {
            space,
            input,
            k,
            descending,
            out,
        } => {
            let space = SearchSpace::resolve(&space.space)?;
            let recs = records_in(&input, &space)?;
            write_records(output(&out)?, &rank_candidates(&recs, k, descending)?)?;
        }
    }
    Ok(())
}

fn run_eval(cmd: EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Metrics { reference, test, grid } => {
            let scores = evaluate_dirs(&reference, &test, grid)?;
            println!("{}", SCORE_COLUMNS.join(","));
            for s in &scores {
                println!("{},{},{},{},{},{}", s.name, s.mse, s.psnr, s.ms_ssim, s.tal, s.boundary);
            }
        }
        EvalCmd::Bdrate { anchor, test, metric } => {
            let a = read_rd_csv(&anchor)?;
            let t = read_rd_csv(&test)?;
            let metric = match metric {
                Some(m) => m,
                None => a.first().context("anchor CSV is empty")?.metric.clone(),
            };
            let codec_of = |rows: &[pico::metrics::RdRow], name: &Path| -> Result<String> {
                let mut codecs: Vec<&str> = rows.iter().filter(|r| r.metric == metric).map(|r| r.codec.as_str()).collect();
                codecs.dedup();
                match codecs.as_slice() {
                    [one] => Ok(one.to_string()),
                    [] => bail!("{} has no `{metric}` rows", name.display()),
                    _ => bail!("{} holds several codecs for `{metric}`", name.display()),
                }
            };
            let (ca, ct) = (codec_of(&a, &anchor)?, codec_of(&t, &test)?);
            let bd = bd_rate(&curve(&a, &ca, &metric), &curve(&t, &ct, &metric))?;
            println!("bd-rate {ct} vs {ca} on {metric}: {bd:.3}%");
        }
        EvalCmd::Elo { votes } => {
            let ratings = bayesian_elo(&read_votes(&votes)?)?;
            let mut rows: Vec<_> = ratings.into_iter().collect();
            rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            println!("contestant,rating");
            for (name, r) in rows {
                println!("{name},{r:.2}");
            }
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Encode {
            input,
            out,
            level,
            model,
        } => {
            let img = read_image(&input).with_context(|| format!("reading {}", input.display()))?;
            let bundle = load_bundle(&model)?;
            let bytes = encode_image(&img, QualityLevel::new(level)?, &bundle)?;
            std::fs::write(&out, &bytes).with_context(|| format!("writing {}", out.display()))?;
            let bpp = bytes.len() as f64 * 8.0 / img.pixels() as f64;
            eprintln!("{} bytes, {bpp:.4} bpp", bytes.len());
        }
        Cmd::Decode {
            input,
            out,
            model,
            sequential,
        } => {
            let bytes = std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let bundle = load_bundle(&model)?;
            let img = if sequential {
                decode_image(&bytes, &bundle)?
            } else {
                decode_image_pipelined(&bytes, &bundle)?
            };
            write_image(&out, &img).with_context(|| format!("writing {}", out.display()))?;
        }
        Cmd::Weights {
            out,
            seed,
            preset,
            schedule,
        } => {
            let b = ModelBundle::synthetic(preset.into(), schedule.into(), seed)?;
            b.write(&out)?;
            eprintln!("wrote {} ({})", out.display(), b.to_store()?.content_hash());
        }
        Cmd::Golden { cmd } => match cmd {
            GoldenCmd::Record {
                model,
                out,
                count,
                size,
                case_seed,
            } => {
                let b = load_bundle(&model)?;
                let g = GoldenFile::record(&b.scale_decoder, count, size.0, size.1, case_seed)?;
                std::fs::write(&out, g.to_text())?;
            }
            GoldenCmd::Verify { model, golden } => {
                let b = load_bundle(&model)?;
                let g = GoldenFile::parse(&std::fs::read_to_string(&golden)?)?;
                let bad = g.verify(&b.scale_decoder)?;
                if !bad.is_empty() {
                    bail!("{} of {} golden cases differ: {bad:?}", bad.len(), g.cases.len());
                }
                println!("{} golden cases match", g.cases.len());
            }
        },
        Cmd::Nas { cmd } => run_nas(cmd)?,
        Cmd::Eval { cmd } => run_eval(cmd)?,
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(Cli::parse())
}
