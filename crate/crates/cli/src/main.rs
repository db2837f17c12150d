use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bmorse::plmap::svg_polyline;
use bmorse::{
    build_g, dini_scan, morse_report, Construction, KMode, MeasureReport, PLMap, Rational,
    ScanOptions, ScanSide, StaircaseTree,
};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

/// Exact Besicovitch-Morse construction: build, verify, sample, probe, plot.
#[derive(Parser, Debug)]
#[command(name = "bmorse", version)]
struct Cli {
    #[command(flatten)]
    config: Config,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Config {
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    sigma: u32,
    #[arg(long, global = true, default_value = "exact", value_parser = parse_kmode)]
    kmode: KMode,
    #[arg(long, global = true, default_value_t = 8, value_parser = clap::value_parser!(u32).range(1..))]
    depth: u32,
    #[arg(long, global = true, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    cutoff: u32,
    #[arg(long, global = true, default_value_t = 6, value_parser = clap::value_parser!(u32).range(1..))]
    max_gen: u32,
    /// Enclosure width bound, as `num/den`.
    #[arg(long, global = true, default_value = "1/1048576", value_parser = parse_positive)]
    eps: Rational,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dump the staircase levels and expansion factors as JSON.
    BuildStaircase {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print an enclosure `lo hi` of f(x).
    Eval {
        #[arg(long, value_parser = parse_unit)]
        x: Rational,
    },
    /// Evaluate f on the grid i/(count-1) and write `x,lo,hi` CSV.
    Sample {
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        count: u64,
        /// Append decimal renderings of each column.
        #[arg(long)]
        decimal: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the approximant g_n with segment levels up to --cutoff.
    BuildG {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        gen: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the slope-sum criterion; exits 1 when the map is not preserving.
    VerifyMeasure {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-sided quotient bounds at x across scales, as CSV.
    Dini {
        #[arg(long, value_parser = parse_unit)]
        x: Rational,
        #[arg(long, value_parser = parse_side)]
        side: ScanSide,
        /// Comma-separated decreasing scales.
        #[arg(long, value_delimiter = ',', value_parser = parse_positive, default_value = DEFAULT_SCALES)]
        scales: Vec<Rational>,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Flag sides of each point whose finest-scale quotients exceed --threshold.
    Morse {
        #[arg(long, value_delimiter = ',', value_parser = parse_unit, required = true)]
        points: Vec<Rational>,
        #[arg(long, value_delimiter = ',', value_parser = parse_positive, default_value = DEFAULT_SCALES)]
        scales: Vec<Rational>,
        #[arg(long, default_value = "100", value_parser = parse_positive)]
        threshold: Rational,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a map JSON or a samples CSV as SVG.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

const DEFAULT_SCALES: &str = "1/4,1/16,1/64,1/256,1/1024,1/4096,1/16384,1/65536,1/262144,1/1048576";

fn parse_rational(s: &str) -> std::result::Result<Rational, String> {
    s.parse::<Rational>().map_err(|e| e.to_string())
}

fn parse_unit(s: &str) -> std::result::Result<Rational, String> {
    let x = parse_rational(s)?;
    if x.is_negative() || x > Rational::one() {
        return Err(format!("{x} is outside [0, 1]"));
    }
    Ok(x)
}

fn parse_positive(s: &str) -> std::result::Result<Rational, String> {
    let x = parse_rational(s)?;
    if !x.is_positive() {
        return Err(format!("{x} is not positive"));
    }
    Ok(x)
}

fn parse_kmode(s: &str) -> std::result::Result<KMode, String> {
    s.parse::<KMode>().map_err(|e| e.to_string())
}

fn parse_side(s: &str) -> std::result::Result<ScanSide, String> {
    s.parse::<ScanSide>().map_err(|e| e.to_string())
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, content).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn pretty(value: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn read_map(path: &Path) -> Result<PLMap> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing map from {}", path.display()))
}

fn read_samples(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            bail!("line {}: expected x,lo,hi", i + 1);
        }
        let parse = |s: &str| {
            s.parse::<Rational>()
                .with_context(|| format!("line {}", i + 1))
        };
        let (x, lo, hi) = (parse(cols[0])?, parse(cols[1])?, parse(cols[2])?);
        pts.push((x.to_f64(), lo.midpoint(&hi).to_f64()));
    }
    Ok(pts)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = cli.config;
    let ctx = Construction::new(cfg.kmode);
    let scan_opts = |samples: usize| ScanOptions {
        samples,
        gen_limit: cfg.max_gen,
        ..ScanOptions::default()
    };
    match cli.command {
        Command::BuildStaircase { out } => {
            let tree = StaircaseTree::build(cfg.sigma, cfg.depth, cfg.kmode)?;
            emit(out.as_deref(), &pretty(&tree.dump())?)?;
        }
        Command::Eval { x } => {
            let e = ctx.f_eval(&x, &cfg.eps)?;
            println!("{} {}", e.lo(), e.hi());
        }
        Command::Sample {
            count,
            decimal,
            out,
        } => {
            let last = Rational::from(count as i64 - 1);
            let rows: Vec<String> = (0..count)
                .into_par_iter()
                .map(|i| {
                    let x = Rational::from(i as i64) / &last;
                    let e = ctx.f_eval(&x, &cfg.eps)?;
                    let mut row = format!("{},{},{}", x, e.lo(), e.hi());
                    if decimal {
                        for v in [&x, e.lo(), e.hi()] {
                            row.push(',');
                            row.push_str(&v.to_decimal(12));
                        }
                    }
                    Ok(row)
                })
                .collect::<Result<_>>()?;
            let mut csv = String::from(if decimal {
                "x,lo,hi,x_dec,lo_dec,hi_dec\n"
            } else {
                "x,lo,hi\n"
            });
            for row in rows {
                csv.push_str(&row);
                csv.push('\n');
            }
            emit(out.as_deref(), &csv)?;
        }
        Command::BuildG { gen, out } => {
            let g = build_g(&ctx, gen, cfg.cutoff)?;
            let doc = json!({
                "generation": g.generation,
                "cutoff": g.cutoff,
                "steps": g.steps,
                "breakpoints": g.map.breakpoints(),
                "values": g.map.values(),
            });
            emit(out.as_deref(), &pretty(&doc)?)?;
        }
        Command::VerifyMeasure { input, out } => {
            let report: MeasureReport = read_map(&input)?.verify_measure();
            emit(out.as_deref(), &pretty(&report)?)?;
            if !report.preserving {
                eprintln!(
                    "not measure preserving: {}",
                    report
                        .diagnostic
                        .as_deref()
                        .unwrap_or("cell sums differ from 1")
                );
                return Ok(ExitCode::from(1));
            }
        }
        Command::Dini {
            x,
            side,
            scales,
            samples,
            out,
        } => {
            let scan = dini_scan(&ctx, &x, side, &scales, &scan_opts(samples))?;
            emit(out.as_deref(), &scan.to_csv())?;
        }
        Command::Morse {
            points,
            scales,
            threshold,
            samples,
            out,
        } => {
            let report = morse_report(&ctx, &points, &scales, &threshold, &scan_opts(samples))?;
            emit(out.as_deref(), &pretty(&report)?)?;
        }
        Command::Plot { input, out } => {
            let text = fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let svg = match serde_json::from_str::<PLMap>(&text) {
                Ok(map) => map.to_svg(),
                Err(_) if text.starts_with("x,lo,hi") => svg_polyline(&[read_samples(&text)?]),
                Err(e) => bail!(
                    "{} is neither a map JSON nor a samples CSV: {e}",
                    input.display()
                ),
            };
            fs::write(&out, svg).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
