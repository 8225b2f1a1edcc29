//! `qnode-sim`: runs scenarios of the memory node and writes data files.

mod output;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qnode_core::experiment::{
    analyze_tomography, collect_tomography, decay_scan, default_taus, io_fidelity,
    refine_tomography, run_report, sub_seed,
};
use qnode_core::pipeline::run_pipeline_sharded;
use qnode_core::scenario::BUNDLED;
use qnode_core::tomography::{
    counts_from_csv, counts_from_json_lines, counts_to_csv, counts_to_json_lines,
};
use qnode_core::{Scenario, SlotGrid, Tier};

use output::{Format, OutDir};

#[derive(Parser)]
#[command(
    name = "qnode-sim",
    version,
    about = "Simulate and analyse a fibre-integrated quantum-memory node"
)]
struct Cli {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long, global = true, value_name = "PATH")]
    scenario: Option<String>,

    /// Overrides run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides run.shards.
    #[arg(long, global = true)]
    shards: Option<usize>,

    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Monte-Carlo events or closed-form expectation values.
    #[arg(long, global = true, value_enum, default_value_t = TierArg::Events)]
    tier: TierArg,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TierArg {
    Events,
    Analytic,
}

impl From<TierArg> for Tier {
    fn from(t: TierArg) -> Self {
        match t {
            TierArg::Events => Tier::Events,
            TierArg::Analytic => Tier::Analytic,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Raw,
    Corrected,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario once, print a summary and write the histogram.
    Run {
        /// Also write the detector time-tag streams.
        #[arg(long)]
        streams: bool,
    },
    /// Reconstruct the two-photon state over the four phase settings.
    Tomography {
        /// Which reconstructed matrices to write; the report always has both.
        #[arg(long, value_enum, default_value_t = Mode::Corrected)]
        mode: Mode,
        /// Analyse a counts table instead of simulating.
        #[arg(long, value_name = "FILE")]
        counts: Option<PathBuf>,
        /// Transparency scenario for the input/output fidelity.
        #[arg(long, value_name = "PATH")]
        reference: Option<String>,
        /// Refine the linear estimate by maximum likelihood for up to N iterations.
        #[arg(long, value_name = "N")]
        mle: Option<usize>,
    },
    /// Measure echo efficiency over storage times and fit the decay.
    DecayScan {
        /// Storage times in microseconds, ascending; defaults to 2, 4, ..., 28.
        #[arg(long, value_delimiter = ',', value_name = "US")]
        taus: Option<Vec<f64>>,
    },
    /// Write every scenario key with its default value.
    ExportDefaults,
}

fn load_scenario(arg: Option<&str>, cli: &Cli) -> qnode_core::Result<Scenario> {
    let mut sc = match arg {
        None => Scenario::default(),
        Some(p) if Path::new(p).exists() => Scenario::load(p)?,
        Some(p) if BUNDLED.iter().any(|(n, _)| *n == p) => Scenario::bundled(p)?,
        Some(p) => {
            let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
            return Err(qnode_core::Error::Input(format!(
                "scenario `{p}` is neither a file nor a bundled name ({})",
                names.join(", ")
            )));
        }
    };
    if let Some(seed) = cli.seed {
        sc.run.seed = seed;
    }
    if let Some(shards) = cli.shards {
        sc.run.shards = shards;
    }
    sc.validate()?;
    Ok(sc)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Box<dyn std::error::Error>> {
    if let Command::ExportDefaults = cli.command {
        let text = Scenario::defaults_reference();
        match &cli.out {
            Some(dir) => {
                let path = OutDir::create(dir, cli.format)?.write("defaults.toml", &text)?;
                println!("wrote {}", path.display());
            }
            None => print!("{text}"),
        }
        return Ok(());
    }

    let sc = load_scenario(cli.scenario.as_deref(), cli)?;
    let out = OutDir::create(cli.out.as_deref().unwrap_or(Path::new(".")), cli.format)?;
    let tier = Tier::from(cli.tier);
    let (seed, shards) = (sc.run.seed, sc.run.shards);

    match &cli.command {
        Command::Run { streams } => {
            let (rep, stats) = run_report(&sc, tier, seed, shards)?;
            print!("{}", report::run_table(&sc, &rep));
            out.write("summary.txt", &report::run_record(&sc, &rep))?;
            if let Some(st) = stats {
                out.write_table(
                    "histogram",
                    &st.histogram.to_csv(),
                    &st.histogram.to_json_lines(),
                )?;
            }
            if *streams {
                let p = run_pipeline_sharded(&sc, seed, shards)?;
                let mut list = vec![("idler", &p.idler), ("signal", &p.signal)];
                if let Some(b) = &p.signal_b {
                    list.push(("signal_b", b));
                }
                for (name, s) in list {
                    out.write_stream(name, s)?;
                }
            }
        }
        Command::Tomography {
            mode,
            counts,
            reference,
            mle,
        } => {
            let (table, prompt) = match counts {
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    let is_json = path
                        .extension()
                        .is_some_and(|e| e == "jsonl" || e == "json");
                    let c = if is_json {
                        counts_from_json_lines(&text)?
                    } else {
                        counts_from_csv(&text)?
                    };
                    let n = c.len();
                    (c, vec![SlotGrid::default(); n])
                }
                None => collect_tomography(&sc, tier, seed, shards)?,
            };
            let mut rep = analyze_tomography(&sc, table, prompt, None)?;
            let f_io = match (reference, counts) {
                (Some(r), None) => {
                    let input_sc = load_scenario(Some(r), cli)?;
                    let (c, p) = collect_tomography(&input_sc, tier, sub_seed(seed, 2000), shards)?;
                    let input = analyze_tomography(&input_sc, c, p, None)?;
                    Some(io_fidelity(&input_sc, &input, &rep)?)
                }
                (Some(_), Some(_)) => {
                    return Err("--reference needs simulated counts, not --counts".into());
                }
                _ => None,
            };
            if let Some(iters) = mle {
                refine_tomography(&sc, &mut rep, *iters)?;
            }
            out.write_table(
                "counts",
                &counts_to_csv(&rep.counts)?,
                &counts_to_json_lines(&rep.counts)?,
            )?;
            let (tag, rho, heralded) = match mode {
                Mode::Raw => ("raw", &rep.rho_raw, &rep.heralded_raw),
                Mode::Corrected => ("corrected", &rep.rho_corrected, &rep.heralded_corrected),
            };
            out.write(&format!("rho_{tag}.txt"), &rho.to_text())?;
            for (name, s) in [
                ("early", &heralded.early),
                ("late", &heralded.late),
                ("x", &heralded.x),
                ("y", &heralded.y),
            ] {
                out.write(&format!("signal_{name}_{tag}.txt"), &s.to_text())?;
            }
            let text = report::fidelity_record(&rep, f_io);
            out.write("fidelity.txt", &text)?;
            print!("{text}");
        }
        Command::DecayScan { taus } => {
            let taus: Vec<f64> = match taus {
                Some(t) => t.iter().map(|us| us * 1e-6).collect(),
                None => default_taus(),
            };
            let rep = decay_scan(&sc, &taus, tier, seed, shards)?;
            let (csv, jsonl) = report::decay_tables(&rep);
            out.write_table("decay", &csv, &jsonl)?;
            out.write("fit.txt", &rep.fit.to_text())?;
            print!("{}", report::decay_table(&rep));
        }
        Command::ExportDefaults => unreachable!(),
    }
    Ok(())
}
