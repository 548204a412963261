use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use chronolapse::estimators::{self, Regime};
use chronolapse::scenario::{load_config, run_scenario, write_artifacts, ArtifactPaths};
use chronolapse::units::UnitSystem;

#[derive(Parser)]
#[command(name = "chronolapse", version, about = "Averaged quantum and classical dynamics in random time")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its CSV, summary and optional SVG.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Directory for artifacts (default: current directory).
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Replace the seed given in [sampler].
        #[arg(long)]
        seed_override: Option<u64>,
        /// Print nothing on success.
        #[arg(long)]
        quiet: bool,
    },
    /// Parse and validate a scenario without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Order-of-magnitude calculators.
    Estimate {
        #[command(subcommand)]
        calculator: Estimate,
        #[arg(long, value_enum, default_value = "cgs", global = true)]
        units: Units,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Units {
    Natural,
    Cgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    NonRelativistic,
    UltraRelativistic,
}

#[derive(Subcommand)]
enum Estimate {
    /// π²ħ²/(τΔE²).
    DecoherenceTime {
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        delta_e: f64,
    },
    /// √(tτ), the spread of the time flow after t.
    FlowStddev {
        #[arg(long)]
        t: f64,
        #[arg(long)]
        tau: f64,
    },
    /// Energy split above which a beam decoheres over flight length l.
    BeamThreshold {
        #[arg(long)]
        l: f64,
        #[arg(long)]
        tau0: f64,
        #[arg(long)]
        gamma: f64,
    },
    /// τ bounds from an oscillation period and a flight time.
    OscillationBounds(OscillationArgs),
    /// ΔE and oscillation period from a mass splitting.
    EnergySplit {
        #[arg(long)]
        delta_m: f64,
        #[arg(long, default_value_t = 0.0)]
        energy: f64,
        #[arg(long, value_enum, default_value = "non-relativistic")]
        regime: RegimeArg,
    },
    /// Upper bound on τ from an observed lifetime.
    LifetimeBound {
        #[arg(long)]
        lifetime: f64,
    },
    /// Neutral-kaon preset.
    Kaon,
    /// Solar-neutrino preset.
    Neutrino,
}

#[derive(Args)]
struct OscillationArgs {
    #[arg(long)]
    t_os: f64,
    #[arg(long)]
    t_f: f64,
}

fn main() -> ExitCode {
    // usage errors exit 1; 2 is reserved for failed verdicts
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(command: Command) -> chronolapse::Result<ExitCode> {
    match command {
        Command::Run {
            config,
            out_dir,
            seed_override,
            quiet,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed_override {
                match cfg.sampler.as_mut() {
                    Some(s) => s.seed = seed,
                    None => eprintln!("warning: --seed-override ignored, scenario does not sample"),
                }
            }
            let outcome = run_scenario(&cfg)?;
            let paths = ArtifactPaths::resolve(&cfg, &out_dir);
            write_artifacts(&outcome, &paths)?;
            let summary = &outcome.summary;
            if !quiet {
                for v in &summary.verdicts {
                    println!(
                        "{} {} = {:e} (threshold {:e})",
                        if v.pass { "PASS" } else { "FAIL" },
                        v.name,
                        v.value,
                        v.threshold
                    );
                }
                for note in &summary.notes {
                    println!("note: {note}");
                }
                if let Some(csv) = paths.csv.as_ref().filter(|_| outcome.table.is_some()) {
                    println!("csv: {}", csv.display());
                }
                println!("summary: {}", paths.summary.display());
                println!("wall_clock_s: {:.3}", summary.wall_clock.as_secs_f64());
                println!("overall: {}", if summary.passed() { "pass" } else { "fail" });
            }
            Ok(if summary.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("{}: valid {} scenario `{}`", config.display(), cfg.kind.as_str(), cfg.name);
            Ok(ExitCode::SUCCESS)
        }
        Command::Estimate { calculator, units } => {
            let units = match units {
                Units::Natural => UnitSystem::natural(),
                Units::Cgs => UnitSystem::cgs(),
            };
            estimate(calculator, &units)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn estimate(calculator: Estimate, units: &UnitSystem) -> chronolapse::Result<()> {
    match calculator {
        Estimate::DecoherenceTime { tau, delta_e } => {
            println!("decoherence_time = {:e}", estimators::decoherence_time(tau, delta_e, units)?);
        }
        Estimate::FlowStddev { t, tau } => {
            println!("flow_stddev = {:e}", estimators::flow_stddev(t, tau)?);
        }
        Estimate::BeamThreshold { l, tau0, gamma } => {
            println!("beam_threshold = {:e}", estimators::beam_threshold(l, tau0, gamma, units)?);
        }
        Estimate::OscillationBounds(OscillationArgs { t_os, t_f }) => {
            let b = estimators::oscillation_bounds(t_os, t_f)?;
            println!("tau_weak = {:e}\ntau_strong = {:e}", b.tau_weak, b.tau_strong);
        }
        Estimate::EnergySplit {
            delta_m,
            energy,
            regime,
        } => {
            let regime = match regime {
                RegimeArg::NonRelativistic => Regime::NonRelativistic,
                RegimeArg::UltraRelativistic => Regime::UltraRelativistic,
            };
            let split = estimators::oscillation_energy_split(delta_m, energy, regime, units)?;
            println!("delta_e = {:e}\nt_os = {:e}", split.delta_e, split.t_os);
            if let Some(w) = split.warning {
                eprintln!("warning: {w}");
            }
        }
        Estimate::LifetimeBound { lifetime } => {
            println!("tau_bound = {:e}", estimators::lifetime_tau_bound(lifetime)?);
        }
        Estimate::Kaon | Estimate::Neutrino => {
            let preset = if matches!(calculator, Estimate::Kaon) {
                estimators::kaon_preset()
            } else {
                estimators::neutrino_preset()
            };
            let b = preset.bounds()?;
            println!("preset = {}", preset.name);
            println!("delta_e = {:e}\nt_os = {:e}\nt_f = {:e}", preset.delta_e, preset.t_os(), preset.t_f);
            println!("tau_weak = {:e}\ntau_strong = {:e}", b.tau_weak, b.tau_strong);
            println!("assumption: {}", preset.source);
        }
    }
    Ok(())
}
