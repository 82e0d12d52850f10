use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msdis::calibration::{calibrate_eta, calibrate_mf_threshold, CalibrationFile};
use msdis::config::{Scenario, ScenarioConfig};
use msdis::harness::{
    capture_score_maps, metrics_csv, records_jsonl, run_detector, run_sweep, score_maps_csv, trial_targets,
    DetectorKind, ExperimentSpec,
};
use msdis::{Error, Result};

#[derive(Parser)]
#[command(name = "msdis", version, about = "Distributed MIMO radar multi-target detection")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate the GIC penalty and the MF threshold on pure noise.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one detector on one synthesized trial.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Calibration file written by `calibrate`.
        #[arg(long)]
        eta: PathBuf,
        #[arg(long, default_value = "msdis")]
        detector: String,
        /// SNR of the target of interest (default: as configured).
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Report file (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also write per-iteration score maps to this CSV.
        #[arg(long)]
        maps: Option<PathBuf>,
    },
    /// P_d / RMSE versus SNR, one CSV and one JSON-lines file per detector.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eta: PathBuf,
        /// Comma-separated detector names.
        #[arg(long, default_value = "msdis,jdl-sic,glrt-cd", value_delimiter = ',')]
        detector: Vec<String>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score maps of MSD-IS and MF+SIC on one trial.
    Scoremap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eta: PathBuf,
        #[arg(long)]
        snr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_scenario(common: &Common) -> Result<Scenario> {
    let mut cfg = ScenarioConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Scenario::build(cfg, common.config.parent().unwrap_or(Path::new(".")))
}

fn spec_for(scenario: &Scenario, cal: &CalibrationFile, detector: DetectorKind) -> ExperimentSpec {
    ExperimentSpec::from_scenario(scenario, detector, cal.gic.eta, cal.mf.eta)
}

fn default_snr(scenario: &Scenario) -> f64 {
    let cfg = &scenario.config;
    cfg.targets.get(cfg.experiment.target_of_interest).map_or(0.0, |t| t.snr_db)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Calibrate { common, out } => {
            let s = load_scenario(&common)?;
            let c = &s.config.calibration;
            let params = s.config.detector_params(0.0);
            let gic = calibrate_eta(&s.model, &s.candidates, &s.grid, &params, c.target_pfa, c.trials, c.validation_trials, s.config.seed)?;
            let mf = calibrate_mf_threshold(&s.model, &s.candidates, &s.grid, c.target_pfa, c.trials, c.validation_trials, s.config.seed)?;
            log::info!("eta {:.4} (P_fa {:.4}), mf threshold {:.4} (P_fa {:.4})", gic.eta, gic.achieved_pfa, mf.eta, mf.achieved_pfa);
            write(&out, &(serde_json::to_string_pretty(&CalibrationFile { gic, mf })? + "\n"))
        }
        Command::Detect { common, eta, detector, snr, trial, out, maps } => {
            let kind: DetectorKind = detector.parse()?;
            let cal = CalibrationFile::load(&eta)?;
            let s = load_scenario(&common)?;
            let spec = spec_for(&s, &cal, kind);
            let snr = snr.unwrap_or_else(|| default_snr(&s));
            let truths = trial_targets(&s, &spec, snr, trial)?;
            let report = run_detector(&s, &spec, &truths, trial, maps.is_some())?;
            log::info!("{}: {} target(s), {:?}", kind.name(), report.targets.len(), report.termination);
            if let Some(path) = maps {
                let mut csv = String::from("detector,iteration,index,x,y,active,score\n");
                for map in &report.score_maps {
                    for (i, (v, g)) in map.scores.iter().zip(s.grid.points()).enumerate() {
                        let v = v.map(|v| v.to_string()).unwrap_or_default();
                        csv.push_str(&format!("{},{},{i},{},{},{},{v}\n", report.detector, map.iteration, g.x, g.y, u8::from(!v.is_empty())));
                    }
                }
                write(&path, &csv)?;
            }
            write(&out, &(serde_json::to_string_pretty(&report)? + "\n"))
        }
        Command::Sweep { common, eta, detector, out } => {
            let kinds = detector.iter().map(|d| d.parse()).collect::<Result<Vec<DetectorKind>>>()?;
            let cal = CalibrationFile::load(&eta)?;
            let s = load_scenario(&common)?;
            std::fs::create_dir_all(&out)?;
            for kind in kinds {
                let (rows, records) = run_sweep(&s, &spec_for(&s, &cal, kind))?;
                write(&out.join(format!("{}.csv", kind.name())), &metrics_csv(&rows))?;
                write(&out.join(format!("{}.jsonl", kind.name())), &records_jsonl(&records)?)?;
            }
            Ok(())
        }
        Command::Scoremap { common, eta, snr, trial, out } => {
            let cal = CalibrationFile::load(&eta)?;
            let s = load_scenario(&common)?;
            let spec = spec_for(&s, &cal, DetectorKind::Msdis);
            let capture = capture_score_maps(&s, &spec, snr.unwrap_or_else(|| default_snr(&s)), trial)?;
            write(&out, &score_maps_csv(&s, &capture))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
