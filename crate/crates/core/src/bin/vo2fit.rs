use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use vo2fit::cohortgen::{self, Participant};
use vo2fit::evalmetrics::{EvalReport, Metric};
use vo2fit::featurize::{self, FeatureLayout};
use vo2fit::pipeline::{self, data, report, Config, CovariateSet, ModelChoice, RowSpec};
use vo2fit::sensorproc;
use vo2fit::{Error, Result};

#[derive(Parser)]
#[command(name = "vo2fit", version, about = "Fitness estimation from simulated wearable sensor weeks")]
struct Cli {
    /// TOML run configuration (required).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the cohort and export raw sensor weeks.
    Generate {
        /// Number of participants whose sensor week is written to disk.
        #[arg(long, default_value_t = 50)]
        max_weeks: usize,
    },
    /// Clean every exported sensor week.
    Preprocess,
    /// Build the feature cache for the whole cohort.
    Featurize,
    /// Train one model on the task-1 split.
    Train {
        #[arg(long, default_value = "comprehensive")]
        covariates: String,
        #[arg(long, default_value = "dense")]
        model: String,
    },
    /// Evaluate a saved bundle on the task-1 test split.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Latent-space embeddings and the neighbour case study.
    Latent,
    /// Model comparison on current fitness.
    Task1,
    /// Future fitness, change in fitness and binned change.
    Task2,
    /// Frozen task-1 model applied to follow-up weeks.
    Task3,
    /// Collate task reports into tables.
    Report,
}

const SENSOR_DIR: &str = "sensor";
const CLEAN_DIR: &str = "clean";

fn week_file(p: &Participant) -> String {
    format!("{}_{}.csv", p.id, p.cohort.as_str())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn generate(out: &Path, cfg: &Config, max_weeks: usize) -> Result<()> {
    let dir = pipeline::data_dir(out);
    let sensor_dir = dir.join(SENSOR_DIR);
    mkdir(&sensor_dir)?;
    let (baseline, followup) = data::generate_participants(cfg)?;
    let all: Vec<Participant> = baseline.iter().chain(&followup).cloned().collect();
    cohortgen::write_cohort_csv(create(&dir.join(data::COHORT_FILE))?, &all)?;
    let sensor_seed = cfg.sensor_seed();
    all.par_iter().take(max_weeks).try_for_each(|p| {
        let week = cohortgen::generate_sensor_week(p, &cfg.sensor, sensor_seed)?;
        cohortgen::write_sensor_csv(create(&sensor_dir.join(week_file(p)))?, &week)
    })?;
    println!("{} participants, {} sensor weeks written to {}", all.len(), max_weeks.min(all.len()), dir.display());
    Ok(())
}

fn preprocess(out: &Path, cfg: &Config) -> Result<()> {
    let dir = pipeline::data_dir(out);
    let cohort = cohortgen::read_cohort_csv(open(&dir.join(data::COHORT_FILE))?)?;
    let by_file: HashMap<String, &Participant> = cohort.iter().map(|p| (week_file(p), p)).collect();
    let clean_dir = dir.join(CLEAN_DIR);
    mkdir(&clean_dir)?;
    let sensor_dir = dir.join(SENSOR_DIR);
    let mut names: Vec<String> = fs::read_dir(&sensor_dir)
        .map_err(|e| Error::io(&sensor_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    let mut cleaned = 0;
    for name in &names {
        let p = by_file.get(name).ok_or_else(|| Error::Data(format!("{name} matches no cohort record")))?;
        let week = cohortgen::read_sensor_csv(open(&sensor_dir.join(name))?, &p.id, p.month)?;
        match sensorproc::clean_week(&week, &cfg.preprocess) {
            Ok(clean) => {
                sensorproc::write_clean_csv(create(&clean_dir.join(name))?, &clean)?;
                cleaned += 1;
            }
            Err(e) => eprintln!("skipping {name}: {e}"),
        }
    }
    println!("{cleaned} of {} sensor weeks cleaned into {}", names.len(), clean_dir.display());
    Ok(())
}

/// Rebuild the full feature cache, then featurize any cleaned weeks on disk
/// into `features_clean.csv`.
fn featurize_cmd(out: &Path, cfg: &Config) -> Result<()> {
    let dir = pipeline::data_dir(out);
    let ds = pipeline::Dataset::build_and_save(&dir, cfg)?;
    println!(
        "{} baseline and {} follow-up feature vectors, {} weeks excluded",
        ds.features_baseline.len(),
        ds.features_followup.len(),
        ds.excluded.len()
    );
    let clean_dir = dir.join(CLEAN_DIR);
    if !clean_dir.is_dir() {
        return Ok(());
    }
    let layout = FeatureLayout::canonical();
    let by_file: HashMap<String, &Participant> =
        ds.baseline.iter().chain(&ds.followup).map(|p| (week_file(p), p)).collect();
    let mut names: Vec<String> = fs::read_dir(&clean_dir)
        .map_err(|e| Error::io(&clean_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    names.sort();
    let mut rows = Vec::new();
    for name in &names {
        let Some(p) = by_file.get(name) else { continue };
        let clean = sensorproc::read_clean_csv(open(&clean_dir.join(name))?, &p.id, p.month)?;
        match featurize::build_feature_vector(p, &clean, &layout) {
            Ok(fv) => rows.push(fv),
            Err(e) => eprintln!("skipping {name}: {e}"),
        }
    }
    featurize::write_features_csv(create(&dir.join("features_clean.csv"))?, &layout, &rows)?;
    println!("{} cleaned weeks featurized", rows.len());
    Ok(())
}

fn print_report(name: &str, r: &EvalReport) {
    let cell = |m: Metric| match r.get(m) {
        Some(e) => format!("{} {:.3} [{:.3}, {:.3}]", m.as_str(), e.point, e.lower, e.upper),
        None => format!("{} n/a", m.as_str()),
    };
    println!("{name:<22} {}  {}  {}", cell(Metric::R2), cell(Metric::Pearson), cell(Metric::Rmse));
}

fn run(cli: Cli, config_path: PathBuf) -> Result<()> {
    let mut cfg = Config::load(&config_path)?;
    if let Some(s) = cli.seed {
        cfg.reseed(s);
        cfg.validate()?;
    }
    let out = cli.out;
    mkdir(&out)?;
    info!("seed {} writing under {}", cfg.seed, out.display());
    match cli.command {
        Command::Generate { max_weeks } => generate(&out, &cfg, max_weeks)?,
        Command::Preprocess => preprocess(&out, &cfg)?,
        Command::Featurize => featurize_cmd(&out, &cfg)?,
        Command::Train { covariates, model } => {
            let row = RowSpec { covariates: CovariateSet::parse(&covariates)?, model: ModelChoice::parse(&model)? };
            let path = pipeline::train_row_in(&out, &cfg, row)?;
            println!("saved {}", path.display());
        }
        Command::Evaluate { bundle } => {
            let r = pipeline::evaluate_bundle_in(&out, &cfg, &bundle)?;
            print_report(&bundle.display().to_string(), &r);
        }
        Command::Latent => {
            let o = pipeline::run_latent_in(&out, &cfg)?;
            for s in &o.studies {
                println!(
                    "{}: total distance original {:.3}, latent {:.3}",
                    s.query.id, s.original.total_distance, s.latent.total_distance
                );
            }
        }
        Command::Task1 => {
            let r = pipeline::run_task1_in(&out, &cfg)?;
            println!("task 1: {} train / {} test", r.n_train, r.n_test);
            for row in &r.rows {
                print_report(&row.name, &row.report);
            }
        }
        Command::Task2 => {
            let r = pipeline::run_task2_in(&out, &cfg)?;
            println!("task 2: {} train / {} test", r.n_train, r.n_test);
            for row in &r.regression {
                print_report(row.target.as_str(), &row.report);
            }
            for row in &r.classification {
                if let Some(e) = row.auc() {
                    println!(
                        "delta {:<8} n={:<5} auc {:.3} [{:.3}, {:.3}]",
                        row.scheme.as_str(),
                        row.n_test_retained,
                        e.point,
                        e.lower,
                        e.upper
                    );
                }
            }
        }
        Command::Task3 => {
            let r = pipeline::run_task3_in(&out, &cfg)?;
            print_report("follow-up", &r.followup);
            println!(
                "{} matched; follow-up pred vs baseline truth r {:.3}; delta r {:.3} (p {:.4}); reproduces task 1: {}",
                r.n_matched,
                r.corr_followup_pred_vs_baseline_truth,
                r.delta_correlation,
                r.delta_pvalue,
                r.reproduces_task1.map_or("n/a".into(), |b| b.to_string())
            );
            if r.bundle_sha256_before != r.bundle_sha256_after {
                return Err(Error::Data("frozen bundle changed during task 3".into()));
            }
        }
        Command::Report => {
            for p in report::write_tables(&out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    let m = pipeline::write_manifest(&out, &cfg)?;
    info!("manifest lists {} files", m.files.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut cli = Cli::parse();
    // Clap cannot mark a global flag required, so report it as a usage error here.
    let Some(config) = cli.config.take() else {
        Cli::command().error(ErrorKind::MissingRequiredArgument, "--config <PATH> is required").exit();
    };
    match run(cli, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
