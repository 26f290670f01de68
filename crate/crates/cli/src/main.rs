use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use moocshift::benchmark::{benchmark_config, minority_config, BenchmarkOptions};
use moocshift::data::{
    aggregate_weekly, dropout_week_of, ingest_events, parse_timestamp, write_demographics,
    write_dropout_weeks, write_weekly_counts, EventVocabulary, IngestOptions, ObservedCohort,
};
use moocshift::eval::{
    active_feature_weights, cohort_feature_weights, mds_embed, read_results, summarize,
    write_dropout_table, write_frequency_table, write_results, PadMode,
};
use moocshift::experiment::{
    cohort_for, config_from_comments, evaluate_cell, pad_matrix, provenance, run_experiment,
    train_cell, write_commented, write_outputs, write_summary, CellBundle, CohortSource,
    ExperimentConfig, WeekRange,
};
use moocshift::repr::NnPcaConfig;
use moocshift::synth::generate_cohort;
use moocshift::transfer::Method;

#[derive(Parser)]
#[command(
    name = "moocshift",
    version,
    about = "Transfer learning for weekly dropout prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Two lecture and two interactive offerings, four transfer pairs.
    Benchmark,
    /// Interactive source, mostly video-only target with a minority group.
    Minority,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config instead of a file.
    #[arg(long)]
    preset: Option<Preset>,
    /// Students per cohort for a preset.
    #[arg(long, requires = "preset")]
    students: Option<usize>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Week range such as `2..6`, `2-6` or `4`.
    #[arg(long)]
    weeks: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    /// `student_id,timestamp,event_type`
    Raw,
    /// `student_id,week,event_type,count`
    Weekly,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every cell of an experiment grid.
    Run {
        #[command(flatten)]
        grid: GridArgs,
        /// Output directory; the config's `output_dir` or `results` otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        parallel: usize,
    },
    /// Generate the synthetic cohorts of a config as data files.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Added to every generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for the data files and the generated configs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate an event log into weekly counts and dropout weeks.
    Ingest {
        /// Event CSV.
        input: PathBuf,
        /// Directory for counts.csv, vocabulary.txt and dropout.csv.
        #[arg(long)]
        out: PathBuf,
        /// Course length; later events are skipped.
        #[arg(long)]
        weeks: usize,
        #[arg(long, value_enum, default_value = "raw")]
        format: Format,
        /// Start of week 1 for raw logs (RFC 3339 or `YYYY-MM-DD`).
        #[arg(long)]
        course_start: Option<String>,
        #[arg(long, default_value_t = 7)]
        week_days: i64,
        /// Vocabulary file, one type per line, `*` marking video types.
        /// The built-in 13-type vocabulary otherwise.
        #[arg(long)]
        vocabulary: Option<PathBuf>,
    },
    /// Pairwise PAD between all cohorts of a config, plus MDS coordinates.
    Pad {
        #[command(flatten)]
        config: ConfigArgs,
        /// Prediction week whose features are compared; the grid's last week by default.
        #[arg(long)]
        week: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_parser = parse_pad_mode)]
        mode: Option<PadMode>,
        /// Directory for pad_matrix.csv and mds.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one (source, target, week, method) cell and save the model.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        source: String,
        #[arg(long)]
        target: String,
        #[arg(long)]
        week: usize,
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Model bundle (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved model against its target's labels.
    Evaluate {
        /// Model bundle written by `train`.
        model: PathBuf,
        /// Results CSV; printed to stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Event-type weights of a linear embedding.
    Weights {
        #[command(flatten)]
        config: ConfigArgs,
        /// Cohort to embed (the target when `--source` is given).
        #[arg(long)]
        cohort: String,
        /// Use an active-transfer encoder from this source instead of NN-PCA.
        #[arg(long, requires = "week")]
        source: Option<String>,
        #[arg(long)]
        week: Option<usize>,
        #[arg(long, default_value_t = 2)]
        components: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Weights CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summary tables and plot data from a results file or directory.
    Report {
        /// `results.csv`, or a directory holding one.
        input: PathBuf,
        /// Defaults to the directory of the results.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_pad_mode(s: &str) -> Result<PadMode, String> {
    match s {
        "pooled" => Ok(PadMode::Pooled),
        "per-slice" | "per_slice" => Ok(PadMode::PerSlice),
        _ => Err(format!(
            "unknown PAD mode `{s}`; expected pooled or per-slice"
        )),
    }
}

fn parse_weeks(s: &str) -> Result<WeekRange> {
    let s = s.trim();
    let (a, b) = if let Some((a, b)) = s.split_once("..=") {
        (a, b)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b)
    } else if let Some((a, b)) = s.split_once('-') {
        (a, b)
    } else {
        (s, s)
    };
    let parse = |x: &str| {
        x.trim()
            .parse::<usize>()
            .with_context(|| format!("bad week range `{s}`"))
    };
    Ok(WeekRange {
        start: parse(a)?,
        end: parse(b)?,
    })
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    match (&args.config, args.preset) {
        (Some(path), None) => ExperimentConfig::load(path)
            .with_context(|| format!("reading config {}", path.display())),
        (None, Some(p)) => {
            let mut o = BenchmarkOptions::default();
            if let Some(n) = args.students {
                o.n_students = n;
            }
            Ok(match p {
                Preset::Benchmark => benchmark_config(&o),
                Preset::Minority => minority_config(&o),
            })
        }
        _ => bail!("give either --config or --preset"),
    }
}

fn grid_config(args: &GridArgs) -> Result<ExperimentConfig> {
    let mut c = load_config(&args.config)?;
    if let Some(s) = args.seed {
        c.seeds = vec![s];
    }
    if let Some(m) = &args.methods {
        c.methods = m
            .iter()
            .map(|s| s.parse::<Method>())
            .collect::<moocshift::Result<_>>()?;
    }
    if let Some(w) = &args.weeks {
        c.weeks = parse_weeks(w)?;
    }
    c.validate()?;
    Ok(c)
}

fn with_seed(config: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut c = config.clone();
    c.seeds = vec![seed];
    c
}

fn cmd_run(grid: &GridArgs, out: Option<PathBuf>, parallel: usize) -> Result<ExitCode> {
    let config = grid_config(grid)?;
    let dir = out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| "results".into());
    let run = run_experiment(&config, parallel)?;
    write_outputs(&dir, &run)?;
    eprintln!(
        "{} result rows written to {}",
        run.results.len(),
        dir.display()
    );
    if run.failures.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("{} cells failed:", run.failures.len());
    for f in &run.failures {
        eprintln!(
            "  {} -> {} week {} {} seed {}: {}",
            f.source, f.target, f.week, f.method, f.seed, f.error
        );
    }
    Ok(ExitCode::from(2))
}

fn cmd_synth(args: &ConfigArgs, seed: u64, out: &Path) -> Result<()> {
    let config = load_config(args)?;
    fs::create_dir_all(out)?;
    let mut files = config.clone();
    for source in &config.cohorts {
        let Some(g) = &source.synth else { continue };
        let mut g = g.clone();
        g.seed = g.seed.wrapping_add(seed);
        let synth = generate_cohort(&g)?;
        let name = &source.name;
        let cohort = &synth.cohort;
        let counts = format!("{name}.counts.csv");
        let vocab = format!("{name}.vocabulary.txt");
        write_weekly_counts(
            fs::File::create(out.join(&counts))?,
            &cohort.student_counts(),
            cohort.vocabulary(),
        )?;
        fs::write(out.join(&vocab), cohort.vocabulary().to_text())?;
        let dropout: Vec<(String, usize)> = synth
            .dropout_weeks
            .iter()
            .map(|(s, d)| (s.clone(), *d))
            .collect();
        write_dropout_weeks(
            fs::File::create(out.join(format!("{name}.dropout.csv")))?,
            &dropout,
        )?;
        let demographics = if synth.groups.is_empty() {
            None
        } else {
            let file = format!("{name}.demographics.csv");
            write_demographics(
                fs::File::create(out.join(&file))?,
                &g.demographic_attribute,
                &synth.groups,
            )?;
            Some(PathBuf::from(file))
        };
        let entry = files
            .cohorts
            .iter_mut()
            .find(|c| &c.name == name)
            .expect("same cohorts");
        *entry = CohortSource {
            name: name.clone(),
            synth: None,
            counts: Some(counts.into()),
            vocabulary: Some(vocab.into()),
            weeks: Some(g.weeks),
            demographics,
        };
        eprintln!(
            "{name}: {} students, {} weeks",
            cohort.len(),
            cohort.weeks()
        );
    }
    files.resample_synthetic = false;
    fs::write(out.join("synth.toml"), config.to_toml()?)?;
    fs::write(out.join("cohorts.toml"), files.to_toml()?)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ingest(
    input: &Path,
    out: &Path,
    weeks: usize,
    format: Format,
    course_start: Option<&str>,
    week_days: i64,
    vocabulary: Option<&Path>,
) -> Result<()> {
    let vocabulary = match vocabulary {
        Some(p) => EventVocabulary::load(p)?,
        None => EventVocabulary::default(),
    };
    let mut options = match format {
        Format::Weekly => IngestOptions::weekly(weeks),
        Format::Raw => {
            let s = course_start.ok_or_else(|| anyhow!("raw logs need --course-start"))?;
            let start =
                parse_timestamp(s).ok_or_else(|| anyhow!("cannot parse course start `{s}`"))?;
            IngestOptions::raw(start, weeks)
        }
    };
    if week_days <= 0 {
        bail!("--week-days must be positive");
    }
    options.week_length = chrono::TimeDelta::days(week_days);
    let report = ingest_events(input, &vocabulary, &options)?;
    let counts = aggregate_weekly(&report.records, &vocabulary, weeks)?;
    fs::create_dir_all(out)?;
    write_weekly_counts(
        fs::File::create(out.join("counts.csv"))?,
        &counts,
        &vocabulary,
    )?;
    fs::write(out.join("vocabulary.txt"), vocabulary.to_text())?;
    let dropout: Vec<(String, usize)> = counts
        .iter()
        .map(|(s, m)| (s.clone(), dropout_week_of(m, &vocabulary)))
        .collect();
    write_dropout_weeks(fs::File::create(out.join("dropout.csv"))?, &dropout)?;
    eprintln!(
        "{} students; skipped {} events of unknown type and {} after week {weeks}",
        counts.len(),
        report.unknown_types,
        report.beyond_course
    );
    Ok(())
}

fn cmd_pad(
    args: &ConfigArgs,
    week: Option<usize>,
    seed: u64,
    mode: Option<PadMode>,
    out: &Path,
) -> Result<()> {
    let mut config = with_seed(&load_config(args)?, seed);
    if let Some(m) = mode {
        config.pad.mode = m;
    }
    let week = week.unwrap_or(config.weeks.end);
    if week < 2 {
        bail!("week must be 2 or later");
    }
    let (names, d) = pad_matrix(&config, week, seed)?;
    let m = names.len();
    let coords = mds_embed(&d, m, 2)?;
    fs::create_dir_all(out)?;
    let mut comments = provenance(&config)?;
    comments.push(format!("week: {week}"));

    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["cohort".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..m {
        let mut row = vec![names[i].clone()];
        row.extend((0..m).map(|j| format!("{}", d[i * m + j])));
        w.write_record(&row)?;
    }
    write_commented(&out.join("pad_matrix.csv"), &comments, &w.into_inner()?)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cohort", "x", "y"])?;
    for (i, n) in names.iter().enumerate() {
        w.write_record([
            n.clone(),
            format!("{}", coords[2 * i]),
            format!("{}", coords[2 * i + 1]),
        ])?;
    }
    write_commented(&out.join("mds.csv"), &comments, &w.into_inner()?)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    args: &ConfigArgs,
    source: &str,
    target: &str,
    week: usize,
    method: &str,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let config = with_seed(&load_config(args)?, seed);
    let method: Method = method.parse()?;
    let bundle = train_cell(&config, source, target, week, method, seed)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    bundle.save(out)?;
    Ok(())
}

fn cmd_evaluate(model: &Path, out: Option<&Path>) -> Result<()> {
    let bundle = CellBundle::load(model).with_context(|| format!("loading {}", model.display()))?;
    let result = evaluate_cell(&bundle)?;
    let comments = provenance(&bundle.config)?;
    let mut buf = Vec::new();
    write_results(&mut buf, &comments, std::slice::from_ref(&result))?;
    match out {
        Some(p) => fs::write(p, buf)?,
        None => print!("{}", String::from_utf8(buf)?),
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_weights(
    args: &ConfigArgs,
    cohort: &str,
    source: Option<&str>,
    week: Option<usize>,
    components: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let config = with_seed(&load_config(args)?, seed);
    let target = cohort_for(&config, cohort, seed)?;
    let mut comments = provenance(&config)?;
    let weights = match source {
        Some(s) => {
            let week = week.expect("clap requires --week");
            comments.push(format!("active encoder: {s} -> {cohort}, week {week}"));
            let src = cohort_for(&config, s, seed)?;
            let observed = ObservedCohort::new(&target, week)?;
            active_feature_weights(&src, &observed, &config.hyper, seed)?
        }
        None => {
            comments.push(format!("nn-pca: {cohort}, {components} components"));
            cohort_feature_weights(&target, components, &NnPcaConfig::default(), seed)?.1
        }
    };
    let mut buf = Vec::new();
    weights.write_csv(&mut buf)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_commented(out, &comments, &buf)?;
    Ok(())
}

fn cmd_report(input: &Path, out: Option<&Path>) -> Result<()> {
    let (file, dir) = if input.is_dir() {
        (input.join("results.csv"), input.to_path_buf())
    } else {
        (
            input.to_path_buf(),
            input.parent().map(Path::to_path_buf).unwrap_or_default(),
        )
    };
    if !file.exists() {
        bail!("no results: {} does not exist", file.display());
    }
    let (comments, results) = read_results(BufReader::new(fs::File::open(&file)?))?;
    if results.is_empty() {
        bail!("no results: {} has no rows", file.display());
    }
    let config = config_from_comments(&comments).context("results file has no embedded config")?;
    let out = out.map(Path::to_path_buf).unwrap_or(dir);
    let summary = summarize(&results)?;
    write_summary(&out, &config, &summary)?;

    let comments = provenance(&config)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "mean_auc", "std_auc", "n"])?;
    for r in &summary.per_method {
        w.write_record([
            r.method.clone(),
            format!("{}", r.stat.mean),
            format!("{}", r.stat.std),
            r.stat.n.to_string(),
        ])?;
    }
    write_commented(&out.join("per_method.csv"), &comments, &w.into_inner()?)?;

    let seed = config.seeds[0];
    let cohorts = config
        .cohorts
        .iter()
        .map(|c| cohort_for(&config, &c.name, seed))
        .collect::<moocshift::Result<Vec<_>>>()?;
    let refs: Vec<_> = cohorts.iter().collect();
    let mut buf = Vec::new();
    write_dropout_table(&mut buf, &refs)?;
    write_commented(&out.join("dropout_table.csv"), &comments, &buf)?;
    let mut buf = Vec::new();
    write_frequency_table(&mut buf, &refs)?;
    write_commented(&out.join("frequency_table.csv"), &comments, &buf)?;
    eprintln!("report written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            grid,
            out,
            parallel,
        } => cmd_run(&grid, out, parallel),
        Command::Synth { config, seed, out } => {
            cmd_synth(&config, seed, &out).map(|_| ExitCode::SUCCESS)
        }
        Command::Ingest {
            input,
            out,
            weeks,
            format,
            course_start,
            week_days,
            vocabulary,
        } => cmd_ingest(
            &input,
            &out,
            weeks,
            format,
            course_start.as_deref(),
            week_days,
            vocabulary.as_deref(),
        )
        .map(|_| ExitCode::SUCCESS),
        Command::Pad {
            config,
            week,
            seed,
            mode,
            out,
        } => cmd_pad(&config, week, seed, mode, &out).map(|_| ExitCode::SUCCESS),
        Command::Train {
            config,
            source,
            target,
            week,
            method,
            seed,
            out,
        } => cmd_train(&config, &source, &target, week, &method, seed, &out)
            .map(|_| ExitCode::SUCCESS),
        Command::Evaluate { model, out } => {
            cmd_evaluate(&model, out.as_deref()).map(|_| ExitCode::SUCCESS)
        }
        Command::Weights {
            config,
            cohort,
            source,
            week,
            components,
            seed,
            out,
        } => cmd_weights(
            &config,
            &cohort,
            source.as_deref(),
            week,
            components,
            seed,
            &out,
        )
        .map(|_| ExitCode::SUCCESS),
        Command::Report { input, out } => {
            cmd_report(&input, out.as_deref()).map(|_| ExitCode::SUCCESS)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
