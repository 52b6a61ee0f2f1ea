//! Command-line front end: train, eval, ablate, plot and gen-data.
//!
//! Exit codes: 0 on success, 1 on a config or usage error, 2 on anything
//! that fails at run time.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::load_checkpoint;
use crate::config::{parse_config, RunConfig};
use crate::data::write_feature_dir;
use crate::error::{Error, Result};
use crate::locator::Mode;
use crate::metrics::{fmt_sig6, CostReport};
use crate::model::Model;
use crate::pipeline::{evaluate, load_data, model_config, run, stage_checkpoint, RunOptions, CONFIG_FILE, REPORT_FILE};

#[derive(Debug, Parser)]
#[command(name = "vidloc", version, about = "Adaptive frame locators for long-video recognition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Named preset: default, desk or tiny.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run all three training stages into a run directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite a completed run.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate the latest checkpoint of a run directory on its test split.
    Eval {
        run: PathBuf,
        /// argmax, sample, all, uniform:FRACTION or random:FRACTION.
        #[arg(long, default_value = "argmax")]
        mode: String,
    },
    /// Sweep one ablation axis, one run directory per cell.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long)]
        out: PathBuf,
        /// Cells run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        force: bool,
    },
    /// Accuracy against GFLOPs scatter over completed runs.
    Plot {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Write the synthetic dataset as feature files.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    Locators,
    Temporal,
    Integrator,
    Strategy,
    Lambda,
    ActionSpace,
    InitialFrame,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Locators => "locators",
            Axis::Temporal => "temporal",
            Axis::Integrator => "integrator",
            Axis::Strategy => "strategy",
            Axis::Lambda => "lambda",
            Axis::ActionSpace => "action_space",
            Axis::InitialFrame => "initial_frame",
        }
    }

    /// `(cell name, config key, value)` for every cell that needs its own run.
    pub fn cells(self) -> Vec<(String, &'static str, String)> {
        let cell = |key: &'static str, v: &str| (format!("{key}={v}"), key, v.to_string());
        match self {
            Axis::Locators => ["1", "3", "5", "8"].iter().map(|v| cell("locators", v)).collect(),
            Axis::Temporal => ["lstm", "mean", "max", "sum"].iter().map(|v| cell("temporal", v)).collect(),
            Axis::Integrator => ["mean", "max", "forward", "transformer"]
                .iter()
                .map(|v| cell("integrator", v))
                .collect(),
            Axis::Lambda => ["0.05", "0.1", "0.15", "0.2"].iter().map(|v| cell("lambda", v)).collect(),
            Axis::ActionSpace => ["1", "2", "3", "4", "5"].iter().map(|v| cell("delta", v)).collect(),
            Axis::InitialFrame => ["true", "false"].iter().map(|v| cell("initial_fusion", v)).collect(),
            Axis::Strategy => vec![("adaptive".into(), "", String::new())],
        }
    }
}

/// Fixed sampling strategies compared against the adaptive policy. They are
/// evaluated with the warm-up backbone of the adaptive cell.
pub const FIXED_STRATEGIES: [(&str, Mode); 5] = [
    ("all", Mode::All),
    ("uniform25", Mode::Uniform(0.25)),
    ("uniform50", Mode::Uniform(0.5)),
    ("random25", Mode::Random(0.25)),
    ("random50", Mode::Random(0.5)),
];

pub const ABLATION_HEADER: &str = "axis,cell,top1,mAP,frame_rate,frames_mean,gflops";
pub const PLOT_HEADER: &str = "run,accuracy,mAP,frame_rate,gflops";

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn env_pairs() -> Vec<(String, String)> {
    std::env::vars().collect()
}

pub fn resolve_config(args: &ConfigArgs, env: &[(String, String)]) -> Result<RunConfig> {
    let text = match &args.config {
        Some(p) => Some(
            fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let mut overrides = Vec::new();
    if let Some(p) = &args.preset {
        overrides.push(("preset".to_string(), p.clone()));
    }
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    parse_config(text.as_deref(), env, &overrides)
}

pub fn parse_mode(s: &str) -> Result<Mode> {
    let frac = |v: &str| -> Result<f64> {
        let f: f64 = v.parse().map_err(|_| Error::Config(format!("bad fraction {v:?}")))?;
        if f > 0.0 && f <= 1.0 {
            Ok(f)
        } else {
            Err(Error::Config(format!("fraction {f} outside (0, 1]")))
        }
    };
    match s.split_once(':') {
        None if s == "argmax" => Ok(Mode::Argmax),
        None if s == "sample" => Ok(Mode::Sample),
        None if s == "all" => Ok(Mode::All),
        Some(("uniform", f)) => Ok(Mode::Uniform(frac(f)?)),
        Some(("random", f)) => Ok(Mode::Random(frac(f)?)),
        _ => Err(Error::Config(format!("unknown mode {s:?}"))),
    }
}

pub fn execute(command: Command) -> Result<String> {
    match command {
        Command::Train { cfg, out, force } => {
            let cfg = resolve_config(&cfg, &env_pairs())?;
            cmd_train(&cfg, &out, force)
        }
        Command::Eval { run, mode } => cmd_eval(&run, parse_mode(&mode)?),
        Command::Ablate {
            cfg,
            axis,
            out,
            jobs,
            force,
        } => {
            let cfg = resolve_config(&cfg, &env_pairs())?;
            cmd_ablate(&cfg, axis, &out, jobs, force)
        }
        Command::Plot { runs, out, force } => cmd_plot(&runs, &out, force),
        Command::GenData { cfg, out, force } => {
            let cfg = resolve_config(&cfg, &env_pairs())?;
            cmd_gen_data(&cfg, &out, force)
        }
    }
}

pub fn cmd_train(cfg: &RunConfig, out: &Path, force: bool) -> Result<String> {
    let data = load_data(cfg)?;
    let outcome = run(cfg, &data, Some(out), RunOptions { stop_after: None, force })?;
    let report = outcome.report.ok_or_else(|| Error::InvalidArgument("run did not finish".into()))?;
    Ok(report.to_text())
}

/// Loads the config snapshot and the latest stage checkpoint of a run.
pub fn load_run(dir: &Path) -> Result<(RunConfig, Model)> {
    let text = fs::read_to_string(dir.join(CONFIG_FILE))
        .map_err(|e| Error::Config(format!("{} is not a run directory: {e}", dir.display())))?;
    let cfg = parse_config(Some(&text), &[], &[])?;
    let stage = (1..=3u8)
        .rev()
        .find(|&s| stage_checkpoint(dir, s).exists())
        .ok_or_else(|| Error::Config(format!("{} has no checkpoint", dir.display())))?;
    let data = load_data(&cfg)?;
    let mut model = Model::new(model_config(&cfg, &data), cfg.seed)?;
    model.store.load_from(&load_checkpoint(&stage_checkpoint(dir, stage))?)?;
    Ok((cfg, model))
}

pub fn cmd_eval(dir: &Path, mode: Mode) -> Result<String> {
    let (cfg, model) = load_run(dir)?;
    let data = load_data(&cfg)?;
    Ok(evaluate(&model, &data.test, mode, cfg.frame_basis, cfg.seed)?.report.to_text())
}

fn guard_output(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn ablation_row(axis: Axis, cell: &str, r: &CostReport) -> String {
    format!(
        "{},{cell},{},{},{},{},{}",
        axis.name(),
        fmt_sig6(r.top1),
        fmt_sig6(r.map),
        fmt_sig6(r.frame_rate),
        fmt_sig6(r.frames_mean),
        fmt_sig6(r.gflops())
    )
}

/// Runs one ablation cell, reusing its report when it already finished.
fn ablation_cell(cfg: &RunConfig, dir: &Path, force: bool) -> Result<CostReport> {
    if !force {
        if let Ok(text) = fs::read_to_string(dir.join(REPORT_FILE)) {
            return CostReport::from_text(&text);
        }
    }
    let data = load_data(cfg)?;
    run(cfg, &data, Some(dir), RunOptions { stop_after: None, force })?
        .report
        .ok_or_else(|| Error::InvalidArgument("run did not finish".into()))
}

pub fn cmd_ablate(cfg: &RunConfig, axis: Axis, out: &Path, jobs: usize, force: bool) -> Result<String> {
    let table_path = out.join(format!("ablation_{}.csv", axis.name()));
    guard_output(&table_path, force)?;
    let mut cells = Vec::new();
    for (name, key, value) in axis.cells() {
        let mut c = cfg.clone();
        if !key.is_empty() {
            c.set(key, &value)?;
            c.validate()?;
        }
        cells.push((name, c));
    }
    fs::create_dir_all(out)?;
    let jobs = jobs.max(1);
    let mut reports: Vec<Option<Result<CostReport>>> = (0..cells.len()).map(|_| None).collect();
    for chunk_start in (0..cells.len()).step_by(jobs) {
        let chunk = &cells[chunk_start..(chunk_start + jobs).min(cells.len())];
        let done: Vec<Result<CostReport>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(name, c)| {
                    let dir = out.join(name);
                    s.spawn(move || ablation_cell(c, &dir, force))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("ablation cell panicked".into()))))
                .collect()
        });
        for (i, r) in done.into_iter().enumerate() {
            reports[chunk_start + i] = Some(r);
        }
    }
    let mut table = String::from(ABLATION_HEADER);
    table.push('\n');
    for ((name, _), r) in cells.iter().zip(reports) {
        let r = r.expect("every cell ran")?;
        let _ = writeln!(table, "{}", ablation_row(axis, name, &r));
    }
    if axis == Axis::Strategy {
        let dir = out.join("adaptive");
        let data = load_data(cfg)?;
        let mut model = Model::new(model_config(cfg, &data), cfg.seed)?;
        model.store.load_from(&load_checkpoint(&stage_checkpoint(&dir, 1))?)?;
        for (name, mode) in FIXED_STRATEGIES {
            let r = evaluate(&model, &data.test, mode, cfg.frame_basis, cfg.seed)?.report;
            let _ = writeln!(table, "{}", ablation_row(axis, name, &r));
        }
    }
    fs::write(&table_path, &table)?;
    Ok(table)
}

/// One scatter point per completed run, sorted by run name.
pub fn plot_points(runs: &[PathBuf]) -> Result<Vec<(String, CostReport)>> {
    let mut points = Vec::with_capacity(runs.len());
    for dir in runs {
        let text = fs::read_to_string(dir.join(REPORT_FILE))
            .map_err(|_| Error::Config(format!("{} has no cost report", dir.display())))?;
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        points.push((name, CostReport::from_text(&text)?));
    }
    points.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(points)
}

pub fn plot_csv(points: &[(String, CostReport)]) -> String {
    let mut s = String::from(PLOT_HEADER);
    s.push('\n');
    for (name, r) in points {
        let _ = writeln!(
            s,
            "{name},{},{},{},{}",
            fmt_sig6(r.top1),
            fmt_sig6(r.map),
            fmt_sig6(r.frame_rate),
            fmt_sig6(r.gflops())
        );
    }
    s
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter of top-1 accuracy against modeled GFLOPs.
pub fn scatter_svg(points: &[(String, CostReport)]) -> String {
    let (w, h, pad) = (640.0, 480.0, 60.0);
    let gmax = points.iter().map(|(_, r)| r.gflops()).fold(0.0f64, f64::max).max(1e-9) * 1.1;
    let x = |g: f64| pad + g / gmax * (w - 2.0 * pad);
    let y = |a: f64| h - pad - a * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">GFLOPs per video</text>"#,
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 18 {})">top-1 accuracy</text>"#,
        h / 2.0,
        h / 2.0
    );
    for i in 0..=4 {
        let a = i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="11">{a}</text>"#,
            pad - 6.0,
            y(a) + 4.0
        );
        let g = gmax * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="11">{}</text>"#,
            x(g),
            h - pad + 16.0,
            fmt_sig6((g * 100.0).round() / 100.0)
        );
    }
    for (name, r) in points {
        let (px, py) = (x(r.gflops()), y(r.top1));
        let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="4" fill="steelblue"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            px + 6.0,
            py - 6.0,
            escape_xml(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn cmd_plot(runs: &[PathBuf], out: &Path, force: bool) -> Result<String> {
    let points = plot_points(runs)?;
    let (svg_path, csv_path) = (out.join("scatter.svg"), out.join("scatter.csv"));
    guard_output(&svg_path, force)?;
    guard_output(&csv_path, force)?;
    fs::create_dir_all(out)?;
    let csv = plot_csv(&points);
    fs::write(&svg_path, scatter_svg(&points))?;
    fs::write(&csv_path, &csv)?;
    Ok(csv)
}

pub fn cmd_gen_data(cfg: &RunConfig, out: &Path, force: bool) -> Result<String> {
    guard_output(&out.join("train"), force)?;
    let data = crate::data::generate_synthetic(&cfg.synthetic)?;
    if force {
        for split in ["train", "test"] {
            let d = out.join(split);
            if d.exists() {
                fs::remove_dir_all(d)?;
            }
        }
    }
    write_feature_dir(out, &data)?;
    Ok(format!(
        "wrote {} train and {} test videos to {}\n",
        data.train.len(),
        data.test.len(),
        out.display()
    ))
}
