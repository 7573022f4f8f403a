use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use oift::contention::calibration::calibrate;
use oift::contention::success_sweep;
use oift::energy::MIN_SAMPLES;
use oift::error::Result;
use oift::freq::{
    cutoff_frequency, default_grid, noise_limit, stability_region_check, worst_case_gain, FrequencyResponse,
    StabilityVerdict,
};
use oift::ift::Mode;
use oift::io::ExperimentConfig;
use oift::optimizer::optimize_with;
use oift::sim::{compare_strategies, run, run_seeds, RunMetrics};

#[derive(Parser)]
#[command(name = "oift", version, about = "Information-flow topology optimization for CACC platoons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set sim.seed=7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Stability verdicts, cut-off frequencies and noise limits per mode.
    Stability(Common),
    /// Broadcast success rates over densities and activated shares.
    Contention(Common),
    /// Optimal information-flow topology for the configured platoon.
    Optimize(Common),
    /// Simulate one strategy for `sim.seed`, or every configured seed.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        all_seeds: bool,
    },
    /// Run all three strategies over the configured seeds.
    Compare(Common),
    /// Fit the contention coefficients to the slot-level Monte-Carlo.
    Calibrate(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    match &common.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path, &common.overrides)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((cfg, base))
        }
        None => Ok((ExperimentConfig::from_json("{}", &common.overrides)?, PathBuf::from("."))),
    }
}

fn out_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir)?;
    Ok(cfg.output_dir.clone())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Serialize)]
struct ModeReport {
    verdict: StabilityVerdict,
    cutoff_rad_s: Option<f64>,
    noise_limit_t1: f64,
    noise_limit_t2: f64,
    max_link_gain: f64,
}

fn stability(common: &Common) -> Result<()> {
    let (cfg, _) = load(common)?;
    let dir = out_dir(&cfg)?;
    let grid = default_grid();
    let mut reports = Vec::new();
    println!("{:<6} {:>8} {:>8} {:>8} {:>10} {:>10}", "mode", "h*wK", "stable", "noise", "cutoff", "max|SS|");
    for mode in Mode::ALL {
        let p = &cfg.controller;
        let verdict = stability_region_check(p, mode);
        let values = grid.iter().map(|&w| worst_case_gain(p, mode, w)).collect::<Result<Vec<_>>>()?;
        let response = FrequencyResponse::new(grid.clone(), values)?;
        response.write_csv(create(&dir.join(format!("response_{}.csv", mode.to_string().to_lowercase())))?)?;
        let (t1, t2) = noise_limit(p, mode);
        let report = ModeReport {
            verdict,
            cutoff_rad_s: cutoff_frequency(p, mode).ok(),
            noise_limit_t1: t1,
            noise_limit_t2: t2,
            max_link_gain: response.max_magnitude(),
        };
        println!(
            "{:<6} {:>8.3} {:>8} {:>8} {:>10} {:>10.6}",
            mode.to_string(),
            verdict.product,
            if verdict.string_stable { "pass" } else { "FAIL" },
            if verdict.noise_bounded { "pass" } else { "FAIL" },
            report.cutoff_rad_s.map_or("-".to_string(), |w| format!("{w:.5}")),
            report.max_link_gain
        );
        reports.push(report);
    }
    write_json(&dir.join("stability.json"), &reports)
}

fn contention(common: &Common) -> Result<()> {
    let (cfg, _) = load(common)?;
    let dir = out_dir(&cfg)?;
    let fractions: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    let points = success_sweep(&cfg.traffic, &cfg.densities, &fractions, &cfg.coefficients)?;
    let mut w = csv::Writer::from_writer(create(&dir.join("contention.csv"))?);
    for p in &points {
        w.serialize(p)?;
    }
    w.flush()?;
    print!("{:<10}", "share");
    for k in &cfg.densities {
        print!(" {:>9}", format!("k={k}"));
    }
    println!();
    for (fi, f) in fractions.iter().enumerate() {
        print!("{f:<10.1}");
        for di in 0..cfg.densities.len() {
            print!(" {:>9.4}", points[di * fractions.len() + fi].p_unsat);
        }
        println!();
    }
    Ok(())
}

fn optimize(common: &Common) -> Result<()> {
    let (cfg, base) = load(common)?;
    let dir = out_dir(&cfg)?;
    let leader = cfg.leader(&base)?;
    let period = (cfg.sim.update_period_tau / cfg.sim.dt).round() as usize;
    let spectrum = leader.window_spectrum(0, period + 1, MIN_SAMPLES)?;
    spectrum.write_csv(create(&dir.join("spectrum.csv"))?)?;
    let result = optimize_with(cfg.platoon_size, &cfg.link(), &cfg.controller, &spectrum, &cfg.optimizer.into())?;
    fs::write(dir.join("optimize.json"), result.to_json()? + "\n")?;
    println!("ift             {}", result.best_ift);
    println!("expected energy {:.6}", result.best_expected_energy.value());
    println!("wall time       {:.3} s", result.wall_time_s);
    Ok(())
}

fn save_run(dir: &Path, m: &RunMetrics) -> Result<()> {
    let stem = format!("run_{}_{}", m.strategy.to_string().to_lowercase(), m.seed);
    m.write_csv(create(&dir.join(format!("{stem}.csv")))?)?;
    let mut json = create(&dir.join(format!("{stem}.json")))?;
    m.write_summary_json(&mut json)?;
    Ok(())
}

fn simulate(common: &Common, all_seeds: bool) -> Result<()> {
    let (cfg, base) = load(common)?;
    let dir = out_dir(&cfg)?;
    let leader = cfg.leader(&base)?;
    let setup = cfg.setup();
    let runs = if all_seeds { run_seeds(&setup, &leader, &cfg.seeds)? } else { vec![run(&setup, &leader)?] };
    println!("{:<6} {:>6} {:>14} {:>12} {:>12}", "", "seed", "energy", "std e_1", "std e_N");
    for m in &runs {
        save_run(&dir, m)?;
        let n = m.platoon_size - 1;
        println!(
            "{:<6} {:>6} {:>14.4} {:>12.5} {:>12.5}",
            m.strategy.to_string(),
            m.seed,
            m.total_energy,
            m.spacing_error_std[1],
            m.spacing_error_std[n]
        );
    }
    Ok(())
}

fn compare(common: &Common) -> Result<()> {
    let (cfg, base) = load(common)?;
    let dir = out_dir(&cfg)?;
    let leader = cfg.leader(&base)?;
    let c = compare_strategies(&cfg.setup(), &leader, &cfg.seeds)?;
    write_json(&dir.join("compare.json"), &c)?;
    let tables = c.render_tables();
    fs::write(dir.join("compare.txt"), &tables)?;
    print!("{tables}");
    Ok(())
}

#[derive(Serialize)]
struct CalibrationReport<'a> {
    coefficients: &'a oift::contention::ContentionCoefficients,
    mean_error: f64,
    std_error: f64,
    rows: usize,
}

fn calibrate_cmd(common: &Common) -> Result<()> {
    let (cfg, _) = load(common)?;
    let dir = out_dir(&cfg)?;
    let cal = calibrate(&cfg.calibration)?;
    cal.write_csv(create(&dir.join("calibration.csv"))?)?;
    let (mean, std) = cal.error_stats();
    let c = &cal.coefficients;
    write_json(
        &dir.join("calibration.json"),
        &CalibrationReport { coefficients: c, mean_error: mean, std_error: std, rows: cal.rows.len() },
    )?;
    println!("k1 = {:.6}  k2 = {:.6}  k3 = {:.6}", c.k1, c.k2, c.k3);
    println!("fit error: mean {mean:+.5}, std {std:.5} over {} rows", cal.rows.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Stability(c) => stability(c),
        Command::Contention(c) => contention(c),
        Command::Optimize(c) => optimize(c),
        Command::Simulate { common, all_seeds } => simulate(common, *all_seeds),
        Command::Compare(c) => compare(c),
        Command::Calibrate(c) => calibrate_cmd(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
