//! Config-driven suites behind the command-line tool. Every suite writes
//! its CSVs atomically, evaluates its invariants, and records a manifest.

pub mod config;
pub mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gauss_bench::{analytic_mi, export_sweep, trace_csv, variance_sweep, EstimatorChoice, GaussianTask, VarianceReport};
use crate::gradcheck;
use crate::io::write_atomic;
use crate::losses::{LossConfig, LossMethod};
use crate::policy::ResponseCategories;
use crate::starvation::{
    dv_directional_derivative, loglog_slope, starvation_sweep, sweep_csv, CriticKind, StarvationInstance, StarvationProbe,
};
use crate::toy_sim::{export_trajectory, run_training, ScenarioConfig, TrajectoryLog};

pub use config::{ExperimentConfig, Suite};
pub use svg::{render_svg, ChartSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub suite: String,
    pub artifact_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub wall_clock_seconds: f64,
    pub files: Vec<ManifestFile>,
    pub checks: Vec<Check>,
}

impl RunManifest {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// Fixed-width table of the checks.
    pub fn summary(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = format!("{} (seed {}, {:.1}s)\n", self.suite, self.seed, self.wall_clock_seconds);
        for c in &self.checks {
            let status = if c.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("  {status}  {:width$}  {}\n", c.name, c.detail));
        }
        out
    }
}

struct SuiteOutput {
    files: Vec<PathBuf>,
    checks: Vec<Check>,
}

fn manifest_name(suite: Suite) -> String {
    format!("manifest-{}.toml", suite.name())
}

/// Runs one suite into `out`, writes `manifest-<suite>.toml`, and returns
/// the manifest. Invariant failures are reported in the manifest rather
/// than as errors.
pub fn run(suite: Suite, config: &ExperimentConfig, seed_override: Option<u64>, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    let config = config.resolved(seed_override);
    let seed = config.seed();
    std::fs::create_dir_all(out)?;
    let output = match suite {
        Suite::Toy => toy_suite(&config, seed, out)?,
        Suite::Gauss => gauss_suite(&config, seed, out)?,
        Suite::Starvation => starvation_suite(&config, seed, out)?,
        Suite::Gradcheck => gradcheck_suite(&config, seed, out)?,
        Suite::Report => report_suite(&config, out)?,
    };
    let mut files = Vec::with_capacity(output.files.len());
    for path in &output.files {
        let bytes = std::fs::read(path)?;
        files.push(ManifestFile {
            path: path.strip_prefix(out).unwrap_or(path).display().to_string(),
            sha256: config::hex(&Sha256::digest(&bytes)),
        });
    }
    let manifest = RunManifest {
        suite: suite.name().into(),
        artifact_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_hash: config.hash()?,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        files,
        checks: output.checks,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    write_atomic(&out.join(manifest_name(suite)), text.as_bytes())?;
    Ok(manifest)
}

fn toy_suite(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<SuiteOutput> {
    let section = &config.toy;
    LossConfig::new(LossMethod::Dpo, section.beta)?;
    let cells: Vec<ScenarioConfig> = section
        .methods
        .iter()
        .flat_map(|&method| {
            section.scenarios.iter().flat_map(move |&scenario| {
                (0..section.seeds.max(1)).map(move |k| {
                    let mut c = ScenarioConfig::new(scenario, method, seed + k);
                    let small = |m: Option<f64>| m.map(|_| section.small_mass);
                    c.chosen_mass = small(c.chosen_mass);
                    c.rejected_mass = small(c.rejected_mass);
                    c.steps = section.steps;
                    c.batch = section.batch;
                    c.loss.beta = section.beta;
                    c.step_size = section.step_size;
                    c.optimizer = section.optimizer;
                    c.parameterization = section.parameterization;
                    c.negative_pool = section.negative_pool;
                    c
                })
            })
        })
        .collect();
    let logs: Vec<(ScenarioConfig, TrajectoryLog)> = cells
        .into_par_iter()
        .map(|c| run_training(&c).map(|log| (c, log)))
        .collect::<Result<_>>()?;

    let mut files = Vec::new();
    for (c, log) in &logs {
        let path = out.join(format!("toy_{}_scenario{}_seed{}.csv", c.loss.method.name(), c.scenario, c.seed));
        export_trajectory(log, &path)?;
        files.push(path);
    }
    Ok(SuiteOutput {
        files,
        checks: toy_checks(&logs),
    })
}

/// Invariants per (method, scenario), each required across all seeds.
pub fn toy_checks(logs: &[(ScenarioConfig, TrajectoryLog)]) -> Vec<Check> {
    let cats = ResponseCategories::standard();
    let mut groups: BTreeMap<(&'static str, u8), Vec<&(ScenarioConfig, TrajectoryLog)>> = BTreeMap::new();
    for cell in logs {
        groups.entry((cell.0.loss.method.name(), cell.0.scenario)).or_default().push(cell);
    }
    let mut checks = Vec::new();
    for ((method, scenario), cells) in groups {
        let ends = |f: fn(&crate::toy_sim::TrajectoryRecord) -> f64| -> Vec<(f64, f64)> {
            cells
                .iter()
                .map(|(_, log)| (f(log.initial().expect("record")), f(log.last().expect("record"))))
                .collect()
        };
        let norm = cells.iter().map(|(_, log)| log.max_normalization_error(&cats)).fold(0.0, f64::max);
        checks.push(Check::new(
            format!("toy {method} scenario {scenario} normalization"),
            norm <= 1e-10,
            format!("max error {norm:.2e}"),
        ));
        let rejected = ends(|r| r.rejected_mean);
        checks.push(Check::new(
            format!("toy {method} scenario {scenario} rejected decreases"),
            rejected.iter().all(|(a, b)| b < a),
            format!("final/initial {}", ratios(&rejected)),
        ));
        let chosen = ends(|r| r.chosen_mean);
        let config = &cells[0].0;
        if config.loss.method == LossMethod::Mio {
            checks.push(Check::new(
                format!("toy mio scenario {scenario} chosen retained"),
                chosen.iter().all(|(a, b)| *b >= 0.95 * a),
                format!("final/initial {} (need >= 0.95)", ratios(&chosen)),
            ));
        } else if config.rejected_mass.is_some() {
            checks.push(Check::new(
                format!("toy dpo scenario {scenario} chosen collapses"),
                chosen.iter().all(|(a, b)| b < a),
                format!("final/initial {} (need < 1)", ratios(&chosen)),
            ));
        }
    }
    checks
}

fn ratios(pairs: &[(f64, f64)]) -> String {
    pairs.iter().map(|(a, b)| format!("{:.3}", b / a)).collect::<Vec<_>>().join(" ")
}

fn gauss_suite(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<SuiteOutput> {
    let section = &config.gauss;
    let template = GaussianTask {
        rho: 0.0,
        batch: section.batch,
        negatives: section.negatives,
        steps: section.steps,
        step_size: section.step_size,
        variance_window: section.variance_window,
        seed,
    };
    let seeds: Vec<u64> = (0..section.seeds.max(1)).map(|k| seed + k).collect();
    let reports = variance_sweep(&template, &section.rhos, &section.kinds, &seeds)?;
    let sweep_path = out.join("gauss_sweep.csv");
    export_sweep(&reports, &sweep_path)?;
    let mut files = vec![sweep_path];
    if section.write_traces {
        for r in &reports {
            let path = out.join(format!("gauss_trace_{}_rho{}_seed{}.csv", r.kind.name(), r.rho, r.seed));
            write_atomic(&path, &trace_csv(r)?)?;
            files.push(path);
        }
    }
    Ok(SuiteOutput {
        files,
        checks: gauss_checks(&reports)?,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Seed-averaged accuracy and lower-bound checks for MINE, the
/// JSD-versus-MINE variance comparison at ρ ≥ 0.5, and monotonicity in |ρ|.
pub fn gauss_checks(reports: &[VarianceReport]) -> Result<Vec<Check>> {
    let mut by_cell: BTreeMap<(String, &'static str), Vec<&VarianceReport>> = BTreeMap::new();
    let mut rhos: Vec<f64> = Vec::new();
    for r in reports {
        by_cell.entry((format!("{:+.6}", r.rho), r.kind.name())).or_default().push(r);
        if !rhos.contains(&r.rho) {
            rhos.push(r.rho);
        }
    }
    rhos.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let cell = |rho: f64, kind: EstimatorChoice| by_cell.get(&(format!("{rho:+.6}"), kind.name()));
    let mut checks = Vec::new();
    for &rho in &rhos {
        let mi = analytic_mi(rho)?;
        if let Some(mine) = cell(rho, EstimatorChoice::Mine) {
            let avg = mean(&mine.iter().map(|r| r.final_estimate).collect::<Vec<_>>());
            checks.push(Check::new(
                format!("gauss mine accuracy rho={rho}"),
                (avg - mi).abs() <= 0.15,
                format!("mean {avg:.4} vs {mi:.4}"),
            ));
            checks.push(Check::new(
                format!("gauss mine lower bound rho={rho}"),
                avg <= mi + 0.1,
                format!("mean {avg:.4} <= {:.4}", mi + 0.1),
            ));
        }
        if let (Some(mine), Some(jsd)) = (cell(rho, EstimatorChoice::Mine), cell(rho, EstimatorChoice::Jsd)) {
            if rho.abs() >= 0.5 {
                let mut wins = 0usize;
                let mut total = 0usize;
                for j in jsd.iter() {
                    if let Some(m) = mine.iter().find(|m| m.seed == j.seed) {
                        total += 1;
                        wins += usize::from(j.gradient_variance < m.gradient_variance);
                    }
                }
                let need = (4 * total).div_ceil(5);
                checks.push(Check::new(
                    format!("gauss jsd variance below mine rho={rho}"),
                    total > 0 && wins >= need,
                    format!("{wins}/{total} seeds (need {need})"),
                ));
            }
        }
    }
    for kind in [EstimatorChoice::Mine, EstimatorChoice::Jsd] {
        let avgs: Vec<f64> = rhos
            .iter()
            .filter_map(|&rho| cell(rho, kind).map(|rs| mean(&rs.iter().map(|r| r.final_estimate).collect::<Vec<_>>())))
            .collect();
        if avgs.len() > 1 {
            checks.push(Check::new(
                format!("gauss {} monotone in |rho|", kind.name()),
                avgs.windows(2).all(|w| w[1] >= w[0]),
                avgs.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "),
            ));
        }
    }
    Ok(checks)
}

fn starvation_suite(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<SuiteOutput> {
    let section = &config.starvation;
    let mut files = Vec::new();
    let mut checks = Vec::new();
    for &l in &section.lipschitz {
        let rows = starvation_sweep(l, &section.pi_stars, seed)?;
        let path = out.join(format!("starvation_sweep_L{l}.csv"));
        write_atomic(&path, &sweep_csv(&rows, seed)?)?;
        files.push(path);
        let worst = rows.iter().map(|r| r.measured - r.bound).fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::new(
            format!("starvation bound L={l}"),
            rows.iter().all(|r| r.measured <= r.bound + 1e-10),
            format!("max measured - bound {worst:.2e}"),
        ));
        let slope = loglog_slope(&rows);
        checks.push(Check::new(format!("starvation decay slope L={l}"), slope >= 0.9, format!("slope {slope:.4}")));
        checks.push(Check::new(
            format!("starvation monotone decay L={l}"),
            rows.windows(2).all(|w| (w[1].pi_star < w[0].pi_star) == (w[1].measured < w[0].measured)),
            "measured follows pi*",
        ));
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["instance", "critic_kind", "zero_support", "autodiff", "decomposition"])?;
    let mut worst = [0.0f64; 3];
    for i in 0..section.instances {
        for (slot, (critic, zero_support)) in [
            (CriticKind::ThetaIndependent, i % 2 == 0),
            (CriticKind::LogRatio, true),
            (CriticKind::Lipschitz(1.0), true),
        ]
        .into_iter()
        .enumerate()
        {
            let probe = StarvationProbe {
                x_star: 1,
                y_star: 3,
                critic,
                zero_support,
            };
            let d = dv_directional_derivative(&StarvationInstance::random(probe, seed.wrapping_add(i))?)?;
            w.write_record([
                i.to_string(),
                critic.name(),
                zero_support.to_string(),
                d.autodiff.to_string(),
                d.decomposition().to_string(),
            ])?;
            worst[slot.min(1)] = worst[slot.min(1)].max(if slot < 2 { d.autodiff.abs() } else { 0.0 });
            worst[2] = worst[2].max((d.autodiff - d.decomposition()).abs());
        }
    }
    let path = out.join("starvation_exact_zero.csv");
    write_atomic(&path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    files.push(path);
    checks.push(Check::new(
        "starvation theta-independent critic zero",
        worst[0] <= 1e-12,
        format!("max |d| {:.2e}", worst[0]),
    ));
    checks.push(Check::new(
        "starvation log-ratio critic zero",
        worst[1] <= 1e-10,
        format!("max |d| {:.2e}", worst[1]),
    ));
    checks.push(Check::new(
        "starvation autodiff matches decomposition",
        worst[2] <= 1e-10,
        format!("max gap {:.2e}", worst[2]),
    ));
    Ok(SuiteOutput { files, checks })
}

fn gradcheck_suite(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<SuiteOutput> {
    let section = &config.gradcheck;
    let rows = gradcheck::run_all(section.points, seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["suite", "points", "max_relative_error", "pass"])?;
    let mut checks = Vec::new();
    for r in &rows {
        let pass = r.max_relative_error < section.tolerance;
        w.write_record([r.suite.to_string(), r.points.to_string(), r.max_relative_error.to_string(), pass.to_string()])?;
        checks.push(Check::new(
            format!("gradcheck {}", r.suite),
            pass,
            format!("max rel err {:.2e} over {} points", r.max_relative_error, r.points),
        ));
    }
    let path = out.join("gradcheck.csv");
    write_atomic(&path, &w.into_inner().map_err(|e| Error::Io(e.into_error()))?)?;
    Ok(SuiteOutput {
        files: vec![path],
        checks,
    })
}

/// Chart layout for a CSV header, if it is one we know how to draw.
pub fn chart_for(name: &str, header: &[String]) -> Option<ChartSpec> {
    let has = |c: &str| header.iter().any(|h| h == c);
    let spec = |x: &str, series: &[&str], log_x, log_y| ChartSpec {
        title: name.to_string(),
        x: x.into(),
        series: series.iter().map(|s| s.to_string()).collect(),
        log_x,
        log_y,
    };
    if has("chosen_mean") {
        Some(spec("step", &["chosen_mean", "rejected_mean", "unseen_mean"], false, true))
    } else if has("pi_star") {
        Some(spec("pi_star", &["measured", "bound"], true, true))
    } else if has("estimate") && has("step") {
        Some(spec("step", &["estimate"], false, false))
    } else {
        None
    }
}

fn report_suite(config: &ExperimentConfig, out: &Path) -> Result<SuiteOutput> {
    let inputs: Vec<PathBuf> = if config.report.inputs.is_empty() {
        let mut found: Vec<PathBuf> = std::fs::read_dir(out)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        found.sort();
        found
    } else {
        config.report.inputs.iter().map(|p| out.join(p)).collect()
    };
    let mut files = Vec::new();
    let mut checks = Vec::new();
    for input in inputs {
        let bytes = std::fs::read(&input)?;
        let header: Vec<String> = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(bytes.as_slice())
            .headers()?
            .iter()
            .map(str::to_string)
            .collect();
        let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let Some(spec) = chart_for(&stem, &header) else {
            continue;
        };
        let result = render_svg(&bytes, &spec);
        checks.push(Check::new(
            format!("report {stem}"),
            result.is_ok(),
            result.as_ref().err().map(ToString::to_string).unwrap_or_else(|| "rendered".into()),
        ));
        if let Ok(svg) = result {
            let path = input.with_extension("svg");
            write_atomic(&path, svg.as_bytes())?;
            files.push(path);
        }
    }
    Ok(SuiteOutput { files, checks })
}
