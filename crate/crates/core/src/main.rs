use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::Matrix3;
use serde_json::json;

use tdm_core::calibration::{
    fit_classical, fit_equilibrium, fit_visco_grid, log_space_lm_options, predict_eq,
    predict_eq_with, DatasetFit,
};
use tdm_core::classical::{cauchy_classical, ClassicalModel};
use tdm_core::config::{load_params, CampaignConfig, DatasetEntry, MapConfig, SweepConfig};
use tdm_core::drivers::{linspace, sweep, SweepMode};
use tdm_core::hyperelastic::{cauchy_ehm, energy_ehm, kirchhoff_ehm, EhmParams, Material};
use tdm_core::io::{
    dataset_curve, fitted_curve, format_number, grid_surface_csv, rms_table_csv, sweep_curve,
    time_series_curve, CurveFile,
};
use tdm_core::lm::LmOptions;
use tdm_core::synth::{cyclic_campaign, equilibrium_campaign, CampaignGrids};
use tdm_core::tensor::{DefGrad, SymTensor3};
use tdm_core::visco::{
    dissipation_map, dissipation_per_cycle, simulate_cyclic, LoadMode, LoadProgram, ViscoParams,
};
use tdm_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tdm",
    version,
    about = "Exponentiated Hencky models for tire-derived material"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stress and energy at a single deformation state, as JSON.
    Eval(EvalArgs),
    /// Equilibrium stress–strain curve of one deformation mode.
    Sweep(SweepArgs),
    /// Cyclic viscoelastic simulation with dissipation summary.
    Simulate(CampaignArgs),
    /// Equilibrium calibration against the campaign datasets.
    Fit(CampaignArgs),
    /// Per-cell viscoelastic calibration of the cyclic datasets.
    FitGrid(CampaignArgs),
    /// Classical models against the same datasets as the equilibrium fit.
    Compare(CompareArgs),
    /// Writes a synthetic campaign generated from known parameters.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ParamSource {
    /// Published parameter set (TDM500, TDM600, TDM800).
    #[arg(long, conflicts_with = "params")]
    material: Option<Material>,
    /// JSON file with equilibrium parameters.
    #[arg(long)]
    params: Option<PathBuf>,
}

impl ParamSource {
    fn resolve(&self) -> Result<(EhmParams, String)> {
        match (&self.material, &self.params) {
            (Some(m), _) => Ok((m.params(), m.label().to_string())),
            (None, Some(p)) => Ok((
                load_params(p)?,
                p.file_stem()
                    .map_or_else(|| "custom".into(), |s| s.to_string_lossy().into_owned()),
            )),
            (None, None) => Err(Error::Input("give --material or --params".into())),
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    source: ParamSource,
    /// Simple shear amount.
    #[arg(long, allow_hyphen_values = true, group = "state")]
    gamma: Option<f64>,
    /// Principal log stretches l1,l2,l3.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        group = "state"
    )]
    log_stretch: Option<Vec<f64>>,
    /// Deformation gradient, nine values in row-major order.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        group = "state"
    )]
    def_grad: Option<Vec<f64>>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: ParamSource,
    /// Run every sweep listed in a campaign config instead.
    #[arg(long, conflicts_with_all = ["mode", "material", "params"])]
    config: Option<PathBuf>,
    /// shear, uniaxial or pseudo_hydro.
    #[arg(long)]
    mode: Option<SweepMode>,
    #[arg(long, allow_hyphen_values = true)]
    start: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    stop: Option<f64>,
    #[arg(long, default_value_t = 50)]
    points: usize,
    /// Output file (single sweep) or directory (config); stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    campaign: CampaignArgs,
    /// Comma-separated classical models; overrides the config.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ClassicalModel>>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    material: Material,
    /// Noise seed; required so every campaign is reproducible.
    #[arg(long)]
    seed: u64,
    /// Relative standard deviation of multiplicative stress noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Also write a 2 × 2 grid of cyclic shear cells.
    #[arg(long)]
    cyclic: bool,
    #[arg(long)]
    out_dir: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn pretty(v: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn matrix_rows(t: &SymTensor3) -> Vec<Vec<f64>> {
    (0..3)
        .map(|i| (0..3).map(|j| t.get(i, j)).collect())
        .collect()
}

fn eval(a: &EvalArgs) -> Result<()> {
    let (p, label) = a.source.resolve()?;
    let f = if let Some(g) = a.gamma {
        DefGrad::simple_shear(g)
    } else if let Some(l) = &a.log_stretch {
        let [l1, l2, l3] = l[..] else {
            return Err(Error::Input(format!(
                "--log-stretch needs 3 values, got {}",
                l.len()
            )));
        };
        DefGrad::from_log_stretches(l1, l2, l3)
    } else if let Some(v) = &a.def_grad {
        if v.len() != 9 {
            return Err(Error::Input(format!(
                "--def-grad needs 9 values, got {}",
                v.len()
            )));
        }
        DefGrad::new(Matrix3::from_row_slice(v))?
    } else {
        return Err(Error::Input(
            "give --gamma, --log-stretch or --def-grad".into(),
        ));
    };
    let log_v = f.log_left_stretch()?;
    let out = json!({
        "material": label,
        "det_F": f.det(),
        "log_V": matrix_rows(&log_v),
        "kirchhoff_MPa": matrix_rows(&kirchhoff_ehm(&log_v, &p)),
        "cauchy_MPa": matrix_rows(&cauchy_ehm(&log_v, &p)),
        "energy_MPa": energy_ehm(&log_v, &p)?,
    });
    print!("{}", pretty(&out)?);
    Ok(())
}

fn run_sweep(
    mode: SweepMode,
    start: f64,
    stop: f64,
    points: usize,
    p: &EhmParams,
    label: &str,
) -> Result<CurveFile> {
    if points < 2 {
        return Err(Error::Input("a sweep needs at least 2 points".into()));
    }
    Ok(sweep_curve(
        &sweep(mode, &linspace(start, stop, points), p)?,
        label,
    ))
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    if let Some(cfg_path) = &a.config {
        let cfg = CampaignConfig::load(cfg_path)?;
        let dir = a
            .output
            .clone()
            .ok_or_else(|| Error::Input("--output DIR is required with --config".into()))?;
        if cfg.sweeps.is_empty() {
            return Err(Error::Input("config lists no sweeps".into()));
        }
        create_dir(&dir)?;
        let p = cfg.eq_params()?;
        for s in &cfg.sweeps {
            let curve = run_sweep(s.mode, s.start, s.stop, s.points, &p, &cfg.material)?;
            curve.save(&dir.join(format!("sweep_{}.csv", s.mode.name())))?;
        }
        return Ok(());
    }
    let (p, label) = a.source.resolve()?;
    let (Some(mode), Some(start), Some(stop)) = (a.mode, a.start, a.stop) else {
        return Err(Error::Input(
            "give --mode, --start and --stop (or --config)".into(),
        ));
    };
    let curve = run_sweep(mode, start, stop, a.points, &p, &label)?;
    match &a.output {
        Some(path) => curve.save(path),
        None => {
            print!("{}", curve.to_csv_string());
            Ok(())
        }
    }
}

fn simulate(a: &CampaignArgs) -> Result<()> {
    let cfg = CampaignConfig::load(&a.config)?;
    let eq = cfg.eq_params()?;
    let vp = cfg.visco_params.unwrap_or_default();
    let lp = cfg.load_program.unwrap_or_default();
    create_dir(&a.out_dir)?;
    let series = simulate_cyclic(&lp, &eq, &vp)?;
    let d = dissipation_per_cycle(&series)?;
    let mode = match lp.mode {
        LoadMode::Shear => "shear",
        LoadMode::Uniaxial => "uniaxial",
    };
    time_series_curve(&series, &cfg.material)
        .save(&a.out_dir.join(format!("simulate_{mode}.csv")))?;
    let summary = json!({
        "material": cfg.material,
        "load_program": lp,
        "visco_params": vp,
        "dissipation_MPa_per_cycle": d,
    });
    let text = pretty(&summary)?;
    write(&a.out_dir.join("simulate_summary.json"), &text)?;
    if let Some(MapConfig {
        frequencies,
        amplitudes,
    }) = &cfg.dissipation_map
    {
        let cells = dissipation_map(&lp, frequencies, amplitudes, &eq, &vp)?;
        let mut curve = CurveFile::new(&["frequency_Hz", "amplitude", "dissipation_MPa"])
            .with_meta("mode", format!("cyclic_{mode}"))
            .with_meta("material", &cfg.material)
            .with_meta(
                "units",
                "frequency: Hz, amplitude: -, dissipation: MPa per cycle",
            )
            .with_meta("pre_strain", format_number(lp.pre_strain));
        for c in cells {
            curve.push_row(vec![c.frequency, c.amplitude, c.dissipation])?;
        }
        curve.save(&a.out_dir.join("dissipation_map.csv"))?;
    }
    print!("{text}");
    Ok(())
}

fn fit(a: &CampaignArgs) -> Result<()> {
    let cfg = CampaignConfig::load(&a.config)?;
    let data = cfg.datasets()?;
    let fit = fit_equilibrium(
        &data,
        &cfg.initial_guess()?,
        &cfg.fit_problem(),
        cfg.snap_m,
        &log_space_lm_options(),
    )?;
    create_dir(&a.out_dir)?;
    write(&a.out_dir.join("fit_result.json"), &pretty(&fit)?)?;
    let best = fit.preferred();
    for d in data.iter().filter(|d| !d.mode.is_cyclic()) {
        let curve = fitted_curve(d, &predict_eq(&best.params, d)?, "ehm")?;
        curve.save(&a.out_dir.join(format!("fitted_{}.csv", file_safe(&d.name))))?;
    }
    print!(
        "{}",
        pretty(&json!({
            "params": best.params,
            "converged": best.result.converged,
            "stop_reason": best.result.stop_reason,
            "per_dataset": best.result.per_dataset,
        }))?
    );
    if !best.result.converged {
        return Err(Error::NonConvergence(format!(
            "equilibrium fit stopped: {}",
            best.result.stop_reason
        )));
    }
    Ok(())
}

fn fit_grid(a: &CampaignArgs) -> Result<()> {
    let cfg = CampaignConfig::load(&a.config)?;
    let eq = cfg.eq_params()?;
    let data = cfg.datasets()?;
    if !data.iter().any(|d| d.mode.is_cyclic()) {
        return Err(Error::Input("config lists no cyclic datasets".into()));
    }
    let initial = cfg.visco_initial.unwrap_or_default();
    let cells = fit_visco_grid(
        &data,
        &eq,
        &initial,
        &cfg.cyclic_options(),
        &log_space_lm_options(),
    );
    create_dir(&a.out_dir)?;
    write(
        &a.out_dir.join("parameter_surface.csv"),
        &grid_surface_csv(&cells)?,
    )?;
    write(&a.out_dir.join("fit_grid.json"), &pretty(&cells)?)?;
    let failed: Vec<&str> = cells
        .iter()
        .filter(|c| c.fit.as_ref().is_none_or(|f| !f.result.converged))
        .map(|c| c.dataset.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(Error::NonConvergence(format!(
            "cells did not converge: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<()> {
    let cfg = CampaignConfig::load(&a.campaign.config)?;
    let data = cfg.datasets()?;
    let models = a
        .models
        .clone()
        .or_else(|| cfg.classical_models.clone())
        .unwrap_or_else(|| {
            vec![
                ClassicalModel::ArrudaBoyce,
                ClassicalModel::MooneyRivlin,
                ClassicalModel::Ogden3,
            ]
        });
    let out = &a.campaign.out_dir;
    create_dir(out)?;
    let eq_data: Vec<_> = data.iter().filter(|d| !d.mode.is_cyclic()).collect();

    let ehm = fit_equilibrium(
        &data,
        &cfg.initial_guess()?,
        &cfg.fit_problem(),
        cfg.snap_m,
        &log_space_lm_options(),
    )?;
    let ehm = ehm.preferred();
    let mut table: Vec<(String, DatasetFit)> = Vec::new();
    let mut summary = serde_json::Map::new();
    for d in &eq_data {
        fitted_curve(d, &predict_eq(&ehm.params, d)?, "ehm")?
            .save(&out.join(format!("compare_ehm_{}.csv", file_safe(&d.name))))?;
    }
    table.extend(
        ehm.result
            .per_dataset
            .iter()
            .map(|f| ("ehm".to_string(), f.clone())),
    );
    summary.insert(
        "ehm".into(),
        json!({"params": ehm.params, "result": ehm.result}),
    );

    let mut failures = Vec::new();
    for model in models {
        let fit = match fit_classical(model, &data, &LmOptions::default()) {
            Ok(f) => f,
            Err(e) => {
                failures.push(format!("{}: {e}", model.name()));
                summary.insert(model.name().into(), json!({"error": e.to_string()}));
                continue;
            }
        };
        for d in &eq_data {
            let blocks = predict_eq_with(&|f: &DefGrad| cauchy_classical(f, &fit.params), d)?;
            fitted_curve(d, &blocks, model.name())?.save(&out.join(format!(
                "compare_{}_{}.csv",
                model.name(),
                file_safe(&d.name)
            )))?;
        }
        table.extend(
            fit.result
                .per_dataset
                .iter()
                .map(|f| (model.name().to_string(), f.clone())),
        );
        summary.insert(
            model.name().into(),
            json!({"params": fit.params, "result": fit.result}),
        );
    }
    write(&out.join("compare_rms.csv"), &rms_table_csv(&table)?)?;
    write(&out.join("compare.json"), &pretty(&summary)?)?;
    print!("{}", rms_table_csv(&table)?);
    if !failures.is_empty() {
        return Err(Error::NonConvergence(failures.join("; ")));
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let p = a.material.params();
    let label = a.material.label();
    create_dir(&a.out_dir)?;
    let mut entries = Vec::new();
    let mut data = equilibrium_campaign(&p, &CampaignGrids::default(), a.noise, a.seed)?;
    if a.cyclic {
        let programs: Vec<LoadProgram> = [0.5, 2.0]
            .iter()
            .flat_map(|&frequency| {
                [0.5, 1.0].iter().map(move |&amplitude| LoadProgram {
                    frequency,
                    amplitude,
                    ..LoadProgram::default()
                })
            })
            .collect();
        // separate stream so the equilibrium sets do not depend on --cyclic
        data.extend(cyclic_campaign(
            &p,
            &ViscoParams::default(),
            &programs,
            a.noise,
            a.seed.wrapping_add(1),
        )?);
    }
    for d in &mut data {
        d.meta.density = Some(label.to_string());
        let file = format!("{}.csv", file_safe(&d.name));
        let mut curve = dataset_curve(d);
        curve.set_meta("seed", a.seed);
        curve.set_meta("noise", format_number(a.noise));
        curve.save(&a.out_dir.join(&file))?;
        entries.push(DatasetEntry {
            path: file.into(),
            mode: d.mode,
            weight: 1.0,
            name: Some(d.name.clone()),
            frequency: None,
            amplitude: None,
            pre_strain: None,
        });
    }
    let cfg = CampaignConfig {
        material: label.to_string(),
        params: None,
        visco_params: Some(ViscoParams::default()),
        datasets: entries,
        initial: None,
        bounds: None,
        snap_m: true,
        sweeps: vec![
            SweepConfig {
                mode: SweepMode::Shear,
                start: 0.0,
                stop: 1.0,
                points: 21,
            },
            SweepConfig {
                mode: SweepMode::Uniaxial,
                start: 0.0,
                stop: -0.7,
                points: 21,
            },
            SweepConfig {
                mode: SweepMode::PseudoHydro,
                start: 0.0,
                stop: -0.4,
                points: 21,
            },
        ],
        load_program: Some(LoadProgram::default()),
        dissipation_map: Some(MapConfig {
            frequencies: vec![0.5, 1.0, 2.0],
            amplitudes: vec![0.25, 0.5, 1.0],
        }),
        classical_models: None,
        visco_initial: None,
        cyclic: None,
        base_dir: a.out_dir.clone(),
    };
    write(&a.out_dir.join("campaign.json"), &pretty(&cfg)?)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::FitGrid(a) => fit_grid(a),
        Command::Compare(a) => compare(a),
        Command::Synth(a) => synth(a),
    }
}

fn fail(kind: &str, message: String, code: i32) -> ExitCode {
    let body = json!({"error": {"kind": kind, "message": message, "exit_code": code}});
    eprintln!("{body}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return fail("usage", e.render().to_string().trim_end().to_string(), 2),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string(), e.exit_code()),
    }
}
