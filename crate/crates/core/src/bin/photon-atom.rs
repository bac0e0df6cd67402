//! Command-line front end: simulate, synthesize, analyze, shape, fit and
//! extinction. Exit codes: 0 success, 2 configuration, 3 physics or
//! numerics, 4 data format.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use photon_atom::cavity::{cavity_decay_time, shape_conditional_probe, CavityParams};
use photon_atom::config::SimConfig;
use photon_atom::dynamics::extinction_closed_form;
use photon_atom::envelope::{default_grid, make_decaying, make_rising, Profile};
use photon_atom::estimation::{
    combine_tau_p, fit_envelope, fit_lambda, DeltaData, EnvelopeFit, FitReport,
};
use photon_atom::io::{read_json, write_envelope_csv, write_json, ParamsFile, Provenance};
use photon_atom::pipeline::{
    analyze_dataset, simulate, synthesize_to_dir, write_analysis, write_simulation,
    AnalysisOptions, Dataset,
};
use photon_atom::reconstruction::{
    counts_to_rate, extinction_from_data, subtract_accidentals, DEFAULT_SIGNAL_WINDOW,
};
use photon_atom::synthesis::{threads_from_env, EfficiencyChain};
use photon_atom::{Error, Result};

#[derive(Parser)]
#[command(
    name = "photon-atom",
    version,
    about = "Single-photon excitation of a single atom: model, synthetic data and analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the model and write P_e, rates, delta and a summary.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Override the integration step, ns.
        #[arg(long)]
        dt_ns: Option<f64>,
    },
    /// Draw coincidence histograms G_f0, G_f, G_b.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10_000_000)]
        heralds: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Override the forward bin width, ns.
        #[arg(long)]
        dt_ns: Option<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Reconstruct P_e, extinction and fits from histograms.
    Analyze {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Shape a conditional probe envelope with a cavity on the herald arm.
    Shape {
        /// Cavity parameters as JSON.
        cavity: PathBuf,
        /// Photon coherence time of the pair source, ns.
        tau_p: f64,
        #[arg(long)]
        detuning_mhz: Option<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Fit tau_p and the spatial overlap from histograms.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Closed-form extinction for a parameter file, plus data estimates when
    /// histograms are given.
    Extinction {
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Histogram directories (one per envelope) or files `g_f0 g_f [g_b]`.
    inputs: Vec<PathBuf>,
    /// Parameter file `{tau0_ns, tau_p_ns, lambda}`.
    #[arg(long)]
    config: PathBuf,
    /// Envelope profile, when the sidecars do not record it.
    #[arg(long)]
    profile: Option<Profile>,
    /// Extinction and fit window `a,b` in ns.
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    window_ns: Option<(f64, f64)>,
}

fn parse_window(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected `a,b`")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if a.is_nan() || b.is_nan() || a >= b {
        return Err(format!("window start {a} must precede end {b}"));
    }
    Ok((a, b))
}

fn config_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn print_json(v: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("JSON values always serialize")
    );
}

fn load_datasets(args: &DataArgs) -> Result<Vec<Dataset>> {
    if args.inputs.is_empty() {
        return Err(Error::Config("no histogram inputs given".into()));
    }
    if args.inputs.iter().all(|p| p.is_dir()) {
        return args
            .inputs
            .iter()
            .map(|d| Dataset::load_dir(d, args.profile))
            .collect();
    }
    match args.inputs.as_slice() {
        [f0, f] => Ok(vec![Dataset::load_files(f0, f, None, args.profile)?]),
        [f0, f, b] => Ok(vec![Dataset::load_files(f0, f, Some(b), args.profile)?]),
        _ => Err(Error::Config(
            "give histogram directories, or the files g_f0 g_f [g_b]".into(),
        )),
    }
}

fn data_provenance(args: &DataArgs) -> Result<Provenance> {
    let mut files = vec![args.config.clone()];
    for p in &args.inputs {
        if p.is_dir() {
            for name in ["g_f0.csv", "g_f.csv", "g_b.csv"] {
                let f = p.join(name);
                if f.exists() {
                    files.push(f);
                }
            }
        } else {
            files.push(p.clone());
        }
    }
    let refs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    Provenance::of_files(&refs)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out_dir,
            dt_ns,
        } => {
            let mut cfg = SimConfig::load(&config)?;
            if let Some(dt) = dt_ns {
                cfg.grid.step_ns = dt;
            }
            let sim = simulate(&cfg, config_dir(&config), Provenance::of_files(&[&config])?)?;
            write_simulation(&sim, &out_dir)?;
            print_json(&serde_json::to_value(&sim.summary)?);
        }
        Command::Synth {
            config,
            heralds,
            seed,
            dt_ns,
            out_dir,
        } => {
            let mut cfg = SimConfig::load(&config)?;
            if let Some(dt) = dt_ns {
                cfg.bins.forward_dt_ns = dt;
            }
            let text = std::fs::read(&config)?;
            let args = format!(
                "heralds={heralds} seed={seed} forward_dt_ns={}",
                cfg.bins.forward_dt_ns
            );
            let prov = Provenance::of_inputs(&[&text, args.as_bytes()]);
            let set = synthesize_to_dir(
                &cfg,
                config_dir(&config),
                heralds,
                seed,
                threads_from_env(),
                &out_dir,
                &prov,
            )?;
            print_json(&json!({
                "out_dir": out_dir,
                "n_heralds": heralds,
                "seed": seed,
                "total_g_f0": set.g_f0.total(),
                "total_g_f": set.g_f.total(),
                "total_g_b": set.g_b.total(),
            }));
        }
        Command::Analyze { data, out_dir } => {
            let params = ParamsFile::load(&data.config)?;
            let datasets = load_datasets(&data)?;
            let opts = AnalysisOptions {
                window: data.window_ns,
                ..AnalysisOptions::default()
            };
            let analysis = analyze_dataset(&datasets, &params, &opts, data_provenance(&data)?)?;
            write_analysis(&analysis, &out_dir)?;
            print_json(&serde_json::to_value(&analysis.report)?);
        }
        Command::Shape {
            cavity,
            tau_p,
            detuning_mhz,
            out_dir,
        } => {
            let mut cav: CavityParams = read_json(&cavity)
                .map_err(|e| Error::Config(format!("{}: {e}", cavity.display())))?;
            if let Some(d) = detuning_mhz {
                cav.detuning_mhz = d;
            }
            let grid = default_grid(tau_p)?;
            let env = shape_conditional_probe(&cav, tau_p, grid)?;
            let overlap_up = env.overlap(&make_rising(tau_p, grid)?)?;
            let overlap_down = env.overlap(&make_decaying(tau_p, grid)?)?;
            std::fs::create_dir_all(&out_dir)?;
            let path = out_dir.join("envelope.csv");
            let args = format!("tau_p={tau_p} detuning_mhz={}", cav.detuning_mhz);
            let text = std::fs::read(&cavity)?;
            write_envelope_csv(
                &path,
                &env,
                &Provenance::of_inputs(&[&text, args.as_bytes()]),
            )?;
            print_json(&json!({
                "envelope_csv": path,
                "cavity_decay_time_ns": cavity_decay_time(&cav),
                "detuning_mhz": cav.detuning_mhz,
                "overlap_rising": overlap_up,
                "overlap_decaying": overlap_down,
            }));
        }
        Command::Fit { data, out_dir } => {
            let params = ParamsFile::load(&data.config)?;
            let atom = params.atom()?;
            let chain = EfficiencyChain::measured();
            let datasets = load_datasets(&data)?;
            let mut fits: Vec<EnvelopeFit> = Vec::new();
            let mut deltas = Vec::new();
            for ds in &datasets {
                let window = data.window_ns.unwrap_or(ds.profile.extinction_window());
                let c0 = subtract_accidentals(&ds.g_f0.to_binned(), DEFAULT_SIGNAL_WINDOW)?;
                fits.push(fit_envelope(
                    &ds.g_f0.to_binned(),
                    ds.profile,
                    window,
                    c0.floor,
                )?);
                let c1 = subtract_accidentals(&ds.g_f.to_binned(), DEFAULT_SIGNAL_WINDOW)?;
                deltas.push(
                    DeltaData::from_counts(
                        &c0.corrected,
                        &c1.corrected,
                        &chain,
                        ds.profile,
                        window,
                    )?
                    .with_floors(c0.floor, c1.floor),
                );
            }
            let refs: Vec<&EnvelopeFit> = fits.iter().collect();
            let tau_p = combine_tau_p(&refs);
            let lambda = fit_lambda(&deltas, tau_p.0, atom.tau0())?;
            let report = FitReport::new(&refs, tau_p, &lambda);
            let value = json!({
                "fit": report,
                "envelopes": fits.iter().zip(&datasets).map(|(f, ds)| json!({
                    "profile": f.profile,
                    "tau_p_ns": f.tau_p,
                    "tau_p_sigma": f.tau_p_sigma,
                    "eta_f": f.eta_f(ds.g_f0.n_heralds as f64),
                    "chi2_reduced": f.chi2_reduced,
                    "n_iterations": f.n_iterations,
                })).collect::<Vec<_>>(),
                "provenance": data_provenance(&data)?,
            });
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)?;
                write_json(&dir.join("fit.json"), &value)?;
            }
            print_json(&value);
        }
        Command::Extinction { data } => {
            let params = ParamsFile::load(&data.config)?;
            let atom = params.atom()?;
            let mut value =
                json!({ "epsilon_closed_form": extinction_closed_form(&atom, params.tau_p_ns) });
            if !data.inputs.is_empty() {
                let chain = EfficiencyChain::measured();
                let mut rows = Vec::new();
                for ds in load_datasets(&data)? {
                    let window = data.window_ns.unwrap_or(ds.profile.extinction_window());
                    let c0 = subtract_accidentals(&ds.g_f0.to_binned(), DEFAULT_SIGNAL_WINDOW)?;
                    let c1 = subtract_accidentals(&ds.g_f.to_binned(), DEFAULT_SIGNAL_WINDOW)?;
                    let r_f0 = counts_to_rate(&c0.corrected, &chain)?;
                    let r_f = counts_to_rate(&c1.corrected, &chain)?;
                    let (eps, sigma) = extinction_from_data(&r_f0, &r_f, window)?;
                    rows.push(json!({ "profile": ds.profile, "window_ns": window, "epsilon": eps, "epsilon_sigma": sigma }));
                }
                value["data"] = json!(rows);
            }
            print_json(&value);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
