use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use illusionflow::flowio::{flow_to_png, read_flow, wheel_legend, write_flow};
use illusionflow::harness::{self, ResultsStore, SuiteConfig};
use illusionflow::meflow::{
    build_bank, estimate_flow, motion_energy, probe_unit_tuning, rank_rotation_units,
    write_ranking_csv, write_tunings_csv, Activation, EstimatorParams, ProbeGrid,
};
use illusionflow::metrics::{score, MaskPolicy};
use illusionflow::percept::{behavioral_target, target_flow, DirectionReport};
use illusionflow::stimgen::{
    render, render_control, render_related, write_png, write_stimulus, ColorScheme, Family,
    RasterImage, Sense, StimulusSpec,
};
use illusionflow::viewsim::{
    generate, read_sequence, write_sequence, ConditionKind, ExportOptions,
    ViewingCondition, DEFAULT_DIRECTION, DEFAULT_ONSET_FRAME,
};

#[derive(Parser)]
#[command(name = "illusionflow", version, about = "Illusory motion stimuli, motion energy flow and flow scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a stimulus to PNG, with its spec alongside as TOML.
    GenStimulus {
        #[command(flatten)]
        stim: StimArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Render a stimulus and simulate a viewing condition.
    GenSequence {
        #[command(flatten)]
        stim: StimArgs,
        #[command(flatten)]
        cond: CondArgs,
        /// Output directory for frames and manifest.json.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        fixation_cross: bool,
        #[arg(long)]
        gif: bool,
    },
    /// Write the percept target flow for a stimulus under a condition.
    GenTarget {
        #[command(flatten)]
        stim: StimArgs,
        #[command(flatten)]
        cond: CondArgs,
        #[arg(long, default_value_t = 1.0)]
        magnitude: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Build a behavioral target from a direction report instead.
        #[arg(long, value_enum)]
        report: Option<ReportArg>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run the built-in motion energy estimator on a frame directory.
    Estimate {
        /// Directory written by gen-sequence.
        frames: PathBuf,
        /// Estimator parameters as TOML.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Override the working scale.
        #[arg(long)]
        scale: Option<f64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score one prediction against a target, or a flow directory against a suite.
    Score {
        /// Predicted flow file.
        #[arg(long, conflicts_with_all = ["flow_dir", "config"])]
        pred: Option<PathBuf>,
        #[arg(long, requires = "pred")]
        target: Option<PathBuf>,
        /// Directory in the `<stimulus>/<condition>/<file>` layout.
        #[arg(long, requires = "config")]
        flow_dir: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = harness::FLOW_FILE)]
        file_name: String,
        #[arg(long, value_enum, default_value_t = PolicyArg::TargetDisk)]
        mask: PolicyArg,
        /// Write per-cell results as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run a suite config.
    RunSuite { config: PathBuf },
    /// Run the g1/g2 sweep of a suite config against direction reports.
    RunGsweep { config: PathBuf },
    /// Measure unit tunings with drifting Gabor probes; optionally rank units
    /// by rotation-induced activation change.
    ProbeUnits {
        #[arg(long)]
        params: Option<PathBuf>,
        /// Probe grid as TOML.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Rotation sequence directory.
        #[arg(long, requires_all = ["static_frames", "ranking"])]
        rotation: Option<PathBuf>,
        /// Static sequence directory.
        #[arg(long = "static")]
        static_frames: Option<PathBuf>,
        #[arg(long)]
        ranking: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ActivationArg::Mean)]
        activation: ActivationArg,
    },
    /// Render a flow file with the color wheel encoding.
    VizFlow {
        flow: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Magnitude mapped to full brightness; defaults to the field maximum.
        #[arg(long)]
        scale: Option<f64>,
        /// Also write a legend of this size next to the output.
        #[arg(long)]
        legend: Option<u32>,
    },
}

#[derive(Args, Clone)]
struct StimArgs {
    /// Full stimulus spec as TOML; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    #[arg(long, value_enum)]
    color: Option<ColorArg>,
    #[arg(long, value_enum)]
    sense: Option<SenseArg>,
    #[arg(long)]
    g1: Option<f64>,
    #[arg(long)]
    g2: Option<f64>,
    #[arg(long)]
    canvas: Option<u32>,
    #[arg(long)]
    margin: Option<u32>,
    #[arg(long)]
    antialias: bool,
    /// Render the permuted control.
    #[arg(long, conflicts_with = "related")]
    control: bool,
    /// Render the non-illusory related image.
    #[arg(long)]
    related: bool,
}

#[derive(Args, Clone)]
struct CondArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Static)]
    kind: KindArg,
    #[arg(long, default_value_t = 15)]
    n_frames: usize,
    #[arg(long, default_value_t = 30)]
    delta: u32,
    #[arg(long, default_value_t = DEFAULT_DIRECTION)]
    direction: u32,
    /// Number of evenly spaced shifts.
    #[arg(long, default_value_t = 1)]
    shifts: usize,
    /// Explicit shift frames, comma separated.
    #[arg(long, value_delimiter = ',')]
    shift_frames: Option<Vec<usize>>,
    #[arg(long, default_value_t = DEFAULT_ONSET_FRAME)]
    onset: usize,
    /// Degrees per frame for veridical rotation; defaults to 2 px/frame at the boundary.
    #[arg(long, allow_hyphen_values = true)]
    omega: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    allow_any_delta: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Snakes,
    Pdi,
    Cdi,
    Ouchi,
}

#[derive(Clone, Copy, ValueEnum)]
enum ColorArg {
    G,
    By,
    Rg,
}

#[derive(Clone, Copy, ValueEnum)]
enum SenseArg {
    Ccw,
    Cw,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Static,
    Onset,
    Shift,
    RandomSlip,
    Peripheral,
    Rotation,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportArg {
    Cw,
    Unclear,
    Ccw,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Intersection,
    TargetDisk,
    FullFrame,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Mean,
    Peak,
}

impl StimArgs {
    fn spec(&self) -> Result<StimulusSpec> {
        let mut s: StimulusSpec = match &self.spec {
            Some(p) => toml::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
            None => StimulusSpec::default(),
        };
        if let Some(f) = self.family {
            s.family = match f {
                FamilyArg::Snakes => Family::RotatingSnakes,
                FamilyArg::Pdi => Family::PeripheralDrift,
                FamilyArg::Cdi => Family::CentralDrift,
                FamilyArg::Ouchi => Family::Ouchi,
            };
        }
        if let Some(c) = self.color {
            s.color_scheme = match c {
                ColorArg::G => ColorScheme::Grayscale,
                ColorArg::By => ColorScheme::BlueYellow,
                ColorArg::Rg => ColorScheme::RedGreen,
            };
        }
        if let Some(d) = self.sense {
            s.sense = match d {
                SenseArg::Ccw => Sense::Ccw,
                SenseArg::Cw => Sense::Cw,
            };
        }
        s.g1 = self.g1.unwrap_or(s.g1);
        s.g2 = self.g2.unwrap_or(s.g2);
        s.canvas_px = self.canvas.unwrap_or(s.canvas_px);
        s.margin_px = self.margin.unwrap_or(s.margin_px);
        s.antialias |= self.antialias;
        s.validate()?;
        Ok(s)
    }

    fn render(&self, spec: &StimulusSpec) -> Result<RasterImage> {
        Ok(if self.control {
            render_control(spec)?
        } else if self.related {
            render_related(spec)?
        } else {
            render(spec)?
        })
    }
}

impl CondArgs {
    fn condition(&self, spec: &StimulusSpec) -> Result<ViewingCondition> {
        let timing = |k| {
            self.shift_frames
                .clone()
                .unwrap_or_else(|| illusionflow::viewsim::default_shift_frames(self.n_frames, k))
        };
        let base = ViewingCondition {
            n_frames: self.n_frames,
            allow_any_delta: self.allow_any_delta,
            ..ViewingCondition::default()
        };
        let c = match self.kind {
            KindArg::Static => ViewingCondition::static_view(self.n_frames),
            KindArg::Onset => ViewingCondition::onset(self.n_frames, self.onset),
            KindArg::Shift | KindArg::Peripheral => ViewingCondition {
                kind: if matches!(self.kind, KindArg::Shift) {
                    ConditionKind::Shift
                } else {
                    ConditionKind::PeripheralShift
                },
                delta_px: self.delta,
                direction_deg: self.direction,
                shift_frames: timing(self.shifts),
                ..base
            },
            KindArg::RandomSlip => ViewingCondition::random_slip(self.n_frames, self.seed),
            KindArg::Rotation => {
                let omega = self
                    .omega
                    .unwrap_or_else(|| (2.0 / spec.disk().radius).to_degrees());
                ViewingCondition::rotation(self.n_frames, omega)
            }
        };
        c.validate()?;
        Ok(c)
    }
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn load_params(path: Option<&Path>) -> Result<EstimatorParams> {
    let p = match path {
        Some(p) => toml::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => EstimatorParams::default(),
    };
    p.validate()?;
    Ok(p)
}

fn policy(p: PolicyArg) -> MaskPolicy {
    match p {
        PolicyArg::Intersection => MaskPolicy::Intersection,
        PolicyArg::TargetDisk => MaskPolicy::TargetDisk,
        PolicyArg::FullFrame => MaskPolicy::FullFrame,
    }
}

fn summarize(store: &ResultsStore) -> Outcome {
    let failed = store.n_failed();
    println!(
        "{} cells, {} failed; results in {}",
        store.cells.len(),
        failed,
        store.output.display()
    );
    if failed > 0 {
        for c in store.cells.iter().filter(|c| c.report.is_err()).take(10) {
            if let Err(e) = &c.report {
                eprintln!("  {} {} {}: {e}", c.key("model"), c.key("stimulus"), c.key("condition"));
            }
        }
        Outcome::Partial
    } else {
        Outcome::Ok
    }
}

enum Outcome {
    Ok,
    Partial,
}

fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::GenStimulus { stim, out } => {
            let spec = stim.spec()?;
            let img = stim.render(&spec)?;
            write_stimulus(&spec, &img, &out)?;
        }
        Command::GenSequence {
            stim,
            cond,
            out,
            fixation_cross,
            gif,
        } => {
            let spec = stim.spec()?;
            let c = cond.condition(&spec)?;
            let seq = generate(&stim.render(&spec)?, &c)?;
            write_sequence(&seq, &out, ExportOptions { fixation_cross, gif })?;
            println!("{} frames, {} events -> {}", seq.len(), seq.events.len(), out.display());
        }
        Command::GenTarget {
            stim,
            cond,
            magnitude,
            gamma,
            report,
            out,
        } => {
            let spec = stim.spec()?;
            let c = cond.condition(&spec)?;
            let entry = harness::StimulusEntry {
                id: spec.id(),
                variant: harness::Variant::Illusion,
                spec,
            };
            let t = harness::cell_target(&entry, &c, &harness::PerceptConfig { magnitude, gamma })?;
            let field = match report {
                None => target_flow(&t)?,
                Some(r) => behavioral_target(
                    match r {
                        ReportArg::Cw => DirectionReport::Cw,
                        ReportArg::Unclear => DirectionReport::Unclear,
                        ReportArg::Ccw => DirectionReport::Ccw,
                    },
                    &t,
                )?,
            };
            write_flow(&field, &out)?;
        }
        Command::Estimate {
            frames,
            params,
            scale,
            out,
        } => {
            let mut p = load_params(params.as_deref())?;
            if let Some(s) = scale {
                p.scale = s;
            }
            let seq = read_sequence(&frames)?;
            let bank = build_bank(&p.bank)?;
            let flow = estimate_flow(&seq.frames, &bank, &p)?;
            write_flow(&flow, &out)?;
            let (u, v) = flow.mean_vector().unwrap_or((0.0, 0.0));
            println!("mean flow ({u:.4}, {v:.4}) px/frame over {} valid pixels", flow.n_valid());
        }
        Command::Score {
            pred,
            target,
            flow_dir,
            config,
            file_name,
            mask,
            csv,
        } => {
            if let (Some(pred), Some(target)) = (&pred, &target) {
                let p = read_flow(pred)?;
                let t = read_flow(target)?;
                if (p.width, p.height) != (t.width, t.height) {
                    bail!("prediction is {}x{}, target is {}x{}", p.width, p.height, t.width, t.height);
                }
                let r = score(&p, &t, policy(mask), Default::default())?;
                println!(
                    "rho {} (degenerate {}) epe {} ae {} n_valid {}",
                    r.rho, r.rho_degenerate, r.mean_epe, r.mean_ae, r.n_valid
                );
            } else if let (Some(dir), Some(cfg)) = (&flow_dir, &config) {
                let mut cfg = SuiteConfig::load(cfg)?;
                cfg.mask_policy = policy(mask);
                let cells = harness::score_external(dir, &cfg, &file_name)?;
                if let Some(path) = &csv {
                    harness::write_results_csv(&cells, path)?;
                }
                let failed = cells.iter().filter(|c| c.report.is_err()).count();
                for c in &cells {
                    match &c.report {
                        Ok(r) => println!("{} {} rho {} epe {} ae {}", c.key("stimulus"), c.key("condition"), r.rho, r.mean_epe, r.mean_ae),
                        Err(e) => println!("{} {} error: {e}", c.key("stimulus"), c.key("condition")),
                    }
                }
                if failed > 0 {
                    return Ok(Outcome::Partial);
                }
            } else {
                bail!(illusionflow::Error::Config(
                    "score needs --pred and --target, or --flow-dir and --config".into()
                ));
            }
        }
        Command::RunSuite { config } => {
            let cfg = SuiteConfig::load(&config)?;
            return Ok(summarize(&harness::run_suite(&cfg)?));
        }
        Command::RunGsweep { config } => {
            let cfg = SuiteConfig::load(&config)?;
            return Ok(summarize(&harness::run_gsweep(&cfg)?));
        }
        Command::ProbeUnits {
            params,
            grid,
            out,
            rotation,
            static_frames,
            ranking,
            activation,
        } => {
            let p = load_params(params.as_deref())?;
            let g: ProbeGrid = match &grid {
                Some(path) => toml::from_str(&read_text(path)?)?,
                None => ProbeGrid::default(),
            };
            let bank = build_bank(&p.bank)?;
            let tunings = probe_unit_tuning(&bank, &g)?;
            write_tunings_csv(&tunings, &out)?;
            let hits = tunings
                .iter()
                .zip(&bank.units)
                .filter(|(t, u)| {
                    (t.direction_deg - u.direction_deg).abs() < 1e-9
                        && (t.sf - u.sf).abs() < 1e-12
                        && (t.tf - u.tf).abs() < 1e-12
                })
                .count();
            println!("{hits}/{} units peak at their nominal probe", tunings.len());
            if let (Some(rot), Some(stat), Some(rank_out)) = (rotation, static_frames, ranking) {
                let e_rot = motion_energy(&read_sequence(&rot)?.frames, &bank, &p)?;
                let e_static = motion_energy(&read_sequence(&stat)?.frames, &bank, &p)?;
                let act = match activation {
                    ActivationArg::Mean => Activation::Mean,
                    ActivationArg::Peak => Activation::Peak,
                };
                let ranked = rank_rotation_units(&e_rot, &e_static, act)?;
                write_ranking_csv(&ranked, &bank, &rank_out)?;
                println!("{} units ranked", ranked.len());
            }
        }
        Command::VizFlow {
            flow,
            out,
            scale,
            legend,
        } => {
            let f = read_flow(&flow)?;
            let img = flow_to_png(&f, scale.is_none(), scale.unwrap_or(1.0))?;
            write_png(&img, &out)?;
            if let Some(size) = legend {
                let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                write_png(&wheel_legend(size), &out.with_file_name(format!("{stem}_legend.png")))?;
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage mistakes are configuration errors; 2 is reserved for partial runs
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
