//! Config-driven evaluation runs.
//!
//! A suite expands a stimulus grid and a list of condition templates into
//! cells, renders each sequence, builds its percept target, obtains flow from
//! every configured model and scores it. Output layout under `output`:
//!
//! ```text
//! <stimulus_id>/<condition_id>/target.flo
//! <stimulus_id>/<condition_id>/report.csv
//! <stimulus_id>/<condition_id>/frames/frame_0000.png ...   (write_frames)
//! flows/<model_id>/<stimulus_id>/<condition_id>/flow.flo    (builtin models)
//! results.csv, heatmap_{rho,epe,ae}.csv, stats.csv, run_meta.json
//! ```
//!
//! External models are read from `<dir>/<stimulus_id>/<condition_id>/flow.flo`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::field::FlowField;
use crate::flowio::{read_flow, wire_precision, write_flow};
use crate::meflow::{build_bank, estimate_flow, EstimatorParams, GaborBank, FRAME_DISK_PX};
use crate::metrics::{score, wilcoxon_one_sided, wilcoxon_paired, Alternative, MaskPolicy, ScoreReport};
use crate::par;
use crate::percept::{behavioral_target, target_flow, DirectionReport, PerceptTarget};
use crate::stimgen::{
    render, render_control, ColorScheme, Family, RasterImage, Sense, StimulusSpec,
};
use crate::viewsim::{
    generate, plan, write_sequence, ConditionKind, ExportOptions, FrameSequence,
    ViewingCondition, DEFAULT_DIRECTION,
};

pub const FLOW_FILE: &str = "flow.flo";
pub const TARGET_FILE: &str = "target.flo";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptConfig {
    pub magnitude: f64,
    pub gamma: f64,
}

impl Default for PerceptConfig {
    fn default() -> Self {
        Self {
            magnitude: 1.0,
            gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimulusGrid {
    /// Settings shared by every stimulus; grid axes override its fields.
    pub base: StimulusSpec,
    pub families: Vec<Family>,
    pub color_schemes: Vec<ColorScheme>,
    pub senses: Vec<Sense>,
    /// `(g1, g2)` luminance pairs.
    pub g_pairs: Vec<[f64; 2]>,
    /// Pair each rotating-snakes illusion with its control.
    pub controls: bool,
}

impl Default for StimulusGrid {
    fn default() -> Self {
        let base = StimulusSpec::default();
        Self {
            g_pairs: vec![[base.g1, base.g2]],
            base,
            families: vec![Family::RotatingSnakes],
            color_schemes: vec![
                ColorScheme::Grayscale,
                ColorScheme::BlueYellow,
                ColorScheme::RedGreen,
            ],
            senses: vec![Sense::Ccw],
            controls: true,
        }
    }
}

/// One `[[conditions]]` entry; list-valued fields expand into a product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionTemplate {
    pub kind: ConditionKind,
    pub n_frames: usize,
    pub deltas: Vec<u32>,
    pub directions: Vec<u32>,
    /// Numbers of evenly spaced shifts.
    pub n_shifts: Vec<usize>,
    /// Explicit shift frames; overrides `n_shifts`.
    pub shift_frames: Option<Vec<usize>>,
    pub onset_frame: usize,
    /// Degrees per frame; when absent, derived from `boundary_speed`.
    pub omega: Option<f64>,
    /// Rotation speed at the disk boundary, px/frame.
    pub boundary_speed: f64,
    /// Number of random-slip simulations; seeds are `suite seed + i`.
    pub seeds: usize,
    pub allow_any_delta: bool,
    pub peripheral_origin: Option<[i64; 2]>,
}

impl Default for ConditionTemplate {
    fn default() -> Self {
        Self {
            kind: ConditionKind::Static,
            n_frames: 15,
            deltas: vec![30],
            directions: vec![DEFAULT_DIRECTION],
            n_shifts: vec![1],
            shift_frames: None,
            onset_frame: crate::viewsim::DEFAULT_ONSET_FRAME,
            omega: None,
            boundary_speed: 2.0,
            seeds: 1,
            allow_any_delta: false,
            peripheral_origin: None,
        }
    }
}

impl ConditionTemplate {
    /// Concrete conditions for a stimulus whose disk has radius `radius`.
    pub fn expand(&self, radius: f64, suite_seed: u64) -> Vec<ViewingCondition> {
        let base = ViewingCondition {
            kind: self.kind,
            n_frames: self.n_frames,
            onset_frame: self.onset_frame,
            allow_any_delta: self.allow_any_delta,
            peripheral_origin: self
                .peripheral_origin
                .unwrap_or(crate::viewsim::PERIPHERAL_ORIGIN),
            ..ViewingCondition::default()
        };
        match self.kind {
            ConditionKind::Static | ConditionKind::Onset => vec![base],
            ConditionKind::VeridicalRotation => {
                let omega = self
                    .omega
                    .unwrap_or_else(|| (self.boundary_speed / radius).to_degrees());
                vec![ViewingCondition { omega, ..base }]
            }
            ConditionKind::RandomSlip => (0..self.seeds)
                .map(|i| ViewingCondition {
                    seed: suite_seed.wrapping_add(i as u64),
                    ..base.clone()
                })
                .collect(),
            ConditionKind::Shift | ConditionKind::PeripheralShift => {
                let timings: Vec<Vec<usize>> = match &self.shift_frames {
                    Some(f) => vec![f.clone()],
                    None => self
                        .n_shifts
                        .iter()
                        .map(|&k| crate::viewsim::default_shift_frames(self.n_frames, k))
                        .collect(),
                };
                let mut out = Vec::new();
                for &d in &self.deltas {
                    for &a in &self.directions {
                        for t in &timings {
                            out.push(ViewingCondition {
                                delta_px: d,
                                direction_deg: a,
                                shift_frames: t.clone(),
                                ..base.clone()
                            });
                        }
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    BuiltinMe {
        id: String,
        #[serde(default)]
        estimator: EstimatorParams,
        /// Rescale the working resolution so every disk spans the same
        /// number of working pixels.
        #[serde(default = "yes")]
        scale_to_disk: bool,
    },
    External {
        id: String,
        dir: PathBuf,
    },
}

fn yes() -> bool {
    true
}

impl ModelSpec {
    pub fn id(&self) -> &str {
        match self {
            ModelSpec::BuiltinMe { id, .. } | ModelSpec::External { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GSweepConfig {
    pub g_pairs: Vec<[f64; 2]>,
    /// One direction report per g pair.
    pub reports: Vec<DirectionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub output: PathBuf,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub write_frames: bool,
    pub mask_policy: MaskPolicy,
    pub percept: PerceptConfig,
    pub stimuli: StimulusGrid,
    pub conditions: Vec<ConditionTemplate>,
    pub models: Vec<ModelSpec>,
    pub gsweep: Option<GSweepConfig>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("results"),
            seed: 0,
            workers: 0,
            write_frames: false,
            mask_policy: MaskPolicy::default(),
            percept: PerceptConfig::default(),
            stimuli: StimulusGrid::default(),
            conditions: vec![ConditionTemplate::default()],
            models: Vec::new(),
            gsweep: None,
        }
    }
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Error::Config(m);
        ensure!(!self.models.is_empty(), Config, "no models configured");
        ensure!(!self.conditions.is_empty(), Config, "no conditions configured");
        let g = &self.stimuli;
        ensure!(
            !g.families.is_empty()
                && !g.color_schemes.is_empty()
                && !g.senses.is_empty()
                && !g.g_pairs.is_empty(),
            Config,
            "stimulus grid has an empty axis"
        );
        if g.families.contains(&Family::Ouchi) {
            return Err(cfg(
                "the ouchi family has no rotational percept target and cannot be scored".into(),
            ));
        }
        let mut ids = BTreeSet::new();
        for m in &self.models {
            ensure!(
                !m.id().is_empty() && !m.id().contains(['/', '\\']),
                Config,
                "invalid model id {:?}",
                m.id()
            );
            ensure!(ids.insert(m.id()), Config, "duplicate model id {:?}", m.id());
            match m {
                ModelSpec::BuiltinMe { estimator, .. } => estimator
                    .validate()
                    .map_err(|e| cfg(format!("model {}: {e}", m.id())))?,
                ModelSpec::External { dir, .. } => ensure!(
                    dir.is_dir(),
                    Config,
                    "external flow directory {} does not exist",
                    dir.display()
                ),
            }
        }
        ensure!(
            self.percept.magnitude > 0.0 && self.percept.gamma > 0.0,
            Config,
            "percept magnitude and gamma must be positive"
        );
        for t in &self.conditions {
            ensure!(
                t.kind != ConditionKind::RandomSlip || t.seeds >= 1,
                Config,
                "random_slip needs at least one seed"
            );
            if matches!(t.kind, ConditionKind::Shift | ConditionKind::PeripheralShift) {
                ensure!(
                    !t.deltas.is_empty() && !t.directions.is_empty(),
                    Config,
                    "shift conditions need deltas and directions"
                );
                ensure!(
                    t.shift_frames.is_some() || !t.n_shifts.is_empty(),
                    Config,
                    "shift conditions need n_shifts or shift_frames"
                );
            }
            for c in t.expand(1.0, self.seed) {
                c.validate().map_err(|e| cfg(e.to_string()))?;
            }
        }
        for s in self.stimulus_specs()? {
            s.spec.validate().map_err(|e| cfg(format!("{}: {e}", s.id)))?;
        }
        Ok(())
    }

    /// Every stimulus in grid order: illusion first, then its control.
    pub fn stimulus_specs(&self) -> Result<Vec<StimulusEntry>> {
        let g = &self.stimuli;
        let mut out = Vec::new();
        for &family in &g.families {
            for &color_scheme in &g.color_schemes {
                for &sense in &g.senses {
                    for &[g1, g2] in &g.g_pairs {
                        let spec = StimulusSpec {
                            family,
                            color_scheme,
                            sense,
                            g1,
                            g2,
                            ..g.base.clone()
                        };
                        let id = spec.id();
                        out.push(StimulusEntry {
                            id: id.clone(),
                            variant: Variant::Illusion,
                            spec: spec.clone(),
                        });
                        if g.controls && family == Family::RotatingSnakes {
                            out.push(StimulusEntry {
                                id: format!("{id}_control"),
                                variant: Variant::Control,
                                spec,
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Illusion,
    Control,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Illusion => "illusion",
            Variant::Control => "control",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimulusEntry {
    pub id: String,
    pub variant: Variant,
    pub spec: StimulusSpec,
}

impl StimulusEntry {
    pub fn render(&self) -> Result<RasterImage> {
        match self.variant {
            Variant::Illusion => render(&self.spec),
            Variant::Control => render_control(&self.spec),
        }
    }
}

/// Condition label with the displacement magnitude and seed removed, used as
/// a heatmap column.
pub fn condition_group(c: &ViewingCondition) -> String {
    match c.kind {
        ConditionKind::Static => "static".into(),
        ConditionKind::Onset => "onset".into(),
        ConditionKind::Shift => format!("shift_a{}_k{}", c.direction_deg, c.shift_frames.len()),
        ConditionKind::PeripheralShift => {
            format!("peripheral_a{}_k{}", c.direction_deg, c.shift_frames.len())
        }
        ConditionKind::RandomSlip => "random_slip".into(),
        ConditionKind::VeridicalRotation => "rotation".into(),
    }
}

fn has_delta(c: &ViewingCondition) -> bool {
    matches!(c.kind, ConditionKind::Shift | ConditionKind::PeripheralShift)
}

/// Result of one (model, stimulus, condition) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub keys: BTreeMap<String, String>,
    pub report: std::result::Result<ScoreReport, String>,
}

impl CellResult {
    pub fn key(&self, k: &str) -> &str {
        self.keys.get(k).map(String::as_str).unwrap_or("")
    }
}

#[derive(Debug, Clone)]
pub struct ResultsStore {
    pub output: PathBuf,
    pub cells: Vec<CellResult>,
}

impl ResultsStore {
    pub fn n_failed(&self) -> usize {
        self.cells.iter().filter(|c| c.report.is_err()).count()
    }

    pub fn reports(&self) -> Vec<&ScoreReport> {
        self.cells.iter().filter_map(|c| c.report.as_ref().ok()).collect()
    }
}

/// Where the disk of `entry` ends up after `cond`, as a percept target.
pub fn cell_target(
    entry: &StimulusEntry,
    cond: &ViewingCondition,
    percept: &PerceptConfig,
) -> Result<PerceptTarget> {
    let canvas = entry.spec.canvas_px;
    let (w, h, placement, events) = plan(canvas, canvas, cond)?;
    let disk = entry.spec.disk();
    let (px, py) = placement.map(disk.cx, disk.cy);
    let (ox, oy) = events
        .iter()
        .fold((0i64, 0i64), |(x, y), e| (x + e.dx, y + e.dy));
    let sense = if cond.kind == ConditionKind::VeridicalRotation {
        if cond.omega > 0.0 {
            Sense::Ccw
        } else {
            Sense::Cw
        }
    } else {
        entry.spec.sense
    };
    Ok(PerceptTarget {
        cx: px + ox as f64,
        cy: py + oy as f64,
        radius: disk.radius * placement.scale,
        magnitude: percept.magnitude,
        gamma: percept.gamma,
        sense,
        width: w as usize,
        height: h as usize,
    })
}

fn cell_keys(
    model: &str,
    entry: &StimulusEntry,
    cond: &ViewingCondition,
) -> BTreeMap<String, String> {
    let s = &entry.spec;
    let mut k = BTreeMap::new();
    let mut put = |a: &str, b: String| {
        k.insert(a.to_string(), b);
    };
    put("model", model.into());
    put("stimulus", entry.id.clone());
    put("variant", entry.variant.label().into());
    put("family", s.family.short().into());
    put("color", s.color_scheme.label().into());
    put("sense", format!("{:?}", s.sense).to_lowercase());
    put("g1", s.g1.to_string());
    put("g2", s.g2.to_string());
    put("condition", cond.id());
    put("group", condition_group(cond));
    put(
        "delta",
        if has_delta(cond) {
            cond.delta_px.to_string()
        } else {
            String::new()
        },
    );
    put("seed", cond.seed.to_string());
    k
}

struct PreparedModel {
    spec: ModelSpec,
    bank: Option<Arc<GaborBank>>,
}

fn prepare_models(models: &[ModelSpec]) -> Result<Vec<PreparedModel>> {
    models
        .iter()
        .map(|m| {
            let bank = match m {
                ModelSpec::BuiltinMe { estimator, .. } => Some(Arc::new(build_bank(&estimator.bank)?)),
                ModelSpec::External { .. } => None,
            };
            Ok(PreparedModel {
                spec: m.clone(),
                bank,
            })
        })
        .collect()
}

fn cell_dir(root: &Path, stimulus: &str, condition: &str) -> PathBuf {
    root.join(stimulus).join(condition)
}

fn write_flow_file(f: &FlowField, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_flow(f, path)
}

fn model_flow(
    model: &PreparedModel,
    seq: &FrameSequence,
    target: &PerceptTarget,
    entry: &StimulusEntry,
    cond: &ViewingCondition,
    output: &Path,
) -> Result<FlowField> {
    match &model.spec {
        ModelSpec::BuiltinMe {
            id,
            estimator,
            scale_to_disk,
        } => {
            let mut params = estimator.clone();
            if *scale_to_disk {
                params.scale *= FRAME_DISK_PX / (2.0 * target.radius);
            }
            let bank = model.bank.as_ref().expect("builtin models carry a bank");
            let flow = wire_precision(&estimate_flow(&seq.frames, bank, &params)?);
            let path = cell_dir(&output.join("flows").join(id), &entry.id, &cond.id()).join(FLOW_FILE);
            write_flow_file(&flow, &path)?;
            Ok(flow)
        }
        ModelSpec::External { dir, .. } => {
            read_flow(&cell_dir(dir, &entry.id, &cond.id()).join(FLOW_FILE))
        }
    }
}

fn score_checked(
    flow: &FlowField,
    target: &FlowField,
    policy: MaskPolicy,
    keys: BTreeMap<String, String>,
) -> std::result::Result<ScoreReport, String> {
    if (flow.width, flow.height) != (target.width, target.height) {
        return Err(format!(
            "flow is {}x{}, target is {}x{}",
            flow.width, flow.height, target.width, target.height
        ));
    }
    score(flow, target, policy, keys).map_err(|e| e.to_string())
}

type Cell<'a> = (&'a StimulusEntry, &'a RasterImage, ViewingCondition);

fn run_cell(
    cfg: &SuiteConfig,
    models: &[PreparedModel],
    (entry, image, cond): &Cell,
    target_override: Option<DirectionReport>,
) -> Vec<CellResult> {
    let fail = |msg: String| -> Vec<CellResult> {
        models
            .iter()
            .map(|m| CellResult {
                keys: cell_keys(m.spec.id(), entry, cond),
                report: Err(msg.clone()),
            })
            .collect()
    };
    let dir = cell_dir(&cfg.output, &entry.id, &cond.id());
    let seq = match generate(image, cond) {
        Ok(s) => s,
        Err(e) => return fail(e.to_string()),
    };
    let pt = match cell_target(entry, cond, &cfg.percept) {
        Ok(t) => t,
        Err(e) => return fail(e.to_string()),
    };
    let target = match target_override {
        Some(r) => behavioral_target(r, &pt),
        None => target_flow(&pt),
    };
    let target = match target {
        Ok(t) => wire_precision(&t),
        Err(e) => return fail(e.to_string()),
    };
    if let Err(e) = write_flow_file(&target, &dir.join(TARGET_FILE)) {
        return fail(e.to_string());
    }
    if cfg.write_frames {
        if let Err(e) = write_sequence(&seq, &dir.join("frames"), ExportOptions::default()) {
            return fail(e.to_string());
        }
    }
    models
        .iter()
        .map(|m| {
            let mut keys = cell_keys(m.spec.id(), entry, cond);
            if let Some(r) = target_override {
                keys.insert("report".into(), r.label().into());
            }
            let report = model_flow(m, &seq, &pt, entry, cond, &cfg.output)
                .map_err(|e| e.to_string())
                .and_then(|flow| score_checked(&flow, &target, cfg.mask_policy, keys.clone()));
            CellResult { keys, report }
        })
        .collect()
}

fn render_all(entries: &[StimulusEntry]) -> Result<Vec<RasterImage>> {
    par::map_slice(entries, |e| e.render())
        .into_iter()
        .collect::<Result<Vec<_>>>()
}

fn expand_cells<'a>(
    cfg: &SuiteConfig,
    entries: &'a [StimulusEntry],
    images: &'a [RasterImage],
) -> Vec<Cell<'a>> {
    let mut cells = Vec::new();
    for (entry, image) in entries.iter().zip(images) {
        for t in &cfg.conditions {
            for c in t.expand(entry.spec.disk().radius, cfg.seed) {
                cells.push((entry, image, c));
            }
        }
    }
    cells
}

fn run_cells(
    cfg: &SuiteConfig,
    cells: &[Cell],
    overrides: &[Option<DirectionReport>],
) -> Result<Vec<CellResult>> {
    let models = prepare_models(&cfg.models)?;
    let jobs: Vec<(usize, &Cell)> = cells.iter().enumerate().collect();
    let results = par::with_workers(cfg.workers, || {
        par::map_slice(&jobs, |(i, cell)| run_cell(cfg, &models, cell, overrides[*i]))
    });
    Ok(results.into_iter().flatten().collect())
}

/// Run every cell of the suite and write all result files.
pub fn run_suite(cfg: &SuiteConfig) -> Result<ResultsStore> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    let entries = cfg.stimulus_specs()?;
    let images = par::with_workers(cfg.workers, || render_all(&entries))?;
    let cells = expand_cells(cfg, &entries, &images);
    let overrides = vec![None; cells.len()];
    let results = run_cells(cfg, &cells, &overrides)?;
    let store = ResultsStore {
        output: cfg.output.clone(),
        cells: results,
    };
    write_cell_reports(&store)?;
    write_results_csv(&store.cells, &cfg.output.join("results.csv"))?;
    for (metric, name) in [
        (Metric::Rho, "heatmap_rho.csv"),
        (Metric::Epe, "heatmap_epe.csv"),
        (Metric::Ae, "heatmap_ae.csv"),
    ] {
        write_heatmap(&store.cells, metric, &cfg.output.join(name))?;
    }
    write_stats(&store.cells, &cfg.output.join("stats.csv"))?;
    write_run_meta(cfg, &store, "run-suite")?;
    Ok(store)
}

/// Score a g1/g2 sweep against behavioral direction reports.
pub fn run_gsweep(cfg: &SuiteConfig) -> Result<ResultsStore> {
    let sweep = cfg
        .gsweep
        .as_ref()
        .ok_or_else(|| Error::Config("missing [gsweep] section".into()))?;
    ensure!(
        sweep.g_pairs.len() == sweep.reports.len(),
        Config,
        "{} g pairs but {} direction reports",
        sweep.g_pairs.len(),
        sweep.reports.len()
    );
    ensure!(!sweep.g_pairs.is_empty(), Config, "empty g sweep");
    let mut run = cfg.clone();
    run.stimuli.g_pairs = sweep.g_pairs.clone();
    run.stimuli.controls = false;
    run.validate()?;
    fs::create_dir_all(&run.output).map_err(|e| Error::io(&run.output, e))?;
    let entries = run.stimulus_specs()?;
    let images = par::with_workers(run.workers, || render_all(&entries))?;
    let cells = expand_cells(&run, &entries, &images);
    let overrides: Vec<Option<DirectionReport>> = cells
        .iter()
        .map(|(e, _, _)| {
            let i = sweep
                .g_pairs
                .iter()
                .position(|&[a, b]| a == e.spec.g1 && b == e.spec.g2)
                .expect("entry comes from the sweep");
            Some(sweep.reports[i])
        })
        .collect();
    let results = run_cells(&run, &cells, &overrides)?;
    let store = ResultsStore {
        output: run.output.clone(),
        cells: results,
    };
    write_cell_reports(&store)?;
    write_results_csv(&store.cells, &run.output.join("gsweep_results.csv"))?;
    write_gsweep_summary(&store.cells, &run.output.join("gsweep_summary.csv"))?;
    write_run_meta(&run, &store, "run-gsweep")?;
    Ok(store)
}

/// Score flow files under `flow_dir` (named `file_name`) against the
/// targets the suite defines; nothing is rendered.
pub fn score_external(flow_dir: &Path, cfg: &SuiteConfig, file_name: &str) -> Result<Vec<CellResult>> {
    ensure!(
        flow_dir.is_dir(),
        Config,
        "flow directory {} does not exist",
        flow_dir.display()
    );
    let entries = cfg.stimulus_specs()?;
    let model = flow_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "external".into());
    let mut jobs = Vec::new();
    for entry in &entries {
        for t in &cfg.conditions {
            for c in t.expand(entry.spec.disk().radius, cfg.seed) {
                jobs.push((entry, c));
            }
        }
    }
    let cells = par::with_workers(cfg.workers, || {
        par::map_slice(&jobs, |(entry, cond)| {
            let keys = cell_keys(&model, entry, cond);
            let report = (|| {
                let pt = cell_target(entry, cond, &cfg.percept).map_err(|e| e.to_string())?;
                let target = wire_precision(&target_flow(&pt).map_err(|e| e.to_string())?);
                let path = cell_dir(flow_dir, &entry.id, &cond.id()).join(file_name);
                let flow = read_flow(&path).map_err(|e| e.to_string())?;
                score_checked(&flow, &target, cfg.mask_policy, keys.clone())
            })();
            CellResult { keys, report }
        })
    });
    Ok(cells)
}

const KEY_COLUMNS: [&str; 12] = [
    "model", "stimulus", "variant", "family", "color", "sense", "g1", "g2", "condition", "group",
    "delta", "seed",
];

/// One row per cell, in run order.
pub fn write_results_csv(cells: &[CellResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let with_report = cells.iter().any(|c| c.keys.contains_key("report"));
    let mut header: Vec<&str> = KEY_COLUMNS.to_vec();
    if with_report {
        header.push("report");
    }
    header.extend([
        "status",
        "rho",
        "rho_degenerate",
        "mean_epe",
        "mean_ae",
        "n_valid",
        "error",
    ]);
    w.write_record(&header)?;
    for c in cells {
        let mut row: Vec<String> = KEY_COLUMNS.iter().map(|k| c.key(k).to_string()).collect();
        if with_report {
            row.push(c.key("report").to_string());
        }
        match &c.report {
            Ok(r) => row.extend([
                "ok".into(),
                r.rho.to_string(),
                r.rho_degenerate.to_string(),
                r.mean_epe.to_string(),
                r.mean_ae.to_string(),
                r.n_valid.to_string(),
                String::new(),
            ]),
            Err(e) => row.extend([
                "error".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ]),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_cell_reports(store: &ResultsStore) -> Result<()> {
    let mut by_cell: BTreeMap<(String, String), Vec<CellResult>> = BTreeMap::new();
    for c in &store.cells {
        by_cell
            .entry((c.key("stimulus").to_string(), c.key("condition").to_string()))
            .or_default()
            .push(c.clone());
    }
    for ((s, c), rows) in by_cell {
        let dir = cell_dir(&store.output, &s, &c);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_results_csv(&rows, &dir.join("report.csv"))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Rho,
    Epe,
    Ae,
}

impl Metric {
    fn of(self, r: &ScoreReport) -> f64 {
        match self {
            Metric::Rho => r.rho,
            Metric::Epe => r.mean_epe,
            Metric::Ae => r.mean_ae,
        }
    }
}

/// Rows: model, variant, color. Columns: each condition group averaged over
/// all displacement magnitudes, then one column per (group, magnitude).
pub fn write_heatmap(cells: &[CellResult], metric: Metric, path: &Path) -> Result<()> {
    type Acc = BTreeMap<(String, String, String), BTreeMap<String, (f64, usize)>>;
    let mut acc: Acc = BTreeMap::new();
    let mut columns: Vec<String> = Vec::new();
    let mut delta_columns: Vec<String> = Vec::new();
    for c in cells {
        let Ok(r) = &c.report else { continue };
        let row = (
            c.key("model").to_string(),
            c.key("variant").to_string(),
            c.key("color").to_string(),
        );
        let group = c.key("group").to_string();
        let mut targets = vec![group.clone()];
        if !columns.contains(&group) {
            columns.push(group.clone());
        }
        if !c.key("delta").is_empty() {
            let col = format!("{group}@d{}", c.key("delta"));
            if !delta_columns.contains(&col) {
                delta_columns.push(col.clone());
            }
            targets.push(col);
        }
        let entry = acc.entry(row).or_default();
        for t in targets {
            let e = entry.entry(t).or_insert((0.0, 0));
            e.0 += metric.of(r);
            e.1 += 1;
        }
    }
    columns.extend(delta_columns);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["model".to_string(), "variant".into(), "color".into()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for ((m, v, col), vals) in acc {
        let mut row = vec![m, v, col];
        for c in &columns {
            row.push(match vals.get(c) {
                Some((s, n)) => (s / *n as f64).to_string(),
                None => String::new(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One-sided signed-rank tests per model, color and condition group:
/// illusion > 0, control > 0, and illusion vs control paired by condition.
pub fn write_stats(cells: &[CellResult], path: &Path) -> Result<()> {
    type Key = (String, String, String);
    let mut illusion: BTreeMap<Key, Vec<(String, f64)>> = BTreeMap::new();
    let mut control: BTreeMap<Key, Vec<(String, f64)>> = BTreeMap::new();
    for c in cells {
        let Ok(r) = &c.report else { continue };
        let key = (
            c.key("model").to_string(),
            c.key("color").to_string(),
            c.key("group").to_string(),
        );
        let pair_id = format!(
            "{}|{}|{}|{}|{}",
            c.key("family"),
            c.key("sense"),
            c.key("g1"),
            c.key("g2"),
            c.key("condition")
        );
        let target = if c.key("variant") == "control" {
            &mut control
        } else {
            &mut illusion
        };
        target.entry(key).or_default().push((pair_id, r.rho));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "color",
        "group",
        "test",
        "alternative",
        "n",
        "w_plus",
        "p_value",
        "exact",
        "error",
    ])?;
    let mut emit = |key: &Key,
                    test: &str,
                    alt: Alternative,
                    res: Result<crate::metrics::WilcoxonResult>|
     -> Result<()> {
        let alt_s = match alt {
            Alternative::Greater => "greater",
            Alternative::Less => "less",
        };
        let mut row = vec![key.0.clone(), key.1.clone(), key.2.clone(), test.into(), alt_s.into()];
        match res {
            Ok(r) => row.extend([
                r.n.to_string(),
                r.w_plus.to_string(),
                r.p_value.to_string(),
                r.exact.to_string(),
                String::new(),
            ]),
            Err(e) => row.extend([
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                e.to_string(),
            ]),
        }
        w.write_record(&row)?;
        Ok(())
    };
    let keys: BTreeSet<&Key> = illusion.keys().chain(control.keys()).collect();
    for key in keys {
        if let Some(xs) = illusion.get(key) {
            let v: Vec<f64> = xs.iter().map(|x| x.1).collect();
            emit(key, "illusion_gt_0", Alternative::Greater, wilcoxon_one_sided(&v, Alternative::Greater))?;
        }
        if let Some(xs) = control.get(key) {
            let v: Vec<f64> = xs.iter().map(|x| x.1).collect();
            emit(key, "control_gt_0", Alternative::Greater, wilcoxon_one_sided(&v, Alternative::Greater))?;
        }
        if let (Some(a), Some(b)) = (illusion.get(key), control.get(key)) {
            let cmap: BTreeMap<&str, f64> = b.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            let (mut x, mut y) = (Vec::new(), Vec::new());
            for (k, v) in a {
                if let Some(&cv) = cmap.get(k.as_str()) {
                    x.push(*v);
                    y.push(cv);
                }
            }
            for alt in [Alternative::Greater, Alternative::Less] {
                emit(key, "illusion_vs_control", alt, wilcoxon_paired(&x, &y, alt))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_gsweep_summary(cells: &[CellResult], path: &Path) -> Result<()> {
    let mut acc: BTreeMap<(String, String, String), Vec<&ScoreReport>> = BTreeMap::new();
    for c in cells {
        if let Ok(r) = &c.report {
            acc.entry((
                c.key("model").to_string(),
                c.key("report").to_string(),
                c.key("group").to_string(),
            ))
            .or_default()
            .push(r);
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "report",
        "group",
        "count",
        "mean_rho",
        "n_degenerate",
        "mean_epe",
        "mean_ae",
    ])?;
    for ((m, rep, g), rs) in acc {
        let n = rs.len() as f64;
        w.write_record([
            m,
            rep,
            g,
            rs.len().to_string(),
            (rs.iter().map(|r| r.rho).sum::<f64>() / n).to_string(),
            rs.iter().filter(|r| r.rho_degenerate).count().to_string(),
            (rs.iter().map(|r| r.mean_epe).sum::<f64>() / n).to_string(),
            (rs.iter().map(|r| r.mean_ae).sum::<f64>() / n).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RunMeta<'a> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    seed: u64,
    n_cells: usize,
    n_failed: usize,
    config: &'a SuiteConfig,
}

fn write_run_meta(cfg: &SuiteConfig, store: &ResultsStore, command: &str) -> Result<()> {
    let meta = RunMeta {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        n_cells: store.cells.len(),
        n_failed: store.n_failed(),
        config: cfg,
    };
    let path = cfg.output.join("run_meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = SuiteConfig::default();
        cfg.models.push(ModelSpec::BuiltinMe {
            id: "me".into(),
            estimator: EstimatorParams::default(),
            scale_to_disk: true,
        });
        let back = SuiteConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_toml_parses() {
        let cfg = SuiteConfig::from_toml(
            r#"
            output = "out"
            [stimuli]
            color_schemes = ["grayscale"]
            [[conditions]]
            kind = "shift"
            deltas = [15, 30]
            n_shifts = [1, 3]
            [[models]]
            kind = "builtin_me"
            id = "me"
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.conditions[0].expand(633.0, 0).len(), 4);
        assert_eq!(cfg.stimulus_specs().unwrap().len(), 2);
    }

    #[test]
    fn unknown_keys_and_ouchi_are_config_errors() {
        assert!(matches!(
            SuiteConfig::from_toml("bogus = 1"),
            Err(Error::Config(_))
        ));
        let mut cfg = SuiteConfig::default();
        cfg.models.push(ModelSpec::BuiltinMe {
            id: "me".into(),
            estimator: EstimatorParams::default(),
            scale_to_disk: true,
        });
        cfg.stimuli.families = vec![Family::Ouchi];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn off_paper_delta_needs_override() {
        let mut cfg = SuiteConfig::default();
        cfg.models.push(ModelSpec::BuiltinMe {
            id: "me".into(),
            estimator: EstimatorParams::default(),
            scale_to_disk: true,
        });
        cfg.conditions = vec![ConditionTemplate {
            kind: ConditionKind::Shift,
            deltas: vec![20],
            ..ConditionTemplate::default()
        }];
        assert!(cfg.validate().is_err());
        cfg.conditions[0].allow_any_delta = true;
        cfg.validate().unwrap();
    }

    #[test]
    fn target_follows_the_shifted_disk() {
        let entry = StimulusEntry {
            id: "s".into(),
            variant: Variant::Illusion,
            spec: StimulusSpec::default(),
        };
        let c = ViewingCondition::shift(15, 30, 225, 2);
        let t = cell_target(&entry, &c, &PerceptConfig::default()).unwrap();
        assert_eq!((t.cx, t.cy), (753.0 - 60.0, 753.0 - 60.0));
        let p = ViewingCondition::peripheral(15, 60, 0, 1);
        let t = cell_target(&entry, &p, &PerceptConfig::default()).unwrap();
        assert_eq!(t.width, 2772);
        assert!((t.cx - (346.0 + 693.0 + 60.0)).abs() < 1e-9);
        assert!((t.radius - 633.0 * 1386.0 / 1506.0).abs() < 1e-9);
        let r = ViewingCondition::rotation(15, -1.0);
        assert_eq!(cell_target(&entry, &r, &PerceptConfig::default()).unwrap().sense, Sense::Cw);
    }
}
