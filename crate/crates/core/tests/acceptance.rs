//! Acceptance checks. Each criterion prints one PASS or FAIL line; the
//! process exits nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use illusionflow::flowio::{decode_flow, encode_flow, read_flow, write_flow};
use illusionflow::harness::{score_external, ConditionTemplate, StimulusGrid, SuiteConfig};
use illusionflow::meflow::{build_bank, estimate_flow, probe_unit_tuning, BankParams, EstimatorParams, ProbeGrid};
use illusionflow::metrics::{ae, corr, epe, score, wilcoxon_one_sided, Alternative, MaskPolicy};
use illusionflow::percept::{target_flow, PerceptTarget};
use illusionflow::stimgen::{
    layout, render, render_control, ColorScheme, LayoutCell, RasterImage, Sense, StimulusSpec,
};
use illusionflow::viewsim::{
    content_bbox, generate, random_slip_events, rotate_bilinear, ConditionKind, ViewingCondition,
    DIRECTION_SET, MAX_SHIFTS,
};
use illusionflow::FlowField;
use rand::Rng;

type Check = fn() -> Result<String, String>;

macro_rules! require {
    ($cond:expr, $($fmt:tt)+) => {
        {
            let ok: bool = $cond;
            if !ok {
                return Err(format!($($fmt)+));
            }
        }
    };
}

fn main() {
    let checks: [(&str, Check); 10] = [
        ("metric oracle equivalence", metric_oracles),
        ("correlation endpoints", correlation_endpoints),
        ("percept target rigidity", target_rigidity),
        ("stimulus invariants", stimulus_invariants),
        ("sequence contracts", sequence_contracts),
        ("built-in estimator sanity", estimator_sanity),
        ("unit probe round trip", probe_round_trip),
        ("wilcoxon correctness", wilcoxon_exact),
        ("flow file round trip", flow_round_trip),
        ("external re-scoring", external_rescoring),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!(
        "NOTE  not reproducible here: correlations, ablations and p-values of trained \
         networks need their weights; archived predictions re-score through the external path"
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn within(t0: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let e = t0.elapsed();
    if e > limit {
        return Err(format!("{what} took {e:?}, limit {limit:?}"));
    }
    Ok(())
}

fn metric_oracles() -> Result<String, String> {
    let t0 = Instant::now();
    let mut rng = common::rng(2024);
    let (mut worst_c, mut worst_e, mut worst_a) = (0f64, 0f64, 0f64);
    for _ in 0..1000 {
        let w = rng.random_range(8..=64);
        let h = rng.random_range(8..=64);
        let p = common::random_field(&mut rng, w, h, 0.1);
        let r = common::random_field(&mut rng, w, h, 0.1);
        let c = corr(&p, &r).map_err(|e| e.to_string())?.rho;
        worst_c = worst_c.max((c - common::naive_corr(&p, &r)).abs());
        worst_e = worst_e.max((epe(&p, &r).unwrap() - common::naive_epe(&p, &r)).abs());
        worst_a = worst_a.max((ae(&p, &r).unwrap() - common::naive_ae(&p, &r)).abs());
    }
    require!(worst_c <= 1e-12, "corr differs by {worst_c:e}");
    require!(worst_e <= 1e-12, "EPE differs by {worst_e:e}");
    require!(worst_a <= 1e-10, "AE differs by {worst_a:e}");
    within(t0, Duration::from_secs(10), "1000 pairs")?;
    Ok(format!("max |diff| corr {worst_c:.1e}, EPE {worst_e:.1e}, AE {worst_a:.1e}"))
}

fn correlation_endpoints() -> Result<String, String> {
    let mut rng = common::rng(7);
    let mut worst = 0f64;
    for _ in 0..50 {
        let p = common::random_field(&mut rng, 40, 30, 0.0);
        let mut q = p.clone();
        for i in 0..q.len() {
            q.u[i] = -p.v[i];
            q.v[i] = p.u[i];
        }
        let rho = |a: &FlowField, b: &FlowField| corr(a, b).unwrap().rho;
        worst = worst
            .max((rho(&p, &p) - 1.0).abs())
            .max((rho(&p, &p.scaled(-1.0)) + 1.0).abs())
            .max(rho(&p, &q).abs());
    }
    require!(worst <= 1e-12, "endpoint error {worst:e}");
    Ok(format!("self 1, negated -1, orthogonal 0; max error {worst:.1e}"))
}

fn target_rigidity() -> Result<String, String> {
    let spec = StimulusSpec::default();
    let m = 2.0;
    let n = spec.canvas_px as usize;
    let t = PerceptTarget {
        magnitude: m,
        gamma: 1.0,
        ..PerceptTarget::for_disk(spec.disk(), n, n, Sense::Ccw)
    };
    let f = target_flow(&t).map_err(|e| e.to_string())?;
    let (mut radial, mut div) = (0f64, 0f64);
    for y in 1..n - 1 {
        for x in 1..n - 1 {
            let Some((u, v)) = f.get(x, y) else { continue };
            let (px, py) = (x as f64 + 0.5 - t.cx, y as f64 + 0.5 - t.cy);
            let r = px.hypot(py);
            if r > 0.0 {
                radial = radial.max(((u * px + v * py) / r).abs());
            }
            let neighbors = [f.get(x + 1, y), f.get(x - 1, y), f.get(x, y + 1), f.get(x, y - 1)];
            if let [Some(e), Some(w), Some(s), Some(nn)] = neighbors {
                div = div.max(((e.0 - w.0) / 2.0 + (s.1 - nn.1) / 2.0).abs());
            }
        }
    }
    require!(radial <= 1e-9 * m, "radial component {radial:e}");
    require!(div <= 1e-6 * m, "divergence {div:e} per px");
    Ok(format!("max radial {radial:.1e}, max divergence {div:.1e} (M = {m})"))
}

fn unit_histograms(spec: &StimulusSpec, img: &RasterImage) -> BTreeMap<(usize, usize), Vec<[u8; 3]>> {
    let mut h: BTreeMap<(usize, usize), Vec<[u8; 3]>> = BTreeMap::new();
    for (cell, p) in layout(spec).into_iter().zip(img.pixels()) {
        if let LayoutCell::Unit { ring, element, .. } = cell {
            h.entry((ring, element)).or_default().push(p.0);
        }
    }
    h.values_mut().for_each(|v| v.sort_unstable());
    h
}

fn mean_abs_diff(a: &RasterImage, b: &RasterImage) -> f64 {
    let s: u64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum();
    s as f64 / a.as_raw().len() as f64 / 255.0
}

fn stimulus_invariants() -> Result<String, String> {
    let t0 = Instant::now();
    let tol = 2.0 / 255.0;
    let (mut worst_rot, mut worst_mirror) = (0f64, 0f64);
    let mut units = 0;
    for scheme in [ColorScheme::Grayscale, ColorScheme::BlueYellow, ColorScheme::RedGreen] {
        let spec = |sense| StimulusSpec {
            color_scheme: scheme,
            sense,
            ..Default::default()
        };
        let ccw = render(&spec(Sense::Ccw)).unwrap();
        let cw = render(&spec(Sense::Cw)).unwrap();
        for (s, img) in [(spec(Sense::Ccw), &ccw), (spec(Sense::Cw), &cw)] {
            let control = render_control(&s).unwrap();
            let a = unit_histograms(&s, img);
            require!(a == unit_histograms(&s, &control), "{scheme:?} histograms differ");
            units += a.len();
            let d = s.disk();
            let step = 360.0 / s.elements_per_ring as f64;
            worst_rot = worst_rot.max(mean_abs_diff(img, &rotate_bilinear(img, step, d.cx, d.cy)));
        }
        worst_mirror = worst_mirror.max(mean_abs_diff(&cw, &image::imageops::flip_horizontal(&ccw)));
    }
    require!(worst_rot <= tol, "rotation diff {worst_rot:.5}");
    require!(worst_mirror <= tol, "mirror diff {worst_mirror:.5}");
    within(t0, Duration::from_secs(60), "default grid")?;
    Ok(format!(
        "{units} unit histograms equal; rotation diff {:.2}/255, mirror diff {:.2}/255",
        worst_rot * 255.0,
        worst_mirror * 255.0
    ))
}

fn sequence_contracts() -> Result<String, String> {
    let img = render(&StimulusSpec {
        canvas_px: 1000,
        margin_px: 450,
        ..Default::default()
    })
    .unwrap();
    let transitions = |f: &[Arc<RasterImage>]| f.windows(2).filter(|w| w[0] != w[1]).count();
    let offset = |b: &RasterImage| {
        let (ax, ay, _, _) = content_bbox(&img);
        let (bx, by, _, _) = content_bbox(b);
        (bx - ax, by - ay)
    };
    let st = generate(&img, &ViewingCondition::static_view(15)).unwrap();
    require!(st.frames.iter().all(|f| f.as_raw() == img.as_raw()), "static frames differ");
    let on = generate(&img, &ViewingCondition::onset(15, 3)).unwrap();
    require!(transitions(&on.frames) == 1, "onset has {} transitions", transitions(&on.frames));
    let mut n_shift = 0;
    for d in [15, 30, 60, 90, 120] {
        for &a in &DIRECTION_SET {
            for k in 1..=MAX_SHIFTS {
                let seq = generate(&img, &ViewingCondition::shift(15, d, a, k)).unwrap();
                require!(seq.events.len() <= MAX_SHIFTS, "{} events", seq.events.len());
                let measured = offset(seq.frames.last().unwrap());
                require!(measured == seq.total_offset(), "d{d} a{a} k{k}: {measured:?} vs {:?}", seq.total_offset());
                n_shift += 1;
            }
        }
    }
    for seed in 0..25 {
        let seq = generate(&img, &ViewingCondition::random_slip(15, seed)).unwrap();
        require!(seq.events.len() <= MAX_SHIFTS, "slip has {} events", seq.events.len());
        require!(offset(seq.frames.last().unwrap()) == seq.total_offset(), "slip seed {seed}");
    }
    let mut counts = [0usize; 8];
    for seed in 0..1000 {
        for e in random_slip_events(15, seed) {
            let a = (e.dy as f64).atan2(e.dx as f64).to_degrees().rem_euclid(360.0).round() as u32;
            let i = DIRECTION_SET.iter().position(|&d| d == a).ok_or(format!("angle {a}"))?;
            counts[i] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    let (mean, sd) = (n as f64 / 8.0, (n as f64 * 7.0 / 64.0).sqrt());
    let worst_z = counts.iter().map(|&c| (c as f64 - mean).abs() / sd).fold(0.0, f64::max);
    require!(worst_z <= 3.0, "direction counts {counts:?}");
    Ok(format!(
        "{n_shift} shift sequences match their logs; slip directions {counts:?}, max |z| {worst_z:.2}"
    ))
}

fn central_mean(f: &FlowField) -> (f64, f64) {
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
    for y in f.height / 4..3 * f.height / 4 {
        for x in f.width / 4..3 * f.width / 4 {
            if let Some((u, v)) = f.get(x, y) {
                su += u;
                sv += v;
                n += 1.0;
            }
        }
    }
    (su / n, sv / n)
}

fn estimator_sanity() -> Result<String, String> {
    let limit = Duration::from_secs(120);
    // translation at working resolution
    let p = EstimatorParams {
        scale: 1.0,
        ..Default::default()
    };
    let bank = build_bank(&p.bank).unwrap();
    let (mut worst_dir, mut worst_mag) = (0f64, 0f64);
    for (vx, vy) in [(2, 0), (0, 2), (-2, 0), (0, -2), (1, 2)] {
        let t0 = Instant::now();
        let f = estimate_flow(&common::translating_noise(192, 192, 15, vx, vy, 5), &bank, &p).unwrap();
        within(t0, limit, "translation sequence")?;
        let m = central_mean(&f);
        let truth = (vx as f64, vy as f64);
        let speed = truth.0.hypot(truth.1);
        let ang = ((m.1.atan2(m.0) - truth.1.atan2(truth.0)).to_degrees() + 180.0).rem_euclid(360.0) - 180.0;
        worst_dir = worst_dir.max(ang.abs());
        worst_mag = worst_mag.max((m.0.hypot(m.1) / speed - 1.0).abs());
    }
    require!(worst_dir <= 15.0, "direction error {worst_dir:.1} deg");
    require!(worst_mag <= 0.3, "magnitude error {:.0}%", worst_mag * 100.0);

    // rotating snakes at the default size and working scale
    let spec = StimulusSpec::default();
    let img = render(&spec).unwrap();
    let disk = spec.disk();
    let p = EstimatorParams::default();
    let bank = build_bank(&p.bank).unwrap();
    let n = spec.canvas_px as usize;
    let target = target_flow(&PerceptTarget::for_disk(disk, n, n, Sense::Ccw)).unwrap();
    let omega = (2.0 / disk.radius).to_degrees();
    let rho_of = |cond: ViewingCondition| -> Result<f64, String> {
        let t0 = Instant::now();
        let seq = generate(&img, &cond).map_err(|e| e.to_string())?;
        let f = estimate_flow(&seq.frames, &bank, &p).map_err(|e| e.to_string())?;
        within(t0, limit, "stimulus sequence")?;
        let r = score(&f, &target, MaskPolicy::TargetDisk, BTreeMap::new()).map_err(|e| e.to_string())?;
        Ok(r.rho)
    };
    let rot = rho_of(ViewingCondition::rotation(15, omega))?;
    let still = rho_of(ViewingCondition::static_view(15))?;
    require!(rot >= 0.5, "rotation rho {rot:.3}");
    require!(still.abs() <= 0.1, "static rho {still:.3}");
    Ok(format!(
        "translation max direction error {worst_dir:.1} deg, magnitude error {:.1}%; rotation rho {rot:.3}, static rho {still:.3}",
        worst_mag * 100.0
    ))
}

fn probe_round_trip() -> Result<String, String> {
    let bank = build_bank(&BankParams::default()).unwrap();
    let tunings = probe_unit_tuning(&bank, &ProbeGrid::default()).map_err(|e| e.to_string())?;
    let hits = tunings
        .iter()
        .zip(&bank.units)
        .filter(|(t, u)| {
            (t.direction_index, t.sf_index, t.tf_index) == (u.direction_index, u.sf_index, u.tf_index)
        })
        .count();
    let frac = hits as f64 / bank.n_units() as f64;
    require!(frac >= 0.95, "{hits}/{} recovered", bank.n_units());
    Ok(format!("{hits}/{} units recover their grid triple", bank.n_units()))
}

fn wilcoxon_exact() -> Result<String, String> {
    let mut checked = 0;
    let mut rng = common::rng(99);
    for n in 5..=10usize {
        // every sign pattern over distinct magnitudes
        for mask in 0u32..1 << n {
            let s: Vec<f64> = (0..n)
                .map(|k| if mask >> k & 1 == 1 { (k + 1) as f64 } else { -((k + 1) as f64) })
                .collect();
            for alt in [Alternative::Greater, Alternative::Less] {
                let got = wilcoxon_one_sided(&s, alt).map_err(|e| e.to_string())?.p_value;
                require!(got == common::enumerated_p(&s, alt), "{s:?} {alt:?}");
                checked += 1;
            }
        }
        // tied magnitudes
        for _ in 0..200 {
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(1..=3) as f64 * if rng.random() { 1.0 } else { -1.0 }).collect();
            for alt in [Alternative::Greater, Alternative::Less] {
                let got = wilcoxon_one_sided(&s, alt).map_err(|e| e.to_string())?.p_value;
                require!(got == common::enumerated_p(&s, alt), "{s:?} {alt:?}");
                checked += 1;
            }
        }
    }
    let all_pos: Vec<f64> = (1..=10).map(f64::from).collect();
    let p = wilcoxon_one_sided(&all_pos, Alternative::Greater).unwrap().p_value;
    require!(p == 1.0 / 1024.0, "all-positive p = {p}");
    Ok(format!("{checked} p-values equal enumeration for n = 5..=10; all-positive n = 10 gives {p}"))
}

fn flow_round_trip() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = common::rng(31);
    let mut invalid = 0;
    for i in 0..100 {
        let w = rng.random_range(1..=80);
        let h = rng.random_range(1..=80);
        let mut f = common::random_field(&mut rng, w, h, 0.15);
        for k in 0..f.len() {
            f.u[k] = f.u[k] as f32 as f64;
            f.v[k] = f.v[k] as f32 as f64;
        }
        invalid += f.len() - f.n_valid();
        let back = decode_flow(&encode_flow(&f).unwrap()).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("{i}.flo"));
        write_flow(&f, &path).unwrap();
        let disk = read_flow(&path).map_err(|e| e.to_string())?;
        for g in [&back, &disk] {
            require!(g.valid == f.valid, "field {i}: validity differs");
            let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            require!(bits(&g.u) == bits(&f.u) && bits(&g.v) == bits(&f.v), "field {i}: values differ");
        }
    }
    Ok(format!("100 fields bit-exact, {invalid} invalid pixels preserved"))
}

fn external_rescoring() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SuiteConfig {
        stimuli: StimulusGrid {
            base: StimulusSpec {
                canvas_px: 320,
                margin_px: 20,
                ..Default::default()
            },
            ..Default::default()
        },
        conditions: vec![
            ConditionTemplate::default(),
            ConditionTemplate {
                kind: ConditionKind::Shift,
                deltas: vec![15, 30],
                n_shifts: vec![1, 3],
                ..Default::default()
            },
            ConditionTemplate {
                kind: ConditionKind::VeridicalRotation,
                ..Default::default()
            },
        ],
        ..Default::default()
    };
    // archive the targets themselves as predictions
    let archive = tmp.path().join("archived");
    for entry in cfg.stimulus_specs().unwrap() {
        for t in &cfg.conditions {
            for c in t.expand(entry.spec.disk().radius, cfg.seed) {
                let pt = illusionflow::harness::cell_target(&entry, &c, &cfg.percept).unwrap();
                let f = target_flow(&pt).unwrap();
                write_nested(&f, &archive.join(&entry.id).join(c.id()).join("pred.flo"));
            }
        }
    }
    let first = score_external(&archive, &cfg, "pred.flo").map_err(|e| e.to_string())?;
    let second = score_external(&archive, &cfg, "pred.flo").map_err(|e| e.to_string())?;
    require!(first == second, "re-scoring is not deterministic");
    let mut worst = 0f64;
    for c in &first {
        let r = c.report.as_ref().map_err(|e| format!("{}: {e}", c.key("stimulus")))?;
        worst = worst.max((r.rho - 1.0).abs());
    }
    require!(worst <= 1e-12, "self-score off by {worst:e}");
    Ok(format!("{} archived cells self-score rho = 1 (max error {worst:.1e})", first.len()))
}

fn write_nested(f: &FlowField, path: &Path) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    write_flow(f, path).unwrap();
}
