//! The seven subcommands. Each returns a JSON summary for stdout.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use jmfusion_core::evalkit::{compute_metrics, match_events, EventCounts, MetricsReport};
use jmfusion_core::fusion::{describe, Ablation, Arch, FusionLevel, FusionSpec};
use jmfusion_core::nn::{count_flops, count_params, FlopConvention, Precision};
use jmfusion_core::signals::Activity;
use jmfusion_core::synth::{generate_segment, SegmentPlan, SynthConfig};

use crate::config::{ExperimentConfig, Run};
use crate::dataset::{generate_dataset, read_labels};
use crate::error::{CliError, Result};
use crate::experiment::{evaluate_run, infer_recording, read_status, train_runs, write_json, Ctx, DataCache, MeanSd, Predictor, RunReport};

pub const METRICS: &str = "metrics.json";

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                flatten(&if prefix.is_empty() { k.clone() } else { format!("{prefix}_{k}") }, x, out)
            }
        }
        Value::String(s) => out.push((prefix.into(), s.clone())),
        Value::Null => out.push((prefix.into(), String::new())),
        x => out.push((prefix.into(), x.to_string())),
    }
}

/// CSV with nested fields flattened to `outer_inner` columns.
pub fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::format(path, e))?;
    for (i, r) in rows.iter().enumerate() {
        let mut cells = Vec::new();
        flatten("", &serde_json::to_value(r)?, &mut cells);
        if i == 0 {
            w.write_record(cells.iter().map(|c| &c.0)).map_err(|e| CliError::format(path, e))?;
        }
        w.write_record(cells.iter().map(|c| &c.1)).map_err(|e| CliError::format(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn synth(ctx: &Ctx) -> Result<Value> {
    let (m, generated) = generate_dataset(&ctx.cfg.synth, &ctx.out, ctx.jobs)?;
    let n_test = m.segments.iter().filter(|s| s.fold.is_none()).count();
    Ok(json!({
        "dataset": ctx.out,
        "segments": m.segments.len(),
        "train_segments": m.segments.len() - n_test,
        "test_segments": n_test,
        "dataset_hash": m.dataset_hash,
        "generated": generated,
    }))
}

pub fn train(ctx: &Ctx) -> Result<Value> {
    let runs = ctx.cfg.all_runs()?;
    let done = train_runs(ctx, &runs)?;
    let rows: Vec<Value> = done
        .iter()
        .map(|s| {
            json!({
                "run": s.run,
                "fold": s.fold,
                "status": s.status.status,
                "trained": s.trained,
                "best_epoch": s.status.best_epoch,
                "best_val_loss": s.status.best_val_loss,
            })
        })
        .collect();
    let summary = json!({ "runs": runs.iter().map(|r| &r.id).collect::<Vec<_>>(), "folds": rows });
    write_json(&ctx.out.join("train_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Serialize)]
struct ClassRow<'a> {
    run: &'a str,
    label: &'a str,
    split: &'a str,
    metric: &'a str,
    class: &'a str,
    mean: f64,
    sd: f64,
}

fn table_rows<'a>(r: &'a RunReport) -> Vec<ClassRow<'a>> {
    let mut out = Vec::new();
    for (split, t) in [("validation", &r.validation), ("test", &r.test)] {
        for (metric, rows) in [("f1", &t.f1), ("precision", &t.precision), ("recall", &t.recall), ("error_rate", &t.error_rate)] {
            for (class, v) in [
                ("bite", rows.bite),
                ("chew-bite", rows.chew_bite),
                ("grazing-chew", rows.grazing_chew),
                ("rumination-chew", rows.rumination_chew),
                ("overall", rows.overall),
            ] {
                out.push(ClassRow { run: &r.run, label: &r.label, split, metric, class, mean: v.mean, sd: v.sd });
            }
        }
    }
    out
}

/// Evaluate `runs` at f32, writing per-run metrics files.
fn evaluate_runs(ctx: &Ctx, runs: &[Run]) -> Result<Vec<RunReport>> {
    let ds = ctx.dataset()?;
    let cache = DataCache::default();
    let mut out = Vec::new();
    for r in runs {
        let rep = evaluate_run(ctx, r, &ds, &cache, Precision::F32)?;
        write_json(&ctx.run_dir(r).join(METRICS), &rep)?;
        out.push(rep);
    }
    Ok(out)
}

fn score_dirs(reference: &Path, predictions: &Path, tol: f64) -> Result<MetricsReport> {
    let mut names: Vec<PathBuf> = fs::read_dir(reference)
        .map_err(|e| CliError::io(reference, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Missing(format!("no .tsv reference files in {}", reference.display())));
    }
    let mut counts = EventCounts::default();
    for r in names {
        let p = predictions.join(r.file_name().expect("file"));
        let pred = if p.exists() { read_labels(&p)? } else { Vec::new() };
        counts += match_events(&read_labels(&r)?, &pred, tol)?.counts;
    }
    Ok(compute_metrics(&counts))
}

pub fn evaluate(ctx: &Ctx) -> Result<Value> {
    if let Some(s) = &ctx.cfg.score {
        let report = score_dirs(&s.reference, &s.predictions, ctx.cfg.eval.tolerance)?;
        write_json(&ctx.out.join(METRICS), &report)?;
        return Ok(serde_json::to_value(report)?);
    }
    let reports = evaluate_runs(ctx, &ctx.cfg.all_runs()?)?;
    let rows: Vec<ClassRow> = reports.iter().flat_map(table_rows).collect();
    write_rows(&ctx.out.join("metrics_per_class.csv"), &rows)?;
    let doc = json!({ "runs": reports });
    write_json(&ctx.out.join(METRICS), &doc)?;
    Ok(json!({
        "runs": reports.iter().map(|r| json!({"run": r.run, "test_f1": r.test_f1(), "validation_f1": r.validation.f1.overall})).collect::<Vec<_>>()
    }))
}

#[derive(Clone, Debug, Serialize)]
pub struct RankRow {
    pub rank: usize,
    pub run: String,
    pub label: String,
    pub level: String,
    pub window: f64,
    pub f1: MeanSd,
    pub precision: MeanSd,
    pub recall: MeanSd,
    pub error_rate: MeanSd,
    pub validation_f1: MeanSd,
}

fn rank(reports: &[RunReport], runs: &[Run]) -> Vec<RankRow> {
    let mut rows: Vec<RankRow> = reports
        .iter()
        .zip(runs)
        .map(|(r, run)| RankRow {
            rank: 0,
            run: r.run.clone(),
            label: r.label.clone(),
            level: run.spec.level.name().into(),
            window: run.spec.window,
            f1: r.test.f1.overall,
            precision: r.test.precision.overall,
            recall: r.test.recall.overall,
            error_rate: r.test.error_rate.overall,
            validation_f1: r.validation.f1.overall,
        })
        .collect();
    // stable sort keeps config order on ties
    rows.sort_by(|a, b| b.f1.mean.total_cmp(&a.f1.mean));
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    rows
}

pub fn compare_fusion(ctx: &Ctx) -> Result<Value> {
    let fusion = ctx.cfg.fusion_runs()?;
    let sweep = ctx.cfg.sweep_runs()?;
    let reports = evaluate_runs(ctx, &fusion)?;
    let ranked = rank(&reports, &fusion);
    let leader = ranked.first().map(|r| r.level.clone());
    let feature_leads = leader.as_deref() == Some(FusionLevel::Feature3Head.name());
    write_rows(&ctx.out.join("comparison.csv"), &ranked)?;
    let mut windows = Vec::new();
    if !sweep.is_empty() {
        let mut runs = vec![fusion[0].clone()];
        runs.extend(sweep);
        let rep = evaluate_runs(ctx, &runs)?;
        windows = rank(&rep, &runs);
        windows.sort_by(|a, b| a.window.total_cmp(&b.window));
        write_rows(&ctx.out.join("window_sweep.csv"), &windows)?;
    }
    let doc = json!({ "ranking": ranked, "feature_3head_leads": feature_leads, "window_sweep": windows });
    write_json(&ctx.out.join("comparison.json"), &doc)?;
    Ok(doc)
}

/// One minute of synthetic signal for timing (grazing: the denser activity).
fn timing_recording(cfg: &SynthConfig) -> Result<jmfusion_core::MultimodalRecording> {
    let c = SynthConfig { segment_duration: 60.0, ..cfg.clone() };
    let plan = SegmentPlan { id: "timing".into(), index: usize::MAX - 1, activity: Activity::Grazing, fold: None };
    Ok(generate_segment(&c, &plan)?)
}

fn graph_counts(spec: &FusionSpec) -> Result<(usize, u64)> {
    let g = describe(spec)?;
    Ok((count_params(&g), count_flops(&g, FlopConvention::default())))
}

#[derive(Serialize)]
struct AblationRow {
    variant: String,
    run: String,
    params: usize,
    flops: u64,
    full_arch_params: usize,
    full_arch_flops: u64,
    f1: MeanSd,
    precision: MeanSd,
    recall: MeanSd,
    error_rate: MeanSd,
    seconds_per_minute: MeanSd,
}

pub fn ablate(ctx: &Ctx) -> Result<Value> {
    if ctx.cfg.ablations.is_empty() {
        return Err(CliError::Config("ablate needs a non-empty `ablations` list".into()));
    }
    let mut runs = vec![];
    let first = ctx.cfg.fusion[0].resolve()?;
    for a in std::iter::once(Ablation::None).chain(ctx.cfg.ablations.iter().copied()) {
        let spec = FusionSpec { level: FusionLevel::Feature3Head, meta: None, ..first.clone() }.with_ablation(a);
        let r = Run::new(spec);
        if !runs.iter().any(|o: &Run| o.id == r.id) {
            runs.push(r);
        }
    }
    let reports = evaluate_runs(ctx, &runs)?;
    let rec = timing_recording(&ctx.cfg.synth)?;
    let folds = ctx.cfg.fold_list(ctx.cfg.synth.n_folds);
    let mut rows = Vec::new();
    for (run, rep) in runs.iter().zip(&reports) {
        let (params, flops) = graph_counts(&run.spec)?;
        let full = FusionSpec { arch: Arch::full(), ..run.spec.clone() };
        let (pp, pf) = graph_counts(&full)?;
        let k = folds
            .iter()
            .copied()
            .find(|&k| read_status(&ctx.fold_dir(run, k)).is_some_and(|s| s.completed()))
            .ok_or_else(|| CliError::Missing(format!("{}: no completed fold", run.id)))?;
        let mut p = Predictor::load(&ctx.fold_dir(run, k), run)?;
        let geo = run.spec.geometry()?;
        let mut secs = Vec::with_capacity(ctx.cfg.timing_runs);
        for _ in 0..ctx.cfg.timing_runs {
            let t0 = Instant::now();
            let ev = infer_recording(&mut p, &rec, geo, ctx.cfg.train.batch_size)?;
            std::hint::black_box(ev);
            secs.push(t0.elapsed().as_secs_f64() * 60.0 / rec.duration());
        }
        rows.push(AblationRow {
            variant: run.spec.ablation.name().into(),
            run: run.id.clone(),
            params,
            flops,
            full_arch_params: pp,
            full_arch_flops: pf,
            f1: rep.test.f1.overall,
            precision: rep.test.precision.overall,
            recall: rep.test.recall.overall,
            error_rate: rep.test.error_rate.overall,
            seconds_per_minute: crate::experiment::mean_sd(&secs),
        });
    }
    write_rows(&ctx.out.join("ablation.csv"), &rows)?;
    let doc = json!({ "timing_runs": ctx.cfg.timing_runs, "rows": rows });
    write_json(&ctx.out.join("ablation.json"), &doc)?;
    Ok(doc)
}

#[derive(Serialize)]
struct QuantRow {
    run: String,
    precision: Precision,
    payload_bytes: usize,
    f1: MeanSd,
    precision_metric: MeanSd,
    recall: MeanSd,
    error_rate: MeanSd,
    delta_f1: f64,
}

pub fn quantize(ctx: &Ctx) -> Result<Value> {
    let ds = ctx.dataset()?;
    let cache = DataCache::default();
    let folds = ctx.cfg.fold_list(ds.manifest.n_folds);
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for run in ctx.cfg.fusion_runs()? {
        let mut precisions = vec![Precision::F32];
        precisions.extend(ctx.cfg.precisions.iter().copied().filter(|&p| p != Precision::F32));
        let mut base_f1 = None;
        for p in precisions {
            let rep = evaluate_run(ctx, &run, &ds, &cache, p)?;
            let mut payload = 0;
            for &k in &folds {
                let dir = ctx.fold_dir(&run, k);
                if !read_status(&dir).is_some_and(|s| s.completed()) {
                    continue;
                }
                let q = Predictor::load(&dir, &run)?.quantize(p);
                if p != Precision::F32 {
                    q.save(&dir, &format!("-{}", p.name()))?;
                }
                payload = q.payload_bytes();
            }
            let f1 = rep.test.f1.overall;
            let base = *base_f1.get_or_insert(f1.mean);
            rows.push(QuantRow {
                run: run.id.clone(),
                precision: p,
                payload_bytes: payload,
                f1,
                precision_metric: rep.test.precision.overall,
                recall: rep.test.recall.overall,
                error_rate: rep.test.error_rate.overall,
                delta_f1: f1.mean - base,
            });
            write_json(&ctx.run_dir(&run).join(format!("metrics-{}.json", p.name())), &rep)?;
            reports.push(rep);
        }
    }
    write_rows(&ctx.out.join("quantization.csv"), &rows)?;
    let doc = json!({ "rows": rows });
    write_json(&ctx.out.join("quantization.json"), &doc)?;
    Ok(doc)
}

#[derive(Serialize)]
pub struct FlopsRow {
    pub variant: String,
    pub params: usize,
    pub flops: u64,
    pub flops_macs_only: u64,
    pub flops_with_bias: u64,
}

/// Parameter and FLOP table; without a config it uses the full-width
/// architecture for the proposed model and every ablation.
pub fn flops_table(cfg: Option<&ExperimentConfig>) -> Result<(Vec<FlopsRow>, String)> {
    let base = match cfg {
        Some(c) => FusionSpec { level: FusionLevel::Feature3Head, meta: None, ..c.fusion[0].resolve()? },
        None => FusionSpec::proposed(Arch::full()),
    };
    let mut rows = Vec::new();
    for a in Ablation::ALL {
        let g = describe(&base.clone().with_ablation(a))?;
        rows.push(FlopsRow {
            variant: a.name().into(),
            params: count_params(&g),
            flops: count_flops(&g, FlopConvention::default()),
            flops_macs_only: count_flops(&g, FlopConvention { bias: false, activations: false }),
            flops_with_bias: count_flops(&g, FlopConvention { bias: true, activations: true }),
        });
    }
    Ok((rows, describe(&base)?.summary(FlopConvention::default())))
}

pub fn flops(cfg: Option<&ExperimentConfig>, out: Option<&Path>) -> Result<Value> {
    let (rows, summary) = flops_table(cfg)?;
    if let Some(o) = out {
        write_rows(&o.join("flops.csv"), &rows)?;
        crate::dataset::write_atomic(&o.join("architecture.txt"), summary.as_bytes())?;
        write_json(&o.join("flops.json"), &json!({ "rows": rows }))?;
    }
    Ok(json!({ "rows": rows, "architecture": summary }))
}
