//! The four verbs: explain, evaluate, robustness, plotdata.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shiftex::counterfactual::apply_dice;
use shiftex::data::{assign_groups, groups_from_labels, ingest_csv, preprocess, Role};
use shiftex::maps::{apply_kcluster, apply_ot};
use shiftex::metrics::{feasibility, robustness, RobustnessOptions};
use shiftex::objective::{summarize, PeSummary, TraceRow};
use shiftex::pipeline::{fit, Params, WarmStart};
use shiftex::text::{bow_table, build_vocab, featurize, reverse_featurize};
use shiftex::{Explanation, FeasibilityRule, FeatureKind, FeatureSchema, GroupingRule, LabeledDataset, Method, OtParams};

use crate::config::{DataSpec, RunConfig};
use crate::report::{
    read_json, write_json, EvaluationReport, GroupInfo, MeanStd, RepeatSummary, RunData, Seeds, TextData, DATA,
    EVALUATION, EXPLANATION, PLOT_DIR, RENDERED, REPORT, SCHEMA_VERSION, TRACE,
};

/// Documents shown with their word edits in a text run's rendering.
const TEXT_EXAMPLES: usize = 5;

fn read_corpus(path: &Path, text_column: &str, group_column: Option<&str>) -> Result<(Vec<String>, Option<Vec<String>>)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} has no `{name}` column", path.display()))
    };
    let ti = find(text_column)?;
    let gi = group_column.map(find).transpose()?;
    let mut docs = Vec::new();
    let mut labels = gi.map(|_| Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{} row {}", path.display(), row + 1))?;
        docs.push(record.get(ti).unwrap_or_default().to_string());
        if let (Some(gi), Some(l)) = (gi, labels.as_mut()) {
            l.push(record.get(gi).unwrap_or_default().to_string());
        }
    }
    ensure!(!docs.is_empty(), "{} contains no documents", path.display());
    Ok((docs, labels))
}

fn attribute_labels(source: &LabeledDataset, target: &LabeledDataset, feature: &str) -> Vec<String> {
    let Some(fi) = source.schema.index_of(feature) else {
        return Vec::new();
    };
    let f = &source.schema.features()[fi];
    let mut values = source.raw_feature(fi);
    values.extend(target.raw_feature(fi));
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
        .into_iter()
        .map(|v| match f.kind {
            FeatureKind::Categorical => format!("{feature}={}", f.categories[v as usize]),
            _ => format!("{feature}={v}"),
        })
        .collect()
}

fn group_info(source: &LabeledDataset, target: &LabeledDataset, names: &[String]) -> Vec<GroupInfo> {
    let count = |d: &LabeledDataset, g| d.group_of.iter().filter(|&&x| x == g).count();
    (1..=source.num_groups)
        .map(|g| GroupInfo {
            id: g,
            label: names.get(g - 1).cloned().unwrap_or_else(|| format!("group {g}")),
            source_rows: count(source, g),
            target_rows: count(target, g),
        })
        .collect()
}

fn subsample(n: usize, keep: Option<usize>, seed: u64) -> Option<Vec<usize>> {
    let keep = keep.filter(|&k| k < n)?;
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, keep).into_vec();
    idx.sort_unstable();
    Some(idx)
}

/// Ingest, preprocess and group the configured data.
pub fn load_data(cfg: &RunConfig) -> Result<RunData> {
    let (source, target, labels, text) = match &cfg.data {
        DataSpec::Tabular {
            schema,
            source,
            target,
            ..
        } => {
            let schema = FeatureSchema::from_toml_file(schema)
                .with_context(|| format!("ingest: loading schema {}", schema.display()))?;
            let s = ingest_csv(source, &schema, Role::Source)
                .with_context(|| format!("ingest: reading source {}", source.display()))?;
            let t = ingest_csv(target, &schema, Role::Target)
                .with_context(|| format!("ingest: reading target {}", target.display()))?;
            let (s, t) = preprocess(&s, &t).context("preprocess")?;
            (s, t, None, None)
        }
        DataSpec::Text {
            source,
            target,
            text_column,
            group_column,
            vocab_size,
            ..
        } => {
            let (sd, sl) = read_corpus(source, text_column, group_column.as_deref()).context("ingest: source corpus")?;
            let (td, tl) = read_corpus(target, text_column, group_column.as_deref()).context("ingest: target corpus")?;
            let vocab = build_vocab(&sd, &td, *vocab_size).context("featurize: vocabulary")?;
            let s = bow_table(&featurize(&sd, &vocab), &vocab, Role::Source).context("featurize")?;
            let t = bow_table(&featurize(&td, &vocab), &vocab, Role::Target).context("featurize")?;
            let (s, t) = preprocess(&s, &t).context("preprocess")?;
            (s, t, sl.zip(tl), Some(TextData { vocab, source_docs: sd }))
        }
    };

    let (source, target, names) = match (labels, &cfg.grouping) {
        (Some(_), Some(_)) => bail!("grouping: set either `group_column` or `grouping`, not both"),
        (Some((sl, tl)), None) => groups_from_labels(&source, &target, &sl, &tl).context("grouping")?,
        (None, Some(rule)) => {
            let names = match rule {
                GroupingRule::ByAttribute { feature } => attribute_labels(&source, &target, feature),
                _ => Vec::new(),
            };
            let (s, t) = assign_groups(&source, &target, rule).context("grouping")?;
            (s, t, names)
        }
        (None, None) => (source, target, vec!["all".to_string()]),
    };

    let keep = cfg.data.sample();
    let (source, mut text) = match subsample(source.n_rows(), keep, cfg.seed) {
        Some(idx) => {
            let text = text.map(|t| TextData {
                source_docs: idx.iter().map(|&i| t.source_docs[i].clone()).collect(),
                ..t
            });
            (source.select(&idx), text)
        }
        None => (source, text),
    };
    let target = match subsample(target.n_rows(), keep, cfg.seed.wrapping_add(1)) {
        Some(idx) => target.select(&idx),
        None => target,
    };
    if let Some(t) = text.as_mut() {
        debug_assert_eq!(t.source_docs.len(), source.n_rows());
    }
    let groups = group_info(&source, &target, &names);
    Ok(RunData {
        source,
        target,
        groups,
        text,
    })
}

/// Protect unactionable features when the schema has any, otherwise
/// require mapped rows to stay in their group.
pub fn default_feasibility(source: &LabeledDataset) -> FeasibilityRule {
    if source.schema.features().iter().any(|f| !f.actionable) {
        FeasibilityRule::from_schema(source)
    } else {
        FeasibilityRule::GroupPreservation
    }
}

struct Scored {
    summary: PeSummary,
    feasible_pct: f64,
    rule: FeasibilityRule,
}

fn score(cfg: &RunConfig, data: &RunData, mapped: &Array2<f64>, rule: Option<FeasibilityRule>) -> Result<Scored> {
    let summary = summarize(mapped, &data.source, &data.target, &cfg.sinkhorn).context("evaluate: percent explained")?;
    let rule = rule
        .or_else(|| cfg.feasibility.clone())
        .unwrap_or_else(|| default_feasibility(&data.source));
    let feasible_pct = feasibility(&data.source, mapped, &rule, &data.target).context("evaluate: feasibility")?;
    Ok(Scored {
        summary,
        feasible_pct,
        rule,
    })
}

fn render(exp: &Explanation, data: &RunData) -> Result<String> {
    let mut text = exp.render(&data.source).context("render")?.text();
    if let Some(t) = &data.text {
        let shifts = exp.shifts(&data.source);
        text.push_str("\nexample edits:\n");
        for (i, doc) in t.source_docs.iter().enumerate().take(TEXT_EXAMPLES) {
            let raw: Vec<f64> = shifts
                .row(i)
                .iter()
                .zip(&data.source.scaling.columns)
                .map(|(d, s)| s.unscale_delta(*d))
                .collect();
            let edit = reverse_featurize(doc, &raw, &t.vocab).context("reverse featurize")?;
            let list = edit.edit_list();
            let list = if list.is_empty() { "no change" } else { list.as_str() };
            text.push_str(&format!("  [{i}] {list}: {}\n", edit.text));
        }
    }
    Ok(text)
}

fn flip_rate(exp: &Explanation) -> Option<f64> {
    match &exp.params {
        Params::Dice { flipped, .. } if !flipped.is_empty() => {
            Some(flipped.iter().filter(|f| **f).count() as f64 / flipped.len() as f64)
        }
        _ => None,
    }
}

fn build_report(cfg: &RunConfig, data: &RunData, exp: &Explanation, scored: Scored, rendered: String) -> EvaluationReport {
    EvaluationReport {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        method: cfg.method_name().to_string(),
        pe: scored.summary.pe,
        per_group_pe: scored.summary.group_pe.iter().copied().collect(),
        wg_pe: scored.summary.wg_pe,
        feasible_pct: scored.feasible_pct,
        feasibility_rule: scored.rule,
        flip_rate: flip_rate(exp),
        groups: data.groups.clone(),
        repeats: None,
        robustness: None,
        explanation: rendered,
        seeds: Seeds {
            run: cfg.seed,
            clustering: cfg.seed,
            optimizer: cfg.optimizer.map_or(cfg.seed, |o| o.seed),
            perturbation: cfg.perturbation.seed,
        },
        config: cfg.clone(),
    }
}

fn fit_and_score(cfg: &RunConfig) -> Result<(RunData, Explanation, Scored)> {
    let data = load_data(cfg)?;
    let exp = fit(&cfg.pipeline(), &data.source, &data.target, None, WarmStart::default()).context("fit")?;
    let scored = score(cfg, &data, &exp.mapped, None)?;
    Ok((data, exp, scored))
}

fn repeat_summary(cfg: &RunConfig, first: &Scored) -> Result<Option<RepeatSummary>> {
    if cfg.repeats <= 1 {
        return Ok(None);
    }
    let mut seeds = vec![cfg.seed];
    let mut pe = vec![first.summary.pe];
    let mut wg = vec![first.summary.wg_pe];
    let mut feas = vec![first.feasible_pct];
    for r in 1..cfg.repeats as u64 {
        let seed = cfg.seed.wrapping_add(r);
        let (_, _, s) = fit_and_score(&cfg.with_seed(seed)?).with_context(|| format!("repeat with seed {seed}"))?;
        seeds.push(seed);
        pe.push(s.summary.pe);
        wg.push(s.summary.wg_pe);
        feas.push(s.feasible_pct);
    }
    Ok(Some(RepeatSummary {
        seeds,
        pe: MeanStd::of(&pe),
        wg_pe: MeanStd::of(&wg),
        feasible_pct: MeanStd::of(&feas),
    }))
}

fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["iteration", "loss", "pe", "wg_pe"])?;
    for r in trace {
        w.write_record([r.iteration.to_string(), r.loss.to_string(), r.pe.to_string(), r.wg_pe.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_run(dir: &Path, report: &EvaluationReport, data: &RunData, exp: &Explanation) -> Result<()> {
    report.validate().context("report failed validation")?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(dir, DATA, data)?;
    write_json(dir, EXPLANATION, exp)?;
    write_json(dir, REPORT, report)?;
    std::fs::write(dir.join(RENDERED), &report.explanation)?;
    write_trace(&dir.join(TRACE), &exp.trace)
}

/// Fit the configured explanation and write a run directory.
pub fn explain(cfg: &RunConfig, dir: &Path) -> Result<EvaluationReport> {
    let (data, exp, scored) = fit_and_score(cfg)?;
    let repeats = repeat_summary(cfg, &scored)?;
    let rendered = render(&exp, &data)?;
    let mut report = build_report(cfg, &data, &exp, scored, rendered);
    report.repeats = repeats;
    write_run(dir, &report, &data, &exp)?;
    Ok(report)
}

/// Fit, then refit on perturbed sources and report Ω.
pub fn robustness_run(cfg: &RunConfig, dir: &Path) -> Result<EvaluationReport> {
    let (data, exp, scored) = fit_and_score(cfg)?;
    let s = cfg.robustness;
    let opts = RobustnessOptions {
        mean_trials: s.trials,
        worst_trials: s.worst_trials,
        warm_start: WarmStart {
            enabled: s.warm_start,
            freeze_clusters: s.freeze_clusters,
        },
        perturbation: cfg.perturbation,
    };
    let rob = robustness(&cfg.pipeline(), &data.source, &data.target, &exp, &opts).context("robustness")?;
    let rendered = render(&exp, &data)?;
    let mut report = build_report(cfg, &data, &exp, scored, rendered);
    report.robustness = Some(rob);
    write_run(dir, &report, &data, &exp)?;
    Ok(report)
}

/// Recompute the mapped source from stored parameters.
fn remap(cfg: &RunConfig, data: &RunData, exp: &Explanation) -> Result<Array2<f64>> {
    let rows = &data.source.rows;
    let mapped = match (&exp.params, cfg.method) {
        (Params::KCluster { model, shifts }, Some(Method::KCluster { .. })) => apply_kcluster(rows, model, shifts)?,
        (Params::Ot { shifts }, Some(Method::Ot)) => apply_ot(rows, &OtParams { deltas: shifts.clone() })?,
        (Params::Dice { classifier, .. }, Some(Method::Dice { counterfactual, .. })) => {
            apply_dice(rows, classifier, &counterfactual)?.mapped
        }
        _ => bail!("stored parameters do not match the configured method"),
    };
    Ok(mapped)
}

/// Re-score a run directory from its stored parameters and data.
pub fn evaluate(dir: &Path, rule: Option<FeasibilityRule>) -> Result<EvaluationReport> {
    let stored: EvaluationReport = read_json(dir, REPORT)?;
    let data: RunData = read_json(dir, DATA)?;
    let exp: Explanation = read_json(dir, EXPLANATION)?;
    let cfg = &stored.config;
    ensure!(
        data.source.dim() == data.target.dim() && data.source.n_rows() == exp.mapped.nrows(),
        "run artifacts in {} are inconsistent",
        dir.display()
    );
    let mapped = remap(cfg, &data, &exp).context("evaluate: applying stored parameters")?;
    let drift = (&mapped - &exp.mapped).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure!(drift <= 1e-9, "stored mapped rows disagree with stored parameters (max difference {drift})");
    let scored = score(cfg, &data, &mapped, rule)?;
    let mut report = build_report(cfg, &data, &exp, scored, stored.explanation.clone());
    report.repeats = stored.repeats;
    report.robustness = stored.robustness;
    report.validate()?;
    write_json(dir, EVALUATION, &report)?;
    Ok(report)
}

/// Write CSVs for plotting under `<run>/plot`.
pub fn plotdata(dir: &Path) -> Result<Vec<PathBuf>> {
    let report: EvaluationReport = read_json(dir, REPORT)?;
    let exp: Explanation = read_json(dir, EXPLANATION)?;
    let out = dir.join(PLOT_DIR);
    std::fs::create_dir_all(&out)?;
    let mut written = Vec::new();

    let trace = out.join("trace.csv");
    write_trace(&trace, &exp.trace)?;
    written.push(trace);

    let groups = out.join("group_pe.csv");
    let mut w = csv::Writer::from_path(&groups)?;
    w.write_record(["group", "label", "source_rows", "target_rows", "pe"])?;
    for g in &report.groups {
        let pe = report.per_group_pe.get(&g.id).map_or_else(String::new, |v| v.to_string());
        w.write_record([g.id.to_string(), g.label.clone(), g.source_rows.to_string(), g.target_rows.to_string(), pe])?;
    }
    w.flush()?;
    written.push(groups);

    if let Some(r) = &report.robustness {
        let path = out.join("robustness.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["seed", "omega", "displacement_omega"])?;
        for t in &r.per_trial {
            w.write_record([t.seed.to_string(), t.omega.to_string(), t.displacement_omega.to_string()])?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
