use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, Context};

use rda_core::data::{
    generate_contaminated_pair, load_csv, read_numeric_table, write_provenance_csv, DataError, LabeledDataset,
    Provenance,
};
use rda_core::diagnostics::{
    accuracy, confusion_from_diagnostics, diagnose as diagnose_cases, fit_farness, posteriors_from_scores, qq_data,
    silhouette_summary, write_diagnostics_csv, CaseDiagnostics, DiagnosticsError, FarnessModel, OutlierRule,
};
use rda_core::discriminant::{
    fit as fit_model, predict_batch, DAModel, DASpec, Engine, Estimation, FitError, ModelError, Rule,
};
use rda_core::viz::{
    class_map, mosaic_plot, plot_csv_string, qq_plot, quasi_residual_plot, render_svg, scatter_plot,
    score_score_plot, silhouette_plot, Marker, Orientation, PlotData, QrpMode, ScatterOptions, SvgStyle, VizError,
};

use crate::args::{
    DiagnoseArgs, EngineArg, EstimationArg, FitArgs, OrientationArg, OutlierRuleArg, PlotArgs, PlotKindArg,
    PredictArgs, RuleArg, SimulateArgs,
};
use crate::config::RunConfig;
use crate::output::{ensure_dir, write_atomic};
use crate::CliError;

fn data_err(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Data(e.into())
}

fn fit_err(e: FitError) -> CliError {
    match e {
        FitError::Spec(m) => CliError::Usage(m),
        FitError::TooFewClasses(_) => CliError::Data(e.into()),
        _ => CliError::Numerical(e.into()),
    }
}

fn viz_err(e: VizError) -> CliError {
    match e {
        VizError::Unsupported { .. } | VizError::NotBivariate(_) => CliError::Usage(e.to_string()),
        _ => CliError::Data(e.into()),
    }
}

fn diag_err(e: DiagnosticsError) -> CliError {
    match e {
        DiagnosticsError::SingleClass => CliError::Usage(e.to_string()),
        _ => CliError::Data(e.into()),
    }
}

fn dataset_csv(data: &LabeledDataset, label_column: &str) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    data.write_csv(&mut buf, label_column, None).map_err(data_err)?;
    Ok(buf)
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(a.config.as_deref())?.simulate;
    let overrides = [
        (a.n1, &mut cfg.n1),
        (a.n2, &mut cfg.n2),
        (a.swap1, &mut cfg.swap1),
        (a.swap2, &mut cfg.swap2),
        (a.out1, &mut cfg.out1),
        (a.out2, &mut cfg.out2),
    ];
    for (flag, slot) in overrides {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let pair = generate_contaminated_pair(&cfg).map_err(|e| match e {
        DataError::Config(m) => CliError::Usage(m),
        other => data_err(other),
    })?;
    ensure_dir(&a.out_dir)?;
    write_atomic(&a.out_dir.join("clean.csv"), &dataset_csv(&pair.clean, &a.label_column)?)?;
    write_atomic(
        &a.out_dir.join("contaminated.csv"),
        &dataset_csv(&pair.contaminated, &a.label_column)?,
    )?;
    let mut prov = Vec::new();
    write_provenance_csv(&mut prov, &pair.provenance).map_err(data_err)?;
    write_atomic(&a.out_dir.join("provenance.csv"), &prov)?;
    let count = |p: Provenance| pair.provenance.iter().filter(|&&q| q == p).count();
    println!(
        "wrote {} cases to {} ({} mislabeled, {} replaced)",
        pair.contaminated.n(),
        a.out_dir.display(),
        count(Provenance::Mislabeled),
        count(Provenance::Replaced)
    );
    Ok(())
}

fn build_spec(a: &FitArgs, cfg: &RunConfig) -> DASpec {
    let f = &cfg.fit;
    let rule = match a.rule {
        Some(RuleArg::Quadratic) => Rule::Quadratic,
        Some(RuleArg::Linear) => Rule::Linear,
        None => f.rule.unwrap_or(Rule::Quadratic),
    };
    let estimation = match a.estimation {
        Some(EstimationArg::Robust) => Estimation::Robust,
        Some(EstimationArg::Classical) => Estimation::Classical,
        None => f.estimation.unwrap_or(Estimation::Robust),
    };
    let mut spec = DASpec::new(rule, estimation);
    spec.engine = match a.engine {
        Some(EngineArg::Fastmcd) => Engine::FastMcd,
        Some(EngineArg::Exact) => Engine::Exact,
        None => f.engine.unwrap_or(Engine::FastMcd),
    };
    if let Some(alpha) = a.alpha.or(f.alpha) {
        spec.estimator.alpha = alpha;
    }
    if let Some(starts) = a.starts.or(f.starts) {
        spec.estimator.n_starts = starts;
    }
    if let Some(seed) = a.seed.or(f.seed) {
        spec.estimator.seed = seed;
    }
    if let Some(cutoff) = a.cutoff.or(f.cutoff) {
        spec.outlier_cutoff_prob = cutoff;
    }
    spec
}

fn load_data(path: &Path, label_column: &str) -> Result<LabeledDataset, CliError> {
    load_csv(path, label_column)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Data)
}

pub fn fit(a: FitArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let spec = build_spec(&a, &cfg);
    spec.validate().map_err(fit_err)?;
    let data = load_data(&a.input.data, &a.input.label_column)?;
    let model = fit_model(&data, &spec).map_err(fit_err)?;
    write_atomic(&a.model, model.to_json().as_bytes())?;
    println!(
        "{} fit on {} cases, {} features, {} classes",
        spec.acronym(),
        data.n(),
        data.p(),
        model.n_classes()
    );
    for g in 0..model.n_classes() {
        println!(
            "  class {}: n = {}, unflagged = {}, prior = {:.4}",
            model.class_names()[g],
            model.class_sizes()[g],
            model.unflagged_counts()[g],
            model.priors()[g]
        );
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<DAModel, CliError> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Data)?;
    DAModel::from_json(&text).map_err(|e: ModelError| {
        CliError::Data(anyhow!(e).context(format!("loading model {}", path.display())))
    })
}

/// Loads labeled data and orders its classes like the model's.
fn load_for_model(model: &DAModel, path: &Path, label_column: &str) -> Result<LabeledDataset, CliError> {
    let data = load_data(path, label_column)?;
    if data.p() != model.p() {
        return Err(data_err(anyhow!(
            "{} has {} features, the model expects {}",
            path.display(),
            data.p(),
            model.p()
        )));
    }
    data.reorder_classes(model.class_names()).map_err(data_err)
}

pub fn predict(a: PredictArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let file = File::open(&a.data)
        .with_context(|| format!("reading {}", a.data.display()))
        .map_err(CliError::Data)?;
    let table = read_numeric_table(file, Some(&a.label_column), false).map_err(data_err)?;
    if table.values.ncols() != model.p() {
        return Err(data_err(anyhow!(
            "{} has {} features, the model expects {}",
            a.data.display(),
            table.values.ncols(),
            model.p()
        )));
    }
    let preds = predict_batch(&model, &table.values).map_err(data_err)?;
    let names = model.class_names();
    let mut out = String::from("case,predicted,overall_outlier");
    for prefix in ["score", "rd", "posterior"] {
        for c in names {
            let _ = write!(out, ",{prefix}_{c}");
        }
    }
    if table.text_column.is_some() {
        out.push_str(",given");
    }
    out.push('\n');
    for (i, p) in preds.iter().enumerate() {
        let _ = write!(out, "{},{},{}", i + 1, names[p.predicted], p.overall_outlier);
        let post = posteriors_from_scores(&p.scores);
        for v in p.scores.iter().chain(&p.distances).chain(&post) {
            let _ = write!(out, ",{v}");
        }
        if let Some(given) = &table.text_column {
            let _ = write!(out, ",{}", given[i]);
        }
        out.push('\n');
    }
    write_atomic(&a.out, out.as_bytes())?;
    let outliers = preds.iter().filter(|p| p.overall_outlier).count();
    println!("predicted {} cases ({} overall outliers)", preds.len(), outliers);
    Ok(())
}

struct Diagnosed {
    model: DAModel,
    data: LabeledDataset,
    fm: FarnessModel,
    diags: Vec<CaseDiagnostics>,
}

fn run_diagnostics(model_path: &Path, data_path: &Path, label_column: &str) -> Result<Diagnosed, CliError> {
    let model = load_model(model_path)?;
    let data = load_for_model(&model, data_path, label_column)?;
    let fm = fit_farness(&model, &data).map_err(diag_err)?;
    let diags = diagnose_cases(&model, &data, &fm).map_err(diag_err)?;
    Ok(Diagnosed {
        model,
        data,
        fm,
        diags,
    })
}

pub fn diagnose(a: DiagnoseArgs) -> Result<(), CliError> {
    let d = run_diagnostics(&a.model, &a.input.data, &a.input.label_column)?;
    let names = d.model.class_names();
    let mut csv = Vec::new();
    write_diagnostics_csv(&mut csv, &d.diags, names).map_err(data_err)?;
    write_atomic(&a.out, &csv)?;

    let rule = match a.outlier_rule {
        OutlierRuleArg::Distance => OutlierRule::Distance,
        OutlierRuleArg::Farness => OutlierRule::Farness,
    };
    let cm = confusion_from_diagnostics(&d.diags, names, rule);
    if let Some(path) = &a.confusion {
        let mut buf = Vec::new();
        cm.write_csv(&mut buf).map_err(data_err)?;
        write_atomic(path, &buf)?;
    }
    let summary = silhouette_summary(&d.diags, names.len()).map_err(diag_err)?;
    println!("{} diagnostics on {} cases", d.model.spec().acronym(), d.data.n());
    print!("{}", cm.to_text());
    println!("accuracy: {:.4}", accuracy(&cm, false));
    println!("accuracy excluding outliers: {:.4}", accuracy(&cm, true));
    println!(
        "overall outliers: {} by distance, {} by farness",
        d.diags.iter().filter(|c| c.outlier_distance).count(),
        d.diags.iter().filter(|c| c.outlier_farness).count()
    );
    for (g, avg) in summary.per_class.iter().enumerate() {
        match avg {
            Some(v) => println!("silhouette class {}: {v:.4}", names[g]),
            None => println!("silhouette class {}: no cases", names[g]),
        }
    }
    println!("silhouette overall: {:.4}", summary.overall);
    Ok(())
}

fn class_index(names: &[String], wanted: &str) -> Result<usize, CliError> {
    names
        .iter()
        .position(|n| n == wanted)
        .ok_or_else(|| CliError::Usage(format!("unknown class `{wanted}`")))
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn read_markers(path: &Path, n: usize) -> Result<Vec<Marker>, CliError> {
    let mut rdr = csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(CliError::Data)?;
    let col = rdr
        .headers()
        .map_err(data_err)?
        .iter()
        .position(|h| h == "provenance")
        .ok_or_else(|| data_err(anyhow!("{} has no `provenance` column", path.display())))?;
    let mut markers = Vec::with_capacity(n);
    for rec in rdr.records() {
        let rec = rec.map_err(data_err)?;
        markers.push(if rec.get(col) == Some("mislabeled") {
            Marker::Diamond
        } else {
            Marker::Circle
        });
    }
    Ok(markers)
}

pub fn plot(a: PlotArgs) -> Result<(), CliError> {
    let d = run_diagnostics(&a.model, &a.input.data, &a.input.label_column)?;
    let names = d.model.class_names().to_vec();
    let classes: Vec<usize> = if a.classes.is_empty() {
        (0..names.len()).collect()
    } else {
        a.classes
            .iter()
            .map(|c| class_index(&names, c))
            .collect::<Result<_, _>>()?
    };
    ensure_dir(&a.out_dir)?;
    let mut plots: Vec<(String, PlotData)> = Vec::new();
    for kind in &a.kind {
        match kind {
            PlotKindArg::Scoreplot => {
                plots.push(("scoreplot".into(), score_score_plot(&d.model, &d.data).map_err(viz_err)?));
            }
            PlotKindArg::Mosaic => {
                let cm = confusion_from_diagnostics(&d.diags, &names, OutlierRule::Distance);
                plots.push(("mosaic".into(), mosaic_plot(&cm).map_err(viz_err)?));
            }
            PlotKindArg::Silhouette => {
                let o = match a.orientation {
                    OrientationArg::Horizontal => Orientation::Horizontal,
                    OrientationArg::Vertical => Orientation::Vertical,
                };
                plots.push(("silhouette".into(), silhouette_plot(&d.diags, &names, o).map_err(viz_err)?));
            }
            PlotKindArg::Qrp => {
                let feature = qrp_feature(&a.feature, &d)?;
                if a.combined {
                    let pd = quasi_residual_plot(&d.diags, &feature, &a.feature, &names, QrpMode::Combined)
                        .map_err(viz_err)?;
                    plots.push(("qrp_combined".into(), pd));
                } else {
                    for &g in &classes {
                        let pd = quasi_residual_plot(&d.diags, &feature, &a.feature, &names, QrpMode::PerClass(g))
                            .map_err(viz_err)?;
                        plots.push((format!("qrp_{}", safe_name(&names[g])), pd));
                    }
                }
            }
            PlotKindArg::Classmap => {
                for &g in &classes {
                    let pd = class_map(&d.diags, &d.fm, g, &names).map_err(viz_err)?;
                    plots.push((format!("classmap_{}", safe_name(&names[g])), pd));
                }
            }
            PlotKindArg::Qq => {
                for &g in &classes {
                    let sq: Vec<f64> = d
                        .diags
                        .iter()
                        .filter(|c| c.given == g)
                        .map(|c| c.rd_given * c.rd_given)
                        .collect();
                    let qq = qq_data(&sq, d.model.p()).map_err(diag_err)?;
                    let title = format!("Chi-squared Q-Q plot, class {}", names[g]);
                    plots.push((format!("qq_{}", safe_name(&names[g])), qq_plot(&qq, &title).map_err(viz_err)?));
                }
            }
            PlotKindArg::Scatter => {
                let markers = match &a.provenance {
                    Some(p) => {
                        let m = read_markers(p, d.data.n())?;
                        if m.len() != d.data.n() {
                            return Err(data_err(anyhow!(
                                "{} has {} rows, data has {}",
                                p.display(),
                                m.len(),
                                d.data.n()
                            )));
                        }
                        Some(m)
                    }
                    None => None,
                };
                let opts = ScatterOptions {
                    grid: a.grid,
                    markers,
                    ..Default::default()
                };
                plots.push(("scatter".into(), scatter_plot(&d.model, &d.data, &opts).map_err(viz_err)?));
            }
        }
    }
    let style = SvgStyle::default();
    for (stem, pd) in &plots {
        let path = a.out_dir.join(format!("{stem}.svg"));
        write_atomic(&path, render_svg(pd, &style).as_bytes())?;
        if a.csv {
            write_atomic(&a.out_dir.join(format!("{stem}.csv")), plot_csv_string(pd).as_bytes())?;
        }
        for w in &pd.warnings {
            eprintln!("warning ({stem}): {w}");
        }
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn qrp_feature(name: &str, d: &Diagnosed) -> Result<Vec<f64>, CliError> {
    match name {
        "rd-predicted" => Ok(d.diags.iter().map(|c| c.rd_predicted).collect()),
        "rd-given" => Ok(d.diags.iter().map(|c| c.rd_given).collect()),
        "farness" => d
            .diags
            .iter()
            .map(|c| {
                c.farness_given().ok_or_else(|| {
                    diag_err(DiagnosticsError::FarnessUnavailable {
                        class: d.model.class_names()[c.given].clone(),
                        cases: d.data.class_sizes()[c.given],
                    })
                })
            })
            .collect(),
        column => {
            let j = d
                .data
                .feature_names()
                .iter()
                .position(|f| f == column)
                .ok_or_else(|| CliError::Usage(format!("unknown QRP feature `{column}`")))?;
            Ok(d.data.features().column(j).iter().copied().collect())
        }
    }
}
