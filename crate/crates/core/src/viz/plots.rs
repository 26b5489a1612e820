use crate::data::LabeledDataset;
use crate::diagnostics::{CaseDiagnostics, ConfusionMatrix, FarnessModel, QqData};
use crate::discriminant::{predict, predict_batch, DAModel};
use crate::special::{erf, erf_inv};

use super::{
    contour_segments, Annotation, Axis, Color, Curve, LegendEntry, LineStyle, Marker, PlotData,
    PlotKind, Point, Rect, VizError,
};

/// Farness values marked on the class-map axis.
pub const CLASS_MAP_TICKS: [f64; 6] = [0.0, 0.5, 0.75, 0.9, 0.99, 1.0];
/// Equal-count bins behind the combined QRP average curve.
pub const QRP_BINS: usize = 10;

const CLASS_MAP_END: f64 = 4.0;

fn class_legend(names: &[String]) -> Vec<LegendEntry> {
    names
        .iter()
        .enumerate()
        .map(|(g, n)| LegendEntry {
            label: format!("class {n}"),
            color: Color::Class(g),
            marker: Marker::Circle,
        })
        .collect()
}

fn extent(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Discriminant score of class 1 against that of class 2, with the identity line.
pub fn score_score_plot(model: &DAModel, data: &LabeledDataset) -> Result<PlotData, VizError> {
    if model.n_classes() != 2 {
        return Err(VizError::Unsupported {
            classes: model.n_classes(),
        });
    }
    let preds = predict_batch(model, data.features())?;
    let (lo, hi) = extent(preds.iter().flat_map(|p| p.scores.iter().copied()));
    if !lo.is_finite() {
        return Err(VizError::Empty("no cases"));
    }
    let names = model.class_names();
    let mut pd = PlotData::new(
        PlotKind::ScoreScore,
        format!("{} score-score plot", model.spec().acronym()),
        Axis::auto(format!("score of class {}", names[0]), lo, hi),
        Axis::auto(format!("score of class {}", names[1]), lo, hi),
    );
    let (a, b) = (pd.x_axis.min, pd.x_axis.max);
    pd.curves.push(Curve::line(vec![(a, a), (b, b)], Color::Gray, LineStyle::Solid).labeled("identity"));
    for (i, (pr, &g)) in preds.iter().zip(data.labels()).enumerate() {
        pd.points.push(Point {
            x: pr.scores[0],
            y: pr.scores[1],
            color: Color::Class(g),
            border: pr.overall_outlier,
            marker: Marker::Circle,
            label: Some(format!("case {}", i + 1)),
        });
    }
    pd.legend = class_legend(names);
    Ok(pd)
}

/// Columns for given classes with widths `n_g / N`; stacked cells with
/// heights proportional to the predicted counts, so cell areas are `count / N`.
pub fn mosaic_plot(cm: &ConfusionMatrix) -> Result<PlotData, VizError> {
    let total = cm.total();
    if total == 0 {
        return Err(VizError::Empty("confusion matrix has no cases"));
    }
    let names = cm.class_names();
    let cols = cm.column_labels();
    let groups = names.len();
    let mut pd = PlotData::new(
        PlotKind::Mosaic,
        "Stacked mosaic plot",
        Axis::fixed("given class", 0.0, 1.0),
        Axis::fixed("predicted class", 0.0, 1.0),
    );
    pd.x_axis.ticks.clear();
    let mut x = 0.0;
    for (g, row) in cm.counts().iter().enumerate() {
        let size: usize = row.iter().sum();
        if size == 0 {
            continue;
        }
        let width = size as f64 / total as f64;
        pd.x_axis.ticks.push((x + width / 2.0, names[g].clone()));
        let mut y = 1.0;
        for (j, &count) in row.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let height = count as f64 / size as f64;
            y -= height;
            pd.rects.push(Rect {
                x,
                y: y.max(0.0),
                width,
                height,
                color: if j < groups { Color::Class(j) } else { Color::Outlier },
                label: Some(format!("given={} predicted={} count={count}", names[g], cols[j])),
            });
        }
        x += width;
    }
    pd.legend = class_legend(names);
    if cm.has_outlier_column() {
        pd.legend.push(LegendEntry {
            label: "outliers".into(),
            color: Color::Outlier,
            marker: Marker::Circle,
        });
    }
    Ok(pd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    /// Bars extend horizontally.
    #[default]
    Horizontal,
    Vertical,
}

/// One bar per case, grouped by given class and sorted by decreasing width.
pub fn silhouette_plot(
    diags: &[CaseDiagnostics],
    class_names: &[String],
    orientation: Orientation,
) -> Result<PlotData, VizError> {
    if diags.is_empty() {
        return Err(VizError::Empty("no cases"));
    }
    let groups = class_names.len();
    let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); groups];
    for d in diags {
        by_class
            .get_mut(d.given)
            .ok_or(VizError::ClassOutOfRange(d.given))?
            .push(d.silhouette);
    }
    for v in &mut by_class {
        v.sort_by(|a, b| b.total_cmp(a));
    }
    let slots = diags.len() + groups.saturating_sub(1);
    let value_axis = Axis::fixed("silhouette width", -1.0, 1.0);
    let mut case_axis = Axis::fixed("cases", 0.0, slots as f64);
    case_axis.ticks.clear();
    let horizontal = orientation == Orientation::Horizontal;
    let (xa, ya) = if horizontal {
        (value_axis, case_axis)
    } else {
        (case_axis, value_axis)
    };
    let mut pd = PlotData::new(PlotKind::Silhouette, "Silhouette plot", xa, ya);
    let overall = diags.iter().map(|d| d.silhouette).sum::<f64>() / diags.len() as f64;
    let mut slot = 0.0;
    for (g, vals) in by_class.iter().enumerate() {
        if vals.is_empty() {
            continue;
        }
        let start = slot;
        for &s in vals {
            // horizontal bars stack top-down so the first class is on top
            let pos = if horizontal { slots as f64 - slot - 1.0 } else { slot };
            let (lo, len) = if s < 0.0 { (s, -s) } else { (0.0, s) };
            let rect = if horizontal {
                Rect {
                    x: lo,
                    y: pos,
                    width: len,
                    height: 1.0,
                    color: Color::Class(g),
                    label: None,
                }
            } else {
                Rect {
                    x: pos,
                    y: lo,
                    width: 1.0,
                    height: len,
                    color: Color::Class(g),
                    label: None,
                }
            };
            pd.rects.push(rect);
            slot += 1.0;
        }
        let avg = vals.iter().sum::<f64>() / vals.len() as f64;
        let mid = (start + slot) / 2.0;
        let text = format!("{}: n = {}, avg {:.2}", class_names[g], vals.len(), avg);
        pd.annotations.push(if horizontal {
            Annotation {
                x: -0.95,
                y: slots as f64 - mid,
                text,
            }
        } else {
            Annotation {
                x: start,
                y: -0.95,
                text,
            }
        });
        slot += 1.0;
    }
    pd.title = format!("Silhouette plot, overall average width {overall:.2}");
    pd.legend = class_legend(class_names);
    Ok(pd)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QrpMode {
    /// Cases of one given class, colored by predicted class.
    PerClass(usize),
    /// All cases colored by given class, with an average curve.
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStat {
    /// Mean feature value of the bin's cases.
    pub center: f64,
    pub mean: f64,
    /// Sample standard deviation over the square root of the count.
    pub se: f64,
    pub count: usize,
}

/// Mean and standard error of `values` in `bins` equal-count bins of `feature`.
pub fn binned_average(feature: &[f64], values: &[f64], bins: usize) -> Vec<BinStat> {
    let n = feature.len().min(values.len());
    if n == 0 || bins == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| feature[a].total_cmp(&feature[b]).then(a.cmp(&b)));
    let bins = bins.min(n);
    (0..bins)
        .map(|b| {
            let idx = &order[b * n / bins..(b + 1) * n / bins];
            let k = idx.len() as f64;
            let center = idx.iter().map(|&i| feature[i]).sum::<f64>() / k;
            let mean = idx.iter().map(|&i| values[i]).sum::<f64>() / k;
            let se = if idx.len() > 1 {
                let var = idx.iter().map(|&i| (values[i] - mean).powi(2)).sum::<f64>() / (k - 1.0);
                var.sqrt() / k.sqrt()
            } else {
                0.0
            };
            BinStat {
                center,
                mean,
                se,
                count: idx.len(),
            }
        })
        .collect()
}

fn pac_axis() -> Axis {
    Axis::fixed("P[alternative class]", 0.0, 1.0)
}

fn gray_band(pd: &mut PlotData) {
    pd.rects.push(Rect {
        x: pd.x_axis.min,
        y: 0.0,
        width: pd.x_axis.max - pd.x_axis.min,
        height: 0.5,
        color: Color::LightGray,
        label: Some("given label matches prediction".into()),
    });
}

/// PAC against an arbitrary per-case feature.
pub fn quasi_residual_plot(
    diags: &[CaseDiagnostics],
    feature: &[f64],
    feature_name: &str,
    class_names: &[String],
    mode: QrpMode,
) -> Result<PlotData, VizError> {
    if feature.len() != diags.len() {
        return Err(VizError::Length {
            expected: diags.len(),
            got: feature.len(),
        });
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(VizError::NonFinite("feature"));
    }
    let members: Vec<usize> = match mode {
        QrpMode::PerClass(g) => {
            if g >= class_names.len() {
                return Err(VizError::ClassOutOfRange(g));
            }
            (0..diags.len()).filter(|&i| diags[i].given == g).collect()
        }
        QrpMode::Combined => (0..diags.len()).collect(),
    };
    let (lo, hi) = extent(members.iter().map(|&i| feature[i]));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let title = match mode {
        QrpMode::PerClass(g) => format!("Quasi residual plot, class {}", class_names[g]),
        QrpMode::Combined => "Quasi residual plot, all classes".into(),
    };
    let mut pd = PlotData::new(PlotKind::QuasiResidual, title, Axis::auto(feature_name, lo, hi), pac_axis());
    gray_band(&mut pd);
    for &i in &members {
        let d = &diags[i];
        let (color, border) = match mode {
            QrpMode::PerClass(_) => (Color::Class(d.predicted), d.outlier_distance),
            QrpMode::Combined => (Color::Class(d.given), false),
        };
        pd.points.push(Point {
            x: feature[i],
            y: d.pac,
            color,
            border,
            marker: Marker::Circle,
            label: Some(format!("case {}", i + 1)),
        });
    }
    if mode == QrpMode::Combined && !members.is_empty() {
        if lo == hi {
            pd.warnings
                .push("feature is constant; average curve collapses to one bin".into());
        }
        let pacs: Vec<f64> = diags.iter().map(|d| d.pac).collect();
        let mut stats = binned_average(feature, &pacs, QRP_BINS);
        if lo == hi {
            let all = binned_average(feature, &pacs, 1);
            stats = all;
        }
        let line = |f: &dyn Fn(&BinStat) -> f64| -> Vec<(f64, f64)> {
            let mut pts: Vec<(f64, f64)> = stats.iter().map(|s| (s.center, f(s).clamp(0.0, 1.0))).collect();
            if pts.len() == 1 {
                // a lone bin is drawn as a flat segment across the axis
                let y = pts[0].1;
                pts = vec![(pd.x_axis.min, y), (pd.x_axis.max, y)];
            }
            pts
        };
        pd.curves.push(Curve::line(line(&|s| s.mean), Color::Red, LineStyle::Solid).labeled("average"));
        pd.curves
            .push(Curve::line(line(&|s| s.mean + s.se), Color::Red, LineStyle::Dashed).labeled("average + se"));
        pd.curves
            .push(Curve::line(line(&|s| s.mean - s.se), Color::Red, LineStyle::Dashed).labeled("average - se"));
    }
    pd.legend = class_legend(class_names);
    Ok(pd)
}

/// Position in `[0, 4]` whose truncated standard normal CDF equals `farness`.
pub fn farness_to_position(farness: f64) -> f64 {
    let f = farness.clamp(0.0, 1.0);
    let scale = erf(CLASS_MAP_END / std::f64::consts::SQRT_2);
    let t = std::f64::consts::SQRT_2 * erf_inv(f * scale).unwrap_or(if f > 0.5 { CLASS_MAP_END } else { 0.0 });
    t.clamp(0.0, CLASS_MAP_END)
}

pub fn position_to_farness(t: f64) -> f64 {
    let scale = erf(CLASS_MAP_END / std::f64::consts::SQRT_2);
    (erf(t / std::f64::consts::SQRT_2) / scale).clamp(0.0, 1.0)
}

/// PAC against transformed farness for the cases of given class `g`.
pub fn class_map(
    diags: &[CaseDiagnostics],
    fm: &FarnessModel,
    g: usize,
    class_names: &[String],
) -> Result<PlotData, VizError> {
    if g >= class_names.len() {
        return Err(VizError::ClassOutOfRange(g));
    }
    fm.farness(g, 0.0)?;
    let mut x_axis = Axis::fixed("farness from given class", 0.0, CLASS_MAP_END);
    x_axis.ticks = CLASS_MAP_TICKS
        .iter()
        .map(|&f| (farness_to_position(f), f.to_string()))
        .collect();
    x_axis.transform = Some("position t in [0,4] with farness = (Phi(t) - Phi(0)) / (Phi(4) - Phi(0))".into());
    let mut pd = PlotData::new(
        PlotKind::ClassMap,
        format!("Class map, class {}", class_names[g]),
        x_axis,
        pac_axis(),
    );
    gray_band(&mut pd);
    for (i, d) in diags.iter().enumerate().filter(|(_, d)| d.given == g) {
        let f = d.farness[g].ok_or_else(|| VizError::Empty("farness missing for a case"))?;
        pd.points.push(Point {
            x: farness_to_position(f),
            y: d.pac,
            color: Color::Class(d.predicted),
            border: d.outlier_farness,
            marker: Marker::Circle,
            label: Some(format!("case {}", i + 1)),
        });
    }
    pd.legend = class_legend(class_names);
    Ok(pd)
}

/// Chi-squared Q-Q plot with the identity line and the 0.99 cutoff.
pub fn qq_plot(qq: &QqData, title: &str) -> Result<PlotData, VizError> {
    if qq.pairs.is_empty() {
        return Err(VizError::Empty("no distances"));
    }
    let (lo, hi) = (qq.identity_line[0].0, qq.identity_line[1].0);
    let (ylo, yhi) = extent(qq.pairs.iter().map(|p| p.1).chain([qq.cutoff]));
    let (xlo, xhi) = extent(qq.pairs.iter().map(|p| p.0));
    let mut pd = PlotData::new(
        PlotKind::Qq,
        title,
        Axis::auto(format!("chi-squared quantile, {} dof", qq.dof), xlo.min(lo), xhi),
        Axis::auto("squared robust distance", ylo.min(lo), yhi.max(hi)),
    );
    pd.curves.push(Curve::line(qq.identity_line.to_vec(), Color::Gray, LineStyle::Solid).labeled("identity"));
    pd.curves.push(
        Curve::line(
            vec![(pd.x_axis.min, qq.cutoff), (pd.x_axis.max, qq.cutoff)],
            Color::Red,
            LineStyle::DashDot,
        )
        .labeled("cutoff"),
    );
    for &(x, y) in &qq.pairs {
        pd.points.push(Point {
            x,
            y,
            color: Color::Black,
            border: false,
            marker: Marker::Circle,
            label: None,
        });
    }
    Ok(pd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterOptions {
    /// Nodes per axis of the boundary grid.
    pub grid: usize,
    pub ellipses: bool,
    pub boundary: bool,
    /// Per-case marker override, e.g. diamonds for known mislabeled cases.
    pub markers: Option<Vec<Marker>>,
}

impl Default for ScatterOptions {
    fn default() -> Self {
        Self {
            grid: 400,
            ellipses: true,
            boundary: true,
            markers: None,
        }
    }
}

/// Bivariate data with the class tolerance ellipses at the model's cutoff
/// and the traced decision boundary.
pub fn scatter_plot(model: &DAModel, data: &LabeledDataset, opts: &ScatterOptions) -> Result<PlotData, VizError> {
    if data.p() != 2 || model.p() != 2 {
        return Err(VizError::NotBivariate(data.p()));
    }
    if data.n() == 0 {
        return Err(VizError::Empty("no cases"));
    }
    if let Some(m) = &opts.markers {
        if m.len() != data.n() {
            return Err(VizError::Length {
                expected: data.n(),
                got: m.len(),
            });
        }
    }
    let x = data.features();
    let (x0, x1) = extent((0..data.n()).map(|i| x[(i, 0)]));
    let (y0, y1) = extent((0..data.n()).map(|i| x[(i, 1)]));
    let names = data.feature_names();
    let mut pd = PlotData::new(
        PlotKind::Scatter,
        format!("{} fit", model.spec().acronym()),
        Axis::auto(names[0].clone(), x0, x1),
        Axis::auto(names[1].clone(), y0, y1),
    );
    if opts.ellipses {
        let r = model.distance_cutoff();
        for g in 0..model.n_classes() {
            let est = model.class_model(g);
            let (c, l) = (est.center(), est.cholesky_factor());
            let pts: Vec<(f64, f64)> = (0..=200)
                .map(|k| {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / 200.0;
                    let (u, v) = (r * th.cos(), r * th.sin());
                    (c[0] + l[(0, 0)] * u, c[1] + l[(1, 0)] * u + l[(1, 1)] * v)
                })
                .collect();
            pd.curves.push(
                Curve::line(pts, Color::Class(g), LineStyle::Solid)
                    .labeled(format!("tolerance ellipse {}", model.class_names()[g])),
            );
        }
    }
    if opts.boundary && opts.grid >= 2 {
        let n = opts.grid;
        let xs: Vec<f64> = (0..n)
            .map(|k| pd.x_axis.min + (pd.x_axis.max - pd.x_axis.min) * k as f64 / (n - 1) as f64)
            .collect();
        let ys: Vec<f64> = (0..n)
            .map(|k| pd.y_axis.min + (pd.y_axis.max - pd.y_axis.min) * k as f64 / (n - 1) as f64)
            .collect();
        let groups = model.n_classes();
        let mut margins = vec![Vec::with_capacity(n * n); groups];
        for &y in &ys {
            for &xv in &xs {
                let s = predict(model, &[xv, y])?.scores;
                for g in 0..groups {
                    let best_other = (0..groups)
                        .filter(|&k| k != g)
                        .map(|k| s[k])
                        .fold(f64::NEG_INFINITY, f64::max);
                    margins[g].push(s[g] - best_other);
                }
            }
        }
        // with two classes both margins trace the same curve
        let traced = if groups == 2 { 1 } else { groups };
        let mut pts = Vec::new();
        for m in margins.iter().take(traced) {
            for [a, b] in contour_segments(&xs, &ys, m) {
                pts.push(a);
                pts.push(b);
            }
        }
        if !pts.is_empty() {
            pd.curves.push(Curve {
                points: pts,
                color: Color::Black,
                style: LineStyle::Dashed,
                segments: true,
                label: Some("decision boundary".into()),
            });
        }
    }
    let preds = predict_batch(model, x)?;
    for i in 0..data.n() {
        pd.points.push(Point {
            x: x[(i, 0)],
            y: x[(i, 1)],
            color: Color::Class(data.labels()[i]),
            border: preds[i].overall_outlier,
            marker: opts.markers.as_ref().map_or(Marker::Circle, |m| m[i]),
            label: Some(format!("case {}", i + 1)),
        });
    }
    pd.legend = class_legend(data.class_names());
    Ok(pd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_contaminated_pair, SyntheticConfig};
    use crate::diagnostics::{confusion, diagnose, fit_farness, qq_data};
    use crate::discriminant::{fit, DASpec};
    use crate::viz::{plot_csv_string, render_svg, SvgStyle};
    use nalgebra::DMatrix;

    struct Run {
        data: LabeledDataset,
        model: DAModel,
        diags: Vec<CaseDiagnostics>,
        fm: FarnessModel,
    }

    fn run() -> Run {
        let pair = generate_contaminated_pair(&SyntheticConfig::default()).unwrap();
        let model = fit(&pair.contaminated, &DASpec::rqda(0.75)).unwrap();
        let fm = fit_farness(&model, &pair.contaminated).unwrap();
        let diags = diagnose(&model, &pair.contaminated, &fm).unwrap();
        Run {
            data: pair.contaminated,
            model,
            diags,
            fm,
        }
    }

    #[test]
    fn score_score_side_matches_prediction() {
        let r = run();
        let pd = score_score_plot(&r.model, &r.data).unwrap();
        pd.validate().unwrap();
        for (p, d) in pd.points.iter().zip(&r.diags) {
            if d.predicted == 0 {
                assert!(p.y < p.x);
            } else {
                assert!(p.y >= p.x);
            }
        }
    }

    #[test]
    fn score_score_needs_two_classes() {
        let x = DMatrix::from_fn(18, 1, |i, _| (i % 6) as f64 + 10.0 * (i / 6) as f64);
        let labels = (0..18).map(|i| i / 6).collect();
        let data = LabeledDataset::new(x, labels, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let model = fit(&data, &DASpec::cqda()).unwrap();
        assert!(matches!(
            score_score_plot(&model, &data),
            Err(VizError::Unsupported { classes: 3 })
        ));
    }

    #[test]
    fn mosaic_areas_match_counts() {
        let cm = ConfusionMatrix::from_counts(
            vec![vec![68, 7, 5], vec![6, 88, 6]],
            vec!["1".into(), "2".into()],
            true,
        );
        let pd = mosaic_plot(&cm).unwrap();
        assert_eq!(pd.rects.len(), 6);
        let first: Vec<f64> = pd.rects[..3].iter().map(|r| r.height * 80.0).collect();
        for (h, want) in first.iter().zip([68.0, 7.0, 5.0]) {
            assert!((h - want).abs() < 1e-9);
        }
        assert_eq!(pd.rects[2].color, Color::Outlier);
        let area: f64 = pd.rects.iter().map(|r| r.width * r.height).sum();
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mosaic_diagonal_and_empty() {
        let cm = ConfusionMatrix::from_counts(vec![vec![3, 0], vec![0, 5]], vec!["a".into(), "b".into()], false);
        let pd = mosaic_plot(&cm).unwrap();
        assert_eq!(pd.rects.len(), 2);
        assert!(pd.rects.iter().all(|r| (r.height - 1.0).abs() < 1e-15));
        assert_eq!(pd.rects[1].color, Color::Class(1));
        let zero = ConfusionMatrix::from_counts(vec![vec![0, 0], vec![0, 0]], vec!["a".into(), "b".into()], false);
        assert!(mosaic_plot(&zero).is_err());
    }

    #[test]
    fn silhouette_bars_sorted_within_class() {
        let r = run();
        for orientation in [Orientation::Horizontal, Orientation::Vertical] {
            let pd = silhouette_plot(&r.diags, r.model.class_names(), orientation).unwrap();
            pd.validate().unwrap();
            assert_eq!(pd.rects.len(), r.diags.len());
            let signed = |rect: &Rect| {
                let (lo, len) = if orientation == Orientation::Horizontal {
                    (rect.x, rect.width)
                } else {
                    (rect.y, rect.height)
                };
                if lo < 0.0 {
                    lo
                } else {
                    len
                }
            };
            for g in 0..2 {
                let vals: Vec<f64> = pd
                    .rects
                    .iter()
                    .filter(|b| b.color == Color::Class(g))
                    .map(signed)
                    .collect();
                assert!(vals.windows(2).all(|w| w[0] >= w[1]));
                assert!(vals.iter().any(|&v| v < -0.9));
            }
        }
    }

    #[test]
    fn qrp_average_matches_bins() {
        let r = run();
        let feature: Vec<f64> = r.diags.iter().map(|d| d.rd_predicted).collect();
        let pd = quasi_residual_plot(&r.diags, &feature, "distance", r.model.class_names(), QrpMode::Combined).unwrap();
        pd.validate().unwrap();
        let stats = binned_average(&feature, &r.diags.iter().map(|d| d.pac).collect::<Vec<_>>(), QRP_BINS);
        assert_eq!(stats.iter().map(|s| s.count).sum::<usize>(), r.diags.len());
        // independent recomputation for the first bin
        let mut order: Vec<usize> = (0..feature.len()).collect();
        order.sort_by(|&a, &b| feature[a].total_cmp(&feature[b]));
        let first = &order[..stats[0].count];
        let mean = first.iter().map(|&i| r.diags[i].pac).sum::<f64>() / first.len() as f64;
        assert!((stats[0].mean - mean).abs() < 1e-12);
        assert_eq!(pd.curves[0].points[0], (stats[0].center, stats[0].mean.clamp(0.0, 1.0)));
        let per = quasi_residual_plot(&r.diags, &feature, "distance", r.model.class_names(), QrpMode::PerClass(0)).unwrap();
        assert_eq!(per.points.len(), 80);
        assert!(quasi_residual_plot(&r.diags, &feature[1..], "d", r.model.class_names(), QrpMode::Combined).is_err());
    }

    #[test]
    fn qrp_constant_feature_warns() {
        let r = run();
        let feature = vec![1.0; r.diags.len()];
        let pd = quasi_residual_plot(&r.diags, &feature, "c", r.model.class_names(), QrpMode::Combined).unwrap();
        assert_eq!(pd.warnings.len(), 1);
        assert_eq!(pd.curves[0].points.len(), 2);
    }

    #[test]
    fn class_map_transform() {
        assert_eq!(farness_to_position(0.0), 0.0);
        assert!((farness_to_position(1.0) - 4.0).abs() < 1e-9);
        let mut prev = -1.0;
        for k in 0..=1000 {
            let f = k as f64 / 1000.0;
            let t = farness_to_position(f);
            assert!(t > prev || f == 0.0);
            prev = t;
            assert!((position_to_farness(t) - f).abs() < 1e-10, "f={f}");
        }
    }

    #[test]
    fn class_map_replaced_cases_are_far() {
        let pair = generate_contaminated_pair(&SyntheticConfig::default()).unwrap();
        let r = run();
        let pd = class_map(&r.diags, &r.fm, 0, r.model.class_names()).unwrap();
        pd.validate().unwrap();
        assert_eq!(pd.points.len(), 80);
        let idx: Vec<usize> = (0..r.data.n()).filter(|&i| r.data.labels()[i] == 0).collect();
        for (p, &i) in pd.points.iter().zip(&idx) {
            if pair.provenance[i] == crate::data::Provenance::Replaced {
                assert!(position_to_farness(p.x) > 0.9);
            }
        }
    }

    #[test]
    fn qq_plot_lines() {
        let qq = qq_data(&[0.5, 1.0, 2.0, 9.0], 2).unwrap();
        let pd = qq_plot(&qq, "qq").unwrap();
        pd.validate().unwrap();
        assert_eq!(pd.curves.len(), 2);
        assert_eq!(pd.curves[1].points[0].1, qq.cutoff);
        assert_eq!(pd.points.len(), 4);
    }

    #[test]
    fn scatter_has_boundary_and_ellipses() {
        let r = run();
        let opts = ScatterOptions {
            grid: 60,
            ..Default::default()
        };
        let pd = scatter_plot(&r.model, &r.data, &opts).unwrap();
        pd.validate().unwrap();
        assert_eq!(pd.curves.len(), 3);
        assert!(pd.curves[2].segments && pd.curves[2].points.len() > 10);
        // the ellipse sits at the cutoff distance
        let est = r.model.class_model(0);
        let (x, y) = pd.curves[0].points[37];
        let d = est.mahalanobis_sq_slice(&[x, y]).unwrap().sqrt();
        assert!((d - r.model.distance_cutoff()).abs() < 1e-8);
    }

    #[test]
    fn every_plot_renders_to_xml() {
        let r = run();
        let cm = confusion(&r.model, &r.data, true).unwrap();
        let feature: Vec<f64> = r.diags.iter().map(|d| d.rd_predicted).collect();
        let qq = qq_data(&r.diags.iter().map(|d| d.rd_given.powi(2)).collect::<Vec<_>>(), 2).unwrap();
        let plots = vec![
            score_score_plot(&r.model, &r.data).unwrap(),
            mosaic_plot(&cm).unwrap(),
            silhouette_plot(&r.diags, r.model.class_names(), Orientation::Vertical).unwrap(),
            quasi_residual_plot(&r.diags, &feature, "d", r.model.class_names(), QrpMode::Combined).unwrap(),
            class_map(&r.diags, &r.fm, 1, r.model.class_names()).unwrap(),
            qq_plot(&qq, "qq").unwrap(),
        ];
        for pd in plots {
            let svg = render_svg(&pd, &SvgStyle::default());
            roxmltree::Document::parse(&svg).unwrap();
            assert!(plot_csv_string(&pd).lines().count() > 3);
        }
    }
}
