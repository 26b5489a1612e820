//! Renderer-agnostic plot descriptions plus SVG and CSV emitters.

mod contour;
mod export;
mod plots;
mod svg;

use thiserror::Error;

use crate::diagnostics::DiagnosticsError;
use crate::discriminant::PredictError;
use crate::special::DomainError;

pub use contour::contour_segments;
pub use export::{export_plot_csv, plot_csv_string};
pub use plots::{
    binned_average, class_map, farness_to_position, mosaic_plot, position_to_farness, qq_plot,
    quasi_residual_plot, scatter_plot, score_score_plot, silhouette_plot, BinStat, Orientation,
    QrpMode, ScatterOptions, CLASS_MAP_TICKS, QRP_BINS,
};
pub use svg::{render_svg, SvgStyle};

#[derive(Debug, Error)]
pub enum VizError {
    #[error("plot supports exactly two classes, got {classes}")]
    Unsupported { classes: usize },
    #[error("nothing to plot: {0}")]
    Empty(&'static str),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("class index {0} out of range")]
    ClassOutOfRange(usize),
    #[error("scatter plots need exactly two features, got {0}")]
    NotBivariate(usize),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    ScoreScore,
    Mosaic,
    Silhouette,
    QuasiResidual,
    ClassMap,
    Qq,
    Scatter,
}

impl PlotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlotKind::ScoreScore => "score_score",
            PlotKind::Mosaic => "mosaic",
            PlotKind::Silhouette => "silhouette",
            PlotKind::QuasiResidual => "quasi_residual",
            PlotKind::ClassMap => "class_map",
            PlotKind::Qq => "qq",
            PlotKind::Scatter => "scatter",
        }
    }
}

/// Class colors: orange, sky blue, then the rest of a colorblind-safe set.
pub const PALETTE: [&str; 7] = [
    "#E69F00", "#56B4E9", "#009E73", "#F0E442", "#0072B2", "#D55E00", "#CC79A7",
];
pub const OUTLIER_COLOR: &str = "#404040";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Color {
    /// Class index; wraps around the palette.
    Class(usize),
    Outlier,
    Black,
    Gray,
    LightGray,
    Red,
}

impl Color {
    pub fn hex(self) -> &'static str {
        match self {
            Color::Class(g) => PALETTE[g % PALETTE.len()],
            Color::Outlier => OUTLIER_COLOR,
            Color::Black => "#000000",
            Color::Gray => "#808080",
            Color::LightGray => "#E5E5E5",
            Color::Red => "#D00000",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    Circle,
    Diamond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineStyle {
    Solid,
    Dashed,
    DashDot,
}

impl LineStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            LineStyle::Solid => "solid",
            LineStyle::Dashed => "dashed",
            LineStyle::DashDot => "dashdot",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub color: Color,
    /// Black outline, used for overall outliers.
    pub border: bool,
    pub marker: Marker,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub color: Color,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub points: Vec<(f64, f64)>,
    pub color: Color,
    pub style: LineStyle,
    /// When set, consecutive point pairs are separate segments.
    pub segments: bool,
    pub label: Option<String>,
}

impl Curve {
    pub fn line(points: Vec<(f64, f64)>, color: Color, style: LineStyle) -> Self {
        Self {
            points,
            color,
            style,
            segments: false,
            label: None,
        }
    }

    pub fn labeled(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub label: String,
    pub min: f64,
    pub max: f64,
    pub ticks: Vec<(f64, String)>,
    /// Describes a non-linear mapping from data values to positions.
    pub transform: Option<String>,
}

impl Axis {
    /// Linear axis over `[lo, hi]` padded by 4% with round tick values.
    pub fn auto(label: impl Into<String>, lo: f64, hi: f64) -> Self {
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        };
        let pad = 0.04 * (hi - lo);
        Self::fixed(label, lo - pad, hi + pad)
    }

    /// Linear axis over exactly `[lo, hi]`.
    pub fn fixed(label: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            label: label.into(),
            min: lo,
            max: hi,
            ticks: nice_ticks(lo, hi),
            transform: None,
        }
    }
}

/// Ticks at multiples of 1, 2 or 5 times a power of ten, about six of them.
pub fn nice_ticks(lo: f64, hi: f64) -> Vec<(f64, String)> {
    let span = hi - lo;
    if !(span > 0.0) || !span.is_finite() {
        return Vec::new();
    }
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 7.0)
        .unwrap_or(10.0 * mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last)
        .map(|k| {
            let v = k as f64 * step;
            let v = if v == 0.0 { 0.0 } else { v };
            (v, format!("{v:.decimals$}"))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LegendEntry {
    pub label: String,
    pub color: Color,
    pub marker: Marker,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub x: f64,
    pub y: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub kind: PlotKind,
    pub title: String,
    pub x_axis: Axis,
    pub y_axis: Axis,
    /// Drawn first, in order.
    pub rects: Vec<Rect>,
    pub curves: Vec<Curve>,
    pub points: Vec<Point>,
    pub legend: Vec<LegendEntry>,
    pub annotations: Vec<Annotation>,
    pub warnings: Vec<String>,
}

impl PlotData {
    pub fn new(kind: PlotKind, title: impl Into<String>, x_axis: Axis, y_axis: Axis) -> Self {
        Self {
            kind,
            title: title.into(),
            x_axis,
            y_axis,
            rects: Vec::new(),
            curves: Vec::new(),
            points: Vec::new(),
            legend: Vec::new(),
            annotations: Vec::new(),
            warnings: Vec::new(),
        }
    }

    /// Checks that every coordinate is finite and every tick within its axis.
    pub fn validate(&self) -> Result<(), VizError> {
        let finite = |v: f64| v.is_finite();
        for a in [&self.x_axis, &self.y_axis] {
            if !finite(a.min) || !finite(a.max) || a.min >= a.max {
                return Err(VizError::NonFinite("axis range"));
            }
            if a.ticks.iter().any(|(t, _)| !(a.min - 1e-9..=a.max + 1e-9).contains(t)) {
                return Err(VizError::NonFinite("tick position"));
            }
        }
        if self.points.iter().any(|p| !finite(p.x) || !finite(p.y)) {
            return Err(VizError::NonFinite("points"));
        }
        if self
            .rects
            .iter()
            .any(|r| !finite(r.x) || !finite(r.y) || !finite(r.width) || !finite(r.height))
        {
            return Err(VizError::NonFinite("rectangles"));
        }
        if self
            .curves
            .iter()
            .any(|c| c.points.iter().any(|&(x, y)| !finite(x) || !finite(y)))
        {
            return Err(VizError::NonFinite("curves"));
        }
        Ok(())
    }
}
