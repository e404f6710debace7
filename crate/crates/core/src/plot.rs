//! SVG plots of DPR curves.

use std::path::Path;

use plotters::prelude::*;

use crate::dpr::DprCurve;
use crate::error::{Error, Result};

const COLORS: [RGBColor; 6] = [
    RGBColor(27, 158, 119),
    RGBColor(217, 95, 2),
    RGBColor(117, 112, 179),
    RGBColor(231, 41, 138),
    RGBColor(102, 166, 30),
    RGBColor(166, 118, 29),
];

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Format(format!("plot: {e}"))
}

/// FMR and FNMR panels side by side, one line per explainer.
pub fn plot_dpr_curves(curves: &[DprCurve], path: &Path) -> Result<()> {
    if curves.is_empty() {
        return Err(Error::Domain("nothing to plot".into()));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let root = SVGBackend::new(path, (960, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 2));
    for (panel, (title, pick)) in panels.iter().zip([
        (
            "FMR",
            (|c: &DprCurve| c.fmr.clone()) as fn(&DprCurve) -> Vec<f64>,
        ),
        ("FNMR", |c: &DprCurve| c.fnmr.clone()),
    ]) {
        let ymax = curves
            .iter()
            .flat_map(pick)
            .fold(0.0f64, f64::max)
            .max(0.05)
            * 1.05;
        let mut chart = ChartBuilder::on(panel)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(0.0f64..1.0f64, 0.0f64..ymax)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("fraction of pixels replaced")
            .y_desc(title)
            .draw()
            .map_err(plot_err)?;
        for (k, curve) in curves.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let ys = pick(curve);
            chart
                .draw_series(LineSeries::new(
                    curve.fractions.iter().copied().zip(ys),
                    color.stroke_width(2),
                ))
                .map_err(plot_err)?
                .label(curve.explainer.clone())
                .legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2))
                });
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}
