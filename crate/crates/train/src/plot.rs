//! Static SVG line charts for the sweeps.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Result, TrainError};

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Drawn as a horizontal reference line when true.
    pub reference: bool,
}

fn plot_err<E: std::fmt::Display>(e: E) -> TrainError {
    TrainError::Render(e.to_string())
}

/// Writes a line chart to `path`. Output depends only on the inputs.
pub fn line_plot(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Result<()> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .collect();
    if pts.is_empty() {
        return Err(TrainError::Render("nothing to plot".into()));
    }
    let (mut x0, mut x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    let (mut y0, mut y1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.1), b.max(p.1))
        });
    if x1 <= x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let pad = ((y1 - y0) * 0.1).max(y1.abs() * 0.05).max(1e-6);
    y0 = (y0 - pad).max(0.0);
    y1 += pad;

    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    let palette = [BLUE, RED, GREEN, MAGENTA, BLACK];
    for (i, s) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        let line: Vec<(f64, f64)> = if s.reference {
            let y = s.points[0].1;
            vec![(x0, y), (x1, y)]
        } else {
            s.points.clone()
        };
        chart
            .draw_series(LineSeries::new(line, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        if !s.reference {
            chart
                .draw_series(PointSeries::of_element(
                    s.points.clone(),
                    4,
                    color.filled(),
                    &|c, size, style| EmptyElement::at(c) + Circle::new((0, 0), size, style),
                ))
                .map_err(plot_err)?;
        }
    }
    chart
        .configure_series_labels()
        .background_style(WHITE)
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
