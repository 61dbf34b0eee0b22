//! SVG figures. Output depends only on the data, so identical inputs give
//! byte-identical files.

use std::path::Path;

use plotters::coord::Shift;
use plotters::prelude::*;

use super::analysis::TacgSeries;
use super::HarnessError;

type Area<'a> = DrawingArea<SVGBackend<'a>, Shift>;

fn draw_err<E: std::fmt::Debug>(e: E) -> HarnessError {
    HarnessError::Runtime(format!("plot: {e:?}"))
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo <= hi) {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

struct Trace<'a> {
    xs: &'a [f64],
    ys: &'a [f64],
    color: RGBColor,
    markers: bool,
}

fn panel(area: &Area, y_label: &str, x_hours: (f64, f64), traces: &[Trace]) -> Result<(), HarnessError> {
    let y = range(traces.iter().flat_map(|t| t.ys.iter().copied()));
    let mut chart = ChartBuilder::on(area)
        .margin(8)
        .x_label_area_size(28)
        .y_label_area_size(48)
        .build_cartesian_2d(x_hours.0..x_hours.1, y.0..y.1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("time (h)")
        .y_desc(y_label)
        .disable_mesh()
        .draw()
        .map_err(draw_err)?;
    for t in traces {
        let pts: Vec<(f64, f64)> = t.xs.iter().zip(t.ys).map(|(x, y)| (x / 3600.0, *y)).collect();
        chart.draw_series(LineSeries::new(pts.iter().copied(), t.color)).map_err(draw_err)?;
        if t.markers {
            chart
                .draw_series(pts.iter().map(|p| Circle::new(*p, 2, t.color.filled())))
                .map_err(draw_err)?;
        }
    }
    Ok(())
}

fn hours(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = range(xs);
    (lo / 3600.0, hi / 3600.0)
}

/// Three stacked panels: alcohol (ppm), temperature and humidity.
pub fn sensor_panel_svg(s: &TacgSeries) -> Result<String, HarnessError> {
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, (800, 720)).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let x = hours(s.t_s.iter().copied());
        let parts = root.split_evenly((3, 1));
        panel(&parts[0], "alcohol (ppm)", x, &[Trace { xs: &s.t_s, ys: &s.raw_ppm, color: RED, markers: false }])?;
        panel(&parts[1], "temperature (°C)", x, &[Trace { xs: &s.t_s, ys: &s.temp_c, color: BLUE, markers: false }])?;
        panel(&parts[2], "RH (%)", x, &[Trace { xs: &s.t_s, ys: &s.rh_pct, color: GREEN, markers: false }])?;
        root.present().map_err(draw_err)?;
    }
    Ok(out)
}

/// Breathalyzer BAC above corrected TACg, on a shared time axis.
pub fn bac_tacg_svg(bac: &[(f64, f64)], s: &TacgSeries) -> Result<String, HarnessError> {
    let (bt, bv): (Vec<f64>, Vec<f64>) = bac.iter().copied().unzip();
    let mut out = String::new();
    {
        let root = SVGBackend::with_string(&mut out, (800, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let x = hours(s.t_s.iter().chain(&bt).copied());
        let parts = root.split_evenly((2, 1));
        panel(&parts[0], "BAC (mg/dL)", x, &[Trace { xs: &bt, ys: &bv, color: BLACK, markers: true }])?;
        panel(
            &parts[1],
            "TACg (ppm)",
            x,
            &[Trace { xs: &s.t_s, ys: &s.corrected_ppm, color: RED, markers: false }],
        )?;
        root.present().map_err(draw_err)?;
    }
    Ok(out)
}

pub fn write_plots(dir: &Path, stem: &str, bac: &[(f64, f64)], s: &TacgSeries) -> Result<Vec<String>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Runtime(format!("{}: {e}", dir.display())))?;
    let files = [
        (format!("sensor_{stem}.svg"), sensor_panel_svg(s)?),
        (format!("bac_tacg_{stem}.svg"), bac_tacg_svg(bac, s)?),
    ];
    let mut names = Vec::new();
    for (name, body) in files {
        let path = dir.join(&name);
        std::fs::write(&path, body).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
        names.push(name);
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset_draws_axes() {
        let svg = bac_tacg_svg(&[], &TacgSeries::default()).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("TACg (ppm)"));
        assert!(sensor_panel_svg(&TacgSeries::default()).unwrap().contains("RH (%)"));
    }

    #[test]
    fn deterministic() {
        let s = TacgSeries {
            t_s: vec![0.0, 60.0, 120.0],
            counts: vec![1.0, 2.0, 1.0],
            raw_ppm: vec![0.0, 1.0, 0.5],
            corrected_ppm: vec![0.0, 1.0, 0.5],
            temp_c: vec![30.0; 3],
            rh_pct: vec![50.0; 3],
        };
        let bac = [(0.0, 0.0), (60.0, 20.0)];
        assert_eq!(bac_tacg_svg(&bac, &s).unwrap(), bac_tacg_svg(&bac, &s).unwrap());
    }
}
