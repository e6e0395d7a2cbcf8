//! SVG plots: per-joint world trajectories and seam continuity.

use std::path::{Path, PathBuf};

use plotters::prelude::*;
use xspecies_core::features::{decode_to_global, MotionSequence};
use xspecies_core::pipeline::frame_jumps;

use crate::error::{CliError, CliResult};

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Io(std::io::Error::other(e.to_string()))
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// One file per joint with its x, y and z world coordinates over time.
pub fn joint_trajectories(seq: &MotionSequence, joint_names: &[String], out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let g = decode_to_global(seq, 0.0, [0.0, 0.0]);
    let n = g.joints.len();
    let mut written = Vec::new();
    for (j, name) in joint_names.iter().enumerate() {
        let path = out_dir.join(format!("joint_{j:02}_{name}.svg"));
        let (lo, hi) = range(g.joints.iter().flat_map(|f| f[j].iter().copied()));
        let root = SVGBackend::new(&path, (640, 360)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("joint {j} ({name})"), ("sans-serif", 16))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(40)
            .build_cartesian_2d(0f64..(n.max(2) - 1) as f64, lo..hi)
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("frame").y_desc("m").draw().map_err(plot_err)?;
        for (axis, color) in [(0, &RED), (1, &GREEN), (2, &BLUE)] {
            chart
                .draw_series(LineSeries::new(g.joints.iter().enumerate().map(|(t, f)| (t as f64, f[j][axis])), color))
                .map_err(plot_err)?
                .label(["x", "y", "z"][axis])
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
        }
        chart.configure_series_labels().border_style(BLACK).draw().map_err(plot_err)?;
        root.present().map_err(plot_err)?;
        drop(chart);
        drop(root);
        written.push(path);
    }
    Ok(written)
}

/// Largest per-frame joint displacement, with the seam window shaded.
pub fn seam_continuity(seq: &MotionSequence, seam: Option<(usize, usize)>, path: &Path) -> CliResult<()> {
    let jumps = frame_jumps(seq);
    let (_, hi) = range(jumps.iter().copied().chain([0.0]));
    let root = SVGBackend::new(path, (720, 360)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("frame-to-frame joint displacement", ("sans-serif", 16))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50)
        .build_cartesian_2d(0f64..jumps.len().max(1) as f64, 0f64..hi * 1.1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("frame").y_desc("max joint jump (m)").draw().map_err(plot_err)?;
    if let Some((a, b)) = seam {
        chart
            .draw_series(std::iter::once(Rectangle::new([(a as f64, 0.0), (b as f64, hi * 1.1)], RGBColor(255, 220, 180).filled())))
            .map_err(plot_err)?;
    }
    chart.draw_series(LineSeries::new(jumps.iter().enumerate().map(|(t, v)| (t as f64, *v)), &BLUE)).map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
