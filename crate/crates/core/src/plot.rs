//! Grids of batch-averaged trajectory snapshots.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::to_byte;
use crate::reverse::TrajectoryBatch;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotLayout {
    /// Side of one grid cell in output pixels.
    pub cell: u32,
    /// Border around the whole grid.
    pub margin: u32,
    /// Spacing between neighbouring cells.
    pub gap: u32,
}

impl Default for PlotLayout {
    fn default() -> Self {
        Self {
            cell: 64,
            margin: 8,
            gap: 4,
        }
    }
}

impl PlotLayout {
    pub fn dimensions(&self, rows: usize, cols: usize) -> (u32, u32) {
        let span = |n: usize| 2 * self.margin + n as u32 * self.cell + (n.max(1) as u32 - 1) * self.gap;
        (span(cols), span(rows))
    }
}

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

/// Averaged image at `step`; step 0 means the final samples.
pub fn averaged_step<S: Scalar>(batch: &TrajectoryBatch<S>, step: usize) -> Result<Image<S>> {
    match (step, batch.snapshot(step)) {
        (_, Some(_)) => batch.average_at(step),
        (0, None) => batch.average_finals(),
        (t, None) => Err(Error::Input(format!("no snapshot recorded at step {t}"))),
    }
}

fn blit<S: Scalar>(canvas: &mut RgbImage, img: &Image<S>, x0: u32, y0: u32, cell: u32) -> Result<()> {
    let (c, h, w) = img.shape();
    if c != 1 && c != 3 {
        return Err(Error::Input(format!("cannot plot {c}-channel images")));
    }
    for py in 0..cell {
        for px in 0..cell {
            let y = (py as usize * h) / cell as usize;
            let x = (px as usize * w) / cell as usize;
            let v = |ch: usize| to_byte(img.get(ch.min(c - 1), y, x).as_f64(), -1.0, 1.0);
            canvas.put_pixel(x0 + px, y0 + py, Rgb([v(0), v(1), v(2)]));
        }
    }
    Ok(())
}

/// One row per batch, one column per step, each cell the nearest-neighbour-resized average.
pub fn render_trajectory_grid<S: Scalar>(
    rows: &[&TrajectoryBatch<S>],
    steps: &[usize],
    layout: &PlotLayout,
) -> Result<RgbImage> {
    if rows.is_empty() || steps.is_empty() || layout.cell == 0 {
        return Err(Error::Input("plot needs at least one row, one step and a nonzero cell".into()));
    }
    let (w, h) = layout.dimensions(rows.len(), steps.len());
    let mut canvas = RgbImage::from_pixel(w, h, BACKGROUND);
    for (r, batch) in rows.iter().enumerate() {
        for (col, &step) in steps.iter().enumerate() {
            let avg = averaged_step(batch, step)?;
            let x0 = layout.margin + col as u32 * (layout.cell + layout.gap);
            let y0 = layout.margin + r as u32 * (layout.cell + layout.gap);
            blit(&mut canvas, &avg, x0, y0, layout.cell)?;
        }
    }
    Ok(canvas)
}

pub fn emit_trajectory_plot<S: Scalar>(
    rows: &[&TrajectoryBatch<S>],
    steps: &[usize],
    layout: &PlotLayout,
    path: impl AsRef<Path>,
) -> Result<PathBuf> {
    let canvas = render_trajectory_grid(rows, steps, layout)?;
    canvas.save(path.as_ref())?;
    Ok(path.as_ref().to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reverse::SigmaMode;
    use std::collections::BTreeMap;

    fn batch(steps: &[usize]) -> TrajectoryBatch<f64> {
        TrajectoryBatch {
            finals: vec![Image::filled(1, 4, 4, 1.0); 3],
            snapshots: steps.iter().map(|&t| (t, vec![Image::filled(1, 4, 4, -1.0); 3])).collect::<BTreeMap<_, _>>(),
            seed: Some(0),
            sigma_mode: SigmaMode::GammaSquared,
        }
    }

    #[test]
    fn final_only_is_one_cell() {
        let layout = PlotLayout { cell: 10, margin: 3, gap: 2 };
        let g = render_trajectory_grid(&[&batch(&[])], &[0], &layout).unwrap();
        assert_eq!(g.dimensions(), (16, 16));
        assert_eq!(g.get_pixel(5, 5), &Rgb([255, 255, 255]));
        assert_eq!(g.get_pixel(0, 0), &BACKGROUND);
    }

    #[test]
    fn strip_dimensions_and_missing_step() {
        let layout = PlotLayout { cell: 8, margin: 5, gap: 1 };
        let b = batch(&[100, 75, 50, 25]);
        let g = render_trajectory_grid(&[&b], &[100, 75, 50, 25, 0], &layout).unwrap();
        assert_eq!(g.dimensions(), (10 + 5 * 8 + 4, 10 + 8));
        assert_eq!(g.get_pixel(6, 6), &Rgb([0, 0, 0]));
        assert!(render_trajectory_grid(&[&b], &[60], &layout).is_err());
    }
}
