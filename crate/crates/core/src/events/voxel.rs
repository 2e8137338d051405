use super::EventStream;
use crate::error::{Error, Result};
use crate::par;

/// `bins x height x width` signed event mass.
#[derive(Clone, Debug, PartialEq)]
pub struct EventVoxelGrid {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl EventVoxelGrid {
    pub fn zeros(bins: usize, height: usize, width: usize) -> Self {
        Self {
            bins,
            height,
            width,
            data: vec![0.0; bins * height * width],
        }
    }

    pub fn get(&self, b: usize, y: usize, x: usize) -> f32 {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

/// Temporal bin coordinate of `t` in `[0, bins - 1]`.
pub(crate) fn bin_coordinate(t: f64, t_start: f64, t_end: f64, bins: usize) -> f64 {
    let d = t_end - t_start;
    if d <= 0.0 {
        return 0.0;
    }
    ((t - t_start) / d * (bins - 1) as f64).clamp(0.0, (bins - 1) as f64)
}

/// Splats each event's polarity linearly onto the two nearest temporal
/// bins at its pixel. A zero-length span puts all mass in bin 0.
///
/// Work is split by image row. Each voxel still receives its events in
/// stream order, so the result does not depend on the thread count.
pub fn voxelize(stream: &EventStream, bins: usize) -> Result<EventVoxelGrid> {
    if bins == 0 {
        return Err(Error::InvalidInput("voxel grid needs at least one bin".into()));
    }
    let (h, w) = (stream.height(), stream.width());
    let mut grid = EventVoxelGrid::zeros(bins, h, w);
    if stream.is_empty() {
        return Ok(grid);
    }
    let (t0, t1) = stream.span();

    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); h];
    for (i, e) in stream.events().iter().enumerate() {
        rows[e.y as usize].push(i);
    }
    // row-major (y, x, bin) scratch so every image row is contiguous
    let mut scratch = vec![0.0f32; h * w * bins];
    par::for_each_chunk_mut(&mut scratch, w * bins, |y, row| {
        for &i in &rows[y] {
            let e = stream.events()[i];
            let tb = bin_coordinate(e.t, t0, t1, bins);
            let lo = tb.floor() as usize;
            let frac = (tb - lo as f64) as f32;
            let p = e.polarity as f32;
            let base = e.x as usize * bins;
            row[base + lo] += p * (1.0 - frac);
            if lo + 1 < bins {
                row[base + lo + 1] += p * frac;
            }
        }
    });
    for y in 0..h {
        for x in 0..w {
            for b in 0..bins {
                grid.data[(b * h + y) * w + x] = scratch[(y * w + x) * bins + b];
            }
        }
    }
    Ok(grid)
}
