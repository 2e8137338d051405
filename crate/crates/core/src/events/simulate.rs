use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::{Event, EventStream};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{Rng, SeedTree};

/// Offset added to intensities before taking the log.
pub const LOG_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulatorConfig {
    /// Log-brightness contrast threshold, shared by both polarities.
    pub threshold: f64,
    /// Std-dev of per-pixel Gaussian threshold jitter; 0 disables it.
    pub threshold_jitter: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            threshold: 0.2,
            threshold_jitter: 0.0,
        }
    }
}

/// `ln(intensity + 1e-3)`.
pub fn log_intensity(i: f64) -> f64 {
    (i + LOG_EPS).ln()
}

/// Emits an event every time the per-pixel, linearly interpolated log
/// brightness moves one threshold away from the pixel's reference level.
/// The reference then moves to the crossed level.
///
/// `frames[i]` holds `height * width` log-brightness values at
/// `timestamps[i]`.
pub fn simulate_events(
    frames: &[Vec<f64>],
    timestamps: &[f64],
    height: usize,
    width: usize,
    config: &SimulatorConfig,
    seeds: &SeedTree,
) -> Result<EventStream> {
    if frames.len() < 2 || frames.len() != timestamps.len() {
        return Err(Error::InvalidInput(format!(
            "{} frames with {} timestamps; need at least two of each",
            frames.len(),
            timestamps.len()
        )));
    }
    if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput("timestamps must increase strictly".into()));
    }
    if !(config.threshold > 0.0) {
        return Err(Error::InvalidInput(format!("threshold {}", config.threshold)));
    }
    let npix = height * width;
    if let Some(i) = frames.iter().position(|f| f.len() != npix) {
        return Err(Error::InvalidInput(format!("frame {i} is not {height}x{width}")));
    }

    let per_pixel = par::map_range(npix, |p| {
        let threshold = if config.threshold_jitter > 0.0 {
            let mut rng = Rng::seed_from_u64(seeds.split(p as u64).seed());
            let n = Normal::new(config.threshold, config.threshold_jitter).expect("jitter is finite and positive");
            n.sample(&mut rng).max(0.01 * config.threshold)
        } else {
            config.threshold
        };
        pixel_events(frames, timestamps, p, threshold)
    });

    let mut events = Vec::with_capacity(per_pixel.iter().map(Vec::len).sum());
    for (p, times) in per_pixel.into_iter().enumerate() {
        let (x, y) = ((p % width) as u16, (p / width) as u16);
        events.extend(times.into_iter().map(|(t, polarity)| Event { t, x, y, polarity }));
    }
    EventStream::new(height, width, timestamps[0], timestamps[timestamps.len() - 1], events)
}

fn pixel_events(frames: &[Vec<f64>], ts: &[f64], p: usize, c: f64) -> Vec<(f64, i8)> {
    let mut out = Vec::new();
    let mut reference = frames[0][p];
    for i in 0..frames.len() - 1 {
        let (l0, l1) = (frames[i][p], frames[i + 1][p]);
        let (t0, t1) = (ts[i], ts[i + 1]);
        let dl = l1 - l0;
        if dl == 0.0 {
            continue;
        }
        loop {
            let (target, pol) = if l1 - reference >= c {
                (reference + c, 1i8)
            } else if reference - l1 >= c {
                (reference - c, -1i8)
            } else {
                break;
            };
            let frac = ((target - l0) / dl).clamp(0.0, 1.0);
            out.push((t0 + frac * (t1 - t0), pol));
            reference = target;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_ramp_crossings() {
        let c = 0.2;
        let frames = vec![vec![0.0], vec![3.05 * c]];
        let s = simulate_events(
            &frames,
            &[0.0, 1.0],
            1,
            1,
            &SimulatorConfig::default(),
            &SeedTree::new(0),
        )
        .unwrap();
        let ts: Vec<f64> = s.events().iter().map(|e| e.t).collect();
        assert_eq!(ts.len(), 3);
        for (k, t) in ts.iter().enumerate() {
            assert!((t - (k + 1) as f64 / 3.05).abs() < 1e-9, "{ts:?}");
        }
        assert!(s.events().iter().all(|e| e.polarity == 1));
    }

    #[test]
    fn constant_video_is_silent() {
        let frames = vec![vec![0.3; 4]; 5];
        let ts: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let s = simulate_events(&frames, &ts, 2, 2, &SimulatorConfig::default(), &SeedTree::new(1)).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn non_monotone_timestamps_fail() {
        let frames = vec![vec![0.0], vec![1.0], vec![2.0]];
        let r = simulate_events(
            &frames,
            &[0.0, 2.0, 1.0],
            1,
            1,
            &SimulatorConfig::default(),
            &SeedTree::new(0),
        );
        assert!(r.is_err());
    }
}
