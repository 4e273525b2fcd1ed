use crate::error::{Error, Result};

/// Increasing simulation times from `t0` to the horizon, both included.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Uniform steps of `dt`; the final step is shortened to land on `t1`.
    pub fn uniform(t0: f64, t1: f64, dt: f64) -> Result<Self> {
        if !(t0 < t1) {
            return Err(Error::param("t0", format!("must be < {t1}, got {t0}")));
        }
        if !(dt > 0.0) || dt >= t1 - t0 {
            return Err(Error::param(
                "dt",
                format!("must lie in (0, {}), got {dt}", t1 - t0),
            ));
        }
        let steps = ((t1 - t0) / dt).ceil() as usize;
        let mut times: Vec<f64> = (0..steps).map(|i| t0 + i as f64 * dt).collect();
        times.push(t1);
        Ok(Self { times })
    }

    /// Geometrically refined grid: the step is multiplied by `refine_ratio`
    /// each time the remaining time halves, never falling below `dt_min`.
    /// The last interval is `[t1 - dt_min, t1]`. Every breakpoint inside
    /// `(t0, t1)` becomes a node.
    pub fn refined(
        t0: f64,
        t1: f64,
        dt_coarse: f64,
        dt_min: f64,
        refine_ratio: f64,
        breakpoints: &[f64],
    ) -> Result<Self> {
        if !(t0 < t1) {
            return Err(Error::param("t0", format!("must be < {t1}, got {t0}")));
        }
        if !(dt_min > 0.0 && dt_min <= dt_coarse && dt_coarse < t1 - t0) {
            return Err(Error::param(
                "dt",
                format!("need 0 < dt_min <= dt_coarse < {}", t1 - t0),
            ));
        }
        if !(refine_ratio > 0.0 && refine_ratio < 1.0) {
            return Err(Error::param("refine_ratio", "must lie in (0, 1)"));
        }
        let mut breaks: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|b| *b > t0 && *b < t1 - dt_min)
            .collect();
        breaks.sort_by(f64::total_cmp);
        let span = t1 - t0;
        let mut times = vec![t0];
        let mut t = t0;
        let mut next_break = 0;
        while t1 - t > dt_min * (1.0 + 1e-9) {
            let halvings = (span / (t1 - t)).log2().floor().max(0.0);
            let mut h = (dt_coarse * refine_ratio.powf(halvings)).max(dt_min);
            while next_break < breaks.len() && breaks[next_break] <= t {
                next_break += 1;
            }
            if next_break < breaks.len() && breaks[next_break] < t + h {
                h = breaks[next_break] - t;
            }
            if t1 - (t + h) < dt_min {
                h = t1 - dt_min - t;
            }
            if !(h > 0.0) {
                break;
            }
            t += h;
            times.push(t);
        }
        times.push(t1);
        Ok(Self { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("grid has at least two nodes")
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
}
