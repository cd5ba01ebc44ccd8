//! Evaluation-curve rows and their CSV form.
//!
//! Schema, exactly: `timestep,mean_return,std_return,smoothed_return`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CURVE_HEADER: &str = "timestep,mean_return,std_return,smoothed_return";

/// One evaluation point of a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub timestep: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub smoothed_return: f64,
}

/// Exponential smoothing over the `mean_return` column:
/// `s₀ = m₀`, `sₖ = α·mₖ + (1−α)·sₖ₋₁`. `α = 1` leaves the raw means.
pub fn apply_smoothing(points: &mut [CurvePoint], alpha: f64) {
    let mut smoothed = f64::NAN;
    for (k, p) in points.iter_mut().enumerate() {
        smoothed = if k == 0 { p.mean_return } else { alpha * p.mean_return + (1.0 - alpha) * smoothed };
        p.smoothed_return = smoothed;
    }
}

pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.timestep, p.mean_return, p.std_return, p.smoothed_return
        ));
    }
    out
}

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<()> {
    validate_monotone(points)?;
    fs::write(path, curve_to_csv(points))?;
    Ok(())
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CURVE_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "{}: expected header {CURVE_HEADER:?}, got {other:?}",
                path.display()
            )))
        }
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Config(format!(
                "{}: row {} has {} columns, expected 4",
                path.display(),
                i + 2,
                cols.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("{}: bad number {s:?} on row {}", path.display(), i + 2)))
        };
        points.push(CurvePoint {
            timestep: cols[0].parse::<u64>().map_err(|_| {
                Error::Config(format!("{}: bad timestep {:?} on row {}", path.display(), cols[0], i + 2))
            })?,
            mean_return: parse(cols[1])?,
            std_return: parse(cols[2])?,
            smoothed_return: parse(cols[3])?,
        });
    }
    validate_monotone(&points)?;
    Ok(points)
}

fn validate_monotone(points: &[CurvePoint]) -> Result<()> {
    for w in points.windows(2) {
        if w[1].timestep <= w[0].timestep {
            return Err(Error::Value(format!(
                "curve timesteps must be strictly increasing, saw {} then {}",
                w[0].timestep, w[1].timestep
            )));
        }
    }
    Ok(())
}
