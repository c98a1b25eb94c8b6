use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One optimal capacity `y` found for generator capacity `x` under `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub x: f64,
    pub y: f64,
    pub seed: u64,
}

/// Spread of the optimal capacity over seeds at one `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedFit {
    pub seed: u64,
    pub a: f64,
    pub b: f64,
}

/// Least-squares fit of `y = a·exp(b·x)` in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub a: f64,
    pub b: f64,
    /// `ln y - ln ŷ` for every input point, in input order.
    pub residuals: Vec<f64>,
    pub points: Vec<ScalingPoint>,
    pub band: Vec<BandPoint>,
    /// Separate fits for seeds that cover at least three distinct `x`.
    pub seed_fits: Vec<SeedFit>,
}

impl ScalingFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.a * (self.b * x).exp()
    }
}

fn log_linear(points: &[ScalingPoint]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y.ln()).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in points {
        let dx = p.x - mx;
        sxy += dx * (p.y.ln() - my);
        sxx += dx * dx;
    }
    let b = sxy / sxx;
    ((my - b * mx).exp(), b)
}

fn distinct_x(points: &[ScalingPoint]) -> usize {
    let mut xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.len()
}

pub fn fit_exponential(points: &[ScalingPoint]) -> Result<ScalingFit> {
    if let Some(p) = points.iter().find(|p| !(p.y > 0.0) || !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::Data(format!("scaling fit needs finite x and positive y, got ({}, {})", p.x, p.y)));
    }
    if distinct_x(points) < 3 {
        return Err(Error::Config("scaling fit needs at least 3 distinct generator capacities".into()));
    }
    let (a, b) = log_linear(points);
    let residuals = points.iter().map(|p| p.y.ln() - (a.ln() + b * p.x)).collect();

    let mut by_x: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for p in points {
        by_x.entry(p.x.to_bits()).or_default().push(p.y);
    }
    let mut band: Vec<BandPoint> = by_x
        .into_iter()
        .map(|(bits, ys)| {
            let n = ys.len();
            let mean = ys.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            BandPoint { x: f64::from_bits(bits), mean, std, n }
        })
        .collect();
    band.sort_by(|l, r| l.x.total_cmp(&r.x));

    let mut by_seed: BTreeMap<u64, Vec<ScalingPoint>> = BTreeMap::new();
    for p in points {
        by_seed.entry(p.seed).or_default().push(*p);
    }
    let seed_fits = by_seed
        .into_iter()
        .filter(|(_, ps)| distinct_x(ps) >= 3)
        .map(|(seed, ps)| {
            let (a, b) = log_linear(&ps);
            SeedFit { seed, a, b }
        })
        .collect();

    Ok(ScalingFit {
        a,
        b,
        residuals,
        points: points.to_vec(),
        band,
        seed_fits,
    })
}
