//! Cross-sectional regression data with planted coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::inference::DESIGN_COLUMNS;

/// Coefficients follow `DESIGN_COLUMNS`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionConfig {
    pub n: usize,
    pub coefficients: [f64; 6],
    pub sigma: f64,
    pub mob_in: (f64, f64),
    pub mob_out: (f64, f64),
    pub flow: (f64, f64),
    pub score: (f64, f64),
}

impl Default for CrossSectionConfig {
    fn default() -> Self {
        Self {
            n: 34,
            coefficients: [-175.865, 22.627, 6.989, 51.454, 1.210, -7.276],
            sigma: 25.67,
            mob_in: (1.0, 12.0),
            mob_out: (0.5, 6.0),
            flow: (0.0, 5.0),
            score: (20.0, 90.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossSection {
    pub names: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub truth: [f64; 6],
}

/// Draws covariates uniformly from their ranges and the response from the
/// linear model with an interaction of MobOut and Flow plus Gaussian noise.
pub fn cross_section(cfg: &CrossSectionConfig, seed: u64) -> CrossSection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.sigma).expect("sigma must be finite and >= 0");
    let draw = |r: (f64, f64), rng: &mut ChaCha8Rng| if r.0 < r.1 { rng.gen_range(r.0..r.1) } else { r.0 };
    let mut x = Vec::with_capacity(cfg.n);
    let mut y = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let (mi, mo, f, s) = (draw(cfg.mob_in, &mut rng), draw(cfg.mob_out, &mut rng), draw(cfg.flow, &mut rng), draw(cfg.score, &mut rng));
        let row = vec![1.0, mi, mo, f, s, mo * f];
        y.push(row.iter().zip(&cfg.coefficients).map(|(a, b)| a * b).sum::<f64>() + noise.sample(&mut rng));
        x.push(row);
    }
    CrossSection { names: DESIGN_COLUMNS.iter().map(|c| c.to_string()).collect(), x, y, truth: cfg.coefficients }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_rows_follow_the_model() {
        let cfg = CrossSectionConfig { sigma: 0.0, ..Default::default() };
        let cs = cross_section(&cfg, 3);
        assert_eq!(cs.x.len(), 34);
        for (row, y) in cs.x.iter().zip(&cs.y) {
            assert_eq!(row[5], row[2] * row[3]);
            let want: f64 = row.iter().zip(&cfg.coefficients).map(|(a, b)| a * b).sum();
            assert_eq!(*y, want);
        }
        assert_eq!(cross_section(&cfg, 3), cs);
    }
}
