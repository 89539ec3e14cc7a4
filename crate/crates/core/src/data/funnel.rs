use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::RawRow;
use crate::error::{Error, Result};
use crate::tape::sigmoid;

/// Parameters of the synthetic sequential funnel.
///
/// Each sample draws one token per field from a Zipf-like distribution.
/// Step `t` is attempted only if step `t - 1` passed, and passes with
/// probability `sigmoid(logit(r_t) + sum_f effect[t][f][token_f])`. Effects
/// are Gaussian with total standard deviation `perturbation`; a share
/// `step_correlation` of every effect is common to all steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunnelGenConfig {
    pub tasks: usize,
    pub samples: usize,
    pub cardinalities: Vec<usize>,
    pub base_rates: Vec<f64>,
    pub perturbation: f64,
    pub step_correlation: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for FunnelGenConfig {
    fn default() -> Self {
        FunnelGenConfig {
            tasks: 4,
            samples: 10_000,
            cardinalities: vec![8, 20, 40, 60, 100, 150, 300, 600],
            base_rates: vec![0.2, 0.3, 0.4, 0.3],
            perturbation: 1.5,
            step_correlation: 0.6,
            zipf_exponent: 1.0,
            seed: 1,
        }
    }
}

impl FunnelGenConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.tasks == 0 {
            out.push("tasks must be >= 1".to_string());
        }
        if self.samples == 0 {
            out.push("samples must be >= 1".to_string());
        }
        if self.cardinalities.is_empty() || self.cardinalities.contains(&0) {
            out.push(format!("cardinalities must be non-empty and positive, got {:?}", self.cardinalities));
        }
        if self.base_rates.len() != self.tasks {
            out.push(format!("{} base rates for {} tasks", self.base_rates.len(), self.tasks));
        }
        if self.base_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            out.push(format!("base rates must lie in [0, 1], got {:?}", self.base_rates));
        }
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            out.push(format!("perturbation {} must be finite and >= 0", self.perturbation));
        }
        if !(0.0..=1.0).contains(&self.step_correlation) {
            out.push(format!("step_correlation {} outside [0, 1]", self.step_correlation));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            out.push(format!("zipf_exponent {} must be finite and >= 0", self.zipf_exponent));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    pub fn field_names(&self) -> Vec<String> {
        (1..=self.cardinalities.len()).map(|i| format!("f{i}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedFunnel {
    pub field_names: Vec<String>,
    pub rows: Vec<RawRow>,
    /// Per row, the true conditional pass probability of every step.
    pub conditionals: Vec<Vec<f64>>,
}

fn step_probability(rate: f64, shift: f64) -> f64 {
    if rate <= 0.0 {
        0.0
    } else if rate >= 1.0 {
        1.0
    } else {
        sigmoid((rate / (1.0 - rate)).ln() + shift)
    }
}

pub fn generate_funnel(config: &FunnelGenConfig) -> Result<GeneratedFunnel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fields = config.cardinalities.len();
    let scale = config.perturbation / (fields as f64).sqrt();
    let rho = config.step_correlation;
    let own = (1.0 - rho * rho).sqrt();
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    // effects[t][f][token]
    let shared: Vec<Vec<f64>> = config
        .cardinalities
        .iter()
        .map(|&c| (0..c).map(|_| normal()).collect())
        .collect();
    let effects: Vec<Vec<Vec<f64>>> = (0..config.tasks)
        .map(|_| {
            shared
                .iter()
                .map(|s| s.iter().map(|&x| scale * (rho * x + own * normal())).collect())
                .collect()
        })
        .collect();

    let samplers: Vec<WeightedIndex<f64>> = config
        .cardinalities
        .iter()
        .map(|&c| {
            let w: Vec<f64> = (1..=c).map(|r| (r as f64).powf(-config.zipf_exponent)).collect();
            WeightedIndex::new(w).expect("positive weights")
        })
        .collect();

    let mut rows = Vec::with_capacity(config.samples);
    let mut conditionals = Vec::with_capacity(config.samples);
    for i in 0..config.samples {
        let tokens: Vec<usize> = samplers.iter().map(|s| s.sample(&mut rng)).collect();
        let mut labels = Vec::with_capacity(config.tasks);
        let mut probs = Vec::with_capacity(config.tasks);
        let mut alive = true;
        for (t, effect) in effects.iter().enumerate() {
            let shift: f64 = tokens.iter().enumerate().map(|(f, &v)| effect[f][v]).sum();
            let p = step_probability(config.base_rates[t], shift);
            let u: f64 = rand::Rng::gen(&mut rng);
            alive = alive && u < p;
            labels.push(u8::from(alive));
            probs.push(p);
        }
        rows.push(RawRow {
            ts: i as i64,
            features: tokens.iter().map(|v| format!("v{v}")).collect(),
            labels,
        });
        conditionals.push(probs);
    }
    Ok(GeneratedFunnel {
        field_names: config.field_names(),
        rows,
        conditionals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::labels_monotone;

    #[test]
    fn zero_rate_kills_later_steps() {
        let cfg = FunnelGenConfig {
            samples: 2000,
            base_rates: vec![0.5, 0.0, 0.7, 0.9],
            ..Default::default()
        };
        let g = generate_funnel(&cfg).unwrap();
        assert!(g.rows.iter().all(|r| r.labels[1..].iter().all(|&y| y == 0)));
    }

    #[test]
    fn near_one_rates_give_all_ones() {
        let cfg = FunnelGenConfig {
            samples: 2000,
            base_rates: vec![1.0 - 1e-9; 4],
            perturbation: 0.0,
            ..Default::default()
        };
        let g = generate_funnel(&cfg).unwrap();
        let all = g.rows.iter().filter(|r| r.labels.iter().all(|&y| y == 1)).count();
        assert!(all >= 1999);
    }

    #[test]
    fn labels_always_monotone() {
        let g = generate_funnel(&FunnelGenConfig::default()).unwrap();
        assert!(g.rows.iter().all(|r| labels_monotone(&r.labels)));
        assert_eq!(g.conditionals.len(), g.rows.len());
    }

    #[test]
    fn same_seed_same_data() {
        let cfg = FunnelGenConfig {
            samples: 500,
            ..Default::default()
        };
        assert_eq!(generate_funnel(&cfg).unwrap(), generate_funnel(&cfg).unwrap());
    }

    #[test]
    fn invalid_config() {
        let cfg = FunnelGenConfig {
            base_rates: vec![0.5],
            ..Default::default()
        };
        assert!(matches!(generate_funnel(&cfg), Err(Error::Config(_))));
    }
}
