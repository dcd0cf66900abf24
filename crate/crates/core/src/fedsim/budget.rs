use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Width;
use crate::rng;

/// How client width budgets are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BudgetDistribution {
    /// `groups` equal client groups with widths `1, 1/2, 1/4, ...`. With
    /// `formula` set, group `g` (1-based) gets `(1/2)^g` instead of
    /// `(1/2)^(g-1)`.
    ExponentialGroups {
        #[serde(default = "default_groups")]
        groups: usize,
        #[serde(default)]
        formula: bool,
    },
    /// Equal groups with the given widths, skewed toward wide budgets.
    MoreSufficient {
        #[serde(default = "default_sufficient")]
        group_widths: Vec<f64>,
    },
    /// Equal groups with widths `step, 2 step, ..., 1`.
    StepIncrease {
        #[serde(default = "default_step")]
        step: f64,
    },
    /// Log-normal budgets floored to multiples of `bin`.
    LogNormal {
        #[serde(default = "default_median")]
        median: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_bin")]
        bin: f64,
    },
    /// Explicit widths, either as equal groups or cycled client by client.
    Explicit {
        widths: Vec<f64>,
        #[serde(default)]
        layout: Layout,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    #[default]
    Grouped,
    Cycled,
}

fn default_groups() -> usize {
    4
}
fn default_sufficient() -> Vec<f64> {
    vec![1.0, 1.0, 0.5, 0.5, 0.25, 0.125]
}
fn default_step() -> f64 {
    0.25
}
fn default_median() -> f64 {
    0.45
}
fn default_sigma() -> f64 {
    0.5
}
fn default_bin() -> f64 {
    0.125
}

impl Default for BudgetDistribution {
    fn default() -> Self {
        BudgetDistribution::ExponentialGroups { groups: 4, formula: false }
    }
}

/// 0-based group of 0-based client `k` among `groups` groups: `⌈G(k+1)/K⌉ - 1`.
fn group_of(k: usize, clients: usize, groups: usize) -> usize {
    (groups * (k + 1)).div_ceil(clients) - 1
}

fn grouped(clients: usize, widths: &[f64]) -> Vec<f64> {
    (0..clients).map(|k| widths[group_of(k, clients, widths.len())]).collect()
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("budgets.{name} must be > 0, got {v}")))
    }
}

fn unit_width(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("budgets.{name} must be in (0, 1], got {v}")))
    }
}

impl BudgetDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            BudgetDistribution::ExponentialGroups { groups, .. } if *groups == 0 => {
                Err(Error::Config("budgets.groups must be >= 1".into()))
            }
            BudgetDistribution::MoreSufficient { group_widths: w } | BudgetDistribution::Explicit { widths: w, .. } => {
                if w.is_empty() {
                    return Err(Error::Config("budgets: width list is empty".into()));
                }
                w.iter().try_for_each(|&v| unit_width("widths", v))
            }
            BudgetDistribution::StepIncrease { step } => unit_width("step", *step),
            BudgetDistribution::LogNormal { median, sigma, bin } => {
                positive("median", *median)?;
                positive("bin", *bin)?;
                if sigma.is_finite() && *sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!("budgets.sigma must be >= 0, got {sigma}")))
                }
            }
            _ => Ok(()),
        }
    }

    /// Budgets before quantization to the atom width.
    pub fn raw_budgets(&self, clients: usize, seed: u64) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(match self {
            BudgetDistribution::ExponentialGroups { groups, formula } => {
                let shift = i32::from(!*formula);
                let widths: Vec<f64> = (1..=*groups as i32).map(|g| 0.5f64.powi(g - shift)).collect();
                grouped(clients, &widths)
            }
            BudgetDistribution::MoreSufficient { group_widths } => grouped(clients, group_widths),
            BudgetDistribution::StepIncrease { step } => {
                let g = (1.0 / step).round().max(1.0) as usize;
                let widths: Vec<f64> = (1..=g).map(|i| (i as f64 * step).min(1.0)).collect();
                grouped(clients, &widths)
            }
            BudgetDistribution::LogNormal { median, sigma, bin } => {
                let dist = LogNormal::new(median.ln(), *sigma).map_err(|e| Error::Config(e.to_string()))?;
                let mut r = rng::stream(seed, &[rng::TAG_BUDGET]);
                (0..clients)
                    .map(|_| {
                        let v: f64 = dist.sample(&mut r);
                        ((v / bin + 1e-9).floor() * bin).clamp(*bin, 1.0)
                    })
                    .collect()
            }
            BudgetDistribution::Explicit { widths, layout } => match layout {
                Layout::Grouped => grouped(clients, widths),
                Layout::Cycled => (0..clients).map(|k| widths[k % widths.len()]).collect(),
            },
        })
    }
}

/// Floor `raw` to a multiple of `1/m`, at least `1/m` and at most 1.
pub fn quantize_budget(raw: f64, m: usize) -> Width {
    let k = ((raw * m as f64) + 1e-9).floor().clamp(1.0, m as f64) as usize;
    Width::atoms(k, m).expect("1 <= k <= m")
}

/// Per-client budgets quantized to the atom width `1/m`.
pub fn assign_budgets(clients: usize, dist: &BudgetDistribution, m: usize, seed: u64) -> Result<Vec<Width>> {
    if clients == 0 {
        return Err(Error::Config("need at least one client".into()));
    }
    Ok(dist.raw_budgets(clients, seed)?.into_iter().map(|b| quantize_budget(b, m)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn as_f64(v: Vec<Width>) -> Vec<f64> {
        v.into_iter().map(Width::as_f64).collect()
    }

    #[test]
    fn exponential_groups_follow_text_reading() {
        let d = BudgetDistribution::default();
        assert_eq!(as_f64(assign_budgets(4, &d, 8, 0).unwrap()), vec![1.0, 0.5, 0.25, 0.125]);
        assert_eq!(
            as_f64(assign_budgets(8, &d, 8, 0).unwrap()),
            vec![1.0, 1.0, 0.5, 0.5, 0.25, 0.25, 0.125, 0.125]
        );
    }

    #[test]
    fn formula_reading_is_halved_then_floored() {
        let d = BudgetDistribution::ExponentialGroups { groups: 4, formula: true };
        assert_eq!(d.raw_budgets(4, 0).unwrap(), vec![0.5, 0.25, 0.125, 0.0625]);
        assert_eq!(as_f64(assign_budgets(4, &d, 8, 0).unwrap()), vec![0.5, 0.25, 0.125, 0.125]);
    }

    #[test]
    fn quantization_floors_and_caps() {
        assert_eq!(quantize_budget(0.7, 4).as_f64(), 0.5);
        assert_eq!(quantize_budget(0.01, 4).as_f64(), 0.25);
        assert_eq!(quantize_budget(3.0, 4).as_f64(), 1.0);
        assert_eq!(quantize_budget(0.75, 4).as_f64(), 0.75);
    }

    #[test]
    fn step_increase_and_cycled_layouts() {
        let d = BudgetDistribution::StepIncrease { step: 0.25 };
        assert_eq!(d.raw_budgets(4, 0).unwrap(), vec![0.25, 0.5, 0.75, 1.0]);
        let d = BudgetDistribution::Explicit { widths: vec![1.0, 0.5], layout: Layout::Cycled };
        assert_eq!(d.raw_budgets(4, 0).unwrap(), vec![1.0, 0.5, 1.0, 0.5]);
    }

    #[test]
    fn tagged_config_parses_and_rejects_unknown_fields() {
        let d: BudgetDistribution = serde_json::from_str(r#"{"kind":"log_normal","median":0.4}"#).unwrap();
        assert_eq!(d, BudgetDistribution::LogNormal { median: 0.4, sigma: 0.5, bin: 0.125 });
        assert!(serde_json::from_str::<BudgetDistribution>(r#"{"kind":"step_increase","stp":0.2}"#).is_err());
    }
}
