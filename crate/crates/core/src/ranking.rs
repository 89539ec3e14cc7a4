//! Banner ranking across businesses: each business scores its candidate by
//! `weight * y_hat` for the conversion objective its bank cares about.

use std::cmp::Ordering;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Maturity {
    Startup,
    Mature,
}

impl std::str::FromStr for Maturity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "startup" => Ok(Maturity::Startup),
            "mature" => Ok(Maturity::Mature),
            other => Err(Error::Config(format!("unknown bank maturity `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankProfile {
    pub bank: u64,
    /// `None` when the maturity is unknown.
    pub maturity: Option<Maturity>,
    pub objective: Option<usize>,
}

/// Maps bank maturity to a task name.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSelector {
    pub startup_task: String,
    pub mature_task: String,
}

impl Default for ObjectiveSelector {
    fn default() -> Self {
        ObjectiveSelector {
            startup_task: "approval".into(),
            mature_task: "activation".into(),
        }
    }
}

impl ObjectiveSelector {
    /// Task index a bank optimises. An explicit override wins; otherwise
    /// startups target card approval and mature banks target activation.
    pub fn select(&self, profile: &BankProfile, task_names: &[String]) -> Result<usize> {
        if let Some(t) = profile.objective {
            if t >= task_names.len() {
                return Err(Error::Config(format!(
                    "bank {} overrides objective {t}, but only {} tasks exist",
                    profile.bank,
                    task_names.len()
                )));
            }
            return Ok(t);
        }
        let wanted = match profile.maturity {
            Some(Maturity::Startup) => &self.startup_task,
            Some(Maturity::Mature) => &self.mature_task,
            None => {
                return Err(Error::Config(format!(
                    "bank {} has unknown maturity and no objective override",
                    profile.bank
                )))
            }
        };
        task_names
            .iter()
            .position(|n| n == wanted)
            .ok_or_else(|| Error::Config(format!("no task named `{wanted}` in {task_names:?}")))
    }
}

/// [`ObjectiveSelector::select`] with the default task names.
pub fn select_objective(profile: &BankProfile, task_names: &[String]) -> Result<usize> {
    ObjectiveSelector::default().select(profile, task_names)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankCandidate {
    pub business: u64,
    pub y_hat: f64,
    pub weight: f64,
}

pub fn business_score(y_hat: f64, weight: f64) -> Result<f64> {
    if !(weight > 0.0) || !weight.is_finite() {
        return Err(Error::Contract(format!("weight {weight} must be finite and > 0")));
    }
    Ok(weight * y_hat)
}

/// Weight composed from separately estimated value factors.
pub fn weight_from_factors(factors: &[f64]) -> Result<f64> {
    let w: f64 = factors.iter().product();
    if factors.is_empty() || !(w > 0.0) {
        return Err(Error::Contract(format!("value factors {factors:?} must multiply to > 0")));
    }
    Ok(w)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub candidate: RankCandidate,
    pub score: f64,
}

/// Candidates by descending score, ties by ascending business id. The
/// first entry is the banner shown.
pub fn rank_banners(candidates: &[RankCandidate]) -> Result<Vec<Scored>> {
    if candidates.is_empty() {
        return Err(Error::Contract("no candidates to rank".into()));
    }
    let mut scored = candidates
        .iter()
        .map(|&c| {
            Ok(Scored {
                candidate: c,
                score: business_score(c.y_hat, c.weight)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.candidate.business.cmp(&b.candidate.business))
    });
    Ok(scored)
}
