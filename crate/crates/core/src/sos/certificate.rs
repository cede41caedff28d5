//! Certificate record: sampled `V`, multipliers and per-condition results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::conditions::{Condition, ConditionStatus, StepReport};
use super::problem::{Margins, VerificationProblem};
use crate::error::{Error, Result};
use crate::Poly;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertSample {
    pub seg: usize,
    pub tau: f64,
    pub v: Poly,
    pub radius: Option<f64>,
    pub status: BTreeMap<Condition, ConditionStatus>,
    pub margins: BTreeMap<Condition, Option<f64>>,
    /// Keyed `condition.name`, e.g. `decrease.l`.
    pub multipliers: BTreeMap<String, Poly>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertImpact {
    pub index: usize,
    pub pre: usize,
    pub post: usize,
    pub status: BTreeMap<Condition, ConditionStatus>,
    pub margins: BTreeMap<Condition, Option<f64>>,
    pub multipliers: BTreeMap<String, Poly>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub sdps: usize,
    pub numerical_failures: usize,
    pub vsteps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    /// Always `"sampled"`: conditions hold at the tau samples only.
    pub certification: String,
    pub dim: usize,
    pub period: f64,
    pub hybrid: bool,
    pub degree: u32,
    pub taylor_degree: u32,
    pub margins: Margins,
    pub level: f64,
    pub seed_rho: f64,
    pub radius: f64,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub samples: Vec<CertSample>,
    pub impacts: Vec<CertImpact>,
    pub stats: SolverStats,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn key(c: Condition) -> String {
    serde_json::to_value(c).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

impl Certificate {
    pub fn assemble(vp: &VerificationProblem, vs: &[Poly], rep: &StepReport, period: f64, hybrid: bool) -> Self {
        let samples = vp
            .samples
            .iter()
            .zip(vs)
            .zip(&rep.samples)
            .map(|((s, v), r)| {
                let mut multipliers = BTreeMap::new();
                for (c, ch) in &r.checks {
                    for (name, p) in &ch.multipliers {
                        multipliers.insert(format!("{}.{name}", key(*c)), p.clone());
                    }
                }
                CertSample {
                    seg: s.seg,
                    tau: s.tau,
                    v: v.clone(),
                    radius: finite(r.radius),
                    status: r.checks.iter().map(|(c, ch)| (*c, ch.status)).collect(),
                    margins: r.checks.iter().map(|(c, ch)| (*c, finite(ch.margin))).collect(),
                    multipliers,
                }
            })
            .collect();
        let impacts = vp
            .impacts
            .iter()
            .zip(&rep.impacts)
            .map(|(imp, r)| {
                let mut multipliers = BTreeMap::new();
                for (c, ch) in &r.checks {
                    for (name, p) in &ch.multipliers {
                        multipliers.insert(format!("{}.{name}", key(*c)), p.clone());
                    }
                }
                CertImpact {
                    index: imp.index,
                    pre: imp.pre,
                    post: imp.post,
                    status: r.checks.iter().map(|(c, ch)| (*c, ch.status)).collect(),
                    margins: r.checks.iter().map(|(c, ch)| (*c, finite(ch.margin))).collect(),
                    multipliers,
                }
            })
            .collect();
        Self {
            certification: "sampled".into(),
            dim: vp.k,
            period,
            hybrid,
            degree: vs.iter().map(Poly::degree).max().unwrap_or(0),
            taylor_degree: vp.taylor_degree,
            margins: vp.margins,
            level: 1.0,
            seed_rho: f64::NAN,
            radius: rep.radius,
            iterations: 0,
            history: vec![rep.radius],
            samples,
            impacts,
            stats: SolverStats { sdps: rep.sdps(), numerical_failures: rep.numerical_failures(), vsteps: 0 },
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { location: format!("line {}", e.line()), message: e.to_string() })
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn values(&self) -> Vec<Poly> {
        self.samples.iter().map(|s| s.v.clone()).collect()
    }

    fn statuses(&self) -> impl Iterator<Item = &ConditionStatus> {
        self.samples.iter().flat_map(|s| s.status.values()).chain(self.impacts.iter().flat_map(|i| i.status.values()))
    }

    /// (passed, failed) condition counts.
    pub fn counts(&self) -> (usize, usize) {
        let pass = self.statuses().filter(|s| **s == ConditionStatus::Pass).count();
        (pass, self.statuses().count() - pass)
    }

    pub fn all_pass(&self) -> bool {
        self.counts().1 == 0
    }

    pub fn taus_per_segment(&self) -> usize {
        self.samples.iter().filter(|s| s.seg == 0).count()
    }

    pub fn summary_line(&self) -> String {
        let (p, f) = self.counts();
        format!("certified: r={:.6} rho=1 taus={} conditions={p}/{f}", self.radius, self.taus_per_segment())
    }

    /// `V(x_perp, tau)` with coefficients interpolated linearly between samples.
    pub fn value_at(&self, seg: usize, tau: f64, xp: &[f64]) -> f64 {
        let idx: Vec<usize> = (0..self.samples.len()).filter(|&i| self.samples[i].seg == seg).collect();
        if idx.is_empty() {
            return f64::NAN;
        }
        let ts: Vec<f64> = idx.iter().map(|&i| self.samples[i].tau).collect();
        let n = idx.len();
        let j = ts.partition_point(|&t| t <= tau);
        let (a, b, ta, tb) = if j == 0 {
            (idx[0], idx[0], ts[0], ts[0] + 1.0)
        } else if j == n {
            if self.hybrid {
                (idx[n - 1], idx[n - 1], ts[n - 1], ts[n - 1] + 1.0)
            } else {
                (idx[n - 1], idx[0], ts[n - 1], ts[0] + self.period)
            }
        } else {
            (idx[j - 1], idx[j], ts[j - 1], ts[j])
        };
        let th = ((tau - ta) / (tb - ta)).clamp(0.0, 1.0);
        (1.0 - th) * self.samples[a].v.eval(xp) + th * self.samples[b].v.eval(xp)
    }
}
