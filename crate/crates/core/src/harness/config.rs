//! JSON run configuration.
//!
//! Schema (all keys lowercase):
//! ```json
//! {
//!   "domain": { "type": "flat-torus", "m": 2, "n": 32, "period": 6.2832 },
//!   "target": { "type": "sphere", "params": { "n": 2 } },
//!   "ball":   { "r": 0.2, "r1": null, "a": null },
//!   "flow":   { "p": 2.0, "eps_list": [0.1, 0.01, 0.001, 0.0001],
//!               "dt_safety": 0.25, "scheme": "explicit-with-a-term",
//!               "reproject_every": 1, "t_end": 200.0, "stat_tol": 1e-6 },
//!   "output": { "dir": "runs/demo" },
//!   "seed": 42
//! }
//! ```
//! `ball` and `output` are optional; `ball` requires a sphere target and
//! yields the cap certificate with the optimal r₁ unless one is given.

use crate::error::{PflowError, Result};
use crate::flow::{FlowConfig, Scheme, DEFAULT_MAX_STEPS_PER_LEG};
use crate::geometry::DomainGrid;
use crate::target::{EmbeddedTarget, RegularBallCert};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    #[serde(rename = "type")]
    pub kind: String,
    pub m: usize,
    pub n: usize,
    pub period: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallSpec {
    pub r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub p: f64,
    pub eps_list: Vec<f64>,
    pub dt_safety: f64,
    pub scheme: Scheme,
    pub reproject_every: usize,
    pub t_end: f64,
    pub stat_tol: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub domain: DomainSpec,
    pub target: TargetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball: Option<BallSpec>,
    pub flow: FlowSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn build_grid(&self) -> Result<DomainGrid> {
        match self.domain.kind.as_str() {
            "flat-torus" => DomainGrid::build_flat_torus(self.domain.m, self.domain.n, self.domain.period),
            other => Err(PflowError::InvalidConfig(format!("unknown domain type '{other}'"))),
        }
    }

    pub fn build_target(&self) -> Result<EmbeddedTarget> {
        build_target(&self.target)
    }

    pub fn build_flow_config(&self) -> Result<FlowConfig> {
        let cfg = FlowConfig {
            p: self.flow.p,
            eps_schedule: self.flow.eps_list.clone(),
            dt_safety: self.flow.dt_safety,
            scheme: self.flow.scheme,
            reproject_every: self.flow.reproject_every,
            t_end: self.flow.t_end,
            stat_tol: self.flow.stat_tol,
            fixed_dt: None,
            max_steps_per_leg: DEFAULT_MAX_STEPS_PER_LEG,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cap certificate from the `ball` key (sphere targets only).
    pub fn build_cert(&self, target: &EmbeddedTarget) -> Result<Option<RegularBallCert>> {
        let Some(ball) = &self.ball else {
            return Ok(None);
        };
        let l = target.ambient_dim();
        let mut center = vec![0.0; l];
        center[l - 1] = 1.0;
        let mut cert = RegularBallCert::spherical_cap(target, center, ball.r, ball.r1, None)?;
        if let Some(a) = ball.a {
            if !(a > 0.0) {
                return Err(PflowError::InvalidConfig("ball.a must be positive".into()));
            }
            cert.a = a;
        }
        Ok(Some(cert))
    }
}

pub fn build_target(spec: &TargetSpec) -> Result<EmbeddedTarget> {
    let param_usize = |key: &str, default: usize| -> Result<usize> {
        match &spec.params {
            None => Ok(default),
            Some(v) => match v.get(key) {
                None => Ok(default),
                Some(x) => x
                    .as_u64()
                    .map(|u| u as usize)
                    .ok_or_else(|| PflowError::InvalidConfig(format!("target params.{key} must be an integer"))),
            },
        }
    };
    match spec.kind.as_str() {
        "sphere" => EmbeddedTarget::make_sphere(param_usize("n", 2)?),
        "clifford-torus" => Ok(EmbeddedTarget::make_clifford_torus()),
        "euclidean" => EmbeddedTarget::make_euclidean(param_usize("l", 3)?),
        other => Err(PflowError::InvalidConfig(format!("unknown target type '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
        "domain": { "type": "flat-torus", "m": 2, "n": 32, "period": 6.283185307179586 },
        "target": { "type": "sphere", "params": { "n": 2 } },
        "ball": { "r": 0.2 },
        "flow": { "p": 2.0, "eps_list": [0.1, 0.01], "dt_safety": 0.25,
                  "scheme": "explicit-with-a-term", "reproject_every": 1,
                  "t_end": 5.0, "stat_tol": 1e-6 },
        "output": { "dir": "runs/demo" },
        "seed": 7
    }"#;

    #[test]
    fn parses_and_builds() {
        let cfg = RunConfigFile::from_json(GOOD).unwrap();
        let grid = cfg.build_grid().unwrap();
        assert_eq!(grid.num_nodes(), 1024);
        let target = cfg.build_target().unwrap();
        assert_eq!(target.ambient_dim(), 3);
        let flow = cfg.build_flow_config().unwrap();
        assert_eq!(flow.reproject_every, 1);
        let cert = cfg.build_cert(&target).unwrap().unwrap();
        assert!((cert.a - 0.04).abs() < 1e-15);
    }

    #[test]
    fn rejects_unknown_keys_and_types() {
        let bad = GOOD.replace("\"seed\": 7", "\"seed\": 7, \"bogus\": 1");
        assert!(RunConfigFile::from_json(&bad).is_err());
        let bad2 = GOOD.replace("flat-torus", "hyperbolic");
        let cfg = RunConfigFile::from_json(&bad2).unwrap();
        assert!(cfg.build_grid().is_err());
        let bad3 = GOOD.replace("sphere", "projective-plane");
        let cfg3 = RunConfigFile::from_json(&bad3).unwrap();
        assert!(cfg3.build_target().is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        let s: Scheme = serde_json::from_str("\"project-after-step\"").unwrap();
        assert_eq!(s, Scheme::ProjectAfterStep);
        let text = serde_json::to_string(&Scheme::ExplicitWithForcing).unwrap();
        assert_eq!(text, "\"explicit-with-a-term\"");
    }
}
