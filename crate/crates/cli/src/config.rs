//! Run configuration: one JSON document naming the system, the region or
//! GUAS ladder, numerical settings, initial conditions and output paths.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lyapcert_core::bounds::ConstantsMode;
use lyapcert_core::certificate::EtaStrategy;
use lyapcert_core::field::{builtin_system, expression_system, AnnularRegion, FieldError, System};
use lyapcert_core::grid::GridSpec;
use lyapcert_core::guas::GuasParams;
use lyapcert_core::trajectory::IntegratorConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    Builtin {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
    Expression {
        dimension: usize,
        f: Vec<String>,
        #[serde(rename = "V")]
        v: String,
        /// Lower quadratic bound `V >= k0 |x|^2`, used to size the grid box.
        #[serde(default)]
        k0: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub c1: f64,
    pub c2: f64,
}

/// `"auto"` or a number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaConfig {
    Fixed(f64),
    Named(EtaName),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaName {
    Auto,
}

impl Default for EtaConfig {
    fn default() -> Self {
        EtaConfig::Named(EtaName::Auto)
    }
}

impl EtaConfig {
    pub fn strategy(&self) -> EtaStrategy {
        match self {
            EtaConfig::Fixed(v) => EtaStrategy::Fixed(*v),
            EtaConfig::Named(EtaName::Auto) => EtaStrategy::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampler {
    pub count: usize,
    /// Value of `V` on which the points are drawn.
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConditions {
    Points(Vec<Vec<f64>>),
    Sampler(Sampler),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub report_path: PathBuf,
    pub csv_dir: PathBuf,
    pub plot_dir: Option<PathBuf>,
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            report_path: "report.json".into(),
            csv_dir: "traces".into(),
            plot_dir: Some("plots".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub domain: Option<DomainConfig>,
    #[serde(default)]
    pub guas: Option<GuasParams>,
    pub rate_a: f64,
    #[serde(default)]
    pub eta: EtaConfig,
    /// Whether closed-form constants of built-in systems replace grid estimates.
    #[serde(default)]
    pub constants: ConstantsMode,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub initial_conditions: Option<InitialConditions>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(default)]
    pub mc_seed: u64,
    /// Monte Carlo samples per tube volume estimate.
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    /// Sampled tube points checked for bad-set membership per visit.
    #[serde(default = "default_membership_samples")]
    pub membership_samples: usize,
}

fn default_mc_samples() -> usize {
    200_000
}

fn default_membership_samples() -> usize {
    1000
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Input {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<RunConfig, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "config".to_string() } else { path };
            invalid(field, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the cross-field invariants that serde cannot express.
    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.domain, &self.guas) {
            (Some(_), Some(_)) => return Err(invalid("guas", "give either `domain` or `guas`, not both")),
            (None, None) => return Err(invalid("domain", "one of `domain` or `guas` is required")),
            _ => {}
        }
        if let Some(d) = &self.domain {
            if !(d.c1.is_finite() && d.c1 > 0.0) {
                return Err(invalid("domain.c1", format!("must be positive, got {}", d.c1)));
            }
            if !d.c2.is_finite() {
                return Err(invalid("domain.c2", format!("must be finite, got {}", d.c2)));
            }
            if d.c1 >= d.c2 {
                return Err(invalid("domain.c1", format!("must be below domain.c2 ({} >= {})", d.c1, d.c2)));
            }
        }
        if let Some(g) = &self.guas {
            g.validate().map_err(|e| invalid("guas", e.to_string()))?;
        }
        if !(self.rate_a.is_finite() && self.rate_a > 0.0) {
            return Err(invalid("rate_a", format!("must be positive, got {}", self.rate_a)));
        }
        if let EtaConfig::Fixed(v) = self.eta {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid("eta", format!("must lie in (0, 1) or be \"auto\", got {v}")));
            }
        }
        match &self.initial_conditions {
            Some(InitialConditions::Points(pts)) => {
                for (i, p) in pts.iter().enumerate() {
                    if p.iter().any(|v| !v.is_finite()) {
                        return Err(invalid(format!("initial_conditions.points[{i}]"), "coordinates must be finite"));
                    }
                }
            }
            Some(InitialConditions::Sampler(s)) => {
                if s.count == 0 {
                    return Err(invalid("initial_conditions.sampler.count", "must be positive"));
                }
                if !(s.level.is_finite() && s.level > 0.0) {
                    return Err(invalid("initial_conditions.sampler.level", format!("must be positive, got {}", s.level)));
                }
            }
            None => {}
        }
        if self.mc_samples == 0 {
            return Err(invalid("mc_samples", "must be positive"));
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<System, CliError> {
        let field_err = |e: FieldError| {
            let field = match &e {
                FieldError::InvalidParameter { name, .. } => format!("system.builtin.params.{name}"),
                FieldError::UnknownSystem(_) => "system.builtin.name".into(),
                FieldError::Parse { .. } => "system.expression".into(),
                FieldError::Shape(_) => "system.expression.dimension".into(),
                _ => "system".into(),
            };
            invalid(field, e.to_string())
        };
        match &self.system {
            SystemConfig::Builtin { name, params } => builtin_system(name, params).map_err(field_err),
            SystemConfig::Expression { dimension, f, v, k0 } => expression_system(*dimension, f, v, *k0).map_err(field_err),
        }
    }

    pub fn region(&self) -> Option<Result<AnnularRegion, CliError>> {
        self.domain
            .map(|d| AnnularRegion::annulus(d.c1, d.c2).map_err(|e| invalid("domain.c1", e.to_string())))
    }

    pub fn system_label(&self) -> String {
        match &self.system {
            SystemConfig::Builtin { name, .. } => name.clone(),
            SystemConfig::Expression { .. } => "expression".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"system": {"builtin": {"name": "linear_spiral"}}, "domain": {"c1": 0.49, "c2": 1.0}, "rate_a": 1.9}"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.eta, EtaConfig::Named(EtaName::Auto));
        assert_eq!(cfg.outputs.report_path, PathBuf::from("report.json"));
        assert!(cfg.initial_conditions.is_none());
        assert_eq!(cfg.build_system().unwrap().dim(), 2);
    }

    #[test]
    fn eta_accepts_number_or_auto() {
        let fixed = MINIMAL.replace("\"rate_a\"", "\"eta\": 0.6, \"rate_a\"");
        assert_eq!(RunConfig::parse(&fixed).unwrap().eta.strategy(), EtaStrategy::Fixed(0.6));
        let auto = MINIMAL.replace("\"rate_a\"", "\"eta\": \"auto\", \"rate_a\"");
        assert_eq!(RunConfig::parse(&auto).unwrap().eta.strategy(), EtaStrategy::Auto);
        let bad = MINIMAL.replace("\"rate_a\"", "\"eta\": 1.5, \"rate_a\"");
        assert!(matches!(RunConfig::parse(&bad), Err(CliError::Input { field, .. }) if field == "eta"));
    }

    #[test]
    fn field_paths_in_errors() {
        let swapped = MINIMAL.replace("\"c1\": 0.49", "\"c1\": 1.0");
        assert!(matches!(RunConfig::parse(&swapped), Err(CliError::Input { field, .. }) if field == "domain.c1"));
        let typo = MINIMAL.replace("\"c2\"", "\"c3\"");
        assert!(matches!(RunConfig::parse(&typo), Err(CliError::Input { field, .. }) if field.starts_with("domain")));
        let both = MINIMAL.replace("\"rate_a\"", "\"guas\": {\"k0\": 1.0}, \"rate_a\"");
        assert!(matches!(RunConfig::parse(&both), Err(CliError::Input { field, .. }) if field == "guas"));
        let pts = MINIMAL.replace("\"rate_a\"", "\"initial_conditions\": {\"points\": [[1.0, 0.0], [0.0]]}, \"rate_a\"");
        let cfg = RunConfig::parse(&pts).unwrap();
        assert!(matches!(cfg.initial_conditions, Some(InitialConditions::Points(ref p)) if p.len() == 2));
    }

    #[test]
    fn unknown_builtin_names_the_field() {
        let cfg = RunConfig::parse(&MINIMAL.replace("linear_spiral", "nope")).unwrap();
        assert!(matches!(cfg.build_system(), Err(CliError::Input { field, .. }) if field == "system.builtin.name"));
    }
}
