//! Experiment configuration: TOML, strict about unknown keys, validated at
//! load time. Every defaulted field is echoed back into the run's config
//! snapshot so a run directory is self-describing.

use std::path::{Path, PathBuf};

use gmvi::aduca::{SolverConfig, StepRule};
use gmvi::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory; relative paths are resolved against `--out` or the
    /// `GMVI_OUT_ROOT` environment variable.
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Cycles between metric evaluations.
    #[serde(default = "default_cadence")]
    pub metric_cadence: usize,
    #[serde(default)]
    pub budget: Budget,
    /// Stop a run early once its stop metric reaches this value.
    #[serde(default)]
    pub gap_tolerance: Option<f64>,
    pub problem: ProblemSpec,
    pub solvers: Vec<SolverSpec>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_cadence() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    #[serde(default = "default_cycles")]
    pub max_cycles: usize,
    #[serde(default)]
    pub max_passes: Option<f64>,
}

fn default_cycles() -> usize {
    1000
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_cycles: default_cycles(),
            max_passes: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Random bilinear saddle `F(x, y) = (M y, -M^T x)`, `g = 0`.
    Bilinear {
        dx: usize,
        dy: usize,
        #[serde(default = "one")]
        x_blocks: usize,
        #[serde(default = "one")]
        y_blocks: usize,
        #[serde(default = "yes")]
        unit_spectral: bool,
    },
    /// Random quadratic VI with PSD symmetric part and skew part.
    Quadratic {
        d: usize,
        #[serde(default = "one")]
        blocks: usize,
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        mu: f64,
        #[serde(default)]
        l1: f64,
        #[serde(default = "one_f")]
        scale: f64,
    },
    /// Saddle-point SVM from a LibSVM file.
    Svm {
        dataset: PathBuf,
        #[serde(default)]
        subsample_n: Option<usize>,
        #[serde(default)]
        subsample_seed: Option<u64>,
        #[serde(default = "default_reg")]
        l1: f64,
        #[serde(default = "default_reg")]
        l2: f64,
        #[serde(default = "one")]
        x_blocks: usize,
        #[serde(default = "one")]
        y_blocks: usize,
        #[serde(default = "yes")]
        use_scaling: bool,
    },
    /// Saddle-point SVM on generated data (no dataset file needed).
    SynthSvm {
        n: usize,
        #[serde(default)]
        subsample_n: Option<usize>,
        #[serde(default)]
        subsample_seed: Option<u64>,
        #[serde(default = "default_reg")]
        l1: f64,
        #[serde(default = "default_reg")]
        l2: f64,
        #[serde(default = "one")]
        x_blocks: usize,
        #[serde(default = "one")]
        y_blocks: usize,
        #[serde(default = "yes")]
        use_scaling: bool,
    },
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_reg() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverSpec {
    Aduca {
        #[serde(default = "default_rule")]
        rule: String,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default)]
        mu_override: f64,
        /// Extra runs with these averaging-weight moduli.
        #[serde(default)]
        mu_ablation: Vec<f64>,
        #[serde(default)]
        parallel: bool,
        /// Run on the identity-scaled variant of the problem.
        #[serde(default)]
        plain_geometry: bool,
    },
    Graal {
        #[serde(default = "default_lambda0")]
        lambda0: Vec<f64>,
        #[serde(default)]
        growth: Option<f64>,
        #[serde(default = "default_lambda_max")]
        lambda_max: f64,
        #[serde(default = "yes")]
        plain_geometry: bool,
    },
    Pccm {
        step: Vec<f64>,
        #[serde(default = "yes")]
        plain_geometry: bool,
    },
}

fn default_rule() -> String {
    "fully_specified".into()
}

fn default_beta() -> f64 {
    0.8
}

fn default_gamma() -> f64 {
    0.2
}

fn default_rho() -> f64 {
    1.2
}

fn default_lambda0() -> Vec<f64> {
    vec![1.0]
}

fn default_lambda_max() -> f64 {
    1e6
}

pub fn parse_rule(name: &str) -> Result<StepRule> {
    match name {
        "complete" => Ok(StepRule::Complete),
        "simplified_known_mu" => Ok(StepRule::SimplifiedKnownMu),
        "simplified_unknown_mu" => Ok(StepRule::SimplifiedUnknownMu),
        "fully_specified" => Ok(StepRule::FullySpecified),
        other => Err(Error::Config(format!(
            "unknown step rule {other:?} (expected complete | simplified_known_mu | simplified_unknown_mu | fully_specified)"
        ))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.solvers.is_empty() {
            return Err(Error::Config("at least one solver is required".into()));
        }
        if self.budget.max_cycles == 0 {
            return Err(Error::Config("budget.max_cycles must be positive".into()));
        }
        if let Some(p) = self.budget.max_passes {
            if !(p > 0.0) {
                return Err(Error::Config("budget.max_passes must be positive".into()));
            }
        }
        if self.metric_cadence == 0 {
            return Err(Error::Config("metric_cadence must be positive".into()));
        }
        match &self.problem {
            ProblemSpec::Bilinear {
                dx,
                dy,
                x_blocks,
                y_blocks,
                ..
            } => {
                if *dx == 0 || *dy == 0 || *x_blocks == 0 || *y_blocks == 0 {
                    return Err(Error::Config(
                        "bilinear dimensions and blocks must be positive".into(),
                    ));
                }
            }
            ProblemSpec::Quadratic {
                d,
                blocks,
                sigma,
                mu,
                l1,
                scale,
            } => {
                if *d == 0 || *blocks == 0 || *blocks > *d {
                    return Err(Error::Config("quadratic needs 1 <= blocks <= d".into()));
                }
                if *sigma < 0.0 || *mu < 0.0 || *l1 < 0.0 || *scale <= 0.0 {
                    return Err(Error::Config("quadratic parameters out of range".into()));
                }
            }
            ProblemSpec::Svm {
                dataset, l1, l2, ..
            } => {
                if dataset.as_os_str().is_empty() {
                    return Err(Error::Config("svm problem needs a dataset path".into()));
                }
                if *l1 < 0.0 || *l2 < 0.0 {
                    return Err(Error::Config("svm regularizers must be nonnegative".into()));
                }
            }
            ProblemSpec::SynthSvm { n, l1, l2, .. } => {
                if *n == 0 {
                    return Err(Error::Config("synth_svm needs n > 0".into()));
                }
                if *l1 < 0.0 || *l2 < 0.0 {
                    return Err(Error::Config("svm regularizers must be nonnegative".into()));
                }
            }
        }
        for solver in &self.solvers {
            match solver {
                SolverSpec::Aduca {
                    rule,
                    beta,
                    gamma,
                    rho,
                    mu_override,
                    mu_ablation,
                    ..
                } => {
                    let rule = parse_rule(rule)?;
                    let mut sc = SolverConfig::new(*beta, *gamma, *rho, rule);
                    sc.mu_override = *mu_override;
                    sc.validate()?;
                    for mu in mu_ablation {
                        if *mu < 0.0 {
                            return Err(Error::Config("mu_ablation entries must be >= 0".into()));
                        }
                    }
                }
                SolverSpec::Graal {
                    lambda0,
                    growth,
                    lambda_max,
                    ..
                } => {
                    if lambda0.is_empty() || lambda0.iter().any(|l| *l <= 0.0) {
                        return Err(Error::Config("graal lambda0 grid must be positive".into()));
                    }
                    if let Some(g) = growth {
                        if !(*g > 1.0) {
                            return Err(Error::Config("graal growth must exceed 1".into()));
                        }
                    }
                    if !(*lambda_max > 0.0) {
                        return Err(Error::Config("graal lambda_max must be positive".into()));
                    }
                }
                SolverSpec::Pccm { step, .. } => {
                    if step.is_empty() || step.iter().any(|s| *s <= 0.0) {
                        return Err(Error::Config("pccm step grid must be positive".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Full TOML snapshot with defaults filled in.
    pub fn snapshot(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[problem]
kind = "bilinear"
dx = 4
dy = 4
[[solvers]]
kind = "aduca"
"#;

    #[test]
    fn minimal_config_defaults() {
        let cfg: ExperimentConfig = toml::from_str(MINIMAL).unwrap();
        cfg.validate().unwrap();
        match &cfg.solvers[0] {
            SolverSpec::Aduca {
                rule,
                beta,
                gamma,
                rho,
                ..
            } => {
                assert_eq!(rule, "fully_specified");
                assert_eq!((*beta, *gamma, *rho), (0.8, 0.2, 1.2));
            }
            _ => panic!("expected aduca"),
        }
        let snap = cfg.snapshot();
        assert!(
            snap.contains("metric_cadence = 10"),
            "defaults echoed: {snap}"
        );
    }

    #[test]
    fn bad_beta_rejected_with_bound() {
        let text = MINIMAL.replace("kind = \"aduca\"", "kind = \"aduca\"\nbeta = 0.5");
        let cfg: ExperimentConfig = toml::from_str(&text).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("beta") && err.contains("sqrt(5)"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{MINIMAL}\nnot_a_key = 1\n");
        let err = toml::from_str::<ExperimentConfig>(&text)
            .unwrap_err()
            .to_string();
        assert!(err.contains("not_a_key"), "{err}");
    }

    #[test]
    fn svm_requires_dataset() {
        let text = r#"
seed = 7
[problem]
kind = "svm"
dataset = ""
[[solvers]]
kind = "aduca"
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("dataset"), "{err}");
    }

    #[test]
    fn no_solvers_rejected() {
        let text = r#"
seed = 7
solvers = []
[problem]
kind = "bilinear"
dx = 2
dy = 2
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert!(cfg.validate().is_err());
    }
}
