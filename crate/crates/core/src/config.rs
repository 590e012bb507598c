use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pdipm::{InitStrategy, KktOptions};

/// Algorithm parameters.
///
/// `epsilon` is the relaxation radius used by the experiment builders when they
/// assemble a problem; the solvers read the radius from the problem itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub mu: f64,
    pub beta: f64,
    pub alpha_ls: f64,
    pub epsilon: f64,
    pub eps_feas: f64,
    pub eps_d: f64,
    pub max_iter: usize,
    pub seed: Option<u64>,
    pub kkt: KktOptions,
    pub init: InitStrategy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu: 10.0,
            beta: 0.4,
            alpha_ls: 0.1,
            epsilon: 1e-3,
            eps_feas: 1e-8,
            eps_d: 1e-6,
            max_iter: 200,
            seed: None,
            kkt: KktOptions::default(),
            init: InitStrategy::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigOverrides {
    pub mu: Option<f64>,
    pub beta: Option<f64>,
    pub alpha_ls: Option<f64>,
    pub epsilon: Option<f64>,
    pub eps_feas: Option<f64>,
    pub eps_d: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: Option<u64>,
    pub kkt_ridge: Option<bool>,
    pub init: Option<InitStrategy>,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.mu > 1.0) {
            return bad(format!("mu must exceed 1, got {}", self.mu));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if !(self.alpha_ls > 0.0 && self.alpha_ls < 0.5) {
            return bad(format!(
                "alpha_ls must lie in (0, 0.5), got {}",
                self.alpha_ls
            ));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.eps_feas > 0.0) || !(self.eps_d > 0.0) {
            return bad(format!(
                "tolerances must be positive, got {} and {}",
                self.eps_feas, self.eps_d
            ));
        }
        Ok(())
    }
}

/// Defaults with `overrides` applied, validated.
pub fn solver_config(overrides: &ConfigOverrides) -> Result<SolverConfig> {
    let d = SolverConfig::default();
    let cfg = SolverConfig {
        mu: overrides.mu.unwrap_or(d.mu),
        beta: overrides.beta.unwrap_or(d.beta),
        alpha_ls: overrides.alpha_ls.unwrap_or(d.alpha_ls),
        epsilon: overrides.epsilon.unwrap_or(d.epsilon),
        eps_feas: overrides.eps_feas.unwrap_or(d.eps_feas),
        eps_d: overrides.eps_d.unwrap_or(d.eps_d),
        max_iter: overrides.max_iter.unwrap_or(d.max_iter),
        seed: overrides.seed,
        kkt: KktOptions {
            ridge: overrides.kkt_ridge.unwrap_or(false),
        },
        init: overrides.init.unwrap_or(d.init),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_overrides_give_defaults() {
        let cfg = solver_config(&ConfigOverrides::default()).unwrap();
        assert_eq!(
            (cfg.mu, cfg.beta, cfg.alpha_ls, cfg.epsilon),
            (10.0, 0.4, 0.1, 1e-3)
        );
        assert_eq!((cfg.eps_feas, cfg.eps_d, cfg.max_iter), (1e-8, 1e-6, 200));
    }

    #[test]
    fn out_of_range_overrides_are_rejected() {
        for o in [
            ConfigOverrides {
                mu: Some(1.0),
                ..Default::default()
            },
            ConfigOverrides {
                beta: Some(1.0),
                ..Default::default()
            },
            ConfigOverrides {
                beta: Some(0.0),
                ..Default::default()
            },
            ConfigOverrides {
                alpha_ls: Some(0.5),
                ..Default::default()
            },
            ConfigOverrides {
                epsilon: Some(0.0),
                ..Default::default()
            },
            ConfigOverrides {
                eps_d: Some(-1.0),
                ..Default::default()
            },
        ] {
            assert!(
                matches!(solver_config(&o), Err(Error::InvalidConfig(_))),
                "{o:?}"
            );
        }
    }
}
