//! Training configuration and its INI form.
//!
//! ```ini
//! [model]
//! hidden = 16
//! tnorm = product
//!
//! [data]
//! labeled_fraction = 1.0
//!
//! [train]
//! seed = 1
//! batch_size = 32
//! stage1_epochs = 30
//! stage1_lr = 0.01
//! ...
//!
//! [constraints]
//! active = M,U,T
//! lambda_m = 1.0
//! ```

use std::fmt;
use std::str::FromStr;

use ini::Ini;
use thiserror::Error;

use crate::tnorm::TNorm;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key `{key}` in [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("[{section}] {key} = {value}: {reason}")]
    BadValue {
        section: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Which auxiliary datasets feed constraint losses in stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActiveSets {
    pub m: bool,
    pub u: bool,
    pub t: bool,
}

impl ActiveSets {
    pub const NONE: ActiveSets = ActiveSets {
        m: false,
        u: false,
        t: false,
    };
    pub const ALL: ActiveSets = ActiveSets {
        m: true,
        u: true,
        t: true,
    };

    pub fn any(self) -> bool {
        self.m || self.u || self.t
    }
}

impl fmt::Display for ActiveSets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.m, "M"), (self.u, "U"), (self.t, "T")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

impl FromStr for ActiveSets {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let mut out = ActiveSets::NONE;
        if s.eq_ignore_ascii_case("none") || s.is_empty() {
            return Ok(out);
        }
        for part in s.split(',') {
            let flag = match part.trim() {
                "M" | "m" => &mut out.m,
                "U" | "u" => &mut out.u,
                "T" | "t" => &mut out.t,
                other => return Err(format!("unknown dataset `{other}` (expected M, U, T or none)")),
            };
            if *flag {
                return Err(format!("dataset `{}` listed twice", part.trim()));
            }
            *flag = true;
        }
        Ok(out)
    }
}

/// Constraint weights for the two rule families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_sym: f64,
    pub lambda_tran: f64,
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda_sym: 0.0,
        lambda_tran: 0.0,
    };

    pub fn new(lambda_sym: f64, lambda_tran: f64) -> Result<Self, ConfigError> {
        for (name, v) in [("lambda_sym", lambda_sym), ("lambda_tran", lambda_tran)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(LossWeights { lambda_sym, lambda_tran })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub tnorm: TNorm,
    /// Leading share of the labeled training pairs (and their mirrors) used.
    pub labeled_fraction: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage1_lr: f64,
    pub stage2_epochs: usize,
    pub stage2_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Largest allowed epoch-to-epoch rise of the stage-2 objective.
    pub descent_tolerance: f64,
    /// Include the annotation loss; off for constraint-only training.
    pub annotation: bool,
    pub active: ActiveSets,
    pub lambda_m: f64,
    pub lambda_u: f64,
    pub lambda_t: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 16,
            tnorm: TNorm::Product,
            labeled_fraction: 1.0,
            seed: 1,
            batch_size: 32,
            stage1_epochs: 30,
            stage1_lr: 1e-2,
            stage2_epochs: 30,
            stage2_lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            descent_tolerance: 0.02,
            annotation: true,
            active: ActiveSets::ALL,
            lambda_m: 1.0,
            lambda_u: 0.1,
            lambda_t: 0.01,
        }
    }
}

fn parse_value<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
        section: section.to_string(),
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.hidden == 0 {
            return bad("hidden must be positive".into());
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return bad(format!("labeled_fraction must lie in (0, 1], got {}", self.labeled_fraction));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        for (name, lr) in [("stage1_lr", self.stage1_lr), ("stage2_lr", self.stage2_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if !(self.descent_tolerance.is_finite() && self.descent_tolerance >= 0.0) {
            return bad("descent_tolerance must be nonnegative".into());
        }
        for (name, v) in [("lambda_m", self.lambda_m), ("lambda_u", self.lambda_u), ("lambda_t", self.lambda_t)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        Ok(())
    }

    /// Defaults overridden by whatever the text sets. Unknown sections and
    /// keys are errors.
    pub fn from_ini(text: &str) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut cfg = TrainConfig::default();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((key, _)) = props.iter().next() {
                    return Err(ConfigError::UnknownKey {
                        section: String::new(),
                        key: key.to_string(),
                    });
                }
                continue;
            };
            for (key, value) in props.iter() {
                let (s, k, v) = (section, key, value);
                match (section, key) {
                    ("model", "hidden") => cfg.hidden = parse_value(s, k, v)?,
                    ("model", "tnorm") => cfg.tnorm = parse_value(s, k, v)?,
                    ("data", "labeled_fraction") => cfg.labeled_fraction = parse_value(s, k, v)?,
                    ("train", "seed") => cfg.seed = parse_value(s, k, v)?,
                    ("train", "batch_size") => cfg.batch_size = parse_value(s, k, v)?,
                    ("train", "stage1_epochs") => cfg.stage1_epochs = parse_value(s, k, v)?,
                    ("train", "stage1_lr") => cfg.stage1_lr = parse_value(s, k, v)?,
                    ("train", "stage2_epochs") => cfg.stage2_epochs = parse_value(s, k, v)?,
                    ("train", "stage2_lr") => cfg.stage2_lr = parse_value(s, k, v)?,
                    ("train", "beta1") => cfg.beta1 = parse_value(s, k, v)?,
                    ("train", "beta2") => cfg.beta2 = parse_value(s, k, v)?,
                    ("train", "adam_eps") => cfg.adam_eps = parse_value(s, k, v)?,
                    ("train", "descent_tolerance") => cfg.descent_tolerance = parse_value(s, k, v)?,
                    ("train", "annotation") => cfg.annotation = parse_value(s, k, v)?,
                    ("constraints", "active") => cfg.active = parse_value(s, k, v)?,
                    ("constraints", "lambda_m") => cfg.lambda_m = parse_value(s, k, v)?,
                    ("constraints", "lambda_u") => cfg.lambda_u = parse_value(s, k, v)?,
                    ("constraints", "lambda_t") => cfg.lambda_t = parse_value(s, k, v)?,
                    ("model" | "data" | "train" | "constraints", _) => {
                        return Err(ConfigError::UnknownKey {
                            section: section.to_string(),
                            key: key.to_string(),
                        })
                    }
                    _ => return Err(ConfigError::UnknownSection(section.to_string())),
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every setting, in a form `from_ini` reads back to an equal config.
    pub fn to_ini(&self) -> String {
        format!(
            "[model]\nhidden = {}\ntnorm = {}\n\n\
             [data]\nlabeled_fraction = {:?}\n\n\
             [train]\nseed = {}\nbatch_size = {}\nstage1_epochs = {}\nstage1_lr = {:?}\n\
             stage2_epochs = {}\nstage2_lr = {:?}\nbeta1 = {:?}\nbeta2 = {:?}\nadam_eps = {:?}\n\
             descent_tolerance = {:?}\nannotation = {}\n\n\
             [constraints]\nactive = {}\nlambda_m = {:?}\nlambda_u = {:?}\nlambda_t = {:?}\n",
            self.hidden,
            self.tnorm,
            self.labeled_fraction,
            self.seed,
            self.batch_size,
            self.stage1_epochs,
            self.stage1_lr,
            self.stage2_epochs,
            self.stage2_lr,
            self.beta1,
            self.beta2,
            self.adam_eps,
            self.descent_tolerance,
            self.annotation,
            self.active,
            self.lambda_m,
            self.lambda_u,
            self.lambda_t,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(TrainConfig::from_ini("").unwrap(), TrainConfig::default());
    }

    #[test]
    fn overrides_and_round_trip() {
        let text = "[model]\nhidden = 8\ntnorm = lukasiewicz\n[train]\nseed = 9\nstage2_lr = 0.001\n\
                    [constraints]\nactive = U,M\nlambda_t = 0.5\n";
        let cfg = TrainConfig::from_ini(text).unwrap();
        assert_eq!(cfg.hidden, 8);
        assert_eq!(cfg.tnorm, TNorm::Lukasiewicz);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.stage2_lr, 0.001);
        assert_eq!(cfg.active, ActiveSets { m: true, u: true, t: false });
        assert_eq!(cfg.lambda_t, 0.5);
        assert_eq!(TrainConfig::from_ini(&cfg.to_ini()).unwrap(), cfg);
        assert_eq!(TrainConfig::from_ini(&TrainConfig::default().to_ini()).unwrap(), TrainConfig::default());
    }

    #[test]
    fn errors() {
        assert!(matches!(
            TrainConfig::from_ini("[train]\nepochs = 3\n"),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(TrainConfig::from_ini("[optim]\nlr = 3\n"), Err(ConfigError::UnknownSection(_))));
        assert!(matches!(TrainConfig::from_ini("seed = 3\n"), Err(ConfigError::UnknownKey { .. })));
        let err = TrainConfig::from_ini("[train]\nseed = -1\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { ref key, .. } if key == "seed"), "{err}");
        assert!(matches!(TrainConfig::from_ini("[model]\ntnorm = hamacher\n"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(TrainConfig::from_ini("[train]\nstage1_lr = 0\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(TrainConfig::from_ini("[constraints]\nlambda_u = -1\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(TrainConfig::from_ini("[constraints]\nactive = M,Q\n"), Err(ConfigError::BadValue { .. })));
    }

    #[test]
    fn active_sets_parse_and_print() {
        for (text, shown) in [("none", "none"), ("M", "M"), ("M,U", "M,U"), ("T, U ,M", "M,U,T"), ("", "none")] {
            assert_eq!(text.parse::<ActiveSets>().unwrap().to_string(), shown);
        }
        assert!("M,M".parse::<ActiveSets>().is_err());
    }

    #[test]
    fn loss_weights_validated() {
        assert!(LossWeights::new(0.0, 0.0).is_ok());
        assert!(LossWeights::new(-1.0, 0.0).is_err());
        assert!(LossWeights::new(1.0, f64::NAN).is_err());
    }
}
