//! Scenario files.
//!
//! ```toml
//! name = "zipf08-proportional"
//! horizon = 10000.0
//! warmup = 2000.0          # default: 20% of the horizon
//! seeds = [1, 2, 3]
//! snapshot_every = 500.0   # optional replication trajectory
//!
//! [instance]
//! kind = "zipf"            # or "classes"
//! n = 200
//! m = 2000
//! d = 10
//! rho = 0.9
//! alpha = 0.8
//!
//! [[policies]]
//! kind = "proportional"    # optimized | greedy | explicit | csv | adaptive
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptive::{AdaptiveConfig, EvictionRule, DEFAULT_LFL_TAU, DEFAULT_MIN_Z_STAR_CONTENTS};
use crate::error::{Error, Result};
use crate::model::{class_catalog, zipf_catalog, Catalog, ClassSpec, ContentClass, SystemParams, DEFAULT_CAP_FRACTION};
use crate::sim::engine::DEFAULT_WARMUP_FRACTION;

fn default_cap() -> f64 {
    DEFAULT_CAP_FRACTION
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_policies() -> Vec<PolicySpec> {
    vec![PolicySpec {
        label: None,
        kind: PolicyKind::Proportional,
    }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    Zipf {
        n: usize,
        m: usize,
        d: usize,
        rho: f64,
        alpha: f64,
        #[serde(default = "default_cap")]
        cap_fraction: f64,
    },
    Classes {
        m: usize,
        d: usize,
        /// When set, class rates are scaled so the offered load is `rho`.
        #[serde(default)]
        rho: Option<f64>,
        classes: Vec<ContentClass>,
        #[serde(default = "default_cap")]
        cap_fraction: f64,
    },
}

/// A resolved problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub catalog: Catalog,
    pub params: SystemParams,
    pub classes: Option<ClassSpec>,
    pub cap_fraction: f64,
}

impl Instance {
    /// Class index of each content, when the instance has classes.
    pub fn class_of_contents(&self) -> Option<Vec<usize>> {
        self.classes.as_ref().map(ClassSpec::class_of_contents)
    }
}

impl InstanceSpec {
    pub fn build(&self) -> Result<Instance> {
        match self {
            InstanceSpec::Zipf {
                n,
                m,
                d,
                rho,
                alpha,
                cap_fraction,
            } => {
                let params = SystemParams::from_load(*n, *m, *d, *rho)?;
                let catalog = zipf_catalog(*n, *alpha, params.lambda_bar)?;
                Ok(Instance {
                    catalog,
                    params,
                    classes: None,
                    cap_fraction: *cap_fraction,
                })
            }
            InstanceSpec::Classes {
                m,
                d,
                rho,
                classes,
                cap_fraction,
            } => {
                let spec = ClassSpec::new(classes.clone())?;
                let scale = match rho {
                    Some(rho) => rho * *m as f64 / spec.total_rate(),
                    None => 1.0,
                };
                let catalog = class_catalog(&spec, scale)?;
                let params = catalog.params(*m, *d)?;
                Ok(Instance {
                    catalog,
                    params,
                    classes: Some(spec),
                    cap_fraction: *cap_fraction,
                })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Proportional,
    /// Near-uniform profile with the logarithmic popularity adjustment.
    Optimized {
        #[serde(default)]
        two_pass: bool,
    },
    Greedy {
        #[serde(default)]
        two_pass: bool,
    },
    /// Per-class replica counts from the instance.
    Explicit,
    Csv {
        path: PathBuf,
    },
    Adaptive {
        rule: String,
        #[serde(rename = "virtual", default)]
        virtual_losses: bool,
        #[serde(default)]
        tau: Option<f64>,
        #[serde(default)]
        lrl_restricted: bool,
        #[serde(default)]
        min_z_star_contents: Option<usize>,
        /// Static policy giving the initial replication.
        #[serde(default)]
        start: Option<String>,
        /// Count virtual losses without ever moving a replica.
        #[serde(default)]
        frozen: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub kind: PolicyKind,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        PolicySpec { label: None, kind }
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        match &self.kind {
            PolicyKind::Proportional => "proportional".into(),
            PolicyKind::Optimized { two_pass } => if *two_pass { "optimized-2pass" } else { "optimized" }.into(),
            PolicyKind::Greedy { two_pass } => if *two_pass { "greedy-2pass" } else { "greedy" }.into(),
            PolicyKind::Explicit => "explicit".into(),
            PolicyKind::Csv { .. } => "csv".into(),
            PolicyKind::Adaptive {
                rule,
                virtual_losses,
                frozen,
                ..
            } => {
                let mut s = format!("adaptive-{}", rule.to_ascii_lowercase());
                if *virtual_losses {
                    s.push_str("-virtual");
                }
                if *frozen {
                    s.push_str("-frozen");
                }
                s
            }
        }
    }

    /// Name of the static policy a run starts from.
    pub fn start_policy(&self) -> Result<PolicyKind> {
        match &self.kind {
            PolicyKind::Adaptive { start, .. } => match start.as_deref().unwrap_or("proportional") {
                "proportional" => Ok(PolicyKind::Proportional),
                "optimized" => Ok(PolicyKind::Optimized { two_pass: false }),
                "greedy" => Ok(PolicyKind::Greedy { two_pass: false }),
                "explicit" => Ok(PolicyKind::Explicit),
                other => Err(Error::invalid(format!("unknown start policy '{other}'"))),
            },
            other => Ok(other.clone()),
        }
    }

    pub fn adaptive(&self) -> Result<Option<AdaptiveConfig>> {
        let PolicyKind::Adaptive {
            rule,
            virtual_losses,
            tau,
            lrl_restricted,
            min_z_star_contents,
            frozen,
            ..
        } = &self.kind
        else {
            return Ok(None);
        };
        let mut rule: EvictionRule = rule.parse()?;
        if let EvictionRule::Lfl { tau: t } = &mut rule {
            *t = tau.unwrap_or(DEFAULT_LFL_TAU);
        }
        let cfg = AdaptiveConfig {
            rule,
            virtual_losses: *virtual_losses,
            adapt: !*frozen,
            lrl_restricted: *lrl_restricted,
            min_z_star_contents: min_z_star_contents.unwrap_or(DEFAULT_MIN_Z_STAR_CONTENTS),
        };
        cfg.validate()?;
        Ok(Some(cfg))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub instance: InstanceSpec,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicySpec>,
    pub horizon: f64,
    #[serde(default)]
    pub warmup: Option<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub snapshot_every: Option<f64>,
    /// Directory relative paths in the file are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: format!("cannot read scenario file: {e}"),
        })?;
        let mut cfg = Self::from_toml_str(&text, path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario configs serialize to TOML")
    }

    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| "scenario".into())
    }

    pub fn warmup(&self) -> f64 {
        self.warmup.unwrap_or(DEFAULT_WARMUP_FRACTION * self.horizon)
    }

    /// Replaces the horizon; the warmup falls back to its default fraction and
    /// the snapshot period is capped so a trajectory keeps ten points.
    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        self.horizon = horizon;
        self.warmup = None;
        self.snapshot_every = self.snapshot_every.map(|s| s.min(horizon / 10.0));
        self.validate()?;
        Ok(self)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        let warmup = self.warmup();
        if !(warmup >= 0.0 && warmup < self.horizon) {
            return Err(Error::invalid(format!(
                "need horizon > warmup >= 0, got horizon {} and warmup {warmup}",
                self.horizon
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("at least one seed is required"));
        }
        if self.policies.is_empty() {
            return Err(Error::invalid("at least one policy is required"));
        }
        let mut labels = BTreeSet::new();
        for p in &self.policies {
            if !labels.insert(p.label()) {
                return Err(Error::invalid(format!("duplicate policy label '{}'", p.label())));
            }
            p.adaptive()?;
            p.start_policy()?;
        }
        if let Some(every) = self.snapshot_every {
            if !(every.is_finite() && every > 0.0) {
                return Err(Error::invalid(format!("snapshot_every must be positive, got {every}")));
            }
        }
        self.instance.build()?;
        Ok(())
    }
}
