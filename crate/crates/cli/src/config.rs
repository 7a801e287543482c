//! Benchmark configuration: JSON file, command-line overrides, validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use msopt_core::solver::StepSize;

/// Environment variable consulted for the seed when neither the flag nor the
/// config file sets one.
pub const SEED_ENV: &str = "MSOPT_SEED";

pub const MIN_SCALES: usize = 3;
pub const MAX_SCALES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Motivating,
    CoarseItersSweep,
    TuckerSynthetic,
    TuckerGeoshape,
    BoundAudit,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Motivating => "motivating",
            Self::CoarseItersSweep => "coarse-iters-sweep",
            Self::TuckerSynthetic => "tucker-synthetic",
            Self::TuckerGeoshape => "tucker-geoshape",
            Self::BoundAudit => "bound-audit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Inclusive range of scale counts, written `a..b` or a single `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaleRange {
    pub lo: usize,
    pub hi: usize,
}

impl ScaleRange {
    pub fn iter(self) -> impl Iterator<Item = usize> {
        self.lo..=self.hi
    }

    fn validate(self) -> Result<()> {
        if self.lo > self.hi {
            bail!("scale range {self} is empty");
        }
        if self.lo < MIN_SCALES || self.hi > MAX_SCALES {
            bail!("scale range {self} must lie within {MIN_SCALES}..{MAX_SCALES}");
        }
        Ok(())
    }
}

impl Default for ScaleRange {
    fn default() -> Self {
        Self { lo: 3, hi: 10 }
    }
}

impl fmt::Display for ScaleRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}..{}", self.lo, self.hi)
        }
    }
}

impl FromStr for ScaleRange {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad scale count {v:?}: {e}"));
        match s.split_once("..") {
            Some((a, b)) => {
                let b = b.strip_prefix('=').unwrap_or(b);
                Ok(Self { lo: parse(a)?, hi: parse(b)? })
            }
            None => {
                let v = parse(s)?;
                Ok(Self { lo: v, hi: v })
            }
        }
    }
}

impl Serialize for ScaleRange {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScaleRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            One(usize),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
            Raw::One(v) => Ok(Self { lo: v, hi: v }),
        }
    }
}

/// How the multiscale run of the motivating example spends its iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlanSpec {
    /// Only the single-scale baseline.
    Single,
    /// One iteration per coarse scale, fine scale to the stopping rule.
    GreedyOnePerCoarse,
    /// `K` iterations per coarse scale, fine scale to the stopping rule.
    GreedyUniform(usize),
    /// Lazy driver with `K` iterations at every scale.
    Lazy(usize),
    /// Coarse scales advance once the gradient mapping has shrunk enough.
    #[default]
    ProgressDriven,
}

impl fmt::Display for PlanSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Single => f.write_str("single"),
            Self::GreedyOnePerCoarse => f.write_str("greedy-one-per-coarse"),
            Self::GreedyUniform(k) => write!(f, "greedy-uniform({k})"),
            Self::Lazy(k) => write!(f, "lazy({k})"),
            Self::ProgressDriven => f.write_str("progress-driven"),
        }
    }
}

impl FromStr for PlanSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        let with_k = |name: &str| -> Option<std::result::Result<usize, String>> {
            let rest = s.strip_prefix(name)?;
            let inner = rest
                .strip_prefix('(')
                .and_then(|r| r.strip_suffix(')'))
                .or_else(|| rest.strip_prefix(':'))?;
            Some(inner.trim().parse::<usize>().map_err(|e| format!("bad K in {s:?}: {e}")))
        };
        match s {
            "single" => return Ok(Self::Single),
            "greedy-one-per-coarse" => return Ok(Self::GreedyOnePerCoarse),
            "progress-driven" => return Ok(Self::ProgressDriven),
            _ => {}
        }
        if let Some(k) = with_k("greedy-uniform") {
            let k = k?;
            if k == 0 {
                return Err("greedy-uniform needs K >= 1".into());
            }
            return Ok(Self::GreedyUniform(k));
        }
        if let Some(k) = with_k("lazy") {
            let k = k?;
            if k == 0 {
                return Err("lazy needs K >= 1".into());
            }
            return Ok(Self::Lazy(k));
        }
        Err(format!(
            "unknown plan {s:?}; expected single, greedy-one-per-coarse, greedy-uniform(K), lazy(K) or progress-driven"
        ))
    }
}

impl Serialize for PlanSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PlanSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Fixed stepsize of projected gradient descent in the motivating example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// `1 / L`.
    #[default]
    InverseSmoothness,
    /// `2 / (L + mu)`. With `mu / L` near zero the highest-frequency mode
    /// contracts by `(L - mu) / (L + mu)` per step and random starts stall.
    Optimal,
}

impl StepRule {
    pub fn step_size(self) -> StepSize {
        match self {
            Self::InverseSmoothness => StepSize::InverseSmoothness,
            Self::Optimal => StepSize::Optimal,
        }
    }
}

/// Knobs of the Legendre measurement problem used by the motivating example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotivatingSettings {
    /// Number of Legendre measurements.
    pub m: usize,
    pub lambda: f64,
    /// Noise standard deviation relative to the RMS of the clean measurements.
    pub noise: f64,
    pub step: StepRule,
    /// Runs stop once `f - f* <= tolerance * |f*|`.
    pub tolerance: f64,
    /// Iteration cap at the finest scale, a safety net for the stopping rule.
    pub fine_cap: usize,
    /// Progress-driven plan: iteration cap at every coarse scale.
    pub coarse_cap: usize,
    /// Progress-driven plan: advance once the gradient mapping falls below
    /// this fraction of its first value at the scale.
    pub coarse_rel_gradient: f64,
    /// Accelerated iterations spent on the reference optimum `f*`.
    pub reference_cap: usize,
    /// Write `iterates_S<k>.csv` with every Nth iterate of trial 0.
    pub snapshot_every: Option<usize>,
}

impl Default for MotivatingSettings {
    fn default() -> Self {
        Self {
            m: 5,
            lambda: 1e-4,
            noise: 0.05,
            step: StepRule::InverseSmoothness,
            tolerance: 0.05,
            fine_cap: 200_000,
            coarse_cap: 200,
            coarse_rel_gradient: 0.1,
            reference_cap: 20_000,
            snapshot_every: None,
        }
    }
}

/// Knobs of the Tucker benchmarks and the coarse-iteration sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuckerSettings {
    /// Iteration cap at the finest scale.
    pub max_iterations: usize,
    /// Iteration cap at every coarser scale.
    pub coarse_cap: usize,
    pub mean_rel_tol: f64,
    /// Entries below `rel_floor * max(Y)` are left out of the mean relative error.
    pub rel_floor: f64,
    /// Sweep: largest fixed coarse iteration count.
    pub sweep_max_k: usize,
    /// Sweep: the finest scale stops once `1/2 ||model - Y||^2` reaches this.
    pub sweep_objective_tol: f64,
    /// Geoshape stand-in: relative error at which both methods stop.
    pub geoshape_rel_tol: f64,
    pub geoshape_max_iterations: usize,
}

impl Default for TuckerSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            coarse_cap: 200,
            mean_rel_tol: 0.05,
            rel_floor: 1e-4,
            sweep_max_k: 20,
            sweep_objective_tol: 1e-6,
            geoshape_rel_tol: 0.12,
            geoshape_max_iterations: 200,
        }
    }
}

/// The config file. Every field is optional; command-line flags win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub experiment: Option<Experiment>,
    pub scales: Option<ScaleRange>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub plan: Option<PlanSpec>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub motivating: MotivatingSettings,
    pub tucker: TuckerSettings,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Values given on the command line; `None` defers to the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub scales: Option<ScaleRange>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub plan: Option<PlanSpec>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub snapshot_every: Option<usize>,
    pub coarse_cap: Option<usize>,
}

/// A fully resolved, validated benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub experiment: Experiment,
    pub scales: ScaleRange,
    pub trials: usize,
    pub seed: u64,
    pub plan: PlanSpec,
    pub jobs: usize,
    pub out: PathBuf,
    pub format: Format,
    pub motivating: MotivatingSettings,
    pub tucker: TuckerSettings,
}

impl BenchConfig {
    /// Defaults for `experiment`, before any file or flag.
    pub fn defaults(experiment: Experiment) -> Self {
        let trials = match experiment {
            Experiment::CoarseItersSweep => 5,
            Experiment::BoundAudit => 10_000,
            _ => 20,
        };
        Self {
            experiment,
            scales: ScaleRange::default(),
            trials,
            seed: 0,
            plan: PlanSpec::default(),
            jobs: 1,
            out: PathBuf::from("out"),
            format: Format::Csv,
            motivating: MotivatingSettings::default(),
            tucker: TuckerSettings::default(),
        }
    }

    /// Flags over file over defaults; the seed falls back to `env_seed`.
    pub fn resolve(file: ConfigFile, flags: Overrides, env_seed: Option<&str>) -> Result<Self> {
        let experiment = flags
            .experiment
            .or(file.experiment)
            .context("no experiment given on the command line or in the config file")?;
        let base = Self::defaults(experiment);
        let seed = match flags.seed.or(file.seed) {
            Some(s) => s,
            None => match env_seed {
                Some(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not a u64"))?,
                None => base.seed,
            },
        };
        let mut motivating = file.motivating;
        if flags.snapshot_every.is_some() {
            motivating.snapshot_every = flags.snapshot_every;
        }
        let mut tucker = file.tucker;
        if let Some(c) = flags.coarse_cap {
            motivating.coarse_cap = c;
            tucker.coarse_cap = c;
        }
        let cfg = Self {
            experiment,
            scales: flags.scales.or(file.scales).unwrap_or(base.scales),
            trials: flags.trials.or(file.trials).unwrap_or(base.trials),
            seed,
            plan: flags.plan.or(file.plan).unwrap_or(base.plan),
            jobs: flags.jobs.or(file.jobs).unwrap_or(base.jobs),
            out: flags.out.or(file.out).unwrap_or(base.out),
            format: flags.format.or(file.format).unwrap_or(base.format),
            motivating,
            tucker,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            bail!("trials must be at least 1");
        }
        if self.jobs == 0 {
            bail!("jobs must be at least 1");
        }
        self.scales.validate()?;
        let m = &self.motivating;
        if m.m == 0 {
            bail!("the motivating problem needs at least one measurement");
        }
        if !(m.lambda >= 0.0) || !(m.noise >= 0.0) || !(m.tolerance > 0.0) || !(m.coarse_rel_gradient > 0.0) {
            bail!("motivating settings need lambda >= 0, noise >= 0, tolerance > 0, coarse_rel_gradient > 0");
        }
        if m.fine_cap == 0 || m.coarse_cap == 0 || m.snapshot_every == Some(0) {
            bail!("iteration caps and snapshot_every must be positive");
        }
        let t = &self.tucker;
        if t.max_iterations == 0 || t.coarse_cap == 0 || t.sweep_max_k == 0 || t.geoshape_max_iterations == 0 {
            bail!("tucker iteration counts must be positive");
        }
        if !(t.mean_rel_tol > 0.0) || !(t.rel_floor >= 0.0) || !(t.sweep_objective_tol > 0.0) || !(t.geoshape_rel_tol > 0.0) {
            bail!("tucker tolerances must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_specs_round_trip() {
        for s in ["single", "greedy-one-per-coarse", "greedy-uniform(4)", "lazy(7)", "progress-driven"] {
            let p: PlanSpec = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert_eq!("lazy:3".parse::<PlanSpec>().unwrap(), PlanSpec::Lazy(3));
        assert!("lazy(0)".parse::<PlanSpec>().is_err());
        assert!("greedy".parse::<PlanSpec>().is_err());
    }

    #[test]
    fn scale_ranges_parse() {
        assert_eq!("3..10".parse::<ScaleRange>().unwrap(), ScaleRange { lo: 3, hi: 10 });
        assert_eq!("4..=6".parse::<ScaleRange>().unwrap(), ScaleRange { lo: 4, hi: 6 });
        assert_eq!("5".parse::<ScaleRange>().unwrap(), ScaleRange { lo: 5, hi: 5 });
        assert!("a..3".parse::<ScaleRange>().is_err());
    }

    #[test]
    fn flags_override_file_and_env_is_the_fallback() {
        let file = ConfigFile {
            experiment: Some(Experiment::Motivating),
            trials: Some(4),
            seed: Some(9),
            ..Default::default()
        };
        let flags = Overrides { trials: Some(2), ..Default::default() };
        let cfg = BenchConfig::resolve(file.clone(), flags, Some("5")).unwrap();
        assert_eq!((cfg.trials, cfg.seed), (2, 9));

        let no_seed = ConfigFile { seed: None, ..file };
        let cfg = BenchConfig::resolve(no_seed.clone(), Overrides::default(), Some("5")).unwrap();
        assert_eq!(cfg.seed, 5);
        let cfg = BenchConfig::resolve(no_seed.clone(), Overrides { seed: Some(1), ..Default::default() }, Some("5")).unwrap();
        assert_eq!(cfg.seed, 1);
        assert!(BenchConfig::resolve(no_seed, Overrides::default(), Some("x")).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let file = ConfigFile { experiment: Some(Experiment::Motivating), ..Default::default() };
        let bad = [
            Overrides { trials: Some(0), ..Default::default() },
            Overrides { scales: Some(ScaleRange { lo: 2, hi: 5 }), ..Default::default() },
            Overrides { scales: Some(ScaleRange { lo: 8, hi: 21 }), ..Default::default() },
            Overrides { scales: Some(ScaleRange { lo: 6, hi: 5 }), ..Default::default() },
            Overrides { jobs: Some(0), ..Default::default() },
        ];
        for o in bad {
            assert!(BenchConfig::resolve(file.clone(), o, None).is_err());
        }
        assert!(BenchConfig::resolve(ConfigFile::default(), Overrides::default(), None).is_err());
    }

    #[test]
    fn config_file_json_mirrors_flags() {
        let text = r#"{"experiment":"tucker-synthetic","scales":"4..6","trials":3,"plan":"lazy(2)",
                      "format":"json","tucker":{"coarse_cap":50}}"#;
        let file: ConfigFile = serde_json::from_str(text).unwrap();
        let cfg = BenchConfig::resolve(file, Overrides::default(), None).unwrap();
        assert_eq!(cfg.experiment, Experiment::TuckerSynthetic);
        assert_eq!(cfg.scales, ScaleRange { lo: 4, hi: 6 });
        assert_eq!(cfg.plan, PlanSpec::Lazy(2));
        assert_eq!(cfg.format, Format::Json);
        assert_eq!(cfg.tucker.coarse_cap, 50);
        assert_eq!(cfg.tucker.max_iterations, 500);
        assert!(serde_json::from_str::<ConfigFile>(r#"{"trails": 3}"#).is_err());
    }
}
