use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use perpl::scenarios::{PlatoonSpec, SynthRanges, VehicleKind};
use perpl::{IdmParams, LinearGains, ObsNorm, PpoHyper, RewardWeights, SimConfig};

use crate::error::CliError;

/// One experiment configuration file. Every field has a default; unknown
/// keys are rejected at load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub gains: LinearGains,
    pub idm: IdmParams,
    pub reward: RewardWeights,
    pub hyper: PpoHyper,
    pub obs_norm: ObsNorm,
    pub synth: SynthRanges,
    /// Residual action band half-width (m/s^2).
    pub residual_limit: f64,
    /// Comfort-cost weight.
    pub comfort_alpha: f64,
    /// Platoon pattern: "single", "mixed10", or a string of C/H letters
    /// with the lead first (e.g. "HCHHC").
    pub platoon: String,
    pub seed: u64,
    pub train_iterations: usize,
    pub checkpoint_every: usize,
    pub manifest: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sim: SimConfig::default(),
            gains: LinearGains::default(),
            idm: IdmParams::default(),
            reward: RewardWeights::default(),
            hyper: PpoHyper::default(),
            obs_norm: ObsNorm::default(),
            synth: SynthRanges::default(),
            residual_limit: perpl::engine::DEFAULT_RESIDUAL_LIMIT,
            comfort_alpha: 1.0,
            platoon: "single".into(),
            seed: 0,
            train_iterations: 150,
            checkpoint_every: 0,
            manifest: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Every violated constraint at once.
    // NaN must fail validation, which the negated comparisons guarantee.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), CliError> {
        let mut errs = Vec::new();
        errs.extend(self.sim.validation_errors());
        errs.extend(self.gains.validation_errors());
        errs.extend(self.idm.validation_errors());
        errs.extend(self.reward.validation_errors());
        errs.extend(self.hyper.validation_errors());
        errs.extend(self.synth.validation_errors());
        if !(self.residual_limit > 0.0) {
            errs.push(format!(
                "residual_limit must be > 0, got {}",
                self.residual_limit
            ));
        }
        if self.comfort_alpha < 0.0 {
            errs.push(format!(
                "comfort_alpha must be >= 0, got {}",
                self.comfort_alpha
            ));
        }
        if let Err(e) = parse_platoon_pattern(&self.platoon, 0.0) {
            errs.push(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(errs.join("; ")))
        }
    }

    pub fn platoon_spec(&self, initial_speed: f64) -> Result<PlatoonSpec, CliError> {
        parse_platoon_pattern(&self.platoon, initial_speed).map_err(CliError::Config)
    }

    pub fn sim_context(&self) -> perpl::engine::SimContext {
        perpl::engine::SimContext {
            cfg: self.sim,
            gains: self.gains,
            idm: self.idm,
            reward: self.reward,
        }
    }
}

fn parse_platoon_pattern(pattern: &str, initial_speed: f64) -> Result<PlatoonSpec, String> {
    let kinds: Vec<VehicleKind> = match pattern {
        "single" => return Ok(PlatoonSpec::single_cav(initial_speed)),
        "mixed10" => return Ok(PlatoonSpec::mixed_ten(initial_speed)),
        letters => letters
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'C' => Ok(VehicleKind::Cav),
                'H' => Ok(VehicleKind::Hv),
                other => Err(format!(
                    "platoon pattern '{letters}': unknown vehicle '{other}' (use C or H)"
                )),
            })
            .collect::<Result<_, _>>()?,
    };
    PlatoonSpec::new(kinds, initial_speed)
        .map_err(|_| format!("platoon pattern '{pattern}' needs a lead and at least one follower"))
}

/// Wrapper echoed into every output directory: version stamp plus the fully
/// resolved configuration (the seed lives inside it).
#[derive(Debug, Serialize)]
pub struct ResolvedConfig<'a> {
    pub version: &'a str,
    pub config: &'a ExperimentConfig,
}

pub fn echo_resolved(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(), CliError> {
    let wrapper = ResolvedConfig {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&wrapper)
        .map_err(|e| CliError::Data(format!("serialize resolved config: {e}")))?;
    fs::write(out_dir.join("resolved_config.json"), json)?;
    Ok(())
}

/// Output directory resolution honoring the PERPL_OUTPUT_ROOT override.
pub fn resolve_out_dir(out: &Path) -> PathBuf {
    if out.is_absolute() {
        return out.to_path_buf();
    }
    match std::env::var_os("PERPL_OUTPUT_ROOT") {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn pattern_parsing() {
        let p = parse_platoon_pattern("mixed10", 15.0).unwrap();
        assert_eq!(p.kinds.len(), 10);
        let p = parse_platoon_pattern("HCH", 15.0).unwrap();
        assert_eq!(p.kinds[1], VehicleKind::Cav);
        assert!(parse_platoon_pattern("HX", 15.0).is_err());
        assert!(parse_platoon_pattern("H", 15.0).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn validation_collects_everything() {
        let mut cfg = ExperimentConfig::default();
        cfg.sim.dt = -1.0;
        cfg.residual_limit = 0.0;
        cfg.platoon = "H".into();
        let err = cfg.validate().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("sim.dt"), "{msg}");
        assert!(msg.contains("residual_limit"), "{msg}");
        assert!(msg.contains("platoon"), "{msg}");
    }
}
