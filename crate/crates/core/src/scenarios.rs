//! Scenario tooling: lead-trajectory ingestion and generation, platoon
//! composition, and equilibrium initialization.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{idm_equilibrium_gap, IdmError, IdmParams};
use crate::dynamics::{SimConfig, VehicleState};
use crate::rng::Rng;

/// Per-step speed/accel consistency tolerance (m/s) for ingested data.
pub const CONSISTENCY_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Ingested,
    Synthetic,
    Extremized,
}

/// Speed/acceleration profile driving the lead vehicle, sampled at `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadTrajectory {
    pub dt: f64,
    pub speeds: Vec<f64>,
    pub accels: Vec<f64>,
    pub source: SourceTag,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("missing required column '{name}' in {path}")]
    MissingColumn { path: String, name: String },
    #[error("trajectory invalid: {0}")]
    InvalidTrajectory(String),
    #[error("synthesis parameters produce negative speed: {0}")]
    NegativeSpeed(String),
    #[error("extremize gain must be >= 1, got {0}")]
    BadGain(f64),
    #[error("platoon spec must contain at least a lead and one follower")]
    PlatoonTooShort,
    #[error("no equilibrium for human-driven follower: {0}")]
    HvEquilibrium(#[from] IdmError),
    #[error("manifest {path}:{line}: {msg}")]
    Manifest {
        path: String,
        line: usize,
        msg: String,
    },
}

impl LeadTrajectory {
    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    /// Speeds nonnegative, accelerations inside the realizable band, and
    /// per-step speed/accel consistency within tolerance.
    pub fn validate(&self, cfg: &SimConfig<f64>) -> Result<(), ScenarioError> {
        if self.speeds.len() != self.accels.len() {
            return Err(ScenarioError::InvalidTrajectory(format!(
                "{} speeds vs {} accels",
                self.speeds.len(),
                self.accels.len()
            )));
        }
        if self.speeds.is_empty() {
            return Err(ScenarioError::InvalidTrajectory("empty trajectory".into()));
        }
        for (t, &v) in self.speeds.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(ScenarioError::InvalidTrajectory(format!(
                    "speed {v} at step {t}"
                )));
            }
        }
        let slack = 1e-9;
        for (t, &a) in self.accels.iter().enumerate() {
            if !a.is_finite() || a < cfg.a_min_hard - slack || a > cfg.a_max_hard + slack {
                return Err(ScenarioError::InvalidTrajectory(format!(
                    "acceleration {a} at step {t} outside [{}, {}]",
                    cfg.a_min_hard, cfg.a_max_hard
                )));
            }
        }
        for t in 0..self.len() - 1 {
            let resid = (self.speeds[t + 1] - self.speeds[t] - self.accels[t] * self.dt).abs();
            if resid >= CONSISTENCY_TOL {
                return Err(ScenarioError::InvalidTrajectory(format!(
                    "speed/accel inconsistency {resid:.4} m/s at step {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Forward differences: exact consistency with the speed series.
fn accels_from_speeds(speeds: &[f64], dt: f64) -> Vec<f64> {
    let n = speeds.len();
    let mut a = vec![0.0; n];
    for t in 0..n.saturating_sub(1) {
        a[t] = (speeds[t + 1] - speeds[t]) / dt;
    }
    a
}

/// Central differences with one-sided ends.
fn central_diff(speeds: &[f64], dt: f64) -> Vec<f64> {
    let n = speeds.len();
    let mut a = vec![0.0; n];
    if n < 2 {
        return a;
    }
    a[0] = (speeds[1] - speeds[0]) / dt;
    a[n - 1] = (speeds[n - 1] - speeds[n - 2]) / dt;
    for t in 1..n - 1 {
        a[t] = (speeds[t + 1] - speeds[t - 1]) / (2.0 * dt);
    }
    a
}

/// Column names for trajectory ingestion. `time_scale` converts the file's
/// time unit to seconds (0.001 for milliseconds). When `accel` is `None`
/// the accel column named "accel" is used if present, otherwise derived.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap {
    pub time: String,
    pub speed: String,
    pub accel: Option<String>,
    pub time_scale: f64,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            time: "time".into(),
            speed: "speed".into(),
            accel: None,
            time_scale: 1.0,
        }
    }
}

fn split_line(line: &str, delim: char) -> Vec<String> {
    line.split(delim).map(|f| f.trim().to_string()).collect()
}

/// Parse a delimiter-separated trajectory file, resample it onto the `cfg.dt`
/// grid by linear interpolation, and validate it.
pub fn load_trajectory(
    path: &Path,
    map: &ColumnMap,
    cfg: &SimConfig<f64>,
) -> Result<LeadTrajectory, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let pstr = path.display().to_string();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| ScenarioError::Parse {
        path: pstr.clone(),
        line: 1,
        msg: "empty file".into(),
    })?;
    let delim = if header.contains(',') { ',' } else if header.contains(';') { ';' } else { '\t' };
    let cols = split_line(header, delim);
    let col_index = |name: &str| cols.iter().position(|c| c == name);
    let time_idx = col_index(&map.time).ok_or_else(|| ScenarioError::MissingColumn {
        path: pstr.clone(),
        name: map.time.clone(),
    })?;
    let speed_idx = col_index(&map.speed).ok_or_else(|| ScenarioError::MissingColumn {
        path: pstr.clone(),
        name: map.speed.clone(),
    })?;
    let accel_idx = match &map.accel {
        Some(name) => Some(col_index(name).ok_or_else(|| ScenarioError::MissingColumn {
            path: pstr.clone(),
            name: name.clone(),
        })?),
        None => col_index("accel"),
    };

    let mut times = Vec::new();
    let mut speeds = Vec::new();
    let mut accels = Vec::new();
    for (lineno, line) in lines {
        let fields = split_line(line, delim);
        let parse = |idx: usize, what: &str| -> Result<f64, ScenarioError> {
            fields
                .get(idx)
                .and_then(|f| f.parse::<f64>().ok())
                .filter(|x| x.is_finite())
                .ok_or_else(|| ScenarioError::Parse {
                    path: pstr.clone(),
                    line: lineno + 1,
                    msg: format!("cannot parse {what} from '{}'", fields.get(idx).map(String::as_str).unwrap_or("<missing>")),
                })
        };
        let t = parse(time_idx, "time")? * map.time_scale;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(ScenarioError::Parse {
                    path: pstr.clone(),
                    line: lineno + 1,
                    msg: format!("non-monotone time {t} after {prev}"),
                });
            }
        }
        let v = parse(speed_idx, "speed")?;
        if v < 0.0 {
            return Err(ScenarioError::Parse {
                path: pstr.clone(),
                line: lineno + 1,
                msg: format!("negative speed {v}"),
            });
        }
        times.push(t);
        speeds.push(v);
        if let Some(ai) = accel_idx {
            accels.push(parse(ai, "accel")?);
        }
    }
    if times.len() < 2 {
        return Err(ScenarioError::Parse {
            path: pstr,
            line: 1,
            msg: format!("need at least 2 samples, got {}", times.len()),
        });
    }

    // resample onto the dt grid
    let dt = cfg.dt;
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let n_out = (span / dt).floor() as usize + 1;
    let interp = |series: &[f64], t: f64| -> f64 {
        // times are strictly increasing
        let mut hi = 1;
        while hi < times.len() - 1 && times[hi] < t {
            hi += 1;
        }
        let lo = hi - 1;
        let w = ((t - times[lo]) / (times[hi] - times[lo])).clamp(0.0, 1.0);
        series[lo] * (1.0 - w) + series[hi] * w
    };
    let out_speeds: Vec<f64> = (0..n_out).map(|k| interp(&speeds, t0 + k as f64 * dt)).collect();
    let out_accels = if accels.is_empty() {
        central_diff(&out_speeds, dt)
    } else {
        (0..n_out).map(|k| interp(&accels, t0 + k as f64 * dt)).collect()
    };

    let mut traj = LeadTrajectory {
        dt,
        speeds: out_speeds,
        accels: out_accels,
        source: SourceTag::Ingested,
    };
    // re-derive accelerations when the provided ones disagree with the speeds
    let consistent = (0..traj.len() - 1).all(|t| {
        (traj.speeds[t + 1] - traj.speeds[t] - traj.accels[t] * dt).abs() < CONSISTENCY_TOL
    });
    if !consistent {
        traj.accels = central_diff(&traj.speeds, dt);
        let still_bad = (0..traj.len() - 1).any(|t| {
            (traj.speeds[t + 1] - traj.speeds[t] - traj.accels[t] * dt).abs() >= CONSISTENCY_TOL
        });
        if still_bad {
            traj.accels = accels_from_speeds(&traj.speeds, dt);
        }
    }
    traj.validate(cfg)?;
    Ok(traj)
}

pub fn write_trajectory_csv(traj: &LeadTrajectory, path: &Path) -> Result<(), ScenarioError> {
    let mut out = String::from("time,speed,accel\n");
    for t in 0..traj.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            t as f64 * traj.dt,
            traj.speeds[t],
            traj.accels[t]
        ));
    }
    fs::write(path, out).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Scale accelerations by `gain`, clamp into `[cap_min, cap_max]`, then
/// re-integrate speeds from the initial speed with a floor at zero and
/// re-derive the effective accelerations. Used to build evaluation sets
/// with events beyond the training distribution.
pub fn extremize(
    traj: &LeadTrajectory,
    gain: f64,
    cap_min: f64,
    cap_max: f64,
) -> Result<LeadTrajectory, ScenarioError> {
    if gain < 1.0 {
        return Err(ScenarioError::BadGain(gain));
    }
    if !(cap_min < 0.0 && cap_max > 0.0) {
        return Err(ScenarioError::InvalidTrajectory(format!(
            "extremize caps must straddle zero, got [{cap_min}, {cap_max}]"
        )));
    }
    let scaled: Vec<f64> = traj
        .accels
        .iter()
        .map(|a| (a * gain).clamp(cap_min, cap_max))
        .collect();
    let mut speeds = vec![0.0; traj.len()];
    speeds[0] = traj.speeds[0];
    for t in 0..traj.len() - 1 {
        speeds[t + 1] = (speeds[t] + scaled[t] * traj.dt).max(0.0);
    }
    let accels = accels_from_speeds(&speeds, traj.dt);
    Ok(LeadTrajectory {
        dt: traj.dt,
        speeds,
        accels,
        source: SourceTag::Extremized,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Sinusoid,
    BrakePulse,
    StopAndGo,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthKind::Sinusoid => write!(f, "sinusoid"),
            SynthKind::BrakePulse => write!(f, "brake-pulse"),
            SynthKind::StopAndGo => write!(f, "stop-and-go"),
        }
    }
}

/// Parameter ranges for seeded synthetic generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRanges {
    pub steps: usize,
    pub cruise_speed: [f64; 2],
    /// Sinusoid speed amplitude (m/s).
    pub amplitude: [f64; 2],
    /// Sinusoid period (s).
    pub period: [f64; 2],
    /// Brake-pulse deceleration rate (m/s^2).
    pub decel_rate: [f64; 2],
    /// Brake-pulse duration (s).
    pub pulse_duration: [f64; 2],
    /// Recovery acceleration rate (m/s^2).
    pub recover_rate: [f64; 2],
    /// Stop-and-go standstill duration (s).
    pub stop_duration: [f64; 2],
}

impl Default for SynthRanges {
    fn default() -> Self {
        SynthRanges {
            steps: 500,
            cruise_speed: [13.5, 16.0],
            amplitude: [5.5, 6.5],
            period: [13.0, 16.0],
            decel_rate: [1.9, 2.2],
            pulse_duration: [4.5, 5.5],
            recover_rate: [0.8, 1.2],
            stop_duration: [2.0, 6.0],
        }
    }
}

impl SynthRanges {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.steps < 2 {
            errs.push("synth.steps must be >= 2".into());
        }
        for (name, r) in [
            ("synth.cruise_speed", self.cruise_speed),
            ("synth.amplitude", self.amplitude),
            ("synth.period", self.period),
            ("synth.decel_rate", self.decel_rate),
            ("synth.pulse_duration", self.pulse_duration),
            ("synth.recover_rate", self.recover_rate),
            ("synth.stop_duration", self.stop_duration),
        ] {
            if !(r[0] > 0.0 && r[1] >= r[0]) {
                errs.push(format!("{name} must be a positive range, got {r:?}"));
            }
        }
        errs
    }
}

/// Speed profile from per-step speeds; accelerations by forward difference
/// so the consistency invariant holds exactly.
fn from_speeds(speeds: Vec<f64>, dt: f64) -> LeadTrajectory {
    let accels = accels_from_speeds(&speeds, dt);
    LeadTrajectory {
        dt,
        speeds,
        accels,
        source: SourceTag::Synthetic,
    }
}

pub fn sinusoid(
    steps: usize,
    dt: f64,
    mean_speed: f64,
    amplitude: f64,
    period: f64,
) -> Result<LeadTrajectory, ScenarioError> {
    if amplitude > mean_speed {
        return Err(ScenarioError::NegativeSpeed(format!(
            "sinusoid amplitude {amplitude} exceeds mean speed {mean_speed}"
        )));
    }
    let speeds = (0..steps)
        .map(|t| {
            let time = t as f64 * dt;
            mean_speed + amplitude * (2.0 * std::f64::consts::PI * time / period).sin()
        })
        .collect();
    Ok(from_speeds(speeds, dt))
}

pub fn brake_pulse(
    steps: usize,
    dt: f64,
    cruise: f64,
    decel_rate: f64,
    pulse_duration: f64,
    recover_rate: f64,
) -> Result<LeadTrajectory, ScenarioError> {
    if cruise - decel_rate * pulse_duration < 0.0 {
        return Err(ScenarioError::NegativeSpeed(format!(
            "brake pulse {decel_rate} m/s^2 over {pulse_duration} s from {cruise} m/s"
        )));
    }
    // cruise for a fifth of the horizon, brake, recover, cruise
    let pulse_start = steps / 5;
    let pulse_steps = (pulse_duration / dt).round() as usize;
    let mut speeds = Vec::with_capacity(steps);
    let mut v = cruise;
    for t in 0..steps {
        speeds.push(v);
        if t >= pulse_start && t < pulse_start + pulse_steps {
            v -= decel_rate * dt;
        } else if v < cruise {
            v = (v + recover_rate * dt).min(cruise);
        }
    }
    Ok(from_speeds(speeds, dt))
}

pub fn stop_and_go(
    steps: usize,
    dt: f64,
    cruise: f64,
    decel_rate: f64,
    stop_duration: f64,
    recover_rate: f64,
) -> Result<LeadTrajectory, ScenarioError> {
    let mut speeds = Vec::with_capacity(steps);
    let mut v = cruise;
    let cruise_steps = steps / 6;
    let stop_steps = (stop_duration / dt).round() as usize;
    let mut phase = 0usize; // 0 cruise, 1 brake, 2 stopped, 3 recover
    let mut phase_left = cruise_steps;
    for _ in 0..steps {
        speeds.push(v);
        match phase {
            0 => {
                phase_left = phase_left.saturating_sub(1);
                if phase_left == 0 {
                    phase = 1;
                }
            }
            1 => {
                v = (v - decel_rate * dt).max(0.0);
                if v == 0.0 {
                    phase = 2;
                    phase_left = stop_steps;
                }
            }
            2 => {
                phase_left = phase_left.saturating_sub(1);
                if phase_left == 0 {
                    phase = 3;
                }
            }
            _ => {
                v = (v + recover_rate * dt).min(cruise);
                if v == cruise {
                    phase = 0;
                    phase_left = cruise_steps;
                }
            }
        }
    }
    Ok(from_speeds(speeds, dt))
}

/// Draw a profile of the given kind with parameters sampled from `ranges`.
pub fn synth_trajectory(
    kind: SynthKind,
    ranges: &SynthRanges,
    dt: f64,
    rng: &mut Rng,
) -> Result<LeadTrajectory, ScenarioError> {
    let pick = |rng: &mut Rng, r: [f64; 2]| rng.range_f64(r[0], r[1]);
    match kind {
        SynthKind::Sinusoid => {
            let cruise = pick(rng, ranges.cruise_speed);
            let period = pick(rng, ranges.period);
            // keep the peak acceleration below 3 m/s^2 and the trough speed
            // comfortably positive
            let accel_cap = 2.9 * period / (2.0 * std::f64::consts::PI);
            let amplitude = pick(rng, ranges.amplitude)
                .min(cruise - 2.5)
                .min(accel_cap);
            sinusoid(ranges.steps, dt, cruise, amplitude, period)
        }
        SynthKind::BrakePulse => {
            let cruise = pick(rng, ranges.cruise_speed);
            let decel = pick(rng, ranges.decel_rate);
            // keep the trough speed of the un-extremized pulse above 2 m/s
            let max_dur = ((cruise - 2.0) / decel).max(0.1);
            let duration = pick(rng, ranges.pulse_duration).min(max_dur);
            let recover = pick(rng, ranges.recover_rate);
            brake_pulse(ranges.steps, dt, cruise, decel, duration, recover)
        }
        SynthKind::StopAndGo => {
            let cruise = pick(rng, ranges.cruise_speed);
            let decel = pick(rng, ranges.decel_rate);
            let stop = pick(rng, ranges.stop_duration);
            let recover = pick(rng, ranges.recover_rate);
            stop_and_go(ranges.steps, dt, cruise, decel, stop, recover)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleKind {
    Cav,
    Hv,
}

impl fmt::Display for VehicleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VehicleKind::Cav => write!(f, "cav"),
            VehicleKind::Hv => write!(f, "hv"),
        }
    }
}

/// Ordered platoon composition. Index 0 is the lead vehicle, which follows
/// its trajectory rather than a controller; its kind label is inert.
#[derive(Debug, Clone, PartialEq)]
pub struct PlatoonSpec {
    pub kinds: Vec<VehicleKind>,
    pub initial_speed: f64,
}

impl PlatoonSpec {
    pub fn new(kinds: Vec<VehicleKind>, initial_speed: f64) -> Result<Self, ScenarioError> {
        if kinds.len() < 2 {
            return Err(ScenarioError::PlatoonTooShort);
        }
        Ok(PlatoonSpec {
            kinds,
            initial_speed,
        })
    }

    /// Lead plus one automated follower.
    pub fn single_cav(initial_speed: f64) -> Self {
        PlatoonSpec {
            kinds: vec![VehicleKind::Hv, VehicleKind::Cav],
            initial_speed,
        }
    }

    /// The built-in ten-vehicle mixed pattern: followers 1, 5 and 8 are
    /// automated, the rest human-driven.
    pub fn mixed_ten(initial_speed: f64) -> Self {
        use VehicleKind::*;
        PlatoonSpec {
            kinds: vec![Hv, Cav, Hv, Hv, Hv, Cav, Hv, Hv, Cav, Hv],
            initial_speed,
        }
    }

    pub fn n_followers(&self) -> usize {
        self.kinds.len() - 1
    }

    pub fn cav_count(&self) -> usize {
        self.kinds[1..]
            .iter()
            .filter(|k| **k == VehicleKind::Cav)
            .count()
    }
}

/// Mixed platoon with `round(rate * n_followers)` automated followers at
/// seeded-random positions (uniform, without replacement).
pub fn penetration_platoon(
    n_followers: usize,
    rate: f64,
    initial_speed: f64,
    rng: &mut Rng,
) -> Result<PlatoonSpec, ScenarioError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(ScenarioError::InvalidTrajectory(format!(
            "penetration rate {rate} outside [0, 1]"
        )));
    }
    if n_followers == 0 {
        return Err(ScenarioError::PlatoonTooShort);
    }
    let n_cav = (rate * n_followers as f64).round() as usize;
    let mut positions: Vec<usize> = (1..=n_followers).collect();
    rng.shuffle(&mut positions);
    let mut kinds = vec![VehicleKind::Hv; n_followers + 1];
    for &p in positions.iter().take(n_cav) {
        kinds[p] = VehicleKind::Cav;
    }
    PlatoonSpec::new(kinds, initial_speed)
}

/// Equilibrium initial states, lead front bumper at position 0.
///
/// Automated followers space themselves at `d0 + (h_d + tau_c) * v`: the
/// stationary point of the delayed constant-time-headway law, where the
/// delayed predecessor position reads exactly `h_d * v + d0` ahead.
/// Human-driven followers take their car-following equilibrium net gap plus
/// the vehicle length.
pub fn init_equilibrium(
    spec: &PlatoonSpec,
    cfg: &SimConfig<f64>,
    idm: &IdmParams<f64>,
) -> Result<Vec<VehicleState<f64>>, ScenarioError> {
    let v = spec.initial_speed;
    let mut states = Vec::with_capacity(spec.kinds.len());
    states.push(VehicleState::new(0.0, v, 0.0));
    for n in 1..spec.kinds.len() {
        let spacing = match spec.kinds[n] {
            VehicleKind::Cav => cfg.d0 + (cfg.h_d + cfg.tau_c) * v,
            VehicleKind::Hv => idm_equilibrium_gap(v, idm)? + cfg.vehicle_length,
        };
        let position = states[n - 1].position - spacing;
        states.push(VehicleState::new(position, v, 0.0));
    }
    Ok(states)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Extrapolation,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
            Split::Extrapolation => write!(f, "extrapolation"),
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "extrapolation" => Ok(Split::Extrapolation),
            other => Err(format!(
                "unknown split '{other}' (expected train, test or extrapolation)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub split: Split,
}

/// Manifest format: a `path,split` header then one row per trajectory.
/// Relative paths resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let pstr = path.display().to_string();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line == "path,split") {
            continue;
        }
        let (p, s) = line.rsplit_once(',').ok_or_else(|| ScenarioError::Manifest {
            path: pstr.clone(),
            line: lineno + 1,
            msg: "expected 'path,split'".into(),
        })?;
        let split: Split = s.trim().parse().map_err(|msg| ScenarioError::Manifest {
            path: pstr.clone(),
            line: lineno + 1,
            msg,
        })?;
        let raw = PathBuf::from(p.trim());
        let resolved = if raw.is_absolute() { raw } else { base.join(raw) };
        entries.push(ManifestEntry {
            path: resolved,
            split,
        });
    }
    if entries.is_empty() {
        return Err(ScenarioError::Manifest {
            path: pstr,
            line: 1,
            msg: "manifest lists no trajectories".into(),
        });
    }
    Ok(entries)
}

/// Write (or append to) a manifest, storing paths relative to it when they
/// live underneath its directory.
pub fn append_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), ScenarioError> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut out = if path.exists() {
        fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?
    } else {
        String::from("path,split\n")
    };
    for e in entries {
        let rel = e.path.strip_prefix(base).unwrap_or(&e.path);
        out.push_str(&format!("{},{}\n", rel.display(), e.split));
    }
    fs::write(path, out).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::idm_accel_raw;

    fn cfg() -> SimConfig<f64> {
        SimConfig::default()
    }

    fn tmpfile(name: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("perpl-scen-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn load_constant_speed_file() {
        let p = tmpfile("const.csv");
        fs::write(&p, "time,speed\n0,10\n0.1,10\n0.2,10\n").unwrap();
        let traj = load_trajectory(&p, &ColumnMap::default(), &cfg()).unwrap();
        fs::remove_file(&p).ok();
        assert_eq!(traj.len(), 3);
        assert!(traj.speeds.iter().all(|&v| (v - 10.0).abs() < 1e-12));
        assert!(traj.accels.iter().all(|&a| a.abs() < 1e-12));
        assert_eq!(traj.source, SourceTag::Ingested);
    }

    #[test]
    fn millisecond_times_with_column_map() {
        let sec = tmpfile("sec.csv");
        fs::write(&sec, "time,speed\n0,10\n0.1,10.3\n0.2,10.6\n").unwrap();
        let ms = tmpfile("ms.csv");
        fs::write(&ms, "t_ms;v\n0;10\n100;10.3\n200;10.6\n").unwrap();
        let a = load_trajectory(&sec, &ColumnMap::default(), &cfg()).unwrap();
        let map = ColumnMap {
            time: "t_ms".into(),
            speed: "v".into(),
            accel: None,
            time_scale: 1e-3,
        };
        let b = load_trajectory(&ms, &map, &cfg()).unwrap();
        fs::remove_file(&sec).ok();
        fs::remove_file(&ms).ok();
        assert_eq!(a.speeds, b.speeds);
        assert_eq!(a.accels, b.accels);
    }

    #[test]
    fn coarse_file_resamples_by_linear_interpolation() {
        let p = tmpfile("coarse.csv");
        fs::write(&p, "time,speed\n0,10\n0.5,11\n1.0,11\n").unwrap();
        let traj = load_trajectory(&p, &ColumnMap::default(), &cfg()).unwrap();
        fs::remove_file(&p).ok();
        assert_eq!(traj.len(), 11);
        // hand interpolation on the first segment: slope 2 m/s per s
        for k in 0..=5 {
            assert!(
                (traj.speeds[k] - (10.0 + 0.2 * k as f64)).abs() < 1e-9,
                "sample {k}"
            );
        }
        assert!((traj.speeds[7] - 11.0).abs() < 1e-9);
        traj.validate(&cfg()).unwrap();
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let p = tmpfile("bad.csv");
        fs::write(&p, "time,speed\n0,10\n0.1,-3\n").unwrap();
        let err = load_trajectory(&p, &ColumnMap::default(), &cfg()).unwrap_err();
        assert!(err.to_string().contains(":3"), "{err}");
        assert!(err.to_string().contains("negative speed"), "{err}");

        fs::write(&p, "time,speed\n0,10\n0.05,10\n0.04,10\n").unwrap();
        let err = load_trajectory(&p, &ColumnMap::default(), &cfg()).unwrap_err();
        assert!(err.to_string().contains("non-monotone"), "{err}");

        fs::write(&p, "when,speed\n0,10\n").unwrap();
        let err = load_trajectory(&p, &ColumnMap::default(), &cfg()).unwrap_err();
        assert!(matches!(err, ScenarioError::MissingColumn { ref name, .. } if name == "time"));
        fs::remove_file(&p).ok();
    }

    #[test]
    fn extremize_identity_and_scaling() {
        let base = sinusoid(200, 0.1, 15.0, 2.0, 12.0).unwrap();
        let same = extremize(&base, 1.0, -4.0, 3.0).unwrap();
        for t in 0..base.len() {
            assert!((same.speeds[t] - base.speeds[t]).abs() < 1e-9, "step {t}");
        }

        let constant_brake = LeadTrajectory {
            dt: 0.1,
            speeds: (0..50).map(|t| 20.0 - 2.0 * 0.1 * t as f64).collect(),
            accels: vec![-2.0; 50],
            source: SourceTag::Synthetic,
        };
        let doubled = extremize(&constant_brake, 2.0, -4.0, 4.0).unwrap();
        for t in 0..40 {
            assert!((doubled.accels[t] - (-4.0)).abs() < 1e-9, "step {t}");
        }
        assert!(matches!(
            extremize(&base, 0.5, -4.0, 3.0),
            Err(ScenarioError::BadGain(_))
        ));
    }

    #[test]
    fn extremize_respects_caps_and_consistency() {
        let base = brake_pulse(300, 0.1, 16.0, 3.0, 2.5, 1.0).unwrap();
        let hard = extremize(&base, 2.0, -4.0, 3.0).unwrap();
        hard.validate(&cfg()).unwrap();
        assert!(hard.accels.iter().all(|&a| (-4.0 - 1e-9..=3.0 + 1e-9).contains(&a)));
        assert!(hard.accels.iter().any(|&a| a < -3.0), "expected events beyond -3");
        assert_eq!(hard.source, SourceTag::Extremized);
    }

    #[test]
    fn synth_edge_cases() {
        let flat = sinusoid(100, 0.1, 15.0, 0.0, 10.0).unwrap();
        assert!(flat.speeds.iter().all(|&v| (v - 15.0).abs() < 1e-12));
        let none = brake_pulse(100, 0.1, 15.0, 0.0, 2.0, 1.0).unwrap();
        assert!(none.speeds.iter().all(|&v| (v - 15.0).abs() < 1e-12));
        assert!(sinusoid(100, 0.1, 5.0, 6.0, 10.0).is_err());
        assert!(brake_pulse(100, 0.1, 5.0, 3.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn synth_is_reproducible_and_valid() {
        let ranges = SynthRanges::default();
        for kind in [SynthKind::Sinusoid, SynthKind::BrakePulse, SynthKind::StopAndGo] {
            let mut r1 = Rng::new(42);
            let mut r2 = Rng::new(42);
            let a = synth_trajectory(kind, &ranges, 0.1, &mut r1).unwrap();
            let b = synth_trajectory(kind, &ranges, 0.1, &mut r2).unwrap();
            assert_eq!(a, b, "{kind} not reproducible");
            a.validate(&cfg()).unwrap();
            assert_eq!(a.len(), 500);
        }
    }

    #[test]
    fn equilibrium_spacings() {
        let c = cfg();
        let idm = IdmParams::default();

        // zero communication delay: plain constant-time-headway spacing
        let no_delay = SimConfig { tau_c: 0.0, ..c };
        let states =
            init_equilibrium(&PlatoonSpec::single_cav(10.0), &no_delay, &idm).unwrap();
        assert!((states[0].position - states[1].position - 24.0).abs() < 1e-12);

        // with delay the stationary spacing stretches by tau_c * v
        let states = init_equilibrium(&PlatoonSpec::single_cav(10.0), &c, &idm).unwrap();
        assert!((states[0].position - states[1].position - 27.0).abs() < 1e-12);

        // human-driven follower: car-following equilibrium net gap + length
        let hv = PlatoonSpec::new(vec![VehicleKind::Hv, VehicleKind::Hv], 15.0).unwrap();
        let states = init_equilibrium(&hv, &c, &idm).unwrap();
        let spacing = states[0].position - states[1].position;
        assert!((spacing - (23.872416878976118 + 4.0)).abs() < 1e-9);
        let net_gap = spacing - c.vehicle_length;
        assert!(idm_accel_raw(15.0, net_gap, 0.0, &idm).unwrap().abs() < 1e-10);

        // standstill
        let mixed = PlatoonSpec::new(
            vec![VehicleKind::Hv, VehicleKind::Cav, VehicleKind::Hv],
            0.0,
        )
        .unwrap();
        let states = init_equilibrium(&mixed, &c, &idm).unwrap();
        assert!((states[0].position - states[1].position - 4.0).abs() < 1e-12);
        assert!((states[1].position - states[2].position - 6.0).abs() < 1e-12);

        // no equilibrium at or above the desired speed
        let fast = PlatoonSpec::new(vec![VehicleKind::Hv, VehicleKind::Hv], 21.0).unwrap();
        assert!(init_equilibrium(&fast, &c, &idm).is_err());
    }

    #[test]
    fn penetration_counts_are_exact() {
        for n in [1usize, 7, 40, 100] {
            for rate in [0.0, 0.25, 0.4, 0.5, 0.77, 1.0] {
                let mut rng = Rng::new(9);
                let spec = penetration_platoon(n, rate, 15.0, &mut rng).unwrap();
                assert_eq!(spec.cav_count(), (rate * n as f64).round() as usize);
                assert_eq!(spec.n_followers(), n);
                assert_eq!(spec.kinds[0], VehicleKind::Hv);
            }
        }
        // reproducible positions
        let mut r1 = Rng::new(31);
        let mut r2 = Rng::new(31);
        let a = penetration_platoon(40, 0.4, 15.0, &mut r1).unwrap();
        let b = penetration_platoon(40, 0.4, 15.0, &mut r2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cav_count(), 16);
    }

    #[test]
    fn mixed_ten_pattern() {
        let spec = PlatoonSpec::mixed_ten(15.0);
        assert_eq!(spec.kinds.len(), 10);
        for (i, kind) in spec.kinds.iter().enumerate() {
            let expect = if [1, 5, 8].contains(&i) {
                VehicleKind::Cav
            } else {
                VehicleKind::Hv
            };
            assert_eq!(*kind, expect, "vehicle {i}");
        }
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = std::env::temp_dir().join(format!("perpl-man-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let man = dir.join("manifest.csv");
        fs::remove_file(&man).ok();
        let entries = vec![
            ManifestEntry {
                path: dir.join("a.csv"),
                split: Split::Train,
            },
            ManifestEntry {
                path: dir.join("b.csv"),
                split: Split::Extrapolation,
            },
        ];
        append_manifest(&man, &entries).unwrap();
        let loaded = load_manifest(&man).unwrap();
        assert_eq!(loaded, entries);
        fs::remove_file(&man).ok();
        fs::remove_dir(&dir).ok();
    }

    #[test]
    fn manifest_errors() {
        let p = tmpfile("man-bad.csv");
        fs::write(&p, "path,split\nfoo.csv,validation\n").unwrap();
        let err = load_manifest(&p).unwrap_err();
        assert!(err.to_string().contains("unknown split"), "{err}");
        fs::write(&p, "path,split\n").unwrap();
        assert!(load_manifest(&p).is_err());
        fs::remove_file(&p).ok();
    }
}
