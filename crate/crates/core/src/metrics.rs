//! Quantitative evaluation of an episode trace: headway tracking error,
//! oscillation damping along the platoon, comfort cost and barrier
//! activation rate.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dynamics::SimConfig;
use crate::engine::EpisodeTrace;
use crate::scenarios::VehicleKind;
use crate::LOW_SPEED_CUTOFF;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trace has no timesteps")]
    EmptyTrace,
    #[error("vehicle index {vehicle} out of range ({n_vehicles} vehicles)")]
    BadVehicle { vehicle: usize, n_vehicles: usize },
}

fn check_vehicle(trace: &EpisodeTrace, n: usize) -> Result<(), MetricsError> {
    if trace.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    if n == 0 || n >= trace.n_vehicles() {
        return Err(MetricsError::BadVehicle {
            vehicle: n,
            n_vehicles: trace.n_vehicles(),
        });
    }
    Ok(())
}

/// Root-mean-square deviation of the realized time headway from the desired
/// headway, in seconds. Timesteps where the vehicle moves slower than the
/// low-speed cutoff are excluded; `Ok(None)` marks a trace where every step
/// was excluded.
pub fn headway_rmse(
    trace: &EpisodeTrace,
    vehicle: usize,
    cfg: &SimConfig<f64>,
) -> Result<Option<f64>, MetricsError> {
    check_vehicle(trace, vehicle)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..trace.len() {
        let v = trace.speed[vehicle][t];
        if v < LOW_SPEED_CUTOFF {
            continue;
        }
        let headway = (trace.position[vehicle - 1][t] - trace.position[vehicle][t] - cfg.d0) / v;
        let dev = headway - cfg.h_d;
        sum += dev * dev;
        count += 1;
    }
    if count == 0 {
        return Ok(None);
    }
    Ok(Some((sum / count as f64).sqrt()))
}

/// l2 acceleration energy of vehicle `n` relative to the lead vehicle.
/// `Ok(None)` when the lead signal carries no energy.
pub fn damping_ratio(trace: &EpisodeTrace, vehicle: usize) -> Result<Option<f64>, MetricsError> {
    check_vehicle(trace, vehicle)?;
    let lead_energy: f64 = trace.accel[0].iter().map(|a| a * a).sum();
    if lead_energy <= 0.0 {
        return Ok(None);
    }
    let own_energy: f64 = trace.accel[vehicle].iter().map(|a| a * a).sum();
    Ok(Some((own_energy / lead_energy).sqrt()))
}

/// Time-mean of `alpha * a^2`.
pub fn comfort_cost(trace: &EpisodeTrace, vehicle: usize, alpha: f64) -> Result<f64, MetricsError> {
    check_vehicle(trace, vehicle)?;
    let sum: f64 = trace.accel[vehicle].iter().map(|a| alpha * a * a).sum();
    Ok(sum / trace.len() as f64)
}

/// Percentage of timesteps on which the safety barrier altered the action.
pub fn barrier_activation_pct(trace: &EpisodeTrace, vehicle: usize) -> Result<f64, MetricsError> {
    check_vehicle(trace, vehicle)?;
    let on = trace.barrier[vehicle].iter().filter(|&&b| b).count();
    Ok(100.0 * on as f64 / trace.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleMetrics {
    pub vehicle: usize,
    pub kind: VehicleKind,
    pub headway_rmse: Option<f64>,
    pub damping_ratio: Option<f64>,
    pub comfort: f64,
    pub barrier_pct: f64,
}

/// Per-follower metrics plus platoon-level aggregates. Aggregate means skip
/// undefined entries; the barrier percentage aggregates over the automated
/// vehicles only (human-driven vehicles never carry a barrier).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_vehicle: Vec<VehicleMetrics>,
    pub mean_headway_rmse: Option<f64>,
    pub mean_damping_ratio: Option<f64>,
    pub mean_comfort: f64,
    pub mean_barrier_pct: Option<f64>,
    pub collision: bool,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        None
    } else {
        Some(sum / n as f64)
    }
}

pub fn report(
    trace: &EpisodeTrace,
    cfg: &SimConfig<f64>,
    alpha: f64,
) -> Result<MetricsReport, MetricsError> {
    let mut per_vehicle = Vec::new();
    for n in 1..trace.n_vehicles() {
        per_vehicle.push(VehicleMetrics {
            vehicle: n,
            kind: trace.kinds[n],
            headway_rmse: headway_rmse(trace, n, cfg)?,
            damping_ratio: damping_ratio(trace, n)?,
            comfort: comfort_cost(trace, n, alpha)?,
            barrier_pct: barrier_activation_pct(trace, n)?,
        });
    }
    let mean_headway_rmse = mean_defined(per_vehicle.iter().map(|m| m.headway_rmse));
    let mean_damping_ratio = mean_defined(per_vehicle.iter().map(|m| m.damping_ratio));
    let mean_comfort =
        per_vehicle.iter().map(|m| m.comfort).sum::<f64>() / per_vehicle.len() as f64;
    let mean_barrier_pct = mean_defined(
        per_vehicle
            .iter()
            .map(|m| (m.kind == VehicleKind::Cav).then_some(m.barrier_pct)),
    );
    Ok(MetricsReport {
        per_vehicle,
        mean_headway_rmse,
        mean_damping_ratio,
        mean_comfort,
        mean_barrier_pct,
        collision: trace.collision,
    })
}

fn field(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => "NA".into(),
    }
}

/// One record per follower plus an aggregate row.
pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut out = String::from("vehicle,kind,headway_rmse_s,damping_ratio,comfort,barrier_pct\n");
    for m in &report.per_vehicle {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            m.vehicle,
            m.kind,
            field(m.headway_rmse),
            field(m.damping_ratio),
            m.comfort,
            m.barrier_pct
        );
    }
    let _ = writeln!(
        out,
        "aggregate,-,{},{},{},{}",
        field(report.mean_headway_rmse),
        field(report.mean_damping_ratio),
        report.mean_comfort,
        field(report.mean_barrier_pct)
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EpisodeTrace;

    fn blank(kinds: Vec<VehicleKind>, steps: usize) -> EpisodeTrace {
        EpisodeTrace::for_tests(kinds, steps)
    }

    fn cfg() -> SimConfig<f64> {
        SimConfig::default()
    }

    #[test]
    fn constant_headway_deviation() {
        // actual headway pinned at 2.5 s while the desired is 2 s
        let mut tr = blank(vec![VehicleKind::Hv, VehicleKind::Cav], 40);
        let v = 10.0;
        for t in 0..40 {
            tr.speed[0][t] = v;
            tr.speed[1][t] = v;
            tr.position[1][t] = v * 0.1 * t as f64;
            tr.position[0][t] = tr.position[1][t] + cfg().d0 + 2.5 * v;
        }
        let rmse = headway_rmse(&tr, 1, &cfg()).unwrap().unwrap();
        assert!((rmse - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exact_tracking_is_zero() {
        let mut tr = blank(vec![VehicleKind::Hv, VehicleKind::Cav], 25);
        let v = 14.0;
        for t in 0..25 {
            tr.speed[0][t] = v;
            tr.speed[1][t] = v;
            tr.position[1][t] = 3.0 + v * 0.1 * t as f64;
            tr.position[0][t] = tr.position[1][t] + cfg().d0 + 2.0 * v;
        }
        assert!(headway_rmse(&tr, 1, &cfg()).unwrap().unwrap() < 1e-12);
    }

    #[test]
    fn three_step_manual_recomputation() {
        // hand-built trace, spreadsheet-style recomputation frozen below
        let mut tr = blank(vec![VehicleKind::Hv, VehicleKind::Cav], 3);
        tr.position[0] = vec![30.0, 31.0, 32.2];
        tr.position[1] = vec![0.0, 1.0, 2.0];
        tr.speed[1] = vec![10.0, 10.0, 12.0];
        tr.speed[0] = vec![10.0, 11.0, 12.0];
        // headways: (30-0-4)/10 = 2.6, (31-1-4)/10 = 2.6,
        // (32.2-2-4)/12 = 2.18333...; deviations 0.6, 0.6, 0.18333...
        let expected = ((0.6f64.powi(2) + 0.6f64.powi(2) + (2.183333333333333f64 - 2.0).powi(2))
            / 3.0)
            .sqrt();
        let rmse = headway_rmse(&tr, 1, &cfg()).unwrap().unwrap();
        assert!((rmse - expected).abs() < 1e-12);
        assert!((rmse - 0.501202258278735).abs() < 1e-12);
    }

    #[test]
    fn low_speed_steps_are_excluded() {
        let mut tr = blank(vec![VehicleKind::Hv, VehicleKind::Cav], 2);
        tr.position[0] = vec![30.0, 30.0];
        tr.position[1] = vec![0.0, 0.0];
        tr.speed[1] = vec![10.0, 0.2]; // second step below cutoff
        let rmse = headway_rmse(&tr, 1, &cfg()).unwrap().unwrap();
        assert!((rmse - 0.6).abs() < 1e-12);

        tr.speed[1] = vec![0.3, 0.2];
        assert_eq!(headway_rmse(&tr, 1, &cfg()).unwrap(), None);
    }

    #[test]
    fn damping_ratio_examples() {
        let mut tr = blank(vec![VehicleKind::Hv, VehicleKind::Cav], 4);
        tr.accel[0] = vec![1.0, -2.0, 0.5, 0.0];
        tr.accel[1] = tr.accel[0].clone();
        assert_eq!(damping_ratio(&tr, 1).unwrap(), Some(1.0));
        tr.accel[1] = tr.accel[0].iter().map(|a| 0.5 * a).collect();
        let d = damping_ratio(&tr, 1).unwrap().unwrap();
        assert!((d - 0.5).abs() < 1e-12);

        tr.accel[0] = vec![0.0; 4];
        assert_eq!(damping_ratio(&tr, 1).unwrap(), None);
    }

    #[test]
    fn damping_ratio_matches_two_pass_norms() {
        let mut rng = crate::rng::Rng::new(21);
        let mut tr = blank(vec![VehicleKind::Hv, VehicleKind::Cav], 64);
        for t in 0..64 {
            tr.accel[0][t] = rng.range_f64(-3.0, 3.0);
            tr.accel[1][t] = rng.range_f64(-3.0, 3.0);
        }
        let num = tr.accel[1].iter().map(|a| a * a).sum::<f64>().sqrt();
        let den = tr.accel[0].iter().map(|a| a * a).sum::<f64>().sqrt();
        let d = damping_ratio(&tr, 1).unwrap().unwrap();
        assert!((d - num / den).abs() < 1e-12);
    }

    #[test]
    fn damping_scales_with_signal() {
        let mut rng = crate::rng::Rng::new(22);
        for _ in 0..50 {
            let c = rng.range_f64(-4.0, 4.0);
            let mut tr = blank(vec![VehicleKind::Hv, VehicleKind::Cav], 16);
            for t in 0..16 {
                tr.accel[0][t] = rng.range_f64(-2.0, 2.0);
                tr.accel[1][t] = c * tr.accel[0][t];
            }
            let d = damping_ratio(&tr, 1).unwrap().unwrap();
            assert!((d - c.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn rmse_invariant_under_rigid_translation() {
        let mut rng = crate::rng::Rng::new(23);
        let mut tr = blank(vec![VehicleKind::Hv, VehicleKind::Cav], 30);
        for t in 0..30 {
            tr.speed[1][t] = rng.range_f64(2.0, 20.0);
            tr.position[1][t] = rng.range_f64(0.0, 400.0);
            tr.position[0][t] = tr.position[1][t] + rng.range_f64(6.0, 80.0);
        }
        let base = headway_rmse(&tr, 1, &cfg()).unwrap().unwrap();
        for row in tr.position.iter_mut() {
            for p in row.iter_mut() {
                *p += 12345.0;
            }
        }
        let shifted = headway_rmse(&tr, 1, &cfg()).unwrap().unwrap();
        assert!((base - shifted).abs() < 1e-9);
    }

    #[test]
    fn comfort_examples() {
        let mut tr = blank(vec![VehicleKind::Hv, VehicleKind::Cav], 2);
        assert_eq!(comfort_cost(&tr, 1, 1.0).unwrap(), 0.0);
        tr.accel[1] = vec![1.0, 2.0];
        assert!((comfort_cost(&tr, 1, 1.0).unwrap() - 2.5).abs() < 1e-12);
        assert!((comfort_cost(&tr, 1, 2.0).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn barrier_percentage_counting() {
        let mut tr = blank(vec![VehicleKind::Hv, VehicleKind::Cav], 480);
        assert_eq!(barrier_activation_pct(&tr, 1).unwrap(), 0.0);
        for t in 0..480 {
            tr.barrier[1][t] = true;
        }
        assert_eq!(barrier_activation_pct(&tr, 1).unwrap(), 100.0);
        for t in 0..480 {
            tr.barrier[1][t] = t < 38;
        }
        let pct = barrier_activation_pct(&tr, 1).unwrap();
        assert!((pct - 7.916666666666667).abs() < 1e-12);
    }

    #[test]
    fn empty_trace_rejected() {
        let tr = blank(vec![VehicleKind::Hv, VehicleKind::Cav], 0);
        assert_eq!(headway_rmse(&tr, 1, &cfg()), Err(MetricsError::EmptyTrace));
    }

    #[test]
    fn report_aggregates_and_csv() {
        let mut tr = blank(
            vec![VehicleKind::Hv, VehicleKind::Cav, VehicleKind::Hv],
            10,
        );
        for t in 0..10 {
            tr.accel[0][t] = 1.0;
            tr.position[0][t] = 0.0;
            for n in 1..3 {
                tr.speed[n][t] = 10.0;
                tr.position[n][t] = -30.0 * n as f64;
                tr.accel[n][t] = 0.5;
            }
        }
        let rep = report(&tr, &cfg(), 1.0).unwrap();
        assert_eq!(rep.per_vehicle.len(), 2);
        // recomputation equality: aggregate equals mean of the rows
        let mean = (rep.per_vehicle[0].damping_ratio.unwrap()
            + rep.per_vehicle[1].damping_ratio.unwrap())
            / 2.0;
        assert!((rep.mean_damping_ratio.unwrap() - mean).abs() < 1e-12);
        // barrier aggregate covers the single automated vehicle only
        assert_eq!(rep.mean_barrier_pct, Some(0.0));
        let csv = report_to_csv(&rep);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("vehicle,kind,"));
        assert!(csv.contains("aggregate"));
    }
}
