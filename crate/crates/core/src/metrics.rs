//! Episode metrics, baseline comparison suites and figure-data export.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{ControlEnv, EnvConfig, EpisodeInit, EpisodeLog};
use crate::error::{Error, Result};
use crate::experts::Policy;
use crate::mobility::MobilitySeries;
use crate::sihr::DiseaseParams;

/// Daily retained-mobility ratio below which a day counts as stringent.
pub const STRINGENT_RATIO: f64 = 0.2;

/// Per-region averaged epidemic outcomes and mobility retention over the intervened period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_h: f64,
    pub max_h: f64,
    pub total_r: f64,
    pub q: f64,
    pub t20_city: usize,
    pub t20_region: usize,
    pub intervened_days: usize,
    pub reward: f64,
}

pub fn compute_metrics(log: &EpisodeLog) -> Result<MetricsReport> {
    let k = log.num_regions as f64;
    let (mut h_sum, mut max_h, mut n) = (0.0, 0.0f64, 0usize);
    let (mut allowed, mut demanded) = (0.0, 0.0);
    // day -> (allowed, demand) for the city and each region
    let mut days: BTreeMap<usize, (f64, f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for rec in log.intervened_hours() {
        let mean_h = rec.state.h.iter().sum::<f64>() / k;
        h_sum += mean_h;
        max_h = max_h.max(mean_h);
        n += 1;
        let a: f64 = rec.allowed_out.iter().sum();
        let d: f64 = rec.demand_out.iter().sum();
        allowed += a;
        demanded += d;
        let day = days
            .entry(rec.hour / 24)
            .or_insert_with(|| (0.0, 0.0, vec![0.0; log.num_regions], vec![0.0; log.num_regions]));
        day.0 += a;
        day.1 += d;
        for x in 0..log.num_regions {
            day.2[x] += rec.allowed_out[x];
            day.3[x] += rec.demand_out[x];
        }
    }
    if n == 0 || demanded <= 0.0 {
        return Err(Error::UndefinedMetric("q needs positive demand during the intervened period"));
    }
    let t20_city = days
        .values()
        .filter(|(a, d, _, _)| *d > 0.0 && a / d < STRINGENT_RATIO)
        .count();
    let t20_region = (0..log.num_regions)
        .map(|x| {
            days.values()
                .filter(|(_, _, a, d)| d[x] > 0.0 && a[x] / d[x] < STRINGENT_RATIO)
                .count()
        })
        .max()
        .unwrap_or(0);
    Ok(MetricsReport {
        mean_h: h_sum / n as f64,
        max_h,
        total_r: log.final_state.r.iter().sum::<f64>() / k,
        q: allowed / demanded,
        t20_city,
        t20_region,
        intervened_days: days.len(),
        reward: log.total_reward(),
    })
}

/// Runs one episode of `policy` from `init` and returns the log.
pub fn run_episode(env: &mut ControlEnv, policy: &mut dyn Policy, init: &EpisodeInit) -> Result<EpisodeLog> {
    policy.reset();
    let mut obs = env.reset(init)?;
    while !env.is_done() {
        let quota = policy.act(&obs, env)?;
        obs = env.step(&quota)?.observation;
    }
    Ok(env.log().clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub policy: String,
    pub t_start: usize,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

/// One row per policy, all from the same epidemic initialisation. A failing policy yields a row
/// with `error` set and the suite continues.
pub fn run_baseline_suite(
    series: &Arc<MobilitySeries>,
    disease: &DiseaseParams,
    env_config: &EnvConfig,
    init: &EpisodeInit,
    policies: &mut [Box<dyn Policy>],
) -> Result<(Vec<SuiteRow>, Vec<EpisodeLog>)> {
    let mut rows = Vec::with_capacity(policies.len());
    let mut logs = Vec::with_capacity(policies.len());
    for policy in policies.iter_mut() {
        let mut env = ControlEnv::new(Arc::clone(series), disease.clone(), env_config.clone())?;
        let outcome = run_episode(&mut env, policy.as_mut(), init).and_then(|log| {
            let m = compute_metrics(&log)?;
            Ok((log, m))
        });
        match outcome {
            Ok((log, metrics)) => {
                rows.push(SuiteRow {
                    policy: policy.name(),
                    t_start: env_config.t_start,
                    metrics: Some(metrics),
                    error: None,
                });
                logs.push(log);
            }
            Err(e) => {
                log::warn!("policy {} failed: {e}", policy.name());
                rows.push(SuiteRow {
                    policy: policy.name(),
                    t_start: env_config.t_start,
                    metrics: None,
                    error: Some(e.to_string()),
                });
                logs.push(env.into_log());
            }
        }
    }
    Ok((rows, logs))
}

pub const TABLE_HEADER: [&str; 10] = [
    "policy",
    "t_start",
    "mean_h",
    "max_h",
    "total_r",
    "q",
    "t20_city",
    "t20_region",
    "reward",
    "status",
];

pub fn write_table_csv(rows: &[SuiteRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TABLE_HEADER)?;
    for row in rows {
        let mut rec = vec![row.policy.clone(), row.t_start.to_string()];
        match &row.metrics {
            Some(m) => {
                rec.extend([
                    m.mean_h.to_string(),
                    m.max_h.to_string(),
                    m.total_r.to_string(),
                    m.q.to_string(),
                    m.t20_city.to_string(),
                    m.t20_region.to_string(),
                    m.reward.to_string(),
                    "ok".to_string(),
                ]);
            }
            None => {
                rec.extend(std::iter::repeat_n(String::new(), 7));
                rec.push(format!("failed: {}", row.error.as_deref().unwrap_or("")));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the hospitalized curve, per-period regional quota grid and quota-rate histogram.
pub fn export_figure_data(log: &EpisodeLog, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let k = log.num_regions;

    let curve_path = dir.join("h_curve.csv");
    let mut curve = csv::Writer::from_path(&curve_path)?;
    curve.write_record(["hour", "intervened", "mean_h", "total_h"])?;
    let mut emit = |hour: usize, intervened: bool, h: &[f64]| -> Result<()> {
        let total: f64 = h.iter().sum();
        curve.write_record([
            hour.to_string(),
            u8::from(intervened).to_string(),
            (total / k as f64).to_string(),
            total.to_string(),
        ])?;
        Ok(())
    };
    for rec in &log.hours {
        emit(rec.hour, rec.intervened, &rec.state.h)?;
    }
    let end_hour = log.hours.last().map_or(0, |r| r.hour + 1);
    emit(end_hour, log.hours.last().is_some_and(|r| r.intervened), &log.final_state.h)?;
    curve.flush()?;

    // Regional quota rate per control period.
    let grid_path = dir.join("quota_grid.csv");
    let mut grid = csv::Writer::from_path(&grid_path)?;
    grid.write_record(["period", "hour", "region", "quota_rate"])?;
    let mut rates = Vec::new();
    let intervened: Vec<_> = log.intervened_hours().collect();
    for (period, chunk) in intervened.chunks(log.control_period).enumerate() {
        for x in 0..k {
            let a: f64 = chunk.iter().map(|r| r.allowed_out[x]).sum();
            let d: f64 = chunk.iter().map(|r| r.demand_out[x]).sum();
            let rate = if d > 0.0 { Some(a / d) } else { None };
            rates.extend(rate);
            grid.write_record([
                period.to_string(),
                chunk[0].hour.to_string(),
                x.to_string(),
                rate.map_or_else(String::new, |r| r.to_string()),
            ])?;
        }
    }
    grid.flush()?;

    let hist_path = dir.join("quota_histogram.csv");
    let mut hist = csv::Writer::from_path(&hist_path)?;
    hist.write_record(["bin_lower", "bin_upper", "count"])?;
    const BINS: usize = 10;
    let mut counts = [0usize; BINS];
    for r in rates {
        counts[((r * BINS as f64) as usize).min(BINS - 1)] += 1;
    }
    for (b, c) in counts.iter().enumerate() {
        hist.write_record([
            (b as f64 / BINS as f64).to_string(),
            ((b + 1) as f64 / BINS as f64).to_string(),
            c.to_string(),
        ])?;
    }
    hist.flush()?;
    Ok(vec![curve_path, grid_path, hist_path])
}

/// Episode log as `hour,region,S,I,H,R,demand_out,allowed_out,L`.
pub fn write_episode_csv(log: &EpisodeLog, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "hour,region,S,I,H,R,demand_out,allowed_out,L")?;
    for rec in &log.hours {
        for x in 0..log.num_regions {
            let s = &rec.state;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                rec.hour, x, s.s[x], s.i[x], s.h[x], s.r[x], rec.demand_out[x], rec.allowed_out[x], rec.loss[x]
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-step rewards as `step,hour,reward,penalty`.
pub fn write_rewards_csv(log: &EpisodeLog, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "step,hour,reward,penalty")?;
    for s in &log.steps {
        writeln!(w, "{},{},{},{}", s.step, s.hour, s.reward, s.penalty)?;
    }
    w.flush()?;
    Ok(())
}

/// Epidemic trajectory as `hour,region,S,I,H,R`, final state included.
pub fn write_trajectory_csv(log: &EpisodeLog, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "hour,region,S,I,H,R")?;
    let end = log.hours.last().map_or(0, |r| r.hour + 1);
    let states = log
        .hours
        .iter()
        .map(|r| (r.hour, &r.state))
        .chain(std::iter::once((end, &log.final_state)));
    for (hour, s) in states {
        for x in 0..log.num_regions {
            writeln!(w, "{hour},{x},{},{},{},{}", s.s[x], s.i[x], s.h[x], s.r[x])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::HourRecord;
    use crate::sihr::EpidemicState;

    fn hour(hour: usize, demand: [f64; 2], allowed: [f64; 2], h: [f64; 2]) -> HourRecord {
        let mut state = EpidemicState::susceptible(&[100.0, 100.0]);
        state.h = h.to_vec();
        HourRecord {
            hour,
            intervened: true,
            state,
            demand_out: demand.to_vec(),
            allowed_out: allowed.to_vec(),
            loss: vec![0.0; 2],
            infection_cost: 0.0,
            mobility_cost: 0.0,
        }
    }

    fn log(hours: Vec<HourRecord>) -> EpisodeLog {
        EpisodeLog {
            num_regions: 2,
            control_period: 4,
            t_start_hour: 0,
            mean_outflow: vec![1.0; 2],
            hours,
            steps: vec![],
            final_state: EpidemicState::susceptible(&[100.0, 100.0]),
            final_loss: vec![0.0; 2],
            termination: None,
        }
    }

    #[test]
    fn unrestricted_log() {
        let l = log((0..48).map(|h| hour(h, [3.0, 5.0], [3.0, 5.0], [0.0, 0.0])).collect());
        let m = compute_metrics(&l).unwrap();
        assert_eq!(m.q, 1.0);
        assert_eq!((m.t20_city, m.t20_region), (0, 0));
    }

    #[test]
    fn full_lockdown_log() {
        let l = log((0..240).map(|h| hour(h, [3.0, 5.0], [0.0, 0.0], [1.0, 3.0])).collect());
        let m = compute_metrics(&l).unwrap();
        assert_eq!(m.q, 0.0);
        assert_eq!((m.t20_city, m.t20_region), (10, 10));
        assert_eq!(m.mean_h, 2.0);
        assert_eq!(m.max_h, 2.0);
    }

    #[test]
    fn half_demand_on_day_one() {
        // Day 0: region 0 demands 2/h, region 1 demands 6/h; half allowed. Day 1: all allowed.
        let mut hours: Vec<_> = (0..24).map(|h| hour(h, [2.0, 6.0], [1.0, 3.0], [0.0, 0.0])).collect();
        hours.extend((24..48).map(|h| hour(h, [2.0, 6.0], [2.0, 6.0], [0.0, 0.0])));
        let m = compute_metrics(&log(hours)).unwrap();
        let direct = (24.0 * 4.0 + 24.0 * 8.0) / (48.0 * 8.0);
        assert!((m.q - direct).abs() < 1e-15);
        assert_eq!(m.t20_city, 0);
        assert_eq!(m.intervened_days, 2);
    }

    #[test]
    fn region_stringency_uses_worst_region() {
        let hours = (0..72)
            .map(|h| hour(h, [10.0, 10.0], if h < 48 { [1.0, 10.0] } else { [10.0, 10.0] }, [0.0, 0.0]))
            .collect();
        let m = compute_metrics(&log(hours)).unwrap();
        assert_eq!(m.t20_region, 2);
        assert_eq!(m.t20_city, 0);
    }

    #[test]
    fn zero_demand_is_undefined() {
        let l = log((0..4).map(|h| hour(h, [0.0, 0.0], [0.0, 0.0], [0.0, 0.0])).collect());
        assert!(matches!(compute_metrics(&l), Err(Error::UndefinedMetric(_))));
    }
}
