//! SIHR metapopulation dynamics over controlled OD flows.
//!
//! Each hour is split into a mobility sub-step (people in S, I and R move along the allowed
//! flows, H stays put) and an infection sub-step in which the staying group and the arriving
//! group of every region mix separately.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::OdMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpidemicState {
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub h: Vec<f64>,
    pub r: Vec<f64>,
}

impl EpidemicState {
    /// Everyone susceptible.
    pub fn susceptible(population: &[f64]) -> Self {
        let k = population.len();
        Self {
            s: population.to_vec(),
            i: vec![0.0; k],
            h: vec![0.0; k],
            r: vec![0.0; k],
        }
    }

    pub fn num_regions(&self) -> usize {
        self.s.len()
    }

    pub fn total(&self, region: usize) -> f64 {
        self.s[region] + self.i[region] + self.h[region] + self.r[region]
    }

    /// People allowed to move: `S + I + R`.
    pub fn movable(&self, region: usize) -> f64 {
        self.s[region] + self.i[region] + self.r[region]
    }

    pub fn movable_all(&self) -> Vec<f64> {
        (0..self.num_regions()).map(|r| self.movable(r)).collect()
    }

    pub fn city_population(&self) -> f64 {
        (0..self.num_regions()).map(|r| self.total(r)).sum()
    }

    pub fn city_infected(&self) -> f64 {
        self.i.iter().sum()
    }

    pub fn city_hospitalized(&self) -> f64 {
        self.h.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.s.len();
        if [self.i.len(), self.h.len(), self.r.len()].iter().any(|&n| n != k) {
            return Err(Error::State("compartment vectors differ in length".into()));
        }
        let all = self.s.iter().chain(&self.i).chain(&self.h).chain(&self.r);
        if let Some(v) = all.into_iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::State(format!("compartment value {v} is negative or non-finite")));
        }
        Ok(())
    }
}

/// Per-hour rates shared by all regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiseaseParams {
    pub beta_s: f64,
    pub beta_m: f64,
    pub gamma: f64,
    pub theta: f64,
    /// Whether the immobile hospitalized count towards the staying-group denominator.
    pub staying_group_includes_hospitalized: bool,
}

impl Default for DiseaseParams {
    fn default() -> Self {
        Self {
            beta_s: 0.1 / 24.0,
            beta_m: 3.0 / 24.0,
            gamma: 0.3 / 24.0,
            theta: 0.3 / 24.0,
            staying_group_includes_hospitalized: true,
        }
    }
}

impl DiseaseParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta_s", self.beta_s),
            ("beta_m", self.beta_m),
            ("gamma", self.gamma),
            ("theta", self.theta),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParams(format!("{name} = {v} outside [0, 1)")));
            }
        }
        if self.beta_m < self.beta_s {
            return Err(Error::InvalidParams("beta_m must be at least beta_s".into()));
        }
        Ok(())
    }
}

/// Movable compartments of one population group.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
}

impl Group {
    fn zeros(k: usize) -> Self {
        Self {
            s: vec![0.0; k],
            i: vec![0.0; k],
            r: vec![0.0; k],
        }
    }

    pub fn total(&self, region: usize) -> f64 {
        self.s[region] + self.i[region] + self.r[region]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MobilityOutcome {
    /// People who stayed in their region.
    pub stay: Group,
    /// People who arrived in each region this hour.
    pub arrivals: Group,
    /// Hospitalized never move.
    pub hospitalized: Vec<f64>,
    /// Set when some region was asked to send more people than it held.
    pub clipped: bool,
}

impl MobilityOutcome {
    /// Post-movement state `Ê = E^s + E^m`.
    pub fn mixed(&self) -> EpidemicState {
        let k = self.hospitalized.len();
        let add = |a: &[f64], b: &[f64]| (0..k).map(|x| a[x] + b[x]).collect::<Vec<_>>();
        EpidemicState {
            s: add(&self.stay.s, &self.arrivals.s),
            i: add(&self.stay.i, &self.arrivals.i),
            h: self.hospitalized.clone(),
            r: add(&self.stay.r, &self.arrivals.r),
        }
    }
}

/// Fraction of region `i`'s movable population sent along each edge, after clipping.
///
/// Returns `(fractions, clipped)`; a region with no movable population sends nobody.
pub fn departure_fractions(flows: &OdMatrix, movable: &[f64]) -> (OdMatrix, bool) {
    let k = movable.len();
    let mut frac = OdMatrix::zeros((k, k));
    let mut clipped = false;
    for i in 0..k {
        let row = flows.row(i);
        let out: f64 = row.sum();
        if out <= 0.0 || movable[i] <= 0.0 {
            continue;
        }
        let denom = if out > movable[i] {
            clipped = true;
            out
        } else {
            movable[i]
        };
        for (f, m) in frac.row_mut(i).iter_mut().zip(row) {
            *f = m / denom;
        }
    }
    (frac, clipped)
}

/// Moves S, I and R along `flows` (persons/hour). Infeasible rows are rescaled so the region
/// sends exactly its movable population.
pub fn mobility_substep(state: &EpidemicState, flows: &OdMatrix) -> Result<MobilityOutcome> {
    let k = state.num_regions();
    if flows.dim() != (k, k) {
        return Err(Error::dims(format!("({k}, {k})"), format!("{:?}", flows.dim())));
    }
    let movable = state.movable_all();
    let (frac, clipped) = departure_fractions(flows, &movable);
    if clipped {
        log::debug!("mobility sub-step clipped an infeasible outflow");
    }
    let mut stay = Group::zeros(k);
    let mut arrivals = Group::zeros(k);
    for i in 0..k {
        let mut leaving = 0.0;
        for j in 0..k {
            let f = frac[[i, j]];
            if f == 0.0 {
                continue;
            }
            leaving += f;
            arrivals.s[j] += f * state.s[i];
            arrivals.i[j] += f * state.i[i];
            arrivals.r[j] += f * state.r[i];
        }
        let keep = (1.0 - leaving).max(0.0);
        stay.s[i] = keep * state.s[i];
        stay.i[i] = keep * state.i[i];
        stay.r[i] = keep * state.r[i];
    }
    Ok(MobilityOutcome {
        stay,
        arrivals,
        hospitalized: state.h.clone(),
        clipped,
    })
}

fn mixing(beta: f64, s: f64, i: f64, n: f64) -> f64 {
    if n > 0.0 {
        beta * s * i / n
    } else {
        0.0
    }
}

/// New infections per region from the staying and arriving groups.
pub fn new_infections(mob: &MobilityOutcome, params: &DiseaseParams) -> Vec<f64> {
    (0..mob.hospitalized.len())
        .map(|x| {
            let mut n_stay = mob.stay.total(x);
            if params.staying_group_includes_hospitalized {
                n_stay += mob.hospitalized[x];
            }
            mixing(params.beta_s, mob.stay.s[x], mob.stay.i[x], n_stay)
                + mixing(
                    params.beta_m,
                    mob.arrivals.s[x],
                    mob.arrivals.i[x],
                    mob.arrivals.total(x),
                )
        })
        .collect()
}

pub fn infection_substep(mob: &MobilityOutcome, params: &DiseaseParams) -> Result<EpidemicState> {
    let hat = mob.mixed();
    let infections = new_infections(mob, params);
    let k = hat.num_regions();
    let mut next = EpidemicState::susceptible(&vec![0.0; k]);
    for x in 0..k {
        let to_hospital = params.gamma * hat.i[x];
        let recovering = params.theta * hat.h[x];
        next.s[x] = hat.s[x] - infections[x];
        next.i[x] = hat.i[x] + infections[x] - to_hospital;
        next.h[x] = hat.h[x] + to_hospital - recovering;
        next.r[x] = hat.r[x] + recovering;
    }
    next.validate()?;
    Ok(next)
}

/// One hour: mobility then infection. Returns the new state and whether flows were clipped.
pub fn step_hour_flagged(
    state: &EpidemicState,
    flows: &OdMatrix,
    params: &DiseaseParams,
) -> Result<(EpidemicState, bool)> {
    let mob = mobility_substep(state, flows)?;
    let next = infection_substep(&mob, params)?;
    Ok((next, mob.clipped))
}

pub fn step_hour(state: &EpidemicState, flows: &OdMatrix, params: &DiseaseParams) -> Result<EpidemicState> {
    step_hour_flagged(state, flows, params).map(|(s, _)| s)
}

/// `R0 = (p_move β_m + (1 − p_move) β_s) / γ`.
pub fn estimate_r0(params: &DiseaseParams, p_move: f64) -> Result<f64> {
    if params.gamma == 0.0 {
        return Err(Error::DivisionByZero("gamma is zero"));
    }
    let beta_bar = p_move * params.beta_m + (1.0 - p_move) * params.beta_s;
    Ok(beta_bar / params.gamma)
}

/// What an observer sees: S and I cannot be told apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibleState {
    pub si: Vec<f64>,
    pub h: Vec<f64>,
    pub r: Vec<f64>,
}

/// Hour-over-hour change of the visible state.
pub type VisibleDelta = VisibleState;

impl VisibleState {
    pub fn zeros(k: usize) -> Self {
        Self {
            si: vec![0.0; k],
            h: vec![0.0; k],
            r: vec![0.0; k],
        }
    }

    pub fn num_regions(&self) -> usize {
        self.si.len()
    }

    /// Movable population `S + I + R`.
    pub fn movable(&self) -> Vec<f64> {
        self.si.iter().zip(&self.r).map(|(a, b)| a + b).collect()
    }
}

pub fn visible(state: &EpidemicState) -> VisibleState {
    VisibleState {
        si: state.s.iter().zip(&state.i).map(|(s, i)| s + i).collect(),
        h: state.h.clone(),
        r: state.r.clone(),
    }
}

pub fn visible_delta(current: &VisibleState, previous: &VisibleState) -> VisibleDelta {
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect();
    VisibleState {
        si: diff(&current.si, &previous.si),
        h: diff(&current.h, &previous.h),
        r: diff(&current.r, &previous.r),
    }
}

/// Moves `count` people from S to I in `region`.
pub fn seed_infection(state: &EpidemicState, region: usize, count: f64) -> Result<EpidemicState> {
    if region >= state.num_regions() {
        return Err(Error::dims(format!("region < {}", state.num_regions()), region));
    }
    if !(count >= 0.0) || count > state.s[region] {
        return Err(Error::State(format!(
            "cannot seed {count} infections into region {region} with {} susceptible",
            state.s[region]
        )));
    }
    let mut next = state.clone();
    next.s[region] -= count;
    next.i[region] += count;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn state(rows: &[[f64; 4]]) -> EpidemicState {
        EpidemicState {
            s: rows.iter().map(|r| r[0]).collect(),
            i: rows.iter().map(|r| r[1]).collect(),
            h: rows.iter().map(|r| r[2]).collect(),
            r: rows.iter().map(|r| r[3]).collect(),
        }
    }

    #[test]
    fn no_flow_leaves_state_unchanged() {
        let e = state(&[[100.0, 3.0, 2.0, 1.0], [50.0, 0.0, 0.0, 7.0]]);
        let mob = mobility_substep(&e, &OdMatrix::zeros((2, 2))).unwrap();
        assert_eq!(mob.mixed(), e);
        assert!(!mob.clipped);
    }

    #[test]
    fn two_region_transport_hand_case() {
        let e = state(&[[100.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]);
        let mob = mobility_substep(&e, &array![[0.0, 10.0], [0.0, 0.0]]).unwrap();
        assert_eq!(mob.stay.s, vec![90.0, 0.0]);
        assert_eq!(mob.arrivals.s, vec![0.0, 10.0]);
        assert_eq!(mob.arrivals.i, vec![0.0, 0.0]);
    }

    #[test]
    fn hospitalized_do_not_move() {
        let e = state(&[[0.0, 0.0, 50.0, 0.0], [10.0, 0.0, 0.0, 0.0]]);
        let mob = mobility_substep(&e, &array![[0.0, 30.0], [5.0, 0.0]]).unwrap();
        assert_eq!(mob.hospitalized[0], 50.0);
        assert_eq!(mob.mixed().h, vec![50.0, 0.0]);
        // Region 0 has nobody movable, so its demand is dropped.
        assert_eq!(mob.arrivals.s[1], 0.0);
    }

    #[test]
    fn infeasible_outflow_is_clipped() {
        let e = state(&[[10.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]);
        let mob = mobility_substep(&e, &array![[0.0, 40.0], [0.0, 0.0]]).unwrap();
        assert!(mob.clipped);
        assert_eq!(mob.stay.s[0], 0.0);
        assert_eq!(mob.arrivals.s[1], 10.0);
    }

    #[test]
    fn staying_infection_hand_case() {
        let params = DiseaseParams {
            beta_s: 0.3,
            beta_m: 0.5,
            gamma: 0.0,
            theta: 0.0,
            staying_group_includes_hospitalized: true,
        };
        let e = state(&[[90.0, 10.0, 0.0, 0.0]]);
        let mob = mobility_substep(&e, &OdMatrix::zeros((1, 1))).unwrap();
        let next = infection_substep(&mob, &params).unwrap();
        assert!((next.s[0] - 87.3).abs() < 1e-12);
        assert!((next.i[0] - 12.7).abs() < 1e-12);
    }

    #[test]
    fn hospitalization_hand_case() {
        let params = DiseaseParams {
            beta_s: 0.0,
            beta_m: 0.0,
            gamma: 0.0125,
            theta: 0.0,
            staying_group_includes_hospitalized: true,
        };
        let e = state(&[[0.0, 8.0, 0.0, 0.0]]);
        let next = step_hour(&e, &OdMatrix::zeros((1, 1)), &params).unwrap();
        assert!((next.h[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn without_sources_only_h_and_r_flow() {
        let params = DiseaseParams::default();
        let e = state(&[[100.0, 0.0, 4.0, 1.0], [80.0, 0.0, 0.0, 0.0]]);
        let next = step_hour(&e, &OdMatrix::zeros((2, 2)), &params).unwrap();
        assert_eq!(next.s, e.s);
        assert_eq!(next.i, e.i);
        assert!((next.h[0] - 4.0 * (1.0 - params.theta)).abs() < 1e-15);
        assert!((next.r[0] - (1.0 + 4.0 * params.theta)).abs() < 1e-15);
    }

    #[test]
    fn composed_two_region_hand_case() {
        // Region 0 sends 10 of its 100 people (10% infected) to region 1.
        let params = DiseaseParams {
            beta_s: 0.1,
            beta_m: 0.4,
            gamma: 0.05,
            theta: 0.02,
            staying_group_includes_hospitalized: true,
        };
        let e = state(&[[90.0, 10.0, 0.0, 0.0], [50.0, 0.0, 2.0, 0.0]]);
        let next = step_hour(&e, &array![[0.0, 10.0], [0.0, 0.0]], &params).unwrap();
        // Stay 0: S 81, I 9 (N 90); arrivals at 1: S 9, I 1 (N 10); stay 1: S 50, H 2.
        let new0 = 0.1 * 81.0 * 9.0 / 90.0;
        let new1 = 0.4 * 9.0 * 1.0 / 10.0;
        assert!((next.s[0] - (81.0 - new0)).abs() < 1e-12);
        assert!((next.i[0] - (9.0 + new0 - 0.05 * 9.0)).abs() < 1e-12);
        assert!((next.s[1] - (59.0 - new1)).abs() < 1e-12);
        assert!((next.i[1] - (1.0 + new1 - 0.05 * 1.0)).abs() < 1e-12);
        assert!((next.h[1] - (2.0 + 0.05 - 0.04)).abs() < 1e-12);
        assert!((next.r[1] - 0.04).abs() < 1e-12);
    }

    #[test]
    fn r0_anchors() {
        let p = DiseaseParams::default();
        let r0 = estimate_r0(&p, 0.18).unwrap();
        assert!((r0 - 2.073_333_333).abs() < 1e-6, "{r0}");
        let flat = DiseaseParams {
            beta_s: 0.2,
            beta_m: 0.2,
            gamma: 0.1,
            ..p.clone()
        };
        for pm in [0.0, 0.18, 0.9] {
            assert!((estimate_r0(&flat, pm).unwrap() - 2.0).abs() < 1e-12);
        }
        let zero = DiseaseParams { gamma: 0.0, ..p };
        assert!(matches!(estimate_r0(&zero, 0.18), Err(Error::DivisionByZero(_))));
    }

    #[test]
    fn visible_state_and_delta() {
        let e = state(&[[10.0, 5.0, 2.0, 1.0]]);
        let v = visible(&e);
        assert_eq!((v.si[0], v.h[0], v.r[0]), (15.0, 2.0, 1.0));
        assert_eq!(visible_delta(&v, &v), VisibleState::zeros(1));

        // With no hospitalization, infection only moves mass inside S + I.
        let params = DiseaseParams {
            gamma: 0.0,
            theta: 0.0,
            ..DiseaseParams::default()
        };
        let e = state(&[[900.0, 100.0, 0.0, 0.0]]);
        let next = step_hour(&e, &OdMatrix::zeros((1, 1)), &params).unwrap();
        assert!(next.i[0] > e.i[0]);
        let d = visible_delta(&visible(&next), &visible(&e));
        assert!(d.si[0].abs() < 1e-12);
    }

    #[test]
    fn seeding() {
        let e = EpidemicState::susceptible(&[100.0, 0.0]);
        let one = seed_infection(&e, 0, 1.0).unwrap();
        assert_eq!((one.s[0], one.i[0]), (99.0, 1.0));
        assert_eq!(one.city_population(), e.city_population());
        assert_eq!(seed_infection(&e, 0, 0.0).unwrap(), e);
        assert!(seed_infection(&e, 1, 1.0).is_err());
        assert!(seed_infection(&e, 0, 101.0).is_err());
    }

    #[test]
    fn invalid_params_produce_state_error() {
        let params = DiseaseParams {
            beta_s: 0.0,
            beta_m: 0.0,
            gamma: 1.5,
            theta: 0.0,
            staying_group_includes_hospitalized: true,
        };
        assert!(params.validate().is_err());
        let e = state(&[[0.0, 8.0, 0.0, 0.0]]);
        assert!(matches!(
            step_hour(&e, &OdMatrix::zeros((1, 1)), &params),
            Err(Error::State(_))
        ));
    }
}
