use epiflow_core::env::{reward_infection, reward_mobility, update_loss};
use epiflow_core::sihr::{mobility_substep, seed_infection};
use epiflow_core::{apply_quota, outflows, step_hour, DiseaseParams, EpidemicState, OdMatrix, QuotaMatrix};
use ndarray::Array2;
use proptest::prelude::*;

fn params() -> DiseaseParams {
    DiseaseParams::default()
}

fn state_strategy(k: usize) -> impl Strategy<Value = EpidemicState> {
    prop::collection::vec((10.0..5000.0f64, 0.0..1.0f64, 0.0..0.2f64, 0.0..0.2f64, 0.0..0.3f64), k).prop_map(
        |rows| {
            let mut st = EpidemicState::susceptible(&vec![0.0; rows.len()]);
            for (x, (n, fi, fh, fr, _)) in rows.iter().enumerate() {
                let i = n * fi * 0.1;
                let h = n * fh;
                let r = n * fr;
                st.s[x] = n - i - h - r;
                st.i[x] = i;
                st.h[x] = h;
                st.r[x] = r;
            }
            st
        },
    )
}

/// Random flows that may exceed the movable population of a region.
fn flows_strategy(k: usize) -> impl Strategy<Value = OdMatrix> {
    prop::collection::vec(0.0..400.0f64, k * k).prop_map(move |v| {
        let mut m = Array2::from_shape_vec((k, k), v).unwrap();
        for x in 0..k {
            m[[x, x]] = 0.0;
        }
        m
    })
}

fn case(max_k: usize) -> impl Strategy<Value = (EpidemicState, OdMatrix)> {
    (2..=max_k).prop_flat_map(|k| (state_strategy(k), flows_strategy(k)))
}

/// Person-by-person bookkeeping of one hour, written without the library's helpers.
fn oracle_step(st: &EpidemicState, flows: &OdMatrix, p: &DiseaseParams) -> EpidemicState {
    let k = st.s.len();
    // [region][group: 0 stay, 1 arrivals][compartment: s, i, r]
    let mut g = vec![[[0.0f64; 3]; 2]; k];
    for i in 0..k {
        let movable = st.s[i] + st.i[i] + st.r[i];
        let demand: f64 = (0..k).map(|j| flows[[i, j]]).sum();
        let sent = demand.min(movable);
        let comps = [st.s[i], st.i[i], st.r[i]];
        for c in 0..3 {
            let share = if movable > 0.0 { comps[c] / movable } else { 0.0 };
            g[i][0][c] += comps[c] - share * sent;
            if demand > 0.0 {
                for j in 0..k {
                    g[j][1][c] += share * sent * flows[[i, j]] / demand;
                }
            }
        }
    }
    let mut out = st.clone();
    for x in 0..k {
        let [stay, arr] = g[x];
        let n_s = stay.iter().sum::<f64>() + st.h[x];
        let n_m: f64 = arr.iter().sum();
        let mut new = 0.0;
        if n_s > 0.0 {
            new += p.beta_s * stay[0] * stay[1] / n_s;
        }
        if n_m > 0.0 {
            new += p.beta_m * arr[0] * arr[1] / n_m;
        }
        let (s, i, r) = (stay[0] + arr[0], stay[1] + arr[1], stay[2] + arr[2]);
        out.s[x] = s - new;
        out.i[x] = i + new - p.gamma * i;
        out.h[x] = st.h[x] + p.gamma * i - p.theta * st.h[x];
        out.r[x] = r + p.theta * st.h[x];
    }
    out
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn population_is_conserved((st, flows) in case(8)) {
        let mut cur = st.clone();
        for _ in 0..24 {
            cur = step_hour(&cur, &flows, &params()).unwrap();
        }
        let before = st.city_population();
        prop_assert!((cur.city_population() - before).abs() <= 1e-9 * before);
    }

    #[test]
    fn compartments_stay_non_negative((st, flows) in case(8)) {
        let mut cur = st;
        for _ in 0..48 {
            cur = step_hour(&cur, &flows, &params()).unwrap();
            for v in cur.s.iter().chain(&cur.i).chain(&cur.h).chain(&cur.r) {
                prop_assert!(*v >= 0.0);
            }
        }
    }

    #[test]
    fn hospitalized_do_not_travel((st, flows) in case(8)) {
        let mob = mobility_substep(&st, &flows).unwrap();
        prop_assert_eq!(&mob.hospitalized, &st.h);
        let mixed = mob.mixed();
        for x in 0..st.num_regions() {
            prop_assert_eq!(mixed.h[x], st.h[x]);
        }
    }

    #[test]
    fn step_matches_person_level_oracle((st, flows) in case(8)) {
        let p = params();
        let mut a = st.clone();
        let mut b = st;
        for _ in 0..12 {
            a = step_hour(&a, &flows, &p).unwrap();
            b = oracle_step(&b, &flows, &p);
        }
        prop_assert!(close(&a.s, &b.s, 1e-9));
        prop_assert!(close(&a.i, &b.i, 1e-9));
        prop_assert!(close(&a.h, &b.h, 1e-9));
        prop_assert!(close(&a.r, &b.r, 1e-9));
    }

    #[test]
    fn isolated_regions_follow_scalar_recursion(st in (1usize..6).prop_flat_map(state_strategy)) {
        let p = params();
        let k = st.num_regions();
        let none = OdMatrix::zeros((k, k));
        let mut cur = st.clone();
        for _ in 0..300 {
            cur = step_hour(&cur, &none, &p).unwrap();
        }
        for x in 0..k {
            let (mut s, mut i, mut h, mut r) = (st.s[x], st.i[x], st.h[x], st.r[x]);
            for _ in 0..300 {
                let n = s + i + h + r;
                let new = p.beta_s * s * i / n;
                let (di, dh) = (p.gamma * i, p.theta * h);
                s -= new;
                i += new - di;
                h += di - dh;
                r += dh;
            }
            prop_assert!(close(&[cur.s[x], cur.i[x], cur.h[x], cur.r[x]], &[s, i, h, r], 1e-9));
        }
    }

    #[test]
    fn more_infected_seed_means_more_risk(
        st in state_strategy(4),
        flows in flows_strategy(4),
        extra in 1.0..50.0f64,
    ) {
        // Moving extra people from S to I never lowers the infected-plus-hospitalized burden.
        let p = params();
        let region = 0;
        prop_assume!(st.s[region] > extra);
        let more = seed_infection(&st, region, extra).unwrap();
        let (mut a, mut b) = (st, more);
        for _ in 0..24 {
            a = step_hour(&a, &flows, &p).unwrap();
            b = step_hour(&b, &flows, &p).unwrap();
        }
        let burden = |e: &EpidemicState| e.city_infected() + e.city_hospitalized() + e.r.iter().sum::<f64>();
        prop_assert!(burden(&b) >= burden(&a) - 1e-9);
    }

    #[test]
    fn quota_is_monotone(
        flows in flows_strategy(5),
        lo in prop::collection::vec(0.0..1.0f64, 25),
        bump in prop::collection::vec(0.0..1.0f64, 25),
    ) {
        let lo_q = Array2::from_shape_vec((5, 5), lo.clone()).unwrap();
        let hi_q = Array2::from_shape_vec((5, 5), lo.iter().zip(&bump).map(|(a, b)| (a + b).min(1.0)).collect()).unwrap();
        let a = apply_quota(&flows, &QuotaMatrix::new(lo_q).unwrap()).unwrap();
        let b = apply_quota(&flows, &QuotaMatrix::new(hi_q).unwrap()).unwrap();
        prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| x <= y));
        let full = apply_quota(&flows, &QuotaMatrix::ones(5)).unwrap();
        prop_assert_eq!(&full, &flows);
        for (x, y) in outflows(&b).iter().zip(outflows(&flows)) {
            prop_assert!(*x <= y + 1e-12);
        }
    }

    #[test]
    fn loss_recursion_equals_discounted_sum(
        restrictions in prop::collection::vec(0.0..2.0f64, 1..200),
        lambda in 0.5..1.0f64,
    ) {
        let mut loss = vec![0.0];
        for l in &restrictions {
            loss = update_loss(&loss, &[*l], &[0.0], &[1.0], lambda);
        }
        let n = restrictions.len();
        let direct: f64 = restrictions
            .iter()
            .enumerate()
            .map(|(t, l)| lambda.powi((n - t) as i32) * l)
            .sum();
        prop_assert!((loss[0] - direct).abs() <= 1e-9 * (1.0 + direct));
    }

    #[test]
    fn infection_cost_is_convex(a in 0.0..20.0f64, b in 0.0..20.0f64, w in 0.0..1.0f64) {
        let f = |h: f64| reward_infection(&[h, h], 1.0, 3.0);
        let mid = f(w * a + (1.0 - w) * b);
        prop_assert!(mid <= w * f(a) + (1.0 - w) * f(b) + 1e-12);
        prop_assert!(f(a.max(b)) >= f(a.min(b)));
    }

    #[test]
    fn sustained_restriction_costs_more(
        l in 0.01..2.0f64,
        history in 1usize..100,
    ) {
        // The same hourly restriction costs more after a run of earlier restrictions.
        let mut loss = vec![0.0];
        let first = reward_mobility(&loss, &[l], &[0.0], &[1.0], 72.0);
        for _ in 0..history {
            loss = update_loss(&loss, &[l], &[0.0], &[1.0], 0.99);
        }
        let later = reward_mobility(&loss, &[l], &[0.0], &[1.0], 72.0);
        prop_assert!(later > first);
    }
}
