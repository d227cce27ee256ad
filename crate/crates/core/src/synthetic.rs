//! Bundled and generated grid cases.
//!
//! [`rts73`] builds a 73-bus stand-in for a three-area reliability test
//! system: three copies of a 24-bus area joined by tie lines and a hub bus.
//! Generation exceeds demand, but buses 5 and 27 sit behind import-limited
//! lines, so raising their demand eventually forces local shedding.
//! [`random_case`] draws small-to-medium instances for property tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::case_file::parse_case;
use crate::grid::{Bus, Delta, FairnessParams, Generator, GridCase, Line, LoadPoint};

/// Text of the bundled three-bus case.
pub const THREE_BUS_CASE: &str = include_str!("../../../cases/3bus.case");

/// Two generators (costs g² + 3g and 2g² + g, limits 30 and 50 MW), loads
/// of 20, 30 and 40 MW, λ = 1000.
pub fn three_bus() -> GridCase {
    parse_case(THREE_BUS_CASE).expect("bundled three-bus case parses")
}

/// Branches of one 24-bus area (parallel circuits merged).
const AREA_BRANCHES: [(i64, i64); 33] = [
    (1, 2), (1, 3), (1, 5), (2, 4), (2, 6), (3, 9), (3, 24), (4, 9), (5, 10),
    (6, 10), (7, 8), (8, 9), (8, 10), (9, 11), (9, 12), (10, 11), (10, 12),
    (11, 13), (11, 14), (12, 13), (12, 23), (13, 23), (14, 16), (15, 16),
    (15, 21), (15, 24), (16, 17), (16, 19), (17, 18), (17, 22), (18, 21),
    (19, 20), (20, 23),
];

/// `(bus, MW)` loads of one area.
const AREA_LOADS: [(i64, f64); 17] = [
    (1, 108.0), (2, 97.0), (3, 180.0), (4, 74.0), (5, 71.0), (6, 136.0),
    (7, 125.0), (8, 171.0), (9, 175.0), (10, 195.0), (13, 265.0), (14, 194.0),
    (15, 317.0), (16, 100.0), (18, 333.0), (19, 181.0), (20, 128.0),
];

/// `(bus, MW)` generator capacities of one area.
const AREA_GENS: [(i64, f64); 10] = [
    (1, 152.0), (2, 152.0), (7, 240.0), (13, 480.0), (15, 215.0), (16, 155.0),
    (18, 400.0), (21, 400.0), (22, 300.0), (23, 480.0),
];

/// Tie lines between areas, as `(area, bus, area, bus)`; area 3 bus 25 is
/// the hub.
const TIES: [(i64, i64, i64, i64); 7] = [
    (0, 7, 1, 3),
    (0, 13, 1, 15),
    (0, 23, 2, 17),
    (1, 23, 2, 18),
    (1, 13, 2, 11),
    (0, 21, 3, 1),
    (3, 1, 2, 21),
];

/// Bus ids of the 73-bus case: area `a` bus `k` is `24a + k`, the hub is 73.
fn rts_bus(area: i64, bus: i64) -> i64 {
    if area == 3 {
        73
    } else {
        24 * area + bus
    }
}

/// Buses whose incident lines carry tight limits, with the limit in MW.
const POCKETS: [(i64, f64); 2] = [(5, 100.0), (27, 90.0)];

/// Deterministic 73-bus, 51-load case with 5 demographic features.
///
/// Generation capacity is about 115% of nominal demand, λ = 10⁴, γ = N,
/// `s_max = 0.4` at every load. Lines touching buses 5 and 27 are limited
/// to 100 MW and 90 MW.
pub fn rts73() -> GridCase {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let mut buses = Vec::new();
    for id in 1..=73 {
        buses.push(Bus {
            id,
            theta_min: -std::f64::consts::FRAC_PI_2,
            theta_max: std::f64::consts::FRAC_PI_2,
            is_reference: id == 13,
        });
    }
    let mut lines = Vec::new();
    for area in 0..3 {
        for &(f, t) in &AREA_BRANCHES {
            let (from, to) = (rts_bus(area, f), rts_bus(area, t));
            let limit = POCKETS
                .iter()
                .find(|(bus, _)| *bus == from || *bus == to)
                .map_or([400.0, 500.0, 600.0][rng.random_range(0..3)], |p| p.1);
            lines.push(Line {
                from,
                to,
                b: rng.random_range(5.0..25.0),
                f_min: -limit,
                f_max: limit,
            });
        }
    }
    for &(a1, b1, a2, b2) in &TIES {
        let (from, to) = (rts_bus(a1, b1), rts_bus(a2, b2));
        let limit = POCKETS
            .iter()
            .find(|(bus, _)| *bus == from || *bus == to)
            .map_or(400.0, |p| p.1 * 0.6);
        lines.push(Line {
            from,
            to,
            b: rng.random_range(4.0..10.0),
            f_min: -limit,
            f_max: limit,
        });
    }
    let mut generators = Vec::new();
    for area in 0..3 {
        for &(bus, cap) in &AREA_GENS {
            generators.push(Generator {
                bus: rts_bus(area, bus),
                a: rng.random_range(0.002..0.02),
                b_lin: rng.random_range(10.0..40.0),
                c: rng.random_range(0.0..200.0),
                g_min: 0.0,
                g_max: cap * 1.1,
            });
        }
    }
    let mut loads = Vec::new();
    for area in 0..3 {
        for &(bus, d) in &AREA_LOADS {
            loads.push(LoadPoint {
                bus: rts_bus(area, bus),
                d: (d * rng.random_range(0.9..1.1_f64)).round(),
                s_max: 0.4,
            });
        }
    }
    let features = (0..5)
        .map(|_| (0..loads.len()).map(|_| rng.random_range(0.0..1.0_f64)).map(|v| (v * 1000.0).round() / 1000.0).collect())
        .collect();
    GridCase {
        name: "rts73_synthetic".into(),
        base_mva: 100.0,
        buses,
        lines,
        generators,
        loads,
        features,
        fairness: FairnessParams {
            gamma: 51.0,
            delta: None,
            epsilon: 6.0,
        },
        lambda: crate::grid::DEFAULT_LAMBDA,
        copper_plate: false,
    }
}

/// Random connected instance with `n_buses` buses (at least 2).
///
/// Lines form a random spanning tree plus extra chords; generators sit on
/// about a third of the buses and every bus carries a load. Generation is
/// drawn between 60% and 110% of demand, so some instances need shedding
/// and some are infeasible once flow limits bite.
pub fn random_case(rng: &mut impl Rng, n_buses: usize) -> GridCase {
    let n = n_buses.max(2);
    let copper_plate = rng.random_bool(0.2);
    let buses: Vec<Bus> = (1..=n as i64)
        .map(|id| Bus {
            id,
            theta_min: -std::f64::consts::FRAC_PI_2,
            theta_max: std::f64::consts::FRAC_PI_2,
            is_reference: id == 1,
        })
        .collect();
    let mut lines = Vec::new();
    if !copper_plate {
        let mut order: Vec<i64> = (1..=n as i64).collect();
        order.shuffle(rng);
        for k in 1..n {
            let parent = order[rng.random_range(0..k)];
            lines.push((parent, order[k]));
        }
        for _ in 0..(n / 3) {
            let i = rng.random_range(1..=n as i64);
            let j = rng.random_range(1..=n as i64);
            if i != j && !lines.iter().any(|&(a, b)| (a, b) == (i, j) || (a, b) == (j, i)) {
                lines.push((i, j));
            }
        }
    }
    let loads: Vec<LoadPoint> = (1..=n as i64)
        .map(|bus| LoadPoint {
            bus,
            d: rng.random_range(5.0..100.0),
            s_max: rng.random_range(0.2..1.0),
        })
        .collect();
    let total: f64 = loads.iter().map(|l| l.d).sum();
    let n_gen = (n / 3).max(1);
    let mut gen_buses: Vec<i64> = (1..=n as i64).collect();
    gen_buses.shuffle(rng);
    let capacity = total * rng.random_range(0.6..1.1);
    let shares: Vec<f64> = (0..n_gen).map(|_| rng.random_range(0.5..1.5)).collect();
    let share_sum: f64 = shares.iter().sum();
    let generators = gen_buses[..n_gen]
        .iter()
        .zip(&shares)
        .map(|(&bus, share)| Generator {
            bus,
            a: rng.random_range(0.0..0.1),
            b_lin: rng.random_range(5.0..50.0),
            c: rng.random_range(0.0..10.0),
            g_min: 0.0,
            g_max: capacity * share / share_sum,
        })
        .collect();
    let lines = lines
        .into_iter()
        .map(|(from, to)| {
            let limit = rng.random_range(0.3..1.0) * total;
            Line {
                from,
                to,
                b: rng.random_range(1.0..20.0),
                f_min: -limit,
                f_max: limit,
            }
        })
        .collect();
    let n_feat = rng.random_range(0..3);
    let features: Vec<Vec<f64>> = (0..n_feat)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let delta = match rng.random_range(0..3) {
        0 => None,
        1 => Some(Delta::Uniform(rng.random_range(0.05..0.5))),
        _ => Some(Delta::Pairs(vec![crate::grid::PairBound {
            i: 1,
            j: n,
            delta: rng.random_range(0.0..0.3),
        }])),
    };
    GridCase {
        name: format!("random{n}"),
        base_mva: 100.0,
        buses,
        lines,
        generators,
        loads,
        features,
        fairness: FairnessParams {
            gamma: rng.random_range(1.2..(n as f64).max(1.3)),
            delta,
            epsilon: rng.random_range(0.2..(n as f64) * 0.5),
        },
        lambda: [1e3, 1e4][rng.random_range(0..2)],
        copper_plate,
    }
}
