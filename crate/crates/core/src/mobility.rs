//! Ground-user mobility: speed with inertia, ε-greedy heading keeping and
//! reflection at the walls of the area of interest.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use crate::config::ScenarioConfig;
use crate::world::{GroundUser, Pos};

/// `k1·prev + (1 − k1)·v̄`.
pub fn update_speed(prev_speed: f64, cfg: &ScenarioConfig) -> f64 {
    cfg.gu_inertia * prev_speed + (1.0 - cfg.gu_inertia) * cfg.gu_mean_speed
}

/// Keeps the heading with probability `gu_greedy_eps`; otherwise turns by
/// `k2·steer_angle` with `k2` uniform in {1, 2, 3}.
pub fn update_heading<R: Rng + ?Sized>(prev: f64, cfg: &ScenarioConfig, rng: &mut R) -> f64 {
    if rng.random_bool(cfg.gu_greedy_eps) {
        return prev;
    }
    let k2 = rng.random_range(1..=3u32);
    normalize_heading(prev + cfg.steer_angle * k2 as f64, cfg.steer_angle)
}

/// Wraps into [0, 2π). When the steer angle divides the circle the result
/// is snapped onto that lattice so repeated turns never drift.
fn normalize_heading(theta: f64, steer: f64) -> f64 {
    let wrapped = theta.rem_euclid(TAU);
    let slots = TAU / steer;
    let n = slots.round();
    if n >= 1.0 && (slots - n).abs() < 1e-9 {
        let k = (wrapped / steer).round() % n;
        k * steer
    } else {
        wrapped
    }
}

/// Folds a coordinate back into `[0, side]`, reporting whether the number of
/// wall hits was odd (so the velocity component flips).
fn reflect(mut v: f64, side: f64) -> (f64, bool) {
    let mut flipped = false;
    loop {
        if v < 0.0 {
            v = -v;
        } else if v > side {
            v = 2.0 * side - v;
        } else {
            return (v, flipped);
        }
        flipped = !flipped;
    }
}

/// Advances one ground user by one slot.
pub fn step_gu<R: Rng + ?Sized>(gu: &GroundUser, cfg: &ScenarioConfig, rng: &mut R) -> GroundUser {
    let speed = update_speed(gu.speed, cfg);
    let mut heading = update_heading(gu.heading, cfg, rng);
    let dist = speed * cfg.slot_tau;
    let side = cfg.aoi_side();
    let (x, flip_x) = reflect(gu.pos.x + dist * heading.cos(), side);
    let (y, flip_y) = reflect(gu.pos.y + dist * heading.sin(), side);
    if flip_x {
        heading = normalize_heading(PI - heading, cfg.steer_angle);
    }
    if flip_y {
        heading = normalize_heading(-heading, cfg.steer_angle);
    }
    GroundUser {
        pos: Pos::new(x, y),
        speed,
        heading,
        ..gu.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{stream, StreamId};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn gu(x: f64, y: f64, speed: f64, heading: f64) -> GroundUser {
        GroundUser {
            id: 0,
            pos: Pos::new(x, y),
            speed,
            heading,
            buffer_bits: 0.0,
            served_count: 0,
        }
    }

    #[test]
    fn speed_examples() {
        let mut c = ScenarioConfig::default();
        c.gu_inertia = 0.9;
        c.gu_mean_speed = 1.0;
        assert_eq!(update_speed(1.0, &c), 1.0);
        assert!((update_speed(2.0, &c) - 1.9).abs() < 1e-15);
        c.gu_inertia = 0.0;
        assert_eq!(update_speed(0.0, &c), 1.0);
    }

    #[test]
    fn speed_contracts_geometrically() {
        let c = ScenarioConfig::default();
        let mut v = 5.0;
        for t in 1..=60 {
            v = update_speed(v, &c);
            let expected = c.gu_inertia.powi(t) * (5.0 - c.gu_mean_speed);
            assert!(((v - c.gu_mean_speed) - expected).abs() <= 1e-12 * (1.0 + expected));
        }
    }

    #[test]
    fn greedy_one_keeps_heading() {
        let mut c = ScenarioConfig::default();
        c.gu_greedy_eps = 1.0;
        let mut rng = stream(1, StreamId::Mobility);
        for q in 0..4 {
            let h = q as f64 * FRAC_PI_2;
            for _ in 0..100 {
                assert_eq!(update_heading(h, &c, &mut rng), h);
            }
        }
    }

    #[test]
    fn greedy_zero_turns_uniformly() {
        let mut c = ScenarioConfig::default();
        c.gu_greedy_eps = 0.0;
        let mut rng = stream(2, StreamId::Mobility);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let h = update_heading(0.0, &c, &mut rng);
            counts[(h / FRAC_PI_2).round() as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        for &k in &counts[1..] {
            let f = k as f64 / n as f64;
            assert!((f - 1.0 / 3.0).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn heading_sequence_is_seeded() {
        let c = ScenarioConfig::default();
        let run = || {
            let mut rng = stream(11, StreamId::Mobility);
            let mut h = 0.0;
            (0..500)
                .map(|_| {
                    h = update_heading(h, &c, &mut rng);
                    h
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn straight_move() {
        let mut c = ScenarioConfig::default();
        c.gu_greedy_eps = 1.0;
        let mut rng = stream(0, StreamId::Mobility);
        let next = step_gu(&gu(450.0, 450.0, 1.0, 0.0), &c, &mut rng);
        assert_eq!(next.pos, Pos::new(451.0, 450.0));
    }

    #[test]
    fn wall_reflects() {
        let mut c = ScenarioConfig::default();
        c.gu_greedy_eps = 1.0;
        let mut rng = stream(0, StreamId::Mobility);
        let next = step_gu(&gu(899.5, 450.0, 1.0, 0.0), &c, &mut rng);
        assert_eq!(next.pos, Pos::new(899.5, 450.0));
        assert_eq!(next.heading, PI);

        let next = step_gu(&gu(450.0, 0.25, 1.0, 3.0 * FRAC_PI_2), &c, &mut rng);
        assert!((next.pos.y - 0.75).abs() < 1e-12);
        assert_eq!(next.heading, FRAC_PI_2);
    }

    #[test]
    fn zero_speed_stays_put() {
        let mut c = ScenarioConfig::default();
        c.gu_mean_speed = 0.0;
        let mut rng = stream(0, StreamId::Mobility);
        let start = gu(123.0, 456.0, 0.0, FRAC_PI_2);
        let next = step_gu(&start, &c, &mut rng);
        assert_eq!(next.pos, start.pos);
    }

    #[test]
    fn long_fuzz_stays_inside_on_lattice() {
        let c = ScenarioConfig {
            gu_greedy_eps: 0.5,
            gu_mean_speed: 7.0,
            ..Default::default()
        };
        let mut rng = stream(5, StreamId::Mobility);
        let mut g = gu(10.0, 890.0, 3.0, 0.0);
        let side = c.aoi_side();
        for _ in 0..100_000 {
            g = step_gu(&g, &c, &mut rng);
            assert!((0.0..=side).contains(&g.pos.x) && (0.0..=side).contains(&g.pos.y));
            let q = g.heading / FRAC_PI_2;
            assert_eq!(q, q.round());
            assert!(g.heading >= 0.0 && g.heading < TAU);
        }
    }

    proptest! {
        #[test]
        fn reflection_lands_inside(v in -5000.0f64..5000.0, side in 1.0f64..1000.0) {
            let (r, _) = reflect(v, side);
            prop_assert!((0.0..=side).contains(&r));
        }
    }
}
