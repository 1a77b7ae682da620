//! Rician ground-to-UAV channel, achievable rate and the QoS coverage test.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::Result;
use crate::world::{cell_center, Cell, GroundUser, Pos};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSample {
    /// Small-scale fading term, unit mean power.
    pub small_scale: Complex64,
    /// Large-scale gain β.
    pub large_scale: f64,
    /// |h| = sqrt(β)·|ĥ|.
    pub coeff_mag: f64,
}

/// One user's link in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub gu_id: usize,
    pub sample: ChannelSample,
    /// Whether the link meets the `h_min` quality bound.
    pub covered: bool,
    /// Achievable rate in bits/s.
    pub rate: f64,
}

/// `α / (H² + d²)^(K_ps/2)` for ground-projected squared distance `d²`.
pub fn large_scale_gain(dist2_ground: f64, cfg: &ScenarioConfig) -> f64 {
    let h2 = cfg.altitude_h * cfg.altitude_h;
    cfg.ref_gain_alpha / (h2 + dist2_ground).powf(cfg.pathloss_kps / 2.0)
}

/// Rician draw: a unit line-of-sight component plus circularly-symmetric
/// complex Gaussian scatter, weighted so that E|ĥ|² = 1.
pub fn sample_small_scale<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    let scatter = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
    let los = Complex64::new(1.0, 0.0);
    let ks = cfg.rician_ks;
    if ks.is_infinite() {
        return los;
    }
    los * (ks / (ks + 1.0)).sqrt() + scatter * (1.0 / (ks + 1.0)).sqrt()
}

pub fn channel_coefficient<R: Rng + ?Sized>(
    gu_pos: Pos,
    uav_cell: Cell,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<ChannelSample> {
    let uav = cell_center(uav_cell, cfg)?;
    let large_scale = large_scale_gain(gu_pos.dist2(uav), cfg);
    let small_scale = sample_small_scale(cfg, rng);
    Ok(ChannelSample {
        small_scale,
        large_scale,
        coeff_mag: large_scale.sqrt() * small_scale.norm(),
    })
}

/// Shannon rate `W·log2(1 + |h|²p/σ²)`.
pub fn rate(coeff_mag: f64, cfg: &ScenarioConfig) -> f64 {
    let snr = coeff_mag * coeff_mag * cfg.tx_power / cfg.noise_sigma2;
    cfg.bandwidth_w * snr.ln_1p() / std::f64::consts::LN_2
}

/// The QoS bound `|h| ≥ h_min` rewritten as a coverage disc:
/// `d² ≤ (α·|ĥ|²/h_min²)^(2/K_ps) − H²`.
pub fn coverage_ok(gu_pos: Pos, uav_cell: Cell, small_scale_mag: f64, cfg: &ScenarioConfig) -> Result<bool> {
    let uav = cell_center(uav_cell, cfg)?;
    let d2 = gu_pos.dist2(uav);
    let ratio = cfg.ref_gain_alpha * small_scale_mag * small_scale_mag / (cfg.h_min * cfg.h_min);
    let radius2 = ratio.powf(2.0 / cfg.pathloss_kps) - cfg.altitude_h * cfg.altitude_h;
    Ok(d2 <= radius2)
}

/// Draws this slot's link for every user, in user order.
pub fn draw_links<R: Rng + ?Sized>(
    gus: &[GroundUser],
    uav_cell: Cell,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<Vec<Link>> {
    gus.iter()
        .map(|gu| {
            let sample = channel_coefficient(gu.pos, uav_cell, cfg, rng)?;
            let covered = coverage_ok(gu.pos, uav_cell, sample.small_scale.norm(), cfg)?;
            Ok(Link {
                gu_id: gu.id,
                sample,
                covered,
                rate: rate(sample.coeff_mag, cfg),
            })
        })
        .collect()
}
