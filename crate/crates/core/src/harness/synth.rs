//! Deterministic synthetic action logs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AdpError, Result};
use crate::se3::ActionIncrement;

use super::episode::EpisodeLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthProfile {
    /// Large, repeatedly accelerating moves.
    Coarse,
    /// Small, decelerating moves.
    Fine,
    /// Blocks of coarse and fine windows in turn.
    Mixed,
}

impl std::str::FromStr for SynthProfile {
    type Err = AdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Self::Coarse),
            "fine" => Ok(Self::Fine),
            "mixed" => Ok(Self::Mixed),
            other => Err(AdpError::invalid(format!(
                "unknown profile `{other}` (coarse, fine, mixed)"
            ))),
        }
    }
}

const PERIOD: usize = 12;
const BLOCK: usize = 6;

/// Per-step speed (m/step) at `phase` windows into a regime, before jitter.
fn speed(coarse: bool, phase: usize) -> f64 {
    if coarse {
        0.01 + 0.002 * phase as f64
    } else {
        0.004 * 0.85f64.powi(phase as i32)
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

/// Generates `windows * omega` steps. Same seed and arguments give the same log.
pub fn synth_episode(
    seed: u64,
    profile: SynthProfile,
    windows: usize,
    omega: usize,
) -> Result<EpisodeLog> {
    if windows == 0 || omega == 0 {
        return Err(AdpError::invalid("windows and omega must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(windows * omega);
    for w in 0..windows {
        let (coarse, phase) = match profile {
            SynthProfile::Coarse => (true, w % PERIOD),
            SynthProfile::Fine => (false, w % PERIOD),
            SynthProfile::Mixed => ((w / BLOCK).is_multiple_of(2), w % BLOCK),
        };
        let base = speed(coarse, phase);
        let rot = if coarse { 0.05 } else { 0.01 };
        let gripper = if coarse { 1.0 } else { -1.0 };
        for _ in 0..omega {
            let dir = unit_vector(&mut rng);
            let mag = base * (1.0 + rng.random_range(-0.01..0.01));
            let r: [f64; 3] = std::array::from_fn(|_| rng.random_range(-rot..rot));
            steps.push(ActionIncrement::new(dir.map(|c| c * mag), r, gripper));
        }
    }
    EpisodeLog::new(omega, steps)
}
