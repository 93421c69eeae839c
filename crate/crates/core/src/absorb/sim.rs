//! Chain simulation with reproducible parallel substreams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::AbsorbError;
use crate::models::{DecrementModel, ModelSpec};

/// Samples per substream in [`simulate_batch`].
pub const SIM_TASK_SIZE: usize = 1024;

/// Draws decrements, with inverse-CDF tables for models that have no
/// native sampler.
#[derive(Debug, Clone)]
pub struct ChainSampler {
    model: DecrementModel,
    cdfs: Vec<Vec<f64>>,
}

impl ChainSampler {
    /// Prepares sampling from states up to `s_max`.
    pub fn new(model: &DecrementModel, s_max: u64) -> Result<Self, AbsorbError> {
        let cdfs = if matches!(model.spec(), ModelSpec::BetaCoalescent { .. }) {
            (0..=s_max)
                .map(|s| {
                    if s == 0 {
                        return Ok(Vec::new());
                    }
                    let p = model.decrement_probs(s)?;
                    let mut acc = 0.0;
                    Ok(p.iter()
                        .map(|&x| {
                            acc += x;
                            acc
                        })
                        .collect())
                })
                .collect::<Result<_, AbsorbError>>()?
        } else {
            Vec::new()
        };
        Ok(ChainSampler {
            model: model.clone(),
            cdfs,
        })
    }

    pub fn model(&self) -> &DecrementModel {
        &self.model
    }

    pub fn decrement<R: Rng + ?Sized>(&self, s: u64, rng: &mut R) -> Result<u64, AbsorbError> {
        match self.cdfs.get(s as usize) {
            Some(cdf) if !cdf.is_empty() => {
                let u = rng.random::<f64>() * cdf[cdf.len() - 1];
                let d = cdf.partition_point(|&c| c <= u);
                Ok((d as u64).min(s))
            }
            _ => Ok(self.model.sample_decrement(s, rng)?),
        }
    }

    /// One trajectory from `s` to 0; returns its number of steps.
    pub fn absorption_time<R: Rng + ?Sized>(
        &self,
        s: u64,
        rng: &mut R,
    ) -> Result<u64, AbsorbError> {
        let mut state = s;
        let mut steps = 0u64;
        while state > 0 {
            let d = self.decrement(state, rng)?;
            state -= d;
            steps += 1;
        }
        Ok(steps)
    }
}

/// One sample of `T_s` driven by `rng`.
pub fn simulate_absorption<R: Rng + ?Sized>(
    model: &DecrementModel,
    s: u64,
    rng: &mut R,
) -> Result<u64, AbsorbError> {
    ChainSampler::new(model, s)?.absorption_time(s, rng)
}

/// One sample of `T_s`, deterministic in `(seed, s)`.
pub fn simulate_one(model: &DecrementModel, s: u64, seed: u64) -> Result<u64, AbsorbError> {
    simulate_absorption(model, s, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Substream `task` of the generator seeded by `seed`.
pub fn substream(seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task);
    rng
}

/// `m` samples of `T_s`. Task `i` covers samples `i * SIM_TASK_SIZE ..` and
/// draws from substream `i`, so the output does not depend on the thread count.
pub fn simulate_batch(
    sampler: &ChainSampler,
    s: u64,
    m: usize,
    seed: u64,
) -> Result<Vec<u64>, AbsorbError> {
    let tasks = m.div_ceil(SIM_TASK_SIZE);
    let chunks: Vec<Vec<u64>> = (0..tasks)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let len = SIM_TASK_SIZE.min(m - i * SIM_TASK_SIZE);
            (0..len)
                .map(|_| sampler.absorption_time(s, &mut rng))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(chunks.concat())
}
