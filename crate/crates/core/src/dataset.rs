//! Channel / ZP-OFDM equivalent-channel pair generation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{assemble_channel, complex_to_planes, sample_paths, ChannelMatrix};
use crate::config::SystemConfig;
use crate::error::Result;
use crate::modem::{equivalent_channel, zp_ofdm_modem, EquivalentChannel, Modem};
use crate::rng::{spawn_stream, RandomStream};

/// One training example: the channel and its ZP-OFDM equivalent channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub h: ChannelMatrix,
    pub h_e_ofdm: EquivalentChannel,
}

impl DatasetPair {
    pub fn from_channel(h: ChannelMatrix, ofdm: &Modem) -> Result<Self> {
        let h_e_ofdm = equivalent_channel(ofdm, &h)?;
        Ok(Self { h, h_e_ofdm })
    }

    /// `2 x M' x M` real/imaginary tensor of the channel.
    pub fn h_image(&self) -> Vec<f64> {
        self.h.to_image()
    }

    /// `2 x N x N` real/imaginary tensor of the ZP-OFDM equivalent channel.
    pub fn h_e_ofdm_image(&self) -> Vec<f64> {
        complex_to_planes(self.h_e_ofdm.matrix())
    }

    /// Largest entrywise gap between the stored equivalent channel and one
    /// recomputed from the stored channel.
    pub fn consistency_gap(&self, ofdm: &Modem) -> Result<f64> {
        let again = equivalent_channel(ofdm, &self.h)?;
        Ok((again.matrix() - self.h_e_ofdm.matrix()).camax())
    }
}

/// Draws `count` independent pairs. Each pair gets a sub-seed drawn from
/// `stream` up front, so the result does not depend on thread scheduling.
pub fn generate_dataset(
    config: &SystemConfig,
    count: usize,
    stream: &mut RandomStream,
) -> Result<Vec<DatasetPair>> {
    config.validate()?;
    let ofdm = zp_ofdm_modem(config)?;
    let seeds: Vec<u64> = (0..count).map(|_| stream.random()).collect();
    seeds
        .par_iter()
        .map(|&seed| {
            let mut pair_stream = spawn_stream(seed, "pair");
            let paths = sample_paths(config, &mut pair_stream);
            let h = assemble_channel(&paths, config)?;
            DatasetPair::from_channel(h, &ofdm)
        })
        .collect()
}

/// Mean of a set of complex matrices of equal shape.
pub fn mean_matrix<'a, I>(items: I) -> Option<DMatrix<Complex64>>
where
    I: IntoIterator<Item = &'a DMatrix<Complex64>>,
{
    let mut iter = items.into_iter();
    let mut acc = iter.next()?.clone();
    let mut count = 1.0;
    for m in iter {
        acc += m;
        count += 1.0;
    }
    Some(acc / Complex64::new(count, 0.0))
}
