//! The recursive encoder-decoder network.

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod pad;
pub mod params;

pub use checkpoint::{checkpoint_precision, load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{DenseBlockConfig, RedNetConfig};
pub use network::{rednet_forward, ForwardResult, Mode, Session};
pub use pad::{crop, pad_to_grid, CropRecord};
pub use params::{parameter_count, ModelParameters, Param, ParamKind, RunningStats};

use crate::error::Result;
use crate::tensor::Real;

/// Allocates and initializes parameters for `config`. Deterministic in `seed`.
pub fn build_model<T: Real>(config: &RedNetConfig, seed: u64) -> Result<ModelParameters<T>> {
    let mut params = ModelParameters::zeros(config)?;
    crate::training::init_weights(&mut params, seed);
    Ok(params)
}

/// Pads `[n, 3, h, w]` to the grid, runs inference, and crops each of the
/// `depth + 1` edge maps back to `h x w`.
pub fn predict<T: Real>(
    params: &ModelParameters<T>,
    image: &crate::tensor::Tensor<T>,
    depth: usize,
) -> Result<Vec<crate::tensor::Tensor<T>>> {
    let (padded, record) = pad_to_grid(image, params.config.grid())?;
    rednet_forward(params, &padded, depth)?.iter().map(|m| crop(m, record)).collect()
}
