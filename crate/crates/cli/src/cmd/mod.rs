pub mod bucket;
pub mod curate;
pub mod guard;
pub mod skiparse;
pub mod stream;
pub mod wavelet;

use osp_core::Tensor4D;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};

pub fn parse_dims4(s: &str) -> std::result::Result<[usize; 4], String> {
    let v: Vec<usize> = crate::io::parse_list(s)?;
    v.try_into().map_err(|_| format!("expected C,T,H,W, got {s:?}"))
}

pub fn parse_dims3(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = crate::io::parse_list(s)?;
    v.try_into().map_err(|_| format!("expected T,H,W, got {s:?}"))
}

/// Loads `input`, or draws a uniform random tensor of `dims` from `seed`.
pub fn tensor_input(input: Option<&std::path::Path>, dims: Option<[usize; 4]>, seed: u64) -> Result<Tensor4D> {
    match (input, dims) {
        (Some(path), _) => Ok(osp_core::load_tensor(path)?),
        (None, Some(dims)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok(Tensor4D::random(dims, &mut rng)?)
        }
        (None, None) => Err(CliError::Input("pass --input FILE or --dims C,T,H,W".into())),
    }
}
