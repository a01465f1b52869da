//! Run-length encoding of binary masks for the wire.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RleError {
    #[error("order must be \"C\", got {0:?}")]
    Order(String),
    #[error("runs must come in (start, length) pairs")]
    OddRuns,
    #[error("run {index} is empty, overlaps its predecessor or leaves the grid")]
    BadRun { index: usize },
}

/// C-order runs over foreground voxels, flattened as `[start, len, start, len, ...]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub shape: Vec<usize>,
    pub order: String,
    pub runs: Vec<usize>,
}

pub fn encode(shape: &[usize], data: &[u8]) -> Rle {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut runs = Vec::new();
    let mut i = 0;
    while i < data.len() {
        if data[i] != 0 {
            let start = i;
            while i < data.len() && data[i] != 0 {
                i += 1;
            }
            runs.extend([start, i - start]);
        } else {
            i += 1;
        }
    }
    Rle { shape: shape.to_vec(), order: "C".into(), runs }
}

pub fn decode(rle: &Rle) -> Result<Vec<u8>, RleError> {
    if rle.order != "C" {
        return Err(RleError::Order(rle.order.clone()));
    }
    if rle.runs.len() % 2 != 0 {
        return Err(RleError::OddRuns);
    }
    let n: usize = rle.shape.iter().product();
    let mut out = vec![0u8; n];
    let mut end = 0;
    for (index, pair) in rle.runs.chunks_exact(2).enumerate() {
        let (start, len) = (pair[0], pair[1]);
        if len == 0 || (index > 0 && start <= end) || start.checked_add(len).is_none_or(|e| e > n) {
            return Err(RleError::BadRun { index });
        }
        out[start..start + len].fill(1);
        end = start + len;
    }
    Ok(out)
}
