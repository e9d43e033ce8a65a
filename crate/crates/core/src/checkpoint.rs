//! Filter and adversary checkpoints.
//!
//! The first line is a JSON header naming each tensor and its shape; the
//! values follow, one per line, tensor by tensor in header order, matrices
//! column-major. Values are written in shortest round-trip form, so a load
//! reproduces the saved weights bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversary::MlpParams;
use crate::filter::FilterWeights;
use crate::{Error, Result};

const FORMAT: &str = "meterguard-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    horizon: usize,
    prior: [f64; 2],
    step: usize,
    tensors: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub horizon: usize,
    /// Training class distribution in one-hot index order, as used by the
    /// distortion penalty.
    pub prior: [f64; 2],
    /// Training steps taken.
    pub step: usize,
    pub filter: FilterWeights,
    pub adversary: MlpParams,
}

fn shape_of(rows: usize, cols: usize) -> Vec<usize> {
    if cols == 1 {
        vec![rows]
    } else {
        vec![rows, cols]
    }
}

impl Checkpoint {
    fn header(&self) -> Header {
        let h = self.horizon;
        let mut tensors = vec![
            TensorSpec {
                name: "gamma".into(),
                shape: vec![h],
            },
            TensorSpec {
                name: "v".into(),
                shape: vec![h, 2],
            },
        ];
        tensors.extend(self.adversary.layout().iter().map(|&(name, r, c)| TensorSpec {
            name: name.into(),
            shape: shape_of(r, c),
        }));
        Header {
            format: FORMAT.into(),
            version: VERSION,
            horizon: h,
            prior: self.prior,
            step: self.step,
            tensors,
        }
    }

    pub fn to_text(&self) -> String {
        let header = serde_json::to_string(&self.header()).expect("header serializes");
        let mut out = header;
        out.push('\n');
        let values = self.filter.to_flat().into_iter().chain(self.adversary.to_flat());
        for v in values {
            out.push_str(&format!("{v:e}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| Error::Checkpoint("empty file".into()))?;
        let header: Header =
            serde_json::from_str(first).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let h = header.horizon;
        let template = Checkpoint {
            horizon: h,
            prior: header.prior,
            step: header.step,
            filter: FilterWeights::zeros(h),
            adversary: MlpParams::zeros(h),
        };
        if header.tensors != template.header().tensors {
            return Err(Error::Checkpoint(format!(
                "tensor shapes do not match a horizon-{h} filter and adversary"
            )));
        }
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Checkpoint(format!("value {i}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let nf = 3 * h;
        let expected = nf + template.adversary.num_params();
        if values.len() != expected {
            return Err(Error::Checkpoint(format!(
                "{} values, header implies {expected}",
                values.len()
            )));
        }
        let filter = FilterWeights::from_flat(h, &values[..nf])?;
        let adversary = template.adversary.from_flat_like(&values[nf..])?;
        filter.validate()?;
        adversary.validate()?;
        Ok(Checkpoint {
            filter,
            adversary,
            ..template
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
