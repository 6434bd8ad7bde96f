//! Named tensor container used for parameter checkpoints and optimizer
//! state.
//!
//! JSON layout:
//!
//! ```json
//! { "format_version": 1,
//!   "tensors": [ { "name": "head.q", "shape": [256, 96],
//!                  "re": [..row-major..], "im": [..row-major..] } ] }
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const TENSOR_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorContainer {
    pub format_version: u32,
    pub tensors: Vec<TensorRecord>,
}

impl TensorContainer {
    pub fn from_named<'a, T: Scalar>(named: impl IntoIterator<Item = (String, &'a Tensor<T>)>) -> Self {
        let tensors = named
            .into_iter()
            .map(|(name, t)| TensorRecord {
                name,
                shape: t.shape().to_vec(),
                re: t.re().iter().map(|v| v.as_f64()).collect(),
                im: t.im().iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        TensorContainer {
            format_version: TENSOR_FORMAT_VERSION,
            tensors,
        }
    }

    pub fn check_version(&self) -> Result<()> {
        if self.format_version != TENSOR_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: "tensor container",
                found: self.format_version,
                expected: TENSOR_FORMAT_VERSION,
            });
        }
        Ok(())
    }

    /// Copies records into `targets`, matching names in order and checking
    /// shapes.
    pub fn restore_into<T: Scalar>(&self, targets: Vec<(String, &mut Tensor<T>)>) -> Result<()> {
        self.check_version()?;
        if targets.len() != self.tensors.len() {
            return Err(Error::dim(format!(
                "container holds {} tensors, model expects {}",
                self.tensors.len(),
                targets.len()
            )));
        }
        for (rec, (name, dst)) in self.tensors.iter().zip(targets) {
            if rec.name != name {
                return Err(Error::contract(format!("expected tensor {name}, found {}", rec.name)));
            }
            if rec.shape != dst.shape() {
                return Err(Error::dim(format!(
                    "tensor {name}: stored shape {:?}, model shape {:?}",
                    rec.shape,
                    dst.shape()
                )));
            }
            let re = rec.re.iter().map(|&v| T::of(v)).collect();
            let im = rec.im.iter().map(|&v| T::of(v)).collect();
            *dst = Tensor::from_parts(&rec.shape, re, im)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_exact() {
        let t = Tensor::from_parts(&[2], vec![0.1 + 0.2, -1e-300], vec![std::f64::consts::PI, 7.0]).unwrap();
        let c = TensorContainer::from_named([("x".to_string(), &t)]);
        let text = serde_json::to_string(&c).unwrap();
        let back: TensorContainer = serde_json::from_str(&text).unwrap();
        let mut restored = Tensor::<f64>::zeros(&[2]);
        back.restore_into(vec![("x".to_string(), &mut restored)]).unwrap();
        assert_eq!(restored, t);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let t = Tensor::<f64>::zeros(&[2, 3]);
        let c = TensorContainer::from_named([("w".to_string(), &t)]);
        let mut other = Tensor::<f64>::zeros(&[3, 2]);
        let err = c.restore_into(vec![("w".to_string(), &mut other)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }
}
