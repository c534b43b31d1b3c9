use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::forward::{model_forward_with, ParamSource};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numeric_core::{Prng, Tape, Var};
use crate::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Reconciliation,
    AttrPrior,
    InstPrior,
    AttrPost,
    InstPost,
    ChannelFusion,
    HeadFusion,
}

/// Owner of a parameter range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub layer: usize,
    pub head: Option<usize>,
    pub channel: Option<usize>,
    pub component: Component,
}

/// Flat parameter vector with the slot that owns each range. Slots appear
/// in forward order and partition the vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    values: Vec<f64>,
    slots: Vec<(Slot, Range<usize>)>,
    input_shape: (usize, usize),
}

/// How a freshly allocated slot is filled.
pub(crate) enum Init {
    /// `uniform(−1/√fan_in, 1/√fan_in)`.
    Uniform {
        fan_in: usize,
    },
    Values(Vec<f64>),
}

struct Allocator {
    prng: Prng,
    values: Vec<f64>,
    slots: Vec<(Slot, Range<usize>)>,
}

impl ParamSource for Allocator {
    fn take(&mut self, tape: &mut Tape, slot: Slot, len: usize, init: Init) -> Result<Var> {
        let start = self.values.len();
        let block: Vec<f64> = match init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..len).map(|_| self.prng.uniform(-bound, bound)).collect()
            }
            Init::Values(v) => {
                if v.len() != len {
                    return Err(Error::ParamLength {
                        context: "initial values".into(),
                        expected: len,
                        found: v.len(),
                    });
                }
                v
            }
        };
        self.values.extend_from_slice(&block);
        self.slots.push((slot, start..start + len));
        Ok(tape.constant(Matrix::row_vector(block)))
    }
}

/// Serves slots from one `1×L` node holding the whole store.
pub(crate) struct Reader<'a> {
    store: &'a ParameterStore,
    all: Var,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(store: &'a ParameterStore, all: Var) -> Self {
        Self { store, all }
    }
}

impl ParamSource for Reader<'_> {
    fn take(&mut self, tape: &mut Tape, slot: Slot, len: usize, _init: Init) -> Result<Var> {
        let range = self.store.range(slot)?;
        if range.len() != len {
            return Err(Error::ParamLength {
                context: format!("parameter slot {slot:?}"),
                expected: len,
                found: range.len(),
            });
        }
        tape.slice_cols(self.all, range.start, len)
    }
}

impl ParameterStore {
    /// Lays out and initializes every slot by tracing the model on an
    /// all-ones batch of `input_shape = (b, m)`.
    pub fn init(model: &ModelConfig, input_shape: (usize, usize), seed: u64) -> Result<Self> {
        let mut alloc = Allocator {
            prng: Prng::new(seed).fork("parameters"),
            values: Vec::new(),
            slots: Vec::new(),
        };
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::filled(input_shape.0, input_shape.1, 1.0));
        model_forward_with(&mut tape, model, x, &mut alloc, None)?;
        Ok(Self {
            values: alloc.values,
            slots: alloc.slots,
            input_shape,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn slots(&self) -> &[(Slot, Range<usize>)] {
        &self.slots
    }

    pub fn set_values(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::ParamLength {
                context: "parameter store".into(),
                expected: self.values.len(),
                found: values.len(),
            });
        }
        self.values = values;
        Ok(())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn range(&self, slot: Slot) -> Result<Range<usize>> {
        self.slots
            .iter()
            .find(|(s, _)| *s == slot)
            .map(|(_, r)| r.clone())
            .ok_or_else(|| Error::InvalidParameter(format!("no parameter slot {slot:?}")))
    }

    pub fn slot_values(&self, slot: Slot) -> Result<&[f64]> {
        Ok(&self.values[self.range(slot)?])
    }

    pub fn set_slot(&mut self, slot: Slot, values: &[f64]) -> Result<()> {
        let range = self.range(slot)?;
        if range.len() != values.len() {
            return Err(Error::ParamLength {
                context: format!("parameter slot {slot:?}"),
                expected: range.len(),
                found: values.len(),
            });
        }
        self.values[range].copy_from_slice(values);
        Ok(())
    }

    /// Parameter count of one layer.
    pub fn layer_total(&self, layer: usize) -> usize {
        self.slots
            .iter()
            .filter(|(s, _)| s.layer == layer)
            .map(|(_, r)| r.len())
            .sum()
    }
}
