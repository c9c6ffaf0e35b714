use std::collections::HashMap;
use std::fmt::Write as _;

use super::optim::{adam_update, Optimizer};
use super::tensor::Tensor;
use super::AutodiffError;

const FORMAT_HEADER: &str = "molbayes-params v1";

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    name: String,
    value: Tensor,
    grad: Tensor,
    first_moment: Tensor,
    second_moment: Tensor,
}

/// Named parameter tensors with gradient and Adam moment slots.
///
/// Slots keep insertion order; that order is the flattening order used by
/// [`ParamStore::flatten`] and by the serialized container.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    tag: String,
    slots: Vec<Slot>,
    index: HashMap<String, usize>,
    step: u64,
}

impl ParamStore {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            slots: Vec::new(),
            index: HashMap::new(),
            step: 0,
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Adds a slot and returns its id. Re-using a name replaces nothing and
    /// is reported as an error.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<usize, AutodiffError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AutodiffError::DuplicateSlot(name));
        }
        let zeros = |t: &Tensor| Tensor::new(t.shape().to_vec(), vec![0.0; t.len()]).expect("shape");
        let slot = Slot {
            grad: zeros(&value),
            first_moment: zeros(&value),
            second_moment: zeros(&value),
            name: name.clone(),
            value,
        };
        self.slots.push(slot);
        self.index.insert(name, self.slots.len() - 1);
        Ok(self.slots.len() - 1)
    }

    pub fn slot_id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<usize, AutodiffError> {
        self.slot_id(name)
            .ok_or_else(|| AutodiffError::MissingSlot(name.to_string()))
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.slots.iter().map(|s| s.value.len()).sum()
    }

    pub fn name(&self, slot: usize) -> &str {
        &self.slots[slot].name
    }

    pub fn value(&self, slot: usize) -> &Tensor {
        &self.slots[slot].value
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.slots[slot].value
    }

    pub fn grad(&self, slot: usize) -> &Tensor {
        &self.slots[slot].grad
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slot_id(name).map(|i| self.value(i))
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// `(name, shape)` for every slot, in flattening order.
    pub fn schema(&self) -> Vec<(String, Vec<usize>)> {
        self.slots
            .iter()
            .map(|s| (s.name.clone(), s.value.shape().to_vec()))
            .collect()
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            s.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, slot: usize, grad: &Tensor) -> Result<(), AutodiffError> {
        let s = &mut self.slots[slot];
        if s.grad.len() != grad.len() {
            return Err(AutodiffError::LengthMismatch {
                expected: s.grad.len(),
                actual: grad.len(),
            });
        }
        s.grad.add_assign(grad);
        Ok(())
    }

    /// Position of `slot` inside the flat parameter vector.
    pub fn slot_range(&self, slot: usize) -> std::ops::Range<usize> {
        let start: usize = self.slots[..slot].iter().map(|s| s.value.len()).sum();
        start..start + self.slots[slot].value.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for s in &self.slots {
            out.extend_from_slice(s.value.data());
        }
        out
    }

    pub fn flatten_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for s in &self.slots {
            out.extend_from_slice(s.grad.data());
        }
        out
    }

    fn write_flat(
        &mut self,
        flat: &[f64],
        pick: impl Fn(&mut Slot) -> &mut Tensor,
    ) -> Result<(), AutodiffError> {
        let n = self.num_params();
        if flat.len() != n {
            return Err(AutodiffError::LengthMismatch {
                expected: n,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for s in &mut self.slots {
            let t = pick(s);
            let len = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Overwrites all parameter values from a flat vector in slot order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), AutodiffError> {
        self.write_flat(flat, |s| &mut s.value)
    }

    pub fn set_flat_grads(&mut self, flat: &[f64]) -> Result<(), AutodiffError> {
        self.write_flat(flat, |s| &mut s.grad)
    }

    /// A copy of this store holding `flat` as its values.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamStore, AutodiffError> {
        let mut out = self.clone();
        out.set_flat(flat)?;
        Ok(out)
    }

    /// Applies one optimizer step using the stored gradients.
    pub fn apply(&mut self, optimizer: &Optimizer) {
        match optimizer {
            Optimizer::Sgd { lr } => {
                for s in &mut self.slots {
                    for (p, g) in s.value.data_mut().iter_mut().zip(s.grad.data()) {
                        *p -= lr * g;
                    }
                }
            }
            Optimizer::Adam(cfg) => {
                self.step += 1;
                for s in &mut self.slots {
                    adam_update(
                        s.value.data_mut(),
                        s.grad.data(),
                        s.first_moment.data_mut(),
                        s.second_moment.data_mut(),
                        self.step,
                        cfg,
                    );
                }
            }
        }
    }

    /// Textual container: a schema header followed by one line of values per
    /// slot. Values are written in shortest round-trip form, so parsing the
    /// output reproduces every bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FORMAT_HEADER}");
        let _ = writeln!(out, "tag {}", self.tag);
        let _ = writeln!(out, "slots {}", self.slots.len());
        for s in &self.slots {
            let dims: Vec<String> = s.value.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "slot {} {}", s.name, dims.join(" "));
            let vals: Vec<String> = s.value.data().iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", vals.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, AutodiffError> {
        let bad = |msg: &str| AutodiffError::Format(msg.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(FORMAT_HEADER) {
            return Err(bad("missing header"));
        }
        let tag = lines
            .next()
            .and_then(|l| l.strip_prefix("tag "))
            .ok_or_else(|| bad("missing tag"))?;
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("slots "))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| bad("missing slot count"))?;
        let mut store = ParamStore::new(tag);
        for _ in 0..count {
            let head = lines
                .next()
                .and_then(|l| l.strip_prefix("slot "))
                .ok_or_else(|| bad("missing slot line"))?;
            let mut parts = head.split_whitespace();
            let name = parts.next().ok_or_else(|| bad("missing slot name"))?;
            let shape = parts
                .map(|d| d.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("bad dimension"))?;
            let values = lines
                .next()
                .unwrap_or("")
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad("bad value"))?;
            store.insert(name, Tensor::new(shape, values)?)?;
        }
        Ok(store)
    }
}
