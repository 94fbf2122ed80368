//! Named parameter registry, partitioned into encoder / predictor / joiner
//! groups. Registration order is fixed by model construction, which keeps
//! iteration, checkpointing and gradient maps deterministic.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    Predictor,
    Joiner,
}

impl ParamGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Predictor => "predictor",
            ParamGroup::Joiner => "joiner",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "encoder" => Ok(ParamGroup::Encoder),
            "predictor" => Ok(ParamGroup::Predictor),
            "joiner" => Ok(ParamGroup::Joiner),
            other => Err(Error::config(format!("unknown parameter group {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// Gradients keyed by parameter name. BTreeMap keeps reduction order
/// deterministic.
pub type GradMap = BTreeMap<String, Vec<Real>>;

/// acc += scale * other, allocating missing entries as zeros.
pub fn grad_map_axpy(acc: &mut GradMap, other: &GradMap, scale: Real) {
    for (name, g) in other {
        let slot = acc
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; g.len()]);
        for (a, b) in slot.iter_mut().zip(g) {
            *a += scale * b;
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
    /// Set while a noise perturbation is outstanding.
    pub(crate) perturbed: bool,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, group: ParamGroup, mut tensor: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter {name:?}")));
        }
        tensor.requires_grad = true;
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            group,
            tensor,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].tensor)
            .ok_or_else(|| Error::Lookup(name.to_string()))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].tensor),
            None => Err(Error::Lookup(name.to_string())),
        }
    }

    pub fn group_of(&self, name: &str) -> Result<ParamGroup> {
        self.index
            .get(name)
            .map(|&i| self.entries[i].group)
            .ok_or_else(|| Error::Lookup(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    /// 2-D weight matrices belonging to `group`, in registration order.
    pub fn matrices_in(&self, group: ParamGroup) -> impl Iterator<Item = &ParamEntry> {
        self.entries
            .iter()
            .filter(move |e| e.group == group && e.tensor.is_matrix())
    }

    /// Insert every parameter into `tape` as a gradient-tracked leaf.
    pub fn bind(&self, tape: &mut Tape) -> ParamVars {
        let mut vars = HashMap::with_capacity(self.entries.len());
        for e in &self.entries {
            vars.insert(e.name.clone(), tape.leaf(&e.tensor));
        }
        ParamVars { vars }
    }

    /// Read gradients off a tape into a dense map (zeros where a parameter
    /// did not participate in the loss).
    pub fn pull_grads(&self, tape: &Tape, vars: &ParamVars) -> GradMap {
        let mut out = GradMap::new();
        for e in &self.entries {
            let v = vars.vars[&e.name];
            let g = match tape.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; e.tensor.numel()],
            };
            out.insert(e.name.clone(), g);
        }
        out
    }

    /// Store gradients into each tensor's grad slot.
    pub fn set_grads(&mut self, grads: &GradMap) -> Result<()> {
        for e in self.entries.iter_mut() {
            if let Some(g) = grads.get(&e.name) {
                e.tensor.set_grad(g.clone())?;
            }
        }
        Ok(())
    }
}

/// Tape handles for every bound parameter of one forward pass.
pub struct ParamVars {
    vars: HashMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Lookup(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}
