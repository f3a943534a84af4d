//! Named parameter tensors and their on-disk checkpoint layout.
//!
//! A checkpoint directory holds one `<name>.ltvt` per tensor and a
//! `manifest.txt` with one `name shape role` line per tensor, e.g.
//! `pred.conv0.weight 16x1x3x3 predictor`.

use std::fs;
use std::path::Path;

use crate::error::{LtvError, Result};
use crate::tensor::io::{read_ltvt, write_ltvt};
use crate::tensor::{Tape, Tensor, Var};

pub const MANIFEST: &str = "manifest.txt";

/// Optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Predictor,
    Solver,
}

impl ParamGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Predictor => "predictor",
            ParamGroup::Solver => "solver",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "predictor" => Ok(ParamGroup::Predictor),
            "solver" => Ok(ParamGroup::Solver),
            _ => Err(LtvError::Format(format!("unknown parameter role '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: ParamGroup,
}

/// Ordered collection of parameters; order is the binding order on a tape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor, group: ParamGroup) {
        self.params.push(Param { name: name.into(), value, group });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn param(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn param_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    /// Put every parameter on `tape`, as trainable leaves or as constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Vec<Var<'t>> {
        self.params
            .iter()
            .map(|p| if trainable { tape.param(p.value.clone()) } else { tape.constant(p.value.clone()) })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = String::new();
        for p in &self.params {
            let shape = if p.value.rank() == 0 {
                "scalar".to_string()
            } else {
                p.value.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
            };
            manifest.push_str(&format!("{} {} {}\n", p.name, shape, p.group.as_str()));
            write_ltvt(&dir.join(format!("{}.ltvt", p.name)), &p.value)?;
        }
        fs::write(dir.join(MANIFEST), manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(dir.join(MANIFEST))?;
        let mut store = ParamStore::new();
        for (lineno, line) in manifest.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [name, shape, role] = fields[..] else {
                return Err(LtvError::Format(format!("manifest line {}: expected 'name shape role'", lineno + 1)));
            };
            let value = read_ltvt(&dir.join(format!("{name}.ltvt")))?;
            let declared: Vec<usize> = if shape == "scalar" {
                Vec::new()
            } else {
                shape
                    .split('x')
                    .map(|d| d.parse().map_err(|_| LtvError::Format(format!("bad extent in '{shape}'"))))
                    .collect::<Result<_>>()?
            };
            if declared != value.shape() {
                return Err(LtvError::Format(format!(
                    "{name}: manifest shape {declared:?} but tensor is {:?}",
                    value.shape()
                )));
            }
            store.push(name, value, ParamGroup::parse(role)?);
        }
        Ok(store)
    }
}
