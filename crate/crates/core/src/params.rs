use std::collections::HashMap;

use kvae_autodiff::{Tape, Tensor, Var};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Named parameters in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(CoreError::Config(format!("duplicate parameter {name:?}")));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param { name: name.to_string(), value, trainable });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| CoreError::Config(format!("unknown parameter {name:?}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.params[i].value),
            None => Err(CoreError::Config(format!("unknown parameter {name:?}"))),
        }
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        match self.index.get(name) {
            Some(&i) => {
                self.params[i].trainable = trainable;
                Ok(())
            }
            None => Err(CoreError::Config(format!("unknown parameter {name:?}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries.
    pub fn size(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Result<Bound<'t>> {
        let mut vars = HashMap::with_capacity(self.params.len());
        for p in &self.params {
            vars.insert(p.name.clone(), tape.param(&p.name, p.value.clone(), p.trainable)?);
        }
        Ok(Bound { tape, vars })
    }

    /// Like [`ParamStore::bind`] but nothing is tracked.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Result<Bound<'t>> {
        let mut vars = HashMap::with_capacity(self.params.len());
        for p in &self.params {
            vars.insert(p.name.clone(), tape.param(&p.name, p.value.clone(), false)?);
        }
        Ok(Bound { tape, vars })
    }
}

/// Parameters registered on one tape.
pub struct Bound<'t> {
    pub tape: &'t Tape,
    vars: HashMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| CoreError::Config(format!("parameter {name:?} is not bound")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }
}
