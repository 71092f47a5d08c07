//! Class identifiers and the name ↔ id mapping.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub usize);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// All label names of a dataset (fine classes first, then superclasses).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelSpace {
    names: Vec<String>,
    index: BTreeMap<String, ClassId>,
}

impl LabelSpace {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut space = LabelSpace::default();
        for n in names {
            let n = n.into();
            if space.index.contains_key(&n) {
                return Err(Error::Validation(format!("duplicate class name `{n}`")));
            }
            space.push(n);
        }
        Ok(space)
    }

    fn push(&mut self, name: String) -> ClassId {
        let id = ClassId(self.names.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        id
    }

    /// Returns the id of `name`, adding it when absent.
    pub fn intern(&mut self, name: &str) -> ClassId {
        match self.index.get(name) {
            Some(&id) => id,
            None => self.push(name.to_string()),
        }
    }

    pub fn id(&self, name: &str) -> Option<ClassId> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<ClassId> {
        self.id(name)
            .ok_or_else(|| Error::Validation(format!("unknown class `{name}`")))
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}
