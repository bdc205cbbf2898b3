use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Bidirectional mapping between external string ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct IdTable {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `name`, inserting it if absent.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&idx) = self.index.get(name) {
            return idx;
        }
        let idx = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), idx);
        idx
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> Option<&str> {
        self.names.get(idx).map(String::as_str)
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

impl From<Vec<String>> for IdTable {
    fn from(names: Vec<String>) -> Self {
        let mut table = IdTable::new();
        for name in &names {
            table.intern(name);
        }
        table
    }
}

impl From<IdTable> for Vec<String> {
    fn from(table: IdTable) -> Self {
        table.names
    }
}
