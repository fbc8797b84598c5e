use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Named, ordered real parameter vector.
///
/// Names are unique and non-empty. Lookup of an undeclared name is an error.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    names: Vec<String>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new<S: Into<String>>(entries: impl IntoIterator<Item = (S, f64)>) -> Result<Self> {
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (name, value) in entries {
            let name = name.into();
            if name.is_empty() {
                return Err(Error::invalid("parameter name", "names must be non-empty"));
            }
            if names.contains(&name) {
                return Err(Error::DuplicateName(name));
            }
            names.push(name);
            values.push(value);
        }
        Ok(ParamVector { names, values })
    }

    pub(crate) fn from_parts(names: Vec<String>, values: Vec<f64>) -> Self {
        debug_assert_eq!(names.len(), values.len());
        ParamVector { names, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Result<f64> {
        self.index_of(name)
            .map(|i| self.values[i])
            .ok_or_else(|| Error::UnknownName(name.to_string()))
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::UnknownName(name.to_string()))?;
        self.values[i] = value;
        Ok(())
    }

    /// Returns a copy with the named entries replaced.
    pub fn with(&self, updates: &[(&str, f64)]) -> Result<Self> {
        let mut out = self.clone();
        for (name, value) in updates {
            out.set(name, *value)?;
        }
        Ok(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, (name, value)) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{name}={value:.6}")?;
        }
        write!(f, ")")
    }
}

impl Serialize for ParamVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.len()))?;
        for (name, value) in self.iter() {
            map.serialize_entry(name, &value)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ParamVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ParamVisitor;

        impl<'de> Visitor<'de> for ParamVisitor {
            type Value = ParamVector;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping parameter names to numbers")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<ParamVector, A::Error> {
                let mut entries: Vec<(String, f64)> = Vec::new();
                while let Some((name, value)) = access.next_entry::<String, f64>()? {
                    entries.push((name, value));
                }
                ParamVector::new(entries).map_err(serde::de::Error::custom)
            }
        }

        deserializer.deserialize_map(ParamVisitor)
    }
}
