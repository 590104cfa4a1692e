//! Line-based `key = value` reports grouped into `[section]`s.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

const HEADER: &str = "# KLOC-REPORT v1";
const MEDIAN_NOTE: &str = "# medians of even-length lists take the lower middle element";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            entries: Vec::new(),
        }
    }

    /// Appends an entry. Floats print in their shortest round-trip form.
    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Parses the value of `key`.
    pub fn value<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Config(format!("section [{}] has no key `{key}`", self.name)))?;
        raw.parse()
            .map_err(|_| Error::Config(format!("[{}] {key} = {raw} does not parse", self.name)))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub sections: Vec<Section>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts a new section and returns it for filling.
    pub fn section(&mut self, name: impl Into<String>) -> &mut Section {
        self.sections.push(Section::new(name));
        self.sections.last_mut().unwrap()
    }

    /// First section called `name`.
    pub fn find(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut report = Report::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if name.is_empty() {
                    return Err(Error::parse(i + 1, "empty section name"));
                }
                report.section(name);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(i + 1, format!("expected `key = value`, found `{line}`"))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(i + 1, "empty key"));
            }
            let section = report
                .sections
                .last_mut()
                .ok_or_else(|| Error::parse(i + 1, "entry before the first section"))?;
            section.push(key, value.trim());
        }
        Ok(report)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{HEADER}")?;
        writeln!(f, "{MEDIAN_NOTE}")?;
        for s in &self.sections {
            writeln!(f)?;
            writeln!(f, "[{}]", s.name)?;
            for (k, v) in &s.entries {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}
