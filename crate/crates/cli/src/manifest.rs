//! Run manifests: a version line followed by `key=value` lines, in the order
//! the values were recorded.

use std::fmt::Display;
use std::path::Path;

use consba::blockio::write_atomic;

pub const MANIFEST_VERSION: &str = "consba-manifest 1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut m = RunManifest::default();
        m.set("command", command);
        m
    }

    /// Records `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = String::from(MANIFEST_VERSION);
        s.push('\n');
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Option<RunManifest> {
        let mut lines = text.lines();
        if lines.next()? != MANIFEST_VERSION {
            return None;
        }
        let mut m = RunManifest::default();
        for line in lines.filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=')?;
            m.entries.push((k.to_string(), v.to_string()));
        }
        Some(m)
    }

    pub fn write(&self, path: &Path) -> consba::Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}
