//! Minimal `key=value` text format with optional `[section]` headers, used
//! by the channel-configuration and calibration files.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Section {
    pub name: String,
    pub entries: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: impl Into<String>) -> Self {
        Section {
            name: name.into(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| {
            Error::format(format!("section [{}] is missing key `{key}`", self.name))
        })
    }

    pub fn parse_num<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.trim()
            .parse()
            .map_err(|_| Error::format(format!("[{}] {key}: cannot parse `{raw}`", self.name)))
    }

    pub fn parse_array<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let raw = self.require(key)?;
        raw.split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| Error::format(format!("[{}] {key}: cannot parse `{v}`", self.name)))
            })
            .collect()
    }
}

/// Parses text into sections. Keys before the first header land in a
/// section with an empty name. `#` starts a comment line.
pub fn parse(text: &str) -> Result<Vec<Section>> {
    let mut sections = vec![Section::default()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::format(format!("line {}: unterminated section header", lineno + 1)))?;
            sections.push(Section::new(name.trim()));
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("line {}: expected key=value", lineno + 1)))?;
        sections
            .last_mut()
            .expect("at least one section")
            .push(k.trim(), v.trim());
    }
    if sections[0].entries.is_empty() {
        sections.remove(0);
    }
    Ok(sections)
}

pub fn render(sections: &[Section]) -> String {
    let mut out = String::new();
    for (i, s) in sections.iter().enumerate() {
        if !s.name.is_empty() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("[{}]\n", s.name));
        }
        for (k, v) in &s.entries {
            out.push_str(&format!("{k}={v}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_comments() {
        let text = "# header\nversion=1\n\n[a]\nx = 1,2,3\n[b]\ny=hello\n";
        let s = parse(text).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[0].get("version"), Some("1"));
        assert_eq!(s[1].parse_array::<i32>("x").unwrap(), vec![1, 2, 3]);
        assert_eq!(s[2].require("y").unwrap(), "hello");
        assert!(s[2].require("z").is_err());
        assert_eq!(parse(&render(&s)).unwrap(), s);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse("[open\n").is_err());
        assert!(parse("novalue\n").is_err());
    }
}
