//! Sectioned plain-text files.
//!
//! ```text
//! # comment
//! [initial]
//! d2 = 2*sin(k)
//! d3 = 2*(g - cos(k))
//! param.g = 0
//!
//! [final]
//! d2 = 2*sin(k)
//! d3 = 2*(g - cos(k))
//! param.g = 1.3
//! ```
//!
//! Sections hold `key = value` lines. `#` starts a comment anywhere on a
//! line. In `[initial]` and `[final]` the keys are `d0`..`d3` (missing
//! components default to `0`) and `param.<name> = <float>`.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{parse_expression, Expr, ModelDefinition};

#[derive(Clone, Debug, PartialEq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct FileError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

fn ferr(line: usize, column: usize, message: impl Into<String>) -> FileError {
    FileError {
        line,
        column,
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
    /// 1-based column where `value` starts.
    pub column: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SectionFile {
    pub sections: Vec<Section>,
}

impl SectionFile {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}

pub fn parse_sections(text: &str) -> Result<SectionFile, FileError> {
    let mut file = SectionFile::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len();
        if let Some(rest) = trimmed.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(ferr(line_no, indent + 1, "section header missing `]`"));
            };
            let name = name.trim();
            if name.is_empty() {
                return Err(ferr(line_no, indent + 1, "empty section name"));
            }
            if file.section(name).is_some() {
                return Err(ferr(line_no, indent + 1, format!("duplicate section [{name}]")));
            }
            file.sections.push(Section {
                name: name.to_string(),
                line: line_no,
                entries: Vec::new(),
            });
            continue;
        }
        let Some(eq) = content.find('=') else {
            return Err(ferr(line_no, indent + 1, "expected `key = value`"));
        };
        let key = content[..eq].trim();
        if key.is_empty() {
            return Err(ferr(line_no, indent + 1, "missing key before `=`"));
        }
        let after = &content[eq + 1..];
        let lead = after.len() - after.trim_start().len();
        let value = after.trim();
        let column = eq + 1 + lead + 1;
        let Some(section) = file.sections.last_mut() else {
            return Err(ferr(line_no, indent + 1, "entry appears before any [section]"));
        };
        if section.get(key).is_some() {
            return Err(ferr(line_no, indent + 1, format!("duplicate key `{key}`")));
        }
        section.entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line: line_no,
            column,
        });
    }
    Ok(file)
}

/// A parsed model file: the `[initial]`/`[final]` pair plus every section
/// verbatim for callers that read further sections.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub initial: Option<ModelDefinition>,
    pub final_: Option<ModelDefinition>,
    pub sections: SectionFile,
}

fn parse_definition(section: &Section) -> Result<ModelDefinition, FileError> {
    let mut exprs: [Option<Expr>; 4] = [None, None, None, None];
    let mut params = BTreeMap::new();
    for e in &section.entries {
        if let Some(name) = e.key.strip_prefix("param.") {
            let valid = !name.is_empty()
                && name.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid || name == "k" {
                return Err(ferr(e.line, 1, format!("invalid parameter name `{name}`")));
            }
            let v: f64 = e
                .value
                .parse()
                .map_err(|_| ferr(e.line, e.column, format!("`{}` is not a number", e.value)))?;
            if !v.is_finite() {
                return Err(ferr(e.line, e.column, "parameter values must be finite"));
            }
            params.insert(name.to_string(), v);
            continue;
        }
        let slot = match e.key.as_str() {
            "d0" => 0,
            "d1" => 1,
            "d2" => 2,
            "d3" => 3,
            other => {
                return Err(ferr(
                    e.line,
                    1,
                    format!("unknown key `{other}` in [{}]", section.name),
                ))
            }
        };
        let ast = parse_expression(&e.value)
            .map_err(|pe| ferr(e.line, e.column + pe.offset, pe.message))?;
        exprs[slot] = Some(ast);
    }
    let def = ModelDefinition::new(exprs.map(|e| e.unwrap_or(Expr::Num(0.0))), params);
    def.validate()
        .map_err(|err| ferr(section.line, 1, format!("[{}]: {err}", section.name)))?;
    Ok(def)
}

pub fn parse_model_file(text: &str) -> Result<ModelFile, FileError> {
    let sections = parse_sections(text)?;
    let initial = sections.section("initial").map(parse_definition).transpose()?;
    let final_ = sections.section("final").map(parse_definition).transpose()?;
    match (&initial, &final_) {
        (Some(_), None) | (None, Some(_)) => {
            let line = sections
                .section("initial")
                .or(sections.section("final"))
                .map_or(1, |s| s.line);
            return Err(ferr(line, 1, "[initial] and [final] must be given together"));
        }
        _ => {}
    }
    Ok(ModelFile {
        initial,
        final_,
        sections,
    })
}
