use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::text::{FuzzInput, StopwordSet};

/// One dataset line. Generation seeds carry `reference`, classification seeds `label`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRecord {
    pub id: String,
    #[serde(default)]
    pub prompt: String,
    pub example: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedKind {
    Generation,
    Classification,
}

impl SeedRecord {
    pub fn kind(&self) -> Option<SeedKind> {
        match (&self.reference, &self.label) {
            (Some(_), None) => Some(SeedKind::Generation),
            (None, Some(_)) => Some(SeedKind::Classification),
            _ => None,
        }
    }

    pub fn to_input(&self, stops: &StopwordSet) -> FuzzInput {
        let target = self.reference.as_ref().or(self.label.as_ref()).cloned().unwrap_or_default();
        FuzzInput::new(self.id.clone(), &self.prompt, &self.example, target, stops)
    }
}

/// Parses JSONL seed records. Blank lines are skipped.
pub fn parse_dataset(contents: &str, path: &Path) -> Result<Vec<SeedRecord>, Error> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut kind = None;
    for (i, line) in contents.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SeedRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let k = rec
            .kind()
            .ok_or_else(|| Error::parse(path, lineno, "exactly one of `reference` or `label` is required"))?;
        if *kind.get_or_insert(k) != k {
            return Err(Error::parse(path, lineno, "dataset mixes generation and classification seeds"));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::parse(path, lineno, format!("duplicate seed id `{}`", rec.id)));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<SeedRecord>, Error> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vec<SeedRecord>, Error> {
        parse_dataset(s, Path::new("d.jsonl"))
    }

    #[test]
    fn parses_generation_records() {
        let recs = parse(
            "{\"id\":\"a\",\"prompt\":\"Translate:\",\"example\":\"Hallo\",\"reference\":\"Hello\"}\n\n\
             {\"id\":\"b\",\"example\":\"Tschuess\",\"reference\":\"Bye\"}\n",
        )
        .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].prompt, "");
        assert_eq!(recs[0].kind(), Some(SeedKind::Generation));
        let input = recs[0].to_input(&StopwordSet::default());
        assert_eq!(input.reference, "Hello");
        assert_eq!(input.len(), 3);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse("{\"id\":\"a\",\"example\":\"x\",\"reference\":\"y\"}\n{oops\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let err = parse("{\"id\":\"a\",\"example\":\"x\"}\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));

        let err = parse(
            "{\"id\":\"a\",\"example\":\"x\",\"reference\":\"y\"}\n{\"id\":\"a\",\"example\":\"z\",\"reference\":\"w\"}\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate"));

        let err = parse(
            "{\"id\":\"a\",\"example\":\"x\",\"reference\":\"y\"}\n{\"id\":\"b\",\"example\":\"z\",\"label\":\"pos\"}\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }
}
