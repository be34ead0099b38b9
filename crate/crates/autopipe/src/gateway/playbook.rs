//! Deterministic scripted backend: canned responses keyed by call kind,
//! consumed in file order. Exhaustion is always an error, never a repeat.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaybookEntry {
    pub kind: String,
    /// Optional routing tag (usually a substep id) so concurrent consumers
    /// stay deterministic.
    #[serde(default)]
    pub tag: Option<String>,
    pub response: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct PlaybookFile {
    #[serde(default, rename = "entry")]
    entries: Vec<PlaybookEntry>,
}

/// Ordered canned responses. `next` hands out the first unconsumed entry
/// whose kind matches and whose tag is absent or equal to the requested one.
pub struct Playbook {
    entries: Vec<PlaybookEntry>,
    consumed: Mutex<Vec<bool>>,
}

impl Playbook {
    pub fn new(entries: Vec<PlaybookEntry>) -> Playbook {
        let consumed = Mutex::new(vec![false; entries.len()]);
        Playbook { entries, consumed }
    }

    pub fn load(path: &Path) -> Result<Playbook, GatewayError> {
        let raw = std::fs::read_to_string(path).map_err(|e| GatewayError::Playbook {
            detail: format!("cannot read {}: {e}", path.display()),
        })?;
        let file: PlaybookFile = toml::from_str(&raw).map_err(|e| GatewayError::Playbook {
            detail: format!("cannot parse {}: {e}", path.display()),
        })?;
        Ok(Playbook::new(file.entries))
    }

    pub fn next(&self, kind: &str, tag: Option<&str>) -> Result<String, GatewayError> {
        let mut consumed = self.consumed.lock().expect("playbook lock poisoned");
        for (i, entry) in self.entries.iter().enumerate() {
            if consumed[i] || entry.kind != kind {
                continue;
            }
            match (&entry.tag, tag) {
                (None, _) => {}
                (Some(t), Some(req)) if t == req => {}
                _ => continue,
            }
            consumed[i] = true;
            return Ok(entry.response.clone());
        }
        let occurrence = self
            .entries
            .iter()
            .zip(consumed.iter())
            .filter(|(e, c)| e.kind == kind && **c)
            .count();
        Err(GatewayError::PlaybookExhausted {
            kind: kind.to_string(),
            occurrence,
        })
    }

    pub fn remaining(&self) -> usize {
        self.consumed
            .lock()
            .expect("playbook lock poisoned")
            .iter()
            .filter(|c| !**c)
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(kind: &str, tag: Option<&str>, response: &str) -> PlaybookEntry {
        PlaybookEntry {
            kind: kind.into(),
            tag: tag.map(str::to_string),
            response: response.into(),
        }
    }

    #[test]
    fn entries_consumed_in_order() {
        let pb = Playbook::new(vec![
            entry("codegen", None, "one"),
            entry("codegen", None, "two"),
        ]);
        assert_eq!(pb.next("codegen", Some("s1")).unwrap(), "one");
        assert_eq!(pb.next("codegen", Some("s1")).unwrap(), "two");
        assert!(matches!(
            pb.next("codegen", Some("s1")),
            Err(GatewayError::PlaybookExhausted { .. })
        ));
    }

    #[test]
    fn tagged_entries_route_by_tag() {
        let pb = Playbook::new(vec![
            entry("codegen", Some("s2"), "for-s2"),
            entry("codegen", Some("s1"), "for-s1"),
        ]);
        assert_eq!(pb.next("codegen", Some("s1")).unwrap(), "for-s1");
        assert_eq!(pb.next("codegen", Some("s2")).unwrap(), "for-s2");
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
[[entry]]
kind = "plan"
response = """
line one
line two"""

[[entry]]
kind = "codegen"
tag = "s1"
response = "def stage_x(df):\n    return df"
"#;
        let file: PlaybookFile = toml::from_str(text).unwrap();
        let pb = Playbook::new(file.entries);
        assert!(pb.next("plan", None).unwrap().contains("line two"));
        assert_eq!(pb.remaining(), 1);
    }
}
