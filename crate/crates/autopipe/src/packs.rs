//! Pluggable domain knowledge packs: declarative data files with keywords
//! for auto-detection, expert prompts, and demand-driven recipes/gotchas.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::tokenize;

#[derive(Debug, Error)]
pub enum PackError {
    #[error("cannot read pack {path}: {detail}")]
    Read { path: String, detail: String },
    #[error("cannot parse pack {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("pack {0} has no keywords")]
    NoKeywords(String),
    #[error("duplicate pack name {0}")]
    DuplicateName(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceItem {
    pub triggers: Vec<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnowledgePack {
    pub name: String,
    pub keywords: Vec<String>,
    pub expert_prompt: String,
    pub planning_guidance: Vec<String>,
    pub recipes: Vec<GuidanceItem>,
    pub gotchas: Vec<GuidanceItem>,
    pub tools: Vec<String>,
}

impl Default for KnowledgePack {
    fn default() -> Self {
        KnowledgePack {
            name: String::new(),
            keywords: Vec::new(),
            expert_prompt: String::new(),
            planning_guidance: Vec::new(),
            recipes: Vec::new(),
            gotchas: Vec::new(),
            tools: Vec::new(),
        }
    }
}

impl KnowledgePack {
    pub fn parse(path: &Path) -> Result<KnowledgePack, PackError> {
        let raw = std::fs::read_to_string(path).map_err(|e| PackError::Read {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let pack: KnowledgePack = toml::from_str(&raw).map_err(|e| PackError::Parse {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        if pack.keywords.is_empty() {
            return Err(PackError::NoKeywords(pack.name));
        }
        Ok(pack)
    }

    fn keyword_tokens(&self) -> BTreeSet<String> {
        self.keywords.iter().map(|k| k.to_lowercase()).collect()
    }
}

/// All packs discovered in a directory, loaded once and immutable after.
#[derive(Debug, Default)]
pub struct PackRegistry {
    packs: Vec<KnowledgePack>,
}

impl PackRegistry {
    pub fn empty() -> PackRegistry {
        PackRegistry::default()
    }

    /// Auto-discover `*.toml` pack files; adding a pack file never requires
    /// code changes elsewhere.
    pub fn load_dir(dir: &Path) -> Result<PackRegistry, PackError> {
        let mut packs = Vec::new();
        let mut names = BTreeSet::new();
        let entries = std::fs::read_dir(dir).map_err(|e| PackError::Read {
            path: dir.display().to_string(),
            detail: e.to_string(),
        })?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "toml"))
            .collect();
        paths.sort();
        for path in paths {
            let pack = KnowledgePack::parse(&path)?;
            if !names.insert(pack.name.clone()) {
                return Err(PackError::DuplicateName(pack.name));
            }
            packs.push(pack);
        }
        Ok(PackRegistry { packs })
    }

    pub fn packs(&self) -> &[KnowledgePack] {
        &self.packs
    }
}

/// Packs whose keywords intersect the goal and column-name tokens, ordered
/// by match count then name.
pub fn detect_domains<'a>(
    goal: &str,
    column_names: &[String],
    registry: &'a PackRegistry,
) -> Vec<&'a KnowledgePack> {
    let mut tokens = tokenize(goal);
    for c in column_names {
        tokens.extend(tokenize(c));
    }
    let mut matched: Vec<(&KnowledgePack, usize)> = registry
        .packs
        .iter()
        .filter_map(|p| {
            let hits = p
                .keyword_tokens()
                .iter()
                .filter(|k| tokens.contains(*k))
                .count();
            (hits > 0).then_some((p, hits))
        })
        .collect();
    matched.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.name.cmp(&b.0.name)));
    matched.into_iter().map(|(p, _)| p).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceKind {
    Recipe,
    Gotcha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedGuidance {
    pub pack: String,
    pub kind: GuidanceKind,
    pub text: String,
}

/// Merged guidance from the detected packs: expert prompts always, recipes
/// and gotchas only when their triggers overlap the objective's tokens.
/// Duplicate texts are merged with the first pack keeping provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GuidanceBundle {
    pub expert_prompts: Vec<(String, String)>,
    pub items: Vec<SelectedGuidance>,
}

impl GuidanceBundle {
    pub fn is_empty(&self) -> bool {
        self.expert_prompts.is_empty() && self.items.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (pack, prompt) in &self.expert_prompts {
            out.push_str(&format!("[{pack} expertise] {prompt}\n"));
        }
        for item in &self.items {
            let kind = match item.kind {
                GuidanceKind::Recipe => "recipe",
                GuidanceKind::Gotcha => "gotcha",
            };
            out.push_str(&format!("[{} {kind}] {}\n", item.pack, item.text));
        }
        out.trim_end().to_string()
    }
}

pub fn select_guidance(packs: &[&KnowledgePack], objective: &str) -> GuidanceBundle {
    let tokens = tokenize(objective);
    let mut bundle = GuidanceBundle::default();
    let mut seen_texts = BTreeSet::new();
    for pack in packs {
        if !pack.expert_prompt.is_empty() {
            bundle
                .expert_prompts
                .push((pack.name.clone(), pack.expert_prompt.clone()));
        }
        let mut push_items = |items: &[GuidanceItem], kind: GuidanceKind| {
            for item in items {
                let triggered = item
                    .triggers
                    .iter()
                    .any(|t| tokens.contains(&t.to_lowercase()));
                if triggered && seen_texts.insert(item.text.clone()) {
                    bundle.items.push(SelectedGuidance {
                        pack: pack.name.clone(),
                        kind,
                        text: item.text.clone(),
                    });
                }
            }
        };
        push_items(&pack.recipes, GuidanceKind::Recipe);
        push_items(&pack.gotchas, GuidanceKind::Gotcha);
    }
    bundle
}

/// Gotchas matched against arbitrary diagnostic text (failure analysis uses
/// this to attach domain hints to error categories).
pub fn failure_hints(packs: &[&KnowledgePack], diagnostic_text: &str) -> Vec<String> {
    let tokens = tokenize(diagnostic_text);
    let mut hints = Vec::new();
    let mut seen = BTreeSet::new();
    for pack in packs {
        for item in &pack.gotchas {
            let triggered = item
                .triggers
                .iter()
                .any(|t| tokens.contains(&t.to_lowercase()));
            if triggered && seen.insert(&item.text) {
                hints.push(item.text.clone());
            }
        }
    }
    hints
}

#[cfg(test)]
mod tests {
    use super::*;

    fn astronomy() -> KnowledgePack {
        KnowledgePack {
            name: "astronomy".into(),
            keywords: vec!["kp".into(), "geomagnetic".into(), "omni".into()],
            expert_prompt: "You know space-weather data formats.".into(),
            gotchas: vec![GuidanceItem {
                triggers: vec!["headerless".into(), "fixed".into(), "merge".into()],
                text: "Instrument dumps are headerless fixed-width files.".into(),
            }],
            ..Default::default()
        }
    }

    fn finance() -> KnowledgePack {
        KnowledgePack {
            name: "finance".into(),
            keywords: vec!["revenue".into(), "ticker".into()],
            expert_prompt: "You know financial data.".into(),
            ..Default::default()
        }
    }

    fn registry(packs: Vec<KnowledgePack>) -> PackRegistry {
        PackRegistry { packs }
    }

    #[test]
    fn goal_keywords_select_pack() {
        let reg = registry(vec![astronomy(), finance()]);
        let hits = detect_domains("compute the average Kp geomagnetic index", &[], &reg);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].name, "astronomy");
    }

    #[test]
    fn multi_domain_detection_merges() {
        let reg = registry(vec![astronomy(), finance()]);
        let hits = detect_domains("kp index effect on revenue", &[], &reg);
        let names: Vec<&str> = hits.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, vec!["astronomy", "finance"]);
    }

    #[test]
    fn no_overlap_selects_nothing() {
        let reg = registry(vec![astronomy()]);
        assert!(detect_domains("count the words", &[], &reg).is_empty());
    }

    #[test]
    fn column_names_participate_in_detection() {
        let reg = registry(vec![astronomy()]);
        let hits = detect_domains("average of the index", &["kp_index".into()], &reg);
        assert_eq!(hits.len(), 1);
    }

    #[test]
    fn guidance_selected_on_trigger_overlap_only() {
        let pack = astronomy();
        let packs = vec![&pack];
        let off = select_guidance(&packs, "aggregate the joined rows by year");
        assert!(off.items.is_empty());
        assert_eq!(off.expert_prompts.len(), 1);
        let on = select_guidance(&packs, "parse the headerless data file");
        assert_eq!(on.items.len(), 1);
    }
}
