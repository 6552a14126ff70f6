use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use regex::Regex;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::session::EmotionLabel;

const DEFAULT_LEXICON: &str = include_str!("../../data/emotion_lexicon.toml");

#[derive(Deserialize)]
struct LexiconFile {
    #[serde(default)]
    version: Option<u32>,
    keywords: BTreeMap<String, String>,
}

/// Keyword table for emotion detection.
#[derive(Debug, Clone)]
pub struct Lexicon {
    keywords: HashMap<String, EmotionLabel>,
    matcher: Option<Regex>,
}

impl Lexicon {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, EmotionLabel)>,
        S: Into<String>,
    {
        let keywords: HashMap<String, EmotionLabel> = entries
            .into_iter()
            .map(|(k, v)| (normalize(&k.into()), v))
            .filter(|(k, _)| !k.trim().is_empty())
            .collect();
        let mut keys: Vec<&String> = keywords.keys().collect();
        // longest first so multi-word keywords beat their prefixes
        keys.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        let matcher = (!keys.is_empty()).then(|| {
            let alts: Vec<String> = keys.iter().map(|k| regex::escape(k)).collect();
            Regex::new(&format!(r"(?i)\b(?:{})\b", alts.join("|"))).expect("escaped keywords")
        });
        Lexicon { keywords, matcher }
    }

    pub fn builtin() -> Self {
        Self::from_toml_str(DEFAULT_LEXICON, Path::new("<builtin emotion_lexicon.toml>")).expect("builtin lexicon")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?, path)
    }

    fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let data_err = |reason: String| Error::Data {
            path: path.to_path_buf(),
            reason,
        };
        let file: LexiconFile = toml::from_str(text).map_err(|e| data_err(e.to_string()))?;
        if let Some(v) = file.version.filter(|v| *v != 1) {
            return Err(data_err(format!("unsupported lexicon version {v}")));
        }
        let mut entries = Vec::with_capacity(file.keywords.len());
        for (k, v) in file.keywords {
            let label = v.parse::<EmotionLabel>().map_err(data_err)?;
            entries.push((k, label));
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }
}

fn normalize(s: &str) -> String {
    s.replace('\u{2019}', "'").to_lowercase()
}

/// Most frequent matched label; ties go to the label matched first; no match is neutral.
pub fn detect_emotion(text: &str, lexicon: &Lexicon) -> EmotionLabel {
    let Some(matcher) = &lexicon.matcher else {
        return EmotionLabel::Neutral;
    };
    let text = normalize(text);
    // label -> (count, first position)
    let mut tally: HashMap<EmotionLabel, (usize, usize)> = HashMap::new();
    for m in matcher.find_iter(&text) {
        let Some(&label) = lexicon.keywords.get(m.as_str()) else {
            continue;
        };
        let e = tally.entry(label).or_insert((0, m.start()));
        e.0 += 1;
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(label, _)| label)
        .unwrap_or_default()
}
