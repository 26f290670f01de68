use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered event-type names with a flag marking video interactions, which
/// define dropout.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct EventVocabulary {
    names: Vec<String>,
    video: Vec<bool>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    names: Vec<String>,
    video: Vec<bool>,
}

impl TryFrom<VocabularyRepr> for EventVocabulary {
    type Error = Error;
    fn try_from(r: VocabularyRepr) -> Result<Self> {
        EventVocabulary::new(r.names, r.video)
    }
}

impl From<EventVocabulary> for VocabularyRepr {
    fn from(v: EventVocabulary) -> Self {
        VocabularyRepr {
            names: v.names,
            video: v.video,
        }
    }
}

/// Thirteen common edX clickstream event types; the first six are video events.
pub const DEFAULT_EVENT_TYPES: [(&str, bool); 13] = [
    ("play_video", true),
    ("pause_video", true),
    ("seek_video", true),
    ("load_video", true),
    ("speed_change_video", true),
    ("stop_video", true),
    ("problem_check", false),
    ("problem_graded", false),
    ("problem_show", false),
    ("seq_goto", false),
    ("seq_next", false),
    ("seq_prev", false),
    ("page_close", false),
];

impl EventVocabulary {
    pub fn new(names: Vec<String>, video: Vec<bool>) -> Result<Self> {
        if names.len() != video.len() {
            return Err(Error::invalid(
                "vocabulary names and video flags differ in length",
            ));
        }
        if names.is_empty() {
            return Err(Error::invalid("empty event vocabulary"));
        }
        if !video.iter().any(|&v| v) {
            return Err(Error::invalid(
                "vocabulary must flag at least one video event type",
            ));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::invalid("empty event type name"));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate event type `{n}`")));
            }
        }
        Ok(Self {
            names,
            video,
            index,
        })
    }

    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, bool)]) -> Result<Self> {
        Self::new(
            pairs.iter().map(|(n, _)| n.as_ref().to_string()).collect(),
            pairs.iter().map(|(_, v)| *v).collect(),
        )
    }

    /// One type per line; a leading `*` marks a video event. Blank lines and
    /// `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.strip_prefix('*') {
                Some(name) => pairs.push((name.trim().to_string(), true)),
                None => pairs.push((line.to_string(), false)),
            }
        }
        Self::from_pairs(&pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.names
            .iter()
            .zip(&self.video)
            .map(|(n, &v)| {
                if v {
                    format!("*{n}\n")
                } else {
                    format!("{n}\n")
                }
            })
            .collect()
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

    pub fn is_video(&self, index: usize) -> bool {
        self.video[index]
    }

    pub fn video_flags(&self) -> &[bool] {
        &self.video
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

impl Default for EventVocabulary {
    fn default() -> Self {
        Self::from_pairs(&DEFAULT_EVENT_TYPES).expect("default vocabulary is valid")
    }
}
