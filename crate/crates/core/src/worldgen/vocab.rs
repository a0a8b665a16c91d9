use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved option token used for abstention in multi-choice questions.
pub const NOT_GIVEN: &str = "not given";

/// Temporal relation used by transition questions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Before,
    After,
}

impl Relation {
    pub const ALL: [Relation; 2] = [Relation::Before, Relation::After];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Before => "before",
            Relation::After => "after",
        }
    }

    pub fn parse(token: &str) -> Option<Relation> {
        match token {
            "before" => Some(Relation::Before),
            "after" => Some(Relation::After),
            _ => None,
        }
    }

    pub fn flipped(self) -> Relation {
        match self {
            Relation::Before => Relation::After,
            Relation::After => Relation::Before,
        }
    }
}

/// Slot categories a token can belong to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    Subject,
    Attribute,
    Action,
    Count,
    Relation,
}

/// Token inventory of the synthetic world.
///
/// Synonym pairs are unordered; the first member of each pair is the
/// canonical form used when scenes are generated, the second only ever shows
/// up in questions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub subjects: Vec<String>,
    pub attributes: Vec<String>,
    pub actions: Vec<String>,
    pub count_min: u32,
    pub count_max: u32,
    pub synonym_pairs: Vec<(String, String)>,
}

fn owned(tokens: &[&str]) -> Vec<String> {
    tokens.iter().map(|t| t.to_string()).collect()
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab {
            subjects: owned(&[
                "girl", "boy", "woman", "man", "child", "baby", "dog", "lady", "kid",
            ]),
            attributes: owned(&["red", "blue", "green", "white"]),
            actions: owned(&[
                "dancing", "eating", "jumping", "running", "crying", "sleeping", "singing",
                "waving",
            ]),
            count_min: 1,
            count_max: 5,
            synonym_pairs: vec![
                ("woman".to_string(), "lady".to_string()),
                ("child".to_string(), "kid".to_string()),
            ],
        }
    }
}

impl Vocab {
    pub fn validate(&self) -> Result<()> {
        for (name, list) in [
            ("subjects", &self.subjects),
            ("attributes", &self.attributes),
            ("actions", &self.actions),
        ] {
            if list.is_empty() {
                return Err(Error::Config(format!("vocab {name} is empty")));
            }
        }
        if self.count_min < 1 || self.count_min > self.count_max {
            return Err(Error::Config(format!(
                "invalid count range {}..={}",
                self.count_min, self.count_max
            )));
        }
        let mut seen = HashSet::new();
        for tok in self.all_tokens() {
            if !seen.insert(tok.clone()) {
                return Err(Error::Config(format!("duplicate vocab token {tok:?}")));
            }
        }
        if seen.contains(NOT_GIVEN) {
            return Err(Error::Config(format!("{NOT_GIVEN:?} is reserved")));
        }
        let mut paired = HashSet::new();
        for (a, b) in &self.synonym_pairs {
            if a == b {
                return Err(Error::Config(format!("synonym pair ({a}, {b}) is reflexive")));
            }
            match (self.category_of(a), self.category_of(b)) {
                (Some(ca), Some(cb)) if ca == cb && ca != Category::Count => {}
                _ => {
                    return Err(Error::Config(format!(
                        "synonym pair ({a}, {b}) must join tokens of one category"
                    )))
                }
            }
            if !paired.insert(a.as_str()) || !paired.insert(b.as_str()) {
                return Err(Error::Config(format!(
                    "token in synonym pair ({a}, {b}) already has a synonym"
                )));
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> impl Iterator<Item = u32> {
        self.count_min..=self.count_max
    }

    pub fn count_tokens(&self) -> Vec<String> {
        self.counts().map(|c| c.to_string()).collect()
    }

    fn all_tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.subjects.iter().cloned());
        out.extend(self.attributes.iter().cloned());
        out.extend(self.actions.iter().cloned());
        out.extend(self.count_tokens());
        out.extend(Relation::ALL.iter().map(|r| r.as_str().to_string()));
        out
    }

    /// Tokens the model embeds: every slot token followed by [`NOT_GIVEN`].
    pub fn model_tokens(&self) -> Vec<String> {
        let mut out = self.all_tokens();
        out.push(NOT_GIVEN.to_string());
        out
    }

    pub fn category_of(&self, token: &str) -> Option<Category> {
        if self.subjects.iter().any(|t| t == token) {
            Some(Category::Subject)
        } else if self.attributes.iter().any(|t| t == token) {
            Some(Category::Attribute)
        } else if self.actions.iter().any(|t| t == token) {
            Some(Category::Action)
        } else if token
            .parse::<u32>()
            .is_ok_and(|c| (self.count_min..=self.count_max).contains(&c))
        {
            Some(Category::Count)
        } else if Relation::parse(token).is_some() {
            Some(Category::Relation)
        } else {
            None
        }
    }

    pub fn tokens_in(&self, category: Category) -> Vec<String> {
        match category {
            Category::Subject => self.subjects.clone(),
            Category::Attribute => self.attributes.clone(),
            Category::Action => self.actions.clone(),
            Category::Count => self.count_tokens(),
            Category::Relation => Relation::ALL.iter().map(|r| r.as_str().to_string()).collect(),
        }
    }

    pub fn synonym_of(&self, token: &str) -> Option<&str> {
        self.synonym_pairs.iter().find_map(|(a, b)| {
            if a == token {
                Some(b.as_str())
            } else if b == token {
                Some(a.as_str())
            } else {
                None
            }
        })
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        self.synonym_of(a) == Some(b)
    }

    /// Maps a token onto the form used inside scenes.
    pub fn canonical<'a>(&'a self, token: &'a str) -> &'a str {
        self.synonym_pairs
            .iter()
            .find_map(|(a, b)| (b == token).then_some(a.as_str()))
            .unwrap_or(token)
    }

    fn is_canonical(&self, token: &str) -> bool {
        !self.synonym_pairs.iter().any(|(_, b)| b == token)
    }

    pub fn scene_subjects(&self) -> Vec<&str> {
        self.subjects
            .iter()
            .map(String::as_str)
            .filter(|s| self.is_canonical(s))
            .collect()
    }

    pub fn scene_attributes(&self) -> Vec<&str> {
        self.attributes
            .iter()
            .map(String::as_str)
            .filter(|s| self.is_canonical(s))
            .collect()
    }

    pub fn action_index(&self, action: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == action)
    }
}
