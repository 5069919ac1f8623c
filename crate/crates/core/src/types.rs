//! Domain types shared across the engine.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LocaleError {
    #[error("invalid locale {0:?}: expected <ll>-<RR> such as zh-CN")]
    Invalid(String),
    #[error("no locale token in id {0:?}")]
    NoToken(String),
}

/// A language-region pair such as `es-MX`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Locale {
    language: [u8; 2],
    region: [u8; 2],
}

impl Locale {
    pub fn new(language: &str, region: &str) -> Result<Self, LocaleError> {
        let bad = || LocaleError::Invalid(format!("{language}-{region}"));
        let lang: [u8; 2] = language.as_bytes().try_into().map_err(|_| bad())?;
        let reg: [u8; 2] = region.as_bytes().try_into().map_err(|_| bad())?;
        if !lang.iter().all(u8::is_ascii_lowercase) || !reg.iter().all(u8::is_ascii_uppercase) {
            return Err(bad());
        }
        Ok(Self { language: lang, region: reg })
    }

    pub fn language(&self) -> &str {
        std::str::from_utf8(&self.language).expect("ascii")
    }

    pub fn region(&self) -> &str {
        std::str::from_utf8(&self.region).expect("ascii")
    }

    pub fn is_chinese(&self) -> bool {
        self.language() == "zh"
    }
}

impl fmt::Display for Locale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.language(), self.region())
    }
}

impl FromStr for Locale {
    type Err = LocaleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('-') {
            Some((l, r)) => Locale::new(l, r).map_err(|_| LocaleError::Invalid(s.to_string())),
            None => Err(LocaleError::Invalid(s.to_string())),
        }
    }
}

impl Serialize for Locale {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Locale {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Track {
    #[serde(rename = "SAQ", alias = "saq")]
    Saq,
    #[serde(rename = "MCQ", alias = "mcq")]
    Mcq,
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Track::Saq => "SAQ",
            Track::Mcq => "MCQ",
        })
    }
}

impl FromStr for Track {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "saq" => Ok(Track::Saq),
            "mcq" => Ok(Track::Mcq),
            other => Err(format!("unknown track {other:?} (expected saq or mcq)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqOption {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QuestionError {
    #[error("duplicate option label {0:?}")]
    DuplicateLabel(String),
    #[error("MCQ question has no options")]
    NoOptions,
    #[error("SAQ question must not carry options")]
    UnexpectedOptions,
    #[error("gold label {0:?} is not one of the options")]
    UnknownGold(String),
}

/// One locale-tagged benchmark item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Question {
    pub id: String,
    pub locale: Locale,
    pub text: String,
    pub track: Track,
    pub options: Vec<McqOption>,
    pub references: Vec<String>,
    pub gold_label: Option<String>,
}

impl Question {
    pub fn saq(id: impl Into<String>, locale: Locale, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            locale,
            text: text.into(),
            track: Track::Saq,
            options: Vec::new(),
            references: Vec::new(),
            gold_label: None,
        }
    }

    pub fn with_references<I, S>(mut self, refs: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.references = refs.into_iter().map(Into::into).collect();
        self
    }

    /// Checks the track/options invariants.
    pub fn validate(&self) -> Result<(), QuestionError> {
        match self.track {
            Track::Saq if !self.options.is_empty() => Err(QuestionError::UnexpectedOptions),
            Track::Saq => Ok(()),
            Track::Mcq => {
                if self.options.is_empty() {
                    return Err(QuestionError::NoOptions);
                }
                let mut seen = HashSet::new();
                for opt in &self.options {
                    if !seen.insert(opt.label.as_str()) {
                        return Err(QuestionError::DuplicateLabel(opt.label.clone()));
                    }
                }
                if let Some(gold) = &self.gold_label {
                    if !seen.contains(gold.as_str()) {
                        return Err(QuestionError::UnknownGold(gold.clone()));
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locale_grammar() {
        let l: Locale = "zh-CN".parse().unwrap();
        assert_eq!(l.language(), "zh");
        assert_eq!(l.region(), "CN");
        assert_eq!(l.to_string(), "zh-CN");
        assert!("ZH-cn".parse::<Locale>().is_err());
        assert!("zho-CN".parse::<Locale>().is_err());
        assert!("zh_CN".parse::<Locale>().is_err());
        assert!(Locale::new("é", "CN").is_err());
    }

    #[test]
    fn mcq_duplicate_labels_rejected() {
        let mut q = Question::saq("en-GB-1", "en-GB".parse().unwrap(), "?");
        q.track = Track::Mcq;
        q.options = vec![
            McqOption { label: "A".into(), text: "x".into() },
            McqOption { label: "A".into(), text: "y".into() },
        ];
        assert_eq!(q.validate(), Err(QuestionError::DuplicateLabel("A".into())));
    }

    #[test]
    fn saq_with_options_rejected() {
        let mut q = Question::saq("en-GB-1", "en-GB".parse().unwrap(), "?");
        q.options.push(McqOption { label: "A".into(), text: "x".into() });
        assert_eq!(q.validate(), Err(QuestionError::UnexpectedOptions));
    }
}
