//! Knowledge-base construction from pre-fetched Wikipedia pages and curated
//! fact files.
//!
//! Pages live under `<pages>/<language>/*.json`, keyword lists under
//! `<keywords>/<COUNTRY>.txt`, and the output of a build is one
//! `kb/<COUNTRY>/entries.jsonl` per country.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunk::{chunk_text, ChunkingConfig};
use crate::types::Locale;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed page file: {message}")]
    Page { path: PathBuf, message: String },
    #[error("keyword list is empty")]
    EmptyKeywords,
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate entry id {0:?}")]
    DuplicateId(String),
    #[error("no knowledge base for country {0} under {1}")]
    MissingCountry(String, PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntrySource {
    WikiSummary,
    WikiBody,
    Curated,
}

impl fmt::Display for EntrySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntrySource::WikiSummary => "WIKI_SUMMARY",
            EntrySource::WikiBody => "WIKI_BODY",
            EntrySource::Curated => "CURATED",
        })
    }
}

/// One retrievable unit of evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KBEntry {
    pub id: String,
    pub text: String,
    pub source: EntrySource,
    pub locale: Locale,
    pub country: String,
    pub topic: String,
    pub origin: String,
}

/// A pre-fetched page; `origin` identifies the file it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WikiPage {
    pub origin: String,
    pub title: String,
    pub summary: String,
    pub body: Option<String>,
}

#[derive(Debug, Deserialize)]
struct PageFile {
    title: String,
    summary: String,
    #[serde(default)]
    body: Option<String>,
}

/// How summaries are cut into entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    #[default]
    Sentence,
    Paragraph,
}

/// Sentences with their start offsets (in chars). Latin terminators end a
/// sentence only before whitespace or end of text; full-width CJK
/// terminators always do, since CJK prose puts no space after them.
pub fn split_sentences(text: &str) -> Vec<(usize, String)> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let push = |from: usize, to: usize, out: &mut Vec<(usize, String)>| {
        let raw: String = chars[from..to].iter().collect();
        let lead = raw.chars().take_while(|c| c.is_whitespace()).count();
        let s = raw.trim();
        if !s.is_empty() {
            out.push((from + lead, s.to_string()));
        }
    };
    for i in 0..chars.len() {
        let ends = match chars[i] {
            '。' | '！' | '？' => true,
            '.' | '!' | '?' => chars.get(i + 1).is_none_or(|c| c.is_whitespace()),
            _ => false,
        };
        // keep runs like "?!" or "！」" together with the sentence they close
        let closes_run = chars
            .get(i + 1)
            .is_none_or(|c| !matches!(c, '。' | '！' | '？' | '」' | '』' | '）'));
        if ends && closes_run {
            push(start, i + 1, &mut out);
            start = i + 1;
        }
    }
    push(start, chars.len(), &mut out);
    out
}

fn split_paragraphs(text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for para in text.split("\n\n") {
        let lead = para.chars().take_while(|c| c.is_whitespace()).count();
        let p = para.trim();
        if !p.is_empty() {
            out.push((offset + lead, p.to_string()));
        }
        offset += para.chars().count() + 2;
    }
    out
}

fn matching_keyword<'a>(title: &str, keywords: &'a [String]) -> Option<&'a str> {
    let title = title.to_lowercase();
    keywords
        .iter()
        .find(|k| title.contains(&k.to_lowercase()))
        .map(String::as_str)
}

/// Turns matching pages into WIKI_SUMMARY and WIKI_BODY entries.
pub fn extract_wiki_entries(
    pages: &[WikiPage],
    keywords: &[String],
    config: &ChunkingConfig,
    locale: &Locale,
    mode: SplitMode,
) -> Result<Vec<KBEntry>, KbError> {
    if keywords.is_empty() {
        return Err(KbError::EmptyKeywords);
    }
    let mut out = Vec::new();
    for page in pages {
        let Some(topic) = matching_keyword(&page.title, keywords) else {
            continue;
        };
        let entry = |id: String, text: String, source| KBEntry {
            id,
            text,
            source,
            locale: *locale,
            country: locale.region().to_string(),
            topic: topic.to_string(),
            origin: page.origin.clone(),
        };
        let pieces = match mode {
            SplitMode::Sentence => split_sentences(&page.summary),
            SplitMode::Paragraph => split_paragraphs(&page.summary),
        };
        for (offset, text) in pieces {
            out.push(entry(format!("{}#s{offset}", page.origin), text, EntrySource::WikiSummary));
        }
        if let Some(body) = &page.body {
            for chunk in chunk_text(body, config) {
                if chunk.text.trim().is_empty() {
                    continue;
                }
                out.push(entry(
                    format!("{}#b{}", page.origin, chunk.start),
                    chunk.text,
                    EntrySource::WikiBody,
                ));
            }
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<String, KbError> {
    fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_keywords(path: &Path) -> Result<Vec<String>, KbError> {
    Ok(parse_keywords(&read(path)?))
}

pub fn parse_keywords(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn load_page(path: &Path, origin: String) -> Result<WikiPage, KbError> {
    let text = read(path)?;
    let file: PageFile = serde_json::from_str(&text).map_err(|e| KbError::Page {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(WikiPage {
        origin,
        title: file.title,
        summary: file.summary,
        body: file.body,
    })
}

/// Loads every `*.json` page in `dir`, sorted by origin. Origins are
/// `<prefix>/<file stem>`.
pub fn load_pages(dir: &Path, prefix: &str) -> Result<Vec<WikiPage>, KbError> {
    let listing = fs::read_dir(dir).map_err(|source| KbError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for item in listing {
        let item = item.map_err(|source| KbError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = item.path();
        if path.extension().is_some_and(|e| e == "json") {
            files.push(path);
        }
    }
    files.sort();
    let mut pages = files
        .par_iter()
        .map(|path| {
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            load_page(path, format!("{prefix}/{stem}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    pages.sort_by(|a, b| a.origin.cmp(&b.origin));
    Ok(pages)
}

#[derive(Debug, Deserialize)]
struct CuratedRecord {
    locale: Option<String>,
    #[serde(default)]
    country: Option<String>,
    #[serde(default)]
    topic: Option<String>,
    text: Option<String>,
    #[serde(default)]
    source: Option<String>,
}

/// One CURATED entry per record, in file order.
pub fn load_curated_facts(path: &Path) -> Result<Vec<KBEntry>, KbError> {
    let text = read(path)?;
    let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let err = |message: String| KbError::Record {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let rec: CuratedRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let locale: Locale = rec
            .locale
            .ok_or_else(|| err("missing `locale`".into()))?
            .parse()
            .map_err(|e| err(format!("{e}")))?;
        let text = rec.text.ok_or_else(|| err("missing `text`".into()))?;
        if text.trim().is_empty() {
            return Err(err("blank `text`".into()));
        }
        let country = rec.country.unwrap_or_else(|| locale.region().to_string());
        if country.len() != 2 || !country.bytes().all(|b| b.is_ascii_uppercase()) {
            return Err(err(format!("invalid country {country:?}")));
        }
        out.push(KBEntry {
            id: format!("curated/{stem}#L{lineno}"),
            text: text.trim().to_string(),
            source: EntrySource::Curated,
            locale,
            country,
            topic: rec.topic.unwrap_or_default(),
            origin: rec.source.unwrap_or_else(|| stem.clone()),
        });
    }
    Ok(out)
}

pub fn check_unique_ids(entries: &[KBEntry]) -> Result<(), KbError> {
    let mut seen = HashSet::new();
    for e in entries {
        if !seen.insert(e.id.as_str()) {
            return Err(KbError::DuplicateId(e.id.clone()));
        }
    }
    Ok(())
}

/// Inputs for a full multi-country build.
#[derive(Debug, Clone)]
pub struct KbSources {
    pub keywords_dir: PathBuf,
    pub pages_dir: PathBuf,
    pub curated: Vec<PathBuf>,
    pub locales: Vec<Locale>,
    pub chunking: ChunkingConfig,
    pub split: SplitMode,
}

/// Builds entries for every configured locale, grouped by country. Within a
/// country, wiki entries come first in locale order, then curated facts.
pub fn build_kb(sources: &KbSources) -> Result<BTreeMap<String, Vec<KBEntry>>, KbError> {
    let mut by_country: BTreeMap<String, Vec<KBEntry>> = BTreeMap::new();
    for locale in &sources.locales {
        let kw_path = sources.keywords_dir.join(format!("{}.txt", locale.region()));
        let keywords = load_keywords(&kw_path)?;
        let lang_dir = sources.pages_dir.join(locale.language());
        let pages = load_pages(&lang_dir, locale.language())?;
        let entries = extract_wiki_entries(&pages, &keywords, &sources.chunking, locale, sources.split)?;
        by_country
            .entry(locale.region().to_string())
            .or_default()
            .extend(entries);
    }
    for path in &sources.curated {
        for e in load_curated_facts(path)? {
            by_country.entry(e.country.clone()).or_default().push(e);
        }
    }
    for entries in by_country.values() {
        check_unique_ids(entries)?;
    }
    Ok(by_country)
}

pub fn entries_path(kb_root: &Path, country: &str) -> PathBuf {
    kb_root.join(country).join("entries.jsonl")
}

pub fn write_entries(kb_root: &Path, country: &str, entries: &[KBEntry]) -> Result<PathBuf, KbError> {
    let path = entries_path(kb_root, country);
    let werr = |source| KbError::Write {
        path: path.clone(),
        source,
    };
    fs::create_dir_all(path.parent().expect("has parent")).map_err(werr)?;
    let mut w = BufWriter::new(fs::File::create(&path).map_err(werr)?);
    for e in entries {
        serde_json::to_writer(&mut w, e).map_err(|e| werr(e.into()))?;
        w.write_all(b"\n").map_err(werr)?;
    }
    w.flush().map_err(werr)?;
    Ok(path)
}

pub fn read_entries(kb_root: &Path, country: &str) -> Result<Vec<KBEntry>, KbError> {
    let path = entries_path(kb_root, country);
    if !path.exists() {
        return Err(KbError::MissingCountry(country.to_string(), kb_root.to_path_buf()));
    }
    let text = read(&path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| KbError::Record {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
