//! Page download for the knowledge-base corpus.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WIKIPEDIA_REST: &str = "https://{lang}.wikipedia.org/api/rest_v1/page/summary/{title}";

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("fetching {title:?}: {message}")]
    Http { title: String, message: String },
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Deserialize)]
struct SummaryReply {
    title: String,
    #[serde(default)]
    extract: String,
}

/// On-disk page shape read by the KB builder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageRecord {
    pub title: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
}

pub struct WikiFetcher {
    http: reqwest::blocking::Client,
    template: String,
}

impl WikiFetcher {
    /// `template` holds `{lang}` and `{title}` placeholders.
    pub fn new(template: impl Into<String>, timeout: Duration) -> Result<Self, FetchError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("culrag/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| FetchError::Http {
                title: String::new(),
                message: e.to_string(),
            })?;
        Ok(Self {
            http,
            template: template.into(),
        })
    }

    pub fn url(&self, lang: &str, title: &str) -> String {
        let encoded: String = title
            .replace(' ', "_")
            .bytes()
            .map(|b| match b {
                b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'_' | b'-' | b'.' | b'(' | b')' => (b as char).to_string(),
                _ => format!("%{b:02X}"),
            })
            .collect();
        self.template.replace("{lang}", lang).replace("{title}", &encoded)
    }

    pub fn fetch(&self, lang: &str, title: &str) -> Result<PageRecord, FetchError> {
        let err = |message: String| FetchError::Http {
            title: title.to_string(),
            message,
        };
        let resp = self.http.get(self.url(lang, title)).send().map_err(|e| err(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(err(format!("status {}", resp.status())));
        }
        let reply: SummaryReply = resp.json().map_err(|e| err(e.to_string()))?;
        Ok(PageRecord {
            title: reply.title,
            summary: reply.extract,
            body: None,
        })
    }
}

/// File name for a page title: lowercase, runs of non-alphanumerics
/// collapsed to `_`.
pub fn page_file_name(title: &str) -> String {
    let mut out = String::new();
    for c in title.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let trimmed = out.trim_matches('_');
    format!("{}.json", if trimmed.is_empty() { "page" } else { trimmed })
}

pub fn write_page(dir: &Path, page: &PageRecord) -> Result<PathBuf, FetchError> {
    let path = dir.join(page_file_name(&page.title));
    let werr = |source| FetchError::Write {
        path: path.clone(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(werr)?;
    let json = serde_json::to_string_pretty(page).expect("page serializes") + "\n";
    std::fs::write(&path, json).map_err(werr)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_encoding() {
        let f = WikiFetcher::new(WIKIPEDIA_REST, Duration::from_secs(1)).unwrap();
        assert_eq!(
            f.url("en", "Fish and chips"),
            "https://en.wikipedia.org/api/rest_v1/page/summary/Fish_and_chips"
        );
        assert_eq!(
            f.url("zh", "春节"),
            "https://zh.wikipedia.org/api/rest_v1/page/summary/%E6%98%A5%E8%8A%82"
        );
    }

    #[test]
    fn file_names() {
        assert_eq!(page_file_name("Fish and chips"), "fish_and_chips.json");
        assert_eq!(page_file_name("Día de Muertos"), "día_de_muertos.json");
        assert_eq!(page_file_name("!!!"), "page.json");
    }

    #[test]
    fn fetch_from_local_server() {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", server.server_addr().to_ip().unwrap());
        let handle = std::thread::spawn(move || {
            let req = server.recv().unwrap();
            assert_eq!(req.url(), "/en/Tea");
            let body = r#"{"title":"Tea","extract":"Tea is a drink."}"#;
            req.respond(tiny_http::Response::from_string(body)).unwrap();
        });
        let f = WikiFetcher::new(format!("{addr}/{{lang}}/{{title}}"), Duration::from_secs(5)).unwrap();
        let page = f.fetch("en", "Tea").unwrap();
        handle.join().unwrap();
        assert_eq!(page.summary, "Tea is a drink.");
        let dir = tempfile::tempdir().unwrap();
        let path = write_page(dir.path(), &page).unwrap();
        let back: PageRecord = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(back, page);
    }
}
