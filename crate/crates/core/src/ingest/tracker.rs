//! Jira-style tracker client.
//!
//! Both the HTTP search client and the offline fixture directory hand back raw
//! issue payloads; [`map_issue`] turns either into a [`RawBugReport`].

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, NaiveDateTime, Utc};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::IngestError;
use crate::model::{Comment, IssueLink, RawBugReport};

/// Fields requested from the search endpoint.
pub const FIELDS: &str =
    "summary,description,created,updated,status,resolution,comment,versions,priority,issuelinks";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchQuery {
    pub project_key: String,
    #[serde(default)]
    pub created_after: Option<DateTime<Utc>>,
    pub max_results: usize,
    #[serde(default)]
    pub resolution_filter: Option<Vec<String>>,
    #[serde(default = "default_page_size")]
    pub page_size: usize,
}

fn default_page_size() -> usize {
    100
}

impl FetchQuery {
    pub fn new(project_key: impl Into<String>, max_results: usize) -> Self {
        FetchQuery {
            project_key: project_key.into(),
            created_after: None,
            max_results,
            resolution_filter: None,
            page_size: default_page_size(),
        }
    }

    /// JQL for the search endpoint.
    pub fn jql(&self) -> String {
        let mut clauses = vec![format!("project = {}", quote_jql(&self.project_key))];
        if let Some(after) = self.created_after {
            clauses.push(format!("created >= \"{}\"", after.format("%Y-%m-%d %H:%M")));
        }
        if let Some(names) = &self.resolution_filter {
            let list: Vec<String> = names.iter().map(|n| quote_jql(n)).collect();
            clauses.push(format!("resolution in ({})", list.join(", ")));
        }
        format!("{} ORDER BY created ASC, key ASC", clauses.join(" AND "))
    }
}

fn quote_jql(s: &str) -> String {
    if !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        s.to_string()
    } else {
        format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

/// One page of search results.
#[derive(Debug, Clone, Default)]
pub struct SearchPage {
    pub issues: Vec<Value>,
    pub total: usize,
}

/// Source of raw issue payloads, paged.
pub trait SearchTransport: Sync {
    fn search(
        &self,
        query: &FetchQuery,
        start_at: usize,
        page_size: usize,
    ) -> Result<SearchPage, IngestError>;
}

/// Live Jira REST search (`/rest/api/2/search`).
pub struct HttpTracker {
    client: Client,
    base_url: String,
}

impl HttpTracker {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, IngestError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| IngestError::Transport(e.to_string()))?;
        Ok(HttpTracker {
            client,
            base_url: base_url.trim_end_matches('/').to_string(),
        })
    }
}

impl SearchTransport for HttpTracker {
    fn search(
        &self,
        query: &FetchQuery,
        start_at: usize,
        page_size: usize,
    ) -> Result<SearchPage, IngestError> {
        let url = format!("{}/rest/api/2/search", self.base_url);
        let resp = self
            .client
            .get(&url)
            .query(&[
                ("jql", query.jql()),
                ("startAt", start_at.to_string()),
                ("maxResults", page_size.to_string()),
                ("fields", FIELDS.to_string()),
            ])
            .send()
            .map_err(|e| IngestError::Transport(e.to_string()))?;
        match resp.status() {
            s if s.is_success() => {}
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
                return Err(IngestError::Auth(format!("{} from {url}", resp.status())))
            }
            s => return Err(IngestError::Transport(format!("{s} from {url}"))),
        }
        let body: Value = resp
            .json()
            .map_err(|e| IngestError::Transport(e.to_string()))?;
        parse_search_page(&body)
    }
}

fn parse_search_page(body: &Value) -> Result<SearchPage, IngestError> {
    let issues = body
        .get("issues")
        .and_then(Value::as_array)
        .ok_or_else(|| IngestError::Schema {
            key: "<page>".into(),
            message: "response has no issues array".into(),
        })?
        .clone();
    let total = body
        .get("total")
        .and_then(Value::as_u64)
        .map(|t| t as usize)
        .unwrap_or(issues.len());
    Ok(SearchPage { issues, total })
}

/// Offline tracker over a directory of raw payloads.
///
/// Files are read in name order. Each `*.json` file holds a single issue, an
/// array of issues, or a search page with an `issues` array. The query's
/// project, creation cutoff and resolution filter are applied locally.
pub struct FixtureTracker {
    issues: Vec<Value>,
}

impl FixtureTracker {
    pub fn open(dir: &Path) -> Result<Self, IngestError> {
        let io =
            |path: &Path, e: std::io::Error| IngestError::Io(format!("{}: {e}", path.display()));
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        let mut issues = Vec::new();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
            let value: Value = serde_json::from_str(&text)
                .map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
            match value {
                Value::Array(items) => issues.extend(items),
                v if v.get("issues").is_some() => issues.extend(parse_search_page(&v)?.issues),
                v => issues.push(v),
            }
        }
        Ok(FixtureTracker { issues })
    }

    pub fn from_payloads(issues: Vec<Value>) -> Self {
        FixtureTracker { issues }
    }

    fn matches(query: &FetchQuery, issue: &Value) -> bool {
        let key = issue.get("key").and_then(Value::as_str).unwrap_or("");
        let project = key.rsplit_once('-').map(|(p, _)| p).unwrap_or(key);
        if !project.eq_ignore_ascii_case(&query.project_key) {
            return false;
        }
        let fields = issue.get("fields");
        if let Some(after) = query.created_after {
            let created = fields
                .and_then(|f| f.get("created"))
                .and_then(Value::as_str)
                .and_then(parse_timestamp);
            if created.is_some_and(|c| c < after) {
                return false;
            }
        }
        if let Some(names) = &query.resolution_filter {
            let res = fields
                .and_then(|f| f.get("resolution"))
                .and_then(|r| r.get("name"))
                .and_then(Value::as_str);
            if !res.is_some_and(|r| names.iter().any(|n| n.eq_ignore_ascii_case(r))) {
                return false;
            }
        }
        true
    }
}

impl SearchTransport for FixtureTracker {
    fn search(
        &self,
        query: &FetchQuery,
        start_at: usize,
        page_size: usize,
    ) -> Result<SearchPage, IngestError> {
        let hits: Vec<&Value> = self
            .issues
            .iter()
            .filter(|i| Self::matches(query, i))
            .collect();
        Ok(SearchPage {
            total: hits.len(),
            issues: hits
                .into_iter()
                .skip(start_at)
                .take(page_size)
                .cloned()
                .collect(),
        })
    }
}

/// Fetch up to `query.max_results` reports, paging transparently.
///
/// After the first page reveals the total, the remaining pages are requested
/// `parallelism` at a time. Duplicate keys across pages are dropped.
pub fn fetch_reports(
    transport: &dyn SearchTransport,
    query: &FetchQuery,
    parallelism: usize,
) -> Result<Vec<RawBugReport>, IngestError> {
    if query.max_results == 0 || query.page_size == 0 {
        return Err(IngestError::InvalidSample(
            "max_results and page_size must be positive".into(),
        ));
    }
    let page_size = query.page_size.min(query.max_results);
    let first = transport.search(query, 0, page_size)?;
    let wanted = first.total.min(query.max_results);
    let mut pages = vec![first];
    let starts: Vec<usize> = (1..)
        .map(|i| i * page_size)
        .take_while(|s| *s < wanted)
        .collect();
    for batch in starts.chunks(parallelism.max(1)) {
        let results: Vec<Result<SearchPage, IngestError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&start| scope.spawn(move || transport.search(query, start, page_size)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("page fetch panicked"))
                .collect()
        });
        for r in results {
            pages.push(r?);
        }
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for issue in pages.iter().flat_map(|p| p.issues.iter()) {
        if out.len() >= query.max_results {
            break;
        }
        let report = map_issue(issue)?;
        if seen.insert(report.key.clone()) {
            out.push(report);
        }
    }
    Ok(out)
}

/// Parse Jira timestamps ("2025-02-10T12:34:56.789+0000" and RFC 3339), truncated to seconds.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let parsed = DateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f%z")
        .or_else(|_| DateTime::parse_from_rfc3339(s))
        .map(|d| d.with_timezone(&Utc))
        .ok()
        .or_else(|| {
            NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
                .ok()
                .map(|n| n.and_utc())
        })?;
    DateTime::from_timestamp(parsed.timestamp(), 0)
}

/// Flatten an Atlassian document-format node to plain text.
fn flatten_adf(node: &Value, out: &mut String) {
    match node.get("type").and_then(Value::as_str) {
        Some("text") => out.push_str(node.get("text").and_then(Value::as_str).unwrap_or("")),
        Some("hardBreak") => out.push('\n'),
        _ => {}
    }
    if let Some(children) = node.get("content").and_then(Value::as_array) {
        let ordered = node.get("type").and_then(Value::as_str) == Some("orderedList");
        for (i, child) in children.iter().enumerate() {
            let kind = child.get("type").and_then(Value::as_str);
            if kind == Some("listItem") {
                out.push_str(&if ordered {
                    format!("{}. ", i + 1)
                } else {
                    "- ".to_string()
                });
            }
            flatten_adf(child, out);
            if matches!(
                kind,
                Some("paragraph" | "heading" | "codeBlock" | "listItem" | "blockquote")
            ) && !out.ends_with('\n')
            {
                out.push('\n');
            }
        }
    }
}

fn text_field(v: Option<&Value>) -> String {
    match v {
        Some(Value::String(s)) => s.clone(),
        Some(doc @ Value::Object(_)) => {
            let mut out = String::new();
            flatten_adf(doc, &mut out);
            out.trim_end().to_string()
        }
        _ => String::new(),
    }
}

fn name_of(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) => Some(s.clone()),
        Value::Object(o) => o.get("name").and_then(Value::as_str).map(str::to_string),
        _ => None,
    }
}

/// Map one raw issue payload into a report.
pub fn map_issue(issue: &Value) -> Result<RawBugReport, IngestError> {
    let key = issue
        .get("key")
        .and_then(Value::as_str)
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| IngestError::Schema {
            key: "<unknown>".into(),
            message: "missing key".into(),
        })?
        .to_string();
    let schema = |message: String| IngestError::Schema {
        key: key.clone(),
        message,
    };
    let fields = issue
        .get("fields")
        .and_then(Value::as_object)
        .ok_or_else(|| schema("missing fields object".into()))?;
    let summary = fields
        .get("summary")
        .and_then(Value::as_str)
        .ok_or_else(|| schema("missing required field summary".into()))?
        .to_string();
    let stamp = |name: &str| -> Result<DateTime<Utc>, IngestError> {
        let raw = fields
            .get(name)
            .and_then(Value::as_str)
            .ok_or_else(|| schema(format!("missing required field {name}")))?;
        parse_timestamp(raw).ok_or_else(|| schema(format!("unparseable {name} timestamp {raw:?}")))
    };
    let created = stamp("created")?;
    let updated = stamp("updated")?.max(created);
    let status = name_of(fields.get("status"))
        .ok_or_else(|| schema("missing required field status".into()))?;

    let comments = fields
        .get("comment")
        .and_then(|c| c.get("comments").or(Some(c)))
        .and_then(Value::as_array)
        .map(|items| {
            items
                .iter()
                .filter_map(|c| {
                    let created = c
                        .get("created")
                        .and_then(Value::as_str)
                        .and_then(parse_timestamp)?;
                    let author = c
                        .get("author")
                        .and_then(|a| a.get("displayName").or_else(|| a.get("name")))
                        .and_then(Value::as_str)
                        .unwrap_or("")
                        .to_string();
                    Some(Comment {
                        author,
                        body: text_field(c.get("body")),
                        created,
                    })
                })
                .collect()
        })
        .unwrap_or_default();

    let affected_versions = fields
        .get("versions")
        .and_then(Value::as_array)
        .map(|vs| vs.iter().filter_map(|v| name_of(Some(v))).collect())
        .unwrap_or_default();

    let issue_links = fields
        .get("issuelinks")
        .and_then(Value::as_array)
        .map(|links| {
            links
                .iter()
                .filter_map(|l| {
                    let link_type = name_of(l.get("type"))?;
                    let target = l.get("outwardIssue").or_else(|| l.get("inwardIssue"))?;
                    let target_key = target.get("key").and_then(Value::as_str)?.to_string();
                    Some(IssueLink {
                        link_type,
                        target_key,
                    })
                })
                .collect()
        })
        .unwrap_or_default();

    Ok(RawBugReport {
        key: key.clone(),
        summary,
        description: text_field(fields.get("description")),
        created,
        updated,
        status,
        resolution: name_of(fields.get("resolution")),
        comments,
        affected_versions,
        priority: name_of(fields.get("priority")),
        issue_links,
    })
}
