//! Prompt construction for the four generation roles, plus the field parsers
//! the deterministic offline providers use to read those prompts back.
//!
//! Builders and parsers live together so the markers (`Query:`, `### dataset:`,
//! ...) cannot drift apart. Any generation backend sees the same prompt text;
//! only the offline providers rely on parsing it.

use crate::profile::DatasetProfile;

pub const QUERY_MARKER: &str = "Query:";
pub const BACKGROUND_MARKER: &str = "Background:";
pub const COUNT_MARKER: &str = "Generate exactly";
pub const CANDIDATE_MARKER: &str = "### dataset:";
pub const SCORE_MARKER: &str = "retrieval score:";

/// Prompt for generating `t` pseudoqueries from one dataset profile, issued
/// as a single generation call per dataset.
pub fn pseudoquery_prompt(profile: &DatasetProfile, t: usize) -> String {
    format!(
        "You are indexing a tabular dataset for a dataset search engine. \
         Below is the dataset's statistical profile, one line per column.\n\n\
         {}\n\
         {COUNT_MARKER} {t} short natural-language search queries that a user \
         looking for this dataset might type. Requirements:\n\
         1. each query must read like a realistic dataset search request;\n\
         2. together the queries must cover the dataset broadly instead of \
         repeating the same few columns;\n\
         3. when the profile makes a relationship between columns plausible, \
         mention it.\n\
         Write one query per line with no numbering and no extra commentary.\n",
        profile.rendered_text
    )
}

/// Prompt for the query-expansion step: a short background document giving
/// context and terminology for the query. The document itself is never
/// retrieved against.
pub fn expand_prompt(query: &str, max_words: usize) -> String {
    format!(
        "Write a short background document (at most {max_words} words) for the \
         dataset search query below. Cover the surrounding context, the \
         vocabulary of the domain, and the concepts a reader needs to interpret \
         the request. Output only the document text.\n\n\
         {QUERY_MARKER} {query}\n"
    )
}

/// Prompt for decomposing a query (plus its background document) into short,
/// explicit, retrieval-oriented subqueries.
pub fn decompose_prompt(query: &str, background: &str, n_max: usize) -> String {
    format!(
        "Rewrite the dataset search query below into at most {n_max} subqueries. \
         Each subquery must be short, explicit, and retrieval-oriented: a compact \
         phrase naming the data being sought, its key attributes, and any value \
         constraints. Use the background document to resolve ambiguity and supply \
         vocabulary. Write one subquery per line with no numbering.\n\n\
         {QUERY_MARKER} {query}\n\n\
         {BACKGROUND_MARKER} {background}\n"
    )
}

/// Prompt for listwise reranking: every candidate appears with its dataset
/// identifier, retrieval score, and (truncated) statistical profile, and the
/// original user query is judged against the whole list at once.
pub fn rerank_prompt(query: &str, candidates: &[RerankEntry<'_>], profile_word_budget: usize) -> String {
    let mut s = format!(
        "You are ranking candidate tabular datasets for a search query. For each \
         candidate you are given its identifier, its retrieval score (how many of \
         its indexed pseudoqueries matched the query's subqueries), and its \
         statistical profile. Judge relevance to the query below and return the \
         dataset identifiers ordered from most to least relevant, one identifier \
         per line, nothing else.\n\n\
         {QUERY_MARKER} {query}\n\n"
    );
    for entry in candidates {
        s.push_str(&format!(
            "{CANDIDATE_MARKER} {}\n{SCORE_MARKER} {}\nprofile:\n{}\n",
            entry.dataset_id,
            entry.retrieval_score,
            truncate_profile(entry.profile_text, profile_word_budget)
        ));
    }
    s
}

pub struct RerankEntry<'a> {
    pub dataset_id: &'a str,
    pub retrieval_score: usize,
    pub profile_text: &'a str,
}

/// Truncate a rendered profile to a word budget by dropping whole column
/// lines from the tail.
pub fn truncate_profile(text: &str, word_budget: usize) -> String {
    let mut kept: Vec<&str> = Vec::new();
    let mut words = 0usize;
    let mut dropped = 0usize;
    for line in text.lines() {
        let n = line.split_whitespace().count();
        if words + n > word_budget && !kept.is_empty() {
            dropped += 1;
            continue;
        }
        words += n;
        kept.push(line);
    }
    let mut out = kept.join("\n");
    if dropped > 0 {
        out.push_str(&format!("\n({dropped} more columns omitted)"));
    }
    out
}

// ---------------------------------------------------------------------------
// Parsers used by the offline template providers.
// ---------------------------------------------------------------------------

/// Extract the text following `Query:` on its marker line.
pub fn extract_query(prompt: &str) -> Option<&str> {
    extract_after(prompt, QUERY_MARKER)
}

/// Extract the text following `Background:` on its marker line.
pub fn extract_background(prompt: &str) -> Option<&str> {
    extract_after(prompt, BACKGROUND_MARKER)
}

fn extract_after<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(marker))
        .map(str::trim)
}

/// Extract the requested pseudoquery count from a generation prompt.
pub fn extract_count(prompt: &str) -> Option<usize> {
    let idx = prompt.find(COUNT_MARKER)?;
    prompt[idx + COUNT_MARKER.len()..]
        .split_whitespace()
        .next()?
        .parse()
        .ok()
}

/// Candidate ids in order of appearance in a rerank prompt.
pub fn extract_candidate_ids(prompt: &str) -> Vec<&str> {
    prompt
        .lines()
        .filter_map(|l| l.strip_prefix(CANDIDATE_MARKER))
        .map(str::trim)
        .collect()
}

/// A column as read back from a rendered profile line.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedColumn {
    pub name: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

/// Parse the `**name**:` column lines of a rendered profile (as embedded in a
/// pseudoquery prompt), recovering each column's name and numeric range.
pub fn extract_profile_columns(prompt: &str) -> Vec<ParsedColumn> {
    let mut out = Vec::new();
    for line in prompt.lines() {
        let Some(rest) = line.strip_prefix("**") else {
            continue;
        };
        let Some(end) = rest.find("**:") else {
            continue;
        };
        let name = rest[..end].to_string();
        let min = number_after(line, "Min: ");
        let max = number_after(line, "Max: ");
        out.push(ParsedColumn { name, min, max });
    }
    out
}

/// Read the number that follows `marker`, stopping at the first character
/// that cannot continue an f64 literal rendered by Display (which never
/// contains commas or exponents).
fn number_after(line: &str, marker: &str) -> Option<f64> {
    let idx = line.find(marker)? + marker.len();
    let rest = &line[idx..];
    let mut end = 0;
    for (i, c) in rest.char_indices() {
        let numeric = c.is_ascii_digit() || c == '-' || (c == '.' && rest[i + 1..].starts_with(|d: char| d.is_ascii_digit()));
        if !numeric {
            break;
        }
        end = i + c.len_utf8();
    }
    rest[..end].parse().ok()
}
