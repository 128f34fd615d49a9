//! Text normalization and whole-word surface-form matching.
//!
//! Both the anatomy matcher and the entity extractor share these rules:
//! strings are lowercased and whitespace runs collapse to one space, and a
//! surface form only matches where it is flanked by non-token characters
//! (letters and digits are token characters).

/// Lowercase, trim, and collapse every run of whitespace into a single space.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

#[inline]
pub fn is_token_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Byte ranges of every whole-word occurrence of `needle` in `haystack`.
///
/// Both arguments are expected to be normalized already.
pub fn whole_word_matches(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    if needle.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let left_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !is_token_char(c));
        let right_ok = haystack[end..]
            .chars()
            .next()
            .is_none_or(|c| !is_token_char(c));
        if left_ok && right_ok {
            out.push((start, end));
        }
        // advance by one char so overlapping occurrences are still seen
        let step = haystack[start..].chars().next().map_or(1, char::len_utf8);
        from = start + step;
    }
    out
}

/// A matched span tagged with the id of the entry that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub id: usize,
}

/// Resolve overlapping surface-form matches with longest-match-wins.
///
/// `forms` yields `(normalized surface form, entry id)` pairs. Candidate
/// spans are accepted greedily by descending length, then ascending start;
/// a candidate overlapping an accepted span is discarded. The result is
/// sorted by start offset.
pub fn longest_matches<'a, I>(haystack: &str, forms: I) -> Vec<Span>
where
    I: IntoIterator<Item = (&'a str, usize)>,
{
    let mut candidates: Vec<Span> = forms
        .into_iter()
        .flat_map(|(form, id)| {
            whole_word_matches(haystack, form)
                .into_iter()
                .map(move |(start, end)| Span { start, end, id })
        })
        .collect();
    candidates.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
            .then(a.id.cmp(&b.id))
    });
    let mut accepted: Vec<Span> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|a| c.end <= a.start || c.start >= a.end) {
            accepted.push(c);
        }
    }
    accepted.sort_by_key(|s| (s.start, s.id));
    accepted
}
