//! Word-level text normalisation shared by tokenisation and the metrics.

const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':'];

fn is_punct_token(w: &str) -> bool {
    w.len() == 1 && w.chars().all(|c| PUNCT.contains(&c))
}

/// Lowercased words with sentence punctuation split into separate tokens.
pub fn words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        let mut cur = String::new();
        for c in lower.chars() {
            if PUNCT.contains(&c) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Joins words with single spaces, attaching punctuation to the previous word.
pub fn join_words<S: AsRef<str>>(words: &[S]) -> String {
    let mut out = String::new();
    for w in words {
        let w = w.as_ref();
        if !out.is_empty() && !is_punct_token(w) {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}

/// Canonical form of a text: lowercased, punctuation-normalised, single spaces.
pub fn normalize(text: &str) -> String {
    join_words(&words(text))
}

/// Collapses runs of whitespace and trims, preserving case.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_and_rejoins_punctuation() {
        assert_eq!(words("I was  hungry."), vec!["i", "was", "hungry", "."]);
        assert_eq!(normalize("  Hello,   World!  "), "hello, world!");
        assert_eq!(normalize(""), "");
        assert_eq!(words("didn't"), vec!["didn't"]);
    }

    #[test]
    fn normalisation_is_idempotent() {
        for s in ["A b. C", "x ,y", "The CAT sat ."] {
            let n = normalize(s);
            assert_eq!(normalize(&n), n);
        }
    }
}
