//! Tokenizer shared by training, classification and entity matching.

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Lowercases `text`, turns every non-alphanumeric character into a token
/// boundary (apostrophes survive only between two alphanumerics, so
/// "professor's" stays whole) and splits on whitespace.
pub fn normalize(text: &str) -> Vec<String> {
    let lowered: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut tokens = Vec::new();
    let mut current = String::new();

    for (i, &c) in lowered.iter().enumerate() {
        let keep = c.is_alphanumeric()
            || (is_apostrophe(c)
                && i > 0
                && lowered[i - 1].is_alphanumeric()
                && lowered.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
        if keep {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}
