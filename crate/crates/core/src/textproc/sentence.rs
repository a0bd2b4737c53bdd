/// Collapses whitespace runs to a single space and trims both ends.
pub fn normalize_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Byte ranges of the sentences in `text`.
///
/// A sentence ends after a run of `.`, `!` or `?` that is followed by
/// whitespace or the end of input. Spans are trimmed of surrounding
/// whitespace and never empty; together they cover every non-whitespace
/// character of `text`.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        let begin = *start.get_or_insert(i);
        if matches!(c, '.' | '!' | '?') {
            let mut end = i + c.len_utf8();
            while let Some(&(j, d)) = chars.peek() {
                if matches!(d, '.' | '!' | '?') {
                    end = j + d.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            let at_boundary = chars.peek().is_none_or(|&(_, d)| d.is_whitespace());
            if at_boundary {
                spans.push((begin, end));
                start = None;
            }
        }
    }
    if let Some(begin) = start {
        let end = text.trim_end().len();
        spans.push((begin, end));
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sentences(text: &str) -> Vec<&str> {
        sentence_spans(text).into_iter().map(|(s, e)| &text[s..e]).collect()
    }

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(
            sentences("Masks help. Do they?  Yes!!  trailing"),
            ["Masks help.", "Do they?", "Yes!!", "trailing"]
        );
    }

    #[test]
    fn decimal_points_do_not_split() {
        assert_eq!(sentences("Dose was 2.5 mg. Then stop."), ["Dose was 2.5 mg.", "Then stop."]);
    }

    #[test]
    fn empty_and_blank() {
        assert!(sentence_spans("").is_empty());
        assert!(sentence_spans("  \n ").is_empty());
    }

    #[test]
    fn normalizes_whitespace() {
        assert_eq!(normalize_whitespace("  a\n\tb   c "), "a b c");
    }

    proptest! {
        #[test]
        fn spans_cover_all_non_whitespace(text in "[a-z .!?\n]{0,80}") {
            let spans = sentence_spans(&text);
            let joined: String = spans.iter().map(|&(s, e)| &text[s..e]).collect();
            let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(strip(&joined), strip(&text));
            prop_assert!(spans.iter().all(|&(s, e)| s < e));
            prop_assert!(spans.windows(2).all(|w| w[0].1 <= w[1].0));
        }
    }
}
