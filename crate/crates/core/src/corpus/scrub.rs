use std::sync::LazyLock;

use regex::Regex;

/// Elements whose content reveals the outcome.
pub const LEAKY_TAGS: [&str; 3] = ["overall_status", "why_stop", "why_stopped"];

/// Outcome words removed from generated text.
pub const LABEL_WORDS: [&str; 4] = ["successful", "success", "failed", "failure"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScrubMode {
    /// Drop status and termination-reason content.
    Real,
    /// `Real`, plus the whole words in [`LABEL_WORDS`] (case-insensitive).
    Synthetic,
}

static LEAKY_ELEMENTS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    LEAKY_TAGS
        .iter()
        .map(|tag| {
            Regex::new(&format!(r"(?is)<{tag}(?:\s[^>]*)?/>|<{tag}(?:\s[^>]*)?>.*?</{tag}\s*>"))
                .expect("static pattern")
        })
        .collect()
});

static LABEL_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(&format!(r"(?i)\b(?:{})\b", LABEL_WORDS.join("|"))).expect("static pattern"));

/// Remove label-leaking content. Idempotent in both modes.
///
/// Lines of the form `tag/path: text` whose last path component is a leaky
/// tag are dropped, as are XML-like `<overall_status>...</overall_status>`
/// elements. In synthetic mode every line that lost a label word has its
/// whitespace collapsed (indentation is kept).
pub fn scrub_leakage(text: &str, mode: ScrubMode) -> String {
    let mut current = scrub_pass(text, mode);
    loop {
        let next = scrub_pass(&current, mode);
        if next == current {
            return current;
        }
        current = next;
    }
}

fn scrub_pass(text: &str, mode: ScrubMode) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.split_inclusive('\n') {
        if !is_leaky_field_line(line) {
            out.push_str(line);
        }
    }

    for element in LEAKY_ELEMENTS.iter() {
        if element.is_match(&out) {
            out = element.replace_all(&out, "").into_owned();
        }
    }

    if mode == ScrubMode::Synthetic && LABEL_WORD.is_match(&out) {
        out = out.split_inclusive('\n').map(remove_label_words).collect::<String>();
    }
    out
}

fn is_leaky_field_line(line: &str) -> bool {
    let Some((path, _)) = line.split_once(':') else {
        return false;
    };
    if path.is_empty() || path.chars().any(char::is_whitespace) {
        return false;
    }
    let last = path.rsplit('/').next().unwrap_or(path);
    LEAKY_TAGS.contains(&last)
}

fn remove_label_words(line: &str) -> String {
    if !LABEL_WORD.is_match(line) {
        return line.to_string();
    }
    let (body, newline) = match line.strip_suffix('\n') {
        Some(body) => (body, "\n"),
        None => (line, ""),
    };
    let indent_len = body.len() - body.trim_start().len();
    let stripped = LABEL_WORD.replace_all(&body[indent_len..], "");
    let words: Vec<&str> = stripped.split_whitespace().collect();
    if words.is_empty() {
        return newline.to_string();
    }
    format!("{}{}{}", &body[..indent_len], words.join(" "), newline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clean_text_unchanged() {
        let text = "brief_title: X\nphase: Phase 2\n";
        assert_eq!(scrub_leakage(text, ScrubMode::Real), text);
        assert_eq!(scrub_leakage(text, ScrubMode::Synthetic), text);
    }

    #[test]
    fn real_mode_drops_status_lines() {
        assert_eq!(
            scrub_leakage("overall_status: Completed\nbrief_title: X\n", ScrubMode::Real),
            "brief_title: X\n"
        );
        assert_eq!(
            scrub_leakage(
                "brief_title: X\nwhy_stopped: funding ended\nstatus_block/why_stop: slow\n",
                ScrubMode::Real
            ),
            "brief_title: X\n"
        );
        // real mode keeps the label words
        assert_eq!(
            scrub_leakage("brief_title: a successful trial\n", ScrubMode::Real),
            "brief_title: a successful trial\n"
        );
    }

    #[test]
    fn synthetic_mode_removes_label_words() {
        assert_eq!(
            scrub_leakage("The trial was successful overall.", ScrubMode::Synthetic),
            "The trial was overall."
        );
        assert_eq!(
            scrub_leakage("SUCCESS and Failure, then it failed", ScrubMode::Synthetic),
            "and , then it"
        );
        // whole words only
        assert_eq!(
            scrub_leakage("an unsuccessful, failedness", ScrubMode::Synthetic),
            "an unsuccessful, failedness"
        );
    }

    #[test]
    fn synthetic_mode_keeps_indentation_and_drops_elements() {
        let text = "<clinical_study>\n  <overall_status>Completed</overall_status>\n  <brief_title>A successful  study</brief_title>\n</clinical_study>";
        assert_eq!(
            scrub_leakage(text, ScrubMode::Synthetic),
            "<clinical_study>\n  \n  <brief_title>A study</brief_title>\n</clinical_study>"
        );
    }

    #[test]
    fn rebuilt_leak_is_removed() {
        let text = "<overall_<overall_status>x</overall_status>status>y</overall_status>";
        assert_eq!(scrub_leakage(text, ScrubMode::Real), "");
    }

    fn fixture_text() -> impl Strategy<Value = String> {
        let piece = prop_oneof![
            Just("overall_status: Completed\n".to_string()),
            Just("why_stop: low accrual\n".to_string()),
            Just("<why_stopped>x</why_stopped>".to_string()),
            Just("<overall_".to_string()),
            Just("status>".to_string()),
            Just("</overall_status>".to_string()),
            Just("Successful".to_string()),
            Just("success".to_string()),
            Just("FAILED".to_string()),
            Just("failure".to_string()),
            Just("fail".to_string()),
            Just("ed".to_string()),
            Just(" ".to_string()),
            Just("  ".to_string()),
            Just("\n".to_string()),
            Just("\t".to_string()),
            Just(":".to_string()),
            Just("/".to_string()),
            "[a-z_]{1,8}",
        ];
        prop::collection::vec(piece, 0..30).prop_map(|v| v.concat())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn idempotent_both_modes(text in fixture_text()) {
            for mode in [ScrubMode::Real, ScrubMode::Synthetic] {
                let once = scrub_leakage(&text, mode);
                prop_assert_eq!(scrub_leakage(&once, mode), once.clone());
                for line in once.lines() {
                    prop_assert!(!is_leaky_field_line(line));
                }
                if mode == ScrubMode::Synthetic {
                    prop_assert!(!LABEL_WORD.is_match(&once));
                }
            }
        }
    }
}
