use crate::error::{Error, Result};

/// Makes a text safe to embed in a prompt: whitespace runs collapse to one
/// space and `<` becomes `&lt;`, so the only `<Document` markers in a prompt
/// are the ones the template writes.
pub fn escape_text(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace('<', "&lt;")
}

fn push_listing<S: AsRef<str>>(out: &mut String, question: &str, texts: &[S]) {
    out.push_str("<Question> ");
    out.push_str(&escape_text(question));
    out.push('\n');
    for (i, t) in texts.iter().enumerate() {
        out.push_str(&format!(
            "<Document{}> {}\n",
            i + 1,
            escape_text(t.as_ref())
        ));
    }
}

/// List-wise re-ranking prompt. The wording is frozen: cached responses are
/// keyed by the exact prompt text.
pub fn build_rerank_prompt<S: AsRef<str>>(question: &str, texts: &[S]) -> Result<String> {
    let k = texts.len();
    if k < 2 {
        return Err(Error::invalid(format!(
            "re-ranking needs at least 2 candidates, got {k}"
        )));
    }
    let mut out = format!(
        "I will provide you with {k} documents, each labelled with a numerical identifier. \
         Rank the documents by their relevance to the question.\n\n"
    );
    push_listing(&mut out, question, texts);
    out.push_str(&format!(
        "\nRank all {k} documents above by relevance to the question, most relevant first. \
         Answer only with the identifiers in descending order of relevance, in the form \
         Document2 > Document1 > ..., listing every document exactly once. \
         Do not explain and do not output anything else."
    ));
    Ok(out)
}

/// Similarity-score prompt used for direct distillation.
pub fn build_score_prompt<S: AsRef<str>>(question: &str, texts: &[S]) -> Result<String> {
    let k = texts.len();
    if k == 0 {
        return Err(Error::EmptyInput("candidate list"));
    }
    let mut out = format!(
        "I will provide one query with {k} documents, each indicated by a number identifier. \
         Answer with a list of similarity scores between the query and each document, \
         in document order, based on your judgment.\n\
         The score should be between 0-1.\n\
         Do not explain and only output the score list, like [0.3, 0.9, ...].\n"
    );
    push_listing(&mut out, question, texts);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOCS: [&str; 5] = ["one", "two", "three", "four", "five"];

    #[test]
    fn rerank_prompt_is_deterministic_and_numbered() {
        let a = build_rerank_prompt("who?", &DOCS).unwrap();
        assert_eq!(a, build_rerank_prompt("who?", &DOCS).unwrap());
        assert_eq!(a.matches("<Document").count(), 5);
        assert!(a.contains("<Document5> five"));
        assert!(build_rerank_prompt("who?", &DOCS[..1]).is_err());
    }

    #[test]
    fn marker_text_in_candidates_is_escaped() {
        let docs = [
            "see <Document2> here",
            "<Document9>",
            "plain\n\nmulti   line",
        ];
        let p = build_rerank_prompt("<Document1>?", &docs).unwrap();
        assert_eq!(p.matches("<Document").count(), 3);
        assert!(p.contains("&lt;Document2>"));
        assert!(p.contains("<Document3> plain multi line\n"));
    }

    #[test]
    fn score_prompt_shape() {
        let p = build_score_prompt("q", &DOCS[..3]).unwrap();
        assert!(p.contains("The score should be between 0-1"));
        assert!(p.contains("one query with 3 documents"));
        assert_eq!(p.matches("<Document").count(), 3);
        assert_eq!(p, build_score_prompt("q", &DOCS[..3]).unwrap());
        assert!(build_score_prompt::<&str>("q", &[]).is_err());
    }
}
