use std::ops::Deref;

/// Lowercased tokens produced by [`tokenize`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn into_inner(self) -> Vec<String> {
        self.0
    }

    /// Wraps tokens that are already canonical. Intended for tests and
    /// oracles that build sequences symbol by symbol.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenSeq(tokens.into_iter().map(Into::into).collect())
    }
}

impl Deref for TokenSeq {
    type Target = [String];

    fn deref(&self) -> &[String] {
        &self.0
    }
}

/// Case-folds, then splits on anything that is not alphanumeric. Punctuation
/// is dropped and digit runs stay whole: `"52,3%"` gives `["52", "3"]`.
pub fn tokenize(text: &str) -> TokenSeq {
    TokenSeq(
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect(),
    )
}
