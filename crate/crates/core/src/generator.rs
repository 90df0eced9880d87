//! The generator and reward interfaces shared by the toy model and the
//! remote backends.
//!
//! A [`Generator`] is a frozen prior: it can draw a complete response for a
//! prompt, and it can continue a kept prefix of a response under exactly the
//! same decoding law. Responses are cut on "units" (tokens for the toy model,
//! whitespace-delimited words for text backends).

use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::reward::RewardScore;

/// Random source owned by a single chain.
pub type ChainRng = ChaCha8Rng;

/// A sequence of opaque token ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<u32>);

impl TokenSeq {
    pub fn new(tokens: Vec<u32>) -> Self {
        TokenSeq(tokens)
    }

    pub fn empty() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for TokenSeq {
    fn from(tokens: Vec<u32>) -> Self {
        TokenSeq(tokens)
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, "]")
    }
}

/// A complete response that can be cut into a prefix of whole units.
pub trait Response: Clone + PartialEq + fmt::Debug + Send + Sync {
    /// Number of cuttable units.
    fn unit_len(&self) -> usize;

    /// The first `cut` units. `cut` is clamped to `unit_len()`.
    fn prefix(&self, cut: usize) -> Self;
}

impl Response for TokenSeq {
    fn unit_len(&self) -> usize {
        self.0.len()
    }

    fn prefix(&self, cut: usize) -> Self {
        TokenSeq(self.0[..cut.min(self.0.len())].to_vec())
    }
}

/// Completion text from a remote backend.
///
/// `token_count` is the backend-reported token length of `text` when known;
/// it feeds the remaining-length budget of later suffix requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextResponse {
    pub text: String,
    pub token_count: Option<u64>,
}

impl TextResponse {
    pub fn new(text: impl Into<String>) -> Self {
        TextResponse {
            text: text.into(),
            token_count: None,
        }
    }

    /// Byte offsets where each whitespace-delimited word starts.
    pub fn word_starts(&self) -> Vec<usize> {
        let mut starts = Vec::new();
        let mut in_word = false;
        for (i, ch) in self.text.char_indices() {
            if ch.is_whitespace() {
                in_word = false;
            } else if !in_word {
                starts.push(i);
                in_word = true;
            }
        }
        starts
    }

    /// Byte offsets just past the end of each word.
    pub fn word_ends(&self) -> Vec<usize> {
        let mut ends = Vec::new();
        let mut in_word = false;
        for (i, ch) in self.text.char_indices() {
            if ch.is_whitespace() {
                if in_word {
                    ends.push(i);
                }
                in_word = false;
            } else {
                in_word = true;
            }
        }
        if in_word {
            ends.push(self.text.len());
        }
        ends
    }
}

impl Response for TextResponse {
    fn unit_len(&self) -> usize {
        self.word_starts().len()
    }

    /// The first `cut` words, without the whitespace that follows them.
    fn prefix(&self, cut: usize) -> Self {
        let end = if cut == 0 {
            0
        } else {
            self.word_ends().get(cut - 1).copied().unwrap_or(self.text.len())
        };
        let text = self.text[..end].to_string();
        let token_count = self.token_count.map(|n| {
            if self.text.is_empty() {
                0
            } else {
                (n as f64 * end as f64 / self.text.len() as f64).round() as u64
            }
        });
        TextResponse { text, token_count }
    }
}

/// A frozen prior over complete responses.
pub trait Generator: Send + Sync {
    type Prompt: ?Sized + Sync;
    type Response: Response;

    /// Draw a complete response from the prior.
    fn sample_full(&self, prompt: &Self::Prompt, rng: &mut ChainRng) -> Result<Self::Response>;

    /// Keep `prefix` and regenerate the rest from the prior's conditional law.
    /// The returned response starts with `prefix`.
    fn sample_suffix(
        &self,
        prompt: &Self::Prompt,
        prefix: &Self::Response,
        rng: &mut ChainRng,
    ) -> Result<Self::Response>;
}

/// Scores complete prompt/response pairs.
pub trait RewardBackend<P: ?Sized, R>: Send + Sync {
    fn score(&self, prompt: &P, response: &R) -> Result<RewardScore>;
}

impl<G: Generator + ?Sized> Generator for &G {
    type Prompt = G::Prompt;
    type Response = G::Response;

    fn sample_full(&self, prompt: &Self::Prompt, rng: &mut ChainRng) -> Result<Self::Response> {
        (**self).sample_full(prompt, rng)
    }

    fn sample_suffix(
        &self,
        prompt: &Self::Prompt,
        prefix: &Self::Response,
        rng: &mut ChainRng,
    ) -> Result<Self::Response> {
        (**self).sample_suffix(prompt, prefix, rng)
    }
}

impl<P: ?Sized, R, B: RewardBackend<P, R> + ?Sized> RewardBackend<P, R> for &B {
    fn score(&self, prompt: &P, response: &R) -> Result<RewardScore> {
        (**self).score(prompt, response)
    }
}
