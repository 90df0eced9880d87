//! Behavioral-alignment and validity metrics.

use regex::Regex;

use crate::error::{Error, Result};

/// Per-prompt binary correctness of two systems.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectnessVector {
    a: Vec<bool>,
    b: Vec<bool>,
}

impl CorrectnessVector {
    pub fn new(a: Vec<bool>, b: Vec<bool>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::input(format!(
                "correctness vectors differ in length ({} vs {})",
                a.len(),
                b.len()
            )));
        }
        Ok(CorrectnessVector { a, b })
    }

    /// Build from 0/1 integers.
    pub fn from_bits(a: &[u8], b: &[u8]) -> Result<Self> {
        let conv = |v: &[u8]| {
            v.iter()
                .map(|&x| match x {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(Error::input(format!("correctness entry {x} is not 0 or 1"))),
                })
                .collect::<Result<Vec<_>>>()
        };
        CorrectnessVector::new(conv(a)?, conv(b)?)
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Pearson correlation of two binary vectors.
///
/// `None` when either side has zero variance (the correlation is undefined);
/// this is distinct from a defined correlation of 0.
pub fn pearson_correctness(v: &CorrectnessVector) -> Option<f64> {
    let n = v.len() as f64;
    if v.is_empty() {
        return None;
    }
    let x: Vec<f64> = v.a.iter().map(|&b| f64::from(u8::from(b))).collect();
    let y: Vec<f64> = v.b.iter().map(|&b| f64::from(u8::from(b))).collect();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (xi, yi) in x.iter().zip(&y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx).powi(2);
        syy += (yi - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// What counts as a valid (well-formed) response.
#[derive(Debug, Clone, Default)]
pub enum Validator {
    /// A `\boxed{` marker with a matching closing brace.
    #[default]
    Boxed,
    Pattern(Regex),
}

impl Validator {
    pub fn pattern(pattern: &str) -> Result<Self> {
        Regex::new(pattern)
            .map(Validator::Pattern)
            .map_err(|e| Error::input(format!("bad validator pattern: {e}")))
    }

    pub fn is_valid(&self, output: &str) -> bool {
        match self {
            Validator::Boxed => last_boxed(output).is_some(),
            Validator::Pattern(re) => re.is_match(output),
        }
    }
}

const BOXED: &str = "\\boxed{";

/// Contents of the last balanced `\boxed{...}` in `text`.
pub fn last_boxed(text: &str) -> Option<&str> {
    let mut found = None;
    let mut search = 0;
    while let Some(rel) = text[search..].find(BOXED) {
        let open = search + rel + BOXED.len();
        let mut depth = 1usize;
        for (i, ch) in text[open..].char_indices() {
            match ch {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        found = Some(&text[open..open + i]);
                        break;
                    }
                }
                _ => {}
            }
        }
        search = open;
    }
    found
}

/// Fraction of outputs accepted by `validator`; 0 for an empty list.
pub fn valid_response_rate<S: AsRef<str>>(outputs: &[S], validator: &Validator) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    let valid = outputs.iter().filter(|o| validator.is_valid(o.as_ref())).count();
    valid as f64 / outputs.len() as f64
}

/// Decides correctness of an output against a reference answer.
#[derive(Debug, Clone, Default)]
pub enum Grader {
    /// Whitespace-trimmed equality.
    #[default]
    ExactMatch,
    /// Compare the last `\boxed{}` contents with the reference.
    Boxed,
    /// Compare the first capture group (or whole match) with the reference.
    Pattern(Regex),
}

impl Grader {
    pub fn parse(spec: &str) -> Result<Self> {
        match spec {
            "exact" | "exact-match" => Ok(Grader::ExactMatch),
            "boxed" => Ok(Grader::Boxed),
            other => match other.strip_prefix("regex:") {
                Some(p) => Regex::new(p)
                    .map(Grader::Pattern)
                    .map_err(|e| Error::input(format!("bad grader pattern: {e}"))),
                None => Err(Error::input(format!(
                    "unknown grader {other:?} (expected exact, boxed or regex:<pattern>)"
                ))),
            },
        }
    }

    pub fn grade(&self, output: &str, reference: &str) -> bool {
        let reference = reference.trim();
        match self {
            Grader::ExactMatch => output.trim() == reference,
            Grader::Boxed => last_boxed(output).is_some_and(|a| a.trim() == reference),
            Grader::Pattern(re) => re
                .captures(output)
                .and_then(|c| c.get(1).or_else(|| c.get(0)))
                .is_some_and(|m| m.as_str().trim() == reference),
        }
    }
}
