//! Corpus augmentation: seeded noise injection and clause-level slicing.
//!
//! Noise only works at word boundaries. Words that carry the order signal
//! (anything with a digit, directory aliases) are never touched, so the rule
//! grammar reads the same order out of the noisy text.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use thiserror::Error;

use crate::lexicon::FILLERS;
use crate::order::{normalize_alias, SymbolDirectory};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ForgeError {
    #[error("probability `{name}` = {value} is outside [0, 1]")]
    Probability { name: &'static str, value: String },
    #[error("`{0}` probability is positive but its lexicon is empty")]
    EmptyLexicon(&'static str),
    #[error("bad protected pattern: {0}")]
    Pattern(String),
    #[error("lexicon line {line}: {detail}")]
    Lexicon { line: usize, detail: String },
}

const DEFAULT_CODE_MIX: &[(&str, &str)] = &[
    ("and", "和"),
    ("but", "但是"),
    ("then", "然后"),
    ("so", "所以"),
    ("maybe", "也许"),
    ("really", "真的"),
    ("also", "也"),
    ("because", "因为"),
    ("first", "先"),
];

const DEFAULT_PUNCTUATION: &[&[&str]] = &[&[",", "...", ";"], &[".", "!", "...", "!!"], &["?", "?!", "??"]];

const TRAILING: &[char] = &[',', '.', ';', ':', '!', '?', '…', '，', '。', '；', '：', '！', '？'];

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub seed: u64,
    pub fillers: Vec<String>,
    /// Groups of interchangeable trailing marks.
    pub punctuation: Vec<Vec<String>>,
    /// Whole-word substitutions, matched case-insensitively on the left side.
    pub code_mix: Vec<(String, String)>,
    pub filler_p: f64,
    pub punctuation_p: f64,
    pub code_mix_p: f64,
}

impl NoiseSpec {
    pub fn new(seed: u64) -> Self {
        NoiseSpec {
            seed,
            fillers: FILLERS.iter().map(|s| s.to_string()).collect(),
            punctuation: DEFAULT_PUNCTUATION
                .iter()
                .map(|g| g.iter().map(|s| s.to_string()).collect())
                .collect(),
            code_mix: DEFAULT_CODE_MIX
                .iter()
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .collect(),
            filler_p: 0.3,
            punctuation_p: 0.3,
            code_mix_p: 0.1,
        }
    }

    pub fn silent(seed: u64) -> Self {
        NoiseSpec {
            filler_p: 0.0,
            punctuation_p: 0.0,
            code_mix_p: 0.0,
            ..NoiseSpec::new(seed)
        }
    }

    pub fn validate(&self) -> Result<(), ForgeError> {
        for (name, value, empty) in [
            ("filler", self.filler_p, self.fillers.is_empty()),
            (
                "punctuation",
                self.punctuation_p,
                self.punctuation.iter().all(|g| g.len() < 2),
            ),
            ("code_mix", self.code_mix_p, self.code_mix.is_empty()),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(ForgeError::Probability {
                    name,
                    value: value.to_string(),
                });
            }
            if value > 0.0 && empty {
                return Err(ForgeError::EmptyLexicon(name));
            }
        }
        Ok(())
    }
}

/// One entry per line; blank lines and `#` comments skipped.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// `source<TAB>replacement` per line.
pub fn parse_code_mix(text: &str) -> Result<Vec<(String, String)>, ForgeError> {
    let mut pairs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = line.split_once('\t').ok_or_else(|| ForgeError::Lexicon {
            line: idx + 1,
            detail: "expected `source<TAB>replacement`".into(),
        })?;
        let (a, b) = (a.trim(), b.trim());
        if a.is_empty() || b.is_empty() || a.contains(char::is_whitespace) || b.contains(char::is_whitespace) {
            return Err(ForgeError::Lexicon {
                line: idx + 1,
                detail: "both sides must be single words".into(),
            });
        }
        pairs.push((a.to_lowercase(), b.to_string()));
    }
    Ok(pairs)
}

/// Words that noise must leave alone.
#[derive(Debug, Clone)]
pub struct ProtectedTokens {
    patterns: Vec<Regex>,
    aliases: Vec<Vec<String>>,
}

impl ProtectedTokens {
    /// Numerals (which covers ticker codes) plus every alias in `dir`.
    pub fn from_directory(dir: &SymbolDirectory) -> Self {
        let mut aliases: Vec<Vec<String>> = dir
            .entries()
            .map(|(alias, _)| alias.split(' ').map(str::to_string).collect())
            .collect();
        aliases.sort_by_key(|a| std::cmp::Reverse(a.len()));
        ProtectedTokens {
            patterns: vec![Regex::new(r"\d").expect("digit pattern compiles")],
            aliases,
        }
    }

    pub fn with_pattern(mut self, pattern: &str) -> Result<Self, ForgeError> {
        self.patterns
            .push(Regex::new(pattern).map_err(|e| ForgeError::Pattern(e.to_string()))?);
        Ok(self)
    }

    fn mask(&self, cores: &[String]) -> Vec<bool> {
        let keys: Vec<String> = cores.iter().map(|c| alias_key(c)).collect();
        let mut mask: Vec<bool> = cores
            .iter()
            .map(|c| self.patterns.iter().any(|p| p.is_match(c)))
            .collect();
        for alias in &self.aliases {
            let n = alias.len();
            for start in 0..keys.len() {
                let hit = if n == 1 && !alias[0].is_ascii() {
                    keys[start].contains(alias[0].as_str())
                } else {
                    start + n <= keys.len() && keys[start..start + n] == alias[..]
                };
                if hit {
                    mask[start..(start + n).min(keys.len())].fill(true);
                }
            }
        }
        mask
    }
}

fn alias_key(core: &str) -> String {
    let lower = normalize_alias(core.trim_start_matches(|c: char| !c.is_alphanumeric()));
    for suffix in ["'s", "’s"] {
        if let Some(s) = lower.strip_suffix(suffix) {
            return s.to_string();
        }
    }
    lower
}

/// A word split into leading whitespace, body and trailing punctuation.
struct Piece<'a> {
    space: &'a str,
    core: &'a str,
    tail: &'a str,
}

fn pieces(text: &str) -> (Vec<Piece<'_>>, &str) {
    let mut out = Vec::new();
    let mut rest = text;
    loop {
        let word_start = rest.find(|c: char| !c.is_whitespace()).unwrap_or(rest.len());
        if word_start == rest.len() {
            return (out, rest);
        }
        let space = &rest[..word_start];
        let after = &rest[word_start..];
        let word_len = after.find(char::is_whitespace).unwrap_or(after.len());
        let word = &after[..word_len];
        let core = word.trim_end_matches(TRAILING);
        let (core, tail) = if core.is_empty() {
            (word, "")
        } else {
            word.split_at(core.len())
        };
        out.push(Piece { space, core, tail });
        rest = &after[word_len..];
    }
}

/// Seeded noise over word boundaries. Deterministic in `(text, spec)`; the
/// result never has fewer words than the input.
pub fn inject_noise(text: &str, spec: &NoiseSpec, protected: &ProtectedTokens) -> Result<String, ForgeError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (words, trailing_space) = pieces(text);
    let cores: Vec<String> = words.iter().map(|p| p.core.to_string()).collect();
    let mask = protected.mask(&cores);

    let mut out = String::with_capacity(text.len() + 32);
    for (i, piece) in words.iter().enumerate() {
        out.push_str(piece.space);
        let inside_span = i > 0 && mask[i - 1] && mask[i];
        if !inside_span && rng.random_bool(spec.filler_p) {
            let latin = piece.core.is_ascii();
            let same_script: Vec<&String> = spec.fillers.iter().filter(|f| f.is_ascii() == latin).collect();
            let pool: Vec<&String> = if same_script.is_empty() {
                spec.fillers.iter().collect()
            } else {
                same_script
            };
            let filler = pool[rng.random_range(0..pool.len())];
            let ascii = filler.is_ascii();
            let mut f = if i == 0 && ascii {
                capitalize(filler)
            } else {
                filler.clone()
            };
            if ascii {
                f.push_str(["", "...", ","][rng.random_range(0..3)]);
            }
            out.push_str(&f);
            out.push(' ');
        }
        if mask[i] {
            out.push_str(piece.core);
            out.push_str(piece.tail);
            continue;
        }
        let lower = piece.core.to_lowercase();
        let swap = spec.code_mix.iter().find(|(from, _)| *from == lower);
        match swap {
            Some((_, to)) if rng.random_bool(spec.code_mix_p) => out.push_str(to),
            _ => out.push_str(piece.core),
        }
        let group = spec
            .punctuation
            .iter()
            .find(|g| g.len() > 1 && g.iter().any(|m| m == piece.tail));
        match group {
            Some(g) if rng.random_bool(spec.punctuation_p) => {
                let others: Vec<&String> = g.iter().filter(|m| *m != piece.tail).collect();
                out.push_str(others[rng.random_range(0..others.len())]);
            }
            _ => out.push_str(piece.tail),
        }
    }
    out.push_str(trailing_space);
    Ok(out)
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// A slice of the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    /// Exact source span including the whitespace that follows it.
    pub source: String,
    /// Display form: trimmed, a clause-ending comma or semicolon turned into a period.
    pub text: String,
    pub words: usize,
}

/// Splits at clause punctuation so each segment has close to `target` words
/// and at most `target + 2`. Concatenating `source` fields gives back the input.
/// Text without spaces between words counts as one word.
pub fn slice(text: &str, target: usize) -> Vec<Segment> {
    let target = target.max(1);
    let (words, _) = pieces(text);
    if words.is_empty() {
        return if text.is_empty() {
            Vec::new()
        } else {
            vec![Segment {
                source: text.to_string(),
                text: String::new(),
                words: 0,
            }]
        };
    }
    // byte offset where each word starts, including its leading space for i > 0
    let mut starts = Vec::with_capacity(words.len() + 1);
    let mut pos = 0;
    for (i, p) in words.iter().enumerate() {
        starts.push(if i == 0 { 0 } else { pos });
        pos += p.space.len() + p.core.len() + p.tail.len();
    }
    // segments end after a word, so the next one starts at its first non-space
    let word_begin = |i: usize| starts[i] + words[i].space.len();
    let clause_end = |i: usize| !words[i].tail.is_empty();

    let mut cuts = Vec::new();
    let mut begin = 0;
    while words.len() - begin > target + 2 {
        let window = begin + 1..=begin + target + 2;
        let best = window
            .clone()
            .filter(|&end| clause_end(end - 1))
            .min_by_key(|&end| ((end - begin).abs_diff(target), end));
        let end = best.unwrap_or(begin + target);
        cuts.push(end);
        begin = end;
    }

    let mut segments = Vec::new();
    let mut from_word = 0;
    let mut from_byte = 0;
    for end in cuts.into_iter().chain([words.len()]) {
        let to_byte = if end == words.len() {
            text.len()
        } else {
            word_begin(end)
        };
        let source = &text[from_byte..to_byte];
        segments.push(Segment {
            source: source.to_string(),
            text: display_form(source),
            words: end - from_word,
        });
        from_word = end;
        from_byte = to_byte;
    }
    segments
}

fn display_form(source: &str) -> String {
    let trimmed = source.trim();
    match trimmed.char_indices().last() {
        Some((i, ',' | ';' | ':')) => format!("{}.", &trimmed[..i]),
        Some((i, '，' | '；' | '：')) => format!("{}。", &trimmed[..i]),
        _ => trimmed.to_string(),
    }
}
