//! Lower-cased byte-level BPE, compatible with the tokenizer the pretrained
//! dual encoder was trained with.
//!
//! Text is whitespace-normalized and lower-cased, split with the
//! pretokenizer regex, mapped through the reversible byte→unicode table and
//! merged greedily by rank. The sequence is wrapped in start/end tokens and
//! padded with zeros to the context length.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use flate2::read::GzDecoder;
use regex::Regex;

use crate::error::{Error, Result};

/// Number of BPE vocabulary entries (byte symbols plus merges) that the
/// merge table is cut at.
pub const BPE_VOCAB_SIZE: usize = 49152;

/// Native context length of the text tower.
pub const DEFAULT_CONTEXT_LENGTH: usize = 77;

const BUNDLED_VOCAB: &[u8] = include_bytes!("../../assets/bpe_simple_vocab_16e6.txt.gz");

const START_TOKEN: &str = "<|startoftext|>";
const END_TOKEN: &str = "<|endoftext|>";

/// A tokenized, padded prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    /// Exactly `context_length` ids; positions past `valid_len` are 0.
    pub ids: Vec<u32>,
    /// Number of real tokens, start and end markers included.
    pub valid_len: usize,
}

impl TokenSequence {
    pub fn valid(&self) -> &[u32] {
        &self.ids[..self.valid_len]
    }

    /// Index of the end-of-sequence marker.
    pub fn eos_position(&self) -> usize {
        self.valid_len - 1
    }
}

#[derive(Clone, Debug)]
pub struct BpeTokenizer {
    encoder: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    byte_encoder: [char; 256],
    pattern: Regex,
    start: u32,
    end: u32,
    context_length: usize,
}

fn bytes_to_unicode() -> Vec<(u8, char)> {
    let mut bs: Vec<u32> = (u32::from('!')..=u32::from('~'))
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut cs = bs.clone();
    let mut n = 0;
    for b in 0..256u32 {
        if !bs.contains(&b) {
            bs.push(b);
            cs.push(256 + n);
            n += 1;
        }
    }
    bs.into_iter()
        .zip(cs)
        .map(|(b, c)| (b as u8, char::from_u32(c).expect("valid code point")))
        .collect()
}

impl BpeTokenizer {
    /// Tokenizer over the bundled merge table.
    pub fn bundled() -> Result<Self> {
        let mut text = String::new();
        GzDecoder::new(BUNDLED_VOCAB)
            .read_to_string(&mut text)
            .map_err(|e| Error::Config(format!("bundled BPE vocabulary is corrupt: {e}")))?;
        Self::from_merges(&text, DEFAULT_CONTEXT_LENGTH)
    }

    /// Process-wide shared instance of [`BpeTokenizer::bundled`].
    pub fn shared() -> Arc<BpeTokenizer> {
        static SHARED: OnceLock<Arc<BpeTokenizer>> = OnceLock::new();
        SHARED
            .get_or_init(|| Arc::new(BpeTokenizer::bundled().expect("bundled vocabulary parses")))
            .clone()
    }

    /// Loads a merges file (plain text or gzip).
    pub fn from_file(path: &Path, context_length: usize) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        if raw.starts_with(&[0x1f, 0x8b]) {
            GzDecoder::new(raw.as_slice())
                .read_to_string(&mut text)
                .map_err(|e| Error::io(path, e))?;
        } else {
            text = String::from_utf8(raw)
                .map_err(|e| Error::Config(format!("{}: not UTF-8: {e}", path.display())))?;
        }
        Self::from_merges(&text, context_length)
    }

    pub fn from_merges(text: &str, context_length: usize) -> Result<Self> {
        if context_length < 2 {
            return Err(Error::Config(format!(
                "context length {context_length} cannot hold start and end tokens"
            )));
        }
        let n_merges = BPE_VOCAB_SIZE - 256 - 2;
        let merges: Vec<(String, String)> = text
            .lines()
            .skip(1)
            .take(n_merges)
            .map(|line| {
                let mut parts = line.split(' ');
                match (parts.next(), parts.next()) {
                    (Some(a), Some(b)) => Ok((a.to_string(), b.to_string())),
                    _ => Err(Error::Config(format!("malformed merge line {line:?}"))),
                }
            })
            .collect::<Result<_>>()?;
        if merges.len() != n_merges {
            return Err(Error::Config(format!(
                "merge table has {} entries, expected {n_merges}",
                merges.len()
            )));
        }

        let table = bytes_to_unicode();
        let mut byte_encoder = ['\0'; 256];
        for &(b, c) in &table {
            byte_encoder[b as usize] = c;
        }
        let mut vocab: Vec<String> = table.iter().map(|&(_, c)| c.to_string()).collect();
        let with_eow: Vec<String> = vocab.iter().map(|v| format!("{v}</w>")).collect();
        vocab.extend(with_eow);
        vocab.extend(merges.iter().map(|(a, b)| format!("{a}{b}")));
        vocab.push(START_TOKEN.to_string());
        vocab.push(END_TOKEN.to_string());

        let encoder: HashMap<String, u32> = vocab
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s, i as u32))
            .collect();
        let ranks = merges.into_iter().enumerate().map(|(i, m)| (m, i)).collect();
        let pattern = Regex::new(
            r"(?i)<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+",
        )
        .expect("static pattern");

        Ok(BpeTokenizer {
            start: encoder[START_TOKEN],
            end: encoder[END_TOKEN],
            encoder,
            ranks,
            byte_encoder,
            pattern,
            context_length,
        })
    }

    pub fn with_context_length(mut self, context_length: usize) -> Self {
        assert!(context_length >= 2);
        self.context_length = context_length;
        self
    }

    pub fn context_length(&self) -> usize {
        self.context_length
    }

    /// Total number of token ids, special tokens included.
    pub fn vocab_size(&self) -> usize {
        self.encoder.len()
    }

    pub fn start_token(&self) -> u32 {
        self.start
    }

    pub fn end_token(&self) -> u32 {
        self.end
    }

    fn bpe(&self, token: &str) -> Vec<String> {
        let chars: Vec<char> = token.chars().collect();
        let mut word: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
        if let Some(last) = word.last_mut() {
            last.push_str("</w>");
        }
        while word.len() > 1 {
            let best = word
                .windows(2)
                .filter_map(|w| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, w[0].clone(), w[1].clone()))
                })
                .min_by_key(|(r, _, _)| *r);
            let Some((_, first, second)) = best else { break };
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == first && word[i + 1] == second {
                    merged.push(format!("{first}{second}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut word[i]));
                    i += 1;
                }
            }
            word = merged;
        }
        word
    }

    /// BPE ids of `text` without start/end markers.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let cleaned = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let mut ids = Vec::new();
        for m in self.pattern.find_iter(&cleaned) {
            let piece: String = m
                .as_str()
                .bytes()
                .map(|b| self.byte_encoder[b as usize])
                .collect();
            for sub in self.bpe(&piece) {
                ids.push(self.encoder[&sub]);
            }
        }
        ids
    }

    /// Full prompt encoding: start marker, BPE ids, end marker, zero padding.
    /// Over-long prompts are truncated with the end marker kept in the last
    /// slot.
    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("prompt is empty".into()));
        }
        let mut ids = Vec::with_capacity(self.context_length);
        ids.push(self.start);
        ids.extend(self.encode(text));
        ids.push(self.end);
        if ids.len() > self.context_length {
            ids.truncate(self.context_length);
            *ids.last_mut().expect("non-empty") = self.end;
        }
        let valid_len = ids.len();
        ids.resize(self.context_length, 0);
        Ok(TokenSequence { ids, valid_len })
    }
}
