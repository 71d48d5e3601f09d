//! Byte-level BPE tokenizer compatible with the CLIP text tower.
//!
//! The vocabulary is derived from a merges file (`#version` header, then
//! one `left right` pair per line): 256 byte symbols, the same symbols
//! with an end-of-word marker, one token per merge, then the start and end
//! markers.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use regex::Regex;

use crate::{Error, Result};

pub const CONTEXT_LENGTH: usize = 77;
const START: &str = "<|startoftext|>";
const END: &str = "<|endoftext|>";
const END_OF_WORD: &str = "</w>";
/// The reference vocabulary keeps this many merges.
const MAX_MERGES: usize = 49152 - 256 - 2;

#[derive(Debug, Clone)]
pub struct ClipTokenizer {
    byte_encoder: Vec<char>,
    encoder: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    pattern: Regex,
    start: u32,
    end: u32,
}

/// Printable stand-in character for every byte value, indexed by byte.
fn bytes_to_unicode() -> Vec<char> {
    let mut table = vec!['\0'; 256];
    let mut extra = 0;
    for b in 0..=255u8 {
        let printable = matches!(b, b'!'..=b'~' | 0xA1..=0xAC | 0xAE..=0xFF);
        let code = if printable {
            b as u32
        } else {
            extra += 1;
            255 + extra
        };
        table[b as usize] = char::from_u32(code).expect("valid code point");
    }
    table
}

/// Byte values in vocabulary order.
fn vocab_byte_order() -> Vec<u8> {
    let mut order: Vec<u8> = (b'!'..=b'~').chain(0xA1..=0xAC).chain(0xAE..=0xFF).collect();
    for b in 0..=255u8 {
        if !order.contains(&b) {
            order.push(b);
        }
    }
    order
}

/// Collapse whitespace runs, trim, lowercase.
pub fn clean_text(text: &str) -> String {
    let unescaped = text
        .replace("&amp;", "&")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'");
    unescaped.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl ClipTokenizer {
    pub fn load(merges_path: impl AsRef<Path>) -> Result<Self> {
        let path = merges_path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_merges(&text)
    }

    pub fn from_merges(text: &str) -> Result<Self> {
        let byte_encoder = bytes_to_unicode();
        let mut lines = text.lines();
        if !lines.next().is_some_and(|l| l.starts_with("#version")) {
            return Err(Error::Encoder("merges file must start with a #version line".into()));
        }
        let merges: Vec<(String, String)> = lines
            .filter(|l| !l.trim().is_empty())
            .take(MAX_MERGES)
            .enumerate()
            .map(|(i, l)| {
                let mut parts = l.split_whitespace();
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(a), Some(b), None) => Ok((a.to_string(), b.to_string())),
                    _ => Err(Error::Encoder(format!("bad merge on line {}: `{l}`", i + 2))),
                }
            })
            .collect::<Result<_>>()?;

        let mut vocab: Vec<String> = vocab_byte_order()
            .iter()
            .map(|&b| byte_encoder[b as usize].to_string())
            .collect();
        let with_eow: Vec<String> = vocab.iter().map(|v| format!("{v}{END_OF_WORD}")).collect();
        vocab.extend(with_eow);
        vocab.extend(merges.iter().map(|(a, b)| format!("{a}{b}")));
        vocab.push(START.into());
        vocab.push(END.into());

        let encoder: HashMap<String, u32> =
            vocab.iter().enumerate().map(|(i, v)| (v.clone(), i as u32)).collect();
        let ranks = merges.into_iter().enumerate().map(|(i, m)| (m, i)).collect();
        let pattern = Regex::new(
            r"(?i)<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|\p{L}+|\p{N}|[^\s\p{L}\p{N}]+",
        )
        .expect("static pattern");
        Ok(ClipTokenizer {
            start: encoder[START],
            end: encoder[END],
            byte_encoder,
            encoder,
            ranks,
            pattern,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.encoder.len()
    }

    /// Split cleaned text into the words BPE runs on.
    pub fn pre_tokenize(&self, text: &str) -> Vec<String> {
        let cleaned = clean_text(text);
        self.pattern
            .find_iter(&cleaned)
            .map(|m| m.as_str().to_string())
            .collect()
    }

    fn bpe(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        if let Some(last) = symbols.last_mut() {
            last.push_str(END_OF_WORD);
        }
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((_, at)) = best else { break };
            let (left, right) = (symbols[at].clone(), symbols[at + 1].clone());
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    merged.push(format!("{left}{right}"));
                    i += 2;
                } else {
                    merged.push(symbols[i].clone());
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    /// Token ids without start/end markers.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in self.pre_tokenize(text) {
            if word == START {
                ids.push(self.start);
                continue;
            }
            if word == END {
                ids.push(self.end);
                continue;
            }
            let mapped: String = word.bytes().map(|b| self.byte_encoder[b as usize]).collect();
            for piece in self.bpe(&mapped) {
                ids.push(self.encoder[&piece]);
            }
        }
        ids
    }

    /// `[start, tokens…, end]`, truncated and zero-padded to
    /// [`CONTEXT_LENGTH`]. A truncated sequence still ends with the end
    /// marker.
    pub fn encode_padded(&self, text: &str) -> Vec<u32> {
        let mut ids = vec![self.start];
        ids.extend(self.encode(text));
        ids.truncate(CONTEXT_LENGTH - 1);
        ids.push(self.end);
        ids.resize(CONTEXT_LENGTH, 0);
        ids
    }

    pub fn end_id(&self) -> u32 {
        self.end
    }
}
