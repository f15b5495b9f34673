//! WordPiece vocabulary and the document encoding fed to the encoder:
//! `[CLS] w … w [SEP]` per sentence, alternating segments per sentence,
//! and sentence-aware truncation.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";

/// Reserved tokens, in id order. They occupy ids `0..7` of every vocabulary.
pub const RESERVED: [&str; 7] = [PAD, UNK, CLS, SEP, MASK, BOS, EOS];

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;
pub const MASK_ID: usize = 4;
pub const BOS_ID: usize = 5;
pub const EOS_ID: usize = 6;

/// Prefix of word-internal pieces.
pub const CONTINUATION: &str = "##";

pub fn is_reserved(id: usize) -> bool {
    id < RESERVED.len()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    /// Whether words are lowercased before lookup.
    pub lowercase: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VocabOptions {
    /// Upper bound on the vocabulary size. Reserved tokens and character
    /// pieces are always kept; whole words fill the remaining room.
    pub max_size: usize,
    pub min_freq: usize,
    pub lowercase: bool,
}

impl Default for VocabOptions {
    fn default() -> Self {
        Self {
            max_size: 8000,
            min_freq: 1,
            lowercase: true,
        }
    }
}

impl Vocab {
    /// Vocabulary with the given id order; reserved tokens must come first.
    pub fn from_tokens(tokens: Vec<String>, lowercase: bool) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::input(format!("token {t:?} occurs twice in the vocabulary")));
            }
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::input(format!("vocabulary id {i} must be {r}")));
            }
        }
        Ok(Self { tokens, index, lowercase })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path, lowercase: bool) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        Self::from_tokens(text.lines().map(str::to_string).collect(), lowercase)
    }

    fn normalize(&self, word: &str) -> String {
        if self.lowercase {
            word.to_lowercase()
        } else {
            word.to_string()
        }
    }

    /// Subword ids of one sentence of words.
    pub fn encode_words<W: AsRef<str>>(&self, words: &[W]) -> Vec<usize> {
        words
            .iter()
            .flat_map(|w| wordpiece_tokenize(&self.normalize(w.as_ref()), self))
            .collect()
    }
}

/// Frequency-built vocabulary: reserved tokens, then every character seen
/// (both word-initial and `##`-continued), then whole words with count at
/// least `min_freq`, most frequent first, ties broken lexicographically.
pub fn build_vocab<'a, I>(sentences: I, options: VocabOptions) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut chars = std::collections::BTreeSet::new();
    for sentence in sentences {
        for word in sentence {
            let word = if options.lowercase { word.to_lowercase() } else { word.clone() };
            chars.extend(word.chars());
            *counts.entry(word).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::input("cannot build a vocabulary from an empty corpus"));
    }
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    for c in &chars {
        tokens.push(c.to_string());
        tokens.push(format!("{CONTINUATION}{c}"));
    }
    let mut words: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, n)| *n >= options.min_freq && w.chars().count() > 1 && !w.starts_with(CONTINUATION))
        .collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let room = options.max_size.saturating_sub(tokens.len());
    tokens.extend(words.into_iter().take(room).map(|(w, _)| w));
    tokens.retain({
        let mut seen = std::collections::HashSet::new();
        move |t| seen.insert(t.clone())
    });
    Vocab::from_tokens(tokens, options.lowercase)
}

/// Greedy longest-match-first segmentation of one word. Reserved tokens
/// never match text; a word with any unmatched remainder becomes `[UNK]`.
pub fn wordpiece_tokenize(word: &str, vocab: &Vocab) -> Vec<usize> {
    let chars: Vec<char> = word.chars().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    while start < chars.len() {
        let mut found = None;
        for end in (start + 1..=chars.len()).rev() {
            let body: String = chars[start..end].iter().collect();
            let candidate = if start == 0 { body } else { format!("{CONTINUATION}{body}") };
            if let Some(id) = vocab.id(&candidate).filter(|&id| !is_reserved(id)) {
                found = Some((id, end));
                break;
            }
        }
        match found {
            Some((id, end)) => {
                pieces.push(id);
                start = end;
            }
            None => return vec![UNK_ID],
        }
    }
    pieces
}

/// Interval segment of a sentence: `A` for the 1st, 3rd, … sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    A = 0,
    B = 1,
}

impl Segment {
    pub fn of_sentence(index: usize) -> Self {
        if index % 2 == 0 {
            Segment::A
        } else {
            Segment::B
        }
    }
}

/// Model-ready document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedDocument {
    pub id: String,
    pub token_ids: Vec<usize>,
    /// `0` for segment A, `1` for segment B.
    pub segment_ids: Vec<usize>,
    pub position_ids: Vec<usize>,
    pub cls_positions: Vec<usize>,
    pub n_sentences: usize,
    /// Oracle labels of the sentences that survived truncation.
    pub labels: Option<Vec<u8>>,
}

impl EncodedDocument {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Encodes `doc.src` as `[CLS] s1 [SEP] [CLS] s2 [SEP] …`, at most `max_pos`
/// tokens long.
///
/// Truncation drops whole trailing sentences whose `[CLS]` would land at
/// `max_pos - 2` or later (so every kept sentence has at least one word),
/// then cuts the last kept sentence short and closes it with `[SEP]`.
pub fn encode_document(doc: &Document, vocab: &Vocab, max_pos: usize) -> Result<EncodedDocument> {
    if max_pos < 3 {
        return Err(Error::input(format!("max_pos {max_pos} is below 3")));
    }
    if doc.src.is_empty() || doc.src.iter().all(Vec::is_empty) {
        return Err(Error::input(format!("document {} has no words", doc.id)));
    }
    let mut token_ids = Vec::new();
    let mut segment_ids = Vec::new();
    let mut cls_positions = Vec::new();
    for sentence in doc.src.iter().filter(|s| !s.is_empty()) {
        let start = token_ids.len();
        if start + 2 >= max_pos {
            break;
        }
        let segment = Segment::of_sentence(cls_positions.len()) as usize;
        let mut pieces = vocab.encode_words(sentence);
        pieces.truncate(max_pos - start - 2);
        cls_positions.push(start);
        token_ids.push(CLS_ID);
        token_ids.extend(pieces);
        token_ids.push(SEP_ID);
        segment_ids.resize(token_ids.len(), segment);
    }
    let n_sentences = cls_positions.len();
    let labels = doc.labels.as_ref().map(|l| {
        let kept: Vec<usize> = doc
            .src
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .map(|(i, _)| i)
            .take(n_sentences)
            .collect();
        kept.iter().map(|&i| l[i]).collect()
    });
    Ok(EncodedDocument {
        id: doc.id.clone(),
        position_ids: (0..token_ids.len()).collect(),
        token_ids,
        segment_ids,
        cls_positions,
        n_sentences,
        labels,
    })
}

/// `[BOS] pieces [EOS]` for a summary, cut to at most `max_len` ids with the
/// closing `[EOS]` kept.
pub fn encode_summary(sentences: &[Vec<String>], vocab: &Vocab, max_len: usize) -> Result<Vec<usize>> {
    if max_len < 3 {
        return Err(Error::input(format!("summary max_len {max_len} is below 3")));
    }
    let mut ids = vec![BOS_ID];
    for s in sentences {
        ids.extend(vocab.encode_words(s));
    }
    ids.truncate(max_len - 1);
    ids.push(EOS_ID);
    Ok(ids)
}

/// Surface string of an id sequence: reserved tokens dropped, `##` pieces
/// glued to their predecessor, words separated by single spaces.
pub fn decode_ids(ids: &[usize], vocab: &Vocab) -> Result<String> {
    let mut words: Vec<String> = Vec::new();
    for &id in ids {
        let token = vocab
            .token(id)
            .ok_or_else(|| Error::input(format!("token id {id} out of range for vocabulary of {}", vocab.len())))?;
        if is_reserved(id) {
            continue;
        }
        match (token.strip_prefix(CONTINUATION), words.last_mut()) {
            (Some(rest), Some(last)) => last.push_str(rest),
            (Some(rest), None) => words.push(rest.to_string()),
            (None, _) => words.push(token.to_string()),
        }
    }
    Ok(words.join(" "))
}
