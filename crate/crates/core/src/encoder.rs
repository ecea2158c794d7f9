//! Utterance encoders. Either a trainable token-embedding mean-pool table
//! (desk-scale) or precomputed per-utterance vectors produced by an external
//! encoder; both yield one d-dimensional vector per utterance.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::corpus::Dialogue;
use crate::error::{Error, Result};

/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 768;

/// Reserved unknown-token string.
pub const UNK_TOKEN: &str = "<unk>";

const VOCAB_MAGIC: &[u8; 4] = b"CVOC";
const VOCAB_VERSION: u32 = 1;

/// Per-dialogue matrix of d-dimensional utterance vectors.
#[derive(Debug, Clone)]
pub struct EmbeddingSequence {
    pub dialogue_id: String,
    pub vectors: Array2<f64>,
}

impl EmbeddingSequence {
    pub fn new(dialogue_id: String, vectors: Array2<f64>) -> Result<Self> {
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "embedding sequence for {dialogue_id:?} contains non-finite values"
            )));
        }
        Ok(EmbeddingSequence {
            dialogue_id,
            vectors,
        })
    }

    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn d(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Lowercased whitespace-and-punctuation token split. Empty text yields
/// no tokens here; index-level tokenization maps that to a single unknown.
pub fn split_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token-to-index map with a trainable embedding table.
#[derive(Debug, Clone)]
pub struct TokenVocabulary {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    pub table: Array2<f64>,
    unk: usize,
}

impl TokenVocabulary {
    /// Build a vocabulary over every token in `texts`, with `<unk>` at
    /// index 0 and a seeded uniform [-0.05, 0.05] table.
    pub fn build(texts: impl IntoIterator<Item = String>, d: usize, seed: u64) -> Self {
        let mut tokens = vec![UNK_TOKEN.to_string()];
        let mut index = HashMap::from([(UNK_TOKEN.to_string(), 0usize)]);
        for text in texts {
            for tok in split_tokens(&text) {
                if !index.contains_key(&tok) {
                    index.insert(tok.clone(), tokens.len());
                    tokens.push(tok);
                }
            }
        }
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let v = tokens.len();
        let table = Array2::from_shape_fn((v, d), |_| rng.random_range(-0.05..0.05));
        TokenVocabulary {
            index,
            tokens,
            table,
            unk: 0,
        }
    }

    pub fn from_parts(tokens: Vec<String>, table: Array2<f64>, unk: usize) -> Result<Self> {
        if tokens.len() != table.nrows() {
            return Err(Error::Format(format!(
                "vocabulary has {} tokens but table has {} rows",
                tokens.len(),
                table.nrows()
            )));
        }
        if unk >= tokens.len() {
            return Err(Error::Format("unknown-token index out of range".into()));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("embedding table contains non-finite values".into()));
        }
        let mut index = HashMap::new();
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate token {tok:?}")));
            }
        }
        Ok(TokenVocabulary {
            index,
            tokens,
            table,
            unk,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn d(&self) -> usize {
        self.table.ncols()
    }

    pub fn unk_index(&self) -> usize {
        self.unk
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token indices for a text; unknown tokens map to the unknown index
    /// and empty text yields a single unknown token.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let ids: Vec<usize> = split_tokens(text)
            .iter()
            .map(|t| self.index.get(t).copied().unwrap_or(self.unk))
            .collect();
        if ids.is_empty() {
            vec![self.unk]
        } else {
            ids
        }
    }

    /// Arithmetic mean of the token embedding rows.
    pub fn encode_tokens(&self, tokens: &[usize]) -> Array1<f64> {
        assert!(!tokens.is_empty(), "encode_tokens requires at least one token");
        let mut sum = Array1::<f64>::zeros(self.d());
        for &t in tokens {
            sum += &self.table.row(t);
        }
        sum / tokens.len() as f64
    }

    /// Token ids and pooled embeddings for a whole dialogue.
    pub fn encode_dialogue(&self, dialogue: &Dialogue) -> (Vec<Vec<usize>>, Array2<f64>) {
        let token_ids: Vec<Vec<usize>> = dialogue
            .utterances
            .iter()
            .map(|u| self.tokenize(&u.text))
            .collect();
        let mut vectors = Array2::<f64>::zeros((dialogue.n(), self.d()));
        for (i, ids) in token_ids.iter().enumerate() {
            vectors.row_mut(i).assign(&self.encode_tokens(ids));
        }
        (token_ids, vectors)
    }

    /// Distribute an utterance-embedding gradient onto the table rows:
    /// the mean pool sends grad/len to each token occurrence.
    pub fn accumulate_grad(
        &self,
        tokens: &[usize],
        grad_u: &Array1<f64>,
        grad_table: &mut Array2<f64>,
    ) {
        let scale = 1.0 / tokens.len() as f64;
        for &t in tokens {
            let mut row = grad_table.row_mut(t);
            row += &(grad_u * scale);
        }
    }

    /// Write the vocabulary as a token JSONL file plus a binary table blob
    /// (16-byte header: magic, version, V, d; then V*d little-endian f32).
    pub fn save(&self, tokens_path: impl AsRef<Path>, table_path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(tokens_path.as_ref())?);
        for (i, tok) in self.tokens.iter().enumerate() {
            let rec = VocabRecord {
                token: tok.clone(),
                index: i,
            };
            let line = serde_json::to_string(&rec)
                .map_err(|e| Error::Format(format!("vocab record serialization failed: {e}")))?;
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
        }
        w.flush()?;

        let mut b = BufWriter::new(File::create(table_path.as_ref())?);
        b.write_all(VOCAB_MAGIC)?;
        b.write_all(&VOCAB_VERSION.to_le_bytes())?;
        b.write_all(&(self.len() as u32).to_le_bytes())?;
        b.write_all(&(self.d() as u32).to_le_bytes())?;
        for &v in self.table.iter() {
            b.write_all(&(v as f32).to_le_bytes())?;
        }
        b.flush()?;
        Ok(())
    }

    /// Load a vocabulary saved by [`TokenVocabulary::save`]. The unknown
    /// token is identified by the reserved `<unk>` string.
    pub fn load(tokens_path: impl AsRef<Path>, table_path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(tokens_path.as_ref())?);
        let mut entries: Vec<(String, usize)> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: VocabRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            entries.push((rec.token, rec.index));
        }
        let v = entries.len();
        let mut tokens = vec![String::new(); v];
        let mut filled = vec![false; v];
        for (tok, idx) in entries {
            if idx >= v || filled[idx] {
                return Err(Error::Format(format!(
                    "vocabulary indices are not dense: index {idx} out of range or repeated"
                )));
            }
            tokens[idx] = tok;
            filled[idx] = true;
        }

        let mut f = BufReader::new(File::open(table_path.as_ref())?);
        let mut header = [0u8; 16];
        f.read_exact(&mut header)
            .map_err(|_| Error::Format("vocabulary table blob is truncated".into()))?;
        if &header[0..4] != VOCAB_MAGIC {
            return Err(Error::Format("bad vocabulary table magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != VOCAB_VERSION {
            return Err(Error::Format(format!(
                "unsupported vocabulary table version {version}"
            )));
        }
        let rows = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        if rows != v {
            return Err(Error::Format(format!(
                "table blob has {rows} rows but token file has {v}"
            )));
        }
        let mut raw = vec![0u8; rows * d * 4];
        f.read_exact(&mut raw)
            .map_err(|_| Error::Format("vocabulary table blob is truncated".into()))?;
        let mut trailing = [0u8; 1];
        if f.read(&mut trailing)? != 0 {
            return Err(Error::Format("vocabulary table blob has trailing bytes".into()));
        }
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let table = Array2::from_shape_vec((rows, d), data)
            .map_err(|e| Error::Format(format!("table shape error: {e}")))?;
        let unk = tokens
            .iter()
            .position(|t| t == UNK_TOKEN)
            .ok_or_else(|| Error::Format(format!("vocabulary lacks the {UNK_TOKEN} token")))?;
        Self::from_parts(tokens, table, unk)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabRecord {
    token: String,
    index: usize,
}

/// Precomputed utterance embeddings keyed by utterance id.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbeddings {
    map: HashMap<String, Array1<f64>>,
    d: usize,
}

impl PrecomputedEmbeddings {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Array1<f64>> {
        self.map.get(id)
    }

    /// Assemble the embedding matrix for one dialogue.
    pub fn sequence_for(&self, dialogue: &Dialogue) -> Result<EmbeddingSequence> {
        let mut vectors = Array2::<f64>::zeros((dialogue.n(), self.d));
        for (i, utt) in dialogue.utterances.iter().enumerate() {
            let v = self.map.get(&utt.id).ok_or_else(|| {
                Error::Validation(format!(
                    "no precomputed embedding for utterance {:?} of dialogue {:?}",
                    utt.id, dialogue.dialogue_id
                ))
            })?;
            vectors.row_mut(i).assign(v);
        }
        EmbeddingSequence::new(dialogue.dialogue_id.clone(), vectors)
    }
}

/// Load a line-delimited `{"id": ..., "vector": [...]}` embedding file.
pub fn load_precomputed(path: impl AsRef<Path>) -> Result<PrecomputedEmbeddings> {
    #[derive(Deserialize)]
    struct Record {
        id: String,
        vector: Vec<f64>,
    }
    let reader = BufReader::new(File::open(path.as_ref())?);
    let mut map = HashMap::new();
    let mut d: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let expect = *d.get_or_insert(rec.vector.len());
        if rec.vector.len() != expect {
            return Err(Error::Format(format!(
                "embedding for id {:?} has dimension {}, expected {expect}",
                rec.id,
                rec.vector.len()
            )));
        }
        if rec.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "embedding for id {:?} contains a non-finite value",
                rec.id
            )));
        }
        if map.insert(rec.id.clone(), Array1::from(rec.vector)).is_some() {
            return Err(Error::Format(format!("duplicate embedding id {:?}", rec.id)));
        }
    }
    Ok(PrecomputedEmbeddings {
        map,
        d: d.unwrap_or(0),
    })
}
