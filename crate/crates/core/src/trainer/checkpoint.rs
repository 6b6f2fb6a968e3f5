//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! magic "C2V1" | version u8 | fingerprint u64
//! dims: vocab_rows u32, embed_dim u32, output_dim u32, classes u32, nca_rows u32
//! vocab: n u32, then n × (len u32, utf-8 bytes, count u64)
//! token_embeddings, projection, bias, categories, nca  (row-major f64)
//! classes: n × (len u32, utf-8 bytes, origin u8)
//! config: len u32, json bytes
//! loss history: n u32, n × f64
//! ```

use std::fs;
use std::path::Path;

use super::{ModelParams, TrainConfig, TrainedModel};
use crate::corpus::{ClassIndex, Origin, Vocabulary};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::objectives::{CategoryEmbeddingTable, NcaParams};

pub const MAGIC: &[u8; 4] = b"C2V1";
pub const VERSION: u8 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("length fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }

    fn floats(&mut self, xs: &[f64]) {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()?;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("invalid utf-8".into()))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::CorruptCheckpoint("size overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::CorruptCheckpoint("size overflow".into()))?;
        Ok(Matrix::from_vec(rows, cols, self.floats(n)?))
    }
}

pub fn write_checkpoint(model: &TrainedModel) -> Vec<u8> {
    let p = &model.params;
    let enc = &p.encoder;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u8(VERSION);
    w.u64(model.fingerprint);

    w.u32(enc.vocab_rows());
    w.u32(enc.embed_dim());
    w.u32(enc.output_dim());
    w.u32(p.categories.len());
    w.u32(p.nca.as_ref().map_or(0, |n| n.projection.rows()));

    w.u32(model.vocab.len());
    for (_, token, count) in model.vocab.entries() {
        w.str(token);
        w.u64(count);
    }

    w.floats(enc.token_embeddings.as_slice());
    w.floats(enc.projection.as_slice());
    w.floats(&enc.bias);
    w.floats(p.categories.rows.as_slice());
    if let Some(nca) = &p.nca {
        w.floats(nca.projection.as_slice());
    }

    for ((_, name), origin) in model.classes.iter().zip(&model.origins) {
        w.str(name);
        w.u8(match origin {
            Origin::TrainClass => 0,
            Origin::TestKShot => 1,
        });
    }

    w.str(&serde_json::to_string(&model.config).expect("config serializes"));
    w.u32(model.loss_history.len());
    w.floats(&model.loss_history);
    w.0
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::NotCheckpoint);
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let fingerprint = r.u64()?;

    let vocab_rows = r.u32()?;
    let embed_dim = r.u32()?;
    let output_dim = r.u32()?;
    let n_classes = r.u32()?;
    let nca_rows = r.u32()?;

    let n_tokens = r.u32()?;
    if n_tokens + 1 != vocab_rows {
        return Err(Error::CorruptCheckpoint(
            "vocabulary size disagrees with embedding rows".into(),
        ));
    }
    let mut entries = Vec::with_capacity(n_tokens.min(1 << 20));
    for _ in 0..n_tokens {
        let token = r.str()?;
        let count = r.u64()?;
        entries.push((token, count));
    }
    let vocab = Vocabulary::from_entries(entries).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;

    let encoder = EncoderParams {
        token_embeddings: r.matrix(vocab_rows, embed_dim)?,
        projection: r.matrix(output_dim, embed_dim)?,
        bias: r.floats(output_dim)?,
    };
    let categories = CategoryEmbeddingTable {
        rows: r.matrix(n_classes, output_dim)?,
    };
    let nca = if nca_rows > 0 {
        Some(NcaParams {
            projection: r.matrix(nca_rows, output_dim)?,
        })
    } else {
        None
    };

    let mut names = Vec::with_capacity(n_classes.min(1 << 20));
    let mut origins = Vec::with_capacity(n_classes.min(1 << 20));
    for _ in 0..n_classes {
        names.push(r.str()?);
        origins.push(match r.u8()? {
            0 => Origin::TrainClass,
            1 => Origin::TestKShot,
            other => return Err(Error::CorruptCheckpoint(format!("bad origin tag {other}"))),
        });
    }
    let classes = ClassIndex::from_names(names).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;

    let config: TrainConfig =
        serde_json::from_str(&r.str()?).map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
    if config.fingerprint() != fingerprint {
        return Err(Error::CorruptCheckpoint("config fingerprint mismatch".into()));
    }
    let n_epochs = r.u32()?;
    let loss_history = r.floats(n_epochs)?;
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    Ok(TrainedModel {
        params: ModelParams {
            encoder,
            categories,
            nca,
        },
        vocab,
        classes,
        origins,
        config,
        fingerprint,
        loss_history,
    })
}

pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
