//! Labeled corpora: loading, vocabulary, tokenization, the per-class
//! training-instance cap and the merge of support sets into the training pool.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fewshot::SupportSet;

pub type TokenId = u32;

/// Reserved id for out-of-vocabulary tokens.
pub const UNK_ID: TokenId = 0;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl ClassId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which pool a training document (and its class) came from.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    TrainClass,
    TestKShot,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub text: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<TokenId>,
    pub label: ClassId,
}

/// Bidirectional class-name / class-id map. Ids are dense and assigned in
/// insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassIndex {
    names: Vec<String>,
    lookup: HashMap<String, ClassId>,
}

impl ClassIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut index = ClassIndex::new();
        for name in names {
            let name = name.into();
            if index.get(&name).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate class name {name:?}")));
            }
            index.get_or_insert(&name);
        }
        Ok(index)
    }

    pub fn get_or_insert(&mut self, name: &str) -> ClassId {
        if let Some(&id) = self.lookup.get(name) {
            return id;
        }
        let id = ClassId(self.names.len() as u32);
        self.names.push(name.to_owned());
        self.lookup.insert(name.to_owned(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<ClassId> {
        self.lookup.get(name).copied()
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id.index()]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &str)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (ClassId(i as u32), n.as_str()))
    }
}

fn count_labels(labels: impl Iterator<Item = ClassId>) -> BTreeMap<ClassId, usize> {
    let mut counts = BTreeMap::new();
    for label in labels {
        *counts.entry(label).or_insert(0) += 1;
    }
    counts
}

/// A corpus of untokenized documents as read from disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawCorpus {
    pub documents: Vec<RawDocument>,
    pub class_index: ClassIndex,
}

impl RawCorpus {
    /// Builds a corpus, assigning class ids in first-seen order.
    pub fn from_documents(documents: Vec<RawDocument>) -> Self {
        let mut class_index = ClassIndex::new();
        for doc in &documents {
            class_index.get_or_insert(&doc.label);
        }
        RawCorpus {
            documents,
            class_index,
        }
    }

    pub fn class_counts(&self) -> BTreeMap<ClassId, usize> {
        count_labels(
            self.documents
                .iter()
                .map(|d| self.class_index.get(&d.label).expect("label indexed")),
        )
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// A tokenized corpus whose labels are ids into `class_index`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabeledCorpus {
    pub documents: Vec<Document>,
    pub class_index: ClassIndex,
}

impl LabeledCorpus {
    pub fn class_counts(&self) -> BTreeMap<ClassId, usize> {
        count_labels(self.documents.iter().map(|d| d.label))
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn label_name(&self, doc: &Document) -> &str {
        self.class_index.name(doc.label)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
    label: String,
}

#[derive(Serialize)]
struct RawRecordOut<'a> {
    id: &'a str,
    text: &'a str,
    label: &'a str,
}

/// Parses a JSON-lines corpus. Blank lines are ignored; a missing id becomes
/// the 1-based line number.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<RawCorpus> {
    let mut documents = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if record.label.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty label".into(),
            });
        }
        let id = record.id.unwrap_or_else(|| line_no.to_string());
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        documents.push(RawDocument {
            id,
            text: record.text,
            label: record.label,
        });
    }
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(RawCorpus::from_documents(documents))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<RawCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(BufReader::new(file))
}

pub fn write_raw_corpus(corpus: &RawCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for doc in &corpus.documents {
        let rec = RawRecordOut {
            id: &doc.id,
            text: &doc.text,
            label: &doc.label,
        };
        let line = serde_json::to_string(&rec).expect("serializable record");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenizedRecord {
    id: String,
    tokens: Vec<TokenId>,
    label: String,
}

/// Writes a tokenized corpus as JSON lines `{"id", "tokens", "label"}` with
/// class names as labels.
pub fn write_labeled_corpus(corpus: &LabeledCorpus, path: impl AsRef<Path>) -> Result<()> {
    write_documents(&corpus.documents, &corpus.class_index, path)
}

pub fn write_documents<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    index: &ClassIndex,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for doc in docs {
        let rec = TokenizedRecord {
            id: doc.id.clone(),
            tokens: doc.tokens.clone(),
            label: index.name(doc.label).to_owned(),
        };
        let line = serde_json::to_string(&rec).expect("serializable record");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a tokenized corpus. Labels not yet in `index` are appended to it.
pub fn read_documents(path: impl AsRef<Path>, index: &mut ClassIndex) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TokenizedRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(Document {
            id: rec.id,
            tokens: rec.tokens,
            label: index.get_or_insert(&rec.label),
        });
    }
    Ok(docs)
}

pub fn read_labeled_corpus(path: impl AsRef<Path>) -> Result<LabeledCorpus> {
    let mut class_index = ClassIndex::new();
    let documents = read_documents(path, &mut class_index)?;
    Ok(LabeledCorpus {
        documents,
        class_index,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Lowercases and splits into maximal alphanumeric runs; whitespace and
/// punctuation only separate words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    // Entry `i` holds the token with id `i + 1`.
    tokens: Vec<String>,
    counts: Vec<u64>,
    lookup: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut lookup = HashMap::with_capacity(entries.len());
        let mut tokens = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (i, (token, count)) in entries.into_iter().enumerate() {
            if lookup.insert(token.clone(), i as TokenId + 1).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate token {token:?}")));
            }
            tokens.push(token);
            counts.push(count);
        }
        Ok(Vocabulary {
            tokens,
            counts,
            lookup,
        })
    }

    /// Number of surface tokens, excluding UNK.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Rows needed by an embedding table: one per token plus UNK.
    pub fn rows(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.lookup.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Surface form for `id`; `None` for UNK or out of range.
    pub fn token(&self, id: TokenId) -> Option<&str> {
        if id == UNK_ID {
            return None;
        }
        self.tokens.get(id as usize - 1).map(String::as_str)
    }

    pub fn count(&self, id: TokenId) -> u64 {
        if id == UNK_ID {
            return 0;
        }
        self.counts.get(id as usize - 1).copied().unwrap_or(0)
    }

    pub fn entries(&self) -> impl Iterator<Item = (TokenId, &str, u64)> {
        self.tokens
            .iter()
            .zip(&self.counts)
            .enumerate()
            .map(|(i, (t, &c))| (i as TokenId + 1, t.as_str(), c))
    }

    /// TSV dump, one `token<TAB>id<TAB>count` line per retained token.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (id, token, count) in self.entries() {
            s.push_str(&format!("{token}\t{id}\t{count}\n"));
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: &str| Error::Parse {
                line: i + 1,
                message: message.to_owned(),
            };
            let mut fields = line.split('\t');
            let (Some(token), Some(id), Some(count), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(parse_err("expected token<TAB>id<TAB>count"));
            };
            let id: usize = id.parse().map_err(|_| parse_err("bad id"))?;
            if id != entries.len() + 1 {
                return Err(parse_err("ids must be contiguous from 1"));
            }
            let count: u64 = count.parse().map_err(|_| parse_err("bad count"))?;
            entries.push((token.to_owned(), count));
        }
        Vocabulary::from_entries(entries)
    }
}

/// Counts tokens across `texts`, drops those seen fewer than `min_count`
/// times, and keeps the `max_size` most frequent (ties lexicographic).
pub fn build_vocabulary<'a, I>(texts: I, min_count: u64, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if min_count < 1 || max_size < 1 {
        return Err(Error::InvalidConfig(
            "min_count and max_size must be at least 1".into(),
        ));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for text in texts {
        for token in tokenize(text) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(String, u64)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(max_size);
    Vocabulary::from_entries(entries)
}

pub fn tokenize_truncate(
    doc: &RawDocument,
    label: ClassId,
    vocab: &Vocabulary,
    max_tokens: usize,
) -> Result<Document> {
    if max_tokens < 1 {
        return Err(Error::InvalidConfig("max_tokens must be at least 1".into()));
    }
    let tokens: Vec<TokenId> = tokenize(&doc.text)
        .iter()
        .take(max_tokens)
        .map(|t| vocab.id(t))
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyDocument(doc.id.clone()));
    }
    Ok(Document {
        id: doc.id.clone(),
        tokens,
        label,
    })
}

pub fn tokenize_corpus(raw: &RawCorpus, vocab: &Vocabulary, max_tokens: usize) -> Result<LabeledCorpus> {
    let documents = raw
        .documents
        .iter()
        .map(|d| {
            let label = raw.class_index.get(&d.label).expect("label indexed");
            tokenize_truncate(d, label, vocab, max_tokens)
        })
        .collect::<Result<_>>()?;
    Ok(LabeledCorpus {
        documents,
        class_index: raw.class_index.clone(),
    })
}

/// Splits a document into consecutive chunks of `chunk_size` words, keeping
/// the first `max_chunks`. Chunk `i` gets id `"{id}#{i}"`.
pub fn partition_document(
    doc: &RawDocument,
    chunk_size: usize,
    max_chunks: usize,
) -> Result<Vec<RawDocument>> {
    if chunk_size < 1 || max_chunks < 1 {
        return Err(Error::InvalidConfig(
            "chunk_size and max_chunks must be at least 1".into(),
        ));
    }
    let words = tokenize(&doc.text);
    if words.is_empty() {
        return Err(Error::EmptyDocument(doc.id.clone()));
    }
    Ok(words
        .chunks(chunk_size)
        .take(max_chunks)
        .enumerate()
        .map(|(i, chunk)| RawDocument {
            id: format!("{}#{i}", doc.id),
            text: chunk.join(" "),
            label: doc.label.clone(),
        })
        .collect())
}

pub fn partition_corpus(raw: &RawCorpus, chunk_size: usize, max_chunks: usize) -> Result<RawCorpus> {
    let mut documents = Vec::new();
    for doc in &raw.documents {
        documents.extend(partition_document(doc, chunk_size, max_chunks)?);
    }
    Ok(RawCorpus {
        documents,
        class_index: raw.class_index.clone(),
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub m_tshot: usize,
    pub seed: u64,
}

/// Caps every class at `m_tshot` documents. Oversized classes are subsampled
/// uniformly without replacement; survivors keep their original order.
pub fn apply_tshot_constraint(corpus: &LabeledCorpus, spec: &ConstraintSpec) -> Result<LabeledCorpus> {
    if spec.m_tshot < 1 {
        return Err(Error::InvalidConfig("m_tshot must be at least 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, doc) in corpus.documents.iter().enumerate() {
        by_class.entry(doc.label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut keep = vec![false; corpus.len()];
    for members in by_class.values() {
        if members.len() <= spec.m_tshot {
            members.iter().for_each(|&i| keep[i] = true);
        } else {
            for j in rand::seq::index::sample(&mut rng, members.len(), spec.m_tshot) {
                keep[members[j]] = true;
            }
        }
    }
    let documents = corpus
        .documents
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(d, _)| d.clone())
        .collect();
    Ok(LabeledCorpus {
        documents,
        class_index: corpus.class_index.clone(),
    })
}

/// The training pool: constrained training documents plus the K-shot support
/// documents, over a merged class index.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedTrainingSet {
    pub documents: Vec<Document>,
    pub origins: Vec<Origin>,
    pub class_index: ClassIndex,
    pub train_classes: BTreeSet<ClassId>,
    pub kshot_classes: BTreeSet<ClassId>,
}

impl MergedTrainingSet {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn class_origin(&self, class: ClassId) -> Origin {
        if self.kshot_classes.contains(&class) {
            Origin::TestKShot
        } else {
            Origin::TrainClass
        }
    }
}

/// Training classes keep their ids; support classes are appended after them.
pub fn merge_training_set(train: &LabeledCorpus, support: &SupportSet) -> Result<MergedTrainingSet> {
    let mut class_index = train.class_index.clone();
    let train_classes: BTreeSet<ClassId> = class_index.iter().map(|(id, _)| id).collect();
    let mut kshot_classes = BTreeSet::new();
    let mut remap = BTreeMap::new();
    for (&class, name) in support.class_names() {
        if class_index.get(name).is_some() {
            return Err(Error::ClassCollision(name.clone()));
        }
        let merged = class_index.get_or_insert(name);
        kshot_classes.insert(merged);
        remap.insert(class, merged);
    }

    let mut documents = train.documents.clone();
    let mut origins = vec![Origin::TrainClass; documents.len()];
    for (class, docs) in support.iter() {
        for doc in docs {
            documents.push(Document {
                label: remap[&class],
                ..doc.clone()
            });
            origins.push(Origin::TestKShot);
        }
    }
    Ok(MergedTrainingSet {
        documents,
        origins,
        class_index,
        train_classes,
        kshot_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(id: &str, text: &str, label: &str) -> RawDocument {
        RawDocument {
            id: id.into(),
            text: text.into(),
            label: label.into(),
        }
    }

    fn labeled(labels: &[u32]) -> LabeledCorpus {
        let max = labels.iter().copied().max().unwrap_or(0);
        LabeledCorpus {
            documents: labels
                .iter()
                .enumerate()
                .map(|(i, &l)| Document {
                    id: format!("d{i}"),
                    tokens: vec![1],
                    label: ClassId(l),
                })
                .collect(),
            class_index: ClassIndex::from_names((0..=max).map(|c| format!("c{c}"))).unwrap(),
        }
    }

    #[test]
    fn parse_counts_labels_in_first_seen_order() {
        let text = r#"{"text":"x","label":"a"}
{"text":"y","label":"a"}
{"text":"z","label":"b"}
"#;
        let corpus = parse_corpus(text.as_bytes()).unwrap();
        assert_eq!(corpus.class_index.get("a"), Some(ClassId(0)));
        assert_eq!(corpus.class_index.get("b"), Some(ClassId(1)));
        let counts = corpus.class_counts();
        assert_eq!(counts[&ClassId(0)], 2);
        assert_eq!(counts[&ClassId(1)], 1);
        assert_eq!(corpus.documents[2].id, "3");
    }

    #[test]
    fn parse_rejects_empty_malformed_and_duplicates() {
        assert!(matches!(parse_corpus("".as_bytes()), Err(Error::EmptyCorpus)));
        assert_eq!(
            parse_corpus("".as_bytes()).unwrap_err().to_string(),
            "empty corpus"
        );
        let bad = "{\"text\":\"x\",\"label\":\"a\"}\nnot json\n";
        assert!(matches!(
            parse_corpus(bad.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        let dup =
            "{\"id\":\"q\",\"text\":\"x\",\"label\":\"a\"}\n{\"id\":\"q\",\"text\":\"y\",\"label\":\"a\"}\n";
        assert!(matches!(parse_corpus(dup.as_bytes()), Err(Error::DuplicateId(id)) if id == "q"));
    }

    #[test]
    fn vocabulary_filters_caps_and_breaks_ties() {
        let v = build_vocabulary(["a a b", "b c"], 2, 100).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.id("a"), 1);
        assert_eq!(v.id("b"), 2);
        assert_eq!(v.id("c"), UNK_ID);

        let v = build_vocabulary(["a a b"], 1, 1).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.token(1), Some("a"));

        let v = build_vocabulary(["b a"], 1, 1).unwrap();
        assert_eq!(v.token(1), Some("a"));
        assert_eq!(v.token(UNK_ID), None);

        assert!(matches!(
            build_vocabulary(["a"], 2, 10),
            Err(Error::EmptyVocabulary)
        ));
    }

    #[test]
    fn vocabulary_tsv_round_trip() {
        let v = build_vocabulary(["x y y z z z"], 1, 10).unwrap();
        let tsv = v.to_tsv();
        assert_eq!(tsv.lines().next(), Some("z\t1\t3"));
        assert_eq!(Vocabulary::from_tsv(&tsv).unwrap(), v);
    }

    #[test]
    fn tokenize_truncate_cases() {
        let vocab = build_vocabulary(["the cat sat"], 1, 10).unwrap();
        let d = tokenize_truncate(&raw("1", "The cat. sat", "a"), ClassId(0), &vocab, 50).unwrap();
        let expect: Vec<_> = ["the", "cat", "sat"].iter().map(|t| vocab.id(t)).collect();
        assert_eq!(d.tokens, expect);

        let long = (0..120)
            .map(|i| if i % 2 == 0 { "cat" } else { "sat" })
            .collect::<Vec<_>>()
            .join(" ");
        let d = tokenize_truncate(&raw("2", &long, "a"), ClassId(0), &vocab, 50).unwrap();
        assert_eq!(d.tokens.len(), 50);
        assert_eq!(d.tokens[0], vocab.id("cat"));
        assert_eq!(d.tokens[49], vocab.id("sat"));

        let d = tokenize_truncate(&raw("3", "dog bird fish", "a"), ClassId(0), &vocab, 50).unwrap();
        assert_eq!(d.tokens, vec![UNK_ID; 3]);

        assert!(matches!(
            tokenize_truncate(&raw("4", " ... ", "a"), ClassId(0), &vocab, 50),
            Err(Error::EmptyDocument(_))
        ));
    }

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn partition_sizes() {
        let sizes = |n, max| {
            partition_document(&raw("d", &words(n), "a"), 50, max)
                .unwrap()
                .iter()
                .map(|c| tokenize(&c.text).len())
                .collect::<Vec<_>>()
        };
        assert_eq!(sizes(120, 5), vec![50, 50, 20]);
        assert_eq!(sizes(400, 5), vec![50; 5]);
        assert_eq!(sizes(10, 5), vec![10]);
        let chunks = partition_document(&raw("d", &words(120), "lab"), 50, 5).unwrap();
        assert_eq!(chunks[2].id, "d#2");
        assert!(chunks.iter().all(|c| c.label == "lab"));
        assert!(partition_document(&raw("d", "", "a"), 50, 5).is_err());
    }

    #[test]
    fn constraint_caps_and_is_deterministic() {
        let corpus = labeled(&[0, 0, 0, 1]);
        let spec = ConstraintSpec { m_tshot: 1, seed: 7 };
        let out = apply_tshot_constraint(&corpus, &spec).unwrap();
        let counts = out.class_counts();
        assert_eq!(counts[&ClassId(0)], 1);
        assert_eq!(counts[&ClassId(1)], 1);
        assert_eq!(apply_tshot_constraint(&corpus, &spec).unwrap(), out);

        let singletons = labeled(&(0..2124).collect::<Vec<_>>());
        assert_eq!(apply_tshot_constraint(&singletons, &spec).unwrap(), singletons);
    }

    fn support_of(classes: &[&str], per_class: usize) -> SupportSet {
        let index = ClassIndex::from_names(classes.iter().copied()).unwrap();
        let mut docs = Vec::new();
        for (id, name) in index.iter() {
            for k in 0..per_class {
                docs.push(Document {
                    id: format!("{name}-{k}"),
                    tokens: vec![1],
                    label: id,
                });
            }
        }
        SupportSet::from_documents(docs, &index)
    }

    #[test]
    fn merge_unions_and_tags() {
        let train = LabeledCorpus {
            documents: ["x", "y", "z"]
                .iter()
                .enumerate()
                .map(|(i, _)| Document {
                    id: format!("t{i}"),
                    tokens: vec![1],
                    label: ClassId(i as u32),
                })
                .collect(),
            class_index: ClassIndex::from_names(["x", "y", "z"]).unwrap(),
        };
        let merged = merge_training_set(&train, &support_of(&["p", "q"], 1)).unwrap();
        assert_eq!(merged.len(), 5);
        assert_eq!(merged.train_classes.len(), 3);
        assert_eq!(merged.kshot_classes.len(), 2);
        assert_eq!(merged.origins[3], Origin::TestKShot);
        assert_eq!(merged.class_index.name(merged.documents[4].label), "q");

        assert!(matches!(
            merge_training_set(&train, &support_of(&["x", "q"], 1)),
            Err(Error::ClassCollision(name)) if name == "x"
        ));

        let empty = LabeledCorpus::default();
        let merged = merge_training_set(&empty, &support_of(&["p", "q"], 2)).unwrap();
        assert!(merged.train_classes.is_empty());
        assert_eq!(merged.len(), 4);
    }

    proptest! {
        #[test]
        fn constraint_never_exceeds_cap(labels in prop::collection::vec(0u32..6, 1..60), m in 1usize..5, seed: u64) {
            let corpus = labeled(&labels);
            let out = apply_tshot_constraint(&corpus, &ConstraintSpec { m_tshot: m, seed }).unwrap();
            let before = corpus.class_counts();
            for (class, n) in out.class_counts() {
                prop_assert_eq!(n, before[&class].min(m));
            }
        }

        #[test]
        fn partition_reassembles_prefix(n in 1usize..300, chunk in 1usize..60, max in 1usize..8) {
            let text = words(n);
            let chunks = partition_document(&raw("d", &text, "a"), chunk, max).unwrap();
            let joined: Vec<String> = chunks.iter().flat_map(|c| tokenize(&c.text)).collect();
            let original = tokenize(&text);
            prop_assert_eq!(joined.len(), n.min(chunk * max));
            prop_assert_eq!(&joined[..], &original[..joined.len()]);
        }

        #[test]
        fn merge_preserves_every_document(n_train in 0usize..10, n_support in 1usize..4, k in 1usize..4) {
            let train = labeled(&(0..n_train as u32).collect::<Vec<_>>());
            let names: Vec<String> = (0..n_support).map(|i| format!("s{i}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let merged = merge_training_set(&train, &support_of(&refs, k)).unwrap();
            prop_assert_eq!(merged.len(), train.len() + n_support * k);
            prop_assert!(merged.train_classes.is_disjoint(&merged.kshot_classes));
            let mut ids: Vec<&str> = merged.documents.iter().map(|d| d.id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), merged.len());
            for (doc, origin) in merged.documents.iter().zip(&merged.origins) {
                prop_assert_eq!(merged.class_origin(doc.label), *origin);
            }
        }
    }
}
