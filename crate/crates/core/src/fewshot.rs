//! Support/query sampling, nearest-category classification and the two
//! accuracy protocols: pooled over episodes, and per support set against the
//! whole test corpus.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassId, ClassIndex, Document, LabeledCorpus};
use crate::encoder::DocumentEncoder;
use crate::error::{Error, Result};
use crate::linalg::{axpy, squared_distance};
use crate::trainer::TrainedModel;

/// Per-class query budget when sampling an episode.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "QueryCountRepr", into = "QueryCountRepr")]
pub enum QueryCount {
    Fixed(usize),
    /// Every document not drawn into the support set.
    AllRemaining,
}

impl Default for QueryCount {
    fn default() -> Self {
        QueryCount::Fixed(15)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum QueryCountRepr {
    Fixed(usize),
    Keyword(String),
}

impl TryFrom<QueryCountRepr> for QueryCount {
    type Error = String;

    fn try_from(repr: QueryCountRepr) -> std::result::Result<Self, String> {
        match repr {
            QueryCountRepr::Fixed(n) => Ok(QueryCount::Fixed(n)),
            QueryCountRepr::Keyword(s) if s == "all" => Ok(QueryCount::AllRemaining),
            QueryCountRepr::Keyword(s) => Err(format!("expected a count or \"all\", got {s:?}")),
        }
    }
}

impl From<QueryCount> for QueryCountRepr {
    fn from(q: QueryCount) -> Self {
        match q {
            QueryCount::Fixed(n) => QueryCountRepr::Fixed(n),
            QueryCount::AllRemaining => QueryCountRepr::Keyword("all".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    #[serde(default)]
    pub queries_per_class: QueryCount,
    pub seed: u64,
}

/// K labeled documents for each of N classes. Class ids refer to the corpus
/// the set was drawn from; names travel with the set.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportSet {
    classes: BTreeMap<ClassId, Vec<Document>>,
    names: BTreeMap<ClassId, String>,
}

impl SupportSet {
    pub fn from_documents(docs: Vec<Document>, index: &ClassIndex) -> Self {
        let mut classes: BTreeMap<ClassId, Vec<Document>> = BTreeMap::new();
        for doc in docs {
            classes.entry(doc.label).or_default().push(doc);
        }
        let names = classes.keys().map(|&c| (c, index.name(c).to_owned())).collect();
        SupportSet { classes, names }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &[Document])> {
        self.classes.iter().map(|(&c, d)| (c, d.as_slice()))
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.classes.values().flatten()
    }

    pub fn class_names(&self) -> &BTreeMap<ClassId, String> {
        &self.names
    }

    pub fn classes(&self) -> BTreeSet<ClassId> {
        self.classes.keys().copied().collect()
    }

    pub fn n_way(&self) -> usize {
        self.classes.len()
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn document_ids(&self) -> HashSet<&str> {
        self.documents().map(|d| d.id.as_str()).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuerySet {
    pub documents: Vec<Document>,
}

/// Samples N classes, then K support and the query budget per class, all
/// uniformly without replacement.
pub fn sample_support_query(test: &LabeledCorpus, spec: &EpisodeSpec) -> Result<(SupportSet, QuerySet)> {
    if spec.n_way < 2 || spec.k_shot < 1 {
        return Err(Error::InvalidConfig(
            "episodes need n_way ≥ 2 and k_shot ≥ 1".into(),
        ));
    }
    let mut by_class: BTreeMap<ClassId, Vec<&Document>> = BTreeMap::new();
    for doc in &test.documents {
        by_class.entry(doc.label).or_default().push(doc);
    }
    if spec.n_way > by_class.len() {
        return Err(Error::NotEnoughClasses {
            requested: spec.n_way,
            available: by_class.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let available: Vec<ClassId> = by_class.keys().copied().collect();
    let mut chosen: Vec<ClassId> = rand::seq::index::sample(&mut rng, available.len(), spec.n_way)
        .into_iter()
        .map(|i| available[i])
        .collect();
    chosen.sort_unstable();

    let mut support = Vec::new();
    let mut queries = Vec::new();
    for class in chosen {
        let members = &by_class[&class];
        let needed = match spec.queries_per_class {
            QueryCount::Fixed(q) => spec.k_shot + q,
            QueryCount::AllRemaining => spec.k_shot,
        };
        if members.len() < needed {
            return Err(Error::InsufficientDocuments {
                class: test.class_index.name(class).to_owned(),
                needed,
                available: members.len(),
            });
        }
        let take = match spec.queries_per_class {
            QueryCount::Fixed(_) => needed,
            QueryCount::AllRemaining => members.len(),
        };
        let picked = rand::seq::index::sample(&mut rng, members.len(), take);
        for (j, i) in picked.into_iter().enumerate() {
            let doc = members[i].clone();
            if j < spec.k_shot {
                support.push(doc);
            } else {
                queries.push(doc);
            }
        }
    }
    Ok((
        SupportSet::from_documents(support, &test.class_index),
        QuerySet { documents: queries },
    ))
}

pub type ClassVectors = BTreeMap<ClassId, Vec<f64>>;

/// Mean encoded support document per class.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototypes {
    pub vectors: ClassVectors,
}

pub fn compute_prototypes<E: DocumentEncoder + ?Sized>(
    support: &SupportSet,
    encoder: &E,
) -> Result<Prototypes> {
    let mut vectors = BTreeMap::new();
    for (class, docs) in support.iter() {
        let mut mean = vec![0.0; encoder.output_dim()];
        let w = 1.0 / docs.len() as f64;
        for doc in docs {
            axpy(w, encoder.encode(doc)?.as_slice(), &mut mean);
        }
        vectors.insert(class, mean);
    }
    Ok(Prototypes { vectors })
}

/// Candidate with the smallest squared euclidean distance; ties go to the
/// lowest class id.
pub fn classify(
    embedding: &[f64],
    vectors: &ClassVectors,
    candidates: &BTreeSet<ClassId>,
) -> Result<ClassId> {
    let mut best: Option<(ClassId, f64)> = None;
    for &class in candidates {
        let v = vectors
            .get(&class)
            .ok_or_else(|| Error::Coverage(format!("class id {class}")))?;
        let d = squared_distance(embedding, v);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((class, d));
        }
    }
    best.map(|(c, _)| c).ok_or(Error::NoCandidates)
}

/// An encoder that may also carry learned per-class vectors.
pub trait FewShotModel: DocumentEncoder {
    /// Learned vector for a K-shot class, by class name.
    fn category_vector(&self, class_name: &str) -> Option<Vec<f64>>;
}

impl FewShotModel for TrainedModel {
    fn category_vector(&self, class_name: &str) -> Option<Vec<f64>> {
        self.kshot_category(class_name).map(<[f64]>::to_vec)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Compare against learned category embeddings; the support set only
    /// decides the candidate classes.
    CategoryTable,
    /// Compare against support-set prototypes.
    Prototypes,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Full,
    Episodic,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Full => "full",
            Metric::Episodic => "episodic",
        })
    }
}

pub fn class_vectors<M: FewShotModel + ?Sized>(
    model: &M,
    support: &SupportSet,
    mode: EvalMode,
) -> Result<ClassVectors> {
    match mode {
        EvalMode::Prototypes => Ok(compute_prototypes(support, model)?.vectors),
        EvalMode::CategoryTable => support
            .class_names()
            .iter()
            .map(|(&class, name)| {
                model
                    .category_vector(name)
                    .map(|v| (class, v))
                    .ok_or_else(|| Error::Coverage(name.clone()))
            })
            .collect(),
    }
}

/// Row = true class, column = predicted class, both in `classes` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl Confusion {
    fn new(names: &BTreeMap<ClassId, String>) -> (Self, BTreeMap<ClassId, usize>) {
        let slots = names.keys().enumerate().map(|(i, &c)| (c, i)).collect();
        let n = names.len();
        (
            Confusion {
                classes: names.values().cloned().collect(),
                counts: vec![vec![0; n]; n],
            },
            slots,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Metric,
    pub mode: EvalMode,
    /// Headline accuracy: mean over support sets (full) or pooled over all
    /// queries (episodic).
    pub accuracy: f64,
    /// Sample standard deviation of `accuracies`.
    pub std: f64,
    /// One entry per support set (full) or per episode (episodic).
    pub accuracies: Vec<f64>,
    pub correct: Vec<usize>,
    pub totals: Vec<usize>,
    pub confusion: Vec<Confusion>,
}

impl EvalReport {
    /// `support_set,metric,accuracy` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("support_set,metric,accuracy\n");
        for (i, acc) in self.accuracies.iter().enumerate() {
            s.push_str(&format!("{i},{},{acc}\n", self.metric));
        }
        s.push_str(&format!("mean,{},{}\n", self.metric, self.accuracy));
        s
    }

    /// `support_set,true,predicted,count` rows, zero cells omitted.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("support_set,true,predicted,count\n");
        for (i, conf) in self.confusion.iter().enumerate() {
            for (t, row) in conf.counts.iter().enumerate() {
                for (p, &n) in row.iter().enumerate() {
                    if n > 0 {
                        s.push_str(&format!("{i},{},{},{n}\n", conf.classes[t], conf.classes[p]));
                    }
                }
            }
        }
        s
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

struct Tally {
    correct: usize,
    total: usize,
    confusion: Confusion,
}

fn score<'a, M: FewShotModel + ?Sized>(
    model: &M,
    support: &SupportSet,
    mode: EvalMode,
    docs: impl Iterator<Item = (&'a Document, &'a [f64])>,
) -> Result<Tally> {
    let vectors = class_vectors(model, support, mode)?;
    let candidates = support.classes();
    let (mut confusion, slots) = Confusion::new(support.class_names());
    let (mut correct, mut total) = (0, 0);
    for (doc, embedding) in docs {
        let truth = *slots
            .get(&doc.label)
            .ok_or_else(|| Error::Coverage(format!("query label id {}", doc.label)))?;
        let predicted = classify(embedding, &vectors, &candidates)?;
        confusion.counts[truth][slots[&predicted]] += 1;
        correct += usize::from(predicted == doc.label);
        total += 1;
    }
    Ok(Tally {
        correct,
        total,
        confusion,
    })
}

/// Accuracy of each support set against every test document of its classes,
/// excluding the support documents themselves; averaged over support sets.
pub fn evaluate_full<M: FewShotModel + ?Sized>(
    model: &M,
    support_sets: &[SupportSet],
    test: &LabeledCorpus,
    mode: EvalMode,
) -> Result<EvalReport> {
    if support_sets.is_empty() {
        return Err(Error::InvalidConfig("no support sets to evaluate".into()));
    }
    let embeddings = test
        .documents
        .iter()
        .map(|d| model.encode(d).map(|e| e.into_vec()))
        .collect::<Result<Vec<_>>>()?;

    let mut report = EvalReport {
        metric: Metric::Full,
        mode,
        accuracy: 0.0,
        std: 0.0,
        accuracies: Vec::new(),
        correct: Vec::new(),
        totals: Vec::new(),
        confusion: Vec::new(),
    };
    for (s, support) in support_sets.iter().enumerate() {
        let exclude = support.document_ids();
        let classes = support.classes();
        let pool = test
            .documents
            .iter()
            .zip(&embeddings)
            .filter(|(d, _)| classes.contains(&d.label) && !exclude.contains(d.id.as_str()))
            .map(|(d, e)| (d, e.as_slice()));
        let tally = score(model, support, mode, pool)?;
        if tally.total == 0 {
            return Err(Error::EmptyQuerySet(s));
        }
        report.accuracies.push(tally.correct as f64 / tally.total as f64);
        report.correct.push(tally.correct);
        report.totals.push(tally.total);
        report.confusion.push(tally.confusion);
    }
    (report.accuracy, report.std) = mean_std(&report.accuracies);
    Ok(report)
}

/// Correct predictions over all episodes divided by the total number of
/// queries.
pub fn evaluate_episodic<M: FewShotModel + ?Sized>(
    model: &M,
    episodes: &[(QuerySet, SupportSet)],
    mode: EvalMode,
) -> Result<EvalReport> {
    if episodes.is_empty() {
        return Err(Error::InvalidConfig("no episodes to evaluate".into()));
    }
    let mut report = EvalReport {
        metric: Metric::Episodic,
        mode,
        accuracy: 0.0,
        std: 0.0,
        accuracies: Vec::new(),
        correct: Vec::new(),
        totals: Vec::new(),
        confusion: Vec::new(),
    };
    for (e, (queries, support)) in episodes.iter().enumerate() {
        if queries.documents.is_empty() {
            return Err(Error::EmptyQuerySet(e));
        }
        let embeddings = queries
            .documents
            .iter()
            .map(|d| model.encode(d).map(|e| e.into_vec()))
            .collect::<Result<Vec<_>>>()?;
        let tally = score(
            model,
            support,
            mode,
            queries.documents.iter().zip(embeddings.iter().map(Vec::as_slice)),
        )?;
        report.accuracies.push(tally.correct as f64 / tally.total as f64);
        report.correct.push(tally.correct);
        report.totals.push(tally.total);
        report.confusion.push(tally.confusion);
    }
    let correct: usize = report.correct.iter().sum();
    let total: usize = report.totals.iter().sum();
    report.accuracy = correct as f64 / total as f64;
    report.std = mean_std(&report.accuracies).1;
    Ok(report)
}

/// Splits the test documents a support set would be scored on (corpus order,
/// support documents excluded) into consecutive query sets of at most
/// `queries_per_episode`, each paired with that support set.
pub fn partition_episodes(
    test: &LabeledCorpus,
    support: &SupportSet,
    queries_per_episode: usize,
) -> Result<Vec<(QuerySet, SupportSet)>> {
    if queries_per_episode == 0 {
        return Err(Error::InvalidConfig(
            "queries_per_episode must be positive".into(),
        ));
    }
    let exclude = support.document_ids();
    let classes = support.classes();
    let pool: Vec<Document> = test
        .documents
        .iter()
        .filter(|d| classes.contains(&d.label) && !exclude.contains(d.id.as_str()))
        .cloned()
        .collect();
    Ok(pool
        .chunks(queries_per_episode)
        .map(|chunk| {
            (
                QuerySet {
                    documents: chunk.to_vec(),
                },
                support.clone(),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{DocEmbedding, PrecomputedEncoder};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Test model: documents embed to fixed vectors, categories by name.
    struct Fixed {
        docs: PrecomputedEncoder,
        categories: BTreeMap<String, Vec<f64>>,
    }

    impl DocumentEncoder for Fixed {
        fn output_dim(&self) -> usize {
            self.docs.output_dim()
        }
        fn encode(&self, doc: &Document) -> Result<DocEmbedding> {
            self.docs.encode(doc)
        }
    }

    impl FewShotModel for Fixed {
        fn category_vector(&self, name: &str) -> Option<Vec<f64>> {
            self.categories.get(name).cloned()
        }
    }

    fn doc(id: &str, label: u32) -> Document {
        Document {
            id: id.into(),
            tokens: vec![1],
            label: ClassId(label),
        }
    }

    fn corpus(per_class: &[usize]) -> LabeledCorpus {
        let mut documents = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                documents.push(doc(&format!("c{c}d{i}"), c as u32));
            }
        }
        LabeledCorpus {
            documents,
            class_index: ClassIndex::from_names((0..per_class.len()).map(|c| format!("class{c}"))).unwrap(),
        }
    }

    /// Class `c` docs sit near `(10c, 0)` with a small per-document offset.
    fn clustered(test: &LabeledCorpus) -> Fixed {
        let mut docs = PrecomputedEncoder::new(2);
        for (i, d) in test.documents.iter().enumerate() {
            let jitter = (i % 5) as f64 * 0.1;
            docs.insert(d.id.clone(), vec![10.0 * d.label.0 as f64 + jitter, jitter])
                .unwrap();
        }
        let categories = test
            .class_index
            .iter()
            .map(|(c, n)| (n.to_owned(), vec![10.0 * c.0 as f64, 0.0]))
            .collect();
        Fixed { docs, categories }
    }

    #[test]
    fn sampling_structure_and_errors() {
        let test = corpus(&[4, 4, 4]);
        let spec = EpisodeSpec {
            n_way: 2,
            k_shot: 1,
            queries_per_class: QueryCount::AllRemaining,
            seed: 5,
        };
        let (support, queries) = sample_support_query(&test, &spec).unwrap();
        assert_eq!(support.n_way(), 2);
        assert!(support.iter().all(|(_, d)| d.len() == 1));
        assert_eq!(queries.documents.len(), 6);
        let ids = support.document_ids();
        assert!(queries.documents.iter().all(|d| !ids.contains(d.id.as_str())));
        assert_eq!(sample_support_query(&test, &spec).unwrap(), (support, queries));

        let too_many = EpisodeSpec {
            n_way: 4,
            ..spec.clone()
        };
        assert!(matches!(
            sample_support_query(&test, &too_many),
            Err(Error::NotEnoughClasses { .. })
        ));
        let greedy = EpisodeSpec {
            queries_per_class: QueryCount::Fixed(4),
            ..spec
        };
        assert!(matches!(
            sample_support_query(&test, &greedy),
            Err(Error::InsufficientDocuments {
                needed: 5,
                available: 4,
                ..
            })
        ));
    }

    #[test]
    fn query_count_serde() {
        let q: QueryCount = serde_json::from_str("\"all\"").unwrap();
        assert_eq!(q, QueryCount::AllRemaining);
        let q: QueryCount = serde_json::from_str("7").unwrap();
        assert_eq!(q, QueryCount::Fixed(7));
        assert!(serde_json::from_str::<QueryCount>("\"most\"").is_err());
        assert_eq!(
            serde_json::to_string(&QueryCount::AllRemaining).unwrap(),
            "\"all\""
        );
    }

    #[test]
    fn prototypes_are_means() {
        let index = ClassIndex::from_names(["a"]).unwrap();
        let support = SupportSet::from_documents(vec![doc("x", 0), doc("y", 0)], &index);
        let mut enc = PrecomputedEncoder::new(2);
        enc.insert("x", vec![0.0, 0.0]).unwrap();
        enc.insert("y", vec![2.0, 2.0]).unwrap();
        let p = compute_prototypes(&support, &enc).unwrap();
        assert_eq!(p.vectors[&ClassId(0)], vec![1.0, 1.0]);

        let single = SupportSet::from_documents(vec![doc("y", 0)], &index);
        assert_eq!(
            compute_prototypes(&single, &enc).unwrap().vectors[&ClassId(0)],
            vec![2.0, 2.0]
        );
    }

    #[test]
    fn classify_nearest_and_ties() {
        let vectors: ClassVectors = [(ClassId(0), vec![1.0, 0.0]), (ClassId(1), vec![3.0, 0.0])].into();
        let both: BTreeSet<_> = [ClassId(0), ClassId(1)].into();
        assert_eq!(classify(&[0.0, 0.0], &vectors, &both).unwrap(), ClassId(0));
        let tie: ClassVectors = [(ClassId(0), vec![1.0, 0.0]), (ClassId(1), vec![-1.0, 0.0])].into();
        assert_eq!(classify(&[0.0, 0.0], &tie, &both).unwrap(), ClassId(0));
        assert!(matches!(
            classify(&[0.0, 0.0], &tie, &BTreeSet::new()),
            Err(Error::NoCandidates)
        ));
    }

    #[test]
    fn full_accuracy_arithmetic() {
        let test = corpus(&[3, 3]);
        let mut model = clustered(&test);
        // support: one doc per class; four remain, one is pushed to the wrong side
        model.docs.insert("c0d2", vec![19.0, 0.0]).unwrap();
        let support = SupportSet::from_documents(
            vec![test.documents[0].clone(), test.documents[3].clone()],
            &test.class_index,
        );
        let r = evaluate_full(&model, &[support], &test, EvalMode::CategoryTable).unwrap();
        assert_eq!(r.accuracies, vec![0.75]);
        assert_eq!(r.totals, vec![4]);
        let rows: Vec<u64> = r.confusion[0].counts.iter().map(|row| row.iter().sum()).collect();
        assert_eq!(rows, vec![2, 2]);
    }

    #[test]
    fn aggregation_over_support_sets() {
        let (mean, std) = mean_std(&[0.5, 0.6, 0.7]);
        assert!((mean - 0.6).abs() < 1e-12);
        assert!((std - 0.1).abs() < 1e-12);
    }

    #[test]
    fn separable_clusters_score_perfectly_with_prototypes() {
        let test = corpus(&[6, 6, 6]);
        let model = clustered(&test);
        let spec = EpisodeSpec {
            n_way: 3,
            k_shot: 2,
            queries_per_class: QueryCount::Fixed(0),
            seed: 1,
        };
        let (support, _) = sample_support_query(&test, &spec).unwrap();
        let r = evaluate_full(&model, &[support], &test, EvalMode::Prototypes).unwrap();
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn coverage_violation_in_category_mode() {
        let test = corpus(&[2, 2]);
        let mut model = clustered(&test);
        model.categories.remove("class1");
        let support = SupportSet::from_documents(
            vec![test.documents[0].clone(), test.documents[2].clone()],
            &test.class_index,
        );
        assert!(matches!(
            evaluate_full(&model, &[support], &test, EvalMode::CategoryTable),
            Err(Error::Coverage(name)) if name == "class1"
        ));
    }

    #[test]
    fn episodic_pooling() {
        let test = corpus(&[3, 3]);
        let mut model = clustered(&test);
        model.docs.insert("c0d1", vec![20.0, 0.0]).unwrap();
        let support = SupportSet::from_documents(
            vec![test.documents[0].clone(), test.documents[3].clone()],
            &test.class_index,
        );
        let q1 = QuerySet {
            documents: vec![test.documents[1].clone(), test.documents[2].clone()],
        };
        let q2 = QuerySet {
            documents: vec![test.documents[4].clone(), test.documents[5].clone()],
        };
        let episodes = vec![(q1.clone(), support.clone()), (q2, support.clone())];
        let r = evaluate_episodic(&model, &episodes, EvalMode::CategoryTable).unwrap();
        assert_eq!(r.accuracy, 0.75);

        let single = evaluate_episodic(&model, &[(q1, support.clone())], EvalMode::CategoryTable).unwrap();
        assert_eq!(single.accuracy, 0.5);

        let empty = vec![(QuerySet::default(), support)];
        assert!(matches!(
            evaluate_episodic(&model, &empty, EvalMode::CategoryTable),
            Err(Error::EmptyQuerySet(0))
        ));
    }

    #[test]
    fn csv_layout() {
        let r = EvalReport {
            metric: Metric::Full,
            mode: EvalMode::CategoryTable,
            accuracy: 0.6,
            std: 0.1,
            accuracies: vec![0.5, 0.6, 0.7],
            correct: vec![5, 6, 7],
            totals: vec![10; 3],
            confusion: Vec::new(),
        };
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "support_set,metric,accuracy");
        assert_eq!(lines[1], "0,full,0.5");
        assert_eq!(lines[4], "mean,full,0.6");
    }

    proptest! {
        #[test]
        fn classify_agrees_with_scan_and_monotone_transforms(seed: u64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vectors: ClassVectors = (0..5)
                .map(|c| (ClassId(c), (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let candidates: BTreeSet<ClassId> = vectors.keys().copied().collect();
            let got = classify(&x, &vectors, &candidates).unwrap();

            let dists: Vec<f64> = (0..5).map(|c| squared_distance(&x, &vectors[&ClassId(c)])).collect();
            let argmin = |ds: &[f64]| (0..ds.len()).fold(0, |b, i| if ds[i] < ds[b] { i } else { b });
            prop_assert_eq!(got, ClassId(argmin(&dists) as u32));
            let shifted: Vec<f64> = dists.iter().map(|d| d + 3.0).collect();
            let doubled: Vec<f64> = dists.iter().map(|d| 2.0 * d).collect();
            prop_assert_eq!(argmin(&shifted), argmin(&dists));
            prop_assert_eq!(argmin(&doubled), argmin(&dists));
        }

        #[test]
        fn full_is_order_independent_and_matches_partitioned_episodes(seed: u64, chunk in 1usize..7) {
            let test = corpus(&[5, 5, 5]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut model = clustered(&test);
            // scramble a few documents so accuracy is not trivially 1
            for d in &test.documents {
                if rng.gen_bool(0.3) {
                    model.docs.insert(d.id.clone(), vec![rng.gen_range(0.0..20.0), 0.0]).unwrap();
                }
            }
            let spec = EpisodeSpec { n_way: 3, k_shot: 1, queries_per_class: QueryCount::Fixed(0), seed };
            let (support, _) = sample_support_query(&test, &spec).unwrap();
            let full = evaluate_full(&model, std::slice::from_ref(&support), &test, EvalMode::Prototypes).unwrap();

            let mut shuffled = test.clone();
            shuffled.documents.reverse();
            let again = evaluate_full(&model, std::slice::from_ref(&support), &shuffled, EvalMode::Prototypes).unwrap();
            prop_assert_eq!(full.accuracy, again.accuracy);

            let episodes = partition_episodes(&test, &support, chunk).unwrap();
            let episodic = evaluate_episodic(&model, &episodes, EvalMode::Prototypes).unwrap();
            prop_assert_eq!(full.accuracy, episodic.accuracy);
        }

        #[test]
        fn k1_prototypes_are_nearest_neighbour(seed: u64) {
            let test = corpus(&[3, 3, 3]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut enc = PrecomputedEncoder::new(2);
            for d in &test.documents {
                enc.insert(d.id.clone(), vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).unwrap();
            }
            let spec = EpisodeSpec { n_way: 3, k_shot: 1, queries_per_class: QueryCount::AllRemaining, seed };
            let (support, queries) = sample_support_query(&test, &spec).unwrap();
            let protos = compute_prototypes(&support, &enc).unwrap();
            for q in &queries.documents {
                let x = enc.encode(q).unwrap().into_vec();
                let predicted = classify(&x, &protos.vectors, &support.classes()).unwrap();
                let nearest = support
                    .documents()
                    .map(|s| (s.label, squared_distance(&x, enc.encode(s).unwrap().as_slice())))
                    .fold(None, |b: Option<(ClassId, f64)>, (c, d)| match b {
                        Some((_, bd)) if bd <= d => b,
                        _ => Some((c, d)),
                    })
                    .unwrap()
                    .0;
                prop_assert_eq!(predicted, nearest);
            }
        }
    }
}
