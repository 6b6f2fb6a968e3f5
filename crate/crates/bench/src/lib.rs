//! Fixtures shared by the criterion benches in `benches/`.

use cat2vec_core::corpus::{
    apply_tshot_constraint, build_vocabulary, merge_training_set, tokenize_corpus, Vocabulary,
};
use cat2vec_core::fewshot::sample_support_query;
use cat2vec_core::linalg::Matrix;
use cat2vec_core::objectives::BatchItem;
use cat2vec_core::synthgen::generate;
use cat2vec_core::{
    CategoryEmbeddingTable, ClassId, ConstraintSpec, EpisodeSpec, LabeledCorpus, MergedTrainingSet, Origin,
    QueryCount, SupportSet, SynthSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A batch whose first half comes from training classes and second half from
/// K-shot classes, each class appearing at least twice.
pub fn mixed_batch(size: usize, dim: usize, n_train: u32, n_kshot: u32, seed: u64) -> Vec<BatchItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|i| {
            let class = if i < size / 2 {
                ClassId((i as u32 / 2) % n_train)
            } else {
                ClassId(n_train + (i as u32 / 2) % n_kshot)
            };
            let origin = if class.0 < n_train {
                Origin::TrainClass
            } else {
                Origin::TestKShot
            };
            BatchItem::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(), class).with_origin(origin)
        })
        .collect()
}

pub fn category_table(classes: usize, dim: usize, seed: u64) -> CategoryEmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CategoryEmbeddingTable {
        rows: Matrix::uniform(classes, dim, 1.0, &mut rng),
    }
}

pub struct Experiment {
    pub vocab: Vocabulary,
    pub test: LabeledCorpus,
    pub support: SupportSet,
    pub data: MergedTrainingSet,
}

/// The default synthetic setting with one document per training class and
/// a single support set over every test class.
pub fn experiment(spec: &SynthSpec) -> Experiment {
    let corpora = generate(spec).expect("valid spec");
    let texts = corpora
        .train
        .documents
        .iter()
        .chain(&corpora.test.documents)
        .map(|d| d.text.as_str());
    let vocab = build_vocabulary(texts, 1, usize::MAX).expect("non-empty");
    let train = tokenize_corpus(&corpora.train, &vocab, 50).expect("tokenizes");
    let train = apply_tshot_constraint(&train, &ConstraintSpec { m_tshot: 1, seed: 0 }).expect("caps");
    let test = tokenize_corpus(&corpora.test, &vocab, 50).expect("tokenizes");
    let episode = EpisodeSpec {
        n_way: spec.n_test_classes,
        k_shot: spec.k_shot_docs_per_test_class,
        queries_per_class: QueryCount::Fixed(0),
        seed: 0,
    };
    let (support, _) = sample_support_query(&test, &episode).expect("enough documents");
    let data = merge_training_set(&train, &support).expect("disjoint classes");
    Experiment {
        vocab,
        test,
        support,
        data,
    }
}
