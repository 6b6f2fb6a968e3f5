//! Seeded synthetic corpora from a token-block mixture model.
//!
//! The vocabulary `0..vocab_size` is cut into equal private blocks, one per
//! test class followed by one per training class, and the remainder is a
//! shared background. A class draws each token from its private block with
//! probability `class_token_concentration`, otherwise from the background.
//! Training class `j` is paired with test class `j mod n_test_classes`; with
//! probability `shift` its private draws come from the paired test class's
//! block instead of its own, so at `shift = 1` the two distributions coincide.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{RawCorpus, RawDocument};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_train_classes: usize,
    pub n_test_classes: usize,
    pub docs_per_train_class: usize,
    pub k_shot_docs_per_test_class: usize,
    pub query_docs_per_test_class: usize,
    pub vocab_size: usize,
    pub tokens_per_doc: usize,
    pub class_token_concentration: f64,
    pub shift: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_train_classes: 40,
            n_test_classes: 10,
            docs_per_train_class: 1,
            k_shot_docs_per_test_class: 5,
            query_docs_per_test_class: 20,
            vocab_size: 1020,
            tokens_per_doc: 30,
            class_token_concentration: 1.0,
            shift: 0.0,
            seed: 0,
        }
    }
}

/// Which generated class a distribution belongs to.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum SynthClass {
    Test(usize),
    Train(usize),
}

/// Mixture of uniform distributions over token-id ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenDistribution {
    pub components: Vec<(f64, Range<u32>)>,
}

impl TokenDistribution {
    fn new(components: Vec<(f64, Range<u32>)>) -> Self {
        TokenDistribution {
            components: components.into_iter().filter(|(w, _)| *w > 0.0).collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let mut u: f64 = rng.gen();
        let last = self.components.len() - 1;
        for (i, (w, range)) in self.components.iter().enumerate() {
            if u < *w || i == last {
                return rng.gen_range(range.clone());
            }
            u -= w;
        }
        unreachable!("non-empty mixture")
    }

    /// Probability of every token id in `0..vocab_size`.
    pub fn probabilities(&self, vocab_size: usize) -> Vec<f64> {
        let mut p = vec![0.0; vocab_size];
        for (w, range) in &self.components {
            let each = w / range.len() as f64;
            for t in range.clone() {
                p[t as usize] += each;
            }
        }
        p
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_train_classes", self.n_train_classes),
            ("n_test_classes", self.n_test_classes),
            ("docs_per_train_class", self.docs_per_train_class),
            ("k_shot_docs_per_test_class", self.k_shot_docs_per_test_class),
            ("query_docs_per_test_class", self.query_docs_per_test_class),
            ("vocab_size", self.vocab_size),
            ("tokens_per_doc", self.tokens_per_doc),
        ];
        for (name, n) in counts {
            if n == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(self.class_token_concentration > 0.0 && self.class_token_concentration <= 1.0) {
            return Err(Error::InvalidConfig(
                "class_token_concentration must be in (0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.shift) {
            return Err(Error::InvalidConfig("shift must be in [0, 1]".into()));
        }
        if self.block_size() == 0 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} cannot hold {} private blocks and a background",
                self.vocab_size,
                self.n_train_classes + self.n_test_classes
            )));
        }
        Ok(())
    }

    pub fn block_size(&self) -> usize {
        self.vocab_size / (self.n_train_classes + self.n_test_classes + 1)
    }

    fn block(&self, slot: usize) -> Range<u32> {
        let b = self.block_size();
        (slot * b) as u32..((slot + 1) * b) as u32
    }

    fn background(&self) -> Range<u32> {
        let start = (self.n_train_classes + self.n_test_classes) * self.block_size();
        start as u32..self.vocab_size as u32
    }

    pub fn distribution(&self, class: SynthClass) -> TokenDistribution {
        let c = self.class_token_concentration;
        match class {
            SynthClass::Test(t) => {
                TokenDistribution::new(vec![(c, self.block(t)), (1.0 - c, self.background())])
            }
            SynthClass::Train(j) => TokenDistribution::new(vec![
                (c * self.shift, self.block(j % self.n_test_classes)),
                (c * (1.0 - self.shift), self.block(self.n_test_classes + j)),
                (1.0 - c, self.background()),
            ]),
        }
    }
}

pub fn token_word(id: u32) -> String {
    format!("w{id}")
}

/// Inverse of [`token_word`].
pub fn word_token(word: &str) -> Option<u32> {
    word.strip_prefix('w')?.parse().ok()
}

pub fn train_class_name(j: usize) -> String {
    format!("train_{j:04}")
}

pub fn test_class_name(t: usize) -> String {
    format!("test_{t:04}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpora {
    pub train: RawCorpus,
    pub test: RawCorpus,
}

fn documents(spec: &SynthSpec, class: SynthClass, stream: u64, n_docs: usize) -> Vec<RawDocument> {
    let dist = spec.distribution(class);
    let label = match class {
        SynthClass::Test(t) => test_class_name(t),
        SynthClass::Train(j) => train_class_name(j),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    (0..n_docs)
        .map(|i| {
            let words: Vec<String> = (0..spec.tokens_per_doc)
                .map(|_| token_word(dist.sample(&mut rng)))
                .collect();
            RawDocument {
                id: format!("{label}_{i}"),
                text: words.join(" "),
                label: label.clone(),
            }
        })
        .collect()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthCorpora> {
    spec.validate()?;
    let per_test = spec.k_shot_docs_per_test_class + spec.query_docs_per_test_class;
    let test_docs = (0..spec.n_test_classes)
        .flat_map(|t| documents(spec, SynthClass::Test(t), 1 + t as u64, per_test))
        .collect();
    let train_docs = (0..spec.n_train_classes)
        .flat_map(|j| {
            let stream = 1 + (spec.n_test_classes + j) as u64;
            documents(spec, SynthClass::Train(j), stream, spec.docs_per_train_class)
        })
        .collect();
    Ok(SynthCorpora {
        train: RawCorpus::from_documents(train_docs),
        test: RawCorpus::from_documents(test_docs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    #[test]
    fn partial_spec_takes_defaults() {
        let s: SynthSpec = serde_json::from_str(r#"{"n_test_classes": 3, "seed": 7}"#).unwrap();
        assert_eq!(
            s,
            SynthSpec {
                n_test_classes: 3,
                seed: 7,
                ..SynthSpec::default()
            }
        );
        assert!(serde_json::from_str::<SynthSpec>(r#"{"n_classes": 3}"#).is_err());
    }

    fn spec() -> SynthSpec {
        SynthSpec {
            n_train_classes: 6,
            n_test_classes: 4,
            docs_per_train_class: 2,
            k_shot_docs_per_test_class: 2,
            query_docs_per_test_class: 5,
            vocab_size: 110,
            tokens_per_doc: 20,
            class_token_concentration: 1.0,
            shift: 0.0,
            seed: 9,
        }
    }

    fn histogram(text: &str, vocab: usize) -> Vec<f64> {
        let mut h = vec![0.0; vocab];
        for w in tokenize(text) {
            h[word_token(&w).unwrap() as usize] += 1.0;
        }
        h
    }

    #[test]
    fn separable_when_fully_concentrated() {
        let s = spec();
        let c = generate(&s).unwrap();
        let n = s.n_test_classes;
        let mut centroids = vec![vec![0.0; s.vocab_size]; n];
        for d in &c.test.documents {
            let class = c.test.class_index.get(&d.label).unwrap().index();
            for (a, b) in centroids[class].iter_mut().zip(histogram(&d.text, s.vocab_size)) {
                *a += b;
            }
        }
        let mut correct = 0;
        for d in &c.test.documents {
            let h = histogram(&d.text, s.vocab_size);
            let dist = |cent: &Vec<f64>| -> f64 {
                let norm: f64 = cent.iter().sum();
                cent.iter()
                    .zip(&h)
                    .map(|(x, y)| (x / norm - y / s.tokens_per_doc as f64).powi(2))
                    .sum()
            };
            let best = (0..n)
                .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
                .unwrap();
            correct += usize::from(best == c.test.class_index.get(&d.label).unwrap().index());
        }
        assert_eq!(correct, c.test.len());
    }

    #[test]
    fn full_shift_clones_test_distributions() {
        let s = SynthSpec {
            shift: 1.0,
            class_token_concentration: 0.7,
            ..spec()
        };
        for t in 0..s.n_test_classes {
            let target = s.distribution(SynthClass::Test(t)).probabilities(s.vocab_size);
            assert!((0..s.n_train_classes)
                .any(|j| s.distribution(SynthClass::Train(j)).probabilities(s.vocab_size) == target));
        }
        let unshifted = spec();
        let target = unshifted
            .distribution(SynthClass::Test(0))
            .probabilities(s.vocab_size);
        assert!((0..s.n_train_classes).all(|j| unshifted
            .distribution(SynthClass::Train(j))
            .probabilities(s.vocab_size)
            != target));
    }

    #[test]
    fn counts_ids_and_determinism() {
        let s = SynthSpec {
            n_train_classes: 40,
            docs_per_train_class: 1,
            vocab_size: 500,
            ..spec()
        };
        let c = generate(&s).unwrap();
        assert_eq!(c.train.class_index.len(), 40);
        assert!(c.train.class_counts().values().all(|&n| n == 1));
        assert!(c.test.class_counts().values().all(|&n| n == 7));
        for d in c.train.documents.iter().chain(&c.test.documents) {
            let words = tokenize(&d.text);
            assert_eq!(words.len(), s.tokens_per_doc);
            assert!(words
                .iter()
                .all(|w| (word_token(w).unwrap() as usize) < s.vocab_size));
        }
        assert_eq!(generate(&s).unwrap(), c);
    }

    #[test]
    fn rejects_inconsistent_specs() {
        assert!(generate(&SynthSpec {
            vocab_size: 5,
            ..spec()
        })
        .is_err());
        assert!(generate(&SynthSpec { shift: 1.5, ..spec() }).is_err());
        assert!(generate(&SynthSpec {
            class_token_concentration: 0.0,
            ..spec()
        })
        .is_err());
        assert!(generate(&SynthSpec {
            n_test_classes: 0,
            ..spec()
        })
        .is_err());
    }
}
