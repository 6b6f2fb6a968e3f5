//! Mini-batch training of the encoder and category embeddings.

mod checkpoint;
mod gradcheck;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ClassId, ClassIndex, Document, MergedTrainingSet, Origin, Vocabulary};
use crate::encoder::{encode, encode_grad, DocEmbedding, DocumentEncoder, EncoderParams};
use crate::error::{Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::objectives::{
    nca_loss, nce_loss_with_negatives, sample_negatives, sc_loss, xent_loss, BatchItem,
    CategoryEmbeddingTable, LossResult, NcaParams, NoiseDistribution, Objective, ScConfig,
};
use crate::optim::{Optimizer, OptimizerConfig};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC, VERSION};
pub use gradcheck::{
    grad_check, random_case, random_instance, relative_error, GradCheckCase, RELATIVE_ERROR_FLOOR,
};

/// Largest per-class group placed in a batch for objectives that need
/// in-batch positives.
pub const CLASS_GROUP_SIZE: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub n_neg: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub embed_dim: usize,
    pub output_dim: usize,
    pub tau: f64,
    pub max_tokens: usize,
    /// Rows of the NCA projection; the output width when unset.
    pub nca_dim: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Cc,
            epochs: 200,
            batch_size: 16,
            n_neg: 5,
            learning_rate: 1e-2,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            embed_dim: 32,
            output_dim: 32,
            tau: 0.1,
            max_tokens: 50,
            nca_dim: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("n_neg", self.n_neg),
            ("embed_dim", self.embed_dim),
            ("output_dim", self.output_dim),
            ("max_tokens", self.max_tokens),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.nca_dim == Some(0) {
            return Err(Error::InvalidConfig("nca_dim must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(Error::InvalidConfig("tau must be positive".into()));
        }
        Ok(())
    }

    /// Stable 64-bit digest of the configuration.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Every trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub categories: CategoryEmbeddingTable,
    pub nca: Option<NcaParams>,
}

impl ModelParams {
    pub fn init(config: &TrainConfig, vocab_rows: usize, classes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let encoder = EncoderParams::init(vocab_rows, config.embed_dim, config.output_dim, &mut rng);
        let categories = CategoryEmbeddingTable::init(classes, config.output_dim, &mut rng);
        let nca = (config.objective == Objective::Nca).then(|| {
            NcaParams::init(
                config.nca_dim.unwrap_or(config.output_dim),
                config.output_dim,
                &mut rng,
            )
        });
        ModelParams {
            encoder,
            categories,
            nca,
        }
    }

    /// Flat views of every parameter block, in a fixed order.
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks = vec![
            self.encoder.token_embeddings.as_mut_slice(),
            self.encoder.projection.as_mut_slice(),
            self.encoder.bias.as_mut_slice(),
            self.categories.rows.as_mut_slice(),
        ];
        if let Some(nca) = &mut self.nca {
            blocks.push(nca.projection.as_mut_slice());
        }
        blocks
    }
}

/// Dense gradients with the same layout as [`ModelParams::blocks_mut`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub token_embeddings: Matrix,
    pub projection: Matrix,
    pub bias: Vec<f64>,
    pub categories: Matrix,
    pub nca: Option<Matrix>,
}

impl ModelGrads {
    fn zeros_like(params: &ModelParams) -> Self {
        let enc = &params.encoder;
        ModelGrads {
            token_embeddings: Matrix::zeros(enc.vocab_rows(), enc.embed_dim()),
            projection: Matrix::zeros(enc.output_dim(), enc.embed_dim()),
            bias: vec![0.0; enc.output_dim()],
            categories: Matrix::zeros(params.categories.len(), params.categories.dim()),
            nca: params
                .nca
                .as_ref()
                .map(|n| Matrix::zeros(n.projection.rows(), n.projection.cols())),
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut blocks = vec![
            self.token_embeddings.as_slice(),
            self.projection.as_slice(),
            self.bias.as_slice(),
            self.categories.as_slice(),
        ];
        if let Some(nca) = &self.nca {
            blocks.push(nca.as_slice());
        }
        blocks
    }
}

/// Negative-sampling pools for one merged training set.
#[derive(Clone, Debug, Default)]
pub struct NoisePools {
    pub all: NoiseDistribution,
    pub train: NoiseDistribution,
    pub kshot: NoiseDistribution,
}

impl NoisePools {
    pub fn from_merged(data: &MergedTrainingSet) -> Self {
        NoisePools {
            all: NoiseDistribution::uniform(data.class_index.iter().map(|(id, _)| id)),
            train: NoiseDistribution::uniform(data.train_classes.iter().copied()),
            kshot: NoiseDistribution::uniform(data.kshot_classes.iter().copied()),
        }
    }
}

/// Draws negatives for every anchor as the objective prescribes; empty lists
/// for objectives that do not sample.
pub fn draw_negatives(
    objective: Objective,
    anchors: &[(ClassId, Origin)],
    pools: &NoisePools,
    n_neg: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<ClassId>>> {
    anchors
        .iter()
        .map(|&(class, origin)| match objective {
            Objective::Nce => sample_negatives(class, &pools.all, n_neg, rng),
            Objective::Cc => {
                let pool = match origin {
                    Origin::TrainClass => &pools.train,
                    Origin::TestKShot => &pools.kshot,
                };
                sample_negatives(class, pool, n_neg, rng)
            }
            _ => Ok(Vec::new()),
        })
        .collect()
}

/// Loss and full parameter gradient for one batch with fixed negatives.
pub fn batch_loss_and_grads(
    config: &TrainConfig,
    params: &ModelParams,
    docs: &[&Document],
    origins: &[Origin],
    negatives: &[Vec<ClassId>],
) -> Result<(LossResult, ModelGrads)> {
    let items = docs
        .iter()
        .zip(origins)
        .map(|(doc, &origin)| {
            Ok(BatchItem {
                embedding: encode(doc, &params.encoder)?.into_vec(),
                class: doc.label,
                origin,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let result = match config.objective {
        Objective::Nce | Objective::Cc => nce_loss_with_negatives(&items, &params.categories, negatives)?,
        Objective::Xent => xent_loss(&items, &params.categories)?,
        Objective::Sc => sc_loss(&items, &ScConfig { tau: config.tau })?,
        Objective::Nca => {
            let nca = params
                .nca
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("nca objective without projection".into()))?;
            nca_loss(&items, nca)?
        }
    };

    let mut grads = ModelGrads::zeros_like(params);
    for (doc, upstream) in docs.iter().zip(&result.encoder_upstream) {
        let g = encode_grad(doc, &params.encoder, upstream)?;
        for (token, row) in &g.token_rows {
            axpy(1.0, row, grads.token_embeddings.row_mut(*token as usize));
        }
        axpy(1.0, g.projection.as_slice(), grads.projection.as_mut_slice());
        axpy(1.0, &g.bias, &mut grads.bias);
    }
    for (class, g) in &result.category_grads {
        axpy(1.0, g, grads.categories.row_mut(class.index()));
    }
    if let (Some(target), Some(g)) = (&mut grads.nca, &result.projection_grad) {
        axpy(1.0, g.as_slice(), target.as_mut_slice());
    }
    Ok((result, grads))
}

/// Splits shuffled document indices into batches. Objectives needing in-batch
/// positives get class-grouped batches of up to [`CLASS_GROUP_SIZE`] same-class
/// documents per group.
pub fn make_batches(
    objective: Objective,
    labels: &[ClassId],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    if !objective.needs_positives() {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(rng);
        return order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    }
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let mut classes: Vec<Vec<usize>> = by_class.into_values().collect();
    classes.shuffle(rng);
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for mut members in classes {
        members.shuffle(rng);
        for group in members.chunks(CLASS_GROUP_SIZE) {
            if !current.is_empty() && current.len() + group.len() > batch_size {
                batches.push(std::mem::take(&mut current));
            }
            current.extend_from_slice(group);
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Learned encoder and categories together with everything needed to apply
/// them to new text.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub classes: ClassIndex,
    pub origins: Vec<Origin>,
    pub config: TrainConfig,
    pub fingerprint: u64,
    pub loss_history: Vec<f64>,
}

impl TrainedModel {
    pub fn encoder(&self) -> &EncoderParams {
        &self.params.encoder
    }

    pub fn class_origin(&self, name: &str) -> Option<Origin> {
        self.classes.get(name).map(|id| self.origins[id.index()])
    }

    /// Category vector of a K-shot class, looked up by name.
    pub fn kshot_category(&self, name: &str) -> Option<&[f64]> {
        let id = self.classes.get(name)?;
        (self.origins[id.index()] == Origin::TestKShot).then(|| self.params.categories.rows.row(id.index()))
    }

    /// Loss trajectory as `epoch,loss` CSV with 1-based epochs.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (i, loss) in self.loss_history.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, loss));
        }
        s
    }
}

impl DocumentEncoder for TrainedModel {
    fn output_dim(&self) -> usize {
        self.params.encoder.output_dim()
    }

    fn encode(&self, doc: &Document) -> Result<DocEmbedding> {
        encode(doc, &self.params.encoder)
    }
}

pub fn train(config: &TrainConfig, data: &MergedTrainingSet, vocab: &Vocabulary) -> Result<TrainedModel> {
    train_from(config, data, vocab, None)
}

/// Trains from `initial` parameters when given, otherwise from a seeded
/// initialization.
pub fn train_from(
    config: &TrainConfig,
    data: &MergedTrainingSet,
    vocab: &Vocabulary,
    initial: Option<ModelParams>,
) -> Result<TrainedModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let rows = vocab.rows();
    if let Some(&token) = data
        .documents
        .iter()
        .flat_map(|d| &d.tokens)
        .find(|&&t| t as usize >= rows)
    {
        return Err(Error::TokenOutOfRange { token, rows });
    }

    let mut params = initial.unwrap_or_else(|| ModelParams::init(config, rows, data.class_index.len()));
    let pools = NoisePools::from_merged(data);
    let labels: Vec<ClassId> = data.documents.iter().map(|d| d.label).collect();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(2);
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut weighted = 0.0;
        for (b, batch) in make_batches(config.objective, &labels, config.batch_size, &mut shuffle_rng)
            .into_iter()
            .enumerate()
        {
            let in_batch = |source: Error| Error::InBatch {
                epoch,
                batch: b + 1,
                source: Box::new(source),
            };
            let docs: Vec<&Document> = batch.iter().map(|&i| &data.documents[i]).collect();
            let origins: Vec<Origin> = batch.iter().map(|&i| data.origins[i]).collect();
            let anchors: Vec<(ClassId, Origin)> =
                docs.iter().zip(&origins).map(|(d, &o)| (d.label, o)).collect();
            let negatives = draw_negatives(config.objective, &anchors, &pools, config.n_neg, &mut noise_rng)
                .map_err(in_batch)?;
            let (result, grads) =
                batch_loss_and_grads(config, &params, &docs, &origins, &negatives).map_err(in_batch)?;
            if !result.loss.is_finite() {
                return Err(Error::Divergence { epoch, batch: b + 1 });
            }
            weighted += result.loss * docs.len() as f64;

            let grad_blocks = grads.blocks();
            let mut blocks: Vec<(&mut [f64], &[f64])> =
                params.blocks_mut().into_iter().zip(grad_blocks).collect();
            optimizer.step(config.learning_rate, &mut blocks);
        }
        let epoch_loss = weighted / data.len() as f64;
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        loss_history.push(epoch_loss);
    }

    let origins = data
        .class_index
        .iter()
        .map(|(id, _)| data.class_origin(id))
        .collect();
    Ok(TrainedModel {
        params,
        vocab: vocab.clone(),
        classes: data.class_index.clone(),
        origins,
        config: config.clone(),
        fingerprint: config.fingerprint(),
        loss_history,
    })
}
