//! Versioned binary model archives.
//!
//! Layout: the 8-byte magic `DSLMODEL`, a `u32` format version, a `u64`
//! payload length, the payload, and a CRC-32 of the payload. Integers are
//! little-endian `u64` unless noted, floats are little-endian `f64`, and
//! every sequence is prefixed by its length.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use ndarray::{Array1, Array2};

use crate::ensemble::{DslModel, EnsembleMode, LayerModel, TrainConfig};
use crate::error::{DslError, Result};
use crate::learners::tree::{DecisionTree, TreeNode};
use crate::learners::{
    BoostedTreesModel, ForestModel, ForestParams, GbtParams, KnnModel, KnnParams, LearnerKind,
    LearnerParams, LearnerSpec, LogisticModel, LogisticParams, MaxFeatures, ModelBody,
    TrainedModel,
};
use crate::weights::WeightVector;

pub const ARCHIVE_MAGIC: &[u8; 8] = b"DSLMODEL";
pub const ARCHIVE_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 8;

fn learner_tag(kind: LearnerKind) -> u8 {
    match kind {
        LearnerKind::LogisticRegression => 0,
        LearnerKind::Knn => 1,
        LearnerKind::RandomForest => 2,
        LearnerKind::ExtraTrees => 3,
        LearnerKind::GradientBoostedTrees => 4,
        LearnerKind::DummyUniform => 5,
        LearnerKind::DummyPrior => 6,
    }
}

fn mode_tag(mode: EnsembleMode) -> u8 {
    match mode {
        EnsembleMode::Deep => 0,
        EnsembleMode::SingleLayer => 1,
        EnsembleMode::SimpleAverage => 2,
    }
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn usize(&mut self, v: usize) {
        self.buf
            .write_u64::<LittleEndian>(v as u64)
            .expect("write to Vec");
    }

    fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).expect("write to Vec");
    }

    fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).expect("write to Vec");
    }

    fn f64s(&mut self, v: &[f64]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }

    fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        v.iter().for_each(|&x| self.usize(x));
    }

    fn matrix(&mut self, m: &Array2<f64>) {
        self.usize(m.nrows());
        self.usize(m.ncols());
        m.iter().for_each(|&x| self.f64(x));
    }

    fn string(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    fn forest_params(&mut self, p: &ForestParams) {
        self.usize(p.n_trees);
        match p.max_depth {
            Some(d) => {
                self.u8(1);
                self.usize(d);
            }
            None => self.u8(0),
        }
        match p.max_features {
            MaxFeatures::Sqrt => self.u8(0),
            MaxFeatures::All => self.u8(1),
            MaxFeatures::Fixed(n) => {
                self.u8(2);
                self.usize(n);
            }
        }
        self.usize(p.min_samples_split);
    }

    fn spec(&mut self, spec: &LearnerSpec) {
        self.u8(learner_tag(spec.kind()));
        match &spec.params {
            LearnerParams::LogisticRegression(p) => {
                self.f64(p.learning_rate);
                self.f64(p.l2_penalty);
                self.usize(p.max_epochs);
                self.f64(p.tolerance);
            }
            LearnerParams::Knn(p) => self.usize(p.neighbors),
            LearnerParams::RandomForest(p) | LearnerParams::ExtraTrees(p) => self.forest_params(p),
            LearnerParams::GradientBoostedTrees(p) => {
                self.usize(p.n_rounds);
                self.usize(p.max_depth);
                self.f64(p.learning_rate);
                self.f64(p.lambda);
                self.f64(p.min_child_weight);
                self.usize(p.max_bins);
            }
            LearnerParams::DummyUniform | LearnerParams::DummyPrior => {}
        }
        self.u64(spec.seed);
    }

    fn tree(&mut self, tree: &DecisionTree) {
        self.usize(tree.leaf_width);
        self.usize(tree.nodes.len());
        for node in &tree.nodes {
            match *node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    self.u8(0);
                    self.usize(feature);
                    self.f64(threshold);
                    self.usize(left);
                    self.usize(right);
                }
                TreeNode::Leaf(leaf) => {
                    self.u8(1);
                    self.usize(leaf);
                }
            }
        }
        self.f64s(&tree.leaf_values);
    }

    fn trees(&mut self, trees: &[DecisionTree]) {
        self.usize(trees.len());
        trees.iter().for_each(|t| self.tree(t));
    }

    fn model(&mut self, model: &TrainedModel) {
        self.spec(&model.spec);
        self.usize(model.n_classes);
        self.usize(model.feature_count);
        match &model.body {
            ModelBody::Constant(dist) => {
                self.u8(0);
                self.f64s(dist);
            }
            ModelBody::Logistic(m) => {
                self.u8(1);
                self.f64s(&m.mean);
                self.f64s(&m.scale);
                self.matrix(&m.weights);
                self.f64s(m.bias.as_slice().expect("contiguous bias"));
            }
            ModelBody::Knn(m) => {
                self.u8(2);
                self.usize(m.neighbors);
                self.usize(m.n_classes);
                self.matrix(&m.train);
                self.usizes(&m.labels);
            }
            ModelBody::Forest(m) => {
                self.u8(3);
                self.usize(m.n_classes);
                self.trees(&m.trees);
            }
            ModelBody::Boosted(m) => {
                self.u8(4);
                self.usize(m.n_classes);
                self.trees(&m.trees);
            }
        }
    }

    fn dsl(&mut self, model: &DslModel) {
        let config = model.config();
        self.usize(config.folds);
        self.usize(config.max_iterations);
        self.u8(u8::from(config.retrain_full));
        self.u64(config.seed);
        self.u8(mode_tag(config.mode));
        self.usize(config.roster.len());
        config.roster.iter().for_each(|s| self.spec(s));

        self.usize(model.n_classes());
        self.usize(model.n_features());
        self.usize(model.class_names().len());
        model.class_names().iter().for_each(|s| self.string(s));

        self.usize(model.layers().len());
        for layer in model.layers() {
            self.u64(layer.fold_seed);
            self.f64(layer.train_loss);
            self.f64s(layer.weights.as_slice());
            self.f64s(&layer.learner_losses);
            self.usize(layer.models.len());
            for per_learner in &layer.models {
                self.usize(per_learner.len());
                per_learner.iter().for_each(|m| self.model(m));
            }
        }
    }
}

struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn malformed(msg: impl Into<String>) -> DslError {
    DslError::Format(msg.into())
}

impl Decoder<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                malformed(format!(
                    "archive block at byte {} overruns the payload",
                    self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| malformed("integer out of range"))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(malformed(format!("invalid flag byte {other}"))),
        }
    }

    /// A length prefix for `item_size`-byte items, checked against what is left.
    fn len(&mut self, item_size: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(item_size) > self.bytes.len() - self.pos {
            return Err(malformed(format!(
                "sequence of {n} items exceeds the payload"
            )));
        }
        Ok(n)
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.usize()).collect()
    }

    fn matrix(&mut self) -> Result<Array2<f64>> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| malformed("matrix size overflows"))?;
        if count.saturating_mul(8) > self.bytes.len() - self.pos {
            return Err(malformed("matrix exceeds the payload"));
        }
        let values = (0..count).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Array2::from_shape_vec((rows, cols), values).map_err(|e| malformed(e.to_string()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("class name is not UTF-8"))
    }

    fn forest_params(&mut self) -> Result<ForestParams> {
        let n_trees = self.usize()?;
        let max_depth = if self.bool()? {
            Some(self.usize()?)
        } else {
            None
        };
        let max_features = match self.u8()? {
            0 => MaxFeatures::Sqrt,
            1 => MaxFeatures::All,
            2 => MaxFeatures::Fixed(self.usize()?),
            other => return Err(malformed(format!("invalid max-features tag {other}"))),
        };
        Ok(ForestParams {
            n_trees,
            max_depth,
            max_features,
            min_samples_split: self.usize()?,
        })
    }

    fn spec(&mut self) -> Result<LearnerSpec> {
        let params = match self.u8()? {
            0 => LearnerParams::LogisticRegression(LogisticParams {
                learning_rate: self.f64()?,
                l2_penalty: self.f64()?,
                max_epochs: self.usize()?,
                tolerance: self.f64()?,
            }),
            1 => LearnerParams::Knn(KnnParams {
                neighbors: self.usize()?,
            }),
            2 => LearnerParams::RandomForest(self.forest_params()?),
            3 => LearnerParams::ExtraTrees(self.forest_params()?),
            4 => LearnerParams::GradientBoostedTrees(GbtParams {
                n_rounds: self.usize()?,
                max_depth: self.usize()?,
                learning_rate: self.f64()?,
                lambda: self.f64()?,
                min_child_weight: self.f64()?,
                max_bins: self.usize()?,
            }),
            5 => LearnerParams::DummyUniform,
            6 => LearnerParams::DummyPrior,
            other => return Err(DslError::UnsupportedLearner(other)),
        };
        params.validate()?;
        Ok(LearnerSpec::new(params, self.u64()?))
    }

    fn tree(&mut self, n_features: usize) -> Result<DecisionTree> {
        let leaf_width = self.usize()?;
        let n_nodes = self.len(9)?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            nodes.push(match self.u8()? {
                0 => TreeNode::Split {
                    feature: self.usize()?,
                    threshold: self.f64()?,
                    left: self.usize()?,
                    right: self.usize()?,
                },
                1 => TreeNode::Leaf(self.usize()?),
                other => return Err(malformed(format!("invalid tree node tag {other}"))),
            });
        }
        let tree = DecisionTree {
            nodes,
            leaf_values: self.f64s()?,
            leaf_width,
        };
        if !tree.is_well_formed(n_features) {
            return Err(malformed("tree structure is inconsistent"));
        }
        Ok(tree)
    }

    fn trees(&mut self, n_features: usize, leaf_width: usize) -> Result<Vec<DecisionTree>> {
        let n = self.len(16)?;
        let trees = (0..n)
            .map(|_| self.tree(n_features))
            .collect::<Result<Vec<_>>>()?;
        if trees.iter().any(|t| t.leaf_width != leaf_width) {
            return Err(malformed("tree leaf width does not match the model"));
        }
        Ok(trees)
    }

    fn model(&mut self) -> Result<TrainedModel> {
        let spec = self.spec()?;
        let n_classes = self.usize()?;
        let l = self.usize()?;
        let kind = spec.kind();
        let body_tag = self.u8()?;
        let expected_tag = match kind {
            LearnerKind::DummyUniform | LearnerKind::DummyPrior => 0,
            LearnerKind::LogisticRegression => 1,
            LearnerKind::Knn => 2,
            LearnerKind::RandomForest | LearnerKind::ExtraTrees => 3,
            LearnerKind::GradientBoostedTrees => 4,
        };
        if body_tag != expected_tag {
            return Err(malformed(format!(
                "model body tag {body_tag} does not fit learner {kind}"
            )));
        }
        let body = match body_tag {
            0 => {
                let dist = self.f64s()?;
                if dist.len() != n_classes {
                    return Err(malformed("constant distribution has the wrong width"));
                }
                ModelBody::Constant(dist)
            }
            1 => {
                let mean = self.f64s()?;
                let scale = self.f64s()?;
                let weights = self.matrix()?;
                let bias = Array1::from(self.f64s()?);
                if mean.len() != l
                    || scale.len() != l
                    || weights.dim() != (l, n_classes)
                    || bias.len() != n_classes
                {
                    return Err(malformed("logistic parameters have inconsistent shapes"));
                }
                ModelBody::Logistic(LogisticModel {
                    mean,
                    scale,
                    weights,
                    bias,
                })
            }
            2 => {
                let neighbors = self.usize()?;
                let classes = self.usize()?;
                let train = self.matrix()?;
                let labels = self.usizes()?;
                if classes != n_classes
                    || train.ncols() != l
                    || train.nrows() != labels.len()
                    || train.nrows() < neighbors
                    || labels.iter().any(|&y| y >= n_classes)
                {
                    return Err(malformed("k-NN parameters have inconsistent shapes"));
                }
                ModelBody::Knn(KnnModel {
                    neighbors,
                    n_classes,
                    train,
                    labels,
                })
            }
            3 => {
                if self.usize()? != n_classes {
                    return Err(malformed("forest class count does not match the model"));
                }
                ModelBody::Forest(ForestModel {
                    n_classes,
                    trees: self.trees(l, n_classes)?,
                })
            }
            _ => {
                if self.usize()? != n_classes {
                    return Err(malformed("boosted class count does not match the model"));
                }
                let trees = self.trees(l, 1)?;
                if n_classes == 0 || trees.len() % n_classes != 0 {
                    return Err(malformed(
                        "boosted tree count is not a multiple of the class count",
                    ));
                }
                ModelBody::Boosted(BoostedTreesModel { n_classes, trees })
            }
        };
        Ok(TrainedModel {
            spec,
            n_classes,
            feature_count: l,
            body,
        })
    }

    fn dsl(&mut self) -> Result<DslModel> {
        let folds = self.usize()?;
        let max_iterations = self.usize()?;
        let retrain_full = self.bool()?;
        let seed = self.u64()?;
        let mode = match self.u8()? {
            0 => EnsembleMode::Deep,
            1 => EnsembleMode::SingleLayer,
            2 => EnsembleMode::SimpleAverage,
            other => return Err(malformed(format!("invalid ensemble mode tag {other}"))),
        };
        let n_roster = self.len(9)?;
        let roster = (0..n_roster)
            .map(|_| self.spec())
            .collect::<Result<Vec<_>>>()?;
        let config = TrainConfig {
            folds,
            roster,
            max_iterations,
            retrain_full,
            seed,
            mode,
        };

        let n_classes = self.usize()?;
        let n_features = self.usize()?;
        let n_names = self.len(8)?;
        let class_names = (0..n_names)
            .map(|_| self.string())
            .collect::<Result<Vec<_>>>()?;

        let n_layers = self.len(8)?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let fold_seed = self.u64()?;
            let train_loss = self.f64()?;
            let weights = WeightVector::new(self.f64s()?)?;
            let learner_losses = self.f64s()?;
            let m = self.len(8)?;
            let mut models = Vec::with_capacity(m);
            for _ in 0..m {
                let count = self.len(8)?;
                models.push(
                    (0..count)
                        .map(|_| self.model())
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            layers.push(LayerModel {
                models,
                weights,
                train_loss,
                learner_losses,
                fold_seed,
            });
        }
        DslModel::new(layers, n_classes, n_features, config, class_names)
    }
}

pub fn write_model(model: &DslModel, mut out: impl Write) -> Result<()> {
    let mut enc = Encoder { buf: Vec::new() };
    enc.dsl(model);
    out.write_all(ARCHIVE_MAGIC)?;
    out.write_u32::<LittleEndian>(ARCHIVE_VERSION)?;
    out.write_u64::<LittleEndian>(enc.buf.len() as u64)?;
    out.write_all(&enc.buf)?;
    out.write_u32::<LittleEndian>(crc32fast::hash(&enc.buf))?;
    out.flush()?;
    Ok(())
}

pub fn read_model(mut input: impl Read) -> Result<DslModel> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(malformed("archive is shorter than its header"));
    }
    if &bytes[..8] != ARCHIVE_MAGIC {
        return Err(malformed("not a model archive (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != ARCHIVE_VERSION {
        return Err(DslError::UnknownVersion(version));
    }
    let declared = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let actual = (bytes.len() - HEADER_LEN).saturating_sub(4) as u64;
    if bytes.len() < HEADER_LEN + 4 || declared != actual {
        return Err(malformed(format!(
            "payload length mismatch: header says {declared}, file holds {actual}"
        )));
    }
    let payload = &bytes[HEADER_LEN..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(DslError::Checksum { stored, computed });
    }
    let mut dec = Decoder {
        bytes: payload,
        pos: 0,
    };
    let model = dec.dsl()?;
    if dec.pos != payload.len() {
        return Err(malformed("trailing bytes after the model"));
    }
    Ok(model)
}

pub fn save_model(model: &DslModel, path: impl AsRef<Path>) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DslModel> {
    read_model(BufReader::new(File::open(path)?))
}
