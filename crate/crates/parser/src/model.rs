use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xsdp_autodiff::{ParamId, ParamStore, Tensor};

use crate::config::{NetworkConfig, SharingTopology};
use crate::vocab::{LabelSet, Vocabularies};
use crate::ParserError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[serde(alias = "sem")]
    Semantic,
    #[serde(alias = "syn")]
    Syntactic,
}

impl Task {
    pub fn short(self) -> &'static str {
        match self {
            Task::Semantic => "sem",
            Task::Syntactic => "syn",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = ParserError;

    fn from_str(s: &str) -> Result<Task, ParserError> {
        match s {
            "sem" | "semantic" => Ok(Task::Semantic),
            "syn" | "syntactic" => Ok(Task::Syntactic),
            other => Err(ParserError::Config(format!(
                "unknown task {other:?}, expected sem or syn"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Lstm {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Fnn {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Heads {
    pub edge_dep: Fnn,
    pub edge_head: Fnn,
    pub label_dep: Fnn,
    pub label_head: Fnn,
}

#[derive(Clone, Debug)]
pub(crate) struct TaskParams {
    pub rnn: Vec<BiLstm>,
    pub task_rnn: Option<BiLstm>,
    pub heads: Heads,
    pub edge_w: ParamId,
    pub label_w: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct Params {
    pub word: ParamId,
    pub pretrained: Option<ParamId>,
    pub pos: ParamId,
    pub char_embed: ParamId,
    pub char_rnn: BiLstm,
    pub root: ParamId,
    pub tasks: Vec<(Task, TaskParams)>,
}

/// Everything needed to rebuild a model apart from its parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub network: NetworkConfig,
    pub topology: SharingTopology,
    pub tasks: Vec<Task>,
    pub vocab: Vocabularies,
    pub seed: u64,
}

/// Parser parameters together with their configuration and vocabularies.
#[derive(Clone, Debug)]
pub struct Model {
    header: ModelHeader,
    pub(crate) store: ParamStore,
    pub(crate) params: Params,
    embedding_group: Vec<ParamId>,
}

// FNV-1a, stable across platforms and releases
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

struct Builder<'a> {
    store: ParamStore,
    seed: u64,
    group: Option<&'a mut Vec<ParamId>>,
}

enum Init {
    Glorot,
    Embedding,
    Zeros,
    LstmBias,
}

impl Builder<'_> {
    /// Adds a parameter initialised from `(seed, key)`. Parameters that play
    /// the same role in different topologies share a key and so start equal.
    fn add(&mut self, name: String, key: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId, ParserError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ name_hash(key));
        let mut t = Tensor::zeros(rows, cols);
        match init {
            Init::Glorot => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-a..a));
            }
            Init::Embedding => {
                let a = (3.0 / cols as f64).sqrt();
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-a..a));
            }
            Init::Zeros => {}
            Init::LstmBias => {
                // forget gate starts open
                let h = cols / 4;
                t.data_mut()[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
            }
        }
        let id = self.store.add(name, t, true)?;
        if let Some(group) = self.group.as_mut() {
            group.push(id);
        }
        Ok(id)
    }

    fn lstm(&mut self, name: &str, key: &str, input: usize, hidden: usize) -> Result<Lstm, ParserError> {
        Ok(Lstm {
            w: self.add(format!("{name}.W"), &format!("{key}.W"), input, 4 * hidden, Init::Glorot)?,
            u: self.add(format!("{name}.U"), &format!("{key}.U"), hidden, 4 * hidden, Init::Glorot)?,
            b: self.add(format!("{name}.b"), &format!("{key}.b"), 1, 4 * hidden, Init::LstmBias)?,
            hidden,
        })
    }

    fn bilstm(&mut self, name: &str, key: &str, input: usize, output: usize) -> Result<BiLstm, ParserError> {
        Ok(BiLstm {
            fwd: self.lstm(&format!("{name}.fwd"), &format!("{key}.fwd"), input, output / 2)?,
            bwd: self.lstm(&format!("{name}.bwd"), &format!("{key}.bwd"), input, output / 2)?,
        })
    }

    fn fnn(&mut self, name: &str, key: &str, input: usize, output: usize) -> Result<Fnn, ParserError> {
        Ok(Fnn {
            w: self.add(format!("{name}.W"), &format!("{key}.W"), input, output, Init::Glorot)?,
            b: self.add(format!("{name}.b"), &format!("{key}.b"), 1, output, Init::Zeros)?,
        })
    }

    fn heads(&mut self, scope: &str, key: &str, input: usize, output: usize) -> Result<Heads, ParserError> {
        let mut f = |part: &str| self.fnn(&format!("fnn.{scope}.{part}"), &format!("fnn.{key}.{part}"), input, output);
        Ok(Heads {
            edge_dep: f("edge_dep")?,
            edge_head: f("edge_head")?,
            label_dep: f("label_dep")?,
            label_head: f("label_head")?,
        })
    }
}

const SHARED: &str = "shared";

// shared layers start from the semantic task's initial values
fn init_key(scope: &str) -> &str {
    if scope == SHARED {
        Task::Semantic.short()
    } else {
        scope
    }
}

impl Model {
    /// Builds a freshly initialised model. `pretrained` must have one row per
    /// entry of `vocab.pretrained` and `d_w` columns.
    pub fn new(
        network: NetworkConfig,
        topology: SharingTopology,
        tasks: Vec<Task>,
        vocab: Vocabularies,
        pretrained: Option<Tensor>,
        seed: u64,
    ) -> Result<Model, ParserError> {
        network.validate()?;
        topology.validate()?;
        if tasks.is_empty() {
            return Err(ParserError::Config("a model needs at least one task".into()));
        }
        let mut sorted = tasks.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != tasks.len() {
            return Err(ParserError::Config("duplicate task".into()));
        }
        for &task in &tasks {
            if Self::labels_of(&vocab, task).is_empty() {
                return Err(ParserError::Config(format!("task {} has no labels", task.short())));
            }
        }
        if pretrained.is_none() && vocab.pretrained.len() > 1 {
            return Err(ParserError::Config("pretrained vocabulary given without its vectors".into()));
        }
        if let Some(table) = &pretrained {
            if table.shape() != (vocab.pretrained.len(), network.d_w) {
                return Err(ParserError::Config(format!(
                    "pretrained table is {}x{} but the vocabulary needs {}x{}",
                    table.rows(),
                    table.cols(),
                    vocab.pretrained.len(),
                    network.d_w
                )));
            }
        }

        // a table holding only the unknown row contributes nothing
        let pretrained = pretrained.filter(|_| vocab.pretrained.len() > 1);
        let n = &network;
        let d_in = n.d_w + n.d_t + n.context_dim;
        let multitask = tasks.len() > 1;
        let mut embedding_group = Vec::new();
        let mut b = Builder {
            store: ParamStore::new(),
            seed,
            group: Some(&mut embedding_group),
        };
        let word = b.add("embed.word".into(), "embed.word", vocab.words.len(), n.d_w, Init::Embedding)?;
        let pretrained_id = match pretrained {
            Some(table) => {
                let id = b.store.add("embed.pretrained", table, false)?;
                b.group.as_mut().expect("embedding group").push(id);
                Some(id)
            }
            None => None,
        };
        let pos = b.add("embed.pos".into(), "embed.pos", vocab.pos.len(), n.d_t, Init::Embedding)?;
        let char_embed = b.add("embed.char".into(), "embed.char", vocab.chars.len(), n.d_char, Init::Embedding)?;
        let char_rnn = b.bilstm("embed.char_rnn", "embed.char_rnn", n.d_char, n.d_w)?;
        let root = b.add("embed.root".into(), "embed.root", 1, d_in, Init::Embedding)?;
        b.group = None;

        let stack = |b: &mut Builder, scope: &str| -> Result<Vec<BiLstm>, ParserError> {
            (0..n.rnn_layers)
                .map(|layer| {
                    let input = if layer == 0 { d_in } else { n.d_h };
                    b.bilstm(&format!("rnn.{scope}.{layer}"), &format!("rnn.{}.{layer}", init_key(scope)), input, n.d_h)
                })
                .collect()
        };
        let shared_rnn = if multitask && topology.shared_rnn { Some(stack(&mut b, SHARED)?) } else { None };
        let shared_heads = if multitask && topology.shared_fnn {
            Some(b.heads(SHARED, init_key(SHARED), n.d_h, n.d_fnn)?)
        } else {
            None
        };
        let bias = usize::from(n.bilinear_bias);
        let d = n.d_fnn + bias;
        let mut task_params = Vec::new();
        for &task in &tasks {
            let t = task.short();
            let rnn = match &shared_rnn {
                Some(s) => s.clone(),
                None => stack(&mut b, t)?,
            };
            let task_rnn = if multitask && topology.task_rnn {
                Some(b.bilstm(&format!("taskrnn.{t}"), &format!("taskrnn.{t}"), n.d_h, n.d_h)?)
            } else {
                None
            };
            let heads = match shared_heads {
                Some(h) => h,
                None => b.heads(t, t, n.d_h, n.d_fnn)?,
            };
            let labels = Self::labels_of(&vocab, task).len();
            let edge_w = b.add(format!("{t}.edge.W"), &format!("{t}.edge.W"), d, d, Init::Glorot)?;
            let label_w = b.add(format!("{t}.label.W"), &format!("{t}.label.W"), d, labels * d, Init::Glorot)?;
            task_params.push((
                task,
                TaskParams {
                    rnn,
                    task_rnn,
                    heads,
                    edge_w,
                    label_w,
                },
            ));
        }
        let store = b.store;
        Ok(Model {
            header: ModelHeader {
                network,
                topology,
                tasks,
                vocab,
                seed,
            },
            store,
            params: Params {
                word,
                pretrained: pretrained_id,
                pos,
                char_embed,
                char_rnn,
                root,
                tasks: task_params,
            },
            embedding_group,
        })
    }

    fn labels_of(vocab: &Vocabularies, task: Task) -> &LabelSet {
        match task {
            Task::Semantic => &vocab.semantic_labels,
            Task::Syntactic => &vocab.syntactic_labels,
        }
    }

    pub fn header(&self) -> &ModelHeader {
        &self.header
    }

    pub fn network(&self) -> &NetworkConfig {
        &self.header.network
    }

    pub fn topology(&self) -> SharingTopology {
        self.header.topology
    }

    pub fn tasks(&self) -> &[Task] {
        &self.header.tasks
    }

    pub fn has_task(&self, task: Task) -> bool {
        self.header.tasks.contains(&task)
    }

    pub fn vocab(&self) -> &Vocabularies {
        &self.header.vocab
    }

    pub fn labels(&self, task: Task) -> &LabelSet {
        Self::labels_of(&self.header.vocab, task)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Parameters of the input layer, shared by every task.
    pub fn embedding_params(&self) -> &[ParamId] {
        &self.embedding_group
    }

    pub(crate) fn task_params(&self, task: Task) -> Result<&TaskParams, ParserError> {
        self.params
            .tasks
            .iter()
            .find(|(t, _)| *t == task)
            .map(|(_, p)| p)
            .ok_or_else(|| ParserError::Config(format!("model has no {} task", task.short())))
    }

    /// Writes the model: `XSDPMODL`, a `u32` version, a `u64` length and a
    /// JSON header, then the parameter values as a tensor file.
    pub fn save(&self, mut writer: impl Write) -> Result<(), ParserError> {
        let header = serde_json::to_vec(&self.header)?;
        writer.write_all(MODEL_MAGIC)?;
        writer.write_all(&MODEL_VERSION.to_le_bytes())?;
        writer.write_all(&(header.len() as u64).to_le_bytes())?;
        writer.write_all(&header)?;
        self.store.save(&mut writer)?;
        Ok(())
    }

    /// Reads a model. With `expected`, a checkpoint trained under a
    /// different network configuration is refused.
    pub fn load(mut reader: impl Read, expected: Option<&NetworkConfig>) -> Result<Model, ParserError> {
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(ParserError::Checkpoint("not a model file".into()));
        }
        let mut word = [0u8; 4];
        reader.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != MODEL_VERSION {
            return Err(ParserError::Checkpoint(format!("unsupported model version {version}")));
        }
        let mut len = [0u8; 8];
        reader.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        reader.read_exact(&mut header)?;
        let header: ModelHeader = serde_json::from_slice(&header)?;
        if let Some(expected) = expected {
            if *expected != header.network {
                return Err(ParserError::Checkpoint(format!(
                    "checkpoint network configuration {:?} differs from the requested {:?}",
                    header.network, expected
                )));
            }
        }
        // placeholder values, overwritten by the tensor section
        let pretrained = if header.vocab.pretrained.len() > 1 {
            Some(Tensor::zeros(header.vocab.pretrained.len(), header.network.d_w))
        } else {
            None
        };
        let mut model = Model::new(
            header.network,
            header.topology,
            header.tasks,
            header.vocab,
            pretrained,
            header.seed,
        )?;
        model.store.load(&mut reader)?;
        Ok(model)
    }
}

const MODEL_MAGIC: &[u8; 8] = b"XSDPMODL";
const MODEL_VERSION: u32 = 1;
