use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{ArgGroup, Args};
use xsdp_autodiff::Tensor;
use xsdp_core::evaluation::{head_match_stats, label_contribution, length_buckets, score_graphs};
use xsdp_core::formats::{
    read_alignments, read_conllu, read_context_vectors, read_sdp, write_alignments, write_conllu, write_sdp,
    AlignmentFile, SdpDocument, SdpEntry, SdpSentence,
};
use xsdp_core::projection::synth::synth_corpus;
use xsdp_core::projection::{density_sample_indices, heldout_split, intersect_alignments, project_graph};
use xsdp_core::{PartialGraph, SemanticGraph, SyntacticTree, Token};
use xsdp_parser::check::{end_to_end_gradient_check, uniform_network};
use xsdp_parser::vocab::read_pretrained;
use xsdp_parser::{
    train, HeldoutExample, Model, SemanticExample, Sentence, SharingTopology, SyntacticExample, Task, Vocabularies,
};

use crate::config::{parse_sharing, PipelineConfig};
use crate::manifest::Manifest;
use crate::Command;

pub fn dispatch(command: Command, mut cfg: PipelineConfig, manifest_path: Option<&Path>) -> Result<()> {
    let name = match &command {
        Command::Intersect(_) => "intersect",
        Command::Project(_) => "project",
        Command::Sample(_) => "sample",
        Command::Split(_) => "split",
        Command::Synth(_) => "synth",
        Command::Train(_) => "train",
        Command::Parse(_) => "parse",
        Command::Score(_) => "score",
        Command::Analyze(_) => "analyze",
        Command::Gradcheck(_) => "gradcheck",
    };
    if let Command::Train(args) = &command {
        args.apply(&mut cfg)?;
    }
    if let Command::Synth(args) = &command {
        args.apply(&mut cfg);
    }
    cfg.validate()?;
    let resolved = cfg.to_toml();
    let configured = !matches!(command, Command::Intersect(_) | Command::Project(_) | Command::Score(_) | Command::Analyze(_));
    let level = if configured { log::Level::Info } else { log::Level::Debug };
    log::log!(level, "{name}: resolved configuration\n{resolved}");
    let mut manifest = Manifest::new(name, resolved);
    match command {
        Command::Intersect(a) => intersect(&a, &mut manifest)?,
        Command::Project(a) => project(&a, &mut manifest)?,
        Command::Sample(a) => sample(&a, &cfg, &mut manifest)?,
        Command::Split(a) => split(&a, &cfg, &mut manifest)?,
        Command::Synth(a) => synth(&a, &cfg, &mut manifest)?,
        Command::Train(a) => train_model(&a, &cfg, &mut manifest)?,
        Command::Parse(a) => parse(&a, &cfg, &mut manifest)?,
        Command::Score(a) => score(&a, &mut manifest)?,
        Command::Analyze(a) => analyze(&a, &mut manifest)?,
        Command::Gradcheck(a) => gradcheck(&a, &cfg, &mut manifest)?,
    }
    if let Some(path) = manifest.write(manifest_path)? {
        log::info!("manifest written to {}", path.display());
    }
    Ok(())
}

fn open(path: &Path, manifest: &mut Manifest) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    manifest.input(path)?;
    Ok(BufReader::new(file))
}

fn read_sdp_file(path: &Path, manifest: &mut Manifest) -> Result<SdpDocument> {
    read_sdp(open(path, manifest)?).with_context(|| format!("reading SDP file {}", path.display()))
}

fn read_conllu_file(path: &Path, manifest: &mut Manifest) -> Result<Vec<SyntacticTree>> {
    read_conllu(open(path, manifest)?).with_context(|| format!("reading CoNLL-U file {}", path.display()))
}

fn read_align_file(path: &Path, manifest: &mut Manifest) -> Result<AlignmentFile> {
    read_alignments(open(path, manifest)?).with_context(|| format!("reading alignment file {}", path.display()))
}

fn is_conllu(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("conllu" | "conll"))
}

/// Sentence ids and tokens of an SDP or (by extension) CoNLL-U file.
fn read_sentences(path: &Path, manifest: &mut Manifest) -> Result<Vec<(String, Vec<Token>)>> {
    if is_conllu(path) {
        let trees = read_conllu_file(path, manifest)?;
        Ok(trees.iter().enumerate().map(|(k, t)| (sentence_id(k), t.tokens().to_vec())).collect())
    } else {
        let doc = read_sdp_file(path, manifest)?;
        Ok(doc.sentences.iter().map(|s| (s.id.clone(), s.entry.graph().tokens().to_vec())).collect())
    }
}

fn sentence_id(k: usize) -> String {
    format!("2{:07}", k + 1)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_with(path: &Path, manifest: &mut Manifest, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush()?;
    drop(w);
    manifest.output(path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_sdp_file(path: &Path, doc: &SdpDocument, manifest: &mut Manifest) -> Result<()> {
    write_with(path, manifest, |w| Ok(write_sdp(doc, w)?))
}

/// Prints `text` or writes it to `output`.
fn emit(text: &str, output: Option<&Path>, manifest: &mut Manifest) -> Result<()> {
    match output {
        Some(path) => write_with(path, manifest, |w| Ok(w.write_all(text.as_bytes())?)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Args, Debug)]
pub struct IntersectArgs {
    /// Source-to-target alignments.
    #[arg(long)]
    pub forward: PathBuf,
    /// Alignments of the target-to-source run, as `source-target` pairs
    /// unless --backward-reversed is given.
    #[arg(long)]
    pub backward: PathBuf,
    /// The backward file lists `target-source` pairs rather than
    /// `source-target`.
    #[arg(long)]
    pub backward_reversed: bool,
    /// Source SDP file; when given, links beyond each source sentence are
    /// dropped.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
}

fn intersect(a: &IntersectArgs, manifest: &mut Manifest) -> Result<()> {
    let forward = read_align_file(&a.forward, manifest)?;
    let mut backward = read_align_file(&a.backward, manifest)?;
    if a.backward_reversed {
        backward = backward.transposed();
    }
    ensure!(
        forward.len() == backward.len(),
        "forward has {} sentence pairs but backward has {}",
        forward.len(),
        backward.len()
    );
    let source_lens: Option<Vec<usize>> = match &a.source {
        Some(p) => {
            let doc = read_sdp_file(p, manifest)?;
            ensure!(doc.len() == forward.len(), "{} source sentences for {} alignment lines", doc.len(), forward.len());
            Some(doc.graphs().map(SemanticGraph::len).collect())
        }
        None => None,
    };
    let sentences = (0..forward.len())
        .map(|k| {
            let (f, b) = (&forward.sentences[k], &backward.sentences[k]);
            let len = match &source_lens {
                Some(lens) => lens[k],
                None => f.iter().chain(b).map(|&(s, _)| s).max().unwrap_or(0),
            };
            intersect_alignments(f, b, len).links().collect()
        })
        .collect();
    let out = AlignmentFile { sentences };
    write_with(&a.output, manifest, |w| Ok(write_alignments(&out, w)?))
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    /// Source-side SDP graphs.
    #[arg(long)]
    pub source: PathBuf,
    /// Intersected (one-to-one) alignments.
    #[arg(long)]
    pub alignment: PathBuf,
    /// Target sentences, SDP or CoNLL-U (`.conllu`).
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
}

fn project(a: &ProjectArgs, manifest: &mut Manifest) -> Result<()> {
    let source = read_sdp_file(&a.source, manifest)?;
    let alignment = read_align_file(&a.alignment, manifest)?;
    let target = read_sentences(&a.target, manifest)?;
    ensure!(
        source.len() == alignment.len() && source.len() == target.len(),
        "{} source sentences, {} alignment lines and {} target sentences",
        source.len(),
        alignment.len(),
        target.len()
    );
    let source_lens: Vec<usize> = source.graphs().map(SemanticGraph::len).collect();
    let target_lens: Vec<usize> = target.iter().map(|t| t.1.len()).collect();
    alignment.check_lengths(&source_lens, &target_lens).map_err(anyhow::Error::msg)?;
    let mut sentences = Vec::with_capacity(source.len());
    for (k, (src, (id, tokens))) in source.sentences.iter().zip(&target).enumerate() {
        let links = &alignment.sentences[k];
        // self-intersection keeps only the one-to-one links
        let one_to_one = intersect_alignments(links, links, src.entry.graph().len());
        let projected = project_graph(src.entry.graph(), &one_to_one, tokens)
            .with_context(|| format!("projecting sentence {} ({id})", k + 1))?;
        sentences.push(SdpSentence {
            id: id.clone(),
            entry: SdpEntry::Partial(projected),
        });
    }
    write_sdp_file(&a.output, &SdpDocument { sentences }, manifest)
}

fn partials(doc: &SdpDocument) -> Vec<PartialGraph> {
    doc.sentences.iter().map(|s| s.entry.to_partial()).collect()
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Projected SDP corpus.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Number of sentences to draw (even).
    #[arg(long)]
    pub size: usize,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    #[arg(long, short)]
    pub output: PathBuf,
}

fn sample(a: &SampleArgs, cfg: &PipelineConfig, manifest: &mut Manifest) -> Result<()> {
    let doc = read_sdp_file(&a.input, manifest)?;
    let graphs = partials(&doc);
    let chosen = density_sample_indices(&graphs, a.size, a.threshold, cfg.train.seed)?;
    let sentences: Vec<SdpSentence> = chosen.iter().map(|&i| doc.sentences[i].clone()).collect();
    let chosen: Vec<&PartialGraph> = chosen.iter().map(|&i| &graphs[i]).collect();
    let below = chosen.iter().filter(|g| g.density() < a.threshold).count();
    log::info!("sampled {} sentences, {below} below density {}", chosen.len(), a.threshold);
    manifest.result("below", below);
    manifest.result("at_or_above", chosen.len() - below);
    write_sdp_file(&a.output, &SdpDocument { sentences }, manifest)
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Fraction of sentences to hold out.
    #[arg(long, default_value_t = 0.05)]
    pub heldout: f64,
    #[arg(long)]
    pub train_output: PathBuf,
    #[arg(long)]
    pub heldout_output: PathBuf,
}

fn split(a: &SplitArgs, cfg: &PipelineConfig, manifest: &mut Manifest) -> Result<()> {
    let doc = read_sdp_file(&a.input, manifest)?;
    let (train, held) = heldout_split(&doc.sentences, a.heldout, cfg.train.seed)?;
    write_sdp_file(&a.train_output, &SdpDocument { sentences: train }, manifest)?;
    write_sdp_file(&a.heldout_output, &SdpDocument { sentences: held }, manifest)
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, short)]
    pub output_dir: PathBuf,
    /// Number of sentence pairs.
    #[arg(long)]
    pub sentences: Option<usize>,
    /// Probability that a target token is aligned after intersection.
    #[arg(long)]
    pub density: Option<f64>,
    /// Share of syntactic dependents whose semantic edge follows the tree.
    #[arg(long)]
    pub agreement: Option<f64>,
}

impl SynthArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(n) = self.sentences {
            cfg.synth.sentences = n;
        }
        if let Some(d) = self.density {
            cfg.synth.alignment_density = d;
        }
        if let Some(a) = self.agreement {
            cfg.synth.syntactic_agreement = a;
        }
    }
}

/// File names written by `synth`.
pub const SYNTH_FILES: [&str; 6] = [
    "source.sdp",
    "gold.sdp",
    "target.conllu",
    "forward.align",
    "backward.align",
    "synth.toml",
];

fn synth(a: &SynthArgs, cfg: &PipelineConfig, manifest: &mut Manifest) -> Result<()> {
    let corpus = synth_corpus(&cfg.synth.to_config())?;
    let dir = &a.output_dir;
    let doc = |graphs: &[SemanticGraph]| SdpDocument {
        sentences: graphs
            .iter()
            .enumerate()
            .map(|(k, g)| SdpSentence {
                id: sentence_id(k),
                entry: SdpEntry::Full(g.clone()),
            })
            .collect(),
    };
    write_sdp_file(&dir.join(SYNTH_FILES[0]), &doc(&corpus.source), manifest)?;
    write_sdp_file(&dir.join(SYNTH_FILES[1]), &doc(&corpus.gold), manifest)?;
    write_with(&dir.join(SYNTH_FILES[2]), manifest, |w| Ok(write_conllu(&corpus.syntax, w)?))?;
    write_with(&dir.join(SYNTH_FILES[3]), manifest, |w| Ok(write_alignments(&corpus.forward, w)?))?;
    write_with(&dir.join(SYNTH_FILES[4]), manifest, |w| Ok(write_alignments(&corpus.backward, w)?))?;
    let section = toml::to_string(&cfg.synth)?;
    write_with(&dir.join(SYNTH_FILES[5]), manifest, |w| Ok(w.write_all(section.as_bytes())?))
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Semantic training graphs (projected or full SDP).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Held-out graphs for early stopping; by default 5% of the training
    /// graphs.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Syntactic trees of the auxiliary task (CoNLL-U).
    #[arg(long)]
    pub syntax: Option<PathBuf>,
    /// Comma-separated tasks: sem, syn.
    #[arg(long, default_value = "sem")]
    pub tasks: String,
    /// Comma-separated shared layers: rnn, fnn, taskrnn (default from the
    /// configuration).
    #[arg(long)]
    pub share: Option<String>,
    /// Word vectors in text form, `d_w` values per word.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Context vectors of the training, held-out and syntactic sentences.
    #[arg(long)]
    pub train_context: Option<PathBuf>,
    #[arg(long)]
    pub heldout_context: Option<PathBuf>,
    #[arg(long)]
    pub syntax_context: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Output checkpoint.
    #[arg(long, short)]
    pub model: Option<PathBuf>,
    /// Per-epoch metrics log (default: `<model>.metrics`).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(share) = &self.share {
            cfg.sharing = parse_sharing(share)?;
        }
        if let Some(e) = self.max_epochs {
            cfg.train.max_epochs = e;
        }
        Ok(())
    }
}

fn parse_tasks(list: &str) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let task: Task = item.parse().map_err(|_| anyhow::anyhow!("unknown task {item:?} (expected sem or syn)"))?;
        ensure!(!tasks.contains(&task), "task {item:?} listed twice");
        tasks.push(task);
    }
    ensure!(tasks.contains(&Task::Semantic), "training needs the sem task");
    Ok(tasks)
}

fn read_contexts(path: Option<&Path>, dim: usize, tokens: &[usize], manifest: &mut Manifest) -> Result<Vec<Option<Tensor>>> {
    let Some(path) = path else {
        return Ok(vec![None; tokens.len()]);
    };
    ensure!(dim > 0, "context vectors given but network.context_dim is 0");
    let vectors = read_context_vectors(open(path, manifest)?, dim)
        .with_context(|| format!("reading context vectors {}", path.display()))?;
    vectors.check_token_counts(tokens).with_context(|| format!("in {}", path.display()))?;
    Ok(vectors
        .sentences
        .into_iter()
        .map(|s| {
            let rows = s.len();
            Some(Tensor::new(rows, dim, s.into_iter().flatten().collect()).expect("uniform dimension"))
        })
        .collect())
}

fn sentence(tokens: &[Token], context: Option<Tensor>) -> Sentence {
    let s = Sentence::new(tokens.to_vec());
    match context {
        Some(c) => s.with_context(c),
        None => s,
    }
}

fn required<'a>(flag: Option<&'a PathBuf>, config: Option<&'a PathBuf>, what: &str) -> Result<&'a PathBuf> {
    flag.or(config).with_context(|| format!("no {what} given (flag or [paths] in the configuration)"))
}

fn train_model(a: &TrainArgs, cfg: &PipelineConfig, manifest: &mut Manifest) -> Result<()> {
    let tasks = parse_tasks(&a.tasks)?;
    let multitask = tasks.contains(&Task::Syntactic);
    let dim = cfg.network.context_dim;
    let train_path = required(a.train.as_ref(), cfg.paths.train.as_ref(), "training corpus")?;
    let model_path = required(a.model.as_ref(), cfg.paths.model.as_ref(), "model output path")?;
    let doc = read_sdp_file(train_path, manifest)?;
    ensure!(!doc.is_empty(), "training corpus {} is empty", train_path.display());
    let mut graphs = partials(&doc);
    let lens: Vec<usize> = graphs.iter().map(|g| g.graph().len()).collect();
    let mut contexts = read_contexts(a.train_context.as_deref(), dim, &lens, manifest)?;

    let (held_graphs, held_contexts) = match a.heldout.as_ref().or(cfg.paths.heldout.as_ref()) {
        Some(path) => {
            let held = partials(&read_sdp_file(path, manifest)?);
            let lens: Vec<usize> = held.iter().map(|g| g.graph().len()).collect();
            let ctx = read_contexts(a.heldout_context.as_deref(), dim, &lens, manifest)?;
            (held, ctx)
        }
        None => {
            ensure!(a.heldout_context.is_none(), "--heldout-context needs --heldout");
            let indices: Vec<usize> = (0..graphs.len()).collect();
            let (keep, held) = heldout_split(&indices, 0.05, cfg.train.seed)?;
            ensure!(!held.is_empty() && !keep.is_empty(), "corpus too small to split off 5% held-out data");
            log::info!("held out {} of {} training sentences", held.len(), graphs.len());
            let pick = |ix: &[usize], g: &[PartialGraph], c: &[Option<Tensor>]| {
                (ix.iter().map(|&i| g[i].clone()).collect::<Vec<_>>(), ix.iter().map(|&i| c[i].clone()).collect::<Vec<_>>())
            };
            let (hg, hc) = pick(&held, &graphs, &contexts);
            let (tg, tc) = pick(&keep, &graphs, &contexts);
            graphs = tg;
            contexts = tc;
            (hg, hc)
        }
    };

    let (trees, tree_contexts) = if multitask {
        let path = required(a.syntax.as_ref(), cfg.paths.syntax.as_ref(), "syntactic corpus for the syn task")?;
        let trees = read_conllu_file(path, manifest)?;
        let lens: Vec<usize> = trees.iter().map(SyntacticTree::len).collect();
        let ctx = read_contexts(a.syntax_context.as_deref(), dim, &lens, manifest)?;
        (trees, ctx)
    } else {
        ensure!(a.syntax.is_none(), "--syntax given but the syn task is not in --tasks");
        (Vec::new(), Vec::new())
    };

    let token_lists: Vec<&[Token]> = graphs
        .iter()
        .map(|g| g.graph().tokens())
        .chain(trees.iter().map(SyntacticTree::tokens))
        .collect();
    let graph_refs: Vec<&SemanticGraph> = graphs.iter().map(PartialGraph::graph).collect();
    let tree_refs: Vec<&SyntacticTree> = trees.iter().collect();
    let mut vocab = Vocabularies::build(&token_lists, &graph_refs, &tree_refs);
    let pretrained = match a.pretrained.as_ref().or(cfg.paths.pretrained.as_ref()) {
        Some(path) => {
            let (words, table) = read_pretrained(open(path, manifest)?, cfg.network.d_w)
                .with_context(|| format!("reading word vectors {}", path.display()))?;
            vocab.pretrained = words;
            Some(table)
        }
        None => None,
    };
    let topology = if multitask { cfg.sharing } else { SharingTopology::default() };
    let mut model = Model::new(cfg.network.clone(), topology, tasks, vocab, pretrained, cfg.init_seed())?;

    let semantic = graphs
        .iter()
        .zip(contexts)
        .map(|(g, c)| SemanticExample::new(&model, sentence(g.graph().tokens(), c), g))
        .collect::<Result<Vec<_>, _>>()?;
    let syntactic = trees
        .iter()
        .zip(tree_contexts)
        .map(|(t, c)| SyntacticExample::new(&model, sentence(t.tokens(), c), t))
        .collect::<Result<Vec<_>, _>>()?;
    let heldout: Vec<HeldoutExample> = held_graphs
        .into_iter()
        .zip(held_contexts)
        .map(|(g, c)| HeldoutExample::new(&model, sentence(g.graph().tokens(), c), g))
        .collect();
    log::info!(
        "training on {} semantic and {} syntactic sentences, {} held out",
        semantic.len(),
        syntactic.len(),
        heldout.len()
    );
    let report = train(&mut model, &semantic, &syntactic, &heldout, &cfg.train)?;
    log::info!("best epoch {} with held-out LF {:.4}", report.best_epoch, report.best_lf);
    manifest.result("best_epoch", report.best_epoch);
    manifest.result("best_heldout_lf", report.best_lf);
    write_with(model_path, manifest, |w| Ok(model.save(w)?))?;
    let metrics = a.metrics.clone().unwrap_or_else(|| PathBuf::from(format!("{}.metrics", model_path.display())));
    write_with(&metrics, manifest, |w| Ok(w.write_all(report.metrics_log().as_bytes())?))
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    #[arg(long, short)]
    pub model: Option<PathBuf>,
    /// Sentences to parse, SDP or CoNLL-U (`.conllu`); existing edges are
    /// ignored.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Context vectors of the input sentences.
    #[arg(long)]
    pub context: Option<PathBuf>,
    /// Predicted semantic graphs.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Also writes syntactic analyses (multitask models only).
    #[arg(long)]
    pub syntax_output: Option<PathBuf>,
}

fn parse(a: &ParseArgs, cfg: &PipelineConfig, manifest: &mut Manifest) -> Result<()> {
    let model_path = required(a.model.as_ref(), cfg.paths.model.as_ref(), "model")?;
    let model = Model::load(open(model_path, manifest)?, None).with_context(|| format!("loading {}", model_path.display()))?;
    let input = read_sentences(&a.input, manifest)?;
    let lens: Vec<usize> = input.iter().map(|s| s.1.len()).collect();
    let contexts = read_contexts(a.context.as_deref(), model.network().context_dim, &lens, manifest)?;
    let sentences: Vec<Sentence> = input.iter().zip(contexts).map(|((_, t), c)| sentence(t, c)).collect();
    let graphs = sentences.iter().map(|s| model.parse_semantic(s)).collect::<Result<Vec<_>, _>>()?;
    let doc = SdpDocument {
        sentences: input
            .iter()
            .zip(graphs)
            .map(|((id, _), g)| SdpSentence {
                id: id.clone(),
                entry: SdpEntry::Full(g),
            })
            .collect(),
    };
    write_sdp_file(&a.output, &doc, manifest)?;
    if let Some(path) = &a.syntax_output {
        ensure!(model.has_task(Task::Syntactic), "the model has no syntactic task");
        let trees = sentences.iter().map(|s| model.parse_syntactic(s)).collect::<Result<Vec<_>, _>>()?;
        write_with(path, manifest, |w| Ok(write_conllu(&trees, w)?))?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long, short)]
    pub predicted: PathBuf,
    #[arg(long, short)]
    pub gold: PathBuf,
    /// Writes the report here instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

fn graphs_of(path: &Path, manifest: &mut Manifest) -> Result<Vec<SemanticGraph>> {
    Ok(read_sdp_file(path, manifest)?.graphs().cloned().collect())
}

fn score(a: &ScoreArgs, manifest: &mut Manifest) -> Result<()> {
    let predicted = graphs_of(&a.predicted, manifest)?;
    let gold = graphs_of(&a.gold, manifest)?;
    let report = score_graphs(&predicted, &gold)?;
    manifest.result("lf", report.lf());
    manifest.result("uf", report.uf());
    emit(&report.to_key_value(), a.output.as_deref(), manifest)
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("analysis").required(true).args(["buckets", "headmatch", "contribution"])))]
pub struct AnalyzeArgs {
    /// Labeled precision by dependency length (needs --predicted).
    #[arg(long)]
    pub buckets: bool,
    /// Syntactic head agreement of edges right under --a but not --b and
    /// vice versa (needs --syntax, --a, --b).
    #[arg(long)]
    pub headmatch: bool,
    /// Share of gold edges fixed by --a over --b, by syntactic label
    /// (needs --syntax, --a, --b).
    #[arg(long)]
    pub contribution: bool,
    #[arg(long, short)]
    pub gold: PathBuf,
    #[arg(long, short)]
    pub predicted: Option<PathBuf>,
    /// Gold syntactic trees of the gold sentences.
    #[arg(long)]
    pub syntax: Option<PathBuf>,
    /// Predictions of the first system (e.g. multitask).
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// Predictions of the second system (e.g. single-task).
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Prints a plain data series instead of key=value pairs where
    /// available.
    #[arg(long)]
    pub series: bool,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

fn analyze(a: &AnalyzeArgs, manifest: &mut Manifest) -> Result<()> {
    let gold = graphs_of(&a.gold, manifest)?;
    let need = |p: &Option<PathBuf>, flag: &str| p.clone().with_context(|| format!("this analysis needs --{flag}"));
    let text = if a.buckets {
        let predicted = graphs_of(&need(&a.predicted, "predicted")?, manifest)?;
        let report = length_buckets(&predicted, &gold)?;
        if a.series {
            report.to_series()
        } else {
            report.to_key_value()
        }
    } else {
        let trees = read_conllu_file(&need(&a.syntax, "syntax")?, manifest)?;
        let first = graphs_of(&need(&a.a, "a")?, manifest)?;
        let second = graphs_of(&need(&a.b, "b")?, manifest)?;
        if a.headmatch {
            if a.series {
                bail!("--series is not available for --headmatch");
            }
            head_match_stats(&gold, &trees, &first, &second)?.to_key_value()
        } else {
            let report = label_contribution(&first, &second, &gold, &trees)?;
            if a.series {
                report.to_series()
            } else {
                report.to_key_value()
            }
        }
    };
    emit(&text, a.output.as_deref(), manifest)
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Every network dimension (even, at most 8 keeps the check fast).
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Sentence length.
    #[arg(long, default_value_t = 4)]
    pub tokens: usize,
    /// Shared layers of the checked multitask model.
    #[arg(long, default_value = "rnn,taskrnn")]
    pub share: String,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

fn gradcheck(a: &GradcheckArgs, cfg: &PipelineConfig, manifest: &mut Manifest) -> Result<()> {
    ensure!(a.dim > 0 && a.dim.is_multiple_of(2), "--dim must be positive and even");
    let topology = parse_sharing(&a.share)?;
    let report = end_to_end_gradient_check(uniform_network(a.dim), topology, a.tokens, cfg.init_seed(), a.eps, a.tolerance)?;
    let worst = report.worst.as_ref().map_or("none".to_string(), |(name, k)| format!("{name}[{k}]"));
    println!(
        "max_rel_error={:e} worst={worst} coordinates={} tolerance={:e} passed={}",
        report.max_rel_error,
        report.coordinates,
        report.tolerance,
        report.passed()
    );
    manifest.result("max_rel_error", report.max_rel_error);
    ensure!(report.passed(), "gradient check failed: relative error {:e} at {worst}", report.max_rel_error);
    Ok(())
}
