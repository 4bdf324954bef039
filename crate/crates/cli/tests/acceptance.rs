//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p xsdp --test acceptance`; extra arguments after
//! `--` select criteria by substring.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, RngAlgorithm, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xsdp_autodiff::{gradient_check, Adam, AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};
use xsdp_core::evaluation::score_graphs;
use xsdp_core::formats::{
    read_alignments, read_conllu, read_sdp, write_alignments, write_conllu, write_sdp, AlignmentFile, SdpDocument,
    SdpEntry, SdpSentence,
};
use xsdp_core::projection::synth::{synth_corpus, SynthConfig, SynthCorpus};
use xsdp_core::projection::{density_sample, intersect_alignments, project_graph};
use xsdp_core::{PartialGraph, SemanticGraph, SyntacticTree, Token, TOP_LABEL};
use xsdp_parser::check::{end_to_end_gradient_check, uniform_network};
use xsdp_parser::loss::{LabelTarget, SemanticTarget};
use xsdp_parser::train::{semantic_gradients, syntactic_gradients, StepKey};
use xsdp_parser::{
    train, HeldoutExample, Mode, Model, NetworkConfig, SemanticExample, Sentence, SharingTopology, SyntacticExample,
    Task, TrainConfig, Vocabularies,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type Build = Box<dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var, AutodiffError>>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("{what} took {t:.1?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- shared

fn vocab(graphs: &[&SemanticGraph], trees: &[&SyntacticTree]) -> Vocabularies {
    let sentences: Vec<&[Token]> = graphs
        .iter()
        .map(|g| g.tokens())
        .chain(trees.iter().map(|t| t.tokens()))
        .collect();
    Vocabularies::build(&sentences, graphs, trees)
}

fn sentence(tokens: &[Token]) -> Sentence {
    Sentence::new(tokens.to_vec())
}

fn parse_all(model: &Model, graphs: &[SemanticGraph]) -> Vec<SemanticGraph> {
    graphs
        .iter()
        .map(|g| model.parse_semantic(&sentence(g.tokens())).unwrap())
        .collect()
}

fn corpus(sentences: usize, seed: u64) -> SynthCorpus {
    synth_corpus(&SynthConfig {
        sentence_count: sentences,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

// ---------------------------------------------------------------- 1

fn primitive(
    seed: u64,
    shapes: &[(usize, usize)],
    build: impl Fn(&mut Tape<'_>, &[Var]) -> Result<Var, AutodiffError>,
) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(k, &(r, c))| store.add(format!("p{k}"), random(&mut rng, r, c), true).unwrap())
        .collect();
    let probe = random(&mut rng, 8, 8);
    let report = gradient_check(
        &mut store,
        &ids,
        |tape| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
            let out = build(tape, &vars)?;
            let (r, c) = tape.value(out).shape();
            let w = Tensor::new(r, c, (0..r * c).map(|k| probe.data()[k % 64]).collect())?;
            let weighted = tape.mask_mul(out, w)?;
            tape.sum(weighted)
        },
        1e-5,
        1e-7,
    )
    .map_err(|e| e.to_string())?;
    Ok(report.max_rel_error)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst_primitive: f64 = 0.0;
    for seed in 0..4u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let targets = Tensor::new(3, 4, (0..12).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect()).unwrap();
        let weights = Tensor::new(3, 4, (0..12).map(|_| [0.0, 0.5, 1.0][rng.gen_range(0..3)]).collect()).unwrap();
        let mask = random(&mut rng, 3, 4);
        let gold = [1usize, 3, 0];
        let row_w = [1.0, 0.5, 2.0];
        let mut allowed = Tensor::filled(3, 4, 1.0);
        allowed.set(0, 2, 0.0);
        let checks: Vec<(&[(usize, usize)], Build)> = vec![
            (&[(3, 5), (5, 4)], Box::new(|t, v| t.matmul(v[0], v[1]))),
            (&[(3, 4), (3, 4)], Box::new(|t, v| t.add(v[0], v[1]))),
            (&[(3, 4), (3, 4)], Box::new(|t, v| t.sub(v[0], v[1]))),
            (&[(3, 4), (3, 4)], Box::new(|t, v| t.mul(v[0], v[1]))),
            (&[(3, 4), (1, 4)], Box::new(|t, v| t.add_row(v[0], v[1]))),
            (&[(3, 4)], Box::new(|t, v| t.scale(v[0], -2.5))),
            (&[(3, 4)], Box::new(move |t, v| t.mask_mul(v[0], mask.clone()))),
            (
                &[(3, 4)],
                Box::new(move |t, v| t.dropout(v[0], 0.3, &mut ChaCha8Rng::seed_from_u64(seed))),
            ),
            (&[(3, 4), (3, 2)], Box::new(|t, v| t.concat_cols(&[v[0], v[1], v[0]]))),
            (&[(3, 4), (2, 4)], Box::new(|t, v| t.concat_rows(&[v[1], v[0]]))),
            (&[(4, 3)], Box::new(|t, v| t.slice_rows(v[0], 1, 3))),
            (&[(4, 3)], Box::new(|t, v| t.slice_cols(v[0], 0, 2))),
            (&[(3, 4)], Box::new(|t, v| t.transpose(v[0]))),
            (&[(3, 4)], Box::new(|t, v| t.sigmoid(v[0]))),
            (&[(3, 4)], Box::new(|t, v| t.tanh(v[0]))),
            (&[(3, 4)], Box::new(|t, v| t.softmax_rows(v[0]))),
            (&[(5, 3)], Box::new(|t, v| t.gather(v[0], &[4, 0, 4, 2]))),
            (
                &[(5, 3)],
                Box::new(|t, v| {
                    let h = t.tanh(v[0])?;
                    t.gather(h, &[4, 0, 4, 2])
                }),
            ),
            (&[(3, 4), (4, 5), (2, 5)], Box::new(|t, v| t.bilinear(v[0], v[1], v[2]))),
            (&[(3, 4), (4, 10), (3, 5)], Box::new(|t, v| t.label_bilinear(v[0], v[1], v[2]))),
            (&[(3, 4)], Box::new(|t, v| t.sum(v[0]))),
            (&[(3, 4)], Box::new(|t, v| t.mean(v[0]))),
            (&[(3, 4)], Box::new(move |t, v| t.sigmoid_xent(v[0], &targets, &weights))),
            (&[(3, 4)], Box::new(move |t, v| t.softmax_xent(v[0], &gold, &row_w, None))),
            (
                &[(3, 4)],
                Box::new(move |t, v| t.softmax_xent(v[0], &gold, &row_w, Some(&allowed))),
            ),
        ];
        for (k, (shapes, build)) in checks.iter().enumerate() {
            let err = primitive(seed * 100 + k as u64, shapes, build)?;
            ensure(err < 1e-7, || format!("primitive #{k} has relative error {err:e}"))?;
            worst_primitive = worst_primitive.max(err);
        }
    }
    let topology = SharingTopology {
        shared_rnn: true,
        task_rnn: true,
        shared_fnn: false,
    };
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for (dim, topology) in [(8, topology), (8, SharingTopology::default()), (4, SharingTopology { shared_fnn: true, ..topology })] {
        let report = end_to_end_gradient_check(uniform_network(dim), topology, 4, 3, 1e-5, 1e-4).map_err(|e| e.to_string())?;
        ensure(report.passed(), || format!("end-to-end check failed: {report:?}"))?;
        worst = worst.max(report.max_rel_error);
        coordinates += report.coordinates;
    }
    within(start, Duration::from_secs(60), "gradient checks")?;
    Ok(format!(
        "end-to-end max rel error {worst:.2e} over {coordinates} coordinates (< 1e-4); primitives {worst_primitive:.2e} (< 1e-7); {:.1?}",
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- 2

/// Rewrites the target at every undecided cell: flips edge indicators and
/// adds labels there, all at weight zero.
fn scramble_undecided(target: &SemanticTarget, labels: usize, rng: &mut ChaCha8Rng) -> (SemanticTarget, usize) {
    let mut noisy = target.clone();
    let mut changed = 0;
    let (rows, n) = noisy.edge_target.shape();
    for i in 0..rows {
        for j in 1..=n {
            if noisy.edge_weight.get(i, j - 1) != 0.0 {
                continue;
            }
            let flipped = 1.0 - noisy.edge_target.get(i, j - 1);
            noisy.edge_target.set(i, j - 1, flipped);
            changed += 1;
            if i != 0 && i != j {
                noisy.labels.push(LabelTarget {
                    head: i,
                    dep: j,
                    label: rng.gen_range(0..labels),
                    weight: 0.0,
                });
            }
        }
    }
    (noisy, changed)
}

fn masking_soundness() -> Outcome {
    let c = corpus(24, 11);
    let projected = c.project().unwrap();
    let graphs: Vec<&SemanticGraph> = c.gold.iter().collect();
    let mut clean_model = Model::new(NetworkConfig::toy(), SharingTopology::default(), vec![Task::Semantic], vocab(&graphs, &[]), None, 5)
        .map_err(|e| e.to_string())?;
    let labels = clean_model.labels(Task::Semantic).len();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    let mut changed = 0;
    for p in &projected {
        let target = SemanticTarget::from_partial(p, clean_model.labels(Task::Semantic)).map_err(|e| e.to_string())?;
        let (scrambled, k) = scramble_undecided(&target, labels, &mut rng);
        changed += k;
        let s = sentence(p.graph().tokens());
        clean.push(SemanticExample::from_target(&clean_model, s.clone(), target));
        noisy.push(SemanticExample::from_target(&clean_model, s, scrambled));
    }
    ensure(changed > 0, || "corpus has no undecided cells".into())?;
    let mut noisy_model = clean_model.clone();
    let adam = Adam::new(0.002);
    for step in 0..10 {
        let idx: Vec<usize> = (0..4).map(|k| (step * 4 + k) % clean.len()).collect();
        let key = StepKey { seed: 3, epoch: 1, batch: step };
        let a: Vec<&SemanticExample> = idx.iter().map(|&i| &clean[i]).collect();
        let b: Vec<&SemanticExample> = idx.iter().map(|&i| &noisy[i]).collect();
        let (la, ga) = semantic_gradients(&clean_model, &a, 0.5, key).map_err(|e| e.to_string())?;
        let (lb, gb) = semantic_gradients(&noisy_model, &b, 0.5, key).map_err(|e| e.to_string())?;
        ensure(la.to_bits() == lb.to_bits(), || format!("step {step}: loss {la} vs {lb}"))?;
        clean_model.store_mut().accumulate(&ga, 1.0);
        noisy_model.store_mut().accumulate(&gb, 1.0);
        adam.step(clean_model.store_mut());
        adam.step(noisy_model.store_mut());
        for id in clean_model.store().ids() {
            let (x, y) = (clean_model.store().value(id), noisy_model.store().value(id));
            let same = x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits());
            ensure(same, || format!("step {step}: parameter {} differs", clean_model.store().param(id).name()))?;
        }
    }
    Ok(format!("10 Adam steps bit-identical with {changed} undecided cells rewritten"))
}

// ---------------------------------------------------------------- 3

fn random_tokens(rng: &mut ChaCha8Rng, n: usize) -> Vec<Token> {
    (1..=n).map(|k| Token::new(k, format!("w{}", rng.gen_range(0..30)), "_", "X")).collect()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> SemanticGraph {
    let labels = ["A", "B", "C"];
    let mut edges = Vec::new();
    for h in 0..=n {
        for d in 1..=n {
            if h != d && rng.gen_bool(0.2) {
                let label = if h == 0 { TOP_LABEL } else { labels[rng.gen_range(0..3)] };
                edges.push((h, d, label));
            }
        }
    }
    SemanticGraph::from_edges(random_tokens(rng, n), edges).unwrap()
}

fn random_links(rng: &mut ChaCha8Rng, m: usize, n: usize, p: f64) -> BTreeSet<(usize, usize)> {
    let mut links = BTreeSet::new();
    for s in 1..=m {
        for t in 1..=n {
            if rng.gen_bool(p) {
                links.insert((s, t));
            }
        }
    }
    links
}

fn projection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut decided_total = 0;
    let mut edges_total = 0;
    for instance in 0..1000 {
        let (m, n) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let source = random_graph(&mut rng, m);
        let target = random_tokens(&mut rng, n);
        // a partial matching both runs mostly agree on, plus noise links
        let mut targets: Vec<usize> = (1..=n).collect();
        targets.shuffle(&mut rng);
        let matching: Vec<(usize, usize)> = (1..=m).zip(targets).filter(|_| rng.gen_bool(0.8)).collect();
        let p = rng.gen_range(0.0..0.15);
        let mut forward = random_links(&mut rng, m, n, p);
        let mut backward = random_links(&mut rng, m, n, p);
        for &link in &matching {
            if rng.gen_bool(0.9) {
                forward.insert(link);
            }
            if rng.gen_bool(0.9) {
                backward.insert(link);
            }
        }

        // oracle: a link survives iff it is in both runs and no other
        // surviving candidate shares its source or target
        let both: Vec<(usize, usize)> = forward.intersection(&backward).copied().collect();
        let kept: Vec<(usize, usize)> = both
            .iter()
            .copied()
            .filter(|&(s, t)| both.iter().filter(|&&(s2, t2)| s2 == s || t2 == t).count() == 1)
            .collect();
        let alignment = intersect_alignments(&forward, &backward, m);
        let links: Vec<(usize, usize)> = alignment.links().collect();
        ensure(links == kept, || format!("instance {instance}: intersection {links:?}, oracle {kept:?}"))?;

        let map = |s: usize| -> Option<usize> {
            if s == 0 {
                Some(0)
            } else {
                kept.iter().find(|&&(x, _)| x == s).map(|&(_, t)| t)
            }
        };
        let result = project_graph(&source, &alignment, &target).map_err(|e| format!("instance {instance}: {e}"))?;
        ensure(result.graph().tokens() == target.as_slice(), || format!("instance {instance}: tokens differ"))?;
        for h in 0..=n {
            for d in 1..=n {
                let aligned = |t: usize| t == 0 || kept.iter().any(|&(_, x)| x == t);
                let decided = aligned(h) && aligned(d);
                let mut label = None;
                for hs in 0..=m {
                    for ds in 1..=m {
                        if map(hs) == Some(h) && map(ds) == Some(d) {
                            if let Some(l) = source.label(hs, ds) {
                                label = Some(l);
                            }
                        }
                    }
                }
                ensure(result.is_decided(h, d) == decided, || format!("instance {instance}: cell ({h},{d}) decided"))?;
                ensure(result.graph().label(h, d) == label, || {
                    format!("instance {instance}: cell ({h},{d}) label {:?}, oracle {label:?}", result.graph().label(h, d))
                })?;
                decided_total += usize::from(decided);
                edges_total += usize::from(label.is_some());
            }
        }
    }
    Ok(format!("1000 instances match; {decided_total} decided cells, {edges_total} projected edges"))
}

// ---------------------------------------------------------------- 4

fn f1(correct: usize, predicted: usize, gold: usize) -> f64 {
    let p = if predicted == 0 { 0.0 } else { correct as f64 / predicted as f64 };
    let r = if gold == 0 { 0.0 } else { correct as f64 / gold as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn brute_force_scores(predicted: &[SemanticGraph], gold: &[SemanticGraph]) -> (f64, f64) {
    let (mut lc, mut uc, mut np, mut ng) = (0, 0, 0, 0);
    for (k, (p, g)) in predicted.iter().zip(gold).enumerate() {
        let pl: BTreeSet<(usize, usize, usize, String)> = p.edges().map(|(h, d, l)| (k, h, d, l.to_string())).collect();
        let gl: BTreeSet<(usize, usize, usize, String)> = g.edges().map(|(h, d, l)| (k, h, d, l.to_string())).collect();
        let pu: BTreeSet<(usize, usize)> = pl.iter().map(|e| (e.1, e.2)).collect();
        let gu: BTreeSet<(usize, usize)> = gl.iter().map(|e| (e.1, e.2)).collect();
        lc += pl.intersection(&gl).count();
        uc += pu.intersection(&gu).count();
        np += pl.len();
        ng += gl.len();
    }
    (f1(lc, np, ng), f1(uc, np, ng))
}

fn scorer_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..500 {
        let sentences = rng.gen_range(1..6);
        let mut gold = Vec::new();
        let mut predicted = Vec::new();
        for _ in 0..sentences {
            let n = rng.gen_range(1..9);
            let g = random_graph(&mut rng, n);
            let p = random_graph(&mut rng, n);
            let tokens = g.tokens().to_vec();
            // half the time the prediction copies and perturbs the gold
            let p = if rng.gen_bool(0.5) {
                let mut edges: Vec<(usize, usize, String)> = Vec::new();
                for (h, d, l) in g.edges() {
                    if rng.gen_bool(0.8) {
                        let l = if h != 0 && rng.gen_bool(0.3) { "B".to_string() } else { l.to_string() };
                        edges.push((h, d, l));
                    }
                }
                SemanticGraph::from_edges(tokens.clone(), edges).unwrap()
            } else {
                SemanticGraph::from_edges(tokens.clone(), p.edges().map(|(h, d, l)| (h, d, l.to_string()))).unwrap()
            };
            gold.push(g);
            predicted.push(p);
        }
        let report = score_graphs(&predicted, &gold).map_err(|e| e.to_string())?;
        let (lf, uf) = brute_force_scores(&predicted, &gold);
        ensure(report.lf() == lf && report.uf() == uf, || {
            format!("trial {trial}: LF {} UF {} vs oracle {lf} {uf}", report.lf(), report.uf())
        })?;
    }
    let tokens = random_tokens(&mut rng, 3);
    let gold = SemanticGraph::from_edges(tokens.clone(), [(1, 2, "A"), (2, 3, "B")]).unwrap();
    let pred = SemanticGraph::from_edges(tokens, [(1, 2, "A"), (2, 3, "C")]).unwrap();
    let report = score_graphs(&[pred], &[gold]).map_err(|e| e.to_string())?;
    ensure(report.lf() == 0.5 && report.uf() == 1.0, || {
        format!("hand case gave LF {} UF {}", report.lf(), report.uf())
    })?;
    Ok("500 random corpora match the set scorer; 1-of-2 labeled case gives LF 0.5, UF 1.0".into())
}

// ---------------------------------------------------------------- 5

fn memorization() -> Outcome {
    let start = Instant::now();
    let c = corpus(20, 3);
    let graphs: Vec<&SemanticGraph> = c.gold.iter().collect();
    let mut model = Model::new(NetworkConfig::toy(), SharingTopology::default(), vec![Task::Semantic], vocab(&graphs, &[]), None, 1)
        .map_err(|e| e.to_string())?;
    let full: Vec<PartialGraph> = c.gold.iter().cloned().map(PartialGraph::full).collect();
    let examples: Vec<SemanticExample> = full
        .iter()
        .map(|g| SemanticExample::new(&model, sentence(g.graph().tokens()), g))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let heldout: Vec<HeldoutExample> = full
        .iter()
        .map(|g| HeldoutExample::new(&model, sentence(g.graph().tokens()), g.clone()))
        .collect();
    let cfg = TrainConfig {
        lr: 0.002,
        token_budget: 40,
        max_epochs: 500,
        patience: 500,
        seed: 1,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &examples, &[], &heldout, &cfg).map_err(|e| e.to_string())?;
    let lf = score_graphs(&parse_all(&model, &c.gold), &c.gold).map_err(|e| e.to_string())?.lf();
    ensure(lf >= 0.99, || format!("train LF {lf:.4} after {} epochs", report.epochs.len()))?;
    within(start, Duration::from_secs(300), "memorization")?;
    Ok(format!(
        "train LF {lf:.4} (best epoch {}, {} epochs run) in {:.1?}",
        report.best_epoch,
        report.epochs.len(),
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- 6

fn multitask_run(c: &SynthCorpus, projected: &[PartialGraph], multitask: bool, seed: u64) -> Result<f64, String> {
    let train_graphs: Vec<&SemanticGraph> = projected[..270].iter().map(PartialGraph::graph).collect();
    let trees: Vec<&SyntacticTree> = if multitask { c.syntax[..300].iter().collect() } else { Vec::new() };
    let (topology, tasks) = if multitask {
        (
            SharingTopology {
                shared_rnn: true,
                ..SharingTopology::default()
            },
            vec![Task::Semantic, Task::Syntactic],
        )
    } else {
        (SharingTopology::default(), vec![Task::Semantic])
    };
    let mut model = Model::new(NetworkConfig::toy(), topology, tasks, vocab(&train_graphs, &trees), None, seed)
        .map_err(|e| e.to_string())?;
    let sem: Vec<SemanticExample> = projected[..270]
        .iter()
        .map(|g| SemanticExample::new(&model, sentence(g.graph().tokens()), g))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let syn: Vec<SyntacticExample> = trees
        .iter()
        .map(|t| SyntacticExample::new(&model, sentence(t.tokens()), t))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let heldout: Vec<HeldoutExample> = projected[270..300]
        .iter()
        .map(|g| HeldoutExample::new(&model, sentence(g.graph().tokens()), g.clone()))
        .collect();
    let cfg = TrainConfig {
        token_budget: 100,
        max_epochs: 40,
        patience: 10,
        seed,
        ..TrainConfig::default()
    };
    train(&mut model, &sem, &syn, &heldout, &cfg).map_err(|e| e.to_string())?;
    let test = &c.gold[300..400];
    Ok(score_graphs(&parse_all(&model, test), test).map_err(|e| e.to_string())?.lf())
}

fn multitask_direction() -> Outcome {
    let start = Instant::now();
    let mut diffs = Vec::new();
    let mut lines = Vec::new();
    let mut densities = Vec::new();
    for seed in 1..=5u64 {
        let c = synth_corpus(&SynthConfig {
            sentence_count: 400,
            syntactic_agreement: 0.8,
            alignment_density: 0.8,
            seed,
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let projected = c.project().map_err(|e| e.to_string())?;
        densities.extend(projected[..300].iter().map(PartialGraph::density));
        let single = multitask_run(&c, &projected, false, seed)?;
        let multi = multitask_run(&c, &projected, true, seed)?;
        println!("    seed {seed}: single-task LF {single:.4}, shared-RNN multitask LF {multi:.4}");
        diffs.push(multi - single);
        lines.push(format!("{:+.4}", multi - single));
    }
    densities.sort_by(f64::total_cmp);
    let median = densities[densities.len() / 2];
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    ensure(mean > 0.0, || format!("mean LF difference {mean:+.4} ({})", lines.join(", ")))?;
    within(start, Duration::from_secs(1800), "multitask comparison")?;
    Ok(format!(
        "mean LF gain {mean:+.4} over 5 seeds ({}); median density {median:.3}; {:.1?}",
        lines.join(", "),
        start.elapsed()
    ))
}

// ---------------------------------------------------------------- 7

fn semantic_outputs(model: &Model, graphs: &[SemanticGraph]) -> Vec<Vec<u64>> {
    graphs
        .iter()
        .map(|g| {
            let enc = model.encode_sentence(&sentence(g.tokens()));
            let mut tape = Tape::new(model.store());
            let s = model.forward(&mut tape, &enc, Task::Semantic, Mode::Eval).unwrap();
            [s.edge, s.label_dep, s.label_head, s.label_w]
                .iter()
                .flat_map(|&v| tape.value(v).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
                .collect()
        })
        .collect()
}

fn sharing_semantics() -> Outcome {
    let c = corpus(12, 21);
    let graphs: Vec<&SemanticGraph> = c.gold.iter().collect();
    let trees: Vec<&SyntacticTree> = c.syntax.iter().collect();
    let mut report = Vec::new();
    for shared in [true, false] {
        let topology = SharingTopology {
            shared_rnn: shared,
            ..SharingTopology::default()
        };
        let mut model = Model::new(NetworkConfig::toy(), topology, vec![Task::Semantic, Task::Syntactic], vocab(&graphs, &trees), None, 4)
            .map_err(|e| e.to_string())?;
        let before = semantic_outputs(&model, &c.gold);
        let syn: Vec<SyntacticExample> = c
            .syntax
            .iter()
            .map(|t| SyntacticExample::new(&model, sentence(t.tokens()), t))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let batch: Vec<&SyntacticExample> = syn.iter().collect();
        let (_, mut grads) = syntactic_gradients(&model, &batch, 0.5, StepKey { seed: 1, epoch: 1, batch: 0 })
            .map_err(|e| e.to_string())?;
        // the embedding layer is shared under every topology
        let embeddings: BTreeSet<ParamId> = model.embedding_params().iter().copied().collect();
        grads.retain(|id| !embeddings.contains(&id));
        ensure(!grads.is_empty(), || "syntactic step produced no gradients".into())?;
        model.store_mut().accumulate(&grads, 1.0);
        Adam::new(0.01).step(model.store_mut());
        let after = semantic_outputs(&model, &c.gold);
        if shared {
            ensure(before != after, || "shared RNN: semantic outputs unchanged by a syntactic step".into())?;
            report.push("shared RNN changes semantic outputs");
        } else {
            ensure(before == after, || "no sharing: semantic outputs changed by a syntactic step".into())?;
            report.push("no sharing leaves them bit-identical");
        }
    }
    Ok(report.join("; "))
}

// ---------------------------------------------------------------- 8

fn arb_tokens(n: usize) -> impl Strategy<Value = Vec<Token>> {
    proptest::collection::vec(
        ("[a-zřč]{1,6}", "[A-Z]{1,4}", prop_oneof![Just(String::new()), "f[0-9]"]),
        n,
    )
    .prop_map(|fields| {
        fields
            .into_iter()
            .enumerate()
            .map(|(k, (form, pos, frame))| {
                let mut t = Token::new(k + 1, form.clone(), form.to_uppercase(), pos);
                t.frame = frame;
                t
            })
            .collect()
    })
}

fn arb_entry() -> impl Strategy<Value = SdpEntry> {
    (1usize..=15).prop_flat_map(|n| {
        (
            arb_tokens(n),
            proptest::collection::vec((0..=n, 1..=n, "[A-Z]{1,3}(-arg)?"), 0..2 * n),
            proptest::option::of(proptest::collection::btree_set(1..=n, 0..=n)),
        )
            .prop_map(|(tokens, raw, aligned)| {
                let mut seen = BTreeSet::new();
                let edges: Vec<(usize, usize, String)> = raw
                    .into_iter()
                    .filter(|(h, d, _)| h != d)
                    .filter(|(h, d, _)| {
                        aligned
                            .as_ref()
                            .is_none_or(|a| (*h == 0 || a.contains(h)) && a.contains(d))
                    })
                    .filter(|(h, d, _)| seen.insert((*h, *d)))
                    .map(|(h, d, l)| (h, d, if h == 0 { TOP_LABEL.to_string() } else { l }))
                    .collect();
                let graph = SemanticGraph::from_edges(tokens, edges).unwrap();
                match aligned {
                    None => SdpEntry::Full(graph),
                    Some(a) => SdpEntry::Partial(PartialGraph::new(graph, a).unwrap()),
                }
            })
    })
}

fn arb_document() -> impl Strategy<Value = SdpDocument> {
    proptest::collection::vec(arb_entry(), 0..6).prop_map(|entries| SdpDocument {
        sentences: entries
            .into_iter()
            .enumerate()
            .map(|(k, entry)| SdpSentence {
                id: format!("2{k:07}"),
                entry,
            })
            .collect(),
    })
}

fn arb_tree() -> impl Strategy<Value = SyntacticTree> {
    (1usize..=15).prop_flat_map(|n| {
        (
            arb_tokens(n),
            proptest::collection::vec(0..n, n),
            proptest::collection::vec("[a-z]{2,6}(:[a-z]+)?", n),
            proptest::collection::vec(" [a-z =]{0,12}", 0..3),
        )
            .prop_map(move |(tokens, parents, rels, comments)| {
                let heads = (0..n).map(|k| if k == 0 { 0 } else { parents[k] % k + 1 }).collect();
                let tokens = tokens
                    .into_iter()
                    .map(|mut t| {
                        t.frame.clear();
                        t
                    })
                    .collect();
                SyntacticTree::new(tokens, heads, rels)
                    .unwrap()
                    .with_comments(comments)
            })
    })
}

fn arb_alignments() -> impl Strategy<Value = AlignmentFile> {
    proptest::collection::vec(proptest::collection::btree_set((1usize..=30, 1usize..=30), 0..20), 0..8)
        .prop_map(|sentences| AlignmentFile { sentences })
}

fn round_trip<T: std::fmt::Debug + PartialEq>(
    name: &str,
    strategy: impl Strategy<Value = T>,
    write: impl Fn(&T, &mut Vec<u8>),
    read: impl Fn(&[u8]) -> T,
) -> Result<(), String> {
    let config = ProptestConfig {
        cases: 200,
        failure_persistence: None,
        ..ProptestConfig::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner
        .run(&strategy, |doc| {
            let mut first = Vec::new();
            write(&doc, &mut first);
            let back = read(&first);
            prop_assert_eq!(&back, &doc);
            let mut second = Vec::new();
            write(&back, &mut second);
            prop_assert_eq!(first, second);
            Ok(())
        })
        .map_err(|e| format!("{name}: {e}"))
}

fn round_trip_io() -> Outcome {
    round_trip(
        "SDP",
        arb_document(),
        |d, out| write_sdp(d, out).unwrap(),
        |bytes| read_sdp(bytes).unwrap(),
    )?;
    round_trip(
        "CoNLL-U",
        proptest::collection::vec(arb_tree(), 0..6),
        |t, out| write_conllu(t, out).unwrap(),
        |bytes| read_conllu(bytes).unwrap(),
    )?;
    round_trip(
        "alignments",
        arb_alignments(),
        |a, out| write_alignments(a, out).unwrap(),
        |bytes| read_alignments(bytes).unwrap(),
    )?;
    Ok("200 random documents each of SDP, CoNLL-U and alignments round-trip byte-exactly".into())
}

// ---------------------------------------------------------------- 9

fn density_sampler() -> Outcome {
    let c = synth_corpus(&SynthConfig {
        sentence_count: 3000,
        seed: 9,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let projected = c.project().map_err(|e| e.to_string())?;
    let sample = density_sample(&projected, 1000, 0.8, 5).map_err(|e| e.to_string())?;
    let below = sample.iter().filter(|g| g.density() < 0.8).count();
    let above = sample.iter().filter(|g| g.density() >= 0.8).count();
    ensure(sample.len() == 1000 && below == 500 && above == 500, || {
        format!("{} sampled, {below} below and {above} at or above 0.8", sample.len())
    })?;
    Ok(format!("k=1000 from {} sentences: {below} below 0.8, {above} at or above", projected.len()))
}

// ---------------------------------------------------------------- 10

const PIPELINE_CONFIG: &str = "\
seed = 13

[network]
d_w = 32
d_t = 32
d_char = 32
d_h = 64
d_fnn = 64

[train]
token_budget = 100
max_epochs = 12
patience = 12
";

fn xsdp(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_xsdp"))
        .current_dir(dir)
        .args(args)
        .env_remove("XSDP_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("xsdp {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn pipeline(dir: &Path) -> Result<BTreeMap<String, String>, String> {
    std::fs::write(dir.join("pipeline.toml"), PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    let c = ["--config", "pipeline.toml"];
    let run = |args: &[&str]| xsdp(dir, &[&c[..], args].concat());
    run(&["synth", "-o", ".", "--sentences", "150"])?;
    run(&["intersect", "--forward", "forward.align", "--backward", "backward.align", "-o", "inter.align"])?;
    run(&["project", "--source", "source.sdp", "--alignment", "inter.align", "--target", "target.conllu", "-o", "projected.sdp"])?;
    run(&["train", "--train", "projected.sdp", "--syntax", "target.conllu", "--tasks", "sem,syn", "--share", "rnn", "-m", "model.bin"])?;
    run(&["parse", "-m", "model.bin", "-i", "gold.sdp", "-o", "pred.sdp"])?;
    let report = run(&["score", "-p", "pred.sdp", "-g", "gold.sdp"])?;
    Ok(report
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    let lf = first.get("LF").cloned().ok_or("score report has no LF")?;
    ensure(first == second, || format!("reports differ: {first:?} vs {second:?}"))?;
    ensure(lf.parse::<f64>().is_ok_and(|v| v > 0.0), || format!("LF {lf} leaves the comparison trivial"))?;
    for file in ["projected.sdp", "model.bin", "pred.sdp"] {
        let x = std::fs::read(a.path().join(file)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.path().join(file)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{file} differs between runs"))?;
    }
    Ok(format!("two synth-project-train-parse-score runs give LF {lf} and identical files"))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient_correctness", gradient_correctness),
        ("masking_soundness", masking_soundness),
        ("projection_oracle", projection_oracle),
        ("scorer_oracle", scorer_oracle),
        ("memorization", memorization),
        ("multitask_direction", multitask_direction),
        ("sharing_semantics", sharing_semantics),
        ("round_trip_io", round_trip_io),
        ("density_sampler", density_sampler),
        ("determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, criterion) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(criterion).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{:.1?}]", start.elapsed()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{:.1?}]", start.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
