use rand::Rng;
use rand_chacha::ChaCha8Rng;
use xsdp_autodiff::{Tape, Tensor, Var};

use crate::model::{BiLstm, Fnn, Lstm, Model, Task};
use crate::vocab::EncodedSentence;
use crate::ParserError;

/// Evaluation runs without dropout; training draws every mask from the
/// given generator.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    fn dropout(&mut self, tape: &mut Tape<'_>, x: Var, p: f64) -> Result<Var, ParserError> {
        match self {
            Mode::Eval => Ok(x),
            Mode::Train(rng) => Ok(tape.dropout(x, p, *rng)?),
        }
    }
}

/// Per-token word and POS dropout decisions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InputDrops {
    pub word: Vec<bool>,
    pub pos: Vec<bool>,
}

impl InputDrops {
    pub fn none(n: usize) -> InputDrops {
        InputDrops {
            word: vec![false; n],
            pos: vec![false; n],
        }
    }

    pub fn sample(n: usize, word_p: f64, pos_p: f64, rng: &mut impl Rng) -> InputDrops {
        let word = (0..n).map(|_| rng.gen::<f64>() < word_p).collect();
        let pos = (0..n).map(|_| rng.gen::<f64>() < pos_p).collect();
        InputDrops { word, pos }
    }
}

/// Scores of one task over one sentence, before label selection.
#[derive(Clone, Copy, Debug)]
pub struct TaskScores {
    /// `(n + 1) x n`: heads `0..=n` by dependents `1..=n`.
    pub edge: Var,
    /// Edge projections, `(n + 1)` rows each, and the edge bilinear form.
    pub edge_dep: Var,
    pub edge_head: Var,
    pub edge_w: Var,
    /// Label-dependent and label-head projections, `(n + 1)` rows each.
    pub label_dep: Var,
    pub label_head: Var,
    pub label_w: Var,
}

fn lstm_direction(
    tape: &mut Tape<'_>,
    p: &Lstm,
    x: Var,
    reverse: bool,
) -> Result<Vec<Var>, ParserError> {
    let n = tape.value(x).rows();
    let (w, u, b) = (tape.param(p.w), tape.param(p.u), tape.param(p.b));
    let xw = tape.matmul(x, w)?;
    let xw = tape.add_row(xw, b)?;
    let h = p.hidden;
    let mut outputs = vec![None; n];
    let mut state: Option<(Var, Var)> = None;
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        let mut z = tape.slice_rows(xw, t, t + 1)?;
        if let Some((h_prev, _)) = state {
            let hu = tape.matmul(h_prev, u)?;
            z = tape.add(z, hu)?;
        }
        let (hn, cn) = lstm_gates(tape, z, h, state.map(|s| s.1))?;
        outputs[t] = Some(hn);
        state = Some((hn, cn));
    }
    Ok(outputs.into_iter().map(|o| o.expect("every step ran")).collect())
}

/// Gate arithmetic on pre-activations `z` (`rows x 4h`, order i f g o).
fn lstm_gates(tape: &mut Tape<'_>, z: Var, h: usize, c_prev: Option<Var>) -> Result<(Var, Var), ParserError> {
    let sig = tape.sigmoid(z)?;
    let th = tape.tanh(z)?;
    let i = tape.slice_cols(sig, 0, h)?;
    let g = tape.slice_cols(th, 2 * h, 3 * h)?;
    let o = tape.slice_cols(sig, 3 * h, 4 * h)?;
    let mut c = tape.mul(i, g)?;
    if let Some(c_prev) = c_prev {
        let f = tape.slice_cols(sig, h, 2 * h)?;
        let kept = tape.mul(f, c_prev)?;
        c = tape.add(c, kept)?;
    }
    let tc = tape.tanh(c)?;
    let hn = tape.mul(o, tc)?;
    Ok((hn, c))
}

/// One BiLSTM layer over the rows of `x`.
fn bilstm(tape: &mut Tape<'_>, p: &BiLstm, x: Var) -> Result<Var, ParserError> {
    let fwd = lstm_direction(tape, &p.fwd, x, false)?;
    let bwd = lstm_direction(tape, &p.bwd, x, true)?;
    let fwd = tape.concat_rows(&fwd)?;
    let bwd = tape.concat_rows(&bwd)?;
    Ok(tape.concat_cols(&[fwd, bwd])?)
}

/// Final forward and backward states of a BiLSTM run over each word's
/// characters, all words in one batch. Shorter words keep their state once
/// their characters are consumed.
fn char_bilstm(tape: &mut Tape<'_>, model: &Model, words: &[Vec<usize>]) -> Result<Var, ParserError> {
    let p = &model.params;
    let table = tape.param(p.char_embed);
    let longest = words.iter().map(Vec::len).max().unwrap_or(0);
    let mut finals = Vec::with_capacity(2);
    for (dir, reverse) in [(&p.char_rnn.fwd, false), (&p.char_rnn.bwd, true)] {
        let (w, u, b) = (tape.param(dir.w), tape.param(dir.u), tape.param(dir.b));
        let h = dir.hidden;
        let zeros = tape.constant(Tensor::zeros(words.len(), h));
        let (mut hs, mut cs) = (zeros, zeros);
        for t in 0..longest {
            let ids: Vec<usize> = words
                .iter()
                .map(|cs| match cs.len().checked_sub(t + 1) {
                    None => 0,
                    Some(back) => cs[if reverse { back } else { t }],
                })
                .collect();
            let x = tape.gather(table, &ids)?;
            let xw = tape.matmul(x, w)?;
            let z = if t == 0 {
                tape.add_row(xw, b)?
            } else {
                let hu = tape.matmul(hs, u)?;
                let z = tape.add(xw, hu)?;
                tape.add_row(z, b)?
            };
            let (hn, cn) = lstm_gates(tape, z, h, (t > 0).then_some(cs))?;
            let active: Vec<bool> = words.iter().map(|cs| t < cs.len()).collect();
            if active.iter().all(|&a| a) {
                (hs, cs) = (hn, cn);
            } else {
                let mut mask = Tensor::zeros(words.len(), h);
                for (r, _) in active.iter().enumerate().filter(|(_, &a)| a) {
                    mask.row_slice_mut(r).fill(1.0);
                }
                hs = blend(tape, hs, hn, &mask)?;
                cs = blend(tape, cs, cn, &mask)?;
            }
        }
        finals.push(hs);
    }
    Ok(tape.concat_cols(&finals)?)
}

/// `old + mask * (new - old)`.
fn blend(tape: &mut Tape<'_>, old: Var, new: Var, mask: &Tensor) -> Result<Var, ParserError> {
    let diff = tape.sub(new, old)?;
    let moved = tape.mask_mul(diff, mask.clone())?;
    Ok(tape.add(old, moved)?)
}

fn fnn(tape: &mut Tape<'_>, p: &Fnn, x: Var) -> Result<Var, ParserError> {
    let (w, b) = (tape.param(p.w), tape.param(p.b));
    let xw = tape.matmul(x, w)?;
    let z = tape.add_row(xw, b)?;
    Ok(tape.tanh(z)?)
}

fn row_mask(rows: usize, cols: usize, keep: impl Fn(usize) -> bool) -> Tensor {
    let mut m = Tensor::zeros(rows, cols);
    for r in (0..rows).filter(|&r| keep(r)) {
        m.row_slice_mut(r).fill(1.0);
    }
    m
}

impl Model {
    /// Input vectors `x_i = [re + pe + char; pos; context]`, one row per
    /// token. A dropped word takes the unknown word embedding in place of the
    /// whole summed word vector; a dropped POS tag the unknown POS
    /// embedding.
    pub fn embed(&self, tape: &mut Tape<'_>, sentence: &EncodedSentence, drops: &InputDrops) -> Result<Var, ParserError> {
        let n = sentence.len();
        let cfg = self.network();
        if drops.word.len() != n || drops.pos.len() != n {
            return Err(ParserError::Config("dropout decisions do not match sentence length".into()));
        }
        let p = &self.params;
        let word_ids: Vec<usize> = (0..n).map(|k| if drops.word[k] { 0 } else { sentence.words[k] }).collect();
        let word_table = tape.param(p.word);
        let mut word = tape.gather(word_table, &word_ids)?;
        let kept = row_mask(n, cfg.d_w, |r| !drops.word[r]);
        let any_kept = drops.word.iter().any(|d| !d);
        if any_kept {
            let chars = char_bilstm(tape, self, &sentence.char_words)?;
            let mut extra = tape.gather(chars, &sentence.char_slot)?;
            if let Some(pre) = p.pretrained {
                let table = tape.param(pre);
                let pe = tape.gather(table, &sentence.pretrained)?;
                extra = tape.add(extra, pe)?;
            }
            let extra = tape.mask_mul(extra, kept)?;
            word = tape.add(word, extra)?;
        }
        let pos_ids: Vec<usize> = (0..n).map(|k| if drops.pos[k] { 0 } else { sentence.pos[k] }).collect();
        let pos_table = tape.param(p.pos);
        let pos = tape.gather(pos_table, &pos_ids)?;
        let mut parts = vec![word, pos];
        match (&sentence.context, cfg.context_dim) {
            (None, 0) => {}
            (Some(ctx), dim) if ctx.shape() == (n, dim) && dim > 0 => parts.push(tape.constant(ctx.clone())),
            (ctx, dim) => {
                return Err(ParserError::Context {
                    expected: (n, dim),
                    found: ctx.as_ref().map_or((n, 0), Tensor::shape),
                })
            }
        }
        Ok(tape.concat_cols(&parts)?)
    }

    /// Recurrent states `r_0..r_n` of `task`, row 0 being the dummy root.
    pub fn encode(&self, tape: &mut Tape<'_>, embedded: Var, task: Task, mode: &mut Mode<'_>) -> Result<Var, ParserError> {
        let tp = self.task_params(task)?;
        let root = tape.param(self.params.root);
        let mut x = tape.concat_rows(&[root, embedded])?;
        let p = self.network().recurrent_dropout;
        let layers = tp.rnn.iter().chain(tp.task_rnn.iter());
        for (k, layer) in layers.enumerate() {
            if k > 0 {
                x = mode.dropout(tape, x, p)?;
            }
            x = bilstm(tape, layer, x)?;
        }
        Ok(x)
    }

    /// Edge scores and label projections of `task` from recurrent states.
    pub fn score(&self, tape: &mut Tape<'_>, states: Var, task: Task, mode: &mut Mode<'_>) -> Result<TaskScores, ParserError> {
        let tp = self.task_params(task)?;
        let cfg = self.network();
        let rows = tape.value(states).rows();
        let ones = cfg.bilinear_bias.then(|| Tensor::filled(rows, 1, 1.0));
        let mut project = |tape: &mut Tape<'_>, f: &Fnn, p: f64| -> Result<Var, ParserError> {
            let h = fnn(tape, f, states)?;
            let h = mode.dropout(tape, h, p)?;
            Ok(match &ones {
                Some(ones) => {
                    let c = tape.constant(ones.clone());
                    tape.concat_cols(&[h, c])?
                }
                None => h,
            })
        };
        let edge_dep = project(tape, &tp.heads.edge_dep, cfg.edge_dropout)?;
        let edge_head = project(tape, &tp.heads.edge_head, cfg.edge_dropout)?;
        let label_dep = project(tape, &tp.heads.label_dep, cfg.label_dropout)?;
        let label_head = project(tape, &tp.heads.label_head, cfg.label_dropout)?;
        let w = tape.param(tp.edge_w);
        // dependent on the left: entry (dep, head)
        let by_dep = tape.bilinear(edge_dep, w, edge_head)?;
        let by_head = tape.transpose(by_dep)?;
        let edge = tape.slice_cols(by_head, 1, rows)?;
        Ok(TaskScores {
            edge,
            edge_dep,
            edge_head,
            edge_w: w,
            label_dep,
            label_head,
            label_w: tape.param(tp.label_w),
        })
    }

    /// Embeds, encodes and scores one sentence. Training mode samples word,
    /// POS and layer dropout from the generator.
    pub fn forward(&self, tape: &mut Tape<'_>, sentence: &EncodedSentence, task: Task, mut mode: Mode<'_>) -> Result<TaskScores, ParserError> {
        let cfg = self.network();
        let drops = match &mut mode {
            Mode::Eval => InputDrops::none(sentence.len()),
            Mode::Train(rng) => InputDrops::sample(sentence.len(), cfg.word_dropout, cfg.pos_dropout, *rng),
        };
        let x = self.embed(tape, sentence, &drops)?;
        let states = self.encode(tape, x, task, &mut mode)?;
        self.score(tape, states, task, &mut mode)
    }
}

/// Label scores `M x L` at the given `(head, dependent)` cells.
pub fn label_scores(tape: &mut Tape<'_>, scores: &TaskScores, cells: &[(usize, usize)]) -> Result<Var, ParserError> {
    let heads: Vec<usize> = cells.iter().map(|c| c.0).collect();
    let deps: Vec<usize> = cells.iter().map(|c| c.1).collect();
    let d = tape.gather(scores.label_dep, &deps)?;
    let h = tape.gather(scores.label_head, &heads)?;
    Ok(tape.label_bilinear(d, scores.label_w, h)?)
}

/// Full label score tensor: one `(n + 1) x n` matrix per label.
pub fn label_tensor(tape: &mut Tape<'_>, scores: &TaskScores) -> Result<Vec<Tensor>, ParserError> {
    let (rows, n) = tape.value(scores.edge).shape();
    let cells: Vec<(usize, usize)> = (0..rows).flat_map(|i| (1..=n).map(move |j| (i, j))).collect();
    let s = label_scores(tape, scores, &cells)?;
    let values = tape.value(s);
    let mut out = vec![Tensor::zeros(rows, n); values.cols()];
    for (m, &(i, j)) in cells.iter().enumerate() {
        for (l, t) in out.iter_mut().enumerate() {
            t.set(i, j - 1, values.get(m, l));
        }
    }
    Ok(out)
}
