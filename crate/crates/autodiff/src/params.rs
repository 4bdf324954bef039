use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use crate::{AutodiffError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named tensor with its gradient accumulator and Adam state.
#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
    step: u64,
    trainable: bool,
    touched: bool,
}

impl Parameter {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Adam steps applied so far.
    pub fn step(&self) -> u64 {
        self.step
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Frozen parameters take part in the forward
    /// pass but are never updated.
    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        trainable: bool,
    ) -> Result<ParamId, AutodiffError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        let (r, c) = value.shape();
        self.params.push(Parameter {
            name: name.clone(),
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            step: 0,
            trainable,
            touched: false,
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Adds `scale * grads` into the accumulators of trainable parameters.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (id, grad) in grads.iter() {
            let p = &mut self.params[id.0];
            if !p.trainable {
                continue;
            }
            p.touched = true;
            match grad {
                Grad::Dense(t) => p.grad.add_scaled(t, scale),
                Grad::Rows(rows) => {
                    for (&r, values) in rows {
                        for (g, &v) in p.grad.row_slice_mut(r).iter_mut().zip(values) {
                            *g += scale * v;
                        }
                    }
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
            p.touched = false;
        }
    }

    /// Copies every value, e.g. to remember the best checkpoint.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Tensor]) {
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value = v.clone();
        }
    }

    /// Writes all values as a name-keyed tensor file.
    ///
    /// Layout: `XSDPTNSR`, `u32` version, `u64` count, then per tensor a
    /// `u32` name length, UTF-8 name, `u64` rows, `u64` cols and the values
    /// as little-endian `f64`. All integers are little-endian.
    pub fn save(&self, mut writer: impl Write) -> Result<(), AutodiffError> {
        writer.write_all(TENSOR_MAGIC)?;
        writer.write_all(&TENSOR_VERSION.to_le_bytes())?;
        writer.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            writer.write_all(&(p.name.len() as u32).to_le_bytes())?;
            writer.write_all(p.name.as_bytes())?;
            writer.write_all(&(p.value.rows() as u64).to_le_bytes())?;
            writer.write_all(&(p.value.cols() as u64).to_le_bytes())?;
            for v in p.value.data() {
                writer.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads values by name. The file must hold exactly the registered
    /// parameters with matching shapes, in any order.
    pub fn load(&mut self, mut reader: impl Read) -> Result<(), AutodiffError> {
        let mut magic = [0u8; 8];
        reader.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(AutodiffError::Checkpoint("not a tensor file".into()));
        }
        let version = read_u32(&mut reader)?;
        if version != TENSOR_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported tensor file version {version}"
            )));
        }
        let count = read_u64(&mut reader)?;
        let mut loaded = BTreeMap::new();
        for _ in 0..count {
            let len = read_u32(&mut reader)? as usize;
            let mut name = vec![0u8; len];
            reader.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| AutodiffError::Checkpoint("tensor name is not UTF-8".into()))?;
            let rows = read_u64(&mut reader)? as usize;
            let cols = read_u64(&mut reader)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                reader.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            loaded.insert(name, Tensor::new(rows, cols, data)?);
        }
        for p in &self.params {
            match loaded.get(&p.name) {
                None => {
                    return Err(AutodiffError::Checkpoint(format!(
                        "parameter {} missing from file",
                        p.name
                    )))
                }
                Some(t) if t.shape() != p.value.shape() => {
                    return Err(AutodiffError::Checkpoint(format!(
                        "parameter {} has shape {:?} in file but {:?} in model",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = loaded.keys().find(|n| !self.by_name.contains_key(*n)) {
            return Err(AutodiffError::Checkpoint(format!(
                "file holds unknown parameter {extra}"
            )));
        }
        for p in &mut self.params {
            p.value = loaded.remove(&p.name).expect("checked above");
        }
        Ok(())
    }
}

const TENSOR_MAGIC: &[u8; 8] = b"XSDPTNSR";
const TENSOR_VERSION: u32 = 1;

fn read_u32(reader: &mut impl Read) -> Result<u32, AutodiffError> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(reader: &mut impl Read) -> Result<u64, AutodiffError> {
    let mut buf = [0u8; 8];
    reader.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Gradient of one parameter: dense, or a set of rows for embedding tables.
#[derive(Clone, Debug, PartialEq)]
pub enum Grad {
    Dense(Tensor),
    Rows(BTreeMap<usize, Vec<f64>>),
}

impl Grad {
    /// Dense view with the given shape.
    pub fn to_dense(&self, rows: usize, cols: usize) -> Tensor {
        match self {
            Grad::Dense(t) => t.clone(),
            Grad::Rows(map) => {
                let mut t = Tensor::zeros(rows, cols);
                for (&r, values) in map {
                    t.row_slice_mut(r).copy_from_slice(values);
                }
                t
            }
        }
    }
}

/// Parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<ParamId, Grad>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Grad> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Grad)> {
        self.grads.iter().map(|(&id, g)| (id, g))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        for (&id, grad) in &other.grads {
            match grad {
                Grad::Dense(t) => self.add_dense(id, t),
                Grad::Rows(rows) => {
                    for (&r, values) in rows {
                        self.add_row(id, r, values);
                    }
                }
            }
        }
    }

    /// Keeps only the gradients of parameters for which `keep` holds.
    pub fn retain(&mut self, mut keep: impl FnMut(ParamId) -> bool) {
        self.grads.retain(|&id, _| keep(id));
    }

    /// Dense gradient of `id`, zeros if the parameter was not reached.
    pub fn dense(&self, store: &ParamStore, id: ParamId) -> Tensor {
        let (r, c) = store.value(id).shape();
        self.grads
            .get(&id)
            .map_or_else(|| Tensor::zeros(r, c), |g| g.to_dense(r, c))
    }

    pub(crate) fn add_dense(&mut self, id: ParamId, grad: &Tensor) {
        match self.grads.get_mut(&id) {
            None => {
                self.grads.insert(id, Grad::Dense(grad.clone()));
            }
            Some(Grad::Dense(t)) => t.add_assign(grad),
            Some(Grad::Rows(rows)) => {
                let mut dense = grad.clone();
                for (&r, values) in rows.iter() {
                    for (d, &v) in dense.row_slice_mut(r).iter_mut().zip(values) {
                        *d += v;
                    }
                }
                self.grads.insert(id, Grad::Dense(dense));
            }
        }
    }

    pub(crate) fn add_row(&mut self, id: ParamId, row: usize, values: &[f64]) {
        let entry = self
            .grads
            .entry(id)
            .or_insert_with(|| Grad::Rows(BTreeMap::new()));
        match entry {
            Grad::Dense(t) => {
                for (d, &v) in t.row_slice_mut(row).iter_mut().zip(values) {
                    *d += v;
                }
            }
            Grad::Rows(rows) => {
                let slot = rows.entry(row).or_insert_with(|| vec![0.0; values.len()]);
                for (d, &v) in slot.iter_mut().zip(values) {
                    *d += v;
                }
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    /// Updates every trainable parameter that received a gradient since the
    /// last step, then clears all accumulators.
    pub fn step(&self, store: &mut ParamStore) {
        for p in &mut store.params {
            if !(p.trainable && p.touched) {
                continue;
            }
            p.step += 1;
            let t = p.step as f64;
            let c1 = 1.0 - self.beta1.powf(t);
            let c2 = 1.0 - self.beta2.powf(t);
            let values = p.value.data_mut();
            let (g, m, v) = (p.grad.data(), p.m.data_mut(), p.v.data_mut());
            for i in 0..values.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        store.zero_grad();
    }
}
