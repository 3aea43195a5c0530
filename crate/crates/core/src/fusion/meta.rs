//! Meta-classifiers for decision-level fusion.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Activation, DenseLayer, Param, Tensor};
use crate::signals::N_CLASSES;
use crate::training::{weighted_crossentropy, Adam, AdamConfig, ClassWeights};

pub type Dist = [f32; N_CLASSES];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaKind {
    MajorityVote,
    DenseNetwork,
    DecisionTree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaSpec {
    pub kind: MetaKind,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_depth")]
    pub max_depth: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
}

fn d_hidden() -> usize {
    16
}
fn d_depth() -> usize {
    8
}
fn d_epochs() -> usize {
    300
}

impl Default for MetaSpec {
    fn default() -> Self {
        Self { kind: MetaKind::DenseNetwork, hidden: d_hidden(), max_depth: d_depth(), epochs: d_epochs() }
    }
}

impl MetaSpec {
    pub fn param_count(&self, bases: usize) -> usize {
        match self.kind {
            MetaKind::DenseNetwork => {
                let i = bases * N_CLASSES;
                self.hidden * (i + 1) + N_CLASSES * (self.hidden + 1)
            }
            _ => 0,
        }
    }

    pub fn flops(&self, bases: usize) -> u64 {
        let i = bases * N_CLASSES;
        match self.kind {
            MetaKind::MajorityVote => (i + N_CLASSES) as u64,
            MetaKind::DenseNetwork => (2 * (i * self.hidden + self.hidden * N_CLASSES) + self.hidden + N_CLASSES) as u64,
            MetaKind::DecisionTree => self.max_depth as u64,
        }
    }
}

/// CART tree over concatenated base probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionTree {
    Leaf(Dist),
    Split { feature: usize, threshold: f32, left: Box<DecisionTree>, right: Box<DecisionTree> },
}

impl DecisionTree {
    pub fn predict(&self, x: &[f32]) -> Dist {
        match self {
            DecisionTree::Leaf(d) => *d,
            DecisionTree::Split { feature, threshold, left, right } => {
                if x[*feature] <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            DecisionTree::Leaf(_) => 1,
            DecisionTree::Split { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    fn fit(x: &[Vec<f32>], y: &[usize], w: &[f32], idx: &mut [usize], depth: usize) -> Self {
        let mut dist = [0.0f32; N_CLASSES];
        for &i in idx.iter() {
            dist[y[i]] += w[i];
        }
        let total: f32 = dist.iter().sum();
        let leaf = || {
            let mut d = dist;
            if total > 0.0 {
                d.iter_mut().for_each(|v| *v /= total);
            }
            DecisionTree::Leaf(d)
        };
        let gini = |d: &[f32; N_CLASSES], t: f32| if t > 0.0 { t - d.iter().map(|v| v * v).sum::<f32>() / t } else { 0.0 };
        let parent = gini(&dist, total);
        if depth == 0 || idx.len() < 10 || parent <= 1e-6 * total {
            return leaf();
        }
        let nf = x[0].len();
        let mut best: Option<(f32, usize, f32)> = None;
        for f in 0..nf {
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
            let mut left = [0.0f32; N_CLASSES];
            let mut lt = 0.0f32;
            for k in 1..idx.len() {
                let i = idx[k - 1];
                left[y[i]] += w[i];
                lt += w[i];
                let (a, b) = (x[i][f], x[idx[k]][f]);
                if a == b || k < 5 || idx.len() - k < 5 {
                    continue;
                }
                let mut right = dist;
                for c in 0..N_CLASSES {
                    right[c] -= left[c];
                }
                let score = gini(&left, lt) + gini(&right, total - lt);
                if best.is_none_or(|(s, _, _)| score < s) {
                    best = Some((score, f, 0.5 * (a + b)));
                }
            }
        }
        match best {
            Some((score, f, thr)) if score < parent - 1e-7 * total => {
                let mut l: Vec<usize> = idx.iter().copied().filter(|&i| x[i][f] <= thr).collect();
                let mut r: Vec<usize> = idx.iter().copied().filter(|&i| x[i][f] > thr).collect();
                DecisionTree::Split {
                    feature: f,
                    threshold: thr,
                    left: Box::new(Self::fit(x, y, w, &mut l, depth - 1)),
                    right: Box::new(Self::fit(x, y, w, &mut r, depth - 1)),
                }
            }
            _ => leaf(),
        }
    }
}

#[derive(Clone, Debug)]
pub enum MetaClassifier {
    MajorityVote,
    Dense { hidden: DenseLayer<f32>, out: DenseLayer<f32> },
    Tree(DecisionTree),
}

fn argmax(d: &[f32]) -> usize {
    let mut b = 0;
    for i in 1..d.len() {
        if d[i] > d[b] {
            b = i;
        }
    }
    b
}

fn concat_inputs(base: &[Vec<Dist>]) -> Result<Vec<Vec<f32>>> {
    let n = base.first().map(Vec::len).ok_or_else(|| Error::Invalid("no base outputs".into()))?;
    if base.iter().any(|b| b.len() != n) {
        return Err(shape_err!("base model outputs are on different window grids"));
    }
    Ok((0..n).map(|i| base.iter().flat_map(|b| b[i]).collect()).collect())
}

impl MetaClassifier {
    /// Fit on per-window base outputs (one Vec per base model) and targets.
    pub fn fit(spec: &MetaSpec, base: &[Vec<Dist>], targets: &[usize], weights: &ClassWeights, seed: u64) -> Result<Self> {
        let x = concat_inputs(base)?;
        if x.len() != targets.len() {
            return Err(shape_err!("{} windows but {} targets", x.len(), targets.len()));
        }
        match spec.kind {
            MetaKind::MajorityVote => Ok(MetaClassifier::MajorityVote),
            MetaKind::DecisionTree => {
                let w: Vec<f32> = targets.iter().map(|&t| weights.0[t] as f32).collect();
                let mut idx: Vec<usize> = (0..x.len()).collect();
                if idx.is_empty() {
                    return Err(Error::Invalid("no training windows for meta-classifier".into()));
                }
                Ok(MetaClassifier::Tree(DecisionTree::fit(&x, targets, &w, &mut idx, spec.max_depth)))
            }
            MetaKind::DenseNetwork => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let i = x.first().map_or(0, Vec::len);
                let mut hidden = DenseLayer::new("meta.hidden", i, spec.hidden, Activation::Relu, &mut rng);
                let mut out = DenseLayer::new("meta.out", spec.hidden, N_CLASSES, Activation::Softmax, &mut rng);
                let n = x.len();
                let xt = Tensor::new(&[n, i], x.concat())?;
                let mask = vec![true; n];
                let mut adam = Adam::new(AdamConfig { lr: 1e-2, ..AdamConfig::default() });
                for _ in 0..spec.epochs {
                    let h = hidden.forward(&xt)?;
                    let p = out.forward(&h)?;
                    let (_, g) = weighted_crossentropy(&p.clone().reshape(&[1, n, N_CLASSES])?, targets, &mask, weights)?;
                    let gh = out.backward(&g.reshape(&[n, N_CLASSES])?)?;
                    hidden.backward(&gh)?;
                    let mut ps: Vec<_> = hidden.params_mut().into_iter().collect();
                    ps.extend(out.params_mut());
                    adam.step(&mut ps)?;
                }
                hidden.clear_cache();
                out.clear_cache();
                Ok(MetaClassifier::Dense { hidden, out })
            }
        }
    }

    pub fn kind(&self) -> MetaKind {
        match self {
            MetaClassifier::MajorityVote => MetaKind::MajorityVote,
            MetaClassifier::Dense { .. } => MetaKind::DenseNetwork,
            MetaClassifier::Tree(_) => MetaKind::DecisionTree,
        }
    }
}

/// Plain-data form of a fitted meta-classifier, for storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MetaState {
    MajorityVote,
    DenseNetwork { inputs: usize, hidden: usize, w1: Vec<f32>, b1: Vec<f32>, w2: Vec<f32>, b2: Vec<f32> },
    DecisionTree { tree: DecisionTree },
}

impl MetaClassifier {
    pub fn state(&self) -> MetaState {
        match self {
            MetaClassifier::MajorityVote => MetaState::MajorityVote,
            MetaClassifier::Tree(t) => MetaState::DecisionTree { tree: t.clone() },
            MetaClassifier::Dense { hidden, out } => MetaState::DenseNetwork {
                inputs: hidden.input(),
                hidden: hidden.output(),
                w1: hidden.w.value.clone(),
                b1: hidden.b.value.clone(),
                w2: out.w.value.clone(),
                b2: out.b.value.clone(),
            },
        }
    }

    pub fn from_state(s: &MetaState) -> Result<Self> {
        Ok(match s {
            MetaState::MajorityVote => MetaClassifier::MajorityVote,
            MetaState::DecisionTree { tree } => MetaClassifier::Tree(tree.clone()),
            MetaState::DenseNetwork { inputs, hidden, w1, b1, w2, b2 } => {
                let p = |name: &str, shape: &[usize], v: &Vec<f32>| {
                    let mut q = Param::zeros(name, shape, true);
                    if v.len() != q.len() {
                        return Err(shape_err!("{name}: {} values for shape {shape:?}", v.len()));
                    }
                    q.value = v.clone();
                    Ok(q)
                };
                MetaClassifier::Dense {
                    hidden: DenseLayer::from_params(
                        p("meta.hidden.w", &[*hidden, *inputs], w1)?,
                        p("meta.hidden.b", &[*hidden], b1)?,
                        Activation::Relu,
                    )?,
                    out: DenseLayer::from_params(
                        p("meta.out.w", &[N_CLASSES, *hidden], w2)?,
                        p("meta.out.b", &[N_CLASSES], b2)?,
                        Activation::Softmax,
                    )?,
                }
            }
        })
    }
}

/// Combine aligned per-window base distributions into one distribution.
pub fn fuse_decisions(meta: &mut MetaClassifier, base: &[Vec<Dist>]) -> Result<Vec<Dist>> {
    match meta {
        MetaClassifier::MajorityVote => {
            let n = base.first().map(Vec::len).ok_or_else(|| Error::Invalid("no base outputs".into()))?;
            if base.iter().any(|b| b.len() != n) {
                return Err(shape_err!("base model outputs are on different window grids"));
            }
            Ok((0..n)
                .map(|i| {
                    let mut votes = [0.0f32; N_CLASSES];
                    for b in base {
                        votes[argmax(&b[i])] += 1.0;
                    }
                    // argmax keeps the first (earliest) class on ties
                    let mut d = [0.0; N_CLASSES];
                    d[argmax(&votes)] = 1.0;
                    d
                })
                .collect())
        }
        MetaClassifier::Tree(t) => Ok(concat_inputs(base)?.iter().map(|x| t.predict(x)).collect()),
        MetaClassifier::Dense { hidden, out } => {
            let x = concat_inputs(base)?;
            let n = x.len();
            let i = hidden.input();
            let h = hidden.forward(&Tensor::new(&[n, i], x.concat())?)?;
            let p = out.forward(&h)?;
            hidden.clear_cache();
            out.clear_cache();
            Ok(p.data.chunks(N_CLASSES).map(|c| [c[0], c[1], c[2], c[3], c[4]]).collect())
        }
    }
}
