//! Class-weighted cross-entropy, Adam, early stopping and the segment-level
//! fold split.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::fusion::{fuse_decisions, FusionModel, FusionSpec, MetaClassifier};
use crate::nn::{Mode, Param, Real, Tensor};
use crate::signals::{class_name, Activity, WindowSequence, N_CLASSES};
use crate::synth::shuffle;

pub const PROB_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs_max: 1400, early_stop_patience: 50, batch_size: 5, adam: AdamConfig::default(), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.early_stop_patience >= self.epochs_max {
            return Err(Error::Config(format!(
                "patience {} must be below epochs_max {}",
                self.early_stop_patience, self.epochs_max
            )));
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; N_CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        Self([1.0; N_CLASSES])
    }
}

/// Window-level class counts over the real (unmasked) windows.
pub fn class_counts(seqs: &[WindowSequence]) -> [usize; N_CLASSES] {
    let mut c = [0; N_CLASSES];
    for s in seqs {
        for (&t, &m) in s.targets.iter().zip(&s.mask) {
            if m {
                c[t] += 1;
            }
        }
    }
    c
}

/// W_c = N_max / N_c. Every class must be present.
pub fn compute_class_weights(counts: &[usize; N_CLASSES]) -> Result<ClassWeights> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::ClassAbsent(class_name(c)));
    }
    Ok(lenient_class_weights(counts))
}

/// As [`compute_class_weights`] but an absent class gets weight 1 (it has no
/// windows, so its weight never enters the loss).
pub fn lenient_class_weights(counts: &[usize; N_CLASSES]) -> ClassWeights {
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    let mut w = [1.0; N_CLASSES];
    for (w, &n) in w.iter_mut().zip(counts) {
        if n > 0 {
            *w = max / n as f64;
        }
    }
    ClassWeights(w)
}

/// Weighted categorical cross-entropy over unmasked windows, normalised by
/// the summed weights. Returns the loss and dL/dp with the shape of `probs`.
pub fn weighted_crossentropy<T: Real>(
    probs: &Tensor<T>,
    targets: &[usize],
    mask: &[bool],
    weights: &ClassWeights,
) -> Result<(f64, Tensor<T>)> {
    let n = targets.len();
    if probs.len() != n * N_CLASSES || mask.len() != n || probs.shape.last() != Some(&N_CLASSES) {
        return Err(shape_err!("probs {:?} vs {} targets / {} mask", probs.shape, n, mask.len()));
    }
    let mut grad = Tensor::zeros(&probs.shape);
    let total: f64 = targets.iter().zip(mask).filter(|(_, &m)| m).map(|(&t, _)| weights.0[t]).sum();
    if total <= 0.0 {
        return Ok((0.0, grad));
    }
    let mut loss = 0.0;
    for (i, (&t, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        if t >= N_CLASSES {
            return Err(Error::Label(format!("target class {t}")));
        }
        let p = probs.data[i * N_CLASSES + t].f64();
        let w = weights.0[t] / total;
        if p > PROB_FLOOR {
            loss -= w * libm::log(p);
            grad.data[i * N_CLASSES + t] = T::c(-w / p);
        } else {
            // saturated: constant loss, no gradient through the floor
            loss -= w * libm::log(PROB_FLOOR);
        }
    }
    Ok((loss, grad))
}

/// Adam with bias correction folded into the step size.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One update of every trainable parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(shape_err!("optimizer state does not match parameter list"));
        }
        self.t += 1;
        let c = self.cfg;
        let t = self.t as f64;
        let lr_t = T::c(c.lr * libm::sqrt(1.0 - libm::pow(c.beta2, t)) / (1.0 - libm::pow(c.beta1, t)));
        let (b1, b2, eps) = (T::c(c.beta1), T::c(c.beta2), T::c(c.eps));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for ((p, m), v) in params.iter_mut().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            if !p.trainable {
                continue;
            }
            if p.grad.len() != p.value.len() {
                return Err(shape_err!("{}: grad {} vs value {}", p.name, p.grad.len(), p.value.len()));
            }
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                p.value[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form: one Adam step on `params` with external state.
pub fn adam_step<T: Real>(params: &mut [&mut Param<T>], state: &mut Adam<T>) -> Result<()> {
    state.step(params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: Vec<Vec<usize>>,
}

/// Segment-level k-fold split: one rumination segment seeds each fold, the
/// rest are dealt to the smallest fold so sizes differ by at most one.
pub fn kfold_split(segments: &[(usize, Activity)], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let mut rum: Vec<usize> = segments.iter().filter(|s| s.1 == Activity::Rumination).map(|s| s.0).collect();
    let mut graz: Vec<usize> = segments.iter().filter(|s| s.1 == Activity::Grazing).map(|s| s.0).collect();
    if rum.len() < k {
        return Err(Error::Config(format!("{} rumination segments for {k} folds", rum.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b66_6f6c_6473);
    shuffle(&mut rng, &mut rum);
    shuffle(&mut rng, &mut graz);
    let mut folds: Vec<Vec<usize>> = rum[..k].iter().map(|&i| vec![i]).collect();
    for &i in rum[k..].iter().chain(&graz) {
        let f = (0..k).min_by_key(|&f| (folds[f].len(), f)).expect("k >= 1");
        folds[f].push(i);
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    Ok(FoldAssignment { folds })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub weights: ClassWeights,
}

/// Weighted loss of `model` on `seqs` in eval mode.
pub fn evaluate_loss<T: Real>(
    model: &mut FusionModel<T>,
    seqs: &[WindowSequence],
    weights: &ClassWeights,
    batch: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut num, mut den) = (0.0, 0.0);
    for chunk in seqs.chunks(batch.max(1)) {
        let refs: Vec<&WindowSequence> = chunk.iter().collect();
        let p = model.forward(&refs, Mode::Eval, &mut rng)?;
        model.clear_state();
        let (t, m) = flat_targets(&refs);
        let w: f64 = t.iter().zip(&m).filter(|(_, &m)| m).map(|(&t, _)| weights.0[t]).sum();
        let (l, _) = weighted_crossentropy(&p, &t, &m, weights)?;
        num += l * w;
        den += w;
    }
    Ok(if den > 0.0 { num / den } else { 0.0 })
}

fn flat_targets(seqs: &[&WindowSequence]) -> (Vec<usize>, Vec<bool>) {
    (
        seqs.iter().flat_map(|s| s.targets.iter().copied()).collect(),
        seqs.iter().flat_map(|s| s.mask.iter().copied()).collect(),
    )
}

/// Train one fold with early stopping on validation loss; the best weights
/// are restored before returning. `on_epoch` sees each log row as it is made.
pub fn train_fold<T: Real>(
    model: &mut FusionModel<T>,
    train: &[WindowSequence],
    val: &[WindowSequence],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid("empty fold".into()));
    }
    let refs: Vec<&WindowSequence> = train.iter().collect();
    model.adapt_normalization(&refs)?;
    let weights = lenient_class_weights(&class_counts(train));
    let mut adam = Adam::new(cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog { epochs: Vec::new(), best_epoch: 0, best_val_loss: f64::INFINITY, weights };
    let mut best: Option<Vec<Vec<T>>> = None;

    for epoch in 0..cfg.epochs_max {
        shuffle(&mut rng, &mut order);
        let (mut num, mut den) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&WindowSequence> = chunk.iter().map(|&i| &train[i]).collect();
            model.zero_grad();
            let p = model.forward(&batch, Mode::Train, &mut rng)?;
            let (t, m) = flat_targets(&batch);
            let (loss, grad) = weighted_crossentropy(&p, &t, &m, &weights)?;
            if !loss.is_finite() || !p.all_finite() {
                return Err(Error::Diverged { epoch, detail: "non-finite training loss".to_string() });
            }
            model.backward(&grad)?;
            adam.step(&mut model.params_mut())?;
            let w: f64 = t.iter().zip(&m).filter(|(_, &m)| m).map(|(&t, _)| weights.0[t]).sum();
            num += loss * w;
            den += w;
        }
        model.clear_state();
        let val_loss = evaluate_loss(model, val, &weights, cfg.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, detail: "non-finite validation loss".to_string() });
        }
        let row = EpochLog { epoch, train_loss: if den > 0.0 { num / den } else { 0.0 }, val_loss, lr: cfg.adam.lr };
        on_epoch(&row);
        log.epochs.push(row);
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best = Some(model.params().iter().map(|p| p.value.clone()).collect());
        } else if epoch - log.best_epoch >= cfg.early_stop_patience {
            break;
        }
    }
    if let Some(b) = best {
        for (p, v) in model.params_mut().into_iter().zip(b) {
            p.value = v;
        }
    }
    Ok(log)
}

/// Per-sequence class distributions of the real windows.
pub fn predict_proba<T: Real>(
    model: &mut FusionModel<T>,
    seqs: &[WindowSequence],
    batch: usize,
) -> Result<Vec<Vec<[f32; N_CLASSES]>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(batch.max(1)) {
        let refs: Vec<&WindowSequence> = chunk.iter().collect();
        let p = model.forward(&refs, Mode::Eval, &mut rng)?;
        model.clear_state();
        let l = p.dim(1);
        for (s, seq) in chunk.iter().enumerate() {
            let rows = (0..l)
                .filter(|&j| seq.mask[j])
                .map(|j| {
                    let o = (s * l + j) * N_CLASSES;
                    let mut d = [0.0f32; N_CLASSES];
                    for c in 0..N_CLASSES {
                        d[c] = p.data[o + c].f64() as f32;
                    }
                    d
                })
                .collect();
            out.push(rows);
        }
    }
    Ok(out)
}

pub fn argmax(d: &[f32]) -> usize {
    let mut b = 0;
    for i in 1..d.len() {
        if d[i] > d[b] {
            b = i;
        }
    }
    b
}

/// Decision-level system: independently trained base models plus a
/// meta-classifier fitted on their validation-set outputs.
#[derive(Clone, Debug)]
pub struct DecisionSystem {
    pub spec: FusionSpec,
    pub bases: Vec<FusionModel<f32>>,
    pub meta: MetaClassifier,
}

impl DecisionSystem {
    pub fn train(
        spec: &FusionSpec,
        train: &[WindowSequence],
        val: &[WindowSequence],
        cfg: &TrainConfig,
        seed: u64,
        on_epoch: &mut dyn FnMut(usize, &EpochLog),
    ) -> Result<(Self, Vec<TrainLog>)> {
        spec.validate()?;
        let meta_spec = spec.meta.clone().ok_or_else(|| Error::Config("decision level needs meta".into()))?;
        let mut bases = Vec::new();
        let mut logs = Vec::new();
        for (i, b) in spec.decision_bases().iter().enumerate() {
            let mut m = FusionModel::<f32>::build(b, seed.wrapping_add(i as u64))?;
            logs.push(train_fold(&mut m, train, val, cfg, &mut |e| on_epoch(i, e))?);
            bases.push(m);
        }
        let outs = bases
            .iter_mut()
            .map(|m| predict_proba(m, val, cfg.batch_size).map(|v| v.concat()))
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<usize> = val
            .iter()
            .flat_map(|s| s.targets.iter().zip(&s.mask).filter(|(_, &m)| m).map(|(&t, _)| t))
            .collect();
        let w = lenient_class_weights(&class_counts(val));
        let meta = MetaClassifier::fit(&meta_spec, &outs, &targets, &w, seed)?;
        Ok((Self { spec: spec.clone(), bases, meta }, logs))
    }

    pub fn predict_proba(&mut self, seqs: &[WindowSequence], batch: usize) -> Result<Vec<Vec<[f32; N_CLASSES]>>> {
        let per_base = self
            .bases
            .iter_mut()
            .map(|m| predict_proba(m, seqs, batch))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(seqs.len());
        for s in 0..seqs.len() {
            let base: Vec<Vec<[f32; N_CLASSES]>> = per_base.iter().map(|b| b[s].clone()).collect();
            out.push(fuse_decisions(&mut self.meta, &base)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{Arch, FusionSpec};
    use crate::nn::LayerDesc;
    use crate::signals::{build_sequences, Frame};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn event_count_weight_example() {
        // event counts used as a stand-in for window counts
        let w = compute_class_weights(&[2234, 1000, 6905, 3000, 6905]).unwrap();
        assert!((w.0[0] - 3.091).abs() < 1e-3);
        assert_eq!(w.0[2], 1.0);
        assert_eq!(compute_class_weights(&[7; 5]).unwrap().0, [1.0; 5]);
        assert_eq!(compute_class_weights(&[1, 0, 3, 4, 5]), Err(Error::ClassAbsent("chew-bite")));
        assert_eq!(lenient_class_weights(&[1, 0, 4, 4, 2]).0, [4.0, 1.0, 1.0, 1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn weights_match_formula(c in prop::array::uniform5(1usize..10_000)) {
            let w = compute_class_weights(&c).unwrap();
            let max = *c.iter().max().unwrap() as f64;
            for k in 0..N_CLASSES {
                prop_assert_eq!(w.0[k], max / c[k] as f64);
                prop_assert!(w.0[k] >= 1.0);
            }
            prop_assert!(w.0.iter().any(|&x| x == 1.0));
        }
    }

    #[test]
    fn crossentropy_trivial_cases() {
        let u = Tensor::new(&[1, 2, 5], vec![0.2f64; 10]).unwrap();
        let (l, _) = weighted_crossentropy(&u, &[0, 3], &[true, true], &ClassWeights::uniform()).unwrap();
        assert!((l - libm::log(5.0)).abs() < 1e-12);
        let mut p = vec![0.0f64; 10];
        p[1] = 1.0;
        p[5 + 4] = 1.0;
        let (l, g) =
            weighted_crossentropy(&Tensor::new(&[1, 2, 5], p).unwrap(), &[1, 4], &[true, true], &ClassWeights::uniform())
                .unwrap();
        assert_eq!(l, 0.0);
        assert!(g.all_finite());
        // masked rows contribute nothing
        let (l, g) = weighted_crossentropy(&u, &[0, 3], &[true, false], &ClassWeights::uniform()).unwrap();
        assert!((l - libm::log(5.0)).abs() < 1e-12);
        assert!(g.data[5..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn crossentropy_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(1..20);
            let mut p = Vec::new();
            for _ in 0..n {
                let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                p.extend(raw.iter().map(|v| v / s));
            }
            let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
            let m: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
            let w = ClassWeights([1.0, 2.5, 1.3, 4.0, 1.1]);
            let (l, _) = weighted_crossentropy(&Tensor::new(&[n, 5], p.clone()).unwrap(), &t, &m, &w).unwrap();
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..n {
                if m[i] {
                    num += -w.0[t[i]] * p[i * 5 + t[i]].ln();
                    den += w.0[t[i]];
                }
            }
            let want = if den > 0.0 { num / den } else { 0.0 };
            assert!((l - want).abs() < 1e-6);
        }
    }

    fn scalar(w: f64) -> Param<f64> {
        let mut p = Param::zeros("w", &[1], true);
        p.value[0] = w;
        p
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut p = scalar(1.0);
        let mut st = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        p.grad[0] = 2.0 * p.value[0];
        adam_step(&mut [&mut p], &mut st).unwrap();
        assert!((p.value[0] - 0.9).abs() < 1e-6, "{}", p.value[0]);
        let mut q = scalar(0.3);
        let mut st = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            adam_step(&mut [&mut q], &mut st).unwrap();
        }
        assert_eq!(q.value[0], 0.3);
    }

    #[test]
    fn adam_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = Param::<f64>::zeros("w", &[4], true);
        for v in p.value.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let (mut w, mut m, mut v) = (p.value.clone(), [0.0; 4], [0.0; 4]);
        let cfg = AdamConfig::default();
        let mut st = Adam::new(cfg);
        for t in 1..=100 {
            let g: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            p.grad.copy_from_slice(&g);
            st.step(&mut [&mut p]).unwrap();
            // textbook form with explicit m̂, v̂
            for i in 0..4 {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mh = m[i] / (1.0 - cfg.beta1.powi(t));
                let vh = v[i] / (1.0 - cfg.beta2.powi(t));
                w[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        for i in 0..4 {
            assert!((p.value[i] - w[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_skips_frozen_and_checks_shapes() {
        let mut p = scalar(1.0);
        p.trainable = false;
        p.grad[0] = 1.0;
        let mut st = Adam::new(AdamConfig::default());
        st.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value[0], 1.0);
        let mut q = Param::<f64>::zeros("q", &[3], true);
        assert!(st.step(&mut [&mut q]).is_err());
    }

    #[test]
    fn kfold_examples() {
        let mut segs: Vec<(usize, Activity)> = (0..24).map(|i| (i, Activity::Grazing)).collect();
        for i in [2, 7, 11, 15, 20] {
            segs[i].1 = Activity::Rumination;
        }
        let f = kfold_split(&segs, 5, 3).unwrap();
        let mut sizes: Vec<usize> = f.folds.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![4, 5, 5, 5, 5]);
        for fold in &f.folds {
            assert_eq!(fold.iter().filter(|&&i| segs[i].1 == Activity::Rumination).count(), 1);
        }
        let five: Vec<_> = (0..5).map(|i| (i, Activity::Rumination)).collect();
        assert!(kfold_split(&five, 5, 0).unwrap().folds.iter().all(|f| f.len() == 1));
        assert!(kfold_split(&five[..4], 5, 0).is_err());
    }

    proptest! {
        #[test]
        fn kfold_is_partition(n_graz in 0usize..40, n_rum in 1usize..10, k in 1usize..6, seed in any::<u64>()) {
            prop_assume!(n_rum >= k);
            let segs: Vec<(usize, Activity)> = (0..n_graz + n_rum)
                .map(|i| (i * 3 + 1, if i < n_rum { Activity::Rumination } else { Activity::Grazing }))
                .collect();
            let f = kfold_split(&segs, k, seed).unwrap();
            prop_assert_eq!(f.folds.len(), k);
            let mut all: Vec<usize> = f.folds.concat();
            all.sort_unstable();
            let mut want: Vec<usize> = segs.iter().map(|s| s.0).collect();
            want.sort_unstable();
            prop_assert_eq!(all, want);
            let sizes: Vec<usize> = f.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for fold in &f.folds {
                prop_assert!(fold.iter().any(|&i| segs.iter().any(|s| s.0 == i && s.1 == Activity::Rumination)));
            }
        }
    }

    fn toy_spec() -> FusionSpec {
        let mut arch = Arch::compact();
        arch.audio = vec![LayerDesc::Conv { filters: 2, kernel: 5 }, LayerDesc::MaxPool { pool: 100 }];
        arch.imu = vec![LayerDesc::Conv { filters: 2, kernel: 3 }, LayerDesc::MaxPool { pool: 4 }];
        arch.gru_units = 4;
        arch.dense = vec![8];
        FusionSpec::proposed(arch)
    }

    /// Audio level and accel offset both encode the class.
    fn toy_data(n_seq: usize, l: usize, seed: u64) -> Vec<WindowSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for _ in 0..n_seq {
            let mut frames = Vec::new();
            let mut targets = Vec::new();
            for j in 0..l {
                let c = rng.random_range(0..N_CLASSES);
                let lvl = c as f32 * 0.2;
                frames.push(Frame {
                    start: j as f64 * 0.15,
                    audio: (0..1800).map(|_| lvl + rng.random_range(-0.02..0.02)).collect(),
                    accel: (0..90).map(|_| lvl * 2.0 + rng.random_range(-0.05..0.05)).collect(),
                    gyro: (0..90).map(|_| rng.random_range(-0.05..0.05)).collect(),
                    mag: None,
                });
                targets.push(c);
            }
            out.extend(build_sequences(frames, targets, l).unwrap());
        }
        out
    }

    fn accuracy(m: &mut FusionModel<f32>, seqs: &[WindowSequence]) -> f64 {
        let p = predict_proba(m, seqs, 4).unwrap();
        let (mut ok, mut n) = (0, 0);
        for (s, rows) in seqs.iter().zip(&p) {
            for (d, &t) in rows.iter().zip(&s.targets) {
                ok += (argmax(d) == t) as usize;
                n += 1;
            }
        }
        ok as f64 / n as f64
    }

    #[test]
    fn separable_toy_reaches_high_accuracy() {
        let train = toy_data(30, 8, 1);
        let val = toy_data(4, 8, 2);
        let mut m = FusionModel::<f32>::build(&toy_spec(), 3).unwrap();
        let cfg = TrainConfig {
            epochs_max: 50,
            early_stop_patience: 49,
            batch_size: 4,
            adam: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
            seed: 4,
        };
        let log = train_fold(&mut m, &train, &val, &cfg, &mut |_| {}).unwrap();
        assert!(log.epochs.len() <= 50);
        let acc = accuracy(&mut m, &val);
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn early_stopping_contract_and_determinism() {
        let train = toy_data(4, 6, 11);
        let val = toy_data(2, 6, 12);
        let cfg = TrainConfig { epochs_max: 40, early_stop_patience: 3, batch_size: 2, seed: 9, ..TrainConfig::default() };
        let run = || {
            let mut m = FusionModel::<f32>::build(&toy_spec(), 1).unwrap();
            let log = train_fold(&mut m, &train, &val, &cfg, &mut |_| {}).unwrap();
            (log, m.params().iter().map(|p| p.value.clone()).collect::<Vec<_>>())
        };
        let (log, w) = run();
        let last = log.epochs.last().unwrap().epoch;
        assert!(last == log.best_epoch + 3 || last == cfg.epochs_max - 1);
        let min = log.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(min, log.best_val_loss);
        let (log2, w2) = run();
        assert_eq!(log, log2);
        assert_eq!(w, w2);
        // restored weights reproduce the best validation loss
        let mut m = FusionModel::<f32>::build(&toy_spec(), 1).unwrap();
        train_fold(&mut m, &train, &val, &cfg, &mut |_| {}).unwrap();
        let l = evaluate_loss(&mut m, &val, &log.weights, cfg.batch_size).unwrap();
        assert!((l - log.best_val_loss).abs() < 1e-9);
    }

    #[test]
    fn empty_fold_and_nan_are_errors() {
        let train = toy_data(2, 4, 1);
        let cfg = TrainConfig { epochs_max: 3, early_stop_patience: 1, ..TrainConfig::default() };
        let mut m = FusionModel::<f32>::build(&toy_spec(), 1).unwrap();
        assert!(train_fold(&mut m, &train, &[], &cfg, &mut |_| {}).is_err());
        for p in m.params_mut() {
            if p.trainable {
                p.value[0] = f32::NAN;
            }
        }
        let r = train_fold(&mut m, &train, &train, &cfg, &mut |_| {});
        assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
    }
}
