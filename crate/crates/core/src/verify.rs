//! Self-checks: layer gradients against central differences (f64), forward
//! kernels against naive loops, event matching against exhaustive search and
//! the metric formulas against hand-computed examples.
//!
//! Each check reports its worst deviation instead of panicking, so callers can
//! assert (unit tests) or print a verdict (acceptance run).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::evalkit::{compute_metrics, match_events, Counts, EventCounts};
use crate::fusion::{Ablation, Arch, Combine, FusionModel, FusionSpec};
use crate::nn::{Activation, Bgru, Conv1d, DenseLayer, HeadLayer, LayerDesc, MaxPool1d, Mode, Normalization, Tensor};
use crate::signals::{build_sequences, EventClass, EventLabel, Frame, WindowSequence, N_CLASSES};
use crate::training::{weighted_crossentropy, ClassWeights};

/// Finite-difference step and the acceptance bound for relative error.
pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub instances: usize,
    /// Largest relative error, absolute error or mismatch count, per check.
    pub worst: f64,
}

impl Check {
    fn new(name: &str, instances: usize, worst: f64) -> Self {
        Self { name: name.into(), instances, worst }
    }
}

fn rel(a: f64, n: f64) -> f64 {
    let scale = libm::fmax(libm::fmax(libm::fabs(a), libm::fabs(n)), 1e-6);
    libm::fabs(a - n) / scale
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error between `analytic` and central differences of
/// `loss(i, delta)` over up to 24 sampled coordinates.
fn fd(analytic: &[f64], mut loss: impl FnMut(usize, f64) -> f64, rng: &mut ChaCha8Rng) -> f64 {
    let picks: Vec<usize> = if analytic.len() <= 24 {
        (0..analytic.len()).collect()
    } else {
        (0..24).map(|_| rng.random_range(0..analytic.len())).collect()
    };
    picks
        .into_iter()
        .map(|i| rel(analytic[i], (loss(i, FD_STEP) - loss(i, -FD_STEP)) / (2.0 * FD_STEP)))
        .fold(0.0, libm::fmax)
}

pub fn grad_dense(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let (n, i, o) = (1 + case % 3, 2 + case % 5, 2 + case % 4);
        let act = [Activation::Tanh, Activation::Sigmoid, Activation::Softmax, Activation::Identity, Activation::Relu][case % 5];
        let mut l = DenseLayer::<f64>::new("d", i, o, act, &mut rng);
        l.b.value = rand_vec(&mut rng, o);
        let x = Tensor::new(&[n, i], rand_vec(&mut rng, n * i)).expect("shape");
        let r = rand_vec(&mut rng, n * o);
        l.forward(&x).expect("forward");
        let dx = l.backward(&Tensor::new(&[n, o], r.clone()).expect("shape")).expect("backward");
        let base = l.clone();
        let eval = |l: &mut DenseLayer<f64>, x: &Tensor<f64>| dot(&l.forward(x).expect("forward").data, &r);
        let e = fd(&dx.data, |k, d| {
            let mut x2 = x.clone();
            x2.data[k] += d;
            eval(&mut base.clone(), &x2)
        }, &mut rng);
        worst = worst.max(e);
        for pi in 0..2 {
            let g = base.params()[pi].grad.clone();
            let e = fd(&g, |k, d| {
                let mut l2 = base.clone();
                l2.params_mut()[pi].value[k] += d;
                eval(&mut l2, &x)
            }, &mut rng);
            worst = worst.max(e);
        }
    }
    Check::new("dense", instances, worst)
}

pub fn grad_conv(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let (n, c, o, k) = (1 + case % 2, 1 + case % 3, 1 + case % 4, 1 + case % 4);
        let l = k + 6 + case % 5;
        let mut cv = Conv1d::<f64>::new("c", c, o, k, &mut rng);
        cv.b.value = rand_vec(&mut rng, o);
        let x = Tensor::new(&[n, c, l], rand_vec(&mut rng, n * c * l)).expect("shape");
        let lo = l - k + 1;
        let r = rand_vec(&mut rng, n * o * lo);
        let run = |cv: &mut Conv1d<f64>, x: &Tensor<f64>| dot(&cv.forward_act(x.clone(), true).expect("forward").data, &r);
        run(&mut cv, &x);
        let dx = cv.backward(Tensor::new(&[n, o, lo], r.clone()).expect("shape"), true).expect("backward").expect("dx");
        let base = cv.clone();
        worst = worst.max(fd(&dx.data, |i, d| {
            let mut x2 = x.clone();
            x2.data[i] += d;
            run(&mut base.clone(), &x2)
        }, &mut rng));
        for (pi, g) in [base.w.grad.clone(), base.b.grad.clone()].into_iter().enumerate() {
            worst = worst.max(fd(&g, |i, d| {
                let mut c2 = base.clone();
                if pi == 0 {
                    c2.w.value[i] += d
                } else {
                    c2.b.value[i] += d
                }
                run(&mut c2, &x)
            }, &mut rng));
        }
    }
    Check::new("conv1d", instances, worst)
}

pub fn grad_maxpool(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let pool = 2 + case % 3;
        let (c, l) = (1 + case % 3, 4 + case % 9);
        let x = Tensor::new(&[1, c, l], rand_vec(&mut rng, c * l)).expect("shape");
        let lo = l / pool;
        let r = rand_vec(&mut rng, c * lo);
        let mut p = MaxPool1d::new(pool).expect("pool");
        p.forward(x.clone()).expect("forward");
        let dx = p.backward(Tensor::new(&[1, c, lo], r.clone()).expect("shape")).expect("backward");
        worst = worst.max(fd(&dx.data, |i, d| {
            let mut x2 = x.clone();
            x2.data[i] += d;
            dot(&MaxPool1d::new(pool).expect("pool").forward(x2).expect("forward").data, &r)
        }, &mut rng));
    }
    Check::new("maxpool routing", instances, worst)
}

pub fn grad_normalization(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let (n, c, l) = (1 + case % 3, 1 + case % 4, 3 + case % 5);
        let x = Tensor::new(&[n, c, l], rand_vec(&mut rng, n * c * l).iter().map(|v| v * 3.0 + 1.0).collect()).expect("shape");
        let mut nm = Normalization::<f64>::new("n", c);
        nm.adapt(&x).expect("adapt");
        let mut layer = HeadLayer::Norm(nm);
        let r = rand_vec(&mut rng, n * c * l);
        let mut r0 = ChaCha8Rng::seed_from_u64(0);
        layer.forward(x.clone(), Mode::Eval, &mut r0).expect("forward");
        let dx = layer.backward(Tensor::new(&[n, c, l], r.clone()).expect("shape"), true).expect("backward").expect("dx");
        let base = layer.clone();
        worst = worst.max(fd(&dx.data, |i, d| {
            let mut x2 = x.clone();
            x2.data[i] += d;
            let mut r0 = ChaCha8Rng::seed_from_u64(0);
            dot(&base.clone().forward(x2, Mode::Eval, &mut r0).expect("forward").data, &r)
        }, &mut rng));
    }
    Check::new("normalisation", instances, worst)
}

/// Bidirectional GRU over 5 steps; odd instances mask the last two steps,
/// whose input gradient must be exactly zero.
pub fn grad_gru(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..instances {
        let (b, l, d, h) = (1 + case % 2, 5, 2 + case % 4, 2 + case % 3);
        let mut g = Bgru::<f64>::new("g", d, h, &mut rng);
        for p in g.params_mut() {
            p.value = rand_vec(&mut rng, p.len()).iter().map(|v| v * 0.8).collect();
        }
        let x = Tensor::new(&[b, l, d], rand_vec(&mut rng, b * l * d)).expect("shape");
        let mut mask = vec![true; b * l];
        if case % 2 == 1 {
            mask[b * l - 1] = false;
            mask[b * l - 2] = false;
        }
        let r = rand_vec(&mut rng, b * l * 2 * h);
        g.forward(&x, &mask).expect("forward");
        let dx = g.backward(&Tensor::new(&[b, l, 2 * h], r.clone()).expect("shape")).expect("backward");
        let base = g.clone();
        let eval = |g: &mut Bgru<f64>, x: &Tensor<f64>| dot(&g.forward(x, &mask).expect("forward").data, &r);
        worst = worst.max(fd(&dx.data, |i, dd| {
            let mut x2 = x.clone();
            x2.data[i] += dd;
            eval(&mut base.clone(), &x2)
        }, &mut rng));
        for (t, m) in mask.iter().enumerate() {
            if !m && dx.data[t * d..(t + 1) * d].iter().any(|&v| v != 0.0) {
                worst = f64::INFINITY;
            }
        }
        let grads: Vec<Vec<f64>> = base.params().iter().map(|p| p.grad.clone()).collect();
        for (pi, gr) in grads.iter().enumerate() {
            worst = worst.max(fd(gr, |i, dd| {
                let mut g2 = base.clone();
                g2.params_mut()[pi].value[i] += dd;
                eval(&mut g2, &x)
            }, &mut rng));
        }
    }
    Check::new("gru (5 steps)", instances, worst)
}

pub fn grad_loss(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(1..8);
        let p: Vec<f64> = (0..n * N_CLASSES).map(|_| rng.random_range(0.05..1.0)).collect();
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..N_CLASSES)).collect();
        let mut m: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        m[0] = true;
        let w = ClassWeights([1.0, 3.0, 1.5, 2.0, 1.2]);
        let pt = Tensor::new(&[1, n, N_CLASSES], p).expect("shape");
        let (_, g) = weighted_crossentropy(&pt, &t, &m, &w).expect("loss");
        worst = worst.max(fd(&g.data, |i, d| {
            let mut p2 = pt.clone();
            p2.data[i] += d;
            weighted_crossentropy(&p2, &t, &m, &w).expect("loss").0
        }, &mut rng));
    }
    Check::new("weighted cross-entropy", instances, worst)
}

fn random_seqs(seed: u64, windows: usize, l: usize) -> Vec<WindowSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..windows)
        .map(|j| Frame {
            start: j as f64 * 0.15,
            audio: (0..1800).map(|_| rng.random_range(-0.5..0.5)).collect(),
            accel: (0..90).map(|_| rng.random_range(-2.0..2.0)).collect(),
            gyro: (0..90).map(|_| rng.random_range(-2.0..2.0)).collect(),
            mag: None,
        })
        .collect();
    let t = (0..windows).map(|_| rng.random_range(0..N_CLASSES)).collect();
    build_sequences(frames, t, l).expect("sequences")
}

/// Whole-model parameter gradients through the head merge (concatenation and
/// the elementwise combines) into the recurrent trunk.
pub fn grad_concat(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arch = Arch::compact();
    arch.audio = vec![LayerDesc::Conv { filters: 2, kernel: 5 }, LayerDesc::MaxPool { pool: 300 }];
    arch.imu = vec![LayerDesc::Conv { filters: 2, kernel: 3 }, LayerDesc::MaxPool { pool: 7 }];
    arch.gru_units = 3;
    arch.dense = vec![4];
    let combines = [Combine::Concatenate, Combine::Average, Combine::Maximum, Combine::Multiply];
    let mut worst = 0.0f64;
    for case in 0..instances {
        let mut spec = FusionSpec::proposed(arch.clone());
        spec.arch.combine = combines[case % 4];
        if case % 5 == 4 {
            spec = spec.with_ablation(Ablation::NoRnn);
        }
        let seqs = random_seqs(seed ^ (100 + case as u64), 3, 4);
        let refs: Vec<&WindowSequence> = seqs.iter().collect();
        let mut m = FusionModel::<f64>::build(&spec, case as u64).expect("build");
        m.adapt_normalization(&refs).expect("adapt");
        let w = ClassWeights([1.0, 2.0, 1.0, 1.5, 1.0]);
        let loss = |m: &mut FusionModel<f64>| {
            let mut r0 = ChaCha8Rng::seed_from_u64(0);
            let p = m.forward(&refs, Mode::Eval, &mut r0).expect("forward");
            m.clear_state();
            weighted_crossentropy(&p, &seqs[0].targets, &seqs[0].mask, &w).expect("loss").0
        };
        let mut r0 = ChaCha8Rng::seed_from_u64(0);
        m.zero_grad();
        let p = m.forward(&refs, Mode::Eval, &mut r0).expect("forward");
        let (_, g) = weighted_crossentropy(&p, &seqs[0].targets, &seqs[0].mask, &w).expect("loss");
        m.backward(&g).expect("backward");
        let base = m.clone();
        let names = base.param_names();
        for (pi, prm) in base.params().iter().enumerate() {
            // weights of every head and the trunk each case; biases every third
            if !prm.trainable || !(names[pi].ends_with(".w") || case % 3 == 0) {
                continue;
            }
            let gr = prm.grad.clone();
            worst = worst.max(fd(&gr, |i, d| {
                let mut m2 = base.clone();
                m2.params_mut()[pi].value[i] += d;
                loss(&mut m2)
            }, &mut rng));
        }
    }
    Check::new("concat / merge through model", instances, worst)
}

/// All gradient checks with `instances` random cases each.
pub fn gradient_checks(instances: usize, seed: u64) -> Vec<Check> {
    vec![
        grad_dense(instances, seed),
        grad_conv(instances, seed + 1),
        grad_maxpool(instances, seed + 2),
        grad_gru(instances, seed + 3),
        grad_normalization(instances, seed + 4),
        grad_concat(instances, seed + 5),
        grad_loss(instances, seed + 6),
    ]
}

pub fn oracle_conv(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let (c, o, k) = (1 + case % 4, 1 + case % 8, 1 + case % 5);
        let l = k + (case * 7) % 28;
        let n = 1 + case % 2;
        let mut cv = Conv1d::<f64>::new("c", c, o, k, &mut rng);
        cv.b.value.iter_mut().for_each(|v| *v = rng.random::<f64>() - 0.5);
        let x: Vec<f64> = (0..n * c * l).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let y = cv.forward_act(Tensor::new(&[n, c, l], x.clone()).expect("shape"), true).expect("forward");
        let lo = l - k + 1;
        for b in 0..n {
            for oc in 0..o {
                for i in 0..lo {
                    let mut s = cv.b.value[oc];
                    for ic in 0..c {
                        for j in 0..k {
                            s += cv.w.value[(oc * c + ic) * k + j] * x[(b * c + ic) * l + i + j];
                        }
                    }
                    worst = worst.max(libm::fabs(s.max(0.0) - y.data[(b * o + oc) * lo + i]));
                }
            }
        }
    }
    Check::new("conv1d forward", cases, worst)
}

pub fn oracle_pool(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let pool = 1 + case % 6;
        let (c, l) = (1 + case % 3, 1 + (case * 5) % 40);
        let x: Vec<f64> = (0..c * l).map(|_| rng.random::<f64>()).collect();
        let y = MaxPool1d::new(pool).expect("pool").forward(Tensor::new(&[1, c, l], x.clone()).expect("shape")).expect("forward");
        let lo = l / pool;
        for ch in 0..c {
            for j in 0..lo {
                let m = (0..pool).map(|i| x[ch * l + j * pool + i]).fold(f64::MIN, f64::max);
                worst = worst.max(libm::fabs(m - y.data[ch * lo + j]));
            }
        }
    }
    Check::new("maxpool forward", cases, worst)
}

pub fn oracle_dense(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let (n, i, o) = (1 + case % 4, 1 + case % 13, 1 + case % 7);
        let mut l = DenseLayer::<f64>::new("d", i, o, Activation::Tanh, &mut rng);
        l.b.value.iter_mut().for_each(|b| *b = rng.random::<f64>() - 0.5);
        let x: Vec<f64> = (0..n * i).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let y = l.forward(&Tensor::new(&[n, i], x.clone()).expect("shape")).expect("forward");
        for r in 0..n {
            for c in 0..o {
                let mut s = l.b.value[c];
                for k in 0..i {
                    s += l.w.value[c * i + k] * x[r * i + k];
                }
                worst = worst.max(libm::fabs(libm::tanh(s) - y.data[r * o + c]));
            }
        }
    }
    Check::new("dense forward", cases, worst)
}

pub fn forward_oracles(cases: usize, seed: u64) -> Vec<Check> {
    vec![oracle_conv(cases, seed), oracle_pool(cases, seed + 1), oracle_dense(cases, seed + 2)]
}

/// Exhaustive best one-to-one assignment size.
fn brute(adj: &[Vec<bool>], i: usize, used: &mut [bool]) -> usize {
    if i == adj.len() {
        return 0;
    }
    let mut best = brute(adj, i + 1, used);
    for j in 0..used.len() {
        if adj[i][j] && !used[j] {
            used[j] = true;
            best = best.max(1 + brute(adj, i + 1, used));
            used[j] = false;
        }
    }
    best
}

fn random_events(rng: &mut ChaCha8Rng, n: usize, overlap_ok: bool) -> Vec<EventLabel> {
    let mut out = Vec::with_capacity(n);
    let mut t = 0.0;
    for _ in 0..n {
        let c = EventClass::from_id(rng.random_range(0..2)).expect("class");
        let a = if overlap_ok { rng.random_range(0.0..3.0) } else { t + rng.random_range(0.0..0.3) };
        let b = a + rng.random_range(0.1..0.6);
        t = b;
        out.push(EventLabel::new(c, a, b));
    }
    out
}

/// Matched-pair counts versus exhaustive search; `worst` counts mismatches.
pub fn matching_oracle(instances: usize, max_events: usize, tol: f64, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..instances {
        let (nr, np) = (rng.random_range(0..=max_events), rng.random_range(0..=max_events));
        let r = random_events(&mut rng, nr, false);
        let p = random_events(&mut rng, np, true);
        let tp = match match_events(&r, &p, tol) {
            Ok(m) => m.pairs.len(),
            Err(_) => usize::MAX,
        };
        let ok = |a: &EventLabel, b: &EventLabel| {
            a.class == b.class && libm::fabs(a.onset - b.onset) <= tol && libm::fabs(a.offset - b.offset) <= tol
        };
        let adj: Vec<Vec<bool>> = r.iter().map(|a| p.iter().map(|b| ok(a, b)).collect()).collect();
        if tp != brute(&adj, 0, &mut vec![false; p.len()]) {
            mismatches += 1;
        }
    }
    Check::new("event matching vs exhaustive search", instances, mismatches as f64)
}

/// Hand-computed precision / recall / F1 / error-rate examples.
pub fn metric_examples() -> Check {
    let mut c = EventCounts::default();
    c.per_class[0] = Counts { tp: 8, fp: 2, fn_: 4 };
    // S = 1, D = 2, I = 1 over N = 10 reference events
    c.per_class[1] = Counts { tp: 3, fp: 2, fn_: 3 };
    (c.s, c.d, c.i, c.n) = (1, 2, 1, 10);
    let m = compute_metrics(&c);
    let b = &m.per_class[0].1;
    let want_f1 = 2.0 * 0.8 * (8.0 / 12.0) / (0.8 + 8.0 / 12.0);
    let o = &m.overall;
    // pooled: TP 11, FP 4, FN 7
    let (po, ro) = (11.0 / 15.0, 11.0 / 18.0);
    let devs = [
        b.precision - 0.8,
        b.recall - 8.0 / 12.0,
        b.f1 - want_f1,
        b.error_rate - 6.0 / 12.0,
        o.precision - po,
        o.recall - ro,
        o.f1 - 2.0 * po * ro / (po + ro),
        o.error_rate - 0.4,
    ];
    let r = match_events(&[EventLabel::new(EventClass::Bite, 10.0, 10.35)], &[EventLabel::new(EventClass::Bite, 10.2, 10.5)], 0.3);
    let hit = r.map(|r| r.counts.per_class[0].tp == 1).unwrap_or(false);
    let worst = devs.iter().map(|d| libm::fabs(*d)).fold(if hit { 0.0 } else { 1.0 }, libm::fmax);
    Check::new("metric hand examples", devs.len() + 1, worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_gradient_check_passes() {
        for c in gradient_checks(20, 21) {
            assert!(c.worst < GRAD_TOL, "{} worst relative error {}", c.name, c.worst);
        }
    }

    #[test]
    fn forward_kernels_match_loops() {
        for c in forward_oracles(100, 11) {
            assert!(c.worst < ORACLE_TOL, "{}: {}", c.name, c.worst);
        }
    }

    #[test]
    fn matching_equals_exhaustive_search() {
        assert_eq!(matching_oracle(1000, 8, 0.3, 77).worst, 0.0);
    }

    #[test]
    fn metric_formulas_reproduce_hand_examples() {
        assert!(metric_examples().worst < 1e-12);
    }

    #[test]
    fn checks_detect_a_broken_gradient() {
        // sanity: a wrong analytic gradient is reported
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = fd(&[1.0], |_, d| 3.0 * d, &mut rng);
        assert!(e > 0.5);
    }
}
