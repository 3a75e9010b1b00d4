//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code, clippy::needless_range_loop)]

use invsen::cluster::{AffinityMatrix, ClusterLabels};
use invsen::debias::{
    bias_posterior, cross_entropy_loss, entropy_confusion_logit_grad, entropy_confusion_loss, head_pass, BiasHeads,
    BiasHeadsConfig,
};
use invsen::numkit::{
    finite_diff_check, Activation, GradCheckReport, LayerSpec, Matrix, MlpParams, Mode, ParamSet, Rng,
};
use invsen::sennet::{Embedding, SeModel, SeModelConfig};

pub const GRAD_TOL: f64 = 1e-4;

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

pub fn unit_rows(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let mut m = random_matrix(rows, cols, rng);
    m.normalize_rows();
    m
}

/// `Σ w ⊙ out`, a loss whose gradient at the output is `w`.
fn weighted_sum(out: &Matrix, w: &Matrix) -> f64 {
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Checks parameter and input gradients of an MLP under a random linear probe.
pub fn check_mlp(net: &MlpParams, input: &Matrix, mode: Mode, seed: u64) -> (GradCheckReport, GradCheckReport) {
    let mut rng = Rng::new(seed);
    let (out, cache) = net.forward(input, mode).unwrap();
    let probe = random_matrix(out.rows(), out.cols(), &mut rng);
    let (grads, grad_in) = net.backward(&cache, &probe).unwrap();

    let flat = net.to_flat();
    let mut scratch = net.clone();
    let params = finite_diff_check(
        |p| {
            scratch.set_flat(p);
            let (o, _) = scratch.forward(input, mode)?;
            Ok(weighted_sum(&o, &probe))
        },
        &flat,
        &grads.to_flat(),
        GRAD_TOL,
        None,
    )
    .unwrap();
    let (rows, cols) = input.shape();
    let inputs = finite_diff_check(
        |x| {
            let m = Matrix::new(rows, cols, x.to_vec())?;
            let (o, _) = net.forward(&m, mode)?;
            Ok(weighted_sum(&o, &probe))
        },
        input.data(),
        grad_in.data(),
        GRAD_TOL,
        None,
    )
    .unwrap();
    (params, inputs)
}

/// Single-layer networks, one per layer configuration.
pub fn single_layer(activation: Activation, batchnorm: bool, seed: u64) -> MlpParams {
    let mut rng = Rng::new(seed);
    let mut net = MlpParams::new(4, &[LayerSpec { width: 3, activation, batchnorm }], &mut rng).unwrap();
    // Non-trivial biases and batchnorm affine parameters.
    for l in &mut net.layers {
        for b in &mut l.bias {
            *b = rng.uniform(-0.5, 0.5);
        }
        if let Some(bn) = &mut l.batchnorm {
            for s in &mut bn.scale {
                *s = rng.uniform(0.5, 1.5);
            }
            for s in &mut bn.shift {
                *s = rng.uniform(-0.5, 0.5);
            }
            for v in &mut bn.running_var {
                *v = rng.uniform(0.5, 2.0);
            }
            for m in &mut bn.running_mean {
                *m = rng.uniform(-0.2, 0.2);
            }
        }
    }
    net
}

pub fn jitter_biases(net: &mut MlpParams, rng: &mut Rng) {
    for l in &mut net.layers {
        for b in &mut l.bias {
            *b = rng.uniform(-0.1, 0.1);
        }
    }
}

/// Small model with learnable `α` and a `β` that leaves some scores alive.
pub fn small_model(seed: u64, input_dim: usize) -> SeModel {
    let mut rng = Rng::new(seed);
    let cfg =
        SeModelConfig { input_dim, hidden: vec![5, 4], embed_dim: 3, alpha: 0.7, learn_alpha: true, beta_init: 0.05 };
    let mut model = SeModel::new(&cfg, &mut rng).unwrap();
    jitter_biases(&mut model.key_net, &mut rng);
    jitter_biases(&mut model.query_net, &mut rng);
    model
}

pub fn small_heads(seed: u64, embed_dim: usize) -> BiasHeads {
    let mut rng = Rng::new(seed);
    let cfg = BiasHeadsConfig { hidden: vec![6, 5], n_classes: 2 };
    let mut heads = BiasHeads::new(embed_dim, &cfg, &mut rng).unwrap();
    jitter_biases(&mut heads.g, &mut rng);
    jitter_biases(&mut heads.g_prime, &mut rng);
    heads
}

/// Checks every parameter group of the self-expression loss.
pub fn check_se_loss(model: &SeModel, batch: &Matrix, gamma: f64, delta: f64) -> GradCheckReport {
    let se = model.se_loss(batch, gamma, delta).unwrap();
    let mut scratch = model.clone();
    finite_diff_check(
        |p| {
            scratch.set_flat(p);
            Ok(scratch.se_loss(batch, gamma, delta)?.loss)
        },
        &model.to_flat(),
        &se.grads.to_flat(),
        GRAD_TOL,
        None,
    )
    .unwrap()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadLoss {
    CrossEntropy,
    Confusion,
}

fn head_loss(head: &MlpParams, emb: &Matrix, labels: &[usize], which: HeadLoss) -> invsen::Result<f64> {
    let (p, _) = bias_posterior(head, emb, Mode::Train)?;
    match which {
        HeadLoss::CrossEntropy => cross_entropy_loss(&p, labels),
        HeadLoss::Confusion => Ok(entropy_confusion_loss(&p)),
    }
}

/// Checks a head loss with respect to the head parameters and to the embedding.
pub fn check_head_loss(
    head: &MlpParams,
    emb: &Matrix,
    labels: &[usize],
    which: HeadLoss,
) -> (GradCheckReport, GradCheckReport) {
    let pass = head_pass(head, emb, labels, Mode::Train).unwrap();
    let emb_grad = match which {
        HeadLoss::CrossEntropy => pass.emb_grad_ce.clone(),
        HeadLoss::Confusion => pass.emb_grad_conf.clone(),
    };
    let param_grads = match which {
        HeadLoss::CrossEntropy => pass.param_grads.clone(),
        HeadLoss::Confusion => head.backward(&pass.cache, &entropy_confusion_logit_grad(&pass.probs)).unwrap().0,
    };
    let mut scratch = head.clone();
    let params = finite_diff_check(
        |p| {
            scratch.set_flat(p);
            head_loss(&scratch, emb, labels, which)
        },
        &head.to_flat(),
        &param_grads.to_flat(),
        GRAD_TOL,
        None,
    )
    .unwrap();
    let (rows, cols) = emb.shape();
    let through = finite_diff_check(
        |x| head_loss(head, &Matrix::new(rows, cols, x.to_vec())?, labels, which),
        emb.data(),
        emb_grad.data(),
        GRAD_TOL,
        None,
    )
    .unwrap();
    (params, through)
}

/// Cross-entropy or confusion of a head, differentiated all the way into the
/// key network parameters, or the query network when `query` is set.
pub fn check_head_loss_through_net(
    model: &SeModel,
    head: &MlpParams,
    batch: &Matrix,
    labels: &[usize],
    which: HeadLoss,
    query: bool,
) -> GradCheckReport {
    let (emb, cache) = model.embed(batch, Mode::Train).unwrap();
    let side = if query { &emb.v } else { &emb.u };
    let pass = head_pass(head, side, labels, Mode::Train).unwrap();
    let g = match which {
        HeadLoss::CrossEntropy => pass.emb_grad_ce,
        HeadLoss::Confusion => pass.emb_grad_conf,
    };
    let zero = Matrix::zeros(g.rows(), g.cols());
    let (key, qry) = if query {
        model.backward_embedding(&cache, &zero, &g).unwrap()
    } else {
        model.backward_embedding(&cache, &g, &zero).unwrap()
    };
    let net = if query { &model.query_net } else { &model.key_net };
    let mut scratch = net.clone();
    finite_diff_check(
        |p| {
            scratch.set_flat(p);
            let (e, _) = scratch.forward(batch, Mode::Train)?;
            head_loss(head, &e, labels, which)
        },
        &net.to_flat(),
        &(if query { qry } else { key }).to_flat(),
        GRAD_TOL,
        None,
    )
    .unwrap()
}

pub fn embedding(u: Matrix, v: Matrix) -> Embedding {
    Embedding { u, v }
}

// ---------------------------------------------------------------- metrics

pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Accuracy by trying every injective relabeling of the predicted labels.
pub fn brute_force_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let k = kp.max(kt);
    let mut best = 0;
    for perm in permutations(k) {
        let hits = pred.iter().zip(truth).filter(|(&p, &t)| perm[p] == t).count();
        best = best.max(hits);
    }
    best as f64 / pred.len() as f64
}

/// Adjusted Rand index from an explicit loop over all unordered pairs.
pub fn pair_count_ari(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let (mut both, mut only_p, mut only_t, mut neither) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in i + 1..n {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => both += 1,
                (true, false) => only_p += 1,
                (false, true) => only_t += 1,
                (false, false) => neither += 1,
            }
        }
    }
    let total = (both + only_p + only_t + neither) as f64;
    let same_p = (both + only_p) as f64;
    let same_t = (both + only_t) as f64;
    let expected = same_p * same_t / total;
    let max = 0.5 * (same_p + same_t);
    if max == expected {
        return if both as f64 == max { 1.0 } else { 0.0 };
    }
    (both as f64 - expected) / (max - expected)
}

/// Plug-in NMI from a directly accumulated joint count table.
pub fn direct_nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let kp = pred.iter().max().unwrap() + 1;
    let kt = truth.iter().max().unwrap() + 1;
    let mut joint = vec![vec![0usize; kt]; kp];
    for (&p, &t) in pred.iter().zip(truth) {
        joint[p][t] += 1;
    }
    let ca: Vec<usize> = joint.iter().map(|r| r.iter().sum()).collect();
    let cb: Vec<usize> = (0..kt).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let h = |c: &[usize]| -> f64 {
        -c.iter()
            .filter(|&&x| x > 0)
            .map(|&x| {
                let p = x as f64 / n;
                p * p.ln()
            })
            .sum::<f64>()
    };
    let mut mi = 0.0;
    for a in 0..kp {
        for b in 0..kt {
            let c = joint[a][b];
            if c > 0 {
                let p = c as f64 / n;
                mi += p * (c as f64 * n / (ca[a] as f64 * cb[b] as f64)).ln();
            }
        }
    }
    let groups = |c: &[usize]| c.iter().filter(|&&x| x > 0).count();
    match (groups(&ca), groups(&cb)) {
        (1, 1) => 1.0,
        (1, _) | (_, 1) => 0.0,
        _ => mi / (h(&ca) * h(&cb)).sqrt(),
    }
}

/// Labelings in canonical form (first appearance order) with at most `k` labels.
pub fn canonical_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(n);
    fn grow(n: usize, k: usize, used: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for l in 0..(used + 1).min(k) {
            cur.push(l);
            grow(n, k, used.max(l + 1), cur, out);
            cur.pop();
        }
    }
    grow(n, k, 0, &mut cur, &mut out);
    out
}

/// Every labeling of `n` items with labels below `k`.
pub fn all_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let total = k.pow(n as u32);
    (0..total)
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let l = code % k;
                    code /= k;
                    l
                })
                .collect()
        })
        .collect()
}

// --------------------------------------------------------------- spectral

/// Cyclic Jacobi eigenvalue iteration; eigenvalues ascending with column vectors.
pub fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i][i].partial_cmp(&m[j][j]).unwrap());
    let values = order.iter().map(|&i| m[i][i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[r][order[c]]);
    (values, vectors)
}

/// Block-diagonal affinity with random positive weights inside blocks,
/// rows shuffled by `perm` (row `i` of the output is original sample `perm[i]`).
pub fn block_affinity(sizes: &[usize], rng: &mut Rng) -> (AffinityMatrix, Vec<usize>) {
    let n: usize = sizes.iter().sum();
    let mut block = Vec::with_capacity(n);
    for (b, &s) in sizes.iter().enumerate() {
        block.extend(std::iter::repeat_n(b, s));
    }
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            if block[i] == block[j] {
                let x = rng.uniform(0.1, 1.0);
                w.row_mut(i)[j] = x;
                w.row_mut(j)[i] = x;
            }
        }
    }
    let perm = rng.permutation(n);
    let shuffled = Matrix::from_fn(n, n, |i, j| w[(perm[i], perm[j])]);
    let labels = perm.iter().map(|&p| block[p]).collect();
    (AffinityMatrix::new(shuffled).unwrap(), labels)
}

/// Connected components of the graph with an edge wherever `a > 0`.
pub fn connected_components(a: &AffinityMatrix) -> Vec<usize> {
    let n = a.len();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = next;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if a.matrix()[(i, j)] > 0.0 && comp[j] == usize::MAX {
                    comp[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    comp
}

/// Minimum WCSS over every assignment of `x`'s rows to `k` clusters.
pub fn brute_force_wcss(x: &Matrix, k: usize) -> (f64, Vec<usize>) {
    let n = x.rows();
    let mut best = (f64::INFINITY, Vec::new());
    let mut labels = vec![0usize; n];
    loop {
        let wcss = wcss_of(x, &labels, k);
        if wcss < best.0 - 1e-12 {
            best = (wcss, labels.clone());
        }
        // Odometer increment; fixing label[0] = 0 removes one symmetry.
        let mut i = n - 1;
        loop {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            if i == 1 {
                return best;
            }
            i -= 1;
        }
    }
}

pub fn wcss_of(x: &Matrix, labels: &[usize], k: usize) -> f64 {
    let dim = x.cols();
    let mut total = 0.0;
    for c in 0..k {
        let members: Vec<usize> = (0..x.rows()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mut mean = vec![0.0; dim];
        for &i in &members {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v / members.len() as f64;
            }
        }
        for &i in &members {
            total += x.row(i).iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
    }
    total
}

pub fn labels_of(c: &ClusterLabels) -> Vec<usize> {
    c.labels().to_vec()
}
