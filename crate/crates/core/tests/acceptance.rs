//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line for each; exits non-zero if any fails.
//!
//! Criterion 5 reads MNIST from `LMTRIPLET_MNIST_DIR` (default
//! `<workspace>/data/mnist`). Pass substrings as arguments to run a subset,
//! e.g. `cargo test --test acceptance -- knn`.

use std::io::Write;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use lmtriplet::data::{load_mnist_dir, load_mnist_idx, make_blobs, BlobsConfig, Dataset, Split};
use lmtriplet::knn::{choose_k, take_snapshot, Metric, NeighborIndex};
use lmtriplet::losses::{combined_loss, fixed_margin_loss, local_margin_loss, LossWeights, Margins};
use lmtriplet::math::Matrix;
use lmtriplet::mining::Triplet;
use lmtriplet::network::gradcheck::{check_params, rel_err};
use lmtriplet::network::{softmax_head_loss, Activation, EmbeddingNet, LayerSpec, NetSpec, Shape, SoftmaxHead};
use lmtriplet::training::{Method, TrainConfig, Trainer};
use lmtriplet::verify::{check_optimal_condition, corollary_margin_check, purity_check, QueryStatus, Reading};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

const GRAD_TOL: f64 = 1e-4;
const INSTANCES: usize = 50;

/// Worst relative error of the input gradient of `net` over every input
/// entry, with the same kink-avoiding step schedule as the parameter check.
fn input_grad_err(net: &EmbeddingNet, x: &Matrix, up: &Matrix) -> f64 {
    let (_, cache) = net.forward(x).unwrap();
    let (_, dx) = net.backward_with_input(&cache, up).unwrap();
    let probe = |x: &Matrix| {
        let (y, c) = net.forward(x).unwrap();
        let v: f64 = y.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum();
        (v, c)
    };
    let mut worst = 0.0f64;
    for j in 0..x.as_slice().len() {
        let mut h = 1e-4;
        while h >= 1e-9 {
            let mut xp = x.clone();
            xp.as_mut_slice()[j] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[j] -= h;
            let (lp, cp) = probe(&xp);
            let (lm, cm) = probe(&xm);
            if cp.same_branches(&cm) {
                worst = worst.max(rel_err(dx.as_slice()[j], (lp - lm) / (2.0 * h)));
                break;
            }
            h /= 10.0;
        }
    }
    worst
}

/// Parameter and input gradients of `INSTANCES` random networks built by
/// `make`; returns the worst relative error.
fn net_suite(seed: u64, mut make: impl FnMut(&mut ChaCha8Rng) -> (NetSpec, usize)) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let (spec, batch) = make(&mut rng);
        let mut net = EmbeddingNet::new(spec, seed * 1000 + i as u64);
        // He init has zero biases; random biases exercise their gradients
        for v in net.params_mut() {
            if *v == 0.0 {
                *v = rng.random_range(-0.3..0.3);
            }
        }
        let x = rand_matrix(&mut rng, batch, net.spec().input_dim());
        let up = rand_matrix(&mut rng, batch, net.spec().output_dim());
        let n = net.param_count();
        let r = check_params(&mut net, &x, &up, 0..n).map_err(|e| e.to_string())?;
        ensure(r.skipped == 0, || format!("instance {i}: {} parameters had no kink-free step", r.skipped))?;
        worst = worst.max(r.max_rel_err).max(input_grad_err(&net, &x, &up));
    }
    Ok(worst)
}

fn dense_spec(rng: &mut ChaCha8Rng, activation: Activation) -> (NetSpec, usize) {
    let (i, o) = (rng.random_range(1..7), rng.random_range(1..6));
    let layer = LayerSpec::Dense {
        in_dim: i,
        out_dim: o,
        activation,
    };
    (NetSpec::new(Shape::flat(i), vec![layer]).unwrap(), rng.random_range(1..4))
}

fn conv_spec(rng: &mut ChaCha8Rng, activation: Activation, pool: bool) -> (NetSpec, usize) {
    let (h, w) = if pool {
        (2 * rng.random_range(1..4), 2 * rng.random_range(1..4))
    } else {
        (rng.random_range(2..6), rng.random_range(2..6))
    };
    let (ci, co) = (rng.random_range(1..4), rng.random_range(1..4));
    let (kh, kw) = (2 * rng.random_range(0..2) + 1, 2 * rng.random_range(0..2) + 1);
    let mut layers = vec![LayerSpec::Conv2d {
        kh,
        kw,
        in_channels: ci,
        out_channels: co,
        activation,
    }];
    let (oh, ow) = if pool {
        layers.push(LayerSpec::MaxPool2);
        (h / 2, w / 2)
    } else {
        (h, w)
    };
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense {
        in_dim: oh * ow * co,
        out_dim: 2,
        activation: Activation::None,
    });
    (NetSpec::new(Shape::new(h, w, ci), layers).unwrap(), rng.random_range(1..3))
}

/// Central differences of a scalar function of a flat vector, shrinking the
/// step while `same_piece(plus, minus)` says the probes straddle a kink.
fn fd_vec<S>(
    x: &[f64],
    j: usize,
    mut f: impl FnMut(&[f64]) -> (f64, S),
    same_piece: impl Fn(&S, &S) -> bool,
) -> Option<f64> {
    let mut h = 1e-5;
    while h >= 1e-10 {
        let mut xp = x.to_vec();
        xp[j] += h;
        let mut xm = x.to_vec();
        xm[j] -= h;
        let ((lp, sp), (lm, sm)) = (f(&xp), f(&xm));
        if same_piece(&sp, &sm) {
            return Some((lp - lm) / (2.0 * h));
        }
        h /= 10.0;
    }
    None
}

fn triplet_loss_suite(local: bool) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(if local { 12 } else { 11 });
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let dim = rng.random_range(1..9);
        let v: Vec<f64> = (0..3 * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = rng.random_range(0.0..4.0);
        let r = rng.random_range(0.0..1.5);
        let loss = |v: &[f64]| {
            let (a, p, n) = (&v[..dim], &v[dim..2 * dim], &v[2 * dim..]);
            if local {
                local_margin_loss(a, p, n, r, 3.0, 1e-3).unwrap()
            } else {
                fixed_margin_loss(a, p, n, m).unwrap()
            }
        };
        let l = loss(&v);
        let grad: Vec<f64> = [l.grad_a, l.grad_p, l.grad_n].iter().flat_map(|g| g.as_slice().to_vec()).collect();
        for j in 0..3 * dim {
            let fd = fd_vec(&v, j, |x| {
                let l = loss(x);
                (l.value, l.active)
            }, |a, b| a == b)
            .ok_or_else(|| format!("instance {i}: no kink-free step"))?;
            worst = worst.max(rel_err(grad[j], fd));
        }
    }
    Ok(worst)
}

fn combined_suite() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let (n, dim) = (rng.random_range(4..9), rng.random_range(1..5));
        let labels: Vec<usize> = (0..n).map(|j| j % 2).collect();
        let emb = rand_matrix(&mut rng, n, dim);
        let t = rng.random_range(1..6);
        let triplets: Vec<Triplet> = (0..t)
            .map(|_| loop {
                let (a, p, q) = (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n));
                if let Ok(tr) = Triplet::new(a, p, q, &labels) {
                    break tr;
                }
            })
            .collect();
        let radii: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..0.5)).collect();
        let mut w = LossWeights::mnist();
        w.w_ss = rng.random_range(0.0..1.0);
        w.fixed_margin = rng.random_range(0.0..2.0);
        let local = i % 2 == 0;
        let eval = |x: &[f64]| {
            let m = Matrix::new(n, dim, x.to_vec()).unwrap();
            let margins = if local { Margins::Local(&radii) } else { Margins::Fixed };
            combined_loss(&m, &triplets, margins, &w).unwrap()
        };
        let l = eval(emb.as_slice());
        for j in 0..n * dim {
            let fd = fd_vec(emb.as_slice(), j, |x| {
                let l = eval(x);
                (l.value, l.active)
            }, |a, b| a == b)
            .ok_or_else(|| format!("instance {i}: no kink-free step"))?;
            worst = worst.max(rel_err(l.grad.as_slice()[j], fd));
        }
    }
    Ok(worst)
}

fn softmax_suite() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let (n, dim, classes) = (rng.random_range(1..5), rng.random_range(1..6), rng.random_range(2..6));
        let emb = rand_matrix(&mut rng, n, dim);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let head = SoftmaxHead::new(dim, classes, i as u64);
        let l = softmax_head_loss(&emb, &labels, &head).unwrap();
        for j in 0..n * dim {
            let fd = fd_vec(emb.as_slice(), j, |x| {
                let m = Matrix::new(n, dim, x.to_vec()).unwrap();
                (softmax_head_loss(&m, &labels, &head).unwrap().value, ())
            }, |_, _| true)
            .unwrap();
            worst = worst.max(rel_err(l.grad_embeddings.as_slice()[j], fd));
        }
        for j in 0..head.params().len() {
            let fd = fd_vec(head.params(), j, |p| {
                let h = SoftmaxHead::from_params(dim, classes, p.to_vec()).unwrap();
                (softmax_head_loss(&emb, &labels, &h).unwrap().value, ())
            }, |_, _| true)
            .unwrap();
            worst = worst.max(rel_err(l.grad_params[j], fd));
        }
    }
    Ok(worst)
}

fn criterion_1() -> Outcome {
    let suites: Vec<(&str, Result<f64, String>)> = vec![
        ("dense", net_suite(1, |r| dense_spec(r, Activation::None))),
        ("conv", net_suite(2, |r| conv_spec(r, Activation::None, false))),
        ("pool", net_suite(3, |r| conv_spec(r, Activation::None, true))),
        (
            "leaky_relu",
            net_suite(4, |r| {
                if r.random_bool(0.5) {
                    dense_spec(r, Activation::LeakyRelu)
                } else {
                    conv_spec(r, Activation::LeakyRelu, false)
                }
            }),
        ),
        ("fixed_margin", triplet_loss_suite(false)),
        ("local_margin", triplet_loss_suite(true)),
        ("combined", combined_suite()),
        ("softmax", softmax_suite()),
    ];
    let mut parts = Vec::new();
    for (name, r) in suites {
        let worst = r.map_err(|e| format!("{name}: {e}"))?;
        ensure(worst < GRAD_TOL, || format!("{name}: max rel err {worst:.2e} >= {GRAD_TOL:e}"))?;
        parts.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("{INSTANCES} instances each, max rel err: {}", parts.join(", ")))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut queries = 0;
    for case in 0..200 {
        let n = rng.random_range(1..=1000);
        let dim = rng.random_range(1..=32);
        let classes = rng.random_range(1..=6);
        // integer grids force distance ties in some cases
        let grid = case % 4 == 0;
        let pts: Vec<f64> = (0..n * dim)
            .map(|_| {
                if grid {
                    rng.random_range(0..3) as f64
                } else {
                    rng.random_range(-5.0..5.0)
                }
            })
            .collect();
        let points = Matrix::new(n, dim, pts).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let index = NeighborIndex::build(points.clone(), labels.clone(), Metric::Euclidean).unwrap();
        for _ in 0..5 {
            let k = rng.random_range(1..=50.min(n));
            let q: Vec<f64> = if grid {
                (0..dim).map(|_| rng.random_range(0..3) as f64).collect()
            } else {
                (0..dim).map(|_| rng.random_range(-6.0..6.0)).collect()
            };
            // exhaustive oracle: every point, sorted by (distance, id)
            let mut all: Vec<(f64, usize)> = points
                .iter_rows()
                .enumerate()
                .map(|(id, p)| (Metric::Euclidean.distance(&q, p), id))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want = &all[..k];
            for &(d, id) in want {
                let naive = q.iter().zip(points.row(id)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                ensure((d - naive).abs() <= 1e-12 * naive.max(1.0), || format!("distance {d} vs {naive}"))?;
            }
            let got = index.query_knn(&q, k, None).unwrap();
            let got: Vec<(f64, usize)> = got.iter().map(|nb| (nb.dist, nb.id)).collect();
            ensure(got == want, || format!("case {case}: neighbors differ (n {n}, dim {dim}, k {k})"))?;

            let mut votes = vec![0usize; classes];
            for &(_, id) in want {
                votes[labels[id]] += 1;
            }
            let top = *votes.iter().max().unwrap();
            let pred = want.iter().map(|&(_, id)| labels[id]).find(|&c| votes[c] == top).unwrap();
            let c = index.knn_classify(&q, k).unwrap();
            ensure(c.class == pred, || format!("case {case}: predicted {} vs oracle {pred}", c.class))?;
            for (cls, &v) in votes.iter().enumerate() {
                let p = c.posterior().get(&cls).copied().unwrap_or(0.0);
                ensure(p == v as f64 / k as f64, || format!("case {case}: posterior of class {cls}"))?;
            }
            queries += 1;
        }
    }
    Ok(format!("200 datasets, {queries} queries identical to the exhaustive scan"))
}

/// Four 8-dimensional blob classes: 200 training samples per class and
/// `test_per_class` held-out samples per class.
fn c34_data(test_per_class: usize) -> (Dataset, Dataset) {
    let all = make_blobs(&BlobsConfig::new(4, 200 + test_per_class, 8, 5.0, 1.0, 11)).unwrap();
    all.partition(800, Split::Train, Split::Test, 11).unwrap()
}

fn c34_trainer(method: Method, train: &Dataset) -> Trainer {
    let mut cfg = TrainConfig::new(method);
    cfg.lr = 1e-3;
    cfg.batch_size = 64;
    cfg.k = Some(choose_k(train.len()));
    cfg.seed = 1;
    let net = EmbeddingNet::new(NetSpec::mlp(8, &[64, 16]).unwrap(), 2);
    Trainer::new(net, cfg, train.num_classes()).unwrap()
}

/// Independent purity oracle: full sort of the training set per query.
fn oracle_statuses(train: &Matrix, labels: &[usize], queries: &Matrix, k: usize) -> Vec<QueryStatus> {
    let n = train.rows();
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    // k-th nearest other point of every training sample
    let radius: Vec<f64> = (0..n)
        .map(|a| {
            let mut ds: Vec<f64> = (0..n).filter(|&j| j != a).map(|j| d(train.row(a), train.row(j))).collect();
            ds.sort_by(f64::total_cmp);
            ds[k - 1]
        })
        .collect();
    queries
        .iter_rows()
        .map(|q| {
            let mut ds: Vec<(f64, usize)> = (0..n).map(|j| (d(q, train.row(j)), j)).collect();
            ds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let (dist, a) = ds[0];
            if dist > radius[a] {
                QueryStatus::Outlier
            } else if ds[..k].iter().all(|&(_, j)| labels[j] == labels[a]) {
                QueryStatus::Pure
            } else {
                QueryStatus::Impure
            }
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let (train, test) = c34_data(150);
    let k = choose_k(train.len());
    let mut trainer = c34_trainer(Method::LmMining, &train);
    let mut last_active = 1.0;
    for _ in 0..200 {
        last_active = trainer.run_epoch(&train).map_err(|e| e.to_string())?.hinge_active_fraction.unwrap();
        if last_active < 0.01 {
            break;
        }
    }
    let epochs = trainer.epochs_run();
    ensure(last_active < 0.01, || format!("hinge-active fraction still {last_active} after {epochs} epochs"))?;

    let w = trainer.config().weights;
    let emb = trainer.net().embed(train.samples()).unwrap();
    let labels = train.labels();
    let index = NeighborIndex::build(emb.clone(), labels.to_vec(), Metric::Euclidean).unwrap();
    let snap = take_snapshot(&index, k, epochs).unwrap();

    // anchors whose every (p, n) hinge is inactive under the final snapshot
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let inactive: Vec<usize> = (0..emb.rows())
        .filter(|&a| {
            let Some(r) = snap.d_ak_pos(a) else { return false };
            let (mut max_p, mut min_n) = (0.0f64, f64::INFINITY);
            for j in (0..emb.rows()).filter(|&j| j != a) {
                let d = sq(emb.row(a), emb.row(j));
                if labels[j] == labels[a] {
                    max_p = max_p.max(d);
                } else {
                    min_n = min_n.min(d);
                }
            }
            max_p - min_n + w.c_b * r + w.eps <= 0.0
        })
        .collect();
    let opt = check_optimal_condition(&emb, labels, k, w.c_b, w.eps, Reading::Squared).map_err(|e| e.to_string())?;
    for &a in &inactive {
        let r = opt.residuals[a].ok_or_else(|| format!("anchor {a} skipped"))?;
        ensure(r <= w.eps, || format!("inactive anchor {a} has residual {r} > eps"))?;
    }

    let q_all = trainer.net().embed(test.samples()).unwrap();
    let pre = purity_check(&emb, labels, &q_all, k).map_err(|e| e.to_string())?;
    let keep: Vec<usize> = pre
        .queries
        .iter()
        .filter(|q| q.status != QueryStatus::Outlier)
        .map(|q| q.query_id)
        .take(400)
        .collect();
    ensure(keep.len() == 400, || format!("only {} non-outlier held-out queries", keep.len()))?;
    let queries = q_all.select_rows(&keep);
    let report = purity_check(&emb, labels, &queries, k).map_err(|e| e.to_string())?;
    let oracle = oracle_statuses(&emb, labels, &queries, k);
    let got: Vec<QueryStatus> = report.queries.iter().map(|q| q.status).collect();
    ensure(got == oracle, || "purity statuses differ from the exhaustive oracle".into())?;
    ensure(report.outlier_count == 0, || "selected queries include outliers".into())?;
    let purity = report.purity();
    ensure(purity >= 0.99, || format!("purity {purity:.4} < 0.99"))?;

    let euclid = check_optimal_condition(&emb, labels, k, w.c_b, w.eps, Reading::Euclidean).map_err(|e| e.to_string())?;
    if euclid.violations.is_empty() {
        ensure(report.impure_count == 0, || "zero violations but impure queries".into())?;
    }
    Ok(format!(
        "{epochs} epochs, active {:.4}; {} inactive anchors all with residual <= eps; \
         purity {:.4} over 400 non-outlier queries; euclidean violations {}",
        last_active,
        inactive.len(),
        purity,
        euclid.violations.len()
    ))
}

fn criterion_4() -> Outcome {
    let (train, test) = c34_data(100);
    let k = choose_k(train.len());
    let mut trainer = c34_trainer(Method::Mm, &train);
    for _ in 0..30 {
        trainer.run_epoch(&train).map_err(|e| e.to_string())?;
    }
    let emb = trainer.net().embed(train.samples()).unwrap();
    let labels = train.labels();
    let max_d_ak = take_snapshot(&NeighborIndex::build(emb.clone(), labels.to_vec(), Metric::Euclidean).unwrap(), k, 0)
        .unwrap()
        .max_d_ak();
    let m = 3.0 * max_d_ak * (1.0 + 1e-6);
    let cor = corollary_margin_check(&emb, labels, k, m).map_err(|e| e.to_string())?;
    ensure(cor.max_d_ak == max_d_ak, || "corollary check reports a different max d_ak".into())?;
    ensure(cor.margin_sufficient, || format!("m {m} not above 3 max d_ak {max_d_ak}"))?;
    ensure(cor.hinge_violations == 0, || {
        format!("{} anchors violate the fixed margin m = {m:.4}; premise not reached", cor.hinge_violations)
    })?;
    let queries = trainer.net().embed(test.samples()).unwrap();
    let p = purity_check(&emb, labels, &queries, k).map_err(|e| e.to_string())?;
    ensure(p.impure_count == 0, || format!("{} impure non-outlier queries", p.impure_count))?;
    Ok(format!(
        "max d_ak {max_d_ak:.3}, m {m:.3}, all hinges inactive; {} of {} non-outlier queries pure ({} outliers)",
        p.pure_count,
        p.n_queries - p.outlier_count,
        p.outlier_count
    ))
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("LMTRIPLET_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

const C5_EPOCHS: usize = 20;
const C5_RERUN_EPOCHS: usize = 2;

struct C5Run {
    accuracy: f64,
    predictions: Vec<usize>,
    early_params: Vec<f64>,
}

fn c5_trainer(method: Method, batch: usize, train: &Dataset) -> Trainer {
    let mut cfg = TrainConfig::new(method);
    cfg.batch_size = batch;
    cfg.k = Some(choose_k(train.len()));
    cfg.seed = 7;
    Trainer::new(EmbeddingNet::new(NetSpec::mnist(), 7), cfg, train.num_classes()).unwrap()
}

fn c5_run(method: Method, batch: usize, train: &Dataset, test: &Dataset) -> Result<C5Run, String> {
    let mut t = c5_trainer(method, batch, train);
    let mut early = Vec::new();
    for e in 1..=C5_EPOCHS {
        t.run_epoch(train).map_err(|e| e.to_string())?;
        if e == C5_RERUN_EPOCHS {
            early = t.net().params().to_vec();
        }
    }
    let eval = t.knn_score(train, test).map_err(|e| e.to_string())?;
    Ok(C5Run {
        accuracy: eval.accuracy,
        predictions: eval.predictions,
        early_params: early,
    })
}

fn criterion_5() -> Outcome {
    let dir = mnist_dir();
    let (train, test) = load_mnist_dir(&dir).map_err(|e| e.to_string())?;
    let train = train.stratified_subset(5000, 7).map_err(|e| e.to_string())?;
    let test = test.stratified_subset(1000, 8).map_err(|e| e.to_string())?;
    let k = choose_k(train.len());
    ensure(k == 71, || format!("k = {k}"))?;

    let runs = [
        (Method::Lm, 128),
        (Method::LmMining, 128),
        (Method::MmHardmin, 32),
    ];
    let mut results = Vec::new();
    for (method, batch) in runs {
        let start = Instant::now();
        let r = c5_run(method, batch, &train, &test)?;
        say(&format!(
            "      {method} (batch {batch}): {:.2}% in {:.0}s",
            100.0 * r.accuracy,
            start.elapsed().as_secs_f64()
        ));
        results.push((method, batch, r));
    }
    let acc = |m: Method| results.iter().find(|r| r.0 == m).unwrap().2.accuracy;
    let (lm, lmm, hard) = (acc(Method::Lm), acc(Method::LmMining), acc(Method::MmHardmin));

    // reruns: the first epochs of every method must reproduce bit for bit
    let mut deterministic = true;
    for (method, batch, r) in &results {
        let mut t = c5_trainer(*method, *batch, &train);
        for _ in 0..C5_RERUN_EPOCHS {
            t.run_epoch(&train).map_err(|e| e.to_string())?;
        }
        deterministic &= t.net().params() == r.early_params.as_slice();
    }
    // and the cheapest full run end to end
    let again = c5_run(Method::MmHardmin, 32, &train, &test)?;
    let first = &results[2].2;
    deterministic &= again.predictions == first.predictions && again.accuracy == first.accuracy;

    let verdict = |ok: bool| if ok { "ok" } else { "FAILED" };
    let a = lm >= 0.90 && lmm >= 0.90;
    let gap = lm.max(lmm) - hard;
    let b = gap >= 0.05;
    let summary = format!(
        "lm {:.2}%, lm_mining {:.2}%, mm_hardmin {:.2}% ({C5_EPOCHS} epochs, k {k}); \
         (a) both >= 90%: {}; (b) gap {:.2} points >= 5: {}; (c) reruns identical: {}",
        100.0 * lm,
        100.0 * lmm,
        100.0 * hard,
        verdict(a),
        100.0 * gap,
        verdict(b),
        verdict(deterministic)
    );
    ensure(a && b && deterministic, || summary.clone())?;
    Ok(summary)
}

fn criterion_6() -> Outcome {
    for (n, k) in [(54_000, 233), (45_000, 213), (273, 17)] {
        ensure(choose_k(n) == k, || format!("choose_k({n}) = {}, expected {k}", choose_k(n)))?;
    }
    ensure(choose_k(180) == 14, || format!("choose_k(180) = {}", choose_k(180)))?;
    Ok("54000->233, 45000->213, 273->17; 180->14 = ceil(sqrt(180)), not 15".into())
}

fn criterion_7() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_lmtriplet");
    let mut files = Vec::new();
    for rep in 0..2 {
        let dir = root.path().join(format!("run{rep}"));
        let dir_s = dir.to_str().unwrap();
        let train = Command::new(bin)
            .args(["train", "--method", "lm_mining", "--data", "blobs", "--classes", "3", "--per-class", "60"])
            .args(["--dim", "4", "--epochs", "5", "--batch-size", "32", "--lr", "0.001", "--seed", "5"])
            .args(["--out", dir_s])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(train.status.success(), || String::from_utf8_lossy(&train.stderr).into_owned())?;
        let eval = Command::new(bin)
            .args(["eval", "--run", dir_s])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(eval.status.success(), || String::from_utf8_lossy(&eval.stderr).into_owned())?;
        let read = |f: &str| std::fs::read(dir.join(f)).map_err(|e| format!("{f}: {e}"));
        files.push((read("epochs.jsonl")?, read("eval.json")?, read("checkpoint.json")?, eval.stdout));
    }
    ensure(files[0].0 == files[1].0, || "epoch logs differ".into())?;
    ensure(files[0].1 == files[1].1, || "eval reports differ".into())?;
    ensure(files[0].2 == files[1].2, || "checkpoints differ".into())?;
    ensure(files[0].3 == files[1].3, || "eval output differs".into())?;
    let lines = String::from_utf8_lossy(&files[0].0).lines().count();
    Ok(format!("two train+eval runs: {lines}-line epoch logs, eval reports and checkpoints byte-identical"))
}

fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut b = magic.to_be_bytes().to_vec();
    for d in dims {
        b.extend_from_slice(&d.to_be_bytes());
    }
    b.extend_from_slice(payload);
    b
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (img, lab) = (tmp.path().join("img"), tmp.path().join("lab"));
    let pixels: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 4) as u8).collect();
    std::fs::write(&img, idx_bytes(0x803, &[3, 4, 5], &pixels)).unwrap();
    std::fs::write(&lab, idx_bytes(0x801, &[3], &[9, 0, 4])).unwrap();
    let ds = load_mnist_idx(&img, &lab).map_err(|e| e.to_string())?;
    ensure(ds.labels() == [9, 0, 4], || "fixture labels".into())?;
    ensure(ds.shape() == Shape::new(4, 5, 1), || "fixture shape".into())?;
    let round = ds.samples().as_slice().iter().map(|v| (v * 255.0).round() as u8).collect::<Vec<_>>();
    ensure(round == pixels, || "fixture pixels".into())?;

    std::fs::write(&img, idx_bytes(0x801, &[3, 4, 5], &pixels)).unwrap();
    let e = load_mnist_idx(&img, &lab).unwrap_err();
    ensure(e.code() == "bad_magic", || format!("swapped magic gave {}", e.code()))?;
    std::fs::write(&img, idx_bytes(0x803, &[3, 4, 5], &pixels)).unwrap();
    std::fs::write(&lab, idx_bytes(0x803, &[3], &[9, 0, 4])).unwrap();
    let e = load_mnist_idx(&img, &lab).unwrap_err();
    ensure(e.code() == "bad_magic", || format!("label magic gave {}", e.code()))?;

    let (train, test) = load_mnist_dir(&mnist_dir()).map_err(|e| e.to_string())?;
    ensure(train.len() == 60_000 && test.len() == 10_000, || {
        format!("{} / {} samples", train.len(), test.len())
    })?;
    for ds in [&train, &test] {
        ensure(ds.labels().iter().all(|&l| l <= 9), || "label outside 0..9".into())?;
        ensure(ds.shape() == Shape::new(28, 28, 1), || "image shape".into())?;
    }
    Ok("fixtures round-trip, wrong magic rejected, MNIST 60000/10000 with labels 0..9".into())
}

fn say(line: &str) {
    // direct write: not swallowed by output capture
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 gradients", criterion_1),
        ("2 knn oracle", criterion_2),
        ("3 theorem purity", criterion_3),
        ("4 corollary margin", criterion_4),
        ("5 mnist ordering", criterion_5),
        ("6 choose_k", criterion_6),
        ("7 determinism", criterion_7),
        ("8 idx parsing", criterion_8),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|flt| name.contains(flt.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => say(&format!("PASS criterion {name} ({secs:.1}s): {detail}")),
            Err(detail) => {
                failed += 1;
                say(&format!("FAIL criterion {name} ({secs:.1}s): {detail}"));
            }
        }
    }
    if failed > 0 {
        say(&format!("{failed} criteria failed"));
        std::process::exit(1);
    }
}
