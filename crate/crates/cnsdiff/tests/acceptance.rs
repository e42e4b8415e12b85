//! Acceptance criteria, one PASS/FAIL line each. The process exits non-zero
//! when any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use cnsdiff::dataset::write_dataset;
use cnsdiff::report::WallClock;
use cnsdiff::splitfile::write_split;
use cnsdiff_core::causal::{
    causal_regularizer, causal_regularizer_grad, kl, CausalPair, EnvModel, HeadGrads,
};
use cnsdiff_core::corpus::{
    build_split, generate_synthetic, popularity_buckets, Dataset, RawRecord, ShiftKind,
    SplitBundle, SplitOptions, SyntheticSpec,
};
use cnsdiff_core::diffusion::{
    forward_sample, sampling_loss, sampling_loss_grad, DenoiserNet, DenoiserShape, NoiseSchedule,
};
use cnsdiff_core::eval::{top_k, user_metrics};
use cnsdiff_core::gradcheck::{run_gradcheck, tiny_config, ABS_FLOOR, REL_TOL};
use cnsdiff_core::optim::{Optimizer, OptimizerKind};
use cnsdiff_core::rng::{self, Stream};
use cnsdiff_core::sampler::SamplerKind;
use cnsdiff_core::trainer::{fit, train_epoch, Model, TrainConfig};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within_budget(o: Outcome, secs: f64, budget: f64) -> Outcome {
    if secs < budget {
        o
    } else {
        outcome(
            false,
            format!("{} (took {secs:.1}s, budget {budget}s)", o.detail),
        )
    }
}

fn criterion_1() -> Outcome {
    let report = run_gradcheck(tiny_config()).expect("gradcheck runs");
    let failures: usize = report.tensors.iter().map(|t| t.failures).sum();
    let entries: usize = report.tensors.iter().map(|t| t.entries).sum();
    outcome(
        report.passed(),
        format!(
            "{} tensors, {entries} entries, {failures} failures, max rel {:.2e}",
            report.tensors.len(),
            report.max_rel()
        ),
    )
}

fn criterion_2() -> Outcome {
    let sched = NoiseSchedule::from_betas(vec![0.19]).unwrap();
    let ab = sched.alpha_bar(1);
    let z0 = [1.0, -2.0, 0.5, 0.0, 3.0, -0.25, 1.5, -1.0];
    let n = 10_000;
    let mut rng = rng::stream(2, Stream::DiffusionNoise, 0);
    let mut sum = [0.0; 8];
    let mut sq = [0.0; 8];
    let mut eps = [0.0; 8];
    for _ in 0..n {
        rng::fill_gaussian(&mut rng, &mut eps);
        let x = forward_sample(&z0, 1, &sched, &eps);
        for j in 0..8 {
            sum[j] += x[j];
            sq[j] += x[j] * x[j];
        }
    }
    let se = (0.19f64 / n as f64).sqrt();
    let mut worst_z = 0.0f64;
    let mut worst_var = 0.0f64;
    for j in 0..8 {
        let mean = sum[j] / n as f64;
        let var = (sq[j] - n as f64 * mean * mean) / (n - 1) as f64;
        worst_z = worst_z.max((mean - 0.9 * z0[j]).abs() / se);
        worst_var = worst_var.max((var - 0.19).abs() / 0.19);
    }
    outcome(
        (ab - 0.81).abs() < 1e-12 && worst_z < 3.0 && worst_var < 0.05,
        format!(
            "worst mean offset {worst_z:.2} SE, worst variance error {:.2}%",
            worst_var * 100.0
        ),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn oracle(order: &[usize], relevant: &[usize], k: usize) -> (f64, f64) {
    let cut = &order[..k.min(order.len())];
    let hits: Vec<usize> = (0..cut.len())
        .filter(|&r| relevant.contains(&cut[r]))
        .collect();
    let recall = hits.len() as f64 / relevant.len() as f64;
    let dcg: f64 = hits.iter().map(|&r| 1.0 / ((r + 2) as f64).log2()).sum();
    let idcg: f64 = (0..relevant.len().min(k))
        .map(|r| 1.0 / ((r + 2) as f64).log2())
        .sum();
    (recall, dcg / idcg)
}

fn criterion_3() -> Outcome {
    let mut cases = 0usize;
    let mut mismatches = 0usize;
    for n in 1..=5usize {
        let subsets: Vec<Vec<usize>> = (1u32..(1 << n))
            .filter(|m| m.count_ones() <= 3)
            .map(|m| (0..n).filter(|&i| m & (1 << i) != 0).collect())
            .collect();
        for perm in permutations(n) {
            // item perm[r] gets the r-th highest score
            let mut scores = vec![0.0; n];
            for (r, &v) in perm.iter().enumerate() {
                scores[v] = (n - r) as f64;
            }
            for rel in &subsets {
                for k in 1..=6 {
                    let ranked = top_k(&scores, &[], k);
                    let got = user_metrics(&ranked, rel, k);
                    if got != oracle(&perm, rel, k) {
                        mismatches += 1;
                    }
                    cases += 1;
                }
            }
        }
    }
    outcome(
        mismatches == 0,
        format!("{cases} instances, {mismatches} mismatches"),
    )
}

fn occupancy_ratio(indices: impl Iterator<Item = usize>, buckets: &[usize], ds: &Dataset) -> f64 {
    let mut occ = [0usize; 4];
    for i in indices {
        occ[buckets[ds.interactions()[i].item]] += 1;
    }
    let max = *occ.iter().max().unwrap() as f64;
    let min = *occ.iter().min().unwrap() as f64;
    max / min
}

fn split_problems(ds: &Dataset, b: &SplitBundle) -> Vec<String> {
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    for set in [&b.train, &b.val, &b.test_iid, &b.test_ood] {
        for &i in set.iter() {
            if !seen.insert(i) {
                problems.push(format!("index {i} in two sets"));
            }
        }
    }
    if seen != (0..ds.len() + b.external.len()).collect() {
        problems.push("sets do not cover every interaction".into());
    }
    let mut per_user = vec![[0usize; 3]; ds.num_users()];
    for (slot, set) in [&b.train, &b.val, &b.test_iid].iter().enumerate() {
        for &i in set.iter() {
            per_user[ds.interactions()[i].user][slot] += 1;
        }
    }
    for (u, c) in per_user.iter().enumerate() {
        let n: usize = c.iter().sum();
        for (slot, share) in [0.7, 0.1, 0.2].iter().enumerate() {
            if (c[slot] as f64 - share * n as f64).abs() > 1.0 {
                problems.push(format!("user {u} split {c:?} is not 7:1:2"));
            }
        }
    }
    if b.shift_kind == ShiftKind::Temporal {
        let mut last_in = vec![i64::MIN; ds.num_users()];
        let mut first_out = vec![i64::MAX; ds.num_users()];
        for &i in b.train.iter().chain(&b.val).chain(&b.test_iid) {
            let r = &ds.interactions()[i];
            last_in[r.user] = last_in[r.user].max(r.timestamp);
        }
        for &i in &b.test_ood {
            let r = &ds.interactions()[i];
            first_out[r.user] = first_out[r.user].min(r.timestamp);
        }
        for u in 0..ds.num_users() {
            if first_out[u] != i64::MAX && last_in[u] > first_out[u] {
                problems.push(format!(
                    "user {u} has OOD interactions before training ones"
                ));
            }
        }
    }
    problems
}

fn criterion_4() -> Outcome {
    let mut problems = Vec::new();
    let mut global = Vec::new();
    let mut ood = Vec::new();
    let mut sizes = Vec::new();
    for seed in 0..5u64 {
        let spec = SyntheticSpec::confounded(3000, 100, 4, (1.0, 1.0), 0.005, 0.3, seed);
        let (ds, truth) = generate_synthetic(&spec).unwrap();
        sizes.push(ds.len());
        // a fully exposed block: every preferred pair of the first 100 users
        // on the first 20 items
        let exposure: Vec<RawRecord> = (0..100)
            .flat_map(|u| (0..20).map(move |v| (u, v)))
            .filter(|&(u, v)| truth.is_preferred(u, v))
            .map(|(u, v)| RawRecord {
                user: format!("{u}"),
                item: format!("{v}"),
                timestamp: 0,
                rating: 1.0,
            })
            .collect();
        let buckets = popularity_buckets(ds.item_popularity(), 4).unwrap();
        for kind in [
            ShiftKind::Popularity,
            ShiftKind::Temporal,
            ShiftKind::Exposure,
            ShiftKind::None,
        ] {
            let opts = SplitOptions {
                kind,
                seed,
                ..SplitOptions::default()
            };
            let ext = (kind == ShiftKind::Exposure).then_some(exposure.as_slice());
            let b = build_split(&ds, &opts, ext).unwrap();
            problems.extend(
                split_problems(&ds, &b)
                    .into_iter()
                    .map(|p| format!("{kind:?}/{seed}: {p}")),
            );
            if kind == ShiftKind::Popularity {
                global.push(occupancy_ratio(0..ds.len(), &buckets, &ds));
                ood.push(occupancy_ratio(b.test_ood.iter().copied(), &buckets, &ds));
            }
        }
    }
    let g = global.iter().sum::<f64>() / 5.0;
    let o = ood.iter().sum::<f64>() / 5.0;
    let detail =
        format!(
        "{} interactions on average; global occupancy ratio {g:.2}, OOD {o:.2}; {} violations{}",
        sizes.iter().sum::<usize>() / 5,
        problems.len(),
        problems.first().map(|p| format!(" (first: {p})")).unwrap_or_default()
    );
    outcome(problems.is_empty() && g >= 10.0 && o <= 2.0, detail)
}

fn causal_fixture() -> (EnvModel, DenoiserNet, NoiseSchedule, Vec<CausalPair>) {
    let d = 8;
    let mut env = EnvModel::with_prior(vec![0.5, 0.3, 0.2], d).unwrap();
    let mut r = rng::stream(5, Stream::Init, 0);
    env.init_head(0.5, &mut r);
    let shape = DenoiserShape {
        dim: d,
        hidden: 6,
        time_dim: 4,
        env_dim: 3,
        num_envs: 3,
    };
    let net = DenoiserNet::random(shape, &mut r);
    let sched = NoiseSchedule::linear(4, 0.05, 0.3).unwrap();
    let pairs = (0..2)
        .map(|k| {
            let mut x_t = vec![0.0; d];
            let mut x_prev = vec![0.0; d];
            rng::fill_gaussian(&mut r, &mut x_t);
            rng::fill_gaussian(&mut r, &mut x_prev);
            CausalPair {
                x_t,
                x_prev,
                t: k + 2,
            }
        })
        .collect();
    (env, net, sched, pairs)
}

/// Central differences of the regularizer against its analytic gradient;
/// returns (entries, failures, worst relative error, worst absolute error).
fn regularizer_gradcheck(global_kl: bool) -> (usize, usize, f64, f64) {
    let (env, net, sched, pairs) = causal_fixture();
    let mut hg = HeadGrads::zeros(env.num_envs, env.dim);
    let mut ng = DenoiserNet::zeros(net.shape);
    causal_regularizer_grad(&pairs, &env, &net, &sched, global_kl, 1.0, &mut hg, &mut ng);
    let h = 1e-6;
    let f = |env: &EnvModel, net: &DenoiserNet| {
        causal_regularizer(&pairs, env, net, &sched, global_kl).total()
    };
    let (mut entries, mut failures, mut worst_rel, mut worst_abs) = (0, 0, 0.0f64, 0.0f64);
    let mut judge = |analytic: f64, numeric: f64| {
        entries += 1;
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        worst_rel = worst_rel.max(rel);
        worst_abs = worst_abs.max(abs);
        if abs > ABS_FLOOR && rel >= REL_TOL {
            failures += 1;
        }
    };
    for (which, len) in [(0, env.w.len()), (1, env.b.len())] {
        for i in 0..len {
            let mut plus = env.clone();
            let mut minus = env.clone();
            let (p, m) = if which == 0 {
                (&mut plus.w[i], &mut minus.w[i])
            } else {
                (&mut plus.b[i], &mut minus.b[i])
            };
            *p += h;
            *m -= h;
            let numeric = (f(&plus, &net) - f(&minus, &net)) / (2.0 * h);
            judge(if which == 0 { hg.w[i] } else { hg.b[i] }, numeric);
        }
    }
    let analytic: Vec<Vec<f64>> = ng.tensors().iter().map(|(_, t)| t.to_vec()).collect();
    for (k, grads) in analytic.iter().enumerate() {
        for (i, &g) in grads.iter().enumerate() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            plus.tensors_mut()[k].1[i] += h;
            minus.tensors_mut()[k].1[i] -= h;
            judge(g, (f(&env, &plus) - f(&env, &minus)) / (2.0 * h));
        }
    }
    (entries, failures, worst_rel, worst_abs)
}

fn criterion_5() -> Outcome {
    let (mut env, net, sched, pairs) = causal_fixture();
    env.w.iter_mut().for_each(|w| *w = 0.0);
    env.b = env.prior.iter().map(|p| p.ln()).collect();
    let kl_matched = causal_regularizer(&pairs, &env, &net, &sched, false).kl;
    let mut r = rng::stream(6, Stream::Eval, 0);
    let mut min_kl = f64::INFINITY;
    for _ in 0..10_000 {
        let k = r.random_range(2..=8);
        let logits: Vec<f64> = (0..k).map(|_| 3.0 * rng::gaussian(&mut r)).collect();
        let prior: Vec<f64> = (0..k).map(|_| r.random::<f64>() + 1e-3).collect();
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let q = norm(logits.iter().map(|l| l.exp()).collect());
        min_kl = min_kl.min(kl(&q, &norm(prior)));
    }
    let (e1, f1, r1, a1) = regularizer_gradcheck(false);
    let (e2, f2, r2, a2) = regularizer_gradcheck(true);
    outcome(
        kl_matched.abs() < 1e-9 && min_kl >= 0.0 && f1 + f2 == 0,
        format!(
            "KL at q = p0: {kl_matched:.1e}; min KL over 10000 posteriors {min_kl:.2e}; gradient check {} entries, {} failures, max rel {:.2e}, max abs {:.2e}",
            e1 + e2,
            f1 + f2,
            r1.max(r2),
            a1.max(a2)
        ),
    )
}

fn benchmark_data(seed: u64) -> (Dataset, SplitBundle) {
    let spec = SyntheticSpec::confounded(300, 300, 4, (1.0, 0.3), 0.05, 0.15, seed);
    let (ds, _) = generate_synthetic(&spec).unwrap();
    let opts = SplitOptions {
        kind: ShiftKind::Popularity,
        seed,
        ..SplitOptions::default()
    };
    let split = build_split(&ds, &opts, None).unwrap();
    (ds, split)
}

fn benchmark_config(seed: u64, sampler: SamplerKind) -> TrainConfig {
    let text = include_str!("../../../configs/benchmark.json");
    let mut c: TrainConfig = serde_json::from_str(text).unwrap();
    c.seed = seed;
    c.sampler = sampler;
    c
}

fn criterion_6() -> Outcome {
    let mut fhns = [0.0f64; 2];
    let mut recall = [0.0f64; 2];
    let mut per_seed = Vec::new();
    for seed in 0..5u64 {
        let (ds, split) = benchmark_data(seed);
        let mut row = Vec::new();
        for sampler in [SamplerKind::Cnsdiff, SamplerKind::Dns, SamplerKind::Random] {
            let mut model = Model::new(&ds, &split, benchmark_config(seed, sampler), None).unwrap();
            let (report, _) = fit(&mut model, &WallClock::start(), &mut |_| {}).unwrap();
            let tail: Vec<f64> = report
                .epochs
                .iter()
                .rev()
                .take(50)
                .filter_map(|r| r.fhns_ratio)
                .collect();
            let mean_fhns = tail.iter().sum::<f64>() / tail.len() as f64;
            let ood = report.final_block("ood").unwrap().recall_20;
            row.push((mean_fhns, ood));
        }
        fhns[0] += row[0].0 / 5.0;
        fhns[1] += row[1].0 / 5.0;
        recall[0] += row[0].1 / 5.0;
        recall[1] += row[2].1 / 5.0;
        per_seed.push(row);
    }
    for (seed, row) in per_seed.iter().enumerate() {
        println!(
            "    seed {seed}: fhns cnsdiff {:.4} dns {:.4}; ood recall@20 cnsdiff {:.4} random {:.4}",
            row[0].0, row[1].0, row[0].1, row[2].1
        );
    }
    let a = fhns[0] < fhns[1];
    let b = recall[0] - recall[1] > 0.0;
    println!(
        "    (a) {} mean FHNS ratio over the last 50 epochs: cnsdiff {:.4} < dns {:.4}",
        if a { "PASS" } else { "FAIL" },
        fhns[0],
        fhns[1]
    );
    println!(
        "    (b) {} mean OOD recall@20: cnsdiff {:.4} vs random {:.4} (difference {:+.4})",
        if b { "PASS" } else { "FAIL" },
        recall[0],
        recall[1],
        recall[0] - recall[1]
    );
    outcome(
        a && b,
        format!(
            "(a) {}, (b) {}",
            if a { "pass" } else { "fail" },
            if b { "pass" } else { "fail" }
        ),
    )
}

fn criterion_7() -> Outcome {
    let (ds, split) = benchmark_data(0);
    let model = |steps: usize| {
        let mut c = benchmark_config(0, SamplerKind::Cnsdiff);
        c.steps = steps;
        Model::new(&ds, &split, c, None).unwrap()
    };
    let (mut short, mut long) = (model(10), model(40));
    let clock = WallClock::start();
    // interleaved so that machine load drifts affect both equally
    let mut times = [Vec::new(), Vec::new()];
    for epoch in 1..=9 {
        for (slot, m) in [&mut short, &mut long].into_iter().enumerate() {
            times[slot].push(
                train_epoch(m, epoch, &clock)
                    .unwrap()
                    .record
                    .sampling_seconds,
            );
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (s, l) = (median(&mut times[0]), median(&mut times[1]));
    let ratio = l / s;
    outcome(
        (3.0..=5.0).contains(&ratio),
        format!("median sampling seconds per epoch over 9 epochs: T=10 {s:.4}, T=40 {l:.4}, ratio {ratio:.2}"),
    )
}

fn criterion_8(scratch: &Path) -> Outcome {
    let spec = SyntheticSpec::uniform_exposure(40, 30, 2, 0.8, 0.3, 0);
    let (ds, _) = generate_synthetic(&spec).unwrap();
    let split = build_split(&ds, &SplitOptions::default(), None).unwrap();
    let data = scratch.join("data");
    write_dataset(&data, &ds, None).unwrap();
    write_split(&scratch.join("split.json"), &split).unwrap();
    let mut config = tiny_config();
    config.epochs = 5;
    config.num_envs = 2;
    fs::write(
        scratch.join("config.json"),
        serde_json::to_string(&config).unwrap(),
    )
    .unwrap();
    let run = |name: &str| {
        let out = scratch.join(name);
        let path = |p: &Path| p.display().to_string();
        let argv = [
            "cnsdiff".to_string(),
            "train".into(),
            "--data".into(),
            path(&data),
            "--split".into(),
            path(&scratch.join("split.json")),
            "--config".into(),
            path(&scratch.join("config.json")),
            "--out".into(),
            path(&out),
        ];
        let code = cnsdiff::cli::run_command(argv);
        (code, fs::read(out.join("metrics.json")).unwrap_or_default())
    };
    let (c1, a) = run("run-a");
    let (c2, b) = run("run-b");
    outcome(
        c1 == 0 && c2 == 0 && !a.is_empty() && a == b,
        format!(
            "exit codes {c1}/{c2}, metrics.json {} bytes, identical: {}",
            a.len(),
            a == b
        ),
    )
}

/// Two well-separated clusters in the plane.
fn gmm_point<R: Rng>(r: &mut R) -> [f64; 2] {
    let centres = [[2.0, 2.0], [-2.0, -1.0]];
    let c = centres[r.random_range(0..2)];
    [c[0] + 0.1 * rng::gaussian(r), c[1] + 0.1 * rng::gaussian(r)]
}

fn criterion_9() -> Outcome {
    let sched = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
    let shape = DenoiserShape {
        dim: 2,
        hidden: 64,
        time_dim: 16,
        env_dim: 1,
        num_envs: 1,
    };
    let mut reductions = Vec::new();
    for seed in 0..3u64 {
        let mut r = rng::stream(seed, Stream::Synthetic, 9);
        let data: Vec<[f64; 2]> = (0..2000).map(|_| gmm_point(&mut r)).collect();
        let probe: Vec<(usize, usize, [f64; 2])> = (0..1000)
            .map(|_| {
                let mut eps = [0.0; 2];
                rng::fill_gaussian(&mut r, &mut eps);
                (r.random_range(0..data.len()), r.random_range(1..=100), eps)
            })
            .collect();
        let probe_loss = |net: &DenoiserNet| {
            probe
                .iter()
                .map(|(i, t, eps)| sampling_loss(&data[*i], *t, eps, net, 0, &sched))
                .sum::<f64>()
                / probe.len() as f64
        };
        let mut net = DenoiserNet::random(shape, &mut rng::stream(seed, Stream::Init, 9));
        let before = probe_loss(&net);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-2);
        for _ in 0..500 {
            let mut grads = DenoiserNet::zeros(shape);
            for _ in 0..64 {
                let z0 = data[r.random_range(0..data.len())];
                let t = r.random_range(1..=100);
                let mut eps = [0.0; 2];
                rng::fill_gaussian(&mut r, &mut eps);
                sampling_loss_grad(&z0, t, &eps, &net, 0, &sched, 1.0 / 64.0, &mut grads);
            }
            let g = grads.tensors();
            let gs: Vec<&[f64]> = g.iter().map(|t| t.1).collect();
            let mut p = net.tensors_mut();
            let mut ps: Vec<&mut [f64]> = p.iter_mut().map(|t| &mut *t.1).collect();
            opt.step(&mut ps, &gs);
        }
        let after = probe_loss(&net);
        reductions.push((before, after, 1.0 - after / before));
    }
    let pass = reductions.iter().all(|r| r.2 >= 0.5);
    let detail = reductions
        .iter()
        .map(|(b, a, red)| format!("{b:.3} -> {a:.3} ({:.0}%)", red * 100.0))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, detail)
}

type Criterion<'a> = (&'static str, f64, Box<dyn Fn() -> Outcome + 'a>);

fn main() {
    let scratch = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<Criterion> = vec![
        ("1 full-model gradient check", 30.0, Box::new(criterion_1)),
        ("2 diffusion forward marginals", 5.0, Box::new(criterion_2)),
        (
            "3 ranking metrics vs exhaustive oracle",
            10.0,
            Box::new(criterion_3),
        ),
        ("4 split invariants", 10.0, Box::new(criterion_4)),
        (
            "5 causal regularizer identities",
            f64::INFINITY,
            Box::new(criterion_5),
        ),
        ("6 synthetic OOD benchmark", 900.0, Box::new(criterion_6)),
        (
            "7 sampling cost scales with T",
            300.0,
            Box::new(criterion_7),
        ),
        (
            "8 determinism of metrics.json",
            120.0,
            Box::new(|| criterion_8(scratch.path())),
        ),
        ("9 toy mixture denoiser", 60.0, Box::new(criterion_9)),
    ];
    let mut failed = Vec::new();
    for (name, budget, run) in &criteria {
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        let o = within_budget(o, secs, *budget);
        println!(
            "[{}] criterion {name}: {} ({secs:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(*name);
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed.len(),
        criteria.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
