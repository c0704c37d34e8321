//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Cora clauses run only when a converted Cora directory is
//! found at `$GCN_NAM_CORA_DIR` or `<workspace>/data/cora`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use gcn_nam::nam::oracle::{finite_difference_gradient, path_enumeration, DEFAULT_PATH_LIMIT};
use gcn_nam::nam::AttributionError;
use gcn_nam::niv::{dot_node_sizes, parse_json};
use gcn_nam::sample::{random_instance, Instance, InstanceSpec};
use gcn_nam::{
    accuracy, attribute, build_niv, emit_dot, emit_json, generate_synthetic, load_dataset, run_perturbation, train,
    Activation, AttributionQuery, Dataset, LoadOptions, NivStyle, NormalizedAdjacency, PerturbationConfig, Strategy,
    SyntheticConfig, TrainConfig,
};

const INSTANCES: usize = 20;
const MAX_ATTEMPTS: u64 = 400;

enum Outcome {
    Pass(String),
    Fail(String),
}

use Outcome::{Fail, Pass};

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t < limit, format!("{:.2}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

fn cora_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("GCN_NAM_CORA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cora"));
    dir.join("meta.json").is_file().then_some(dir)
}

fn one_to_nine() -> Vec<f64> {
    (1..10).map(|i| i as f64 / 10.0).collect()
}

fn test_accuracy(model: &gcn_nam::Model, ds: &Dataset) -> f64 {
    let trace = model.forward(&NormalizedAdjacency::build(&ds.graph), &ds.features).unwrap();
    accuracy(&trace.predict(), &ds.labels, &ds.splits.test)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let spec = InstanceSpec::default();
    let (mut accepted, mut rejected, mut compared) = (0, 0, 0usize);
    let mut worst = 0.0f64;
    for seed in 0..MAX_ATTEMPTS {
        if accepted == INSTANCES {
            break;
        }
        let inst: Instance<f64> = random_instance(&spec, seed);
        let trace = inst.trace();
        let v = seed as usize % inst.graph.num_nodes();
        let query = AttributionQuery::predicted(&trace, v).unwrap();
        let result = attribute(&inst.model, &trace, query).unwrap();
        let mut fds = Vec::new();
        let mut kinked = false;
        for &source in result.gradient.keys() {
            match finite_difference_gradient(&inst.model, &inst.adjacency, &inst.features, v, query.class, source, 1e-6) {
                Ok(g) => fds.push((source, g)),
                Err(AttributionError::NearKink { .. } | AttributionError::MaskFlip { .. }) => {
                    kinked = true;
                    break;
                }
                Err(e) => return Fail(format!("finite differences failed: {e}")),
            }
        }
        if kinked {
            rejected += 1;
            continue;
        }
        accepted += 1;
        for (source, fd) in fds {
            for (&a, &f) in result.gradient[&source].iter().zip(fd.iter()) {
                if a.abs() > 1e-8 {
                    compared += 1;
                    worst = worst.max((a - f).abs() / a.abs());
                }
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(10), start);
    check(
        accepted == INSTANCES && worst < 1e-5 && fast,
        format!(
            "{accepted} instances ({rejected} rejected by the kink guard), {compared} entries, max rel err {worst:.2e}, {time}"
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut queries = 0;
    for seed in 0..INSTANCES as u64 {
        let dims = if seed % 2 == 0 { vec![4, 5, 3] } else { vec![3, 4] };
        let spec = InstanceSpec {
            max_nodes: 10,
            edge_prob: 0.35,
            dims,
            ..InstanceSpec::default()
        };
        let inst: Instance<f64> = random_instance(&spec, 1000 + seed);
        let trace = inst.trace();
        for v in 0..inst.graph.num_nodes() {
            for c in 0..inst.model.num_classes() {
                let q = AttributionQuery {
                    node: v,
                    class: c,
                    hops: inst.model.depth(),
                };
                let fast = attribute(&inst.model, &trace, q).unwrap();
                let slow = path_enumeration(&inst.model, &trace, q, DEFAULT_PATH_LIMIT).unwrap();
                if fast.per_node.keys().ne(slow.per_node.keys()) {
                    return Fail(format!("node sets differ for instance {seed}, node {v}"));
                }
                for (n, &a) in &fast.per_node {
                    worst = worst.max((a - slow.per_node[n]).abs());
                }
                queries += 1;
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(30), start);
    check(
        worst <= 1e-10 && fast,
        format!("{INSTANCES} instances, {queries} queries, max abs diff {worst:.2e}, {time}"),
    )
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES as u64 {
        let spec = InstanceSpec {
            dims: vec![5, 6, 3],
            hidden_activation: Activation::Linear,
            with_bias: false,
            ..InstanceSpec::default()
        };
        let inst: Instance<f64> = random_instance(&spec, 2000 + seed);
        let trace = inst.trace();
        for v in 0..inst.graph.num_nodes() {
            for c in 0..inst.model.num_classes() {
                let q = AttributionQuery { node: v, class: c, hops: 2 };
                let total = attribute(&inst.model, &trace, q).unwrap().total();
                let logit = trace.logits()[[v, c]];
                worst = worst.max((total - logit).abs() / logit.abs().max(f64::MIN_POSITIVE));
            }
        }
    }
    check(
        worst <= 1e-9,
        format!("{INSTANCES} linear zero-bias instances, max rel err {worst:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let spec = InstanceSpec {
        min_nodes: 8,
        edge_prob: 0.1,
        ..InstanceSpec::default()
    };
    let (mut used, mut probes) = (0, 0);
    for seed in 0..MAX_ATTEMPTS {
        if used == INSTANCES {
            break;
        }
        let inst: Instance<f64> = random_instance(&spec, 3000 + seed);
        let trace = inst.trace();
        let n = inst.graph.num_nodes();
        let mut any_outside = false;
        for v in 0..n {
            let hood: BTreeSet<usize> = inst.graph.k_hop_neighborhood(v, 2).unwrap().into_iter().collect();
            let r = attribute(&inst.model, &trace, AttributionQuery::predicted(&trace, v).unwrap()).unwrap();
            for u in (0..n).filter(|u| !hood.contains(u)) {
                any_outside = true;
                if r.per_node.contains_key(&u) || r.contribution(u) != 0.0 {
                    return Fail(format!("instance {seed}: node {u} outside the 2-hop set of {v} has a contribution"));
                }
                let mut x = inst.features.clone();
                x.row_mut(u).mapv_inplace(|f| f * 3.0 + 1.0);
                let moved = inst.model.forward(&inst.adjacency, &x).unwrap();
                if moved.logits().row(v) != trace.logits().row(v) {
                    return Fail(format!("instance {seed}: perturbing node {u} changed the logits of {v}"));
                }
                probes += 1;
            }
        }
        if any_outside {
            used += 1;
        }
    }
    check(
        used == INSTANCES,
        format!("{used} instances, {probes} out-of-neighborhood probes, all zero and bit-identical"),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let sep: Dataset = generate_synthetic(&SyntheticConfig::separable(7)).unwrap();
    let sep_acc = test_accuracy(&train(&sep, &TrainConfig::default()).unwrap().model, &sep);
    let mut zero_accs = Vec::new();
    for seed in 0..5 {
        let ds: Dataset = generate_synthetic(&SyntheticConfig::zero_signal(seed)).unwrap();
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        zero_accs.push(test_accuracy(&train(&ds, &cfg).unwrap().model, &ds));
    }
    let chance = 1.0 / 3.0;
    let zero_ok = zero_accs.iter().all(|a| (a - chance).abs() <= 0.15);
    let mut detail = format!(
        "separable test acc {sep_acc:.3}; zero-signal accs {:?} (chance {chance:.3}); {:.1}s",
        zero_accs.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>(),
        start.elapsed().as_secs_f64()
    );
    let mut ok = sep_acc == 1.0 && zero_ok;
    match cora_dir() {
        None => detail.push_str("; Cora clause SKIP (no converted data)"),
        Some(dir) => {
            let start = Instant::now();
            let (ds, _) = load_dataset::<f64>(&dir, LoadOptions::default()).unwrap();
            let splits = (ds.splits.train.len(), ds.splits.val.len(), ds.splits.test.len());
            let out = train(&ds, &TrainConfig::default()).unwrap();
            let acc = test_accuracy(&out.model, &ds);
            let (fast, time) = within(Duration::from_secs(120), start);
            ok &= acc >= 0.75 && fast && splits == (140, 500, 1000) && out.history.len() <= 200;
            detail.push_str(&format!("; Cora splits {splits:?}, test acc {acc:.3}, {time}"));
        }
    }
    check(ok, detail)
}

fn shape_check(model: &gcn_nam::Model, ds: &Dataset) -> (bool, String) {
    let cfg = PerturbationConfig {
        p_values: one_to_nine(),
        num_random_seeds: 5,
        ..PerturbationConfig::default()
    };
    let curves = run_perturbation(model, ds, &cfg).unwrap();
    let nam = curves.iter().find(|c| c.strategy == Strategy::Nam).unwrap();
    let random = curves.iter().find(|c| c.strategy == Strategy::Random).unwrap();
    let below = cfg
        .p_values
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= 0.2 - 1e-12)
        .all(|(i, _)| nam.accuracy[i] <= random.accuracy[i]);
    let (a_nam, a_rand) = (nam.area(), random.area());
    (
        below && a_nam < a_rand,
        format!("nam<=random at p>=0.2: {below}, area nam {a_nam:.4} vs random {a_rand:.4}"),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let ds: Dataset = generate_synthetic(&SyntheticConfig::separable(7)).unwrap();
    let model = train(&ds, &TrainConfig::default()).unwrap().model;
    let (shape_ok, shape) = shape_check(&model, &ds);
    let (fast, time) = within(Duration::from_secs(60), start);
    let mut ok = shape_ok && fast;
    let mut detail = format!("synthetic: {shape}, {time}");
    match cora_dir() {
        None => detail.push_str("; Cora clause SKIP (no converted data)"),
        Some(dir) => {
            let start = Instant::now();
            let (ds, _) = load_dataset::<f64>(&dir, LoadOptions::default()).unwrap();
            let model = train(&ds, &TrainConfig::default()).unwrap().model;
            let (shape_ok, shape) = shape_check(&model, &ds);
            let (fast, time) = within(Duration::from_secs(15 * 60), start);
            ok &= shape_ok && fast;
            detail.push_str(&format!("; Cora: {shape}, {time}"));
        }
    }
    check(ok, detail)
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gcn-nam"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let steps: [&[&str]; 6] = [
        &["synth", "--out", "ds", "--preset", "separable", "--seed", "3"],
        &["train", "--dataset", "ds", "--model-out", "model.ckpt", "--log", "train.log", "--seed", "1"],
        &["attribute", "--dataset", "ds", "--model", "model.ckpt", "--node", "4", "--out", "attr.json", "--gradients"],
        &["perturb", "--dataset", "ds", "--model", "model.ckpt", "--out-dir", "perturb", "--seed", "2"],
        &["visualize", "--dataset", "ds", "--model", "model.ckpt", "--attribution", "attr.json", "--out-dot", "niv.dot", "--out-json", "niv.json", "--hops", "2"],
        &["plot", "--curves", "perturb/curves.tsv", "--out", "curves.svg"],
    ];
    for args in steps {
        run_cli(dir, args)?;
    }
    [
        "model.ckpt",
        "train.log",
        "attr.json",
        "perturb/curves.tsv",
        "perturb/curves.json",
        "niv.dot",
        "niv.json",
        "curves.svg",
    ]
    .iter()
    .map(|f| {
        std::fs::read(dir.join(f))
            .map(|b| (f.to_string(), b))
            .map_err(|e| format!("{f}: {e}"))
    })
    .collect()
}

fn criterion_7() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = match pipeline(a.path()) {
        Ok(f) => f,
        Err(e) => return Fail(e),
    };
    let second = match pipeline(b.path()) {
        Ok(f) => f,
        Err(e) => return Fail(e),
    };
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    check(
        differing.is_empty(),
        format!(
            "{} artifacts from train/attribute/perturb/visualize/plot compared across two runs, differing: {differing:?}",
            first.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut docs = 0;
    for seed in 0..INSTANCES as u64 {
        let inst: Instance<f64> = random_instance(&InstanceSpec::default(), 4000 + seed);
        let trace = inst.trace();
        let predictions = trace.predict();
        for v in 0..inst.graph.num_nodes() {
            let r = attribute(&inst.model, &trace, AttributionQuery::predicted(&trace, v).unwrap()).unwrap();
            for k in [1, 2] {
                let doc = build_niv(&r, &predictions, &inst.graph, k, NivStyle::default()).unwrap();
                let sizes = dot_node_sizes(&emit_dot(&doc));
                let hood = inst.graph.k_hop_neighborhood(v, k).unwrap();
                if sizes.iter().map(|s| s.0).ne(hood.iter().copied()) {
                    return Fail(format!("instance {seed}, node {v}, K={k}: DOT nodes differ from the K-hop set"));
                }
                for &(a, sa) in &sizes {
                    for &(b, sb) in &sizes {
                        if r.contribution(a).abs() < r.contribution(b).abs() && sa > sb {
                            return Fail(format!("instance {seed}: size order of nodes {a}, {b} contradicts |contribution|"));
                        }
                    }
                }
                if parse_json::<f64>(&emit_json(&doc)).ok().as_ref() != Some(&doc) {
                    return Fail(format!("instance {seed}, node {v}: JSON round trip lost information"));
                }
                docs += 1;
            }
        }
    }
    Pass(format!("{docs} documents from {INSTANCES} instances: size order, node count and JSON round trip hold"))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("gradient vs finite differences", criterion_1),
        ("attribution vs path enumeration", criterion_2),
        ("completeness in the linear regime", criterion_3),
        ("locality", criterion_4),
        ("training sanity", criterion_5),
        ("deletion curve shape", criterion_6),
        ("determinism", criterion_7),
        ("NIV structure", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Pass(detail) => println!("criterion {} ({name}): PASS: {detail}", i + 1),
            Fail(detail) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
