//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! MNIST is read from `$GRADPATH_DATA_DIR`, falling back to `<workspace>/data`.
//! CIFAR checks run against full-size synthetic fixtures in the real binary
//! layout.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gradpath::data::{load_cifar10, load_cifar100, load_mnist, load_split, toy_dataset, Split, DATA_DIR_ENV};
use gradpath::gradinput::gradient_transform;
use gradpath::models::{build_baseline, build_dualpath, build_model, param_count, BranchTransform};
use gradpath::train::{
    evaluate, gradcheck_suite, run_experiment, train_epoch, GradcheckConfig, Sgd, TrainConfig,
};
use gradpath::{DatasetKind, Error, Mode, Tensor, Topology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRADCHECK_TOLERANCE: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const LINEARITY_TOLERANCE: f32 = 1e-6;
const MNIST_SUBSET: usize = 10_000;
const MNIST_EPOCHS: usize = 5;
const MNIST_SEEDS: [u64; 3] = [1, 2, 3];
const BASELINE_MIN_ACC: f64 = 0.92;
const PER_SEED_SLACK: f64 = 0.005;
const REPRO_BUDGET: Duration = Duration::from_secs(20 * 60);
const OVERFIT_SAMPLES: usize = 10;
const OVERFIT_MAX_EPOCHS: usize = 200;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn data_root() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let report = gradcheck_suite(&GradcheckConfig {
        tolerance: GRADCHECK_TOLERANCE,
        ..GradcheckConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = report
        .entries
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("non-empty report");
    ensure(report.passed(), || format!("failing checks:\n{report}"))?;
    ensure(elapsed < GRADCHECK_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} checks, worst {} at {:.2e}, {:.2}s",
        report.entries.len(),
        worst.name,
        worst.max_rel_error,
        elapsed.as_secs_f64()
    ))
}

/// Parameters of `conv3x3(same) → batchnorm` blocks, one 2×2 pool, then a dense stack.
fn shape_walk(cin: usize, side: usize, convs: &[usize], dense: &[usize]) -> usize {
    let mut total = 0;
    let mut c = cin;
    for &out in convs {
        total += (c * 3 * 3 + 1) * out + 2 * out;
        c = out;
    }
    let mut width = c * (side / 2) * (side / 2);
    for &out in dense {
        total += (width + 1) * out;
        width = out;
    }
    total
}

fn parameter_preservation() -> Outcome {
    let cases = [
        (DatasetKind::Mnist, shape_walk(1, 28, &[4], &[64, 10])),
        (DatasetKind::Cifar10, shape_walk(3, 32, &[16, 32, 64], &[128, 128, 10])),
        (DatasetKind::Cifar100, shape_walk(3, 32, &[16, 32, 64], &[128, 128, 100])),
    ];
    let mut detail = Vec::new();
    for (kind, oracle) in cases {
        let single = param_count(&build_baseline::<f32>(kind, 0).map_err(|e| e.to_string())?);
        let dual = param_count(&build_dualpath::<f32>(kind, 0).map_err(|e| e.to_string())?);
        ensure(single == dual, || format!("{kind}: single {single} != dual {dual}"))?;
        ensure(single == oracle, || format!("{kind}: {single} != shape-walk {oracle}"))?;
        detail.push(format!("{kind} {single}"));
    }
    ensure(cases[0].1 == 50_938, || format!("mnist oracle gives {}", cases[0].1))?;
    Ok(detail.join(", "))
}

fn gradient_transform_correctness() -> Outcome {
    let t = |dims: [usize; 4], data: Vec<f32>| Tensor::new(dims, data).unwrap();
    let run = |x: &Tensor<f32>| gradient_transform(x).map_err(|e| e.to_string());

    let constant = run(&t([2, 3, 5, 4], vec![0.7; 120]))?;
    ensure(constant.data().iter().all(|&v| v == 0.0), || "constant image is not all zeros".into())?;

    let ramp = |f: fn(usize, usize) -> f32| t([1, 1, 3, 3], (0..9).map(|i| f(i / 3, i % 3)).collect());
    for (name, image, want) in [
        ("x", ramp(|_, x| x as f32), 1.0),
        ("y", ramp(|y, _| y as f32), 1.0),
        ("x+y", ramp(|y, x| (x + y) as f32), 2.0),
    ] {
        let out = run(&image)?;
        ensure(out.data().iter().all(|&v| v == want), || format!("ramp {name}: {:?}", out.data()))?;
    }
    let corner = run(&t([1, 1, 2, 2], vec![0.0, 0.0, 0.0, 1.0]))?;
    ensure(corner.data() == [0.0, 1.0, 1.0, 2.0], || format!("2x2 case: {:?}", corner.data()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = [3, 2, 7, 6];
    let n: usize = dims.iter().product();
    let mut max_lin = 0f32;
    for _ in 0..20 {
        // offsets on a dyadic grid keep I + c exact in f32
        let i: Vec<f32> = (0..n).map(|_| rng.gen_range(0..256) as f32 / 256.0).collect();
        let c = rng.gen_range(-64..64) as f32 / 8.0;
        let shifted = run(&t(dims, i.iter().map(|v| v + c).collect()))?;
        let base = run(&t(dims, i.clone()))?;
        ensure(shifted.data() == base.data(), || format!("offset {c} changed the transform"))?;

        let j: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (rng.gen_range(-2.0..2.0f32), rng.gen_range(-2.0..2.0f32));
        let mix = run(&t(dims, i.iter().zip(&j).map(|(x, y)| a * x + b * y).collect()))?;
        let tj = run(&t(dims, j))?;
        for ((m, x), y) in mix.data().iter().zip(base.data()).zip(tj.data()) {
            max_lin = max_lin.max((m - (a * x + b * y)).abs());
        }
    }
    ensure(max_lin <= LINEARITY_TOLERANCE, || format!("linearity error {max_lin:e}"))?;
    Ok(format!("flat, ramps, 2x2 exact; offset bit-exact; linearity {max_lin:.1e}"))
}

fn desk_scale_mnist() -> Outcome {
    let root = data_root();
    let start = Instant::now();
    let train = load_split(DatasetKind::Mnist, &root, Split::Train).map_err(|e| e.to_string())?;
    let test = load_split(DatasetKind::Mnist, &root, Split::Test).map_err(|e| e.to_string())?;
    let mut finals = Vec::new();
    for seed in MNIST_SEEDS {
        let config = TrainConfig {
            dataset: DatasetKind::Mnist,
            epochs: MNIST_EPOCHS,
            subset: Some(MNIST_SUBSET),
            seed,
            ..TrainConfig::default()
        };
        let exp = run_experiment(&config, &train, &test).map_err(|e| e.to_string())?;
        println!(
            "      seed {seed}: baseline {:.4}  dualpath {:.4}  delta {:+.4}",
            exp.final_baseline_acc(),
            exp.final_dualpath_acc(),
            exp.accuracy_delta()
        );
        finals.push((exp.final_baseline_acc(), exp.final_dualpath_acc()));
    }
    let elapsed = start.elapsed();
    let k = finals.len() as f64;
    let mean_base = finals.iter().map(|f| f.0).sum::<f64>() / k;
    let mean_dual = finals.iter().map(|f| f.1).sum::<f64>() / k;
    let summary = format!(
        "mean baseline {mean_base:.4}, mean dualpath {mean_dual:.4}, {:.0}s",
        elapsed.as_secs_f64()
    );
    for (seed, (base, dual)) in MNIST_SEEDS.iter().zip(&finals) {
        ensure(*base >= BASELINE_MIN_ACC, || format!("seed {seed}: baseline {base:.4} < {BASELINE_MIN_ACC}; {summary}"))?;
        ensure(*dual >= base - PER_SEED_SLACK, || {
            format!("seed {seed}: dualpath {dual:.4} < baseline {base:.4} - {PER_SEED_SLACK}; {summary}")
        })?;
    }
    ensure(mean_dual >= mean_base, || format!("direction reversed; {summary}"))?;
    ensure(elapsed < REPRO_BUDGET, || format!("over budget; {summary}"))?;
    Ok(summary)
}

fn determinism() -> Outcome {
    let root = data_root();
    let train = load_split(DatasetKind::Mnist, &root, Split::Train).map_err(|e| e.to_string())?;
    let test = load_split(DatasetKind::Mnist, &root, Split::Test)
        .and_then(|d| d.take(2_000))
        .map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs: 2,
        subset: Some(2_000),
        seed: 7,
        record_wall_time: false,
        ..TrainConfig::default()
    };
    let a = run_experiment(&config, &train, &test).map_err(|e| e.to_string())?.to_csv();
    let b = run_experiment(&config, &train, &test).map_err(|e| e.to_string())?.to_csv();
    ensure(a.as_bytes() == b.as_bytes(), || format!("runs differ:\n{a}\n{b}"))?;

    let toy = toy_dataset(50, 3, Split::Train);
    let toy_cfg = TrainConfig {
        dataset: DatasetKind::Toy,
        epochs: 2,
        batch_size: 8,
        record_wall_time: false,
        ..TrainConfig::default()
    };
    let c = run_experiment(&toy_cfg, &toy, &toy).map_err(|e| e.to_string())?.to_csv();
    let d = run_experiment(&toy_cfg, &toy, &toy).map_err(|e| e.to_string())?.to_csv();
    ensure(c == d, || "toy runs differ".into())?;
    Ok(format!("{} identical bytes (mnist), {} (toy)", a.len(), c.len()))
}

fn expect_format_error(what: &str, result: gradpath::Result<gradpath::data::Dataset>) -> Result<(), String> {
    match result {
        Err(Error::Format { .. }) => Ok(()),
        Err(e) => Err(format!("{what}: expected a format error, got {e}")),
        Ok(d) => Err(format!("{what}: loaded {} samples instead of failing", d.len())),
    }
}

fn write_cifar(path: &Path, records: usize, label_bytes: impl Fn(usize) -> Vec<u8>) {
    let mut bytes = Vec::with_capacity(records * 3074);
    for i in 0..records {
        bytes.extend(label_bytes(i));
        bytes.extend((0..3072).map(|p| ((i + p) % 256) as u8));
    }
    fs::write(path, bytes).unwrap();
}

fn loader_fidelity() -> Outcome {
    let root = data_root();
    let train = load_split(DatasetKind::Mnist, &root, Split::Train).map_err(|e| e.to_string())?;
    let test = load_split(DatasetKind::Mnist, &root, Split::Test).map_err(|e| e.to_string())?;
    for (d, n) in [(&train, 60_000), (&test, 10_000)] {
        ensure(d.len() == n && d.images().dims() == [n, 1, 28, 28], || {
            format!("mnist {}: {:?}", d.split(), d.images().dims())
        })?;
        ensure(d.labels().iter().all(|&l| l < 10), || "mnist label out of range".into())?;
        ensure(d.images().data().iter().all(|v| (0.0..=1.0).contains(v)), || "mnist pixel out of [0,1]".into())?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tmp = dir.path();

    let mnist_dir = train_mnist_dir(&root).ok_or("mnist files not found")?;
    let images = fs::read(mnist_dir.join("t10k-images-idx3-ubyte")).map_err(|e| e.to_string())?;
    let labels = mnist_dir.join("t10k-labels-idx1-ubyte");
    let corrupt = |name: &str, edit: &dyn Fn(&mut Vec<u8>)| {
        let mut bytes = images.clone();
        edit(&mut bytes);
        let p = tmp.join(name);
        fs::write(&p, bytes).unwrap();
        load_mnist(&p, &labels, Split::Test)
    };
    expect_format_error("mnist magic", corrupt("magic", &|b| b[3] = 0x01))?;
    expect_format_error("mnist count", corrupt("count", &|b| b[7] = b[7].wrapping_add(1)))?;
    expect_format_error("mnist rows", corrupt("rows", &|b| b[11] = 27))?;
    expect_format_error("mnist truncated", corrupt("trunc", &|b| b.truncate(b.len() - 1)))?;
    expect_format_error("mnist header only", corrupt("short", &|b| b.truncate(10)))?;

    let c10 = tmp.join("cifar-10-batches-bin");
    fs::create_dir(&c10).unwrap();
    for i in 1..=5 {
        write_cifar(&c10.join(format!("data_batch_{i}.bin")), 10_000, |r| vec![(r % 10) as u8]);
    }
    write_cifar(&c10.join("test_batch.bin"), 10_000, |r| vec![(r % 10) as u8]);
    let c10_train = load_split(DatasetKind::Cifar10, tmp, Split::Train).map_err(|e| e.to_string())?;
    let c10_test = load_split(DatasetKind::Cifar10, tmp, Split::Test).map_err(|e| e.to_string())?;
    for (d, n) in [(&c10_train, 50_000), (&c10_test, 10_000)] {
        ensure(d.len() == n && d.images().dims() == [n, 3, 32, 32], || {
            format!("cifar10 {}: {:?}", d.split(), d.images().dims())
        })?;
    }
    drop((c10_train, c10_test));

    let c100 = tmp.join("cifar-100-binary");
    fs::create_dir(&c100).unwrap();
    write_cifar(&c100.join("train.bin"), 50_000, |r| vec![(r % 20) as u8, (r % 100) as u8]);
    write_cifar(&c100.join("test.bin"), 10_000, |r| vec![(r % 20) as u8, ((r * 7) % 100) as u8]);
    for split in [Split::Train, Split::Test] {
        let d = load_split(DatasetKind::Cifar100, tmp, split).map_err(|e| e.to_string())?;
        let mut seen = [false; 100];
        d.labels().iter().for_each(|&l| seen[l] = true);
        ensure(seen.iter().all(|&s| s), || format!("cifar100 {split}: fine labels do not span 0..99"))?;
        ensure(d.images().dims()[1..] == [3, 32, 32], || "cifar100 shape".into())?;
    }

    let bad = tmp.join("bad.bin");
    write_cifar(&bad, 3, |_| vec![1]);
    let mut bytes = fs::read(&bad).unwrap();
    bytes.pop();
    fs::write(&bad, &bytes).unwrap();
    expect_format_error("cifar10 truncated", load_cifar10(&[&bad], Split::Train))?;
    write_cifar(&bad, 3, |_| vec![10]);
    expect_format_error("cifar10 label", load_cifar10(&[&bad], Split::Train))?;
    write_cifar(&bad, 3, |_| vec![1, 100]);
    expect_format_error("cifar100 label", load_cifar100(&bad, Split::Train))?;

    Ok("mnist 60000/10000 x1x28x28; cifar10 50000/10000 x3x32x32; cifar100 labels 0..99; 8 corruptions rejected".into())
}

fn train_mnist_dir(root: &Path) -> Option<PathBuf> {
    [root.to_path_buf(), root.join("mnist"), root.join("MNIST/raw")]
        .into_iter()
        .find(|d| d.join("t10k-images-idx3-ubyte").is_file())
}

fn stub_equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checked = 0;
    for kind in [DatasetKind::Mnist, DatasetKind::Cifar10] {
        let [c, h, w] = kind.image_dims();
        let n = 3 * c * h * w;
        let x = Tensor::new([3, c, h, w], (0..n).map(|_| rng.gen::<f32>()).collect::<Vec<_>>()).unwrap();
        let mut single = build_model::<f32>(kind, Topology::Single, 4).map_err(|e| e.to_string())?;
        let mut dual = build_model::<f32>(kind, Topology::Dual, 4).map_err(|e| e.to_string())?;

        dual.set_branch_transform(BranchTransform::Identity);
        let (_, ts) = single.forward(&x, Mode::Eval).map_err(|e| e.to_string())?;
        let (_, td) = dual.forward(&x, Mode::Eval).map_err(|e| e.to_string())?;
        let doubled: Vec<f32> = ts.head_input().data().iter().map(|v| 2.0 * v).collect();
        ensure(td.head_input().data() == doubled.as_slice(), || format!("{kind}: ADD != 2 x flatten"))?;

        dual.set_branch_transform(BranchTransform::Zero);
        let (ls, _) = single.forward(&x, Mode::Eval).map_err(|e| e.to_string())?;
        let (ld, _) = dual.forward(&x, Mode::Eval).map_err(|e| e.to_string())?;
        ensure(ls.data() == ld.data(), || format!("{kind}: zero-stub logits differ"))?;
        checked += 1;
    }
    Ok(format!("identity and zero stubs bit-exact on {checked} architectures"))
}

fn overfit() -> Outcome {
    let data = toy_dataset(OVERFIT_SAMPLES, 2, Split::Train);
    let config = TrainConfig {
        dataset: DatasetKind::Toy,
        batch_size: OVERFIT_SAMPLES,
        seed: 1,
        ..TrainConfig::default()
    };
    let mut detail = Vec::new();
    for topology in [Topology::Single, Topology::Dual] {
        let mut net = build_model::<f32>(DatasetKind::Toy, topology, config.seed).map_err(|e| e.to_string())?;
        let mut opt = Sgd::new(&net, config.learning_rate, config.momentum);
        let mut reached = None;
        for epoch in 1..=OVERFIT_MAX_EPOCHS {
            let stats = train_epoch(&mut net, &mut opt, &data, &config, epoch).map_err(|e| e.to_string())?;
            if stats.accuracy == 1.0 {
                reached = Some(epoch);
                break;
            }
        }
        let epoch = reached.ok_or_else(|| format!("{} never reached 1.0", topology.arch_tag()))?;
        let eval = evaluate(&mut net, &data).map_err(|e| e.to_string())?;
        detail.push(format!("{} epoch {epoch} (eval acc {:.2})", topology.arch_tag(), eval.accuracy));
    }
    Ok(detail.join(", "))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("gradient check, f64, rel err < 1e-4, < 60 s", gradient_check),
        ("parameter preservation", parameter_preservation),
        ("gradient transform correctness", gradient_transform_correctness),
        ("desk-scale MNIST reproduction", desk_scale_mnist),
        ("byte-identical metrics CSV", determinism),
        ("loader fidelity", loader_fidelity),
        ("stub equivalences", stub_equivalences),
        ("overfit sanity", overfit),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
