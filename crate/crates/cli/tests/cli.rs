//! End-to-end tests that drive the compiled `diffract-qat` binary the way a
//! user would: real config files, real run directories, real exit codes.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffract_qat::data::load_idx;
use diffract_qat::formats::{network_from_checkpoint, read_checkpoint, read_field_dump};
use diffract_qat::network::LayerQuantizer;
use diffract_qat::quantizers::QuantizerSpec;
use diffract_qat::training::{evaluate_hard, wrap_phase, Task};

const BIN: &str = env!("CARGO_BIN_EXE_diffract-qat");
const TINY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/tiny");
const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden");
const DIGITS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/data/digits");

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// A complete config for the bundled 16x16 corpus, small enough to train in
/// well under a second.
fn tiny_config(dir: &Path, name: &str, quantizer: &str, epochs_qat: usize) -> PathBuf {
    let path = dir.join(format!("{name}.toml"));
    let out_dir = dir.join("runs");
    let text = format!(
        r#"
[run]
name = "{name}"
out_dir = "{}"
seed = 5
task = "classification"

[data]
format = "idx"
train_images = "{TINY}/train-images-idx3-ubyte"
train_labels = "{TINY}/train-labels-idx1-ubyte"
test_images = "{TINY}/test-images-idx3-ubyte"
test_labels = "{TINY}/test-labels-idx1-ubyte"

[model]
layer_size = 16
fov_size = 16
num_layers = 3

[train]
epochs_fp = 2
epochs_qat = {epochs_qat}
batch_size = 8
lr = 0.03
quantizer = "{quantizer}"
levels = 4
"#,
        out_dir.display()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let dir = scratch("unknown-key");
    let path = dir.join("bad.toml");
    fs::write(&path, "[train]\nlevls = 4\n").unwrap();
    let out = run(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let err = stderr_of(&out);
    assert!(err.contains("levls"), "stderr should name the key: {err}");
}

#[test]
fn train_writes_a_complete_run_directory() {
    let dir = scratch("train-complete");
    let cfg = tiny_config(&dir, "full", "psq-lt", 2);
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let run_dir = dir.join("runs/full");
    for file in [
        "manifest.toml",
        "metrics.csv",
        "summary.toml",
        "checkpoints/fp_best.d2nn",
        "checkpoints/fp_best.d2nn.meta.toml",
        "checkpoints/qat_best.d2nn",
        "checkpoints/qat_best.d2nn.meta.toml",
        "checkpoints/final.d2nn",
        "checkpoints/final.d2nn.meta.toml",
    ] {
        assert!(run_dir.join(file).exists(), "missing {file}");
    }

    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(
        lines[0], "stage,epoch,split,loss,task_loss,regularizer,accuracy",
        "header"
    );
    // Two stages x two epochs x (train row + val row).
    assert_eq!(lines.len(), 9);
    assert_eq!(lines.iter().filter(|l| l.starts_with("fp,")).count(), 4);
    assert_eq!(lines.iter().filter(|l| l.starts_with("qat,")).count(), 4);

    let summary: toml::Value =
        toml::from_str(&fs::read_to_string(run_dir.join("summary.toml")).unwrap()).unwrap();
    assert_eq!(summary["completed"].as_bool(), Some(true));
    assert_eq!(summary["method"].as_str(), Some("psq-lt"));
    assert!(summary["metrics"]["accuracy"].as_float().is_some());

    let name = stdout_of(&out);
    assert!(name.contains("full: test accuracy ="), "stdout: {name}");
}

#[test]
fn post_quantization_summary_matches_library_evaluation() {
    let dir = scratch("pq-consistency");
    let cfg = tiny_config(&dir, "pq", "hard", 0);
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let run_dir = dir.join("runs/pq");
    let summary: toml::Value =
        toml::from_str(&fs::read_to_string(run_dir.join("summary.toml")).unwrap()).unwrap();
    let reported = summary["metrics"]["accuracy"].as_float().unwrap();

    // Recreate the post-quantization evaluation by hand: take the
    // full-precision checkpoint, wrap its phases onto [0, 2pi), quantize
    // them hard to four levels, and score the same test set.
    let ckpt = read_checkpoint(&run_dir.join("checkpoints/fp_best.d2nn")).unwrap();
    let fp_net = network_from_checkpoint(&ckpt, None).unwrap();
    let wrapped: Vec<_> = fp_net.phases().iter().map(|p| p.mapv(wrap_phase)).collect();
    let spec = QuantizerSpec::new(0.0, 1.99 * PI, 4).unwrap();
    let hard_net = diffract_qat::network::DiffractiveNetwork::with_uniform_quantizer(
        *fp_net.geometry(),
        wrapped,
        LayerQuantizer::Hard(spec),
    )
    .unwrap();
    let test = load_idx(
        Path::new(TINY).join("test-images-idx3-ubyte").as_path(),
        Path::new(TINY).join("test-labels-idx1-ubyte").as_path(),
    )
    .unwrap();
    let metrics = evaluate_hard(&hard_net, &test, Task::Classification).unwrap();
    assert_eq!(
        metrics.accuracy.unwrap(),
        reported,
        "bitwise accuracy match"
    );
}

#[test]
fn existing_run_directory_requires_resume() {
    let dir = scratch("needs-resume");
    let cfg = tiny_config(&dir, "again", "psq-ft", 1);
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("--resume"));
}

#[test]
fn resume_regenerates_identical_stage_outputs() {
    let dir = scratch("resume-identical");
    let cfg = tiny_config(&dir, "resume", "psq-lt", 2);
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let run_dir = dir.join("runs/resume");
    let qat_ckpt = run_dir.join("checkpoints/qat_best.d2nn");
    let metrics_path = run_dir.join("metrics.csv");
    let original_qat = fs::read(&qat_ckpt).unwrap();
    let original_metrics = fs::read_to_string(&metrics_path).unwrap();
    let original_summary = fs::read_to_string(run_dir.join("summary.toml")).unwrap();

    // Simulate an interrupted run: stage one finished, stage two lost.
    fs::remove_file(&qat_ckpt).unwrap();
    fs::remove_file(run_dir.join("checkpoints/qat_best.d2nn.meta.toml")).unwrap();
    fs::remove_file(run_dir.join("checkpoints/final.d2nn")).unwrap();
    fs::remove_file(run_dir.join("summary.toml")).unwrap();
    let fp_rows: String = original_metrics
        .lines()
        .filter(|l| l.starts_with("stage,") || l.starts_with("fp,"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&metrics_path, fp_rows).unwrap();

    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--resume"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    // Stage two is seeded independently of stage one's in-memory history,
    // so the rerun must reproduce the original bytes exactly.
    assert_eq!(
        fs::read(&qat_ckpt).unwrap(),
        original_qat,
        "checkpoint bytes"
    );
    assert_eq!(
        fs::read_to_string(&metrics_path).unwrap(),
        original_metrics,
        "metrics rows"
    );
    assert_eq!(
        fs::read_to_string(run_dir.join("summary.toml")).unwrap(),
        original_summary,
        "summary"
    );
}

#[test]
fn resume_rejects_a_changed_config() {
    let dir = scratch("resume-changed");
    let cfg = tiny_config(&dir, "drift", "psq-ft", 1);
    let out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    // Same run name, different hyperparameter: the stored manifest no
    // longer matches what this config would produce.
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("lr = 0.03", "lr = 0.05");
    fs::write(&cfg, text).unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--resume"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_of(&out).contains("manifest"));
}

#[test]
fn eval_reproduces_committed_outputs() {
    let dir = scratch("eval-golden");
    let out = run(&[
        "eval",
        "--checkpoint",
        &format!("{GOLDEN}/fixture.d2nn"),
        "--task",
        "classification",
        "--images",
        &format!("{TINY}/test-images-idx3-ubyte"),
        "--labels",
        &format!("{TINY}/test-labels-idx1-ubyte"),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    for file in ["eval_metrics.csv", "confusion.csv"] {
        let produced = fs::read(dir.join(file)).unwrap();
        let golden = fs::read(Path::new(GOLDEN).join(file)).unwrap();
        assert_eq!(produced, golden, "{file} differs from committed output");
    }

    // Each confusion row must account for exactly the samples of its class.
    let test = load_idx(
        Path::new(TINY).join("test-images-idx3-ubyte").as_path(),
        Path::new(TINY).join("test-labels-idx1-ubyte").as_path(),
    )
    .unwrap();
    let mut counts = [0usize; 10];
    for s in &test {
        counts[s.label.unwrap() as usize] += 1;
    }
    let confusion = fs::read_to_string(dir.join("confusion.csv")).unwrap();
    for (row, line) in confusion.lines().skip(1).enumerate() {
        let sum: usize = line
            .split(',')
            .skip(1)
            .map(|v| v.parse::<usize>().unwrap())
            .sum();
        assert_eq!(sum, counts[row], "row {row} total");
    }
}

#[test]
fn compare_merges_valid_runs_and_warns_about_the_rest() {
    let dir = scratch("compare");
    let mk = |name: &str, task: &str, method: &str, body: &str| {
        let d = dir.join(name);
        fs::create_dir_all(&d).unwrap();
        fs::write(
            d.join("summary.toml"),
            format!(
                "completed = true\ntask = \"{task}\"\nmethod = \"{method}\"\nlevels = 4\nseed = 1\n\n[metrics]\n{body}\n"
            ),
        )
        .unwrap();
        d
    };
    let a = mk("cls-run", "classification", "psq-lt", "accuracy = 0.5");
    let b = mk("qpi-run", "qpi", "hard", "ssim = 0.25\nl1 = 0.125");
    let bogus = dir.join("not-a-run");
    fs::create_dir_all(&bogus).unwrap();

    let out = run(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        bogus.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("not-a-run"),
        "warns about the bad dir"
    );
    let table = stdout_of(&out);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "run,task,method,levels,seed,accuracy,ssim,l1");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("cls-run,classification,psq-lt,4,1,"));
    assert!(
        lines[1].ends_with(",,"),
        "no qpi metrics for a classification run"
    );
    assert!(lines[2].starts_with("qpi-run,qpi,hard,4,1,"));

    // One valid run is not a comparison.
    let out = run(&["compare", a.to_str().unwrap(), bogus.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn exported_phase_maps_are_quantized_to_the_level_set() {
    let dir = scratch("export-maps");
    let out = run(&[
        "export",
        "--checkpoint",
        &format!("{GOLDEN}/fixture.d2nn"),
        "--what",
        "phase-maps",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));

    let spec = QuantizerSpec::new(0.0, 1.99 * PI, 4).unwrap();
    let levels: Vec<f64> = (0..4).map(|i| spec.level(i)).collect();
    for layer in 0..3 {
        let raw = dir.join(format!("layer{layer:02}_raw.cfld"));
        assert!(raw.exists());
        let hard = read_field_dump(&dir.join(format!("layer{layer:02}_hard.cfld"))).unwrap();
        assert_eq!(hard.field.dim(), (16, 16));
        for v in hard.field.iter() {
            assert!(
                levels.contains(&v.re),
                "hard map value {} is not a quantizer level",
                v.re
            );
            assert_eq!(v.im, 0.0);
        }
    }

    let histograms = fs::read_to_string(dir.join("histograms.csv")).unwrap();
    let mut lines = histograms.lines();
    assert_eq!(lines.next().unwrap(), "layer,kind,bin,value,count");
    for layer in 0..3 {
        let level_total: usize = histograms
            .lines()
            .filter(|l| l.starts_with(&format!("{layer},level,")))
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(
            level_total, 256,
            "layer {layer} level counts cover the grid"
        );
        let raw_total: usize = histograms
            .lines()
            .filter(|l| l.starts_with(&format!("{layer},raw,")))
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(raw_total, 256, "layer {layer} raw counts cover the grid");
    }

    let temps = fs::read_to_string(dir.join("temperatures.csv")).unwrap();
    let lines: Vec<&str> = temps.lines().collect();
    assert_eq!(lines[0], "layer,tau");
    assert_eq!(lines.len(), 4, "header plus one row per layer");
    for line in &lines[1..] {
        let tau: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(tau > 0.0);
    }
}

#[test]
fn exported_field_matches_the_layer_grid() {
    let dir = scratch("export-field");
    let out = run(&[
        "export",
        "--checkpoint",
        &format!("{GOLDEN}/fixture.d2nn"),
        "--what",
        "field",
        "--images",
        &format!("{TINY}/test-images-idx3-ubyte"),
        "--labels",
        &format!("{TINY}/test-labels-idx1-ubyte"),
        "--index",
        "2",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_of(&out));
    let dump = read_field_dump(&dir.join("field_0002.cfld")).unwrap();
    assert_eq!(dump.field.dim(), (16, 16));
    assert!(dump.field.iter().any(|v| v.norm_sqr() > 0.0));
}

#[test]
fn gradcheck_presets_all_pass() {
    for preset in ["default", "ste", "hard"] {
        let out = run(&["gradcheck", "--preset", preset]);
        assert_eq!(
            exit_code(&out),
            0,
            "preset {preset}: {}{}",
            stdout_of(&out),
            stderr_of(&out)
        );
    }
}

#[test]
fn eval_rejects_images_larger_than_the_field_of_view() {
    let dir = scratch("eval-mismatch");
    let out = run(&[
        "eval",
        "--checkpoint",
        &format!("{GOLDEN}/fixture.d2nn"),
        "--task",
        "classification",
        "--images",
        &format!("{DIGITS}/test-images-idx3-ubyte"),
        "--labels",
        &format!("{DIGITS}/test-labels-idx1-ubyte"),
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(stderr_of(&out).contains("field of view"));
}
