//! Acceptance criteria, one test each.
//!
//! Tests share a lock so wall-clock figures are not distorted by each other.
//! Every test prints a single `[PASS]`/`[FAIL]` line with the measured value,
//! the threshold and the runtime against its budget. Runtime is reported, not
//! asserted: it depends on the host.

mod common;

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use flowlab::codec::{
    default_top_k, finetune_high_dim, kl_loss, run_variant, shortcut_diagnostic, CodecConfig, DecoderConfig,
    FeatureSource, FinetuneConfig, LatentSource, Trained, Variant,
};
use flowlab::flow::{
    euler_integrate, euler_sample, shift_factor, toy_shift, train_flow, EulerConfig, FlowConfig, FlowModel,
    TimestepSampler, TrainConfig,
};
use flowlab::lab::{self, Check, ExperimentSpec, RunOptions, Space};
use flowlab::manifold::{GlyphDistribution, RepConfig, RepresentationMap};
use flowlab::metrics::{mean, nn_distances, reference_set, tail_mean, SpaceComparison, TAIL_Q};
use flowlab::numeric::Tensor;
use flowlab::oracle::{capacity_probe, CapacityConfig, DatasetOracle};
use flowlab::rng::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

static SERIAL: Mutex<()> = Mutex::new(());

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn report(id: u32, name: &str, passed: bool, detail: &str, elapsed: Duration, budget: Option<Duration>) {
    let budget = match budget {
        Some(b) => format!("{:.1}s / budget {:.0}s", elapsed.as_secs_f64(), b.as_secs_f64()),
        None => format!("{:.1}s", elapsed.as_secs_f64()),
    };
    let tag = if passed { "PASS" } else { "FAIL" };
    // Written to the raw handle so the line shows even when libtest captures output.
    let line = format!("[{tag}] criterion {id:>2} {name}: {detail} ({budget})\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn glyph() -> GlyphDistribution {
    GlyphDistribution::builtin().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn c01_shift_anchors() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let a = shift_factor(16, 2).unwrap();
    let b = shift_factor(768, 1).unwrap();
    let via_check = lab::verify(Check::Shift).unwrap();
    let passed = a == 2.0 && (b - 6.9282).abs() <= 0.005 && via_check.passed;
    report(
        1,
        "shift-factor anchors",
        passed,
        &format!("s(16,2)={a}, s(768,1)={b:.6} (want 2, 6.9282±0.005)"),
        t.elapsed(),
        None,
    );
    assert!(passed);
}

#[test]
fn c02_decomposition_identity() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let r = lab::verify(Check::Decomposition).unwrap();
    let cases = r.details.as_array().unwrap();
    let configs: Vec<String> = cases
        .iter()
        .map(|c| format!("({},{})", c["config"]["h"], c["config"]["l"]))
        .collect();
    let shape_ok = cases.len() == 3
        && cases
            .iter()
            .all(|c| c["config"]["atoms"] == json!(64) && c["config"]["trials"] == json!(1000));
    let passed = r.passed && r.worst <= 1e-8 && shape_ok;
    report(
        2,
        "decomposition identity",
        passed,
        &format!("max rel err {:.3e} over {} (want ≤ 1e-8)", r.worst, configs.join(" ")),
        t.elapsed(),
        Some(Duration::from_secs(10)),
    );
    assert!(passed);
}

#[test]
fn c03_gradient_suite() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let r = lab::verify(Check::Gradients).unwrap();
    let n = r.details.as_array().unwrap().len();
    let passed = r.passed && r.worst <= 1e-4 && n == 20;
    report(
        3,
        "autodiff vs finite differences",
        passed,
        &format!("worst rel err {:.3e} over {n} architectures (want ≤ 1e-4)", r.worst),
        t.elapsed(),
        Some(Duration::from_secs(30)),
    );
    assert!(passed);
}

#[test]
fn c04_ambient_tail_vs_intrinsic() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::new("toy-ps-2d-vs-8d", Space::Ambient { h: 8 }, SEEDS.to_vec());
    assert_eq!((spec.model.width, spec.model.depth), (256, 4));
    assert_eq!((spec.training.steps, spec.training.batch), (20_000, 256));
    let manifest = lab::run(&spec, &RunOptions::new(dir.path())).unwrap();
    let cmp: SpaceComparison = serde_json::from_value(read_json(&dir.path().join("comparison.json"))).unwrap();
    // Each seed trains one flow per space.
    let per_run = manifest
        .runs
        .iter()
        .map(|r| r.wall_clock_seconds / 2.0)
        .fold(0.0, f64::max);
    let passed = cmp.tail_ratio >= 1.3;
    let seeds: Vec<String> = cmp.per_seed.iter().map(|s| format!("{:.3}", s.tail_ratio)).collect();
    report(
        4,
        "8D vs 2D tail NN distance",
        passed,
        &format!(
            "tail 2D {:.4}, 8D {:.4}, ratio {:.3} (want ≥ 1.3; per seed {}); slowest run {:.0}s / budget 180s",
            cmp.tail_mean_a,
            cmp.tail_mean_b,
            cmp.tail_ratio,
            seeds.join(", "),
            per_run
        ),
        t.elapsed(),
        None,
    );
    assert!(passed, "tail ratio {:.3} < 1.3", cmp.tail_ratio);
}

#[test]
fn c05_capacity_bottleneck() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let g = glyph();
    let narrow = capacity_probe(&g, &CapacityConfig::new(64, vec![16]), 0, 1).unwrap();
    let skip = narrow.entry(16, true).unwrap().final_loss;
    let plain = narrow.entry(16, false).unwrap().final_loss;
    let mut control_cfg = CapacityConfig::new(2, vec![64]);
    control_cfg.wide_head = vec![false];
    let control = capacity_probe(&g, &control_cfg, 0, 1)
        .unwrap()
        .entry(64, false)
        .unwrap()
        .final_loss;
    let passed = skip <= 0.1 * plain && control <= 1e-3;
    report(
        5,
        "capacity bottleneck",
        passed,
        &format!(
            "h=64 w=16: wide-head {skip:.3e} vs no-skip {plain:.3e} (ratio {:.3}, want ≤ 0.1); h=2 w=64 control {control:.3e} (want ≤ 1e-3)",
            skip / plain
        ),
        t.elapsed(),
        Some(Duration::from_secs(300)),
    );
    assert!(passed);
}

const C6_STEPS: usize = 2000;
const C6_SAMPLES: usize = 4000;

/// Tail NN distance in pixel space of (S-VAE latent flow, raw-feature flow).
fn svae_vs_rae(g: &GlyphDistribution, reference: &Tensor, seed: u64) -> (f64, f64) {
    let codec_cfg = CodecConfig {
        stage1_steps: C6_STEPS,
        ..CodecConfig::default()
    };
    assert_eq!((codec_cfg.rep.width, codec_cfg.latent), (64, 2));
    let dec_cfg = DecoderConfig {
        steps: C6_STEPS,
        ..DecoderConfig::default()
    };
    let train = TrainConfig::new(C6_STEPS, 256, 1e-3);

    let (_, svae) = run_variant(Variant::SVae, &codec_cfg, &dec_cfg, g, seed).unwrap();
    let Trained::Codec(codec) = svae else { unreachable!() };
    let (_, rae) = run_variant(Variant::Rae, &codec_cfg, &dec_cfg, g, seed).unwrap();
    let Trained::Rae(decoder) = rae else { unreachable!() };

    let mut tails = [0.0; 2];
    for (i, dim) in [codec.latent_dim(), decoder.map().width()].into_iter().enumerate() {
        let shift = toy_shift(dim);
        let mut model = FlowModel::new(FlowConfig::new(dim), derive_seed(seed, "flow-model")).unwrap();
        let sampler = TimestepSampler::with_shift(shift);
        let euler = EulerConfig::new(50, shift);
        let pixels = if i == 0 {
            let src = LatentSource {
                codec: &codec,
                glyph: g,
            };
            train_flow(&mut model, &src, &sampler, &train, derive_seed(seed, "flow-train")).unwrap();
            let z = euler_sample(&model, C6_SAMPLES, &euler, derive_seed(seed, "flow-sample")).unwrap();
            codec.decode_pipeline(&z).unwrap()
        } else {
            let src = FeatureSource {
                map: decoder.map(),
                glyph: g,
            };
            train_flow(&mut model, &src, &sampler, &train, derive_seed(seed, "flow-train")).unwrap();
            let f = euler_sample(&model, C6_SAMPLES, &euler, derive_seed(seed, "flow-sample")).unwrap();
            decoder.decode(&f).unwrap()
        };
        tails[i] = tail_mean(&nn_distances(&pixels, reference).unwrap(), TAIL_Q).unwrap();
    }
    (tails[0], tails[1])
}

#[test]
fn c06_svae_latent_vs_raw_features() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let g = glyph();
    let reference = reference_set(&g).unwrap();
    let (latent, raw): (Vec<f64>, Vec<f64>) = SEEDS.iter().map(|&s| svae_vs_rae(&g, &reference, s)).unzip();
    let ratio = mean(&latent) / mean(&raw);
    let passed = ratio <= 0.8;
    report(
        6,
        "S-VAE latent vs RAE feature flow",
        passed,
        &format!(
            "pixel tail: latent {:.4}, raw d_h=64 {:.4}, ratio {ratio:.3} (want ≤ 0.8)",
            mean(&latent),
            mean(&raw)
        ),
        t.elapsed(),
        Some(Duration::from_secs(900)),
    );
    assert!(passed);
}

#[test]
fn c07_psvae_stage2_recovery() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let g = glyph();
    let cfg = CodecConfig {
        rep: RepConfig::lossy(64),
        stage1_steps: 2500,
        stage2_steps: 2500,
        stage2_lr: Some(1e-4),
        ..CodecConfig::default()
    };
    assert_eq!(cfg.rep.effective_lost_rank(), 8);
    let (mut s1, mut s2, mut ps_probe, mut p_probe) = (vec![], vec![], vec![], vec![]);
    for &seed in &SEEDS {
        let (ps, _) = run_variant(Variant::PsVae, &cfg, &DecoderConfig::default(), &g, seed).unwrap();
        let (p, _) = run_variant(Variant::PVae, &cfg, &DecoderConfig::default(), &g, seed).unwrap();
        s1.push(ps.stage1_pixel_mse.unwrap());
        s2.push(ps.pixel_mse);
        ps_probe.push(ps.probe_accuracy);
        p_probe.push(p.probe_accuracy);
    }
    let mse_ratio = mean(&s2) / mean(&s1);
    let (acc_ps, acc_p) = (mean(&ps_probe), mean(&p_probe));
    let recovery = mse_ratio <= 0.5;
    let semantic = acc_ps >= acc_p + 0.05;
    report(
        7,
        "PS-VAE stage-2 recovery",
        recovery && semantic,
        &format!(
            "pixel MSE stage1 {:.3e} -> stage2 {:.3e}, ratio {mse_ratio:.3} (want ≤ 0.5: {}); probe PS-VAE {acc_ps:.3} vs P-VAE {acc_p:.3} (want margin ≥ 0.05: {})",
            mean(&s1),
            mean(&s2),
            if recovery { "ok" } else { "no" },
            if semantic { "ok" } else { "no" },
        ),
        t.elapsed(),
        Some(Duration::from_secs(900)),
    );
    assert!(recovery, "stage-2 MSE ratio {mse_ratio:.3}");
    assert!(semantic, "probe accuracies PS-VAE {acc_ps} vs P-VAE {acc_p}");
}

#[test]
fn c08_kl_closed_form_vs_monte_carlo() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=4);
        let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let logvar: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..1.5)).collect();
        let closed = kl_loss(&Tensor::row(&mu).unwrap(), &Tensor::row(&logvar).unwrap()).unwrap();
        let sd: Vec<f64> = logvar.iter().map(|l| (0.5 * l).exp()).collect();
        let mut acc = 0.0;
        for _ in 0..1_000_000 {
            for j in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                let z = mu[j] + sd[j] * e;
                acc += 0.5 * (z * z - e * e - logvar[j]);
            }
        }
        let mc = acc / 1e6;
        worst = worst.max((mc - closed).abs() / closed);
    }
    let passed = worst <= 0.01;
    report(
        8,
        "KL closed form vs Monte Carlo",
        passed,
        &format!("worst relative gap {worst:.3e} over 100 posteriors, 1e6 draws each (want ≤ 1e-2)"),
        t.elapsed(),
        Some(Duration::from_secs(30)),
    );
    assert!(passed);
}

#[test]
fn c09_euler_exactness() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let atom: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
    let oracle = DatasetOracle::new(Tensor::row(&atom).unwrap()).unwrap();
    let noise: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
    let noise = Tensor::matrix(100, 2, noise).unwrap();
    let mut worst: f64 = 0.0;
    for steps in [1, 10, 50] {
        let out = euler_integrate(&oracle, noise.clone(), &EulerConfig::new(steps, 1.0)).unwrap();
        for row in out.to_rows() {
            worst = row.iter().zip(&atom).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
    }
    let passed = worst <= 1e-9;
    report(
        9,
        "Euler exactness on single atom",
        passed,
        &format!("max |x0 - atom| {worst:.3e} over 100 draws x steps {{1,10,50}} (want ≤ 1e-9)"),
        t.elapsed(),
        Some(Duration::from_secs(5)),
    );
    assert!(passed);
}

#[test]
fn c10_shortcut_channels() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let g = glyph();
    let d_h = 768;
    let frozen = RepresentationMap::new(
        RepConfig {
            width: d_h,
            ..RepConfig::default()
        },
        &g,
        derive_seed(0, "shortcut-rep"),
    )
    .unwrap();
    let ft = FinetuneConfig::default();
    let (working, _) = finetune_high_dim(&frozen, &g, &ft, derive_seed(0, "shortcut-finetune")).unwrap();
    let k = default_top_k(d_h);
    let r = shortcut_diagnostic(&working, &frozen, &g, k, &ft.decoder, 0).unwrap();
    let passed = k == 32 && r.ratio <= 4.0;
    report(
        10,
        "shortcut diagnostic",
        passed,
        &format!(
            "top-{k}/{d_h} decoder MSE {:.3e} vs full {:.3e}, ratio {:.3} (want ≤ 4)",
            r.top_k_mse, r.full_mse, r.ratio
        ),
        t.elapsed(),
        Some(Duration::from_secs(600)),
    );
    assert!(passed);
}

/// Reduced-budget specs for every recipe; determinism does not depend on the
/// budget.
fn determinism_specs() -> Vec<Value> {
    let flow = json!({"steps": 40, "batch": 32, "lr": 1e-3, "log_every": 10});
    let model = json!({"width": 16, "depth": 2});
    let eval = json!({"samples": 300, "euler_steps": 8, "plot_reference": 500});
    let codec = json!({"stage1_steps": 20, "stage2_steps": 20, "batch": 32});
    vec![
        json!({"recipe": "toy-ps-2d-vs-8d", "space": {"kind": "ambient", "h": 8}, "seeds": [0, 1],
               "model": model, "training": flow, "eval": eval}),
        json!({"recipe": "verify-decomposition", "space": {"kind": "ambient", "h": 16}, "seeds": [0],
               "decomposition": {"atoms": 16, "trials": 50}}),
        json!({"recipe": "capacity-bottleneck", "space": {"kind": "ambient", "h": 8}, "seeds": [0],
               "model": model, "training": flow, "capacity": {"widths": [8]}}),
        json!({"recipe": "ladder-rae-svae-pvae-psvae", "space": {"kind": "psvae", "d_l": 2}, "seeds": [0],
               "model": model, "training": flow, "eval": eval, "codec": codec}),
        json!({"recipe": "shortcut-hd", "space": {"kind": "rae", "d_h": 48}, "seeds": [0],
               "shortcut": {"finetune": {"steps": 20, "batch": 32, "decoder": {"steps": 20, "batch": 32}}}}),
        json!({"recipe": "shift-table", "space": {"kind": "intrinsic"}, "seeds": [0]}),
    ]
}

#[test]
fn c11_determinism() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let mut compared = 0;
    let mut mismatches = vec![];
    for raw in determinism_specs() {
        let spec = ExperimentSpec::from_json(&raw.to_string()).unwrap();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            lab::run(&spec, &RunOptions::new(d.path())).unwrap();
            common::validate_tree(d.path());
        }
        let json_files = common::files_with_ext(dirs[0].path(), "json");
        let svg_files = common::files_with_ext(dirs[0].path(), "svg");
        assert_eq!(json_files, common::files_with_ext(dirs[1].path(), "json"));
        for rel in json_files
            .iter()
            .chain(&svg_files)
            .filter(|p| !p.ends_with("manifest.json"))
        {
            compared += 1;
            if std::fs::read(dirs[0].path().join(rel)).unwrap() != std::fs::read(dirs[1].path().join(rel)).unwrap() {
                mismatches.push(format!("{}:{}", spec.recipe, rel.display()));
            }
        }
    }
    let passed = mismatches.is_empty() && compared > 0;
    report(
        11,
        "deterministic reruns",
        passed,
        &format!(
            "{compared} JSON/SVG artifacts across 6 recipes, {} differ",
            mismatches.len()
        ),
        t.elapsed(),
        None,
    );
    assert!(passed, "differing artifacts: {mismatches:?}");
}
