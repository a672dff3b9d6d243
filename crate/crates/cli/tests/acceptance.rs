//! Acceptance suite: one line per criterion, pass or fail, with the measured values.
//!
//! Runs as a plain binary (`harness = false`) so every line reaches the `cargo test` output and
//! runtime budgets are measured with the criteria running one after another. Pass criterion
//! numbers as arguments to run a subset, e.g. `cargo test -p liftpose-cli --test acceptance -- 4 8`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use liftpose_core::calibration::{
    calibrate_pair, calibrate_views, gated_frames, pair_correspondences, Calibration,
};
use liftpose_core::epipolar::{Correspondence, FundamentalMatrix, RelativePose};
use liftpose_core::kinematics::{
    render_keypoints, KeypointSequence2D, NoiseConfig, SceneConfig, Skeleton, SyntheticScene,
};
use liftpose_core::lifting::{
    infer, train, CameraCorrectionModel, LiftingModel, TrainConfig, TrainingData,
};
use liftpose_core::linalg::{axis_angle, rotation_angle_between};
use liftpose_core::metrics::{mpjpe, nmpjpe, pmpjpe};
use liftpose_core::neuralcore::gradcheck::{check_params, op_suite, GradCheckReport};
use liftpose_core::neuralcore::{Graph, ParamStore, Tensor, Var};
use liftpose_core::pose::Pose3D;
use liftpose_core::reprojection::RotationTable;
use liftpose_core::triangulation::{
    camera_matrices, fundamental_for_cameras, gate_views, reprojection_cost, select_view_pair,
    triangulate_linear, triangulate_polynomial, triangulate_sequence, GateConfig, PseudoGtCache,
};
use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use common::{toy, Rig};

const GEOMETRY_ROTATION_TOL_RAD: f64 = 1e-6;
const GEOMETRY_PMPJPE_TOL_MM: f64 = 1e-6;
const GEOMETRY_BUDGET: Duration = Duration::from_secs(10);

const NOISY_SIGMA_PX: f64 = 2.0;
const NOISY_OUTLIER_FRACTION: f64 = 0.2;
const NOISY_ROTATION_TOL_DEG: f64 = 2.0;
const NOISY_PMPJPE_TOL_HEIGHT: f64 = 0.03;
const NOISY_BUDGET: Duration = Duration::from_secs(60);
/// Measured means over seeds 0..5; a drift beyond `FIXTURE_REL_TOL` flags a behaviour change.
const NOISY_ROTATION_FIXTURE_DEG: f64 = 2.3809;
const NOISY_PMPJPE_FIXTURE_MM: f64 = 14.029;
const FIXTURE_REL_TOL: f64 = 0.01;

const POLY_PAIRS: usize = 1000;
const POLY_SLACK: f64 = 1e-12;

const GRAD_H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_HIDDEN: usize = 64;
const GRAD_WIDTH: usize = 128;
const GRAD_COORDS_PER_TENSOR: usize = 12;
const GRAD_BUDGET: Duration = Duration::from_secs(120);

const E2E_FRAMES: usize = 5000;
const E2E_HELDOUT_FRAMES: usize = 1000;
const E2E_EPOCHS: usize = 8;
const E2E_TOL_HEIGHT: f64 = 0.05;
const E2E_TOL_UNTRAINED: f64 = 0.5;
const E2E_BUDGET: Duration = Duration::from_secs(15 * 60);

const ABLATION_EPOCHS: usize = 4;
const ABLATION_OCCLUSION_RATE: f64 = 0.02;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

const METRIC_PAIRS: usize = 10_000;
const METRIC_SLACK: f64 = 1e-12;
const PROCRUSTES_ZERO_TOL: f64 = 1e-9;

const TOY_GENERATOR_STEPS: usize = 200;
const TOY_WINDOW: usize = 20;
const TOY_BUDGET: Duration = Duration::from_secs(60);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn skeleton() -> Skeleton {
    Skeleton::h36m17()
}

fn scene(seed: u64, frames: usize, views: usize) -> SyntheticScene {
    SyntheticScene::generate(
        &skeleton(),
        &SceneConfig {
            frames,
            views,
            seed,
            ..Default::default()
        },
    )
    .unwrap()
}

fn keypoints(scene: &SyntheticScene, noise: &NoiseConfig, seed: u64) -> Vec<KeypointSequence2D> {
    render_keypoints(scene, noise, seed + 1000).unwrap()
}

/// Mean PMPJPE (mm) of the pseudo-GT against the scene, each entry in its reference view.
fn pseudo_gt_error(cache: &PseudoGtCache, scene: &SyntheticScene) -> f64 {
    let errors: Vec<f64> = cache
        .entries
        .iter()
        .map(|(f, e)| pmpjpe(&e.pose, &scene.camera_pose(e.views.0, *f).root_centered()).unwrap())
        .collect();
    errors.iter().sum::<f64>() / errors.len() as f64
}

fn geometry_noiseless() -> Outcome {
    let start = Instant::now();
    let s = scene(1, 270, 2);
    let kp = keypoints(
        &s,
        &NoiseConfig {
            sigma_px: 0.0,
            ..Default::default()
        },
        1,
    );
    let gate = GateConfig::default();
    let cal = calibrate_views(&kp, &gate, 0).unwrap();
    let truth = RelativePose::from_cameras(&s.cameras[0], &s.cameras[1]);
    let rot_err = rotation_angle_between(&cal.rotation(0, 1).unwrap(), &truth.r);
    let cache = triangulate_sequence(&kp, &cal, &gate, &skeleton()).unwrap();
    let err = pseudo_gt_error(&cache, &s);
    let elapsed = start.elapsed();
    outcome(
        rot_err < GEOMETRY_ROTATION_TOL_RAD
            && err < GEOMETRY_PMPJPE_TOL_MM
            && cache.entries.len() == 270
            && elapsed < GEOMETRY_BUDGET,
        format!(
            "rotation error {rot_err:.2e} rad (< {GEOMETRY_ROTATION_TOL_RAD:e}), pseudo-GT PMPJPE {err:.2e} mm (< {GEOMETRY_PMPJPE_TOL_MM:e}) over {} frames",
            cache.entries.len()
        ),
    )
}

/// Replaces a fraction of correspondences by uniform image pairs lying well off the true
/// epipolar geometry (Sampson distance above ten RANSAC thresholds).
fn inject_outliers(
    corr: &mut [Correspondence],
    fraction: f64,
    truth: &FundamentalMatrix,
    size: (f64, f64),
    min_px: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let n = (corr.len() as f64 * fraction).round() as usize;
    let picked = rand::seq::index::sample(rng, corr.len(), n);
    for i in picked.iter() {
        corr[i] = loop {
            let x1 = Vector2::new(rng.random_range(0.0..size.0), rng.random_range(0.0..size.1));
            let x2 = Vector2::new(rng.random_range(0.0..size.0), rng.random_range(0.0..size.1));
            let c = Correspondence::new(x1, x2);
            if truth.sampson_distance(&c) > min_px {
                break c;
            }
        };
    }
    n
}

fn geometry_noisy() -> Outcome {
    let start = Instant::now();
    let gate = GateConfig::default();
    let height = skeleton().height();
    let (mut rot_sum, mut err_sum) = (0.0, 0.0);
    let mut worst = (0.0_f64, 0.0_f64);
    let mut per_seed = Vec::new();
    let seeds = 0..5u64;
    for seed in seeds.clone() {
        let s = scene(seed, 270, 2);
        let kp = keypoints(
            &s,
            &NoiseConfig {
                sigma_px: NOISY_SIGMA_PX,
                ..Default::default()
            },
            seed,
        );
        let (k1, k2) = (kp[0].intrinsics_or_default(), kp[1].intrinsics_or_default());
        let truth = RelativePose::from_cameras(&s.cameras[0], &s.cameras[1]);
        let truth_f = FundamentalMatrix::from_pose(&truth, &k1, &k2).unwrap();
        let frames = gated_frames(&kp[0], &kp[1], &gate);
        let (mut corr, conf) = pair_correspondences(&kp[0], &kp[1], &frames);
        let threshold_px =
            3.0 / (k1.mean_focal() + k2.mean_focal()) * (k1.mean_focal() + k2.mean_focal()) / 2.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0071_13e5);
        let size = (s.cameras[0].width, s.cameras[0].height);
        inject_outliers(
            &mut corr,
            NOISY_OUTLIER_FRACTION,
            &truth_f,
            size,
            10.0 * threshold_px,
            &mut rng,
        );
        let (mut pair, _) = calibrate_pair((0, 1), &corr, &conf, &k1, &k2, 0).unwrap();
        pair.frames = frames;
        let rot_err = rotation_angle_between(&pair.pose.r, &truth.r).to_degrees();
        let cal = Calibration {
            view_count: 2,
            pairs: vec![pair],
        };
        let cache = triangulate_sequence(&kp, &cal, &gate, &skeleton()).unwrap();
        let err = pseudo_gt_error(&cache, &s);
        rot_sum += rot_err;
        err_sum += err;
        per_seed.push(format!("{rot_err:.2}"));
        worst = (worst.0.max(rot_err), worst.1.max(err));
    }
    let n = seeds.count() as f64;
    let (rot, err) = (rot_sum / n, err_sum / n);
    let fixture_ok =
        |measured: f64, fixture: f64| (measured - fixture).abs() <= FIXTURE_REL_TOL * fixture;
    let elapsed = start.elapsed();
    outcome(
        rot < NOISY_ROTATION_TOL_DEG
            && err < NOISY_PMPJPE_TOL_HEIGHT * height
            && fixture_ok(rot, NOISY_ROTATION_FIXTURE_DEG)
            && fixture_ok(err, NOISY_PMPJPE_FIXTURE_MM)
            && elapsed < NOISY_BUDGET,
        format!(
            "mean rotation error {rot:.4} deg (< {NOISY_ROTATION_TOL_DEG}; fixture {NOISY_ROTATION_FIXTURE_DEG}), mean pseudo-GT PMPJPE {err:.3} mm (< {:.1} = 3% of {height:.0}; fixture {NOISY_PMPJPE_FIXTURE_MM}), worst seed {:.4} deg / {:.3} mm, per-seed deg [{}]",
            NOISY_PMPJPE_TOL_HEIGHT * height,
            worst.0,
            worst.1,
            per_seed.join(", ")
        ),
    )
}

struct GateCase {
    confidences: Vec<f64>,
    accepted: bool,
}

fn gate_case(confidences: Vec<f64>, accepted: bool) -> GateCase {
    GateCase {
        confidences,
        accepted,
    }
}

fn mixed(low: f64, low_count: usize, high: f64, high_count: usize) -> Vec<f64> {
    [vec![low; low_count], vec![high; high_count]].concat()
}

fn gating() -> Outcome {
    let gate = GateConfig::default();
    let j = 17;
    let mut one_low = vec![0.95; j];
    one_low[5] = 0.69;
    let mut one_zero = vec![1.0; j];
    one_zero[16] = 0.0;
    let mut joint_at_bound = vec![0.9; j];
    joint_at_bound[0] = 0.7;
    let cases = vec![
        gate_case(vec![1.0; j], true),
        gate_case(vec![0.8; j], true),
        gate_case(vec![0.79; j], false),
        gate_case(vec![0.75; j], false),
        gate_case(vec![0.7; j], false),
        gate_case(joint_at_bound, true),
        gate_case(one_low, false),
        gate_case(one_zero, false),
        gate_case(mixed(0.7, 8, 0.9, 9), true),
        gate_case(mixed(0.7, 9, 0.9, 8), false),
        gate_case(mixed(0.6999, 1, 1.0, 16), false),
        gate_case(mixed(0.7, 1, 0.9, 1), true),
        gate_case(mixed(0.5, 1, 1.0, 1), false),
        gate_case(vec![0.8], true),
        gate_case(vec![0.7999], false),
        gate_case(Vec::new(), false),
    ];
    let mut total = 0;
    let mut correct = 0;
    for case in &cases {
        total += 1;
        correct += usize::from(gate.accepts(&case.confidences) == case.accepted);
    }

    // Multi-view cases: which views pass and which pair triangulates.
    let views = |c: &[f64]| -> Vec<Vec<f64>> { c.iter().map(|&m| vec![m; j]).collect() };
    let pair_cases: Vec<(Vec<Vec<f64>>, Vec<usize>, Option<(usize, usize)>)> = vec![
        (views(&[0.9, 0.85, 0.95]), vec![0, 1, 2], Some((0, 2))),
        (views(&[0.9, 0.79, 0.95]), vec![0, 2], Some((0, 2))),
        (views(&[0.9, 0.6, 0.5]), vec![0], None),
        (views(&[0.8, 0.8]), vec![0, 1], Some((0, 1))),
        (views(&[0.85, 0.85, 0.85]), vec![0, 1, 2], Some((0, 1))),
        (
            vec![vec![1.0; j], cases[6].confidences.clone(), vec![0.9; j]],
            vec![0, 2],
            Some((0, 2)),
        ),
    ];
    for (conf, accepted, pair) in &pair_cases {
        total += 2;
        correct += usize::from(&gate_views(conf, &gate) == accepted);
        correct += usize::from(select_view_pair(conf, &gate) == *pair);
    }

    // End to end: frames whose second view drops out are not triangulated.
    let s = scene(5, 40, 2);
    let mut kp = keypoints(
        &s,
        &NoiseConfig {
            sigma_px: 0.0,
            ..Default::default()
        },
        5,
    );
    let dropped = [3usize, 17, 18, 30];
    for &f in &dropped {
        kp[1].confidences[f][7] = 0.69;
    }
    let cal = calibrate_views(&kp, &gate, 0).unwrap();
    let cache = triangulate_sequence(&kp, &cal, &gate, &skeleton()).unwrap();
    total += 1;
    correct += usize::from(
        dropped.iter().all(|f| !cache.entries.contains_key(f))
            && cache.entries.len() == 40 - dropped.len(),
    );
    outcome(
        correct == total,
        format!("{correct}/{total} table cases match the 0.8 mean / 0.7 per-joint rule"),
    )
}

fn noisy_pair(
    rig: &Rig,
    x: &Vector3<f64>,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (Vector2<f64>, Vector2<f64>) {
    let n = Normal::new(0.0, sigma).unwrap();
    let mut jitter = |p: Vector2<f64>| p + Vector2::new(n.sample(rng), n.sample(rng));
    (jitter(rig.project1(x)), jitter(rig.project2(x)))
}

fn polynomial_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut violations = 0;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut mean_gain = 0.0;
    let per_rig = 20;
    for r in 0..(POLY_PAIRS / per_rig) as u64 {
        let rig = Rig::random(1000 + r);
        let (p1, p2) = camera_matrices(&rig.pose, &rig.k1, &rig.k2);
        let f = fundamental_for_cameras(&rig.pose, &rig.k1, &rig.k2).unwrap();
        for x in rig.points(per_rig, 2000 + r) {
            let sigma = rng.random_range(0.5..4.0);
            let (a, b) = noisy_pair(&rig, &x, sigma, &mut rng);
            let lin = triangulate_linear(&a, &b, &p1, &p2).unwrap();
            let poly = triangulate_polynomial(&a, &b, &f, &p1, &p2).unwrap();
            let (cl, cp) = (
                reprojection_cost(&lin, &a, &b, &p1, &p2),
                reprojection_cost(&poly, &a, &b, &p1, &p2),
            );
            if cp > cl + POLY_SLACK {
                violations += 1;
            }
            worst_excess = worst_excess.max(cp - cl);
            mean_gain += (cl - cp) / POLY_PAIRS as f64;
        }
    }
    outcome(
        violations == 0,
        format!(
            "{violations} violations in {POLY_PAIRS} pairs (slack {POLY_SLACK:e}); max(cost_poly - cost_dlt) = {worst_excess:.2e} px^2, mean gain {mean_gain:.3e} px^2"
        ),
    )
}

fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

fn weighted_sum(g: &mut Graph, y: Var, weights: &Tensor) -> liftpose_core::Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst_op = ("", 0.0_f64);
    let mut op_checked = 0;
    let mut ops = 0;
    for (rows, cols, seed) in [(3, 4, 1u64), (5, 7, 2), (1, 3, 3)] {
        for (name, r) in op_suite(rows, cols, seed).unwrap() {
            ops += 1;
            op_checked += r.checked;
            if r.max_relative_error >= worst_op.1 {
                worst_op = (name, r.max_relative_error);
            }
        }
    }

    let config = TrainConfig {
        window: 27,
        hidden: GRAD_HIDDEN,
        width: GRAD_WIDTH,
        ..Default::default()
    }
    .model_config(17);
    let batch = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(55);

    let lifting = LiftingModel::new(config, 3).unwrap();
    let x = random_tensor(config.window * batch, 2 * config.joints, &mut rng);
    let w = random_tensor(batch, 3 * config.joints, &mut rng);
    let lift_report = check_params(
        &lifting.params,
        |g: &mut Graph, store: &ParamStore| {
            let mut model = lifting.clone();
            model.params = store.clone();
            let xv = g.constant(x.clone());
            let y = model.forward(g, xv, batch)?;
            weighted_sum(g, y, &w)
        },
        GRAD_H,
        Some(GRAD_COORDS_PER_TENSOR),
        7,
    )
    .unwrap();

    let mut camera = CameraCorrectionModel::new(config, 4).unwrap();
    for name in ["camera.out.w", "camera.out.b"] {
        let id = camera.params.find(name).expect("camera output layer");
        for v in camera.params.value_mut(id).data_mut() {
            *v = rng.random_range(-0.05..0.05);
        }
    }
    let xc = random_tensor(config.window * batch, 4 * config.joints, &mut rng);
    let wc = random_tensor(batch, 9, &mut rng);
    let r_triang = axis_angle(&Vector3::new(0.3, -1.1, 0.4));
    let cam_report = check_params(
        &camera.params,
        |g: &mut Graph, store: &ParamStore| {
            let mut model = camera.clone();
            model.params = store.clone();
            let xv = g.constant(xc.clone());
            let y = model.forward(g, xv, batch, &r_triang)?;
            weighted_sum(g, y, &wc)
        },
        GRAD_H,
        Some(GRAD_COORDS_PER_TENSOR),
        8,
    )
    .unwrap();

    let net = |r: &GradCheckReport| {
        format!(
            "{:.2e} over {} coords ({} at kinks skipped)",
            r.max_relative_error, r.checked, r.skipped
        )
    };
    let elapsed = start.elapsed();
    outcome(
        worst_op.1 < GRAD_TOL
            && lift_report.max_relative_error < GRAD_TOL
            && cam_report.max_relative_error < GRAD_TOL
            && lift_report.checked > 100
            && cam_report.checked > 100
            && elapsed < GRAD_BUDGET,
        format!(
            "ops: worst {:.2e} ({}) over {ops} op checks / {op_checked} coords; lifting H={GRAD_HIDDEN} N={GRAD_WIDTH}: {}; camera: {}",
            worst_op.1,
            worst_op.0,
            net(&lift_report),
            net(&cam_report)
        ),
    )
}

struct Dataset {
    views: Vec<KeypointSequence2D>,
    calibration: Calibration,
    cache: PseudoGtCache,
    heldout_scene: SyntheticScene,
    heldout_views: Vec<KeypointSequence2D>,
}

fn dataset(seed: u64, noise: &NoiseConfig) -> Dataset {
    let s = scene(seed, E2E_FRAMES, 2);
    let views = keypoints(&s, noise, seed);
    let gate = GateConfig::default();
    let calibration = calibrate_views(&views, &gate, 0).unwrap();
    let cache = triangulate_sequence(&views, &calibration, &gate, &skeleton()).unwrap();
    let heldout_scene = scene(seed + 7777, E2E_HELDOUT_FRAMES, 2);
    let heldout_views = keypoints(&heldout_scene, noise, seed + 7777);
    Dataset {
        views,
        calibration,
        cache,
        heldout_scene,
        heldout_views,
    }
}

fn train_on(data: &Dataset, config: &TrainConfig) -> liftpose_core::lifting::TrainOutcome {
    let training = TrainingData {
        views: &data.views,
        rotations: RotationTable::from_fn(2, |i, j| data.calibration.rotation(i, j)).unwrap(),
        pseudo_gt: Some(&data.cache),
        gate: GateConfig::default(),
    };
    train(&training, config).unwrap()
}

/// Held-out PMPJPE (mm) over both views of the held-out scene.
fn heldout_error(model: &LiftingModel, data: &Dataset) -> f64 {
    let (mut sum, mut n) = (0.0, 0);
    for (v, view) in data.heldout_views.iter().enumerate() {
        for (f, p) in infer(model, view).unwrap().iter().enumerate() {
            sum += pmpjpe(p, &data.heldout_scene.camera_pose(v, f).root_centered()).unwrap();
            n += 1;
        }
    }
    sum / n as f64
}

fn train_config(window: usize, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        window,
        epochs,
        hidden: GRAD_HIDDEN,
        width: GRAD_WIDTH,
        lr: 0.001,
        seed,
        ..Default::default()
    }
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let data = dataset(
        0,
        &NoiseConfig {
            sigma_px: 1.0,
            ..Default::default()
        },
    );
    let config = train_config(27, E2E_EPOCHS, 0);
    let untrained = heldout_error(
        &LiftingModel::new(config.model_config(17), config.seed).unwrap(),
        &data,
    );
    let trained = train_on(&data, &config);
    let err = heldout_error(&trained.lifting, &data);
    let height = skeleton().height();
    let first = trained.history.first().unwrap().view_discrepancy_mm;
    let last = trained.history.last().unwrap().view_discrepancy_mm;
    let elapsed = start.elapsed();
    outcome(
        err < E2E_TOL_HEIGHT * height && err < E2E_TOL_UNTRAINED * untrained && last < first && elapsed < E2E_BUDGET,
        format!(
            "held-out PMPJPE {err:.1} mm (< {:.1} = 5% of {height:.0}; untrained {untrained:.1}, ratio {:.3}); view discrepancy {first:.1} -> {last:.1} mm; {} of {} frames triangulated",
            E2E_TOL_HEIGHT * height,
            err / untrained,
            data.cache.entries.len(),
            E2E_FRAMES
        ),
    )
}

fn ablation() -> Outcome {
    let noise = NoiseConfig {
        sigma_px: 1.0,
        occlusion_rate: ABLATION_OCCLUSION_RATE,
        ..Default::default()
    };
    let mut rows = [[0.0; 3]; 3];
    for (k, &seed) in ABLATION_SEEDS.iter().enumerate() {
        let data = dataset(seed, &noise);
        let configs = [
            train_config(27, ABLATION_EPOCHS, seed),
            train_config(1, ABLATION_EPOCHS, seed),
            TrainConfig {
                use_reprojection: false,
                ..train_config(27, ABLATION_EPOCHS, seed)
            },
        ];
        for (c, config) in configs.iter().enumerate() {
            rows[c][k] = heldout_error(&train_on(&data, config).lifting, &data);
        }
    }
    let mean = |r: &[f64; 3]| r.iter().sum::<f64>() / 3.0;
    let (full, single, triang) = (mean(&rows[0]), mean(&rows[1]), mean(&rows[2]));
    let fmt = |r: &[f64; 3]| format!("{:.1}/{:.1}/{:.1}", r[0], r[1], r[2]);
    outcome(
        full < single && full <= triang,
        format!(
            "held-out PMPJPE mm (seeds 0/1/2): window 27 triang+reproj {full:.1} [{}] < window 1 {single:.1} [{}]; <= triang-only {triang:.1} [{}]",
            fmt(&rows[0]),
            fmt(&rows[1]),
            fmt(&rows[2])
        ),
    )
}

fn random_pose(rng: &mut ChaCha8Rng, joints: usize, spread: f64) -> Pose3D {
    Pose3D::new(
        (0..joints)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                )
            })
            .collect(),
    )
}

fn metric_nesting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    let mut similarity_worst = 0.0_f64;
    for k in 0..METRIC_PAIRS {
        let joints = 3 + k % 20;
        let gt = random_pose(&mut rng, joints, 800.0);
        let pred = if k % 2 == 0 {
            random_pose(&mut rng, joints, 800.0)
        } else {
            let noise = random_pose(&mut rng, joints, 100.0);
            let r = axis_angle(&Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ));
            let moved = gt.transformed(&r).scaled(rng.random_range(0.5..2.0));
            Pose3D::new(
                moved
                    .joints
                    .iter()
                    .zip(&noise.joints)
                    .map(|(a, b)| a + b)
                    .collect(),
            )
        };
        let (m, n, p) = (
            mpjpe(&pred, &gt).unwrap(),
            nmpjpe(&pred, &gt).unwrap(),
            pmpjpe(&pred, &gt).unwrap(),
        );
        if p > n + METRIC_SLACK || n > m + METRIC_SLACK {
            violations += 1;
        }
        if k < 1000 {
            let r = axis_angle(&Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ));
            let t = Vector3::new(
                rng.random_range(-500.0..500.0),
                rng.random_range(-500.0..500.0),
                rng.random_range(-500.0..500.0),
            );
            let s = rng.random_range(0.2..5.0);
            let copy = Pose3D::new(gt.joints.iter().map(|x| s * (r * x) + t).collect());
            similarity_worst = similarity_worst.max(pmpjpe(&copy, &gt).unwrap());
        }
    }
    outcome(
        violations == 0 && similarity_worst < PROCRUSTES_ZERO_TOL,
        format!(
            "{violations} ordering violations in {METRIC_PAIRS} pairs (slack {METRIC_SLACK:e}); worst PMPJPE of 1000 similarity copies {similarity_worst:.2e} mm (< {PROCRUSTES_ZERO_TOL:e})"
        ),
    )
}

fn adversarial_toy() -> Outcome {
    let start = Instant::now();
    let run = toy::run(TOY_GENERATOR_STEPS, 0);
    let clip_ok = run.critic_max_abs.iter().all(|m| *m <= toy::CLIP);
    let averaged = toy::moving_average(&run.distances, TOY_WINDOW);
    let increases = averaged.windows(2).filter(|w| w[1] > w[0]).count();
    let elapsed = start.elapsed();
    outcome(
        clip_ok && increases == 0 && elapsed < TOY_BUDGET,
        format!(
            "{} critic steps all within +-{}; mean distance {:.3} -> {:.3}, {increases} increases of the {TOY_WINDOW}-step moving average over {TOY_GENERATOR_STEPS} generator steps",
            run.critic_max_abs.len(),
            toy::CLIP,
            run.distances[0],
            run.distances.last().unwrap()
        ),
    )
}

fn cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_liftpose"))
        .current_dir(dir)
        .env_remove("LIFTPOSE_CONFIG")
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "liftpose {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let steps: Vec<Vec<&str>> = vec![
        vec![
            "synth",
            "--frames",
            "300",
            "--views",
            "2",
            "--noise",
            "1",
            "--occlusion-rate",
            "0.02",
            "--seed",
            "9",
            "--scene-out",
            "scene.json",
            "--keypoints-out",
            "kp.json",
            "--gt-out",
            "gt.json",
        ],
        vec![
            "calibrate",
            "--keypoints",
            "kp.json",
            "--out",
            "cal.json",
            "--oracle",
            "scene.json",
        ],
        vec![
            "triangulate",
            "--keypoints",
            "kp.json",
            "--calibration",
            "cal.json",
            "--out",
            "pgt.json",
        ],
        vec![
            "train",
            "--keypoints",
            "kp.json",
            "--pseudo-gt",
            "pgt.json",
            "--window",
            "9",
            "--epochs",
            "2",
            "--hidden",
            "16",
            "--width",
            "32",
            "--batch-size",
            "32",
            "--max-steps-per-epoch",
            "8",
            "--checkpoint-out",
            "model.json",
        ],
        vec![
            "infer",
            "--checkpoint",
            "model.json",
            "--keypoints",
            "kp.json",
            "--view",
            "1",
            "--out",
            "pred.json",
        ],
        vec![
            "eval",
            "--pred",
            "pred.json",
            "--gt",
            "gt.json",
            "--report",
            "rep.json",
            "--loss-breakdown",
            "model.json.history.csv",
        ],
    ];
    for args in &steps {
        cli(d, args);
    }
    let manifests: Vec<String> = [
        "kp.json",
        "cal.json",
        "pgt.json",
        "model.json",
        "pred.json",
        "rep.json",
    ]
    .iter()
    .map(|o| format!("{o}.manifest.json"))
    .collect();
    let mut outputs: Vec<String> = Vec::new();
    for m in &manifests {
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(d.join(m)).unwrap()).unwrap();
        for o in manifest["outputs"].as_array().unwrap() {
            outputs.push(o["path"].as_str().unwrap().to_string());
        }
        outputs.push(m.clone());
    }
    let before: Vec<Vec<u8>> = outputs
        .iter()
        .map(|f| std::fs::read(d.join(f)).unwrap())
        .collect();
    let saved: Vec<Vec<u8>> = manifests
        .iter()
        .map(|m| std::fs::read(d.join(m)).unwrap())
        .collect();
    for f in &outputs {
        std::fs::remove_file(d.join(f)).unwrap();
    }
    for (m, bytes) in manifests.iter().zip(&saved) {
        let replay_copy = format!("replay.{m}");
        std::fs::write(d.join(&replay_copy), bytes).unwrap();
        cli(d, &["replay", &replay_copy]);
    }
    let differing: Vec<&String> = outputs
        .iter()
        .zip(&before)
        .filter(|(f, bytes)| std::fs::read(d.join(f)).ok().as_ref() != Some(*bytes))
        .map(|(f, _)| f)
        .collect();
    outcome(
        differing.is_empty(),
        format!(
            "{} files from {} manifests replayed; {} differ{}",
            outputs.len(),
            manifests.len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(": {differing:?}")
            }
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "geometry recovery, noiseless", geometry_noiseless),
        (2, "geometry recovery, noisy with outliers", geometry_noisy),
        (3, "view gating", gating),
        (
            4,
            "polynomial triangulation optimality",
            polynomial_optimality,
        ),
        (5, "gradient suite", gradient_suite),
        (6, "end-to-end weak supervision", end_to_end),
        (7, "ablation direction", ablation),
        (8, "metric nesting", metric_nesting),
        (9, "adversarial toy run", adversarial_toy),
        (10, "determinism", determinism),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let verdict = if result.passed { "PASS" } else { "FAIL" };
        failed += usize::from(!result.passed);
        println!(
            "acceptance {n:>2} {verdict} {name}: {} [{:.1} s]",
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
}
