use std::path::{Path, PathBuf};

use clap::Parser;
use liftpose_core::adversarial::{train_adversarial, AdversarialConfig};
use liftpose_core::calibration::{calibrate_views, Calibration};
use liftpose_core::epipolar::RelativePose;
use liftpose_core::io::{read_poses, skeleton_by_id, write_poses, KeypointFile};
use liftpose_core::kinematics::{
    render_keypoints, KeypointSequence2D, ProjectionMode, Skeleton, SyntheticScene,
};
use liftpose_core::lifting::{infer, train, LiftingModel, TrainConfig, TrainingData};
use liftpose_core::linalg::rotation_angle_between;
use liftpose_core::metrics::evaluate;
use liftpose_core::reprojection::RotationTable;
use liftpose_core::triangulation::{triangulate_sequence, GateConfig, PseudoGtCache};
use serde::{Deserialize, Serialize};

use crate::config::ConfigFile;
use crate::failure::{CliError, CliResult};
use crate::manifest::{FileDigest, Manifest, MANIFEST_FORMAT, MANIFEST_VERSION};
use crate::{
    CalibrateArgs, Cli, Command, EvalArgs, GateArgs, InferArgs, Projection, ReplayArgs, Switch,
    SynthArgs, TrainArgs, TrainMode, TriangulateArgs,
};

pub const CALIBRATION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub views: (usize, usize),
    pub rotation_error_rad: f64,
    pub translation_direction_error_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub schema_version: u32,
    pub skeleton_id: String,
    pub calibration: Calibration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Vec<OracleCheck>>,
}

struct Run {
    command: &'static str,
    args: Vec<String>,
    config_path: Option<PathBuf>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn finish(self, seed: Option<u64>, config: serde_json::Value) -> CliResult<()> {
        let mut inputs = self
            .config_path
            .into_iter()
            .chain(self.inputs)
            .collect::<Vec<_>>();
        inputs.dedup();
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            args: self.args,
            seed,
            config,
            inputs: inputs
                .iter()
                .map(|p| FileDigest::of(p))
                .collect::<CliResult<_>>()?,
            outputs: self
                .outputs
                .iter()
                .map(|p| FileDigest::of(p))
                .collect::<CliResult<_>>()?,
        };
        let path = manifest.write(&self.outputs[0])?;
        eprintln!("manifest: {}", path.display());
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> CliResult<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn dispatch(cli: Cli, mut args: Vec<String>) -> CliResult<()> {
    if let Some(path) = &cli.config {
        if !args
            .iter()
            .any(|a| a == "--config" || a.starts_with("--config="))
        {
            args.extend(["--config".to_string(), path.display().to_string()]);
        }
    }
    let file = ConfigFile::load(cli.config.as_deref())?;
    let command = match &cli.command {
        Command::Synth(_) => "synth",
        Command::Calibrate(_) => "calibrate",
        Command::Triangulate(_) => "triangulate",
        Command::Train(_) => "train",
        Command::Infer(_) => "infer",
        Command::Eval(_) => "eval",
        Command::Replay(_) => "replay",
    };
    let run = Run {
        command,
        args,
        config_path: cli.config.clone(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    match cli.command {
        Command::Synth(a) => synth(a, &file, run),
        Command::Calibrate(a) => calibrate(a, &file, run),
        Command::Triangulate(a) => triangulate(a, &file, run),
        Command::Train(a) => match a.mode {
            TrainMode::Standard => train_standard(a, &file, run),
            TrainMode::Adversarial => train_adv(a, &file, run),
        },
        Command::Infer(a) => infer_cmd(a, run),
        Command::Eval(a) => eval(a, run),
        Command::Replay(a) => replay(a),
    }
}

fn synth(a: SynthArgs, file: &ConfigFile, mut run: Run) -> CliResult<()> {
    let mut scene_cfg = file.scene.clone().unwrap_or_default();
    let mut noise = file.noise.clone().unwrap_or_default();
    if let Some(v) = a.frames {
        scene_cfg.frames = v;
    }
    if let Some(v) = a.views {
        scene_cfg.views = v;
    }
    if let Some(v) = a.seed {
        scene_cfg.seed = v;
    }
    if let Some(v) = a.focal {
        scene_cfg.focal = v;
    }
    if let Some(v) = a.amplitude_scale {
        scene_cfg.motion.amplitude_scale = v;
    }
    if let Some(p) = a.projection {
        scene_cfg.projection_mode = match p {
            Projection::Full => ProjectionMode::FullPerspective,
            Projection::Weak => ProjectionMode::WeakPerspective,
        };
    }
    if let Some(v) = a.noise {
        noise.sigma_px = v;
    }
    if let Some(v) = a.occlusion_rate {
        noise.occlusion_rate = v;
    }
    scene_cfg.validate()?;
    noise.validate()?;
    if a.gt_out.is_some() && a.gt_view >= scene_cfg.views {
        return Err(CliError::config(format!(
            "--gt-view {} but only {} views",
            a.gt_view, scene_cfg.views
        )));
    }
    let skeleton = Skeleton::h36m17();
    let scene = SyntheticScene::generate(&skeleton, &scene_cfg)?;
    let keypoints = render_keypoints(&scene, &noise, scene_cfg.seed)?;
    write_text(&a.scene_out, &scene.to_json()?)?;
    KeypointFile::from_sequences(&skeleton.id, &keypoints).write(&a.keypoints_out)?;
    run.outputs = vec![a.keypoints_out.clone(), a.scene_out.clone()];
    if let Some(gt) = &a.gt_out {
        let poses: Vec<_> = (0..scene.frame_count())
            .map(|f| scene.camera_pose(a.gt_view, f).root_centered())
            .collect();
        write_poses(gt, &poses)?;
        run.outputs.push(gt.clone());
    }
    println!(
        "synth: {} frames, {} views -> {}",
        scene_cfg.frames,
        scene_cfg.views,
        a.keypoints_out.display()
    );
    let seed = scene_cfg.seed;
    run.finish(
        Some(seed),
        serde_json::json!({ "scene": scene_cfg, "noise": noise }),
    )
}

fn gate(args: &GateArgs, file: &ConfigFile) -> CliResult<GateConfig> {
    let mut gate = file.gate.unwrap_or_default();
    if let Some(v) = args.gate_mean {
        gate.mean_threshold = v;
    }
    if let Some(v) = args.gate_joint {
        gate.joint_threshold = v;
    }
    gate.validate()?;
    Ok(gate)
}

fn load_keypoints(path: &Path) -> CliResult<(KeypointFile, Vec<KeypointSequence2D>)> {
    let file = KeypointFile::read(path)?;
    let seqs = file.to_sequences()?;
    Ok((file, seqs))
}

fn calibrate(a: CalibrateArgs, file: &ConfigFile, mut run: Run) -> CliResult<()> {
    let gate = gate(&a.gate, file)?;
    let seed = a.seed.or(file.ransac_seed).unwrap_or(0);
    let (kp, views) = load_keypoints(&a.keypoints)?;
    run.inputs.push(a.keypoints.clone());
    let calibration = calibrate_views(&views, &gate, seed)?;
    let oracle = match &a.oracle {
        Some(path) => {
            run.inputs.push(path.clone());
            let scene: SyntheticScene = serde_json::from_str(&read_text(path)?)?;
            let checks = calibration
                .pairs
                .iter()
                .map(|p| {
                    let (i, j) = p.views;
                    let (vi, vj) = (views[i].view_id, views[j].view_id);
                    let cams = (scene.cameras.get(vi), scene.cameras.get(vj));
                    let (Some(ci), Some(cj)) = cams else {
                        return Err(CliError::data(format!(
                            "oracle scene has no camera for views {vi}/{vj}"
                        )));
                    };
                    let truth = RelativePose::from_cameras(ci, cj);
                    let t_cos = p
                        .pose
                        .t
                        .normalize()
                        .dot(&truth.t.normalize())
                        .clamp(-1.0, 1.0);
                    Ok(OracleCheck {
                        views: p.views,
                        rotation_error_rad: rotation_angle_between(&p.pose.r, &truth.r),
                        translation_direction_error_rad: t_cos.acos(),
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            for c in &checks {
                println!(
                    "oracle {:?}: rotation error {:.3e} rad",
                    c.views, c.rotation_error_rad
                );
            }
            Some(checks)
        }
        None => None,
    };
    for p in &calibration.pairs {
        println!(
            "pair {:?}: {} / {} inliers, mean Sampson {:.3} px",
            p.views, p.stats.inliers, p.stats.correspondences, p.stats.mean_sampson_px
        );
    }
    let report = CalibrationReport {
        schema_version: CALIBRATION_SCHEMA_VERSION,
        skeleton_id: kp.skeleton_id,
        calibration,
        oracle,
    };
    write_text(&a.out, &serde_json::to_string_pretty(&report)?)?;
    run.outputs.push(a.out.clone());
    run.finish(
        Some(seed),
        serde_json::json!({ "gate": gate, "ransac_seed": seed }),
    )
}

fn read_calibration(path: &Path) -> CliResult<CalibrationReport> {
    let report: CalibrationReport = serde_json::from_str(&read_text(path)?)?;
    if report.schema_version != CALIBRATION_SCHEMA_VERSION {
        return Err(CliError::data(format!(
            "unsupported calibration schema version {}",
            report.schema_version
        )));
    }
    Ok(report)
}

fn triangulate(a: TriangulateArgs, file: &ConfigFile, mut run: Run) -> CliResult<()> {
    let gate = gate(&a.gate, file)?;
    let (kp, views) = load_keypoints(&a.keypoints)?;
    let report = read_calibration(&a.calibration)?;
    run.inputs
        .extend([a.keypoints.clone(), a.calibration.clone()]);
    let skeleton = match &a.skeleton {
        Some(path) => {
            run.inputs.push(path.clone());
            Skeleton::load(path)?
        }
        None => skeleton_by_id(&kp.skeleton_id)?,
    };
    let cache = triangulate_sequence(&views, &report.calibration, &gate, &skeleton)?;
    println!(
        "triangulate: {} of {} frames ({} gated out, {} failed)",
        cache.stats.triangulated, cache.stats.frames, cache.stats.gated_out, cache.stats.failed
    );
    write_text(&a.out, &cache.to_json()?)?;
    run.outputs.push(a.out.clone());
    run.finish(
        None,
        serde_json::json!({ "gate": gate, "skeleton_id": skeleton.id }),
    )
}

fn select_views(
    all: Vec<KeypointSequence2D>,
    ids: &Option<Vec<usize>>,
) -> CliResult<(Vec<KeypointSequence2D>, Vec<usize>)> {
    let Some(ids) = ids else {
        let idx = (0..all.len()).collect();
        return Ok((all, idx));
    };
    let mut idx = Vec::with_capacity(ids.len());
    for id in ids {
        let i = all.iter().position(|v| v.view_id == *id).ok_or_else(|| {
            CliError::config(format!(
                "--views names view {id}, which the keypoint file lacks"
            ))
        })?;
        if idx.contains(&i) {
            return Err(CliError::config(format!("view {id} listed twice")));
        }
        idx.push(i);
    }
    Ok((idx.iter().map(|&i| all[i].clone()).collect(), idx))
}

fn train_config(a: &TrainArgs, file: &ConfigFile) -> CliResult<TrainConfig> {
    let mut c = file.train.clone().unwrap_or_default();
    if let Some(v) = a.window {
        c.window = v;
    }
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.epochs {
        c.epochs = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.hidden {
        c.hidden = v;
    }
    if let Some(v) = a.width {
        c.width = v;
    }
    if a.max_steps_per_epoch.is_some() {
        c.max_steps_per_epoch = a.max_steps_per_epoch;
    }
    if let Some(terms) = &a.loss {
        c.use_triangulation = false;
        c.use_reprojection = false;
        for t in terms {
            match t.trim() {
                "triang" => c.use_triangulation = true,
                "reproj" => c.use_reprojection = true,
                other => {
                    return Err(CliError::config(format!(
                        "unknown loss term {other:?}; use triang and/or reproj"
                    )))
                }
            }
        }
    }
    if let Some(s) = a.camera_correction {
        c.use_camera_correction = s == Switch::On;
    }
    if let Some(s) = a.confidence_mask {
        c.confidence_mask = s == Switch::On;
    }
    c.validate()?;
    Ok(c)
}

fn train_standard(a: TrainArgs, file: &ConfigFile, mut run: Run) -> CliResult<()> {
    let config = train_config(&a, file)?;
    let gate = file.gate.unwrap_or_default();
    let (_, all) = load_keypoints(&a.keypoints)?;
    run.inputs.push(a.keypoints.clone());
    let (views, idx) = select_views(all, &a.views)?;
    let cache = match &a.pseudo_gt {
        Some(path) => {
            run.inputs.push(path.clone());
            Some(PseudoGtCache::from_json(&read_text(path)?)?.restrict(&idx)?)
        }
        None => None,
    };
    if config.use_triangulation && cache.is_none() {
        return Err(CliError::config("--loss triang needs --pseudo-gt"));
    }
    let rotations = if let Some(c) = &cache {
        RotationTable::from_fn(views.len(), |i, j| c.rotation(i, j))?
    } else if let Some(path) = &a.calibration {
        run.inputs.push(path.clone());
        let report = read_calibration(path)?;
        RotationTable::from_fn(views.len(), |i, j| {
            report.calibration.rotation(idx[i], idx[j])
        })?
    } else if views.len() == 1 {
        RotationTable::identity(1)
    } else {
        return Err(CliError::config(
            "multi-view training needs --pseudo-gt or --calibration for rotations",
        ));
    };
    let data = TrainingData {
        views: &views,
        rotations,
        pseudo_gt: cache.as_ref(),
        gate,
    };
    let outcome = train(&data, &config)?;
    for e in &outcome.history {
        eprintln!(
            "epoch {}: L_T {:.6} L_R {:.6} total {:.6} view discrepancy {:.1} mm",
            e.epoch, e.triangulation, e.reprojection, e.total, e.view_discrepancy_mm
        );
    }
    outcome.lifting.save(&a.checkpoint_out)?;
    run.outputs.push(a.checkpoint_out.clone());
    if let Some(camera) = &outcome.camera {
        let path = sibling(&a.checkpoint_out, ".camera.json");
        camera.save(&path)?;
        run.outputs.push(path);
    }
    let history = a
        .history_out
        .clone()
        .unwrap_or_else(|| sibling(&a.checkpoint_out, ".history.csv"));
    write_text(&history, &outcome.history_csv())?;
    run.outputs.push(history);
    println!(
        "train: {} epochs -> {}",
        config.epochs,
        a.checkpoint_out.display()
    );
    let seed = config.seed;
    run.finish(
        Some(seed),
        serde_json::json!({ "train": config, "gate": gate, "views": idx }),
    )
}

fn train_adv(a: TrainArgs, file: &ConfigFile, mut run: Run) -> CliResult<()> {
    let mut c: AdversarialConfig = file.adversarial.clone().unwrap_or_default();
    let set = |dst: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *dst = v;
        }
    };
    set(&mut c.window, a.window);
    set(&mut c.epochs, a.epochs);
    set(&mut c.batch_size, a.batch_size);
    set(&mut c.hidden, a.hidden);
    set(&mut c.width, a.width);
    set(&mut c.n_critic, a.n_critic);
    set(&mut c.steps_per_epoch, a.steps_per_epoch);
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.critic_lr {
        c.critic_lr = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(s) = a.confidence_mask {
        c.confidence_mask = s == Switch::On;
    }
    c.validate()?;
    let real_path = a
        .real_poses
        .as_ref()
        .ok_or_else(|| CliError::config("--mode adversarial needs --real-poses"))?;
    let (_, all) = load_keypoints(&a.keypoints)?;
    let (views, idx) = select_views(all, &a.views)?;
    let real = read_poses(real_path)?;
    run.inputs.extend([a.keypoints.clone(), real_path.clone()]);
    let outcome = train_adversarial(&views[0], &real, &c)?;
    outcome.lifting.save(&a.checkpoint_out)?;
    run.outputs.push(a.checkpoint_out.clone());
    let mut csv = String::from("epoch,L_R,L_advG,total\n");
    for epoch in 1..=c.epochs {
        let steps: Vec<_> = outcome.steps.iter().filter(|s| s.epoch == epoch).collect();
        let n = steps.len().max(1) as f64;
        let mean = |f: fn(&&liftpose_core::adversarial::AdversarialStep) -> f64| {
            steps.iter().map(f).sum::<f64>() / n
        };
        csv.push_str(&format!(
            "{epoch},{},{},{}\n",
            mean(|s| s.reprojection),
            mean(|s| s.adversarial),
            mean(|s| s.total)
        ));
    }
    let history = a
        .history_out
        .clone()
        .unwrap_or_else(|| sibling(&a.checkpoint_out, ".history.csv"));
    write_text(&history, &csv)?;
    run.outputs.push(history);
    println!(
        "train (adversarial): view {} -> {}",
        views[0].view_id,
        a.checkpoint_out.display()
    );
    let seed = c.seed;
    run.finish(
        Some(seed),
        serde_json::json!({ "adversarial": c, "view": idx[0] }),
    )
}

fn infer_cmd(a: InferArgs, mut run: Run) -> CliResult<()> {
    let model = LiftingModel::load(&a.checkpoint)?;
    let (_, views) = load_keypoints(&a.keypoints)?;
    run.inputs
        .extend([a.checkpoint.clone(), a.keypoints.clone()]);
    let view = views
        .iter()
        .find(|v| v.view_id == a.view)
        .ok_or_else(|| CliError::config(format!("keypoint file has no view {}", a.view)))?;
    let poses = infer(&model, view)?;
    write_poses(&a.out, &poses)?;
    run.outputs.push(a.out.clone());
    println!("infer: {} poses -> {}", poses.len(), a.out.display());
    run.finish(
        None,
        serde_json::json!({ "view": a.view, "model": model.config }),
    )
}

fn parse_history(text: &str) -> CliResult<serde_json::Value> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != header.len() {
                return Err(CliError::data(format!(
                    "loss history row {l:?} does not match header"
                )));
            }
            let obj = header
                .iter()
                .zip(cells)
                .map(|(h, c)| {
                    let v = if c.is_empty() {
                        serde_json::Value::Null
                    } else {
                        let x: f64 = c.parse().map_err(|_| {
                            CliError::data(format!("bad number {c:?} in loss history"))
                        })?;
                        serde_json::json!(x)
                    };
                    Ok(((*h).to_string(), v))
                })
                .collect::<CliResult<serde_json::Map<_, _>>>()?;
            Ok(serde_json::Value::Object(obj))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(serde_json::Value::Array(rows))
}

fn eval(a: EvalArgs, mut run: Run) -> CliResult<()> {
    let pred = read_poses(&a.pred)?;
    let gt = read_poses(&a.gt)?;
    run.inputs.extend([a.pred.clone(), a.gt.clone()]);
    let mut config = serde_json::json!({ "pred": a.pred, "gt": a.gt });
    if let Some(path) = &a.loss_breakdown {
        config["loss_history"] = parse_history(&read_text(path)?)?;
        run.inputs.push(path.clone());
    }
    let report = evaluate(&pred, &gt, config.clone())?;
    println!(
        "MPJPE {:.3} mm  NMPJPE {:.3} mm  PMPJPE {:.3} mm over {} frames",
        report.mpjpe, report.nmpjpe, report.pmpjpe, report.frames
    );
    write_text(&a.report, &serde_json::to_string_pretty(&report)?)?;
    run.outputs.push(a.report.clone());
    run.finish(None, to_value(&config)?)
}

fn replay(a: ReplayArgs) -> CliResult<()> {
    let manifest = Manifest::read(&a.manifest)?;
    if manifest.command == "replay" {
        return Err(CliError::config("a replay manifest cannot be replayed"));
    }
    manifest.check_inputs()?;
    eprintln!("replay: liftpose {}", manifest.args.join(" "));
    let mut cli = Cli::try_parse_from(
        std::iter::once("liftpose".to_string()).chain(manifest.args.iter().cloned()),
    )
    .map_err(|e| CliError::config(e.to_string()))?;
    if !manifest
        .args
        .iter()
        .any(|a| a == "--config" || a.starts_with("--config="))
    {
        cli.config = None;
    }
    dispatch(cli, manifest.args)
}
