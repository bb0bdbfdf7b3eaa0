use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::checkpoint::save_checkpoint;
use super::config::{ExperimentConfig, Stage};
use super::dataset::DatasetSplit;
use super::evaluate::{display, evaluate_models, Model};
use super::trainer::{ArmOutcome, CurvePoint, TrainState, Trainer};
use crate::error::{Error, Result};
use crate::metrics::{
    difference_image, render_report, MetricsReport, RenderedReport, RoiPair, CYST_METRICS_FILE, FIXED_TX_DAS, LEARNED_RX,
    LEARNED_TX_DAS, LEARNED_TX_RX, METRICS_FILE,
};
use crate::rx::{scan_convert_display, DisplayImage};
use crate::tx::{effective_beam_profile, write_beam_profiles_csv, InitKind, TxScheme};

/// Upper bound on PGM difference maps.
pub const DIFFERENCE_SCALE: u8 = 100;

/// Results of one experiment cell.
pub struct CellOutcome {
    pub name: String,
    /// Stage 1 up to its budget; `best` is the reported Learned Rx model.
    pub stage1: Option<ArmOutcome>,
    pub preconvergence: TrainState,
    pub joint: Option<ArmOutcome>,
    /// Frozen-ψ continuation from the pre-convergence snapshot over the joint budget.
    pub control_curve: Vec<CurvePoint>,
    pub control_final: Option<TrainState>,
    pub test: MetricsReport,
    pub cyst: Option<MetricsReport>,
}

impl CellOutcome {
    pub fn initial_scheme(&self) -> &TxScheme {
        &self.preconvergence.scheme
    }

    pub fn learned_scheme(&self) -> Option<&TxScheme> {
        self.joint.as_ref().map(|j| &j.best.scheme)
    }
}

/// The five standard settings: {7, 10, 20}-MLA, 10-MLT and 10-random.
pub fn default_cells(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    [
        (InitKind::Mla, 7),
        (InitKind::Mla, 10),
        (InitKind::Mla, 20),
        (InitKind::Mlt, 10),
        (InitKind::Random, 10),
    ]
    .into_iter()
    .map(|(k, d)| base.with_scheme(k, d))
    .collect()
}

fn slug(setting: &str) -> String {
    setting
        .to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("_")
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_curves(path: &Path, arms: &[(&str, &[CurvePoint])]) -> Result<()> {
    let mut s = String::from("arm,iteration,train_l1,val_l1\n");
    for (arm, curve) in arms {
        for p in curve.iter() {
            let train = p.train_l1.map_or(String::new(), |v| format!("{v:.8}"));
            let _ = writeln!(s, "{arm},{},{train},{:.8}", p.iteration, p.val_l1);
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Beam profiles sampled over the scan sector plus three beam widths.
fn export_beams(cfg: &ExperimentConfig, scheme: &TxScheme, path: &Path) -> Result<()> {
    let (_, grid) = cfg.geometry.build()?;
    let margin = 3.0 * cfg.pulse.tx_beam_sigma;
    let lo = grid.first_angle() - margin;
    let hi = grid.line_angles[grid.line_count - 1] + margin;
    let n = 8 * grid.line_count + 1;
    let thetas: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
    let profiles = effective_beam_profile(scheme, &cfg.pulse, &grid, &thetas)?;
    write_beam_profiles_csv(path, &thetas, &profiles, "acq")
}

fn scan_converted(cfg: &ExperimentConfig, img: &DisplayImage) -> Result<DisplayImage> {
    let (geom, grid) = cfg.geometry.build()?;
    let (x_min, x_max, z_max) = crate::rx::raster_extent(&grid, &geom);
    let height = geom.sample_count;
    let width = (((x_max - x_min) / z_max) * height as f64).ceil().max(2.0) as usize;
    scan_convert_display(img, &grid, &geom, (width, height))
}

/// Trains (when budgets allow) and evaluates one cell, writing everything under `out_dir`.
///
/// The frozen-ψ control arm is the stage-1 trajectory continued past the
/// pre-convergence snapshot: with ψ constant, resuming from the snapshot
/// performs exactly the same operations as the uninterrupted run.
pub fn run_cell(cfg: &ExperimentConfig, split: &DatasetSplit, out_dir: impl AsRef<Path>) -> Result<CellOutcome> {
    let out = out_dir.as_ref();
    cfg.validate()?;
    mkdir(out)?;
    let ckpt_dir = out.join("checkpoints");
    let img_dir = out.join("images");
    mkdir(&ckpt_dir)?;
    mkdir(&img_dir)?;
    cfg.save(out.join("config.json"))?;
    let hash = cfg.training_hash();
    let t = &cfg.train;

    let mut state = TrainState::initial(cfg)?;
    let initial_scheme = state.scheme.clone();
    initial_scheme.save_json(out.join("psi_initial.json"))?;
    export_beams(cfg, &initial_scheme, &out.join("beam_profiles_initial.csv"))?;

    let joint_enabled = t.stage == Stage::Joint && t.stage2_iterations > 0;
    let pre_at = t.preconvergence();
    let control_end = pre_at + t.stage2_iterations;
    let trainer = Trainer::new(cfg, split, &initial_scheme)?;

    let mut pre = (pre_at == 0).then(|| state.clone());
    let mut control_final = (joint_enabled && control_end == 0).then(|| state.clone());
    let stage1 = if t.stage1_iterations > 0 {
        let arm = trainer.run(&mut state, t.stage1_iterations, |s| {
            if s.iteration == pre_at {
                pre = Some(s.clone());
            }
            if joint_enabled && s.iteration == control_end {
                control_final = Some(s.clone());
            }
            Ok(())
        })?;
        save_checkpoint(&arm.final_state, &hash, ckpt_dir.join("stage1_final.ckpt"))?;
        save_checkpoint(&arm.best, &hash, ckpt_dir.join("stage1_best.ckpt"))?;
        Some(arm)
    } else {
        None
    };
    let preconvergence = pre.ok_or_else(|| Error::config("pre-convergence snapshot was not reached"))?;
    save_checkpoint(&preconvergence, &hash, ckpt_dir.join("stage1_pre.ckpt"))?;

    let mut control_curve: Vec<CurvePoint> = Vec::new();
    let mut joint = None;
    if joint_enabled {
        let s1_curve = stage1.as_ref().map(|a| a.curve.as_slice()).unwrap_or(&[]);
        control_curve.extend(s1_curve.iter().filter(|p| p.iteration >= pre_at && p.iteration <= control_end));
        if control_end > t.stage1_iterations {
            let mut cont = state.clone();
            let arm = trainer.run(&mut cont, control_end - t.stage1_iterations, |_| Ok(()))?;
            let skip = usize::from(!control_curve.is_empty());
            control_curve.extend(arm.curve.iter().skip(skip));
            control_final = Some(arm.final_state);
        }
        let control_state = control_final.take().expect("control arm reaches its budget");
        save_checkpoint(&control_state, &hash, ckpt_dir.join("control_final.ckpt"))?;
        control_final = Some(control_state);

        let mut js = preconvergence.clone().into_joint(t.tx_learning_rate);
        let arm = trainer.run(&mut js, t.stage2_iterations, |_| Ok(()))?;
        save_checkpoint(&arm.final_state, &hash, ckpt_dir.join("joint_final.ckpt"))?;
        save_checkpoint(&arm.best, &hash, ckpt_dir.join("joint_best.ckpt"))?;
        arm.best.scheme.save_json(out.join("psi_learned.json"))?;
        export_beams(cfg, &arm.best.scheme, &out.join("beam_profiles_learned.csv"))?;
        joint = Some(arm);
    }

    let mut arms: Vec<(&str, &[CurvePoint])> = Vec::new();
    if let Some(a) = &stage1 {
        arms.push(("stage1", &a.curve));
    }
    if let Some(a) = &joint {
        arms.push(("joint", &a.curve));
        arms.push(("control", &control_curve));
    }
    write_curves(&out.join("curves.csv"), &arms)?;

    let rx_net = stage1.as_ref().map(|a| a.best.network()).transpose()?;
    let joint_net = joint.as_ref().map(|a| a.best.network()).transpose()?;
    let mut models = vec![Model {
        setting: FIXED_TX_DAS,
        scheme: &initial_scheme,
        network: None,
    }];
    if let Some(j) = &joint {
        models.push(Model {
            setting: LEARNED_TX_DAS,
            scheme: &j.best.scheme,
            network: None,
        });
    }
    if let Some(net) = &rx_net {
        models.push(Model {
            setting: LEARNED_RX,
            scheme: &initial_scheme,
            network: Some(net),
        });
    }
    if let (Some(j), Some(net)) = (&joint, &joint_net) {
        models.push(Model {
            setting: LEARNED_TX_RX,
            scheme: &j.best.scheme,
            network: Some(net),
        });
    }

    let mut test = MetricsReport {
        cell: cfg.name.clone(),
        split: "test".into(),
        settings: Vec::new(),
        artifacts: Vec::new(),
    };
    if !split.test.is_empty() {
        let (report, firsts) = evaluate_models(cfg, &split.test, &models, None, &cfg.name, "test")?;
        test = report;
        let reference = scan_converted(cfg, &display(cfg, &split.test[0].reference)?)?;
        let ref_name = "images/reference.pgm".to_string();
        reference.write_pgm(out.join(&ref_name))?;
        test.artifacts.push(ref_name);
        for (m, env) in models.iter().zip(&firsts) {
            let img = scan_converted(cfg, &display(cfg, env)?)?;
            let name = format!("images/{}.pgm", slug(m.setting));
            img.write_pgm(out.join(&name))?;
            let diff = difference_image(&img, &reference, DIFFERENCE_SCALE)?;
            let dname = format!("images/{}_diff.pgm", slug(m.setting));
            diff.write_pgm(out.join(&dname))?;
            test.artifacts.push(name);
            test.artifacts.push(dname);
        }
    }
    for extra in ["curves.csv", "psi_initial.json", "psi_learned.json", "beam_profiles_initial.csv", "beam_profiles_learned.csv"] {
        if out.join(extra).exists() {
            test.artifacts.push(extra.to_string());
        }
    }
    test.save(out.join(METRICS_FILE))?;

    let cyst = if split.cyst_test.is_empty() {
        None
    } else {
        let (target, background) = cfg.cyst_rois()?;
        let roi = RoiPair { target, background };
        let (report, _) = evaluate_models(cfg, &split.cyst_test, &models, Some(roi), &cfg.name, "cyst_test")?;
        report.save(out.join(CYST_METRICS_FILE))?;
        Some(report)
    };

    Ok(CellOutcome {
        name: cfg.name.clone(),
        stage1,
        preconvergence,
        joint,
        control_curve,
        control_final,
        test,
        cyst,
    })
}

/// Runs every cell into `out_root/<cell>/`; a failing cell leaves an
/// `error.txt` and the matrix continues. Renders the combined report at the end.
pub fn run_experiment_matrix(cells: &[ExperimentConfig], split: &DatasetSplit, out_root: impl AsRef<Path>) -> Result<(Vec<(String, Result<CellOutcome>)>, RenderedReport)> {
    let root = out_root.as_ref();
    mkdir(root)?;
    let mut results = Vec::with_capacity(cells.len());
    for cfg in cells {
        let dir: PathBuf = root.join(&cfg.name);
        log::info!("cell {}", cfg.name);
        let r = run_cell(cfg, split, &dir);
        if let Err(e) = &r {
            log::error!("cell {} failed: {e}", cfg.name);
            mkdir(&dir)?;
            let p = dir.join("error.txt");
            std::fs::write(&p, format!("{e}\n")).map_err(|err| Error::io(&p, err))?;
        }
        results.push((cfg.name.clone(), r));
    }
    let rendered = render_report(root)?;
    Ok((results, rendered))
}
