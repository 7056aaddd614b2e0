use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use egoact_core::data::{
    load_dataset, load_prob_sequences, save_dataset, save_prob_sequences, synth_frame_probs, synth_generate,
    ActionLabel, MarkovProbConfig, Placement, ProbSequence, ProbShot, SynthConfig, Transitions,
};
use egoact_core::evaluation::{
    avg_pairwise_levenshtein, avg_pairwise_levenshtein_within, emit_report, evaluate, levenshtein, EvalReport,
    ReportFormat,
};
use egoact_core::geometry::{
    augment_frame_geometry, default_fixed_box, inscribed_crop, primary_region, read_pbm, Point2D, Rect,
    RotationSchedule, SineTerm, WristSet,
};
use egoact_core::gradcheck::{run_suite, GradcheckConfig};
use egoact_core::hlstm::{
    beta_grid_search, frame_probabilities, train_hlstm, train_hlstm_validated, HlstmCheckpoint, HlstmInit,
    HlstmMeta, HlstmParams, HlstmTrainConfig, StateMode, DEFAULT_BETAS,
};
use egoact_core::scorer::{
    accuracy, initial_params, predict_dataset, to_prob_sequences, train_frame_model, CandidateMode,
    ScorerCheckpoint, ScorerMeta, ScorerTrainConfig,
};
use egoact_core::temporal::{augment_dataset, ExpansionPolicy, MetaSequence};

use crate::failure::{Context, Failure, VERIFICATION};
use crate::output::{csv, load_config, out_dir, require_seed, write_json, write_text};
use crate::{
    Common, EvalArgs, FormatArg, GeomArgs, GridBetaArgs, GradcheckArgs, HlstmTrainFlags, LevenshteinArgs,
    PlacementArg, PrimaryRegionArgs, SynthArgs, TemporalArgs, TrainFrameArgs, TrainHlstmArgs,
};

fn say(common: &Common, line: impl AsRef<str>) {
    if !common.quiet {
        println!("{}", line.as_ref());
    }
}

/// Refuses to write over any of the command's inputs.
fn guard_inputs(target: &Path, inputs: &[&Path]) -> Result<(), Failure> {
    let resolve = |p: &Path| fs::canonicalize(p).ok();
    if let Some(t) = resolve(target) {
        if inputs.iter().any(|i| resolve(i).as_ref() == Some(&t)) {
            return Err(Failure::config(format!(
                "output {} would overwrite an input file",
                target.display()
            )));
        }
    }
    Ok(())
}

pub fn synth(common: &Common, args: &SynthArgs) -> Result<i32, Failure> {
    let seed = require_seed(common, "synth")?;
    let dir = out_dir(common)?;
    if args.frame_probs {
        if args.dim.is_some() || args.noise.is_some() || args.distractors.is_some() || args.placement.is_some() {
            return Err(Failure::config(
                "--dim, --noise, --distractors and --placement do not apply with --frame-probs",
            ));
        }
        let mut cfg: MarkovProbConfig = load_config(common)?;
        cfg.seed = seed;
        if let Some(v) = args.actions {
            cfg.num_actions = v;
        }
        if args.actions.is_some() || args.transition_p.is_some() {
            cfg.transitions = Transitions::cyclic(cfg.num_actions, args.transition_p.unwrap_or(0.9));
        }
        if let Some(v) = args.sequences {
            cfg.num_sequences = v;
        }
        if let Some(v) = args.subjects {
            cfg.num_subjects = v;
        }
        if let Some(v) = args.frames {
            cfg.frames_per_shot = v;
        }
        if let Some(v) = args.shots {
            cfg.shots_per_sequence = v;
        }
        if let Some(v) = args.margin {
            cfg.margin = v;
        }
        if let Some(v) = args.shot_noise {
            cfg.shot_noise = v;
        }
        if let Some(v) = args.frame_noise {
            cfg.frame_noise = v;
        }
        let seqs = synth_frame_probs(&cfg)?;
        let path = dir.join("frame_probs.jsonl");
        save_prob_sequences(cfg.num_actions, &seqs, &path)?;
        say(common, format!("wrote {} sequences to {}", seqs.len(), path.display()));
        return Ok(0);
    }
    if args.margin.is_some() || args.shot_noise.is_some() || args.frame_noise.is_some() {
        return Err(Failure::config(
            "--margin, --shot-noise and --frame-noise only apply with --frame-probs",
        ));
    }
    let mut cfg: SynthConfig = load_config(common)?;
    cfg.seed = seed;
    if let Some(v) = args.actions {
        cfg.num_actions = v;
    }
    if let Some(v) = args.dim {
        cfg.feature_dim = v;
    }
    if let Some(v) = args.sequences {
        cfg.num_sequences = v;
    }
    if let Some(v) = args.subjects {
        cfg.num_subjects = v;
    }
    if let Some(v) = args.frames {
        cfg.frames_per_shot = v;
    }
    if let Some(v) = args.shots {
        cfg.shots_per_sequence = v;
    }
    if let Some(v) = args.noise {
        cfg.noise_sigma = v;
    }
    if let Some(v) = args.distractors {
        cfg.num_distractor_secondaries = v;
    }
    if let Some(p) = args.placement {
        cfg.placement = match p {
            PlacementArg::Primary => Placement::Primary,
            PlacementArg::SecondaryOnly => Placement::SecondaryOnly,
            PlacementArg::Both => Placement::Both,
        };
    }
    if let Some(p) = args.transition_p {
        cfg.transitions = Transitions::cyclic(cfg.num_actions, p);
    }
    let ds = synth_generate(&cfg)?;
    let path = dir.join("dataset.jsonl");
    save_dataset(&ds, &path)?;
    say(
        common,
        format!(
            "wrote {} sequences ({} frames) to {}",
            ds.sequences.len(),
            ds.num_frames(),
            path.display()
        ),
    );
    Ok(0)
}

pub fn train_frame(common: &Common, args: &TrainFrameArgs) -> Result<i32, Failure> {
    let seed = require_seed(common, "train-frame")?;
    let mut cfg: ScorerTrainConfig = load_config(common)?;
    cfg.seed = seed;
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.iterations {
        cfg.max_iterations = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = args.regions {
        cfg.num_sampled_secondaries = v;
    }
    cfg.primary_only |= args.primary_only;
    cfg.validate()?;
    let ds = load_dataset(&args.data).context(format!("loading {}", args.data.display()))?;
    let dir = out_dir(common)?;

    let meta = |iterations| ScorerMeta {
        num_actions: ds.num_actions(),
        dim: ds.feature_dim,
        seed,
        iterations,
    };
    let init = ScorerCheckpoint {
        params: initial_params(ds.num_actions(), ds.feature_dim, &cfg),
        meta: meta(0),
    };
    let (params, history) = train_frame_model(&ds, &cfg)?;
    let ckpt = ScorerCheckpoint {
        params,
        meta: meta(cfg.max_iterations),
    };
    for name in ["scorer_init.json", "scorer.json", "history.csv"] {
        guard_inputs(&dir.join(name), &[&args.data])?;
    }
    init.save(dir.join("scorer_init.json"))?;
    ckpt.save(dir.join("scorer.json"))?;
    let rows = history
        .iter()
        .map(|r| vec![r.iteration.to_string(), r.lr.to_string(), r.loss.to_string()]);
    write_text(&dir.join("history.csv"), &csv(&["iteration", "lr", "loss"], rows))?;

    let outputs = predict_dataset(&ckpt.params, &ds, CandidateMode::All)?;
    say(common, format!("train accuracy {:.4}", accuracy(&ds, &outputs)));

    for path in &args.predict {
        let target = load_dataset(path).context(format!("loading {}", path.display()))?;
        let outputs = predict_dataset(&ckpt.params, &target, CandidateMode::All)?;
        let probs = to_prob_sequences(&target, &outputs)?;
        let stem = path
            .file_name()
            .and_then(|n| n.to_str())
            .map(|n| n.split('.').next().unwrap_or(n).to_string())
            .unwrap_or_else(|| "predictions".into());
        let out = dir.join(format!("{stem}.probs.jsonl"));
        guard_inputs(&out, &[path, &args.data])?;
        save_prob_sequences(target.num_actions(), &probs, &out)?;
        say(
            common,
            format!(
                "{}: accuracy {:.4}, wrote {}",
                path.display(),
                accuracy(&target, &outputs),
                out.display()
            ),
        );
    }
    Ok(0)
}

fn hlstm_config(common: &Common, seed: u64, flags: &HlstmTrainFlags) -> Result<HlstmTrainConfig, Failure> {
    let mut cfg: HlstmTrainConfig = load_config(common)?;
    cfg.seed = seed;
    if let Some(v) = flags.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.hidden {
        cfg.hidden_dim = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = flags.decay_factor {
        cfg.decay_factor = v;
    }
    if let Some(v) = flags.decay_interval {
        cfg.decay_interval = v;
    }
    if flags.clip.is_some() {
        cfg.clip_norm = flags.clip;
    }
    Ok(cfg)
}

fn load_probs(path: &Path) -> Result<(usize, Vec<ProbSequence>), Failure> {
    load_prob_sequences(path).context(format!("loading {}", path.display()))
}

fn load_phase_one(path: &Path) -> Result<HlstmParams, Failure> {
    if !path.exists() {
        return Err(Failure::missing_init(format!(
            "phase-1 checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(HlstmCheckpoint::load(path)
        .context(format!("loading {}", path.display()))?
        .params)
}

fn check_actions(params: &HlstmParams, num_actions: usize) -> Result<(), Failure> {
    if params.num_actions() != num_actions {
        return Err(Failure::data(format!(
            "checkpoint expects {} actions, data has {num_actions}",
            params.num_actions()
        )));
    }
    Ok(())
}

pub fn train_hlstm_cmd(common: &Common, args: &TrainHlstmArgs) -> Result<i32, Failure> {
    let seed = require_seed(common, "train-hlstm")?;
    let mut cfg = hlstm_config(common, seed, &args.train)?;
    if let Some(b) = args.beta {
        cfg.beta = b;
    }
    cfg.allow_without_phase_one |= args.force;
    cfg.validate()?;
    if cfg.beta > 0.0 && args.init.is_none() && !cfg.allow_without_phase_one {
        return Err(Failure::missing_init(format!(
            "training with beta = {} needs --init <phase-1 checkpoint> (or --force)",
            cfg.beta
        )));
    }
    let (num_actions, train) = load_probs(&args.probs)?;
    let init = match &args.init {
        Some(p) => {
            let params = load_phase_one(p)?;
            check_actions(&params, num_actions)?;
            HlstmInit::From(params)
        }
        None => HlstmInit::Fresh,
    };
    let (params, history) = match &args.val {
        Some(v) => {
            let (a, val) = load_probs(v)?;
            if a != num_actions {
                return Err(Failure::data("validation file has a different number of actions"));
            }
            let run = train_hlstm_validated(&train, &val, num_actions, &cfg, init)?;
            say(
                common,
                format!(
                    "best validation epoch {} (frame accuracy {:.4})",
                    run.best_epoch, run.best_val_frame_acc
                ),
            );
            (run.params, run.history)
        }
        None => train_hlstm(&train, num_actions, &cfg, init)?,
    };
    let dir = out_dir(common)?;
    let mut inputs: Vec<&Path> = vec![&args.probs];
    inputs.extend(args.init.as_deref());
    inputs.extend(args.val.as_deref());
    guard_inputs(&dir.join("hlstm.json"), &inputs)?;
    guard_inputs(&dir.join("history.csv"), &inputs)?;
    HlstmCheckpoint {
        params,
        meta: HlstmMeta {
            beta: cfg.beta,
            phase: if cfg.beta == 0.0 { 1 } else { 2 },
            seed,
            epochs: cfg.epochs,
        },
    }
    .save(dir.join("hlstm.json"))?;
    let rows = history.iter().map(|r| {
        vec![
            r.epoch.to_string(),
            r.lr.to_string(),
            r.loss_frame.to_string(),
            r.loss_shot.to_string(),
            r.loss.to_string(),
            r.frame_acc.to_string(),
            r.shot_acc.to_string(),
        ]
    });
    write_text(
        &dir.join("history.csv"),
        &csv(&["epoch", "lr", "L_N", "L_M", "L", "frame_acc", "shot_acc"], rows),
    )?;
    if let Some(last) = history.last() {
        say(
            common,
            format!(
                "epoch {}: L = {:.6}, frame accuracy {:.4}, shot accuracy {:.4}",
                last.epoch, last.loss, last.frame_acc, last.shot_acc
            ),
        );
    }
    Ok(0)
}

pub fn grid_beta(common: &Common, args: &GridBetaArgs) -> Result<i32, Failure> {
    let seed = require_seed(common, "grid-beta")?;
    let Some(init) = &args.init else {
        return Err(Failure::missing_init("grid-beta needs --init <phase-1 checkpoint>"));
    };
    let cfg = hlstm_config(common, seed, &args.train)?;
    cfg.validate()?;
    let phase_one = load_phase_one(init)?;
    let (num_actions, train) = load_probs(&args.probs)?;
    check_actions(&phase_one, num_actions)?;
    let val = match &args.val {
        Some(v) => {
            let (a, val) = load_probs(v)?;
            if a != num_actions {
                return Err(Failure::data("validation file has a different number of actions"));
            }
            val
        }
        None => train.clone(),
    };
    let betas = if args.betas.is_empty() {
        DEFAULT_BETAS.to_vec()
    } else {
        args.betas.clone()
    };
    let result = beta_grid_search(&train, &val, num_actions, &cfg, &phase_one, &betas)?;
    let dir = out_dir(common)?;
    let mut inputs: Vec<&Path> = vec![&args.probs, init];
    inputs.extend(args.val.as_deref());
    guard_inputs(&dir.join("grid.csv"), &inputs)?;
    guard_inputs(&dir.join("best.json"), &inputs)?;
    let rows = result.rows.iter().map(|r| {
        vec![
            r.beta.to_string(),
            r.train_frame_acc.to_string(),
            r.val_frame_acc.to_string(),
            r.train_shot_acc.to_string(),
            r.val_shot_acc.to_string(),
        ]
    });
    write_text(
        &dir.join("grid.csv"),
        &csv(
            &["beta", "train_frame_acc", "val_frame_acc", "train_shot_acc", "val_shot_acc"],
            rows,
        ),
    )?;
    HlstmCheckpoint {
        params: result.best_params,
        meta: HlstmMeta {
            beta: result.best_beta,
            phase: 2,
            seed,
            epochs: cfg.epochs,
        },
    }
    .save(dir.join("best.json"))?;
    for r in &result.rows {
        say(
            common,
            format!("beta {:<4} val frame accuracy {:.4}", r.beta, r.val_frame_acc),
        );
    }
    say(common, format!("best beta {}", result.best_beta));
    Ok(0)
}

fn generic_actions(num_actions: usize) -> Vec<ActionLabel> {
    (0..num_actions)
        .map(|i| ActionLabel::new(i, format!("action{i}"), format!("action{i}")))
        .collect()
}

fn with_frame_probs(seq: &ProbSequence, frames: Vec<Vec<f64>>) -> ProbSequence {
    let mut it = frames.into_iter();
    ProbSequence {
        id: seq.id.clone(),
        subject: seq.subject.clone(),
        shots: seq
            .shots
            .iter()
            .map(|s| ProbShot {
                label: s.label,
                frames: it.by_ref().take(s.frames.len()).collect(),
            })
            .collect(),
    }
}

fn write_report(dir: &Path, name: &str, report: &EvalReport, format: FormatArg) -> Result<(), Failure> {
    if matches!(format, FormatArg::Json | FormatArg::Both) {
        emit_report(report, dir.join(format!("{name}.json")), ReportFormat::Json)?;
    }
    if matches!(format, FormatArg::Csv | FormatArg::Both) {
        emit_report(report, dir.join(format!("{name}.csv")), ReportFormat::Csv)?;
    }
    Ok(())
}

pub fn eval(common: &Common, args: &EvalArgs) -> Result<i32, Failure> {
    let (num_actions, seqs) = load_probs(&args.probs)?;
    let actions = match &args.data {
        Some(p) => {
            let ds = load_dataset(p).context(format!("loading {}", p.display()))?;
            if ds.num_actions() != num_actions {
                return Err(Failure::data(format!(
                    "{} defines {} actions, predictions have {num_actions}",
                    p.display(),
                    ds.num_actions()
                )));
            }
            ds.actions
        }
        None => generic_actions(num_actions),
    };
    let mut reports: Vec<(&str, EvalReport)> = Vec::new();
    match &args.model {
        Some(m) => {
            let ckpt = HlstmCheckpoint::load(m).context(format!("loading {}", m.display()))?;
            check_actions(&ckpt.params, num_actions)?;
            for (name, mode) in [
                ("report_carry_over", StateMode::CarryOver),
                ("report_reset_per_shot", StateMode::ResetPerShot),
            ] {
                let outputs = seqs
                    .iter()
                    .map(|s| Ok(with_frame_probs(s, frame_probabilities(&ckpt.params, s, mode)?)))
                    .collect::<Result<Vec<_>, egoact_core::Error>>()?;
                reports.push((name, evaluate(&actions, &outputs)?));
            }
        }
        None => reports.push(("report_frame_level", evaluate(&actions, &seqs)?)),
    }
    let dir = out_dir(common)?;
    for (name, report) in &reports {
        for ext in ["json", "csv"] {
            let mut inputs: Vec<&Path> = vec![&args.probs];
            inputs.extend(args.model.as_deref());
            inputs.extend(args.data.as_deref());
            guard_inputs(&dir.join(format!("{name}.{ext}")), &inputs)?;
        }
        write_report(&dir, name, report, args.format)?;
    }
    say(common, "report                  frame_acc  shot_avg  shot_wtd  verb      object");
    for (name, r) in &reports {
        say(
            common,
            format!(
                "{:<22}  {:.4}     {:.4}    {:.4}    {:.4}    {:.4}",
                name.trim_start_matches("report_"),
                r.mean_frame_acc,
                r.shot_acc_avg,
                r.shot_acc_weighted,
                r.verb_correct_rate,
                r.object_correct_rate
            ),
        );
    }
    Ok(0)
}

fn parse_terms(specs: &[String]) -> Result<Vec<SineTerm>, Failure> {
    specs
        .iter()
        .map(|s| {
            let (l, g) = s
                .split_once(':')
                .ok_or_else(|| Failure::config(format!("sine term '{s}' is not WEIGHT:FREQ")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| Failure::config(format!("sine term '{s}': {e}")))
            };
            Ok(SineTerm {
                lambda: parse(l)?,
                gamma: parse(g)?,
            })
        })
        .collect()
}

fn fmt_rect(r: Option<Rect>) -> [String; 4] {
    match r {
        Some(r) => [r.x.to_string(), r.y.to_string(), r.w.to_string(), r.h.to_string()],
        None => Default::default(),
    }
}

pub fn augment_geom(common: &Common, args: &GeomArgs) -> Result<i32, Failure> {
    let seed = require_seed(common, "augment geom")?;
    let theta_max = if args.degrees {
        args.theta_max.to_radians()
    } else {
        args.theta_max
    };
    let terms = parse_terms(&args.terms)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = RotationSchedule::with_random_phase(args.cycles, theta_max, terms, args.frames, &mut rng)?;
    let frame = (args.width, args.height);
    let primary = args.primary.map(|[x, y, w, h]| Rect::new(x, y, w, h));
    let mut rows = Vec::with_capacity(args.frames);
    for (n, theta) in schedule.angles().into_iter().enumerate() {
        let (crop, boxed) = match &primary {
            Some(p) => {
                let aug = augment_frame_geometry(p, frame, theta)?;
                (aug.crop, aug.primary)
            }
            None => (inscribed_crop(args.width, args.height, theta)?.crop, None),
        };
        let mut row = vec![n.to_string(), theta.to_string()];
        row.extend(fmt_rect(Some(crop)));
        row.extend(fmt_rect(boxed));
        rows.push(row);
    }
    let dir = out_dir(common)?;
    let path = dir.join("geom.csv");
    write_text(
        &path,
        &csv(
            &[
                "frame", "theta", "crop_x", "crop_y", "crop_w", "crop_h", "primary_x", "primary_y", "primary_w",
                "primary_h",
            ],
            rows,
        ),
    )?;
    say(
        common,
        format!(
            "{} frames, phase offset {:.6}, max step {:.6} rad, wrote {}",
            args.frames,
            schedule.r,
            schedule.max_step(),
            path.display()
        ),
    );
    Ok(0)
}

fn collect_meta_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Failure::data(format!("cannot list {}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn augment_temporal(common: &Common, args: &TemporalArgs) -> Result<i32, Failure> {
    let seed = require_seed(common, "augment temporal")?;
    let mut policy: ExpansionPolicy = load_config(common)?;
    policy.seed = seed;
    if let Some(v) = args.p_swap {
        policy.p_swap = v;
    }
    if let Some(v) = args.p_skip {
        policy.p_skip = v;
    }
    if let Some(v) = args.p_add {
        policy.p_add = v;
    }
    policy.validate()?;
    let ds = load_dataset(&args.data).context(format!("loading {}", args.data.display()))?;
    let files = collect_meta_files(&args.meta)?;
    let mut metas = BTreeMap::new();
    for f in &files {
        let meta = MetaSequence::load(f)?;
        let id = meta.sequence_id.clone();
        if metas.insert(id.clone(), meta).is_some() {
            return Err(Failure::data(format!("two meta files describe sequence '{id}'")));
        }
    }
    let out = augment_dataset(&ds, &metas, &policy)?;
    let dir = out_dir(common)?;
    let path = dir.join("dataset.jsonl");
    let mut inputs: Vec<&Path> = vec![&args.data];
    inputs.extend(files.iter().map(PathBuf::as_path));
    guard_inputs(&path, &inputs)?;
    save_dataset(&out, &path)?;
    say(
        common,
        format!(
            "augmented {} of {} sequences, wrote {}",
            metas.len(),
            out.sequences.len(),
            path.display()
        ),
    );
    Ok(0)
}

#[derive(Serialize)]
struct GradcheckSummary {
    passed: bool,
    tolerance: f64,
    instances: usize,
    max_rel_error: f64,
    per_block_max: BTreeMap<String, f64>,
    failures: Vec<String>,
}

pub fn gradcheck(common: &Common, args: &GradcheckArgs) -> Result<i32, Failure> {
    let mut cfg: GradcheckConfig = load_config(common)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(v) = args.scorer_instances {
        cfg.scorer_instances = v;
    }
    if let Some(v) = args.hlstm_instances {
        cfg.hlstm_instances = v;
    }
    let report = run_suite(&cfg, args.inject_fault.as_deref())?;
    let failures: Vec<String> = report
        .failures()
        .iter()
        .map(|(inst, b)| {
            format!(
                "{inst} {} index {}: analytic {:e} numeric {:e} rel {:e}",
                b.block, b.worst_index, b.analytic, b.numeric, b.max_rel_error
            )
        })
        .collect();
    let summary = GradcheckSummary {
        passed: report.passed(),
        tolerance: report.tolerance,
        instances: report.checks.len(),
        max_rel_error: report.max_rel_error(),
        per_block_max: report.per_block_max().into_iter().collect(),
        failures,
    };
    for (block, err) in &summary.per_block_max {
        say(common, format!("{block:<28} max rel error {err:.3e}"));
    }
    for f in summary.failures.iter().take(20) {
        eprintln!("FAIL {f}");
    }
    if summary.failures.len() > 20 {
        eprintln!("... {} more failures", summary.failures.len() - 20);
    }
    say(
        common,
        format!(
            "{} instances, worst relative error {:.3e}: {}",
            summary.instances,
            summary.max_rel_error,
            if summary.passed { "PASS" } else { "FAIL" }
        ),
    );
    if common.out.is_some() {
        write_json(&out_dir(common)?.join("gradcheck.json"), &summary)?;
    }
    Ok(if summary.passed { 0 } else { i32::from(VERIFICATION) })
}

#[derive(Serialize)]
struct LevenshteinSummary {
    mode: &'static str,
    num_sequences: usize,
    mean_distance: f64,
}

pub fn levenshtein_cmd(common: &Common, args: &LevenshteinArgs) -> Result<i32, Failure> {
    if let (Some(a), Some(b)) = (&args.a, &args.b) {
        let d = levenshtein(a, b);
        say(common, d.to_string());
        if common.out.is_some() {
            write_json(&out_dir(common)?.join("levenshtein.json"), &serde_json::json!({ "distance": d }))?;
        }
        return Ok(0);
    }
    let (ids, seqs): (Vec<String>, Vec<Vec<usize>>) = match (&args.data, &args.probs) {
        (Some(p), None) => load_dataset(p)
            .context(format!("loading {}", p.display()))?
            .sequences
            .iter()
            .map(|s| (s.id.clone(), s.shot_labels()))
            .unzip(),
        (None, Some(p)) => load_probs(p)?
            .1
            .iter()
            .map(|s| (s.id.clone(), s.shot_labels()))
            .unzip(),
        _ => return Err(Failure::config("give --data, --probs, or --a and --b")),
    };
    let (mode, mean) = match &args.groups {
        Some(g) => {
            let text = fs::read_to_string(g).map_err(|e| Failure::data(format!("{}: {e}", g.display())))?;
            let map: BTreeMap<String, String> =
                serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", g.display())))?;
            let keys = ids
                .iter()
                .map(|id| {
                    map.get(id)
                        .cloned()
                        .ok_or_else(|| Failure::data(format!("no activity for sequence '{id}'")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            ("within_activity", avg_pairwise_levenshtein_within(&seqs, &keys)?)
        }
        None => ("all_pairs", avg_pairwise_levenshtein(&seqs)?),
    };
    let summary = LevenshteinSummary {
        mode,
        num_sequences: seqs.len(),
        mean_distance: mean,
    };
    say(
        common,
        format!("{} sequences, mean distance ({mode}) {mean:.4}", seqs.len()),
    );
    if common.out.is_some() {
        write_json(&out_dir(common)?.join("levenshtein.json"), &summary)?;
    }
    Ok(0)
}

pub fn primary_region_cmd(common: &Common, args: &PrimaryRegionArgs) -> Result<i32, Failure> {
    if !(args.width > 0.0 && args.height > 0.0) {
        return Err(Failure::config("frame width and height must be positive"));
    }
    let mask = match &args.mask {
        Some(p) => {
            let m = read_pbm(p)?;
            if m.width() as f64 != args.width || m.height() as f64 != args.height {
                return Err(Failure::data(format!(
                    "mask is {}x{}, frame is {}x{}",
                    m.width(),
                    m.height(),
                    args.width,
                    args.height
                )));
            }
            Some(m)
        }
        None => None,
    };
    let points = args.wrist.iter().map(|&(x, y)| Point2D::new(x, y)).collect();
    let wrists = WristSet::new(points, args.width, args.height)?;
    let frame = (args.width, args.height);
    let fixed = args.fixed_box.unwrap_or_else(|| default_fixed_box(frame));
    let rect = primary_region(mask.as_ref(), &wrists, frame, fixed);
    let text = serde_json::to_string(&rect).map_err(|e| Failure::data(e.to_string()))?;
    say(common, &text);
    if common.out.is_some() {
        write_json(&out_dir(common)?.join("primary_region.json"), &rect)?;
    }
    Ok(0)
}
