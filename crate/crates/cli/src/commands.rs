use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use scd_core::classifier::evaluate;
use scd_core::corpus::{
    build_conversation, import_timit, read_change_points, scan_dataset, synth_speaker_corpus, Category, SynthOptions,
};
use scd_core::pipeline::{
    boundary_samples, calibrate_on, check_fingerprint, conversation_likelihoods, conversation_options,
    shuffled_conversations, split_holdout, test_set, train_model, train_on_set, HOLDOUT_FRACTION,
};
use scd_core::scd::{detect, interval_means, score_with_tolerance, Metric, ThresholdFile};
use scd_core::{
    load_wav, write_wav, Error, FeaturePipeline, FeatureSequence, LikelihoodSequence, Model, Norm, PipelineConfig,
    ScdConfig, SpeakerDataset,
};

use crate::args::*;
use crate::tables::{metric_header, metric_line, write_csv, MetricRow};
use crate::Failure;

type Res<T> = Result<T, Failure>;

const FEATURE_MANIFEST: &str = "features.tsv";
const FINGERPRINT_FILE: &str = "fingerprint.txt";

pub fn run(cli: &Cli) -> Res<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| Failure::Usage(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    match &cli.command {
        Command::InitConfig { out, force } => init_config(&cfg, out, *force),
        Command::SynthCorpus(a) => synth_corpus(a),
        Command::ImportTimit { root, all_speakers } => {
            let ds = import_timit(root, !all_speakers)?;
            ds.write_manifest()?;
            println!(
                "{} speakers, manifest written to {}",
                ds.speakers.len(),
                root.join("manifest.tsv").display()
            );
            Ok(())
        }
        Command::Preprocess(a) => preprocess(&cfg, a),
        Command::Train(a) => {
            apply_network(&mut cfg, &a.network);
            cfg.validate()?;
            train(&cfg, a)
        }
        Command::Evaluate(a) => evaluate_cmd(&cfg, a),
        Command::Sweep(a) => {
            if let Some(i) = a.iters {
                cfg.train.cg_iters_per_stage = i;
            }
            sweep(&cfg, a)
        }
        Command::Synth(a) => synth(&cfg, a),
        Command::Calibrate(a) => {
            apply_scd(&mut cfg, &a.scd)?;
            cfg.validate()?;
            calibrate_cmd(&cfg, a)
        }
        Command::Detect(a) => detect_cmd(&cfg, a),
        Command::Score(a) => score_cmd(&cfg, a),
        Command::Report(a) => report(&cfg, a),
    }
}

fn apply_network(cfg: &mut PipelineConfig, a: &NetworkArgs) {
    if let Some(h) = &a.hidden {
        cfg.network.hidden = h.clone();
    }
    if let Some(i) = a.iters {
        cfg.train.cg_iters_per_stage = i;
    }
    if let Some(s) = a.seed {
        cfg.train.rng_seed = s;
    }
}

fn apply_scd(cfg: &mut PipelineConfig, a: &ScdArgs) -> Res<()> {
    if let Some(i) = a.interval {
        cfg.scd.interval_s = i;
    }
    if let Some(p) = &a.p {
        cfg.scd.p = p.parse::<Norm>()?;
    }
    if a.second_difference {
        cfg.scd.use_second_difference = true;
    }
    if let Some(t) = a.tolerance {
        cfg.scd.tolerance = t;
    }
    Ok(())
}

/// A flag value, else the configured path, else a usage error naming both.
fn pick(flag: &Option<PathBuf>, configured: &Option<PathBuf>, flag_name: &str, key: &str) -> Res<PathBuf> {
    flag.clone()
        .or_else(|| configured.clone())
        .ok_or_else(|| Failure::Usage(format!("pass --{flag_name} or set paths.{key} in the config")))
}

/// `conv.wav` -> `conv.changes.txt`.
pub fn sidecar(wav: &Path) -> PathBuf {
    let stem = wav
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    wav.with_file_name(format!("{stem}.changes.txt"))
}

fn ensure_writable_dir(dir: &Path, force: bool) -> Res<()> {
    let occupied = std::fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && !force {
        return Err(Failure::Data(format!(
            "{} already exists and is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))
}

fn ensure_writable_file(path: &Path, force: bool) -> Res<()> {
    if path.exists() && !force {
        return Err(Failure::Data(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Res<()> {
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn init_config(cfg: &PipelineConfig, out: &Path, force: bool) -> Res<()> {
    ensure_writable_file(out, force)?;
    cfg.save(out)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn synth_corpus(a: &SynthCorpusArgs) -> Res<()> {
    if a.speakers < 2 {
        return Err(Failure::Usage("--speakers must be at least 2".into()));
    }
    if a.utts < 2 {
        return Err(Failure::Usage(
            "--utts must be at least 2 (train files plus one shared)".into(),
        ));
    }
    ensure_writable_dir(&a.out, a.force)?;
    let ds = synth_speaker_corpus(
        &a.out,
        &SynthOptions {
            n_speakers: a.speakers,
            utts_per_speaker: a.utts,
            utt_seconds: a.seconds,
            seed: a.seed,
            id_prefix: a.prefix.clone(),
            ..SynthOptions::default()
        },
    )?;
    println!(
        "{} speakers x {} utterances of {} s written to {}",
        ds.speakers.len(),
        a.utts,
        a.seconds,
        a.out.display()
    );
    Ok(())
}

fn corpus(cfg: &PipelineConfig, flag: &Option<PathBuf>) -> Res<SpeakerDataset> {
    Ok(scan_dataset(pick(flag, &cfg.paths.corpus, "corpus", "corpus")?)?)
}

fn relative_stem(ds: &SpeakerDataset, path: &Path) -> PathBuf {
    path.strip_prefix(&ds.root).unwrap_or(path).with_extension("")
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureEntry {
    speaker: String,
    path: PathBuf,
    category: String,
}

fn preprocess(cfg: &PipelineConfig, a: &PreprocessArgs) -> Res<()> {
    let ds = corpus(cfg, &a.corpus)?;
    let out = pick(&a.out, &cfg.paths.features, "out", "features")?;
    ensure_writable_dir(&out, a.force)?;
    let pipe = FeaturePipeline::from_config(cfg)?;
    let mut entries = Vec::new();
    let (mut kept, mut dropped, mut supers) = (0usize, 0usize, 0usize);
    for spk in &ds.speakers {
        for category in [Category::Train, Category::Shared] {
            let paths: Vec<PathBuf> = spk.files(category).map(|u| u.path.clone()).collect();
            if paths.is_empty() {
                continue;
            }
            // training files share their speaker's normalization, test files use their own
            let feats = match category {
                Category::Train => pipe.speaker_features(&paths)?,
                Category::Shared => paths.iter().map(|p| pipe.file_features(p)).collect::<Result<_, _>>()?,
            };
            for (path, seq) in paths.iter().zip(feats) {
                let mask = pipe
                    .preprocess(&load_wav(path)?)
                    .map_err(|e| scd_core::corpus::with_file(e, path))?
                    .mask;
                kept += mask.voiced_count();
                dropped += mask.voiced.len() - mask.voiced_count();
                supers += seq.len();
                let rel = relative_stem(&ds, path);
                let feat_path = out.join(rel.with_extension("feat"));
                if let Some(dir) = feat_path.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
                }
                seq.save(&feat_path)?;
                mask.write_text(out.join(rel.with_extension("vad.txt")))?;
                entries.push(FeatureEntry {
                    speaker: spk.id.clone(),
                    path: rel.with_extension("feat"),
                    category: category.to_string(),
                });
            }
        }
    }
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .from_path(out.join(FEATURE_MANIFEST))?;
    for e in &entries {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Failure::Data(e.to_string()))?;
    write_text(&out.join(FINGERPRINT_FILE), &format!("{}\n", pipe.fingerprint()))?;
    println!(
        "{} files: {} VAD frames kept, {} dropped ({:.1}% voiced), {} super-frames",
        entries.len(),
        kept,
        dropped,
        100.0 * kept as f64 / (kept + dropped).max(1) as f64,
        supers
    );
    Ok(())
}

fn load_feature_dir(
    dir: &Path,
    pipe: &FeaturePipeline,
    category: Category,
) -> Res<BTreeMap<String, Vec<FeatureSequence>>> {
    let fp_path = dir.join(FINGERPRINT_FILE);
    let stored = std::fs::read_to_string(&fp_path)
        .map_err(|e| Failure::Data(format!("{}: {e}; run `scd preprocess` first", fp_path.display())))?;
    if stored.trim() != pipe.fingerprint() {
        return Err(Error::FingerprintMismatch {
            model: pipe.fingerprint(),
            features: stored.trim().to_string(),
        }
        .into());
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .from_path(dir.join(FEATURE_MANIFEST))?;
    let mut out: BTreeMap<String, Vec<FeatureSequence>> = BTreeMap::new();
    for row in rdr.deserialize() {
        let e: FeatureEntry = row?;
        if e.category.parse::<Category>()? == category {
            out.entry(e.speaker)
                .or_default()
                .push(FeatureSequence::load(dir.join(&e.path))?);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct StageRow {
    stage: usize,
    lambda: f64,
    cost: f64,
    iterations: usize,
    holdout_accuracy: Option<f64>,
}

fn train(cfg: &PipelineConfig, a: &TrainArgs) -> Res<()> {
    let model_path = pick(&a.model, &cfg.paths.model, "model", "model")?;
    let pipe = FeaturePipeline::from_config(cfg)?;
    let start = Instant::now();
    let (model, report) = match &a.features {
        Some(dir) => {
            let parts = load_feature_dir(dir, &pipe, Category::Train)?;
            train_on_set(&pipe, cfg, &split_holdout(&parts, HOLDOUT_FRACTION)?)?
        }
        None => train_model(&pipe, cfg, &corpus(cfg, &a.corpus)?)?,
    };
    model.save(&model_path)?;
    println!(
        "shape {:?}, {} training super-frames, {} CG iterations in {:.1} s{}",
        model.shape.0,
        report.train_frames,
        report.total_iterations(),
        start.elapsed().as_secs_f64(),
        if report.stopped_early { " (stopped early)" } else { "" }
    );
    let rows: Vec<StageRow> = report
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| StageRow {
            stage: i,
            lambda: s.lambda,
            cost: s.cost,
            iterations: s.iterations,
            holdout_accuracy: s.holdout_accuracy,
        })
        .collect();
    for r in &rows {
        println!(
            "  lambda {:<5} J {:.6} iters {:>4} holdout {}",
            r.lambda,
            r.cost,
            r.iterations,
            r.holdout_accuracy.map_or("-".into(), |h| format!("{:.2}%", 100.0 * h))
        );
    }
    if let Some(csv) = &a.csv {
        write_csv(csv, &rows)?;
    }
    println!("model written to {}", model_path.display());
    Ok(())
}

fn load_model(cfg: &PipelineConfig, flag: &Option<PathBuf>) -> Res<Model> {
    Ok(Model::load(pick(flag, &cfg.paths.model, "model", "model")?)?)
}

#[derive(Serialize)]
struct FileRow<'a> {
    speaker: &'a str,
    frames: usize,
    correct_frames: usize,
    file_correct: bool,
    frames_needed: Option<usize>,
}

fn evaluate_cmd(cfg: &PipelineConfig, a: &EvaluateArgs) -> Res<()> {
    let model = load_model(cfg, &a.model)?;
    let pipe = FeaturePipeline::from_config(cfg)?;
    check_fingerprint(&model, &pipe)?;
    let ds = corpus(cfg, &a.corpus)?;
    let category = match a.split {
        Split::Shared => Category::Shared,
        Split::Train => Category::Train,
    };
    let report = evaluate(&model, &test_set(&pipe, &ds, category)?)?;
    println!("{}", scd_core::classifier::AccuracyReport::table_header());
    println!("{}", report.table_row(&a.name));
    if let Some(csv) = &a.csv {
        let rows: Vec<FileRow> = report
            .files
            .iter()
            .map(|f| FileRow {
                speaker: &f.speaker,
                frames: f.frames,
                correct_frames: f.correct_frames,
                file_correct: f.file_correct,
                frames_needed: f.frames_needed,
            })
            .collect();
        write_csv(csv, &rows)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    hidden: String,
    frame_accuracy: f64,
    file_accuracy: f64,
    mean_frames: Option<f64>,
    seconds: f64,
}

fn sweep(cfg: &PipelineConfig, a: &SweepArgs) -> Res<()> {
    if !(a.fraction > 0.0 && a.fraction <= 1.0) {
        return Err(Failure::Usage("--fraction must be in (0, 1]".into()));
    }
    let mut ds = corpus(cfg, &a.corpus)?;
    for spk in &mut ds.speakers {
        let n_train = spk.files(Category::Train).count();
        let keep = ((n_train as f64 * a.fraction).ceil() as usize).max(1);
        let mut seen = 0;
        spk.utterances.retain(|u| {
            if u.category != Category::Train {
                return true;
            }
            seen += 1;
            seen <= keep
        });
    }
    let pipe = FeaturePipeline::from_config(cfg)?;
    let set = scd_core::pipeline::training_set(&pipe, &ds, HOLDOUT_FRACTION)?;
    let tests = test_set(&pipe, &ds, Category::Shared)?;
    println!(
        "{:<12} {}",
        "hidden",
        scd_core::classifier::AccuracyReport::table_header()
    );
    let mut rows = Vec::new();
    for &layers in &a.layers {
        for &nodes in &a.nodes {
            let mut c = cfg.clone();
            c.network.hidden = vec![nodes; layers];
            c.validate()?;
            let start = Instant::now();
            let (model, _) = train_on_set(&pipe, &c, &set)?;
            let report = evaluate(&model, &tests)?;
            let label = c
                .network
                .hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join("x");
            println!("{label:<12} {}", report.table_row("shared"));
            rows.push(SweepRow {
                hidden: label,
                frame_accuracy: report.frame_accuracy,
                file_accuracy: report.file_accuracy,
                mean_frames: report.mean_frames,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    if let Some(csv) = &a.csv {
        write_csv(csv, &rows)?;
    }
    Ok(())
}

fn synth(cfg: &PipelineConfig, a: &SynthArgs) -> Res<()> {
    let ds = corpus(cfg, &a.corpus)?;
    let opts = conversation_options(cfg);
    let conv = match &a.speakers {
        Some(ids) => build_conversation(&ds, ids, a.seed, &opts)?,
        None => shuffled_conversations(&ds, 1, a.seed, &opts)?.remove(0),
    };
    write_wav(&a.out, &conv.audio)?;
    let truth = sidecar(&a.out);
    conv.write_changes(&truth)?;
    println!(
        "{} speakers x {} s = {:.2} s, {} change points; truth in {}",
        conv.speaker_order.len(),
        conv.block_s,
        conv.audio.duration_s(),
        conv.change_points.len(),
        truth.display()
    );
    Ok(())
}

fn likelihoods(model: &Model, pipe: &FeaturePipeline, wav: &Path) -> Res<LikelihoodSequence> {
    let clip = load_wav(wav)?;
    conversation_likelihoods(model, pipe, &clip).map_err(|e| match e {
        e @ Error::FingerprintMismatch { .. } => e.into(),
        e => scd_core::corpus::with_file(e, wav).into(),
    })
}

/// Likelihood sequences and change points of conversations with sidecars.
fn scored(model: &Model, pipe: &FeaturePipeline, wavs: &[PathBuf]) -> Res<Vec<(LikelihoodSequence, Vec<f64>)>> {
    wavs.iter()
        .map(|w| Ok((likelihoods(model, pipe, w)?, read_change_points(sidecar(w))?)))
        .collect()
}

fn calibrate_cmd(cfg: &PipelineConfig, a: &CalibrateArgs) -> Res<()> {
    let model = load_model(cfg, &a.model)?;
    let pipe = FeaturePipeline::from_config(cfg)?;
    check_fingerprint(&model, &pipe)?;
    let out = pick(&a.out, &cfg.paths.threshold, "out", "threshold")?;
    let data = scored(&model, &pipe, &a.conversations)?;
    let (g, th) = calibrate_on(&data, &cfg.scd)?;
    let file = ThresholdFile {
        metric: cfg.scd.metric(),
        threshold: th.x,
        interval_s: cfg.scd.interval_s,
        p: cfg.scd.p,
        degenerate: th.degenerate,
        gaussians: g,
    };
    file.save(&out)?;
    println!(
        "same speaker N({:.4}, {:.4}^2) prior {:.3}; change N({:.4}, {:.4}^2) prior {:.3}",
        g.mu_neg, g.sigma_neg, g.prior_neg, g.mu_pos, g.sigma_pos, g.prior_pos
    );
    println!("{} threshold {:.6} written to {}", file.metric, th.x, out.display());
    if th.degenerate {
        log::warn!("class distributions overlap badly; threshold fell back to a degenerate root");
    }
    Ok(())
}

fn scd_of(t: &ThresholdFile, tolerance: usize) -> ScdConfig {
    ScdConfig {
        interval_s: t.interval_s,
        p: t.p,
        use_second_difference: t.metric == Metric::SecondDifference,
        tolerance,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FlagRow {
    boundary_s: f64,
    interval_s: f64,
    distance: f64,
    statistic: f64,
    flag: u8,
}

fn detect_cmd(cfg: &PipelineConfig, a: &DetectArgs) -> Res<()> {
    let model = load_model(cfg, &a.model)?;
    let path = pick(&a.threshold, &cfg.paths.threshold, "threshold", "threshold")?;
    if !path.exists() {
        return Err(Failure::Data(format!(
            "threshold file {} not found; run `scd calibrate` first",
            path.display()
        )));
    }
    let th = ThresholdFile::load(&path)?;
    let pipe = FeaturePipeline::from_config(cfg)?;
    let ll = likelihoods(&model, &pipe, &a.conversation)?;
    let scd = scd_of(&th, cfg.scd.tolerance);
    let det = detect(&interval_means(&ll, &scd)?, &scd, th.threshold)?;
    let rows: Vec<FlagRow> = (0..det.flags.len())
        .map(|i| FlagRow {
            boundary_s: det.boundary_times[i],
            interval_s: scd.interval_s,
            distance: det.distances[i],
            statistic: det.statistics[i],
            flag: det.flags[i] as u8,
        })
        .collect();
    write_csv(&a.out, &rows)?;
    let flagged: Vec<String> = rows
        .iter()
        .filter(|r| r.flag == 1)
        .map(|r| format!("{}", r.boundary_s))
        .collect();
    println!(
        "{} of {} boundaries flagged ({}): {}",
        flagged.len(),
        rows.len(),
        det.metric,
        flagged.join(" ")
    );
    Ok(())
}

fn score_cmd(cfg: &PipelineConfig, a: &ScoreArgs) -> Res<()> {
    let mut rdr = csv::Reader::from_path(&a.flags)?;
    let rows: Vec<FlagRow> = rdr.deserialize().collect::<Result<_, _>>()?;
    let Some(first) = rows.first() else {
        return Err(Failure::Data(format!("{} has no boundaries", a.flags.display())));
    };
    let interval = first.interval_s;
    let changes = read_change_points(&a.truth)?;
    let truth = scd_core::corpus::boundary_truth(&changes, interval, rows.len());
    let flags: Vec<bool> = rows.iter().map(|r| r.flag != 0).collect();
    let m = score_with_tolerance(&flags, &truth, a.tolerance.unwrap_or(cfg.scd.tolerance))?;
    let row = MetricRow::new(interval, metric_from_rows(&rows), None, &m);
    println!("{}", metric_header());
    println!("{}", metric_line(&row));
    if let Some(csv) = &a.csv {
        write_csv(csv, &[row])?;
    }
    Ok(())
}

fn metric_from_rows(rows: &[FlagRow]) -> Metric {
    if rows.iter().all(|r| r.distance == r.statistic) {
        Metric::Distance
    } else {
        Metric::SecondDifference
    }
}

fn report(cfg: &PipelineConfig, a: &ReportArgs) -> Res<()> {
    let model = load_model(cfg, &a.model)?;
    let pipe = FeaturePipeline::from_config(cfg)?;
    check_fingerprint(&model, &pipe)?;
    let cal = scored(&model, &pipe, &a.calibration)?;
    let test = scored(&model, &pipe, &a.test)?;
    let intervals = a
        .intervals
        .clone()
        .unwrap_or_else(|| cfg.conversation.report_intervals_s.clone());
    let tolerance = a.tolerance.unwrap_or(cfg.scd.tolerance);
    let mut rows = Vec::new();
    println!("{}", metric_header());
    for second in [false, true] {
        for &interval in &intervals {
            let scd = ScdConfig {
                interval_s: interval,
                use_second_difference: second,
                tolerance,
                ..cfg.scd.clone()
            };
            let (_, th) = calibrate_on(&cal, &scd)?;
            let mut flags = Vec::new();
            let mut truth = Vec::new();
            for (ll, changes) in &test {
                let (stat, t) = boundary_samples(ll, changes, &scd)?;
                flags.extend(stat.iter().map(|&s| s > th.x));
                truth.extend(t);
            }
            let m = score_with_tolerance(&flags, &truth, tolerance)?;
            let row = MetricRow::new(interval, scd.metric(), Some(th.x), &m);
            println!("{}", metric_line(&row));
            rows.push(row);
        }
    }
    if let Some(csv) = &a.csv {
        write_csv(csv, &rows)?;
    }
    Ok(())
}
