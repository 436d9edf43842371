use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use aranet::arch::{ArchConfig, Generator, ParamSet};
use aranet::dosimetry::{evaluate_structures, MaskVolume};
use aranet::losses::LossReport;
use aranet::persist::{load_checkpoint, read_mask, read_volume, write_volume, Manifest, ManifestEntry, Split};
use aranet::phantom::{load_sample, make_dataset, Sample, MASK_FILES};
use aranet::trainer::{evaluate, predict_volume, AblationReport, Arm, SliceDataset, TrainConfig, TrainError, Trainer};

use crate::diffmap::{diff_map, encode_pgm};
use crate::report::{metrics_csv, ReportTable};
use crate::{AblateArgs, CliError, DiffmapArgs, EvalArgs, GenArgs, PredictArgs, ReportArgs, TrainArgs};

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} directory `{}` does not exist", path.display())))
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} file `{}` does not exist", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_split(data: &Path, manifest: &Manifest, split: Split) -> anyhow::Result<Vec<Sample>> {
    let samples = manifest
        .split(split)
        .map(|e| load_sample(data, e).with_context(|| format!("loading sample `{}`", e.id)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(TrainError::MissingSplit(split).into());
    }
    Ok(samples)
}

/// Side length of the (square) axial slices shared by every sample.
fn slice_size(samples: &[Sample]) -> anyhow::Result<usize> {
    let [_, h, w] = samples[0].ct.shape();
    if h != w {
        bail!("slices must be square, sample `{}` is {h}x{w}", samples[0].id);
    }
    if let Some(s) = samples.iter().find(|s| s.ct.shape()[1..] != [h, w]) {
        bail!("sample `{}` has slice size {:?}, expected {h}x{w}", s.id, &s.ct.shape()[1..]);
    }
    Ok(h)
}

pub fn phantom_gen(a: GenArgs) -> Result<(), CliError> {
    let manifest = make_dataset(&a.out, a.n as usize, a.seed, a.grid, a.split)?;
    let counts = Split::ALL.map(|s| manifest.count(s));
    println!(
        "wrote {} cases to {} (train {}, val {}, test {})",
        manifest.entries.len(),
        a.out.display(),
        counts[0],
        counts[1],
        counts[2]
    );
    Ok(())
}

fn build_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let file = match &a.config {
        Some(path) => {
            require_file(path, "config")?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::parse_kv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => Vec::new(),
    };
    let file_arm = file
        .iter()
        .find(|(k, _)| k == "arm")
        .map(|(_, v)| v.parse::<Arm>().map_err(CliError::Usage))
        .transpose()?;
    let arm = a.arm.or(file_arm).unwrap_or(Arm::Full);
    let mut cfg = TrainConfig::for_arm(arm);
    if a.paper_scale {
        cfg = cfg.paper_scale();
    }
    let usage = |e: TrainError| CliError::Usage(e.to_string());
    for (k, v) in file.iter().filter(|(k, _)| k != "arm") {
        cfg.set(k, v).map_err(usage)?;
    }
    let flags = [
        ("steps", a.steps.map(|v| v.to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v).map_err(usage)?;
        }
    }
    Ok(cfg)
}

fn default_log_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".log.csv");
    out.with_file_name(name)
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    require_dir(&a.data, "data")?;
    if let Some(r) = &a.resume {
        require_file(r, "resume checkpoint")?;
    }
    let mut cfg = build_config(&a)?;
    let manifest = Manifest::read(&a.data)?;
    let samples = load_split(&a.data, &manifest, Split::Train)?;
    cfg.arch.input_size = slice_size(&samples)?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let data = SliceDataset::from_samples(&samples);
    let mut trainer = match &a.resume {
        Some(path) => Trainer::resume(cfg.clone(), path).with_context(|| format!("resuming from {}", path.display()))?,
        None => Trainer::new(cfg.clone())?,
    };
    let total = trainer.planned_steps(data.len());
    log::info!(
        "arm {} on {} slices: steps {}..{total}, lr {}, batch {}",
        cfg.arm,
        data.len(),
        trainer.state().step,
        cfg.lr,
        cfg.batch_size
    );

    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    let file = if a.resume.is_some() && log_path.exists() {
        OpenOptions::new().append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    if a.resume.is_none() || log.get_ref().metadata().map(|m| m.len() == 0).unwrap_or(true) {
        writeln!(log, "{}", LossReport::CSV_HEADER)?;
    }
    let mut io_error = None;
    let result = trainer.fit(&data, total, |r| {
        if io_error.is_none() {
            if let Err(e) = writeln!(log, "{}", r.csv_row()) {
                io_error = Some(e);
            }
        }
        if r.step % 50 == 0 {
            log::info!("step {}: total {:.5} l_final {:.5}", r.step, r.total, r.l_final);
        }
    });
    log.flush()?;
    if let Some(e) = io_error {
        return Err(anyhow::Error::from(e).context(format!("writing {}", log_path.display())).into());
    }
    result?;
    trainer.save(&a.out)?;
    let last = trainer.state().history.last();
    println!(
        "trained arm {} to step {}; last l_final {}; checkpoint {}; log {}",
        cfg.arm,
        trainer.state().step,
        last.map(|r| r.l_final.to_string()).unwrap_or_else(|| "n/a".into()),
        a.out.display(),
        log_path.display()
    );

    if let Some(report_path) = &a.report {
        let test = load_split(&a.data, &manifest, Split::Test)?;
        let r = evaluate(trainer.generator(), &trainer.state().generator, &test, 50.0)?;
        let table = AblationReport {
            rows: vec![(cfg.arm.to_string(), r.ape)],
        };
        write_text(report_path, &table.to_csv())?;
        print!("{}", table.render());
    }
    Ok(())
}

/// Generator parameters of a checkpoint (trainer checkpoints keep them under `gen/`).
fn generator_params(path: &Path, input_size: usize) -> anyhow::Result<(Generator, ParamSet<f32>)> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let gen = ckpt.strip_prefix("gen/");
    let params = if gen.is_empty() { ckpt } else { gen };
    let cfg = ArchConfig::infer_from_params(&params, input_size)?;
    let generator = Generator::new(cfg)?;
    let params = params.ordered_as(generator.param_specs())?;
    Ok((generator, params))
}

fn sample_from_dir(dir: &Path) -> anyhow::Result<Sample> {
    let id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("sample")
        .to_string();
    let files = ["ct.dvol", "dose.dvol", "meta.txt"]
        .iter()
        .chain(MASK_FILES.iter())
        .map(|f| f.to_string())
        .collect();
    let entry = ManifestEntry {
        id,
        split: Split::Test,
        files,
    };
    Ok(load_sample(dir, &entry)?)
}

pub fn predict(a: PredictArgs) -> Result<(), CliError> {
    require_file(&a.ckpt, "checkpoint")?;
    require_dir(&a.sample, "sample")?;
    let sample = sample_from_dir(&a.sample)?;
    let (generator, params) = generator_params(&a.ckpt, slice_size(std::slice::from_ref(&sample))?)?;
    let pred = predict_volume(&generator, &params, &sample)?;
    write_volume(&a.out, &pred)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn collect_masks(paths: &[PathBuf]) -> anyhow::Result<Vec<MaskVolume>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "dmask"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let mut masks = files.iter().map(read_mask).collect::<Result<Vec<_>, _>>()?;
    // PTV first so it leads the report.
    masks.sort_by_key(|m| m.label() != "ptv");
    if !masks.iter().any(|m| m.label() == "ptv") {
        bail!("no `ptv.dmask` among the masks");
    }
    Ok(masks)
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    require_file(&a.pred, "prediction")?;
    require_file(&a.truth, "truth")?;
    if !(a.prescription.is_finite() && a.prescription > 0.0) {
        return Err(CliError::Usage(format!("--prescription must be positive, got {}", a.prescription)));
    }
    let pred = read_volume(&a.pred)?;
    let truth = read_volume(&a.truth)?;
    let masks = collect_masks(&a.masks)?;
    let t = evaluate_structures(&truth, &masks, "ptv", a.prescription, a.v_threshold)?;
    let p = evaluate_structures(&pred.clamp_non_negative(), &masks, "ptv", a.prescription, a.v_threshold)?;
    let csv = metrics_csv(&t, &p);
    write_text(&a.out, &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    require_file(&a.ckpt, "checkpoint")?;
    require_dir(&a.data, "data")?;
    let manifest = Manifest::read(&a.data)?;
    let samples = load_split(&a.data, &manifest, a.split)?;
    let (generator, params) = generator_params(&a.ckpt, slice_size(&samples)?)?;
    let r = evaluate(&generator, &params, &samples, a.v_threshold)?;
    write_text(&a.out, &ReportTable::from_eval(&r).to_csv())?;
    print!("{}", r.ape.to_csv());
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<(), CliError> {
    require_dir(&a.data, "data")?;
    let manifest = Manifest::read(&a.data)?;
    let train = load_split(&a.data, &manifest, Split::Train)?;
    let test = load_split(&a.data, &manifest, Split::Test)?;
    let data = SliceDataset::from_samples(&train);
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut table = AblationReport::default();
    for arm in Arm::ALL {
        let mut cfg = TrainConfig::for_arm(arm);
        cfg.arch.input_size = slice_size(&train)?;
        cfg.seed = a.seed;
        cfg.steps = Some(a.steps);
        cfg.lr = a.lr.unwrap_or(cfg.lr);
        cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let mut trainer = Trainer::new(cfg)?;
        trainer.fit(&data, a.steps, |_| {})?;
        trainer.save(a.out_dir.join(format!("{arm}.ackpt")))?;
        let mut log = String::from(LossReport::CSV_HEADER);
        log.push('\n');
        for r in &trainer.state().history {
            log.push_str(&r.csv_row());
            log.push('\n');
        }
        write_text(&a.out_dir.join(format!("{arm}.log.csv")), &log)?;
        let r = evaluate(trainer.generator(), &trainer.state().generator, &test, 50.0)?;
        log::info!("arm {arm} done");
        table.rows.push((arm.to_string(), r.ape));
    }
    write_text(&a.out_dir.join("ablation_ape.csv"), &table.to_csv())?;
    print!("{}", table.render());
    Ok(())
}

pub fn diffmap(a: DiffmapArgs) -> Result<(), CliError> {
    require_file(&a.pred, "prediction")?;
    require_file(&a.truth, "truth")?;
    let map = diff_map(&read_volume(&a.pred)?, &read_volume(&a.truth)?)?;
    std::fs::write(&a.out, encode_pgm(&map)).with_context(|| format!("writing {}", a.out.display()))?;
    println!("max_abs_diff_gy,{}", map.max_abs_diff_gy);
    Ok(())
}
