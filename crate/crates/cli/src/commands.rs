use crate::server::{self, ServerConfig};
use crate::{
    EvalArgs, ExtractArgs, GradcheckArgs, OptimizerArg, PrecisionArg, ServeArgs, SplitArgs,
    StatsArgs, SynthArgs, TextFormat, TrainArgs, TranscribeArgs,
};
use anyhow::{bail, Context};
use datobs_core::corpus::{
    class_stats, extract_characters, generate_synthetic, load_class_folders, parse_annotation,
    stratified_split, Augment, Dataset, LabelSet,
};
use datobs_core::imaging::{decode_any, encode_pgm, tensor_to_gray};
use datobs_core::nn::{
    build_preset, grad_check, he_init, load_model, random_batch, save_model, CheckPrecision,
    ModelConfig, OptimizerKind,
};
use datobs_core::train::{evaluate, report_json, train_observed, write_history, Hyperparams};
use datobs_core::transcribe::transcribe_sign;
use serde::Serialize;
use std::path::{Path, PathBuf};

fn labels() -> &'static LabelSet {
    LabelSet::tifinagh()
}

fn write_or_print(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn create_dir(p: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn load(dir: &Path) -> anyhow::Result<Dataset> {
    Ok(load_class_folders(dir, labels())?)
}

fn check_classes(config: &ModelConfig) -> anyhow::Result<()> {
    if config.num_classes != labels().len() {
        bail!(
            "model predicts {} classes but the label set has {}",
            config.num_classes,
            labels().len()
        );
    }
    Ok(())
}

pub fn extract(a: &ExtractArgs) -> anyhow::Result<()> {
    let entries = server::list_images(&a.images, labels())
        .with_context(|| format!("listing {}", a.images.display()))?;
    let mut written = 0usize;
    for entry in entries.iter().filter(|e| e.has_annotation) {
        let image_path = a.images.join(&entry.id);
        let sidecar = server::sidecar_path(&image_path);
        let text = std::fs::read_to_string(&sidecar)
            .with_context(|| format!("reading {}", sidecar.display()))?;
        let ann = parse_annotation(&text, labels()).with_context(|| sidecar.display().to_string())?;
        let bytes = std::fs::read(&image_path)
            .with_context(|| format!("reading {}", image_path.display()))?;
        if !a.allow_stale && !ann.matches_image(&bytes) {
            bail!("{}: image changed since it was annotated (digest mismatch)", image_path.display());
        }
        let img = decode_any(&bytes).with_context(|| image_path.display().to_string())?;
        let samples = extract_characters(&img, &ann, labels())
            .with_context(|| image_path.display().to_string())?;
        let stem = entry.id.replace('/', "__");
        for (i, s) in samples.iter().enumerate() {
            let dir = a.out.join(labels().name(s.class_index));
            create_dir(&dir)?;
            let gray = tensor_to_gray(&s.tensor)?;
            let path = dir.join(format!("{stem}.{i:03}.pgm"));
            std::fs::write(&path, encode_pgm(&gray))
                .with_context(|| format!("writing {}", path.display()))?;
            written += 1;
        }
    }
    eprintln!("extracted {written} characters into {}", a.out.display());
    Ok(())
}

fn copy_into(d: &Dataset, root: &Path) -> anyhow::Result<()> {
    for s in &d.samples {
        let src = PathBuf::from(&s.source);
        let dir = root.join(labels().name(s.class_index));
        create_dir(&dir)?;
        let dst = dir.join(src.file_name().context("sample without a file name")?);
        std::fs::copy(&src, &dst)
            .with_context(|| format!("copying {} to {}", src.display(), dst.display()))?;
    }
    Ok(())
}

pub fn split(a: &SplitArgs) -> anyhow::Result<()> {
    let d = load(&a.data)?;
    let (train, test) = stratified_split(&d, a.train_fraction, a.seed)?;
    let (train_dir, test_dir) = (a.out.join("train"), a.out.join("test"));
    create_dir(&train_dir)?;
    create_dir(&test_dir)?;
    copy_into(&train, &train_dir)?;
    copy_into(&test, &test_dir)?;
    eprintln!("{} train / {} test", train.len(), test.len());
    Ok(())
}

#[derive(Serialize)]
struct ClassRow<'a> {
    label: &'a str,
    count: usize,
    frequency: f64,
}

#[derive(Serialize)]
struct StatsJson<'a> {
    total: usize,
    classes: Vec<ClassRow<'a>>,
    top: Vec<&'a str>,
    topk_share: f64,
}

pub fn stats(a: &StatsArgs) -> anyhow::Result<()> {
    let d = load(&a.data)?;
    let s = class_stats(&d)?;
    let set = labels();
    let json = StatsJson {
        total: s.total,
        classes: (0..set.len())
            .map(|i| ClassRow {
                label: set.name(i),
                count: s.counts[i],
                frequency: s.frequencies[i],
            })
            .collect(),
        top: s.top_k(a.top).into_iter().map(|i| set.name(i)).collect(),
        topk_share: s.topk_share(a.top),
    };
    let mut text = serde_json::to_string_pretty(&json)?;
    text.push('\n');
    write_or_print(a.out.as_deref(), &text)
}

pub fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    if a.per_class < 1 {
        bail!("--per-class must be at least 1");
    }
    let augment = Augment {
        rotation_deg_max: a.rotation,
        noise_std: a.noise,
        translate_px_max: a.translate,
    };
    let d = generate_synthetic(a.per_class, a.seed, augment);
    let mut seen = vec![0usize; d.labels.len()];
    for s in &d.samples {
        let name = d.labels.name(s.class_index);
        let dir = a.out.join(name);
        create_dir(&dir)?;
        let path = dir.join(format!("{name}-{:04}.pgm", seen[s.class_index]));
        seen[s.class_index] += 1;
        std::fs::write(&path, encode_pgm(&tensor_to_gray(&s.tensor)?))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("wrote {} samples to {}", d.len(), a.out.display());
    Ok(())
}

/// Resolve the train and test sets for `train`.
fn train_test(a: &TrainArgs) -> anyhow::Result<(Dataset, Dataset)> {
    if let Some(test) = &a.test {
        return Ok((load(&a.data)?, load(test)?));
    }
    let (tr, te) = (a.data.join("train"), a.data.join("test"));
    if tr.is_dir() && te.is_dir() {
        return Ok((load(&tr)?, load(&te)?));
    }
    let d = load(&a.data)?;
    Ok(stratified_split(&d, a.train_fraction, a.seed)?)
}

pub fn train(a: &TrainArgs, deterministic: bool) -> anyhow::Result<()> {
    let (train_set, test_set) = train_test(a)?;
    let config = build_preset(&a.preset, labels().len())?;
    let h = Hyperparams {
        batch_size: a.batch,
        epochs: a.epochs,
        learning_rate: a.lr,
        seed: a.seed,
        optimizer: match a.optimizer {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::SgdMomentum,
        },
        deterministic,
    };
    eprintln!(
        "{}: {} train / {} test samples, {} epochs of batch {}",
        config.name,
        train_set.len(),
        test_set.len(),
        h.epochs,
        h.batch_size
    );
    let params = he_init(&config, a.seed);
    let (params, history) = train_observed(&config, params, &train_set, &test_set, &h, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  acc {:.4}  test loss {:.4}  test acc {:.4}",
            r.epoch, r.train_loss, r.train_accuracy, r.test_loss, r.test_accuracy
        );
    })?;
    save_model(&config, &params, &a.out)?;
    write_history(&history, &a.history)?;
    if let Some(path) = &a.report {
        let report = evaluate(&config, &params, &test_set)?;
        write_or_print(Some(path), &report_json(&report))?;
    }
    Ok(())
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let (config, params) = load_model(&a.model)?;
    check_classes(&config)?;
    let d = load(&a.data)?;
    let report = evaluate(&config, &params, &d)?;
    eprintln!("accuracy {:.4} on {} samples", report.accuracy, report.total());
    write_or_print(a.out.as_deref(), &report_json(&report))
}

pub fn gradcheck(a: &GradcheckArgs) -> anyhow::Result<()> {
    let classes = labels().len();
    let config = if a.preset == "linear" {
        ModelConfig::linear(classes)
    } else {
        build_preset(&a.preset, classes)?
    };
    if a.batch < 1 {
        bail!("--batch must be at least 1");
    }
    if !(a.epsilon > 0.0 && a.epsilon.is_finite()) {
        bail!("--epsilon must be positive");
    }
    let (precision, default_tol) = match a.precision {
        PrecisionArg::F32 => (CheckPrecision::F32, 1e-2),
        PrecisionArg::F64 => (CheckPrecision::F64, 1e-6),
    };
    let tolerance = a.tolerance.unwrap_or(default_tol);
    let params = he_init(&config, a.seed);
    let (batch, ys) = random_batch(a.batch, classes, a.seed);
    let report = grad_check(&config, &params, &batch, &ys, a.epsilon, precision)?;
    let passed = report.global_max < tolerance;
    let json = serde_json::json!({
        "preset": config.name,
        "seed": a.seed,
        "tolerance": tolerance,
        "passed": passed,
        "report": report,
    });
    let mut text = serde_json::to_string_pretty(&json)?;
    text.push('\n');
    write_or_print(a.out.as_deref(), &text)?;
    if !passed {
        bail!(
            "global max relative error {:e} is not below tolerance {:e}",
            report.global_max,
            tolerance
        );
    }
    Ok(())
}

pub fn transcribe(a: &TranscribeArgs) -> anyhow::Result<()> {
    let ann_path = a.annotation.clone().unwrap_or_else(|| server::sidecar_path(&a.image));
    let text = std::fs::read_to_string(&ann_path)
        .with_context(|| format!("reading {}", ann_path.display()))?;
    let ann = parse_annotation(&text, labels()).with_context(|| ann_path.display().to_string())?;
    let bytes = std::fs::read(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    if !a.allow_stale && !ann.matches_image(&bytes) {
        bail!("{}: image changed since it was annotated (digest mismatch)", a.image.display());
    }
    let img = decode_any(&bytes).with_context(|| a.image.display().to_string())?;
    let (config, params) = load_model(&a.model)?;
    check_classes(&config)?;
    let result = transcribe_sign(&img, &ann, labels(), &config, &params)?;
    let out = match a.format {
        TextFormat::Json => result.to_json(),
        TextFormat::Text => format!("{}\n", result.text),
    };
    write_or_print(a.out.as_deref(), &out)
}

pub fn serve(a: &ServeArgs) -> anyhow::Result<()> {
    let config = ServerConfig {
        corpus_dir: a.dir.clone(),
        port: a.port,
        read_only: a.read_only,
        ui_dist: a.ui_dist.clone(),
    };
    // Fail before starting the runtime when the directory is unusable.
    let _ = server::router(&config).with_context(|| a.dir.display().to_string())?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(server::serve(config))?;
    Ok(())
}
