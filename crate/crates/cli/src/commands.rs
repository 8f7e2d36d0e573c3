use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use qdet::dataio::{load_image, parse_ellipse_list, EllipseBoxCoeffs, FddbRecord};
use qdet::detection::io::{parse_detections, write_detections};
use qdet::detection::{multi_scale_detect, AnchorSet, Detection};
use qdet::eval::{average_precision, evaluate_images, format_report, pr_csv, pr_curve, FoldReport, MatchResult};
use qdet::model::{build_detector, load_model, save_model, ModelConfig, ModelGraph, OutStrategy, StorageFormat};
use qdet::quantizer::{
    plan_quantization, profile_image, quantize_model, weight_range, ActivationProfile, QuantPlan,
};
use qdet::{QFormat, Tensor};

use crate::args::{BenchArgs, DetectArgs, EvalArgs, GenModelArgs, ProfileArgs, QuantizeArgs};
use crate::failure::{at_path, Failure};
use crate::manifest::Run;

const IMAGE_EXTS: [&str; 4] = ["ppm", "pgm", "pnm", "png"];

fn read_model(path: &Path, run: &mut Run) -> Result<ModelGraph, Failure> {
    run.input(path);
    load_model(path).map_err(at_path(path))
}

fn read_text(path: &Path, run: &mut Run) -> Result<String, Failure> {
    run.input(path);
    std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>, run: &mut Run) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    run.output(path);
    Ok(())
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

/// Image tensor with the channel count the model expects.
fn model_input(g: &ModelGraph, path: &Path) -> Result<Tensor, Failure> {
    let img = load_image(path).map_err(at_path(path))?;
    let img = match (g.input_channels(), img.channels()) {
        (3, 1) => img.to_rgb(),
        (want, have) if want != have => {
            return Err(Failure::Data(format!(
                "{}: {have}-channel image, model expects {want}",
                path.display()
            )))
        }
        _ => img,
    };
    Ok(img.to_tensor())
}

fn millions(n: usize) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

fn q16() -> StorageFormat {
    StorageFormat::Q(QFormat::default())
}

pub fn gen_model(a: &GenModelArgs, run: &mut Run) -> Result<String, Failure> {
    let strategy: OutStrategy = a
        .out_strategy
        .parse()
        .map_err(|e: qdet::Error| Failure::Usage(e.to_string()))?;
    let anchors = match &a.anchors {
        Some(p) => AnchorSet::parse(&read_text(p, run)?).map_err(at_path(p))?,
        None => AnchorSet::default_25(),
    };
    let cfg = ModelConfig {
        alpha: a.alpha,
        out_strategy: strategy,
        anchors,
        input_hw: (a.input_size, a.input_size),
        frozen_until: a.frozen_until,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let t = Instant::now();
    let g = build_detector(&cfg, a.seed)?;
    run.time("build", t.elapsed());
    save_model(&g, &a.output).map_err(at_path(&a.output))?;
    run.output(&a.output);

    let n = g.parameter_count();
    let mut s = String::new();
    let _ = writeln!(s, "model      alpha {} out {strategy} anchors {}", a.alpha, g.anchors().len());
    let _ = writeln!(s, "params ≈ {} ({n})", millions(n));
    let _ = writeln!(s, "fp32       {:.2} MB", g.storage_size(StorageFormat::Fp32));
    let _ = writeln!(s, "fp16       {:.2} MB", g.storage_size(StorageFormat::Fp16));
    let _ = writeln!(s, "q16        {:.2} MB", g.storage_size(q16()));
    Ok(s)
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|x| x.to_str())
                .is_some_and(|x| IMAGE_EXTS.contains(&x.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn profile(a: &ProfileArgs, run: &mut Run) -> Result<String, Failure> {
    let g = read_model(&a.model, run)?;
    if g.storage_format() != StorageFormat::Fp32 {
        return Err(Failure::Data(format!("profiling needs an fp32 model, got {}", g.storage_format())));
    }
    let mut files = image_files(&a.images)?;
    if files.is_empty() {
        return Err(Failure::Data(format!("no images in {}", a.images.display())));
    }
    if files.len() > a.limit {
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let mut pick = rand::seq::index::sample(&mut rng, files.len(), a.limit).into_vec();
        pick.sort_unstable();
        files = pick.into_iter().map(|i| files[i].clone()).collect();
    }
    run.input(&a.images);

    let t = Instant::now();
    let pool = thread_pool(a.threads)?;
    let parts: Vec<Result<ActivationProfile, Failure>> = pool.install(|| {
        files
            .par_iter()
            .map(|p| profile_image(&g, &model_input(&g, p)?).map_err(Failure::from))
            .collect()
    });
    let mut profile = ActivationProfile::new();
    for p in parts {
        profile = profile.merge(&p?);
    }
    run.time("profile", t.elapsed());
    write_file(&a.output, profile.to_text(), run)?;

    let (lo, hi) = profile.global_range().unwrap_or((0.0, 0.0));
    Ok(format!(
        "profiled {} images over {} layers\nactivation range [{lo}, {hi}]\n",
        files.len(),
        profile.len()
    ))
}

pub fn quantize(a: &QuantizeArgs, run: &mut Run) -> Result<String, Failure> {
    let g = read_model(&a.model, run)?;
    let profile = ActivationProfile::parse(&read_text(&a.profile, run)?).map_err(at_path(&a.profile))?;
    if profile.is_empty() {
        return Err(Failure::Data(format!("{}: empty profile", a.profile.display())));
    }
    if !(2..=32).contains(&a.word_bits) {
        return Err(Failure::Usage(format!("--word-bits must be in 2..=32, got {}", a.word_bits)));
    }
    let plan = match a.fractional {
        Some(n) => {
            let plan = QuantPlan::uniform(a.word_bits, n).map_err(|e| Failure::Usage(e.to_string()))?;
            let f = plan.activation_fmt;
            if !a.allow_saturation {
                if let Some((layer, r)) = profile
                    .layers()
                    .find(|(_, r)| r.min < f.min_value() || r.max > f.max_value())
                {
                    return Err(Failure::Data(format!(
                        "layer {layer} range [{}, {}] does not fit {f} (needs {} integer bits)",
                        r.min,
                        r.max,
                        qdet::fixedpoint::bits_for_range(r.min, r.max)?
                    )));
                }
            }
            plan
        }
        None => {
            let wr = weight_range(&g).unwrap_or((0.0, 0.0));
            plan_quantization(&profile, wr, a.word_bits)?
        }
    };
    let q = quantize_model(&g, &plan).map_err(|e| match e {
        qdet::Error::InvalidConfig(m) => Failure::Data(m),
        e => e.into(),
    })?;
    save_model(&q, &a.output).map_err(at_path(&a.output))?;
    run.output(&a.output);

    let size = q.storage_size(q.storage_format());
    Ok(format!(
        "weights     {}\nactivations {}\nparams      {}\nsize        {size:.2} MB\n",
        plan.weight_fmt,
        plan.activation_fmt,
        q.parameter_count()
    ))
}

fn parse_scales(s: &str) -> Result<Vec<f64>, Failure> {
    let scales: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Usage(format!("bad --scales {s:?}: {e}")))?;
    if scales.is_empty() || scales.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Failure::Usage(format!("--scales must be positive numbers, got {s:?}")));
    }
    Ok(scales)
}

fn strip_ext(s: &str) -> String {
    let p = Path::new(s);
    match p.extension().and_then(|e| e.to_str()) {
        Some(e) if IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()) => {
            s[..s.len() - e.len() - 1].to_string()
        }
        _ => s.to_string(),
    }
}

/// `(image id, path)` pairs in input order.
fn detect_inputs(a: &DetectArgs, run: &mut Run) -> Result<Vec<(String, PathBuf)>, Failure> {
    if let Some(img) = &a.image {
        return Ok(vec![(strip_ext(&img.to_string_lossy()), img.clone())]);
    }
    let list = a.list.as_ref().expect("clap requires --image or --list");
    let text = read_text(list, run)?;
    let root = a
        .image_root
        .clone()
        .unwrap_or_else(|| list.parent().map(Path::to_path_buf).unwrap_or_default());
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|entry| {
            let direct = root.join(entry);
            let path = if direct.is_file() {
                direct
            } else {
                IMAGE_EXTS
                    .iter()
                    .map(|e| root.join(format!("{entry}.{e}")))
                    .find(|p| p.is_file())
                    .unwrap_or(direct)
            };
            (strip_ext(entry), path)
        })
        .collect())
}

pub fn detect(a: &DetectArgs, run: &mut Run) -> Result<String, Failure> {
    let scales = parse_scales(&a.scales)?;
    let g = read_model(&a.model, run)?;
    let inputs = detect_inputs(a, run)?;
    if inputs.is_empty() {
        return Err(Failure::Data("no images to process".into()));
    }

    let t = Instant::now();
    let pool = thread_pool(a.threads)?;
    let results: Vec<Result<Vec<Detection>, Failure>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|(_, p)| {
                let x = model_input(&g, p)?;
                Ok(multi_scale_detect(&g, &x, &scales, a.score_t, a.iou_t)?)
            })
            .collect()
    });
    run.time("detect", t.elapsed());

    let mut ok: Vec<(&str, Vec<Detection>)> = Vec::new();
    let mut failed = 0;
    for ((id, path), r) in inputs.iter().zip(results) {
        match r {
            Ok(d) => {
                run.input(path);
                ok.push((id, d));
            }
            Err(e) if e.exit_code() == Failure::NUMERIC => return Err(e),
            Err(e) => {
                eprintln!("warning: skipping {id}: {e}");
                failed += 1;
            }
        }
    }
    if ok.is_empty() {
        return Err(Failure::Data(format!("all {failed} images failed")));
    }
    let text = write_detections(ok.iter().map(|(id, d)| (*id, d.as_slice())));
    let total: usize = ok.iter().map(|(_, d)| d.len()).sum();
    let summary = format!("{} images, {total} detections, {failed} skipped\n", ok.len());
    match &a.output {
        Some(p) => {
            write_file(p, text, run)?;
            Ok(summary)
        }
        None => {
            eprint!("{summary}");
            Ok(text)
        }
    }
}

fn fold_name(p: &Path) -> String {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.strip_suffix("-ellipseList").map(str::to_string).unwrap_or(stem)
}

fn list_ids<'a>(ids: impl Iterator<Item = &'a str>) -> String {
    let ids: Vec<&str> = ids.collect();
    let shown = ids.iter().take(10).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > 10 {
        format!("{shown}, ... ({} total)", ids.len())
    } else {
        shown
    }
}

pub fn eval(a: &EvalArgs, run: &mut Run) -> Result<String, Failure> {
    let dets = parse_detections(&read_text(&a.dets, run)?).map_err(at_path(&a.dets))?;
    let coeffs = EllipseBoxCoeffs {
        alpha: a.box_alpha,
        beta: a.box_beta,
    };
    let mut folds: Vec<(String, Vec<FddbRecord>)> = Vec::new();
    for p in &a.annotations {
        let records = parse_ellipse_list(&read_text(p, run)?).map_err(at_path(p))?;
        folds.push((fold_name(p), records));
    }

    let det_ids: BTreeSet<&str> = dets.iter().map(|(k, _)| k.as_str()).collect();
    let gt_ids: BTreeSet<&str> = folds
        .iter()
        .flat_map(|(_, r)| r.iter().map(|r| r.image_id.as_str()))
        .collect();
    let unknown: Vec<&str> = det_ids.difference(&gt_ids).copied().collect();
    if !unknown.is_empty() {
        return Err(Failure::Data(format!(
            "detections for images not in the annotations: {}",
            list_ids(unknown.into_iter())
        )));
    }
    let missing: Vec<&str> = gt_ids.difference(&det_ids).copied().collect();
    if !missing.is_empty() {
        return Err(Failure::Data(format!(
            "annotated images without a detection record: {}",
            list_ids(missing.into_iter())
        )));
    }

    let det_map: BTreeMap<&str, &Vec<Detection>> = dets.iter().map(|(k, v)| (k.as_str(), v)).collect();
    let mut reports = Vec::new();
    let mut pooled = MatchResult::default();
    for (name, records) in &folds {
        let gts: Vec<(String, Vec<qdet::detection::BBox>)> =
            records.iter().map(|r| (r.image_id.clone(), r.boxes(&coeffs))).collect();
        let fold_dets: Vec<(String, Vec<Detection>)> = records
            .iter()
            .map(|r| (r.image_id.clone(), det_map[r.image_id.as_str()].clone()))
            .collect();
        let m = evaluate_images(&gts, &fold_dets, a.iou)?;
        reports.push(FoldReport {
            name: name.clone(),
            images: records.len(),
            faces: m.gt_count,
            detections: m.ranked.len(),
            ap: average_precision(&m)?,
        });
        pooled = pooled.merge(&m);
    }
    let overall = FoldReport {
        name: "overall".into(),
        images: reports.iter().map(|r| r.images).sum(),
        faces: pooled.gt_count,
        detections: pooled.ranked.len(),
        ap: average_precision(&pooled)?,
    };
    if let Some(p) = &a.pr_csv {
        write_file(p, pr_csv(&pr_curve(&pooled)), run)?;
    }
    Ok(format!("{}AP {:.4}\n", format_report(&reports, &overall), overall.ap))
}

struct Timing {
    mean: f64,
    median: f64,
}

fn time_forward(iters: usize, warmup: usize, mut f: impl FnMut() -> Result<(), Failure>) -> Result<Timing, Failure> {
    for _ in 0..warmup {
        f()?;
    }
    let mut ms = Vec::with_capacity(iters);
    for _ in 0..iters.max(1) {
        let t = Instant::now();
        f()?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    ms.sort_by(f64::total_cmp);
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let mid = ms.len() / 2;
    let median = if ms.len() % 2 == 1 { ms[mid] } else { (ms[mid - 1] + ms[mid]) / 2.0 };
    Ok(Timing { mean, median })
}

pub fn bench(a: &BenchArgs, run: &mut Run) -> Result<String, Failure> {
    let g = match &a.model {
        Some(p) => read_model(p, run)?,
        None => {
            let cfg = ModelConfig {
                alpha: a.alpha,
                input_hw: (a.input_size, a.input_size),
                ..Default::default()
            };
            cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
            build_detector(&cfg, a.seed)?
        }
    };
    if a.input_size == 0 {
        return Err(Failure::Usage("--input-size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let x = Tensor::from_fn([1, a.input_size, a.input_size, g.input_channels()], |_| rng.gen::<f32>());
    let x = qdet::nn::pad_to_multiple(&x, g.meta().input_multiple);

    let mut s = String::new();
    let _ = writeln!(s, "input {0}x{0}, {1} iterations", a.input_size, a.iters.max(1));
    let fp32 = if g.storage_format() == StorageFormat::Fp32 {
        let t = time_forward(a.iters, a.warmup, || g.forward_float(&x).map(drop).map_err(Failure::from))?;
        run.time("fp32_mean", Duration::from_secs_f64(t.mean / 1e3));
        let _ = writeln!(s, "fp32 mean {:.2} ms median {:.2} ms ({:.2} FPS)", t.mean, t.median, 1e3 / t.median);
        Some(t)
    } else {
        None
    };

    let q = if g.is_fixed_point() {
        g.clone()
    } else {
        let profile = profile_image(&g, &x)?;
        let plan = plan_quantization(&profile, weight_range(&g).unwrap_or((0.0, 0.0)), a.word_bits)?;
        quantize_model(&g, &plan)?
    };
    let word = q.activation_format().map(|f| f.word_bits()).unwrap_or(a.word_bits);
    let t = time_forward(a.iters, a.warmup, || q.forward_fixed(&x).map(drop).map_err(Failure::from))?;
    run.time("fixed_mean", Duration::from_secs_f64(t.mean / 1e3));
    let _ = writeln!(
        s,
        "q{word} mean {:.2} ms median {:.2} ms ({:.2} FPS)",
        t.mean,
        t.median,
        1e3 / t.median
    );
    if let Some(f) = fp32 {
        let _ = writeln!(s, "q{word}/fp32 latency ratio {:.2}", t.median / f.median);
    }
    Ok(s)
}
