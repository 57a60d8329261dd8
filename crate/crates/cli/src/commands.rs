use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, Context};
use gauss_digits::dataset::{build, read_dataset, write_dataset, BuildConfig, BuildOptions, GenerationParams};
use gauss_digits::io::{self, Quantizer};
use gauss_digits::randomness::derive_stream;
use gauss_digits::source::{read_gray, DirectorySource, ProceduralDigits, SourceProvider};
use gauss_digits::synthesis::synthesize_image;
use gauss_digits::verification::{
    all_position_pairs, audit_permutation, histogram_export, per_image_ks, pooled_chi_square, pooled_ks,
    random_position_pairs, stationarity_test, BatchSummary, TestReport, MIN_STATIONARITY_IMAGES,
};
use gauss_digits::{dataset::trace_source, Error, Region, Split};
use log::info;
use serde_json::json;

use crate::args::{GenerateArgs, MasksArgs, PreviewArgs, SourceArgs, VerifyArgs, SOURCE_DIR_ENV};
use crate::Failure;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn check_params(params: &GenerationParams) -> Result<(), Failure> {
    params.validate().map_err(usage)
}

fn open_source(args: &SourceArgs, per_class: usize) -> Result<Box<dyn SourceProvider>, Failure> {
    if args.procedural {
        // a little slack in case a drawn digit is rejected
        let available = per_class + per_class / 4 + 8;
        return Ok(Box::new(ProceduralDigits::new(args.procedural_seed, available)));
    }
    let Some(root) = &args.source_dir else {
        return Err(usage(anyhow!(
            "no source images: pass --source-dir, set {SOURCE_DIR_ENV}, or use --procedural"
        )));
    };
    if !root.is_dir() {
        return Err(Failure::Data(anyhow!("source directory {} does not exist", root.display())));
    }
    let source = match &args.source_list {
        Some(list) => DirectorySource::from_listing(root, list)?,
        None => DirectorySource::scan(root)?,
    };
    Ok(Box::new(source))
}

pub fn generate(a: &GenerateArgs) -> Result<(), Failure> {
    let config = BuildConfig {
        global_seed: a.seed,
        train_per_class: a.train_per_class,
        test_per_class: a.test_per_class,
        classes: a.classes.clone(),
        params: a.pipeline.params(),
    };
    config.normalized_classes().map_err(usage)?;
    check_params(&config.params)?;
    if a.train_per_class + a.test_per_class == 0 {
        return Err(usage(anyhow!("--train-per-class and --test-per-class are both zero")));
    }
    let source = open_source(&a.source, a.train_per_class + a.test_per_class)?;

    let started = Instant::now();
    let out = build(&config, source.as_ref(), BuildOptions { jobs: a.jobs, keep_masks: false })?;
    write_dataset(&out.dataset, &a.out_dir).with_context(|| format!("writing {}", a.out_dir.display()))?;

    let manifest = &out.dataset.manifest;
    let train = manifest.split_records(Split::Train).count();
    let test = manifest.split_records(Split::Test).count();
    println!(
        "wrote {train} train + {test} test images to {} in {:.1}s",
        a.out_dir.display(),
        started.elapsed().as_secs_f64()
    );
    if !manifest.rejected.is_empty() {
        println!("{} source images rejected (listed in the manifest)", manifest.rejected.len());
    }
    Ok(())
}

/// Chance that a batch of genuine data fails its allowance.
const BATCH_TAIL: f64 = 0.001;

struct Check {
    name: &'static str,
    pass: bool,
    skipped: bool,
    summary: String,
}

impl Check {
    fn from_report(name: &'static str, r: &TestReport) -> Self {
        Check {
            name,
            pass: r.pass,
            skipped: false,
            summary: format!("statistic {:.6} vs critical {:.6} (n = {})", r.statistic, r.critical_value, r.sample_size),
        }
    }

    fn from_batch(name: &'static str, b: &BatchSummary, min_fraction: f64) -> Self {
        let allowed = b.allowed_failures(min_fraction, BATCH_TAIL);
        Check {
            name,
            pass: b.total > 0 && b.failed() <= allowed,
            skipped: false,
            summary: format!(
                "{}/{} passed ({:.2}%), at most {allowed} failures allowed",
                b.passed,
                b.total,
                100.0 * b.pass_fraction()
            ),
        }
    }

    fn status(&self) -> &'static str {
        match (self.skipped, self.pass) {
            (true, _) => "SKIP",
            (false, true) => "PASS",
            (false, false) => "FAIL",
        }
    }
}

fn csv_table(reports: &[TestReport]) -> String {
    let mut out = String::from("test_name,statistic,critical_value,alpha,pass,sample_size\n");
    for r in reports {
        out.push_str(&format!(
            "\"{}\",{},{},{},{},{}\n",
            r.test_name.replace('"', "\"\""),
            r.statistic,
            r.critical_value,
            r.alpha,
            r.pass,
            r.sample_size
        ));
    }
    out
}

pub fn verify(a: &VerifyArgs) -> Result<(), Failure> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(usage(anyhow!("--alpha must lie in (0, 1), got {}", a.alpha)));
    }
    for (flag, v) in [("--min-image-pass", a.min_image_pass), ("--min-pair-pass", a.min_pair_pass)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(usage(anyhow!("{flag} must lie in [0, 1], got {v}")));
        }
    }
    let dataset = read_dataset(&a.dataset).with_context(|| format!("reading dataset {}", a.dataset.display()))?;
    let images = &dataset.images;
    if images.is_empty() {
        return Err(Failure::Data(anyhow!("dataset {} has no images", a.dataset.display())));
    }
    let variance = dataset.manifest.parameters.variance;
    let started = Instant::now();
    let mut checks = Vec::new();
    let mut table = Vec::new();

    let audit = audit_permutation(images, &dataset.manifest)?;
    checks.push(Check {
        name: "permutation audit",
        pass: audit.mismatches.is_empty(),
        skipped: false,
        summary: match audit.mismatches.len() {
            0 => format!("0 mismatches over {} images", images.len()),
            n => format!(
                "{n} mismatching images, first indices {:?}",
                &audit.mismatches[..n.min(10)]
            ),
        },
    });
    table.push(audit.report.clone());

    let ks = pooled_ks(images, variance, a.alpha)?;
    checks.push(Check::from_report("pooled ks", &ks));
    table.push(ks);

    let chi = pooled_chi_square(images, variance, a.alpha, a.max_bins)?;
    checks.push(Check::from_report("pooled chi-square", &chi));
    table.push(chi);

    let per_image = per_image_ks(images, variance, a.alpha)?;
    checks.push(Check::from_batch("per-image ks", &per_image, a.min_image_pass));
    table.extend(per_image.reports.iter().cloned());

    let stationarity = if a.skip_stationarity {
        None
    } else if images.len() < MIN_STATIONARITY_IMAGES {
        checks.push(Check {
            name: "stationarity",
            pass: true,
            skipped: true,
            summary: format!("needs at least {MIN_STATIONARITY_IMAGES} images, dataset has {}", images.len()),
        });
        None
    } else {
        let pairs = if a.all_pairs {
            all_position_pairs()
        } else {
            random_position_pairs(a.pair_seed, a.pairs)
        };
        let summary = BatchSummary::new("stationarity", stationarity_test(images, &pairs, a.alpha)?);
        checks.push(Check::from_batch("stationarity", &summary, a.min_pair_pass));
        table.extend(summary.reports.iter().cloned());
        Some(summary)
    };

    for c in &checks {
        println!("{}  {:<18} {}", c.status(), c.name, c.summary);
    }
    info!("verification took {:.1}s", started.elapsed().as_secs_f64());

    let report_path = a.report.clone().unwrap_or_else(|| a.dataset.join("verification.json"));
    let report = json!({
        "dataset": a.dataset.display().to_string(),
        "images": images.len(),
        "alpha": a.alpha,
        "checks": checks.iter().map(|c| json!({
            "name": c.name,
            "status": c.status(),
            "summary": c.summary,
        })).collect::<Vec<_>>(),
        "audit_mismatches": audit.mismatches,
        "pooled_ks": table[1],
        "pooled_chi_square": table[2],
        "per_image_ks": { "total": per_image.total, "passed": per_image.passed },
        "stationarity": stationarity.as_ref().map(|s| json!({ "total": s.total, "passed": s.passed })),
    });
    if let Some(parent) = report_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&report_path, serde_json::to_string_pretty(&report).context("encoding report")?)?;
    fs::write(report_path.with_extension("csv"), csv_table(&table))?;
    println!("report written to {}", report_path.display());

    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(failed.join(", ")))
    }
}

pub fn preview(a: &PreviewArgs) -> Result<(), Failure> {
    if !(a.bin_width > 0.0 && a.bin_width.is_finite()) {
        return Err(usage(anyhow!("--bin-width must be positive, got {}", a.bin_width)));
    }
    let dataset = read_dataset(&a.dataset).with_context(|| format!("reading dataset {}", a.dataset.display()))?;
    if let Some(&bad) = a.indices.iter().find(|&&i| i >= dataset.images.len()) {
        return Err(usage(anyhow!(
            "index {bad} is out of range; the dataset has {} images",
            dataset.images.len()
        )));
    }
    fs::create_dir_all(&a.out_dir)?;
    let variance = dataset.manifest.parameters.variance;
    let quantizer = Quantizer::for_variance(variance);
    for &i in &a.indices {
        let image = &dataset.images[i];
        let png = a.out_dir.join(format!("image-{i}.png"));
        let clipped = io::write_png_preview(image, &png, &quantizer)?;
        let csv = a.out_dir.join(format!("histogram-{i}.csv"));
        fs::write(&csv, histogram_export(image, a.bin_width, variance)?.to_csv())?;
        let record = &dataset.manifest.records[i];
        println!(
            "{i}: label {} ({:?}), {} and {}{}",
            record.label,
            record.split,
            png.display(),
            csv.display(),
            if clipped > 0 { format!(", {clipped} pixels clipped in the PNG") } else { String::new() }
        );
    }
    Ok(())
}

pub fn masks(a: &MasksArgs) -> Result<(), Failure> {
    let params = a.pipeline.params();
    check_params(&params)?;
    let image = match (&a.source, a.procedural_class) {
        (Some(path), _) => read_gray(path)?,
        (None, Some(class)) if class < 10 => ProceduralDigits::new(a.procedural_seed, a.procedural_index + 1)
            .render(class, a.procedural_index),
        (None, Some(class)) => return Err(usage(anyhow!("--procedural-class must be 0-9, got {class}"))),
        (None, None) => return Err(usage(anyhow!("pass --source or --procedural-class"))),
    };
    let trace = trace_source(&image, &params).map_err(|e| match e {
        Error::DegenerateMask(msg) => Failure::Data(anyhow!("degenerate mask: {msg}")),
        other => other.into(),
    })?;

    fs::create_dir_all(&a.out_dir)?;
    let out = |name: &str| -> PathBuf { a.out_dir.join(name) };
    let pre = &trace.preprocessed;
    io::write_gray_png(&image, &out("source.png"))?;
    io::write_binary_png(&pre.binarized.image, &out("binarized.png"))?;
    io::write_binary_png(&pre.cropped, &out("cropped.png"))?;
    io::write_binary_png(trace.binary(), &out("binary.png"))?;
    io::write_binary_png(&trace.edges.to_binary(), &out("edges.png"))?;
    for region in Region::ALL {
        io::write_binary_png(&trace.partition.region_mask(region), &out(&format!("region-{}.png", region.name())))?;
    }
    let sizes = trace.partition.region_sizes();
    println!(
        "threshold {}, regions outside {} / outside-boundary {} / inside-boundary {} / inside {}",
        pre.binarized.threshold, sizes[0], sizes[1], sizes[2], sizes[3]
    );
    if let Some(seed) = a.synth_seed {
        let (synthetic, _) = synthesize_image(&trace.partition, &mut derive_stream(seed, 0), params.variance)?;
        io::write_png_preview(&synthetic, &out("synthetic.png"), &Quantizer::for_variance(params.variance))?;
    }
    println!("masks written to {}", a.out_dir.display());
    Ok(())
}
