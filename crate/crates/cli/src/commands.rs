use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use pppn_core::archive::FailureRecord;
use pppn_core::dataset::{load_head, DatasetManifest};
use pppn_core::explain::{class_heatmaps, predict, to_pgm};
use pppn_core::metrics::evaluate;
use pppn_core::tensor::{write_tensor, Tensor};
use pppn_core::{decompose_head, read_archive, write_archive, Archive, ArchiveInfo};

use crate::args::{DecomposeArgs, ExplainArgs, MetricsArgs, SynthArgs};
use crate::data::ImageStore;
use crate::error::{CliError, CliResult};

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn decompose(args: &DecomposeArgs) -> CliResult {
    let (failures, total) = write_decomposition(args)?;
    if failures.is_empty() {
        return Ok(());
    }
    let mut msg = format!("{} of {total} classes failed:", failures.len());
    for f in &failures {
        msg.push_str(&format!("\n  class {}: {}", f.class_id, f.error));
    }
    Err(CliError::Partial(msg))
}

/// Runs the decomposition and writes the archive, returning the failed
/// classes and the class count.
fn write_decomposition(args: &DecomposeArgs) -> anyhow::Result<(Vec<FailureRecord>, usize)> {
    let cfg = args.config();
    if [cfg.refine.tol, cfg.nmf.rel_tol].iter().any(|t| t.is_nan() || *t <= 0.0) {
        bail!("tolerances must be positive");
    }
    let manifest = DatasetManifest::load(&args.manifest)?;
    let head = load_head(&args.head, Some(&manifest))?;
    let clamp = !args.no_clamp;

    tracing::info!(classes = manifest.classes.len(), k = args.k, mode = %args.mode, "decomposing");
    let result = decompose_head(&manifest, &head, &cfg, clamp);

    let info = ArchiveInfo {
        manifest: Some(absolute(&args.manifest).display().to_string()),
        head: Some(absolute(&args.head).display().to_string()),
        clamp,
        config: cfg,
    };
    let failures: Vec<FailureRecord> = result.failures.iter().map(Into::into).collect();
    write_archive(&args.out, &info, &result.classes, &failures, Some(&head))?;

    println!("{:>6}  {:<20} {:>12}  {:>12}  {:>12}", "class", "label", "recon_err", "obj_before", "obj_after");
    for d in &result.classes {
        let label = manifest.label(d.class_id).unwrap_or("");
        let err = d.reconstruction_error(head.weights.row(d.class_id));
        println!(
            "{:>6}  {:<20} {:>12.3e}  {:>12.6}  {:>12.6}",
            d.class_id,
            label,
            err,
            d.initial_objective(),
            d.final_objective()
        );
    }
    println!("archive: {}", args.out.display());
    Ok((failures, manifest.classes.len()))
}

fn archive_manifest(archive: &Archive, explicit: Option<&Path>) -> anyhow::Result<DatasetManifest> {
    let path = match (explicit, &archive.index.manifest) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => bail!("archive records no manifest; pass --manifest"),
    };
    Ok(DatasetManifest::load(path)?)
}

pub fn explain(args: &ExplainArgs) -> anyhow::Result<()> {
    let archive = read_archive(&args.archive)?;
    let manifest = archive_manifest(&archive, args.manifest.as_deref())?;
    if archive.classes.is_empty() {
        bail!("archive {} holds no decompositions", args.archive.display());
    }
    if let Some(c) = args.class {
        if archive.class(c).is_none() {
            bail!("class {c} is not in the archive");
        }
    }
    let store = ImageStore::load(&manifest, archive.index.clamp)?;
    let image = store
        .get(&args.image)
        .ok_or_else(|| anyhow!("image '{}' not found in the manifest", args.image))?;
    let x = store.feature_map(image);
    let explanation = predict(&x, &archive.classes)?;

    create_dir(&args.out)?;
    let (h, w) = store
        .image_size(&args.image)
        .map(|(h, w)| (h as usize, w as usize))
        .unwrap_or((args.size as usize, args.size as usize));
    for dec in archive.classes.iter().filter(|d| args.class.map_or(true, |c| c == d.class_id)) {
        for hm in class_heatmaps(&x, dec)? {
            let stem = format!("class_{:04}_proto_{:02}", dec.class_id, hm.prototype_index);
            let grid = Tensor::from_f64(vec![hm.height, hm.width], hm.values.clone())?;
            write_tensor(&grid, args.out.join(format!("{stem}.pptn")))?;
            let hm = hm.with_upsampled(h, w)?;
            let up = hm.upsampled.expect("just upsampled").array();
            let pgm = args.out.join(format!("{stem}.pgm"));
            fs::write(&pgm, to_pgm(up.view())).with_context(|| format!("cannot write {}", pgm.display()))?;
        }
    }
    let json = args.out.join("explanation.json");
    fs::write(&json, serde_json::to_vec_pretty(&explanation)?)
        .with_context(|| format!("cannot write {}", json.display()))?;

    let label = |c: usize| archive.label(c).unwrap_or("").to_string();
    println!("image {} (class {} {})", args.image, image.class_id, label(image.class_id));
    println!("predicted class {} {}", explanation.predicted_class, label(explanation.predicted_class));
    for (c, (logit, contrib)) in explanation
        .class_ids
        .iter()
        .zip(explanation.logits.iter().zip(&explanation.contributions))
    {
        let parts: Vec<String> = contrib.iter().map(|v| format!("{v:.4}")).collect();
        println!("{c:>6}  {logit:>10.4}  [{}]", parts.join(", "));
    }
    Ok(())
}

pub fn metrics(args: &MetricsArgs) -> anyhow::Result<()> {
    let cfg = args.config();
    if !(cfg.threshold_frac > 0.0 && cfg.threshold_frac < 1.0) {
        bail!("--threshold must lie in (0, 1), got {}", cfg.threshold_frac);
    }
    if !(cfg.tau_share > 0.0 && cfg.tau_share <= 1.0) {
        bail!("--tau must lie in (0, 1], got {}", cfg.tau_share);
    }
    let archive = read_archive(&args.archive)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let report = evaluate(&manifest, &archive.classes, &cfg, archive.index.clamp);

    create_dir(&args.out)?;
    let json = args.out.join("report.json");
    fs::write(&json, serde_json::to_vec_pretty(&report)?).with_context(|| format!("cannot write {}", json.display()))?;
    let csv = args.out.join("report.csv");
    fs::write(&csv, report.to_csv()).with_context(|| format!("cannot write {}", csv.display()))?;

    let pct = |x: Option<f64>| x.map(|v| format!("{v:.1}%")).unwrap_or_else(|| "n/a".into());
    println!("consistency {}", pct(report.aggregate_consistency));
    println!("stability   {}", pct(report.aggregate_stability));
    for s in &report.skipped {
        println!("skipped {} for class {}: {}", s.metric, s.class_id, s.reason);
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> anyhow::Result<()> {
    let cfg = args.config();
    if cfg.classes == 0 || cfg.images == 0 || cfg.parts == 0 || cfg.channels < cfg.parts || cfg.parts > cfg.height * cfg.width {
        bail!("need at least one class, image and part, channels >= parts and parts <= grid cells");
    }
    let manifest = pppn_core::synthetic::generate(&cfg).write(&args.out)?;
    println!(
        "wrote {} classes x {} images to {}",
        manifest.classes.len(),
        cfg.images,
        args.out.display()
    );
    Ok(())
}
