use std::path::{Path, PathBuf};
use std::time::Instant;

use essgan::data::{
    derive_seed, id_seed, open_dataset, phantom_dataset, read_manifest, read_slice, scan_layout, write_png16,
    write_png8, Dataset, PhantomKind, SliceRecord, Split,
};
use essgan::kspace::{make_mask, undersample, zero_fill};
use essgan::metrics::{aggregate, MetricReport, MetricRow};
use essgan::model::Checkpoint;
use essgan::training::{
    eval_pairs, evaluate, reconstruct_pairs, train, zero_fill_report, EpochSummary, TrainOptions, BEST_CHECKPOINT,
    LAST_CHECKPOINT, LOG_FILE, PEAK,
};
use essgan::{Image, Mask, MaskKind, MaskSpec, Model, NoiseSpec};

use crate::config::FileConfig;
use crate::fail::{io_fail, CliResult, Context, Fail};
use crate::manifest::{digest, RunManifest, Seeds, MANIFEST_FILE};
use crate::render::{error_map, kspace_preview, line_plot, zoom_crop, Series, BLUE};

pub const EPOCHS_JSON: &str = "epochs.json";
pub const EPOCHS_CSV: &str = "epochs.csv";
pub const NMSE_PLOT: &str = "nmse_vs_epoch.png";
pub const PSNR_PLOT: &str = "psnr_vs_epoch.png";
pub const MASK_FILE: &str = "mask.png";

pub fn noise_from(sigma: f64, mean: f64, seed: u64) -> CliResult<Option<NoiseSpec>> {
    if !sigma.is_finite() || sigma < 0.0 || !mean.is_finite() {
        return Err(Fail::Usage(format!(
            "noise sigma {sigma} / mean {mean} must be finite with sigma >= 0"
        )));
    }
    Ok((sigma > 0.0 || mean != 0.0).then_some(NoiseSpec { mean, sigma, seed }))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_fail(path, e))
}

fn load_mask(path: &Path) -> CliResult<Mask> {
    if !path.is_file() {
        return Err(Fail::Data(format!("mask file {} does not exist", path.display())));
    }
    Mask::load(path).ctx(format!("mask {}", path.display()))
}

fn load_model(path: &Path) -> CliResult<Model<f32>> {
    if !path.is_file() {
        return Err(Fail::Data(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    Model::from_checkpoint(&ck).ctx(path.display())
}

fn check_extent(what: &str, dims: (usize, usize), expected: (usize, usize), against: &str) -> CliResult<()> {
    if dims != expected {
        return Err(Fail::Data(format!(
            "{what} is {}x{} but {against} is {}x{}",
            dims.0, dims.1, expected.0, expected.1
        )));
    }
    Ok(())
}

fn write_report(report: &MetricReport, dir: &Path, stem: &str) -> CliResult<()> {
    Ok(report.write(&dir.join(format!("{stem}.csv")), &dir.join(format!("{stem}.json")))?)
}

fn summary(report: &MetricReport) -> String {
    format!(
        "NMSE {:.5} +- {:.5}, PSNR {:.3} +- {:.3} dB, SSIM {:.4} +- {:.4}",
        report.nmse.mean, report.nmse.std, report.psnr.mean, report.psnr.std, report.ssim.mean, report.ssim.std
    )
}

pub fn mask(kind: MaskKind, rate: f64, size: usize, seed: u64, out: &Path) -> CliResult<()> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Fail::Usage(format!("--rate {rate} must lie in (0, 1]")));
    }
    let spec = MaskSpec {
        kind,
        target_rate: rate,
        seed,
        height: size,
        width: size,
    };
    let m = make_mask(&spec).map_err(|e| Fail::Usage(e.to_string()))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    m.save(out)?;
    println!(
        "achieved_rate {} ({} of {} samples)",
        m.achieved_rate(),
        m.ones(),
        size * size
    );
    Ok(())
}

pub fn phantoms(kind: PhantomKind, size: usize, counts: [usize; 3], seed: u64, out: &Path) -> CliResult<()> {
    let ds = phantom_dataset(kind, size, counts, seed).map_err(|e| Fail::Usage(e.to_string()))?;
    create_dir(out)?;
    let entries = ds.write_layout(out)?;
    println!(
        "wrote {} {} phantoms of {size}x{size} to {}",
        entries.len(),
        kind.as_str(),
        out.display()
    );
    Ok(())
}

/// Every slice under `dir`: a dataset layout if there is one, otherwise the
/// PNG files directly inside it (ids from file stems).
fn input_slices(dir: &Path) -> CliResult<Vec<SliceRecord>> {
    if !dir.is_dir() {
        return Err(Fail::Data(format!("input directory {} does not exist", dir.display())));
    }
    let ds = open_dataset(dir)?;
    if !ds.is_empty() {
        return Ok(ds.records().to_vec());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_fail(dir, e))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Fail::Data(format!("no PNG slices under {}", dir.display())));
    }
    files
        .iter()
        .map(|f| {
            Ok(SliceRecord {
                id: f.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
                image: read_slice(f)?,
                split: Split::Test,
            })
        })
        .collect()
}

pub fn simulate(input: &Path, mask_path: &Path, noise: Option<NoiseSpec>, out: &Path) -> CliResult<()> {
    let mask = load_mask(mask_path)?;
    let slices = input_slices(input)?;
    for s in &slices {
        check_extent(&format!("slice {}", s.id), s.image.dims(), mask.dims(), "the mask")?;
    }
    let (kdir, zdir) = (out.join("kspace"), out.join("zf"));
    create_dir(&kdir)?;
    create_dir(&zdir)?;
    let mut rows = Vec::with_capacity(slices.len());
    for s in &slices {
        // Same per-slice noise stream as evaluation.
        let n = noise.map(|n| n.with_seed(derive_seed(n.seed, &[id_seed(&s.id)])));
        let y = undersample(&s.image.to_f64(), &mask, n.as_ref())?;
        let zf = zero_fill(&y)?.to_f32();
        write_png8(&kdir.join(format!("{}.png", s.id)), &kspace_preview(&y))?;
        write_png16(&zdir.join(format!("{}.png", s.id)), &zf)?;
        rows.push(MetricRow::compute(s.id.clone(), &zf, &s.image, PEAK)?);
    }
    let report = aggregate(rows);
    write_report(&report, out, "zf_metrics")?;
    println!("{} slices, zero-filled {}", report.count, summary(&report));
    Ok(())
}

/// Files that make up the dataset under `root`, as absolute paths.
fn dataset_files(root: &Path) -> CliResult<Vec<PathBuf>> {
    let manifest = root.join("manifest.json");
    let mut files = Vec::new();
    let entries = if manifest.is_file() {
        files.push(manifest.clone());
        read_manifest(&manifest)?
    } else {
        scan_layout(root)?
    };
    files.extend(entries.iter().map(|e| root.join(&e.path)));
    files
        .iter()
        .map(|f| std::fs::canonicalize(f).map_err(|e| io_fail(f, e)))
        .collect()
}

fn epoch_rows(epochs: &[EpochSummary]) -> String {
    let mut s = String::from("epoch,lr,steps,d_loss,g_adv,l1,es,total,val_nmse,val_psnr,best_val_nmse\n");
    for e in epochs {
        let l = &e.mean_losses;
        s += &format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            e.epoch, e.lr, e.steps, l.d_loss, l.g_adv, l.l1, l.es, l.total, e.val_nmse, e.val_psnr, e.best_val_nmse
        );
    }
    s
}

pub struct TrainArgs<'a> {
    pub config: Option<&'a Path>,
    pub data: &'a Path,
    pub out: &'a Path,
    pub deterministic: bool,
    pub resume: bool,
    pub threads: usize,
}

pub fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let started = Instant::now();
    let file_cfg = match a.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let cfg = file_cfg.resolve()?;
    if !a.data.is_dir() {
        return Err(Fail::Data(format!(
            "data directory {} does not exist",
            a.data.display()
        )));
    }
    let dataset: Dataset = open_dataset(a.data)?;
    if dataset.is_empty() {
        return Err(Fail::Data(format!("no slices under {}", a.data.display())));
    }
    for r in dataset.records() {
        let want = (cfg.model.height, cfg.model.width);
        check_extent(&format!("slice {}", r.id), r.image.dims(), want, "the configured model")?;
    }
    create_dir(a.out)?;
    let resume = if a.resume {
        let p = a.out.join(LAST_CHECKPOINT);
        if !p.is_file() {
            return Err(Fail::Data(format!("cannot resume: {} does not exist", p.display())));
        }
        Some(Checkpoint::load(&p)?)
    } else {
        None
    };
    let history_path = a.out.join(EPOCHS_JSON);
    let mut history: Vec<EpochSummary> = if a.resume && history_path.is_file() {
        let text = std::fs::read_to_string(&history_path).map_err(|e| io_fail(&history_path, e))?;
        serde_json::from_str(&text).map_err(|e| Fail::Data(format!("{}: {e}", history_path.display())))?
    } else {
        Vec::new()
    };

    let opts = TrainOptions {
        out_dir: Some(a.out.to_path_buf()),
        resume,
        warm_start: None,
    };
    let outcome = train(&cfg, &dataset, opts)?;
    history.extend(outcome.epochs.iter().cloned());

    let json = serde_json::to_string_pretty(&history).map_err(|e| Fail::Data(e.to_string()))?;
    std::fs::write(&history_path, json + "\n").map_err(|e| io_fail(&history_path, e))?;
    let csv_path = a.out.join(EPOCHS_CSV);
    std::fs::write(&csv_path, epoch_rows(&history)).map_err(|e| io_fail(&csv_path, e))?;
    let zf = &outcome.zero_fill_val;
    let nmse: Vec<(f64, f64)> = history.iter().map(|e| (e.epoch as f64, e.val_nmse)).collect();
    let psnr: Vec<(f64, f64)> = history.iter().map(|e| (e.epoch as f64, e.val_psnr)).collect();
    line_plot(
        &a.out.join(NMSE_PLOT),
        &[Series {
            points: &nmse,
            color: BLUE,
        }],
        Some(zf.nmse.mean),
    )?;
    line_plot(
        &a.out.join(PSNR_PLOT),
        &[Series {
            points: &psnr,
            color: BLUE,
        }],
        Some(zf.psnr.mean),
    )?;
    make_mask(&cfg.mask)?.save(&a.out.join(MASK_FILE))?;

    let mut outputs = vec![
        LOG_FILE.to_string(),
        BEST_CHECKPOINT.into(),
        LAST_CHECKPOINT.into(),
        EPOCHS_JSON.into(),
        EPOCHS_CSV.into(),
        NMSE_PLOT.into(),
        PSNR_PLOT.into(),
        MASK_FILE.into(),
        format!("{MASK_FILE}.json"),
    ];
    let test = dataset.split(Split::Test);
    if !test.is_empty() {
        let mask = make_mask(&cfg.mask)?;
        let pairs = eval_pairs(&test, &mask, cfg.noise.as_ref())?;
        write_report(&evaluate(&outcome.best, &pairs, cfg.batch_size)?, a.out, "test_metrics")?;
        write_report(&zero_fill_report(&pairs)?, a.out, "test_zf_metrics")?;
        for stem in ["test_metrics", "test_zf_metrics"] {
            outputs.push(format!("{stem}.csv"));
            outputs.push(format!("{stem}.json"));
        }
    }

    let mut inputs = Vec::new();
    if let Some(p) = a.config {
        let abs = std::fs::canonicalize(p).map_err(|e| io_fail(p, e))?;
        inputs.push(digest(&abs, abs.clone())?);
    }
    for f in dataset_files(a.data)? {
        inputs.push(digest(&f, f.clone())?);
    }
    let outputs = outputs
        .iter()
        .map(|o| digest(&a.out.join(o), PathBuf::from(o)))
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = RunManifest {
        tool: "essgan".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: std::env::args().skip(1).collect(),
        deterministic: a.deterministic,
        threads: a.threads,
        seeds: Seeds::of(&cfg),
        config: cfg,
        inputs,
        outputs,
        created_unix: (!a.deterministic).then(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        }),
        elapsed_secs: (!a.deterministic).then(|| started.elapsed().as_secs_f64()),
    };
    manifest.write(&a.out.join(MANIFEST_FILE))?;

    let best = history.iter().map(|e| e.val_nmse).fold(f64::INFINITY, f64::min);
    if history.is_empty() {
        println!("0 epochs run; zero-filled validation NMSE {:.5}", zf.nmse.mean);
    } else {
        println!(
            "{} epochs run; best validation NMSE {best:.5} (zero-filled {:.5})",
            history.len(),
            zf.nmse.mean
        );
    }
    Ok(())
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub mask: &'a Path,
    pub out: &'a Path,
    pub noise: Option<NoiseSpec>,
    pub error_maps: bool,
    pub batch_size: usize,
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let model = load_model(a.checkpoint)?;
    let mask = load_mask(a.mask)?;
    let cfg = model.config();
    check_extent("the mask", mask.dims(), (cfg.height, cfg.width), "the checkpoint model")?;
    if !a.data.is_dir() {
        return Err(Fail::Data(format!(
            "data directory {} does not exist",
            a.data.display()
        )));
    }
    let dataset = open_dataset(a.data)?;
    let test = dataset.split(Split::Test);
    if test.is_empty() {
        return Err(Fail::Data(format!("no test split under {}", a.data.display())));
    }
    for r in &test {
        check_extent(&format!("slice {}", r.id), r.image.dims(), mask.dims(), "the mask")?;
    }
    create_dir(a.out)?;
    let pairs = eval_pairs(&test, &mask, a.noise.as_ref())?;
    let recon = reconstruct_pairs(&model, &pairs, a.batch_size)?;
    let rows = pairs
        .iter()
        .zip(&recon)
        .map(|(p, xg)| MetricRow::compute(p.id.clone(), xg, &p.x, PEAK))
        .collect::<essgan::Result<Vec<_>>>()?;
    let report = aggregate(rows);
    let zf = zero_fill_report(&pairs)?;
    write_report(&report, a.out, "metrics")?;
    write_report(&zf, a.out, "zf_metrics")?;
    if a.error_maps {
        let (edir, cdir) = (a.out.join("error_maps"), a.out.join("crops"));
        create_dir(&edir)?;
        create_dir(&cdir)?;
        for (p, xg) in pairs.iter().zip(&recon) {
            write_png8(&edir.join(format!("{}.png", p.id)), &error_map(xg, &p.x))?;
            write_png8(&edir.join(format!("{}_zf.png", p.id)), &error_map(&p.x_zf, &p.x))?;
            for (tag, img) in [("truth", &p.x), ("zf", &p.x_zf), ("recon", xg)] {
                write_png8(&cdir.join(format!("{}_{tag}.png", p.id)), &zoom_crop(img))?;
            }
        }
    }
    println!("{} test slices; model {}", report.count, summary(&report));
    println!("zero-filled {}", summary(&zf));
    Ok(())
}

pub fn reconstruct(
    checkpoint: &Path,
    image: &Path,
    mask_path: &Path,
    noise: Option<NoiseSpec>,
    out: &Path,
) -> CliResult<()> {
    let model = load_model(checkpoint)?;
    let mask = load_mask(mask_path)?;
    if !image.is_file() {
        return Err(Fail::Data(format!("image {} does not exist", image.display())));
    }
    let x = read_slice(image)?;
    check_extent("the image", x.dims(), mask.dims(), "the mask")?;
    let cfg = model.config();
    check_extent("the image", x.dims(), (cfg.height, cfg.width), "the checkpoint model")?;
    let rec = SliceRecord {
        id: image
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string(),
        image: x,
        split: Split::Test,
    };
    let pairs = eval_pairs(&[&rec], &mask, noise.as_ref())?;
    let xg: Image<f32> = reconstruct_pairs(&model, &pairs, 1)?.remove(0);
    create_dir(out)?;
    write_png16(&out.join("zf.png"), &pairs[0].x_zf)?;
    write_png16(&out.join("recon.png"), &xg)?;
    write_png8(&out.join("error.png"), &error_map(&xg, &rec.image))?;
    let zf_row = MetricRow::compute("zf", &pairs[0].x_zf, &rec.image, PEAK)?;
    let row = MetricRow::compute("recon", &xg, &rec.image, PEAK)?;
    for r in [zf_row, row] {
        println!(
            "{}: NMSE {:.5}, PSNR {:.3} dB, SSIM {:.4}",
            r.image_id, r.nmse, r.psnr, r.ssim
        );
    }
    Ok(())
}

pub fn verify(path: &Path) -> CliResult<()> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let manifest = RunManifest::read(&manifest_path)?;
    let n = manifest.verify(&manifest_path)?;
    println!("ok: {n} files match {}", manifest_path.display());
    Ok(())
}
