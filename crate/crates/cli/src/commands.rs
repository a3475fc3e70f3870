use std::collections::HashMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use memaudit_core::correlate::{correlate_packed, CorrelateOptions, PackedVectors};
use memaudit_core::harness::{plant as plant_set, PlantConfig};
use memaudit_core::ingest::{
    load_dataset, load_manifest, read_embeddings, write_atomic, write_ivc, write_manifest,
    EmbeddingSet, IvcEntry, IvcRecord, Manifest,
};
use memaudit_core::metrics::{
    fid, gaussian_stats, inception_score, mutual_information, ssim, SsimParams,
};
use memaudit_core::preprocess::{run_pipeline, LabelMap, PreprocessConfig, SliceFilterRule};
use memaudit_core::report::{AuditReport, MatchSet, ReportFormat, ReportOptions, ThresholdRule};
use memaudit_core::rng::sample_indices;
use memaudit_core::{ChannelMask, Dataset, Error, ImageRecord, Role};

use crate::progress::Progress;
use crate::{
    usage, AuditArgs, CliResult, Context, MetricsArgs, PlantArgs, PreprocessArgs, ReportArgs,
    EXIT_FLAGGED, EXIT_OK,
};

fn pool(ctx: &Context) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.workers)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")).into())
}

fn absolute(p: &Path) -> CliResult<PathBuf> {
    std::path::absolute(p).map_err(|e| {
        Error::Io {
            path: p.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn pair(v: &Option<Vec<usize>>) -> Option<(usize, usize)> {
    v.as_ref().map(|v| (v[0], v[1]))
}

/// Report text to `out` atomically, or to stdout.
fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

fn render(report: &AuditReport, format: ReportFormat) -> CliResult<String> {
    Ok(match format {
        ReportFormat::Json => report.to_json()?,
        ReportFormat::Csv => report.to_csv(),
    })
}

fn needs_baseline(rule: ThresholdRule, has_baseline: bool, flag: &str) -> CliResult<()> {
    if matches!(rule, ThresholdRule::Percentile(_)) && !has_baseline {
        return Err(usage(format!(
            "--rule percentile:P derives the threshold from a baseline; pass {flag} or use --rule fixed:V"
        )));
    }
    Ok(())
}

pub(crate) fn preprocess(ctx: &Context, a: &PreprocessArgs) -> CliResult<i32> {
    let filter = if a.min_fraction.is_some() || a.threshold.is_some() || a.filter_channel.is_some()
    {
        let d = SliceFilterRule::default();
        Some(
            SliceFilterRule::new(
                a.min_fraction.unwrap_or(d.min_fraction),
                a.threshold.unwrap_or(d.intensity_threshold),
                a.filter_channel.unwrap_or(d.channel),
            )
            .map_err(|e| usage(format!("--min-fraction/--threshold: {e}")))?,
        )
    } else {
        None
    };
    let remap = a
        .remap
        .as_deref()
        .map(|s| s.parse::<LabelMap>())
        .transpose()
        .map_err(|e| usage(format!("--remap: {e}")))?;
    for (flag, dims) in [("--pad", pair(&a.pad)), ("--resize", pair(&a.resize))] {
        if matches!(dims, Some((0, _)) | Some((_, 0))) {
            return Err(usage(format!("{flag} dimensions must be positive")));
        }
    }
    let cfg = PreprocessConfig {
        filter,
        pad: pair(&a.pad),
        rescale: a.rescale,
        remap,
        label_channel: a.label_channel,
        resize: pair(&a.resize),
    };

    let input = load_manifest(&a.input)?;
    let output = absolute(&a.output)?;
    let container = absolute(
        &a.container
            .clone()
            .unwrap_or_else(|| a.output.with_extension("ivc")),
    )?;
    let images = pool(ctx)?.install(|| run_pipeline(input.read_records()?, &cfg))?;
    if images.is_empty() {
        return Err(Error::EmptySet(format!(
            "no images survived preprocessing of {}",
            a.input.display()
        ))
        .into());
    }
    info!("{} images from {}", images.len(), a.input.display());
    let entries: Vec<IvcEntry> = images
        .into_iter()
        .map(|img| IvcEntry::narrowest(IvcRecord::Image(img)))
        .collect();
    write_ivc(&entries, &container)?;
    write_manifest(&output, &input.name, input.role, &[container])?;
    Ok(EXIT_OK)
}

/// Indices of the audited subset, or `None` when every image is used.
fn sample_plan(n: usize, sample: u64, seed: Option<u64>) -> CliResult<Option<Vec<usize>>> {
    if n as u64 <= sample {
        return Ok(None);
    }
    let seed = seed.ok_or_else(|| {
        usage(format!(
            "--seed is required to sample {sample} of {n} synthetic images"
        ))
    })?;
    Ok(Some(sample_indices(n, sample as usize, seed)))
}

fn select_embeddings(set: &EmbeddingSet, idx: &[usize]) -> CliResult<EmbeddingSet> {
    let ids = idx.iter().map(|&i| set.ids()[i].clone()).collect();
    let rows = idx
        .iter()
        .flat_map(|&i| set.row(i).iter().copied())
        .collect();
    Ok(EmbeddingSet::new(ids, set.dim(), rows)?)
}

fn correlate_set(
    ctx: &Context,
    label: &str,
    query: (&str, &PackedVectors),
    reference: (&str, &PackedVectors),
    opts: &CorrelateOptions,
) -> CliResult<MatchSet> {
    let total = query.1.len() as u64 * reference.1.len() as u64;
    let progress = Progress::new(label, total, ctx.interval, ctx.quiet);
    let cb = |done: u64| progress.update(done);
    let (plan, matches) = correlate_packed(query.1, reference.1, opts, Some(&cb))?;
    progress.finish();
    Ok(MatchSet {
        label: label.to_string(),
        query: query.0.to_string(),
        reference: reference.0.to_string(),
        plan,
        matches,
    })
}

const AUDITED_LABEL: &str = "synthetic-vs-train";
const BASELINE_LABEL: &str = "test-vs-train";

pub(crate) fn audit(ctx: &Context, a: &AuditArgs) -> CliResult<i32> {
    needs_baseline(a.rule, a.test.is_some(), "--test")?;
    let opts = CorrelateOptions {
        k: a.k as usize,
        workers: ctx.workers,
        block_budget: usize::try_from(a.block_budget_mib)
            .ok()
            .and_then(|m| m.checked_mul(1 << 20))
            .ok_or_else(|| usage("--block-budget-mib is too large"))?,
        mode: a.channel_mode,
    };

    let train_m = load_manifest(&a.train)?;
    let synth_m = load_manifest(&a.synthetic)?;
    let test_m = a.test.as_ref().map(load_manifest).transpose()?;
    let embeddings = train_m.is_embeddings();
    for m in std::iter::once(&synth_m).chain(test_m.as_ref()) {
        if m.is_embeddings() != embeddings {
            return Err(usage(format!(
                "{} and {} mix image and embedding files",
                train_m.path.display(),
                m.path.display()
            )));
        }
    }

    let (train, synth, test) = if embeddings {
        if a.channels.is_some() {
            return Err(usage("--channels does not apply to embedding manifests"));
        }
        pack_embeddings(a, &train_m, &synth_m, test_m.as_ref())?
    } else {
        pack_images(a, &train_m, &synth_m, test_m.as_ref())?
    };

    let audited = correlate_set(
        ctx,
        AUDITED_LABEL,
        (&synth_m.name, &synth),
        (&train_m.name, &train),
        &opts,
    )?;
    let baseline = match (&test_m, &test) {
        (Some(m), Some(t)) => Some(correlate_set(
            ctx,
            BASELINE_LABEL,
            (&m.name, t),
            (&train_m.name, &train),
            &opts,
        )?),
        _ => None,
    };

    if let Some(dir) = &a.save_matches {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for set in std::iter::once(&audited).chain(baseline.as_ref()) {
            set.save(dir.join(format!("{}.json", set.label)))?;
        }
    }

    let report_opts = ReportOptions {
        rule: a.rule,
        histogram_bins: a.histogram_bins as usize,
        ..Default::default()
    };
    let report = AuditReport::build(&audited, baseline.as_ref(), &[], &report_opts, None)?;
    emit(a.out.as_deref(), &render(&report, a.format)?)?;
    finish_report(ctx, &report)
}

fn finish_report(ctx: &Context, report: &AuditReport) -> CliResult<i32> {
    if !ctx.quiet {
        eprintln!(
            "{} of {} audited images flagged at threshold {:.6} ({})",
            report.flagged.len(),
            report.sample_ids.len(),
            report.threshold.value,
            report.threshold.provenance
        );
    }
    if !report.invalid_queries.is_empty() {
        warn!(
            "{} constant queries have no defined correlation",
            report.invalid_queries.len()
        );
    }
    Ok(if report.flagged.is_empty() {
        EXIT_OK
    } else {
        EXIT_FLAGGED
    })
}

type Packed = (PackedVectors, PackedVectors, Option<PackedVectors>);

fn pack_images(
    a: &AuditArgs,
    train_m: &Manifest,
    synth_m: &Manifest,
    test_m: Option<&Manifest>,
) -> CliResult<Packed> {
    let train = load_dataset(train_m)?;
    let mut synth = load_dataset(synth_m)?;
    if let Some(idx) = sample_plan(synth.len(), a.sample, a.seed)? {
        synth = synth.select(&idx)?;
    }
    let test = test_m.map(load_dataset).transpose()?;
    let (c, _, _) = train
        .shape()
        .ok_or_else(|| Error::EmptySet(format!("training manifest {}", train_m.path.display())))?;
    for ds in std::iter::once(&synth).chain(test.as_ref()) {
        if let Some(shape) = ds.shape() {
            if Some(shape) != train.shape() {
                return Err(usage(format!(
                    "{} has image shape {:?} but {} has {:?}",
                    ds.name(),
                    shape,
                    train.name(),
                    train.shape().unwrap_or_default()
                )));
            }
        }
    }
    let mask = a
        .channels
        .clone()
        .unwrap_or_else(|| ChannelMask::default_for(c));
    mask.check(c)
        .map_err(|e| usage(format!("--channels: {e}")))?;
    let pack = |ds: &Dataset| PackedVectors::from_dataset(ds, &mask, a.channel_mode);
    Ok((
        pack(&train)?,
        pack(&synth)?,
        test.as_ref().map(pack).transpose()?,
    ))
}

fn pack_embeddings(
    a: &AuditArgs,
    train_m: &Manifest,
    synth_m: &Manifest,
    test_m: Option<&Manifest>,
) -> CliResult<Packed> {
    let train = train_m.read_embeddings()?;
    let mut synth = synth_m.read_embeddings()?;
    if let Some(idx) = sample_plan(synth.len(), a.sample, a.seed)? {
        synth = select_embeddings(&synth, &idx)?;
    }
    let test = test_m.map(|m| m.read_embeddings()).transpose()?;
    for set in std::iter::once(&synth).chain(test.as_ref()) {
        if set.dim() != train.dim() {
            return Err(usage(format!(
                "embedding dimension {} does not match training dimension {}",
                set.dim(),
                train.dim()
            )));
        }
    }
    let pack = |s: &EmbeddingSet| PackedVectors::from_embeddings(s, a.metric);
    Ok((pack(&train), pack(&synth), test.as_ref().map(pack)))
}

#[derive(Serialize)]
struct PairValue {
    query_id: String,
    reference_id: String,
    value: f64,
}

#[derive(Serialize)]
struct PairSummary {
    n: usize,
    mean: f64,
    pairs: Vec<PairValue>,
}

#[derive(Serialize)]
struct InceptionOut {
    mean: f64,
    std: f64,
    splits: usize,
}

#[derive(Serialize, Default)]
struct MetricsOut {
    #[serde(skip_serializing_if = "Option::is_none")]
    ssim: Option<PairSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mutual_information: Option<PairSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fid: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    inception_score: Option<InceptionOut>,
}

fn load_images(path: &Path) -> CliResult<Dataset> {
    let m = load_manifest(path)?;
    if m.is_embeddings() {
        return Err(usage(format!(
            "{} lists embeddings, not images",
            path.display()
        )));
    }
    Ok(load_dataset(&m)?)
}

/// Image pairs by top-1 match when a match list is given, else by position.
fn image_pairs<'a>(
    q: &'a Dataset,
    r: &'a Dataset,
    matches: Option<&MatchSet>,
) -> CliResult<Vec<(&'a ImageRecord, &'a ImageRecord)>> {
    let Some(ms) = matches else {
        if q.len() != r.len() {
            return Err(usage(format!(
                "positional pairing needs equal sizes: {} has {}, {} has {}",
                q.name(),
                q.len(),
                r.name(),
                r.len()
            )));
        }
        return Ok(q.images().iter().zip(r.images()).collect());
    };
    let qi: HashMap<&str, &ImageRecord> = q.images().iter().map(|i| (i.id(), i)).collect();
    let ri: HashMap<&str, &ImageRecord> = r.images().iter().map(|i| (i.id(), i)).collect();
    let mut out = Vec::new();
    for m in &ms.matches {
        let Some(top) = m.top1() else { continue };
        let a = qi.get(m.query_id.as_str());
        let b = ri.get(top.reference_id.as_str());
        match (a, b) {
            (Some(a), Some(b)) => out.push((*a, *b)),
            _ => {
                return Err(usage(format!(
                    "match {} -> {} not found in the given manifests",
                    m.query_id, top.reference_id
                )))
            }
        }
    }
    Ok(out)
}

fn pair_summary(
    pairs: &[(&ImageRecord, &ImageRecord)],
    f: impl Fn(&ImageRecord, &ImageRecord) -> memaudit_core::Result<f64> + Sync,
) -> CliResult<PairSummary> {
    if pairs.is_empty() {
        return Err(Error::EmptySet("no image pairs to compare".into()).into());
    }
    let pairs = pairs
        .par_iter()
        .map(|(a, b)| {
            Ok(PairValue {
                query_id: a.id().to_string(),
                reference_id: b.id().to_string(),
                value: f(a, b)?,
            })
        })
        .collect::<memaudit_core::Result<Vec<_>>>()?;
    let mean = pairs.iter().map(|p| p.value).sum::<f64>() / pairs.len() as f64;
    Ok(PairSummary {
        n: pairs.len(),
        mean,
        pairs,
    })
}

pub(crate) fn metrics(ctx: &Context, a: &MetricsArgs) -> CliResult<i32> {
    if a.ssim_pairs.is_none() && a.mi_pairs.is_none() && a.fid.is_none() && a.inception.is_none() {
        return Err(usage(
            "nothing to compute; pass --ssim-pairs, --mi-pairs, --fid or --is",
        ));
    }
    if a.matches.is_some() && a.ssim_pairs.is_none() && a.mi_pairs.is_none() {
        return Err(usage(
            "--matches only applies to --ssim-pairs and --mi-pairs",
        ));
    }
    let matches = a.matches.as_ref().map(MatchSet::load).transpose()?;
    let params = SsimParams::default();
    let bins = a.bins as usize;
    let mut out = MetricsOut::default();
    pool(ctx)?.install(|| -> CliResult<()> {
        if let Some(p) = &a.ssim_pairs {
            let (q, r) = (load_images(&p[0])?, load_images(&p[1])?);
            out.ssim = Some(pair_summary(
                &image_pairs(&q, &r, matches.as_ref())?,
                |x, y| ssim(x, y, &params),
            )?);
        }
        if let Some(p) = &a.mi_pairs {
            let (q, r) = (load_images(&p[0])?, load_images(&p[1])?);
            let pairs = image_pairs(&q, &r, matches.as_ref())?;
            out.mutual_information =
                Some(pair_summary(&pairs, |x, y| mutual_information(x, y, bins))?);
        }
        Ok(())
    })?;
    if let Some(p) = &a.fid {
        let real = gaussian_stats(&read_embeddings(&p[0])?)?;
        let synth = gaussian_stats(&read_embeddings(&p[1])?)?;
        out.fid = Some(fid(&real, &synth)?);
    }
    if let Some(p) = &a.inception {
        let (mean, std) = inception_score(&read_embeddings(p)?, a.splits as usize)?;
        out.inception_score = Some(InceptionOut {
            mean,
            std,
            splits: a.splits as usize,
        });
    }
    let mut text = serde_json::to_string_pretty(&out).map_err(Error::from)?;
    text.push('\n');
    emit(a.out.as_deref(), &text)?;
    Ok(EXIT_OK)
}

pub(crate) fn plant(ctx: &Context, a: &PlantArgs) -> CliResult<i32> {
    let cfg = PlantConfig {
        n_output: a.n as usize,
        p_copy: a.p_copy,
        p_noisy: a.p_noisy,
        p_shift: a.p_shift,
        noise_sigma: a.sigma,
        shift_pixels: a.shift,
        seed: a.seed,
    };
    cfg.validate()
        .map_err(|e| usage(format!("--p-*/--sigma: {e}")))?;
    let train = load_images(&a.train)?;
    let out = absolute(&a.out)?;
    let manifest = absolute(
        &a.manifest
            .clone()
            .unwrap_or_else(|| a.out.with_extension("mf")),
    )?;
    let (synth, truth) = pool(ctx)?.install(|| plant_set(&train, &cfg))?;
    let name = synth.name().to_string();
    let entries: Vec<IvcEntry> = synth
        .into_images()
        .into_iter()
        .map(|img| IvcEntry::narrowest(IvcRecord::Image(img)))
        .collect();
    write_ivc(&entries, &out)?;
    truth.save(&a.truth)?;
    write_manifest(&manifest, &name, Role::Synthetic, &[out])?;
    info!("planted {} images from {}", entries.len(), train.name());
    Ok(EXIT_OK)
}

pub(crate) fn report(ctx: &Context, a: &ReportArgs) -> CliResult<i32> {
    needs_baseline(a.rule, a.baseline.is_some(), "--baseline")?;
    let audited = MatchSet::load(&a.matches)?;
    let baseline = a.baseline.as_ref().map(MatchSet::load).transpose()?;
    let opts = ReportOptions {
        rule: a.rule,
        histogram_bins: a.histogram_bins as usize,
        ..Default::default()
    };
    let report = AuditReport::build(&audited, baseline.as_ref(), &[], &opts, None)?;
    emit(a.out.as_deref(), &render(&report, a.format)?)?;
    finish_report(ctx, &report)
}
