use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use lae_core::autolabel::mock::{MockConfig, MockServer};
use lae_core::autolabel::{
    judge, rule_filter, run_autolabel, AutoLabelConfig, DropReason, FilterPolicy, ProposalConfig, RetryPolicy,
};
use lae_core::dvc::{build_batch, step_seed, VocabRegistry, DEFAULT_VOCAB_LEN};
use lae_core::eval::{evaluate, read_detections_jsonl, EvalOptions, Interpolation};
use lae_core::formats::{import_coco, manifest_to_bytes, parse_proposals, read_lvlm_jsonl, read_manifest};
use lae_core::numerics::run_math_checks;
use lae_core::pipeline::{
    assemble_benchmark, merge_manifests, read_selections, sample_by_class, split_dense_manifest, SamplePolicy,
    DEFAULT_DENSE_CAP,
};
use lae_core::tiler::{dedup_instances, slice_image};
use lae_core::{DatasetManifest, TileSpec};
use serde::Serialize;

use crate::config::{flag, ConfigFile, Params};
use crate::output::Outputs;
use crate::stats::stats;
use crate::{
    AssembleArgs, AutolabelArgs, CheckMathArgs, Cli, Command, ConvertArgs, DvcArgs, EvalArgs, FilterArgs,
    FilterFlags, MergeArgs, MockArgs, SampleArgs, SourceFormat, SplitArgs, StatsArgs, TileArgs,
};

struct Ctx {
    config: ConfigFile,
    seed: Option<u64>,
    workers: Option<usize>,
    out_dir: PathBuf,
}

impl Ctx {
    /// Resolves `defaults` plus the global seed and worker keys.
    fn params(&self, defaults: &[(&str, String)], mut flags: Vec<(&str, Option<String>)>) -> Params {
        let mut all = vec![("seed", "0".to_owned()), ("workers", "8".to_owned())];
        all.extend(defaults.iter().cloned());
        flags.push(flag("seed", self.seed));
        flags.push(flag("workers", self.workers));
        Params::resolve(&all, &self.config, flags)
    }

    fn outputs(&self) -> Result<Outputs> {
        Outputs::new(&self.out_dir)
    }
}

fn s<T: ToString>(v: T) -> String {
    v.to_string()
}

fn read_manifest_file(path: &Path) -> Result<DatasetManifest> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_manifest(BufReader::new(f)).with_context(|| format!("reading manifest {}", path.display()))
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let ctx = Ctx {
        config,
        seed: cli.seed,
        workers: cli.workers,
        out_dir: cli.out_dir.clone(),
    };
    let mut inputs = Vec::new();
    if let Some(p) = &cli.config {
        inputs.push(p.clone());
    }
    match &cli.command {
        Command::Tile(a) => tile(&ctx, a, inputs),
        Command::Convert(a) => convert(&ctx, a, inputs),
        Command::Sample(a) => sample(&ctx, a, inputs),
        Command::Split(a) => split(&ctx, a, inputs),
        Command::Merge(a) => merge(&ctx, a, inputs),
        Command::Autolabel(a) => autolabel(&ctx, a, inputs),
        Command::Filter(a) => filter(&ctx, a, inputs),
        Command::AssembleBenchmark(a) => assemble(&ctx, a, inputs),
        Command::DvcSample(a) => dvc_sample(&ctx, a, inputs),
        Command::Eval(a) => eval(&ctx, a, inputs),
        Command::CheckMath(a) => check_math(&ctx, a, inputs),
        Command::Stats(a) => stats_cmd(&ctx, a, inputs),
        Command::MockServices(a) => mock_services(&ctx, a),
    }
}

fn tile(ctx: &Ctx, a: &TileArgs, mut inputs: Vec<PathBuf>) -> Result<()> {
    let d = TileSpec::default();
    let p = ctx.params(
        &[
            ("tile.size", s(d.tile_size)),
            ("tile.overlap", s(d.overlap_ratio)),
            ("tile.min_visibility", s(d.min_visibility)),
        ],
        vec![
            flag("tile.size", a.tile_size),
            flag("tile.overlap", a.overlap),
            flag("tile.min_visibility", a.min_visibility),
        ],
    );
    let spec = TileSpec::new(p.get("tile.size")?, p.get("tile.overlap")?, p.get("tile.min_visibility")?)?;
    let m = read_manifest_file(&a.input)?;
    let mut out_m = DatasetManifest::new(m.name.clone());
    out_m.categories = m.categories.clone();
    let mut distinct = 0;
    for img in &m.images {
        let tiles = slice_image(img, &spec);
        distinct += dedup_instances(&tiles);
        out_m.images.extend(tiles.into_iter().map(|t| t.into_image_record(&img.uri)));
    }
    let mut out = ctx.outputs()?;
    out.write(&a.output, &manifest_to_bytes(&out_m)?)?;
    inputs.push(a.input.clone());
    out.commit("tile", &inputs, &p, p.get("seed")?)?;
    println!(
        "{} tiles from {} images, {} tile instances ({} distinct)",
        out_m.images.len(),
        m.images.len(),
        out_m.instance_count(),
        distinct
    );
    Ok(())
}

fn convert(ctx: &Ctx, a: &ConvertArgs, mut inputs: Vec<PathBuf>) -> Result<()> {
    let p = ctx.params(&[], vec![]);
    let f = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let m = match a.from {
        SourceFormat::Coco => {
            let name = a
                .name
                .clone()
                .or_else(|| a.input.file_stem().map(|s| s.to_string_lossy().into_owned()))
                .unwrap_or_else(|| "dataset".into());
            import_coco(BufReader::new(f), &name, a.image_root.as_deref())?
        }
        SourceFormat::Manifest => {
            let mut m = read_manifest(BufReader::new(f))?;
            if let Some(n) = &a.name {
                m.name = n.clone();
            }
            m
        }
    };
    let mut out = ctx.outputs()?;
    out.write(&a.output, &manifest_to_bytes(&m)?)?;
    inputs.push(a.input.clone());
    out.commit("convert", &inputs, &p, p.get("seed")?)?;
    println!("{} images, {} instances, {} categories", m.images.len(), m.instance_count(), m.categories.len());
    Ok(())
}

fn sample(ctx: &Ctx, a: &SampleArgs, mut inputs: Vec<PathBuf>) -> Result<()> {
    let d = SamplePolicy::default();
    let p = ctx.params(
        &[("sample.rate", s(d.rate)), ("sample.threshold", s(d.threshold))],
        vec![flag("sample.rate", a.rate), flag("sample.threshold", a.threshold)],
    );
    let policy = SamplePolicy {
        rate: p.get("sample.rate")?,
        threshold: p.get("sample.threshold")?,
        seed: p.get("seed")?,
    };
    let m = read_manifest_file(&a.input)?;
    let sampled = sample_by_class(&m, &policy)?;
    let mut out = ctx.outputs()?;
    out.write(&a.output, &manifest_to_bytes(&sampled)?)?;
    inputs.push(a.input.clone());
    out.commit("sample", &inputs, &p, policy.seed)?;
    println!("{} -> {} instances", m.instance_count(), sampled.instance_count());
    Ok(())
}

fn split(ctx: &Ctx, a: &SplitArgs, mut inputs: Vec<PathBuf>) -> Result<()> {
    let p = ctx.params(&[("split.cap", s(DEFAULT_DENSE_CAP))], vec![flag("split.cap", a.cap)]);
    let m = read_manifest_file(&a.input)?;
    let split = split_dense_manifest(&m, p.get("split.cap")?)?;
    let mut out = ctx.outputs()?;
    out.write(&a.output, &manifest_to_bytes(&split)?)?;
    inputs.push(a.input.clone());
    out.commit("split", &inputs, &p, p.get("seed")?)?;
    println!("{} -> {} images", m.images.len(), split.images.len());
    Ok(())
}

fn merge(ctx: &Ctx, a: &MergeArgs, mut inputs: Vec<PathBuf>) -> Result<()> {
    let p = ctx.params(&[("merge.dedup", s(false))], vec![flag("merge.dedup", a.dedup.then_some(true))]);
    let ms = a.inputs.iter().map(|i| read_manifest_file(i)).collect::<Result<Vec<_>>>()?;
    let merged = merge_manifests(&ms, p.get("merge.dedup")?)?;
    let mut out = ctx.outputs()?;
    out.write(&a.output, &manifest_to_bytes(&merged)?)?;
    inputs.extend(a.inputs.iter().cloned());
    out.commit("merge", &inputs, &p, p.get("seed")?)?;
    println!("{} images, {} instances", merged.images.len(), merged.instance_count());
    Ok(())
}

fn filter_defaults() -> Vec<(&'static str, String)> {
    let f = FilterPolicy::default();
    vec![
        ("filter.min_likelihood", s(f.min_likelihood)),
        ("filter.monotone_std", s(f.monotone_std_threshold)),
        ("filter.blocklist", String::new()),
    ]
}

fn filter_flags(f: &FilterFlags) -> Vec<(&'static str, Option<String>)> {
    vec![
        flag("filter.min_likelihood", f.min_likelihood),
        flag("filter.monotone_std", f.monotone_std),
        flag("filter.blocklist", f.blocklist.clone()),
    ]
}

fn filter_policy(p: &Params) -> Result<FilterPolicy> {
    let policy = FilterPolicy {
        min_likelihood: p.get("filter.min_likelihood")?,
        monotone_std_threshold: p.get("filter.monotone_std")?,
        category_blocklist: BTreeSet::new(),
    }
    .with_blocklist(p.list("filter.blocklist"))?;
    policy.validate()?;
    Ok(policy)
}

fn runtime(workers: usize) -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread()
        .worker_threads(workers.max(1))
        .enable_all()
        .build()?)
}

fn autolabel(ctx: &Ctx, a: &AutolabelArgs, mut inputs: Vec<PathBuf>) -> Result<()> {
    let pc = ProposalConfig::default();
    let rp = RetryPolicy::default();
    let mut defaults = vec![
        ("proposal.points", s(pc.points_per_image)),
        ("proposal.iou_threshold", s(pc.pred_iou_threshold)),
        ("proposal.stability_threshold", s(pc.stability_threshold)),
        ("proposal.downsample", s(pc.downsample_factor)),
        ("proposal.top_k_large", s(pc.top_k_large)),
        ("proposal.top_k_small", s(pc.top_k_small)),
        ("proposal.small_image_cutoff", s(pc.small_image_cutoff)),
        ("service.proposal_endpoint", String::new()),
        ("service.naming_endpoint", String::new()),
        ("service.max_retries", s(rp.max_retries)),
        ("service.base_delay_ms", s(rp.base_delay_ms)),
        ("service.timeout_ms", s(rp.timeout_ms)),
    ];
    defaults.extend(filter_defaults());
    let mut flags = vec![
        flag("proposal.points", a.points),
        flag("proposal.iou_threshold", a.iou_threshold),
        flag("proposal.stability_threshold", a.stability_threshold),
        flag("proposal.top_k_large", a.top_k_large),
        flag("proposal.top_k_small", a.top_k_small),
        flag("service.proposal_endpoint", a.proposal_endpoint.clone()),
        flag("service.naming_endpoint", a.naming_endpoint.clone()),
        flag("service.max_retries", a.max_retries),
    ];
    flags.extend(filter_flags(&a.filter));
    let p = ctx.params(&defaults, flags);

    let proposal_endpoint = p
        .optional("service.proposal_endpoint")
        .ok_or_else(|| anyhow!("no proposal endpoint: pass --proposal-endpoint or set LAE_SAM_ENDPOINT"))?;
    let naming_endpoint = p
        .optional("service.naming_endpoint")
        .ok_or_else(|| anyhow!("no naming endpoint: pass --naming-endpoint or set LAE_LVLM_ENDPOINT"))?;
    let mut cfg = AutoLabelConfig::new(proposal_endpoint, naming_endpoint);
    cfg.proposal = ProposalConfig {
        points_per_image: p.get("proposal.points")?,
        pred_iou_threshold: p.get("proposal.iou_threshold")?,
        stability_threshold: p.get("proposal.stability_threshold")?,
        downsample_factor: p.get("proposal.downsample")?,
        top_k_large: p.get("proposal.top_k_large")?,
        top_k_small: p.get("proposal.top_k_small")?,
        small_image_cutoff: p.get("proposal.small_image_cutoff")?,
    };
    cfg.filter = filter_policy(&p)?;
    cfg.retry = RetryPolicy {
        max_retries: p.get("service.max_retries")?,
        base_delay_ms: p.get("service.base_delay_ms")?,
        timeout_ms: p.get("service.timeout_ms")?,
        ..rp
    };
    cfg.concurrency = p.get("workers")?;
    cfg.api_key = a.api_key.clone();

    let input = read_manifest_file(&a.input)?;
    let result = runtime(cfg.concurrency)?.block_on(run_autolabel(&input, &cfg))?;

    let mut out = ctx.outputs()?;
    out.write(&a.output, &manifest_to_bytes(&result.manifest)?)?;
    out.write_jsonl("audit.jsonl", &result.audit)?;
    out.write_jsonl("failures.jsonl", &result.failures)?;
    inputs.push(a.input.clone());
    out.commit("autolabel", &inputs, &p, p.get("seed")?)?;
    println!(
        "{} of {} images labelled, {} labels kept from {} named proposals, {} failures",
        result.manifest.images.len(),
        input.images.len(),
        result.manifest.instance_count(),
        result.audit.len(),
        result.failures.len()
    );
    Ok(())
}

#[derive(Serialize)]
struct FilterAudit<'a> {
    det_name: &'a str,
    category: Option<&'a str>,
    likelihood: Option<f64>,
    dropped: Option<DropReason>,
}

fn filter(ctx: &Ctx, a: &FilterArgs, mut inputs: Vec<PathBuf>) -> Result<()> {
    let p = ctx.params(&filter_defaults(), filter_flags(&a.filter));
    let policy = filter_policy(&p)?;
    let proposals = parse_proposals(fs::File::open(&a.proposals).with_context(|| a.proposals.display().to_string())?)?;
    let names = read_lvlm_jsonl(BufReader::new(
        fs::File::open(&a.names).with_context(|| a.names.display().to_string())?,
    ))?;
    if proposals.len() != names.len() {
        return Err(lae_core::Error::LengthMismatch {
            left: proposals.len(),
            right: names.len(),
        })
        .context("proposal rows and naming records must align");
    }
    let stats: HashMap<String, f64> = match &a.crop_stats {
        Some(path) => serde_json::from_slice(&fs::read(path)?)?,
        None => HashMap::new(),
    };
    let pairs: Vec<_> = proposals.into_iter().zip(names).collect();
    let kept = rule_filter(&pairs, &policy, &stats);
    let audit: Vec<FilterAudit> = pairs
        .iter()
        .map(|(pr, r)| FilterAudit {
            det_name: &r.det_name,
            category: r.category.as_deref(),
            likelihood: r.likelihood,
            dropped: judge(pr, r, &policy, &stats),
        })
        .collect();

    let mut out = ctx.outputs()?;
    out.write_json(&a.output, &kept)?;
    out.write_jsonl("filter_audit.jsonl", &audit)?;
    inputs.extend([a.proposals.clone(), a.names.clone()]);
    inputs.extend(a.crop_stats.clone());
    out.commit("filter", &inputs, &p, p.get("seed")?)?;
    println!("kept {} of {} records", kept.len(), pairs.len());
    Ok(())
}

fn assemble(ctx: &Ctx, a: &AssembleArgs, mut inputs: Vec<PathBuf>) -> Result<()> {
    let p = ctx.params(&[], vec![]);
    let selections = read_selections(&fs::read(&a.selections).with_context(|| a.selections.display().to_string())?)?;
    let pools = a.pools.iter().map(|i| read_manifest_file(i)).collect::<Result<Vec<_>>>()?;
    let bench = assemble_benchmark(&a.name, &selections, &pools)?;
    let mut out = ctx.outputs()?;
    out.write(&a.output, &manifest_to_bytes(&bench)?)?;
    inputs.push(a.selections.clone());
    inputs.extend(a.pools.iter().cloned());
    out.commit("assemble-benchmark", &inputs, &p, p.get("seed")?)?;
    println!(
        "{}: {} categories, {} images, {} instances",
        bench.name,
        bench.categories.len(),
        bench.images.len(),
        bench.instance_count()
    );
    Ok(())
}

fn load_registry(path: &Path) -> Result<VocabRegistry> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(VocabRegistry::new(&read_manifest_file(path)?.categories)?);
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let names = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    Ok(VocabRegistry::new(names)?)
}

#[derive(Serialize)]
struct BatchLine<'a> {
    step: u64,
    image_id: Option<&'a str>,
    seed: u64,
    positives: &'a [String],
    negatives: &'a [String],
}

fn dvc_sample(ctx: &Ctx, a: &DvcArgs, mut inputs: Vec<PathBuf>) -> Result<()> {
    let p = ctx.params(
        &[("dvc.n_dv", s(DEFAULT_VOCAB_LEN)), ("dvc.steps", s(1))],
        vec![flag("dvc.n_dv", a.n_dv), flag("dvc.steps", a.steps)],
    );
    let n_dv: usize = p.get("dvc.n_dv")?;
    let run_seed: u64 = p.get("seed")?;
    let registry = load_registry(&a.registry)?;
    inputs.push(a.registry.clone());

    let steps: Vec<(Option<String>, Vec<String>)> = match &a.input {
        Some(path) => {
            inputs.push(path.clone());
            read_manifest_file(path)?
                .images
                .iter()
                .map(|im| {
                    let cats: BTreeSet<String> = im.instances.iter().map(|i| i.category.clone()).collect();
                    (Some(im.image_id.clone()), cats.into_iter().collect())
                })
                .collect()
        }
        None => {
            let positives: Vec<String> = a
                .positives
                .as_deref()
                .unwrap_or("")
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect();
            (0..p.get::<u64>("dvc.steps")?).map(|_| (None, positives.clone())).collect()
        }
    };

    let mut lines = Vec::with_capacity(steps.len());
    for (step, (image_id, positives)) in steps.iter().enumerate() {
        let seed = step_seed(run_seed, step as u64);
        let batch = build_batch(&registry, positives, n_dv, seed)
            .with_context(|| format!("step {step}{}", image_id.as_deref().map(|i| format!(" ({i})")).unwrap_or_default()))?;
        lines.push((step as u64, image_id.as_deref(), seed, batch));
    }
    let rows: Vec<BatchLine> = lines
        .iter()
        .map(|(step, image_id, seed, b)| BatchLine {
            step: *step,
            image_id: *image_id,
            seed: *seed,
            positives: b.positives(),
            negatives: b.negatives(),
        })
        .collect();
    let mut out = ctx.outputs()?;
    out.write_jsonl(&a.output, &rows)?;
    out.commit("dvc-sample", &inputs, &p, run_seed)?;
    println!("{} batches of up to {} categories from a registry of {}", rows.len(), n_dv, registry.len());
    Ok(())
}

fn eval(ctx: &Ctx, a: &EvalArgs, mut inputs: Vec<PathBuf>) -> Result<()> {
    let d = EvalOptions::default();
    let p = ctx.params(
        &[("eval.max_dets", s(d.max_dets)), ("eval.interpolation", "coco101".into())],
        vec![flag("eval.max_dets", a.max_dets), flag("eval.interpolation", a.interpolation.clone())],
    );
    let interpolation = match p.raw("eval.interpolation") {
        "coco101" => Interpolation::Coco101,
        "voc11" => Interpolation::Voc11,
        other => bail!("unknown interpolation {other:?}; expected coco101 or voc11"),
    };
    let opts = EvalOptions {
        interpolation,
        max_dets: p.get("eval.max_dets")?,
    };
    let dets = read_detections_jsonl(BufReader::new(
        fs::File::open(&a.detections).with_context(|| a.detections.display().to_string())?,
    ))?;
    let bench = read_manifest_file(&a.benchmark)?;
    let report = evaluate(&dets, &bench, &opts)?;
    let mut out = ctx.outputs()?;
    out.write_json(&a.output, &report)?;
    inputs.extend([a.detections.clone(), a.benchmark.clone()]);
    out.commit("eval", &inputs, &p, p.get("seed")?)?;
    print!("{}", report.to_table());
    Ok(())
}

fn check_math(ctx: &Ctx, a: &CheckMathArgs, inputs: Vec<PathBuf>) -> Result<()> {
    let p = ctx.params(&[], vec![]);
    let seed = p.get("seed")?;
    let checks = run_math_checks(seed);
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        println!(
            "{}  {:<width$}  error {:.3e}  tolerance {:.0e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.error,
            c.tolerance
        );
    }
    let mut out = ctx.outputs()?;
    out.write_json(&a.output, &checks)?;
    out.commit("check-math", &inputs, &p, seed)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!("{failed} of {} math checks failed", checks.len());
    }
    Ok(())
}

fn stats_cmd(ctx: &Ctx, a: &StatsArgs, mut inputs: Vec<PathBuf>) -> Result<()> {
    let p = ctx.params(&[], vec![]);
    let m = read_manifest_file(&a.input)?;
    let summary = stats(&m);
    let mut out = ctx.outputs()?;
    out.write_json(&a.output, &summary)?;
    inputs.push(a.input.clone());
    out.commit("stats", &inputs, &p, p.get("seed")?)?;
    print!("{}", summary.to_table());
    Ok(())
}

fn mock_services(ctx: &Ctx, a: &MockArgs) -> Result<()> {
    let p = ctx.params(&[], vec![]);
    if !(0.0..=1.0).contains(&a.failure_rate) {
        bail!("failure rate {} outside [0, 1]", a.failure_rate);
    }
    let cfg = MockConfig {
        seed: p.get("seed")?,
        failure_rate: a.failure_rate,
        api_key: a.api_key.clone(),
        ..MockConfig::default()
    };
    runtime(p.get("workers")?)?.block_on(async {
        let server = MockServer::start(cfg, a.bind).await?;
        println!("LAE_SAM_ENDPOINT={}", server.proposal_endpoint());
        println!("LAE_LVLM_ENDPOINT={}", server.naming_endpoint());
        tokio::signal::ctrl_c().await?;
        server.stop().await;
        Ok(())
    })
}
