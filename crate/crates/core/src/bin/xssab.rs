use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use xssab::argument::{cosine_score, DecisionThreshold};
use xssab::bench::{
    build_benchmark, read_pairs, write_benchmark, BenchmarkManifest, Dataset, DirStore, ImageStore,
    PairLabel, MANIFEST_FILE,
};
use xssab::cache::{default_cache_dir, EmbeddingCache};
use xssab::config::{ConfigLayer, RunConfig, ThresholdSource};
use xssab::dpr::{auc, dpr_curve, load_dpr_pairs, DprPair, Explainer, OcclusionConfig};
use xssab::imageio::read_png;
use xssab::latency::{measure, Approach, LatencyReport, PUBLISHED_SECONDS};
use xssab::metrics::{compute_eer_threshold, fmr_fnmr, ScoreSet};
use xssab::model::{ModelAdapter, ReferenceModel};
use xssab::plot::plot_dpr_curves;
use xssab::render::render_heatmap;
use xssab::saliency::{explain_pair, read_map, write_map, ImageRef};
use xssab::synthetic::{format_pairs, synthetic_faces, synthetic_pairs, SyntheticSpec};
use xssab::tensor::preprocess;
use xssab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "xssab",
    version,
    about = "Explainable face verification by similarity-score argument backpropagation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML file with defaults for any of the flags below.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Reference model kind: tiny-cnn or linear-toy.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Weight file to load instead of seeded initialization.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Pairs file: `<reference> <probe> <genuine|imposter>` per line.
    #[arg(long, global = true)]
    pairs: Option<PathBuf>,
    /// Directory that image ids are resolved against.
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,
    /// Benchmark directory produced by `bench`.
    #[arg(long, global = true)]
    bench: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// DPR budget step.
    #[arg(long, global = true)]
    step: Option<f64>,
    /// Decision threshold; when absent it is the EER threshold of the pairs.
    #[arg(long, global = true, allow_negative_numbers = true)]
    threshold: Option<f64>,
    /// xssab, random, occlusion or oracle (repeatable).
    #[arg(long = "explainer", global = true)]
    explainers: Vec<String>,
    /// green-pink or colorblind-safe.
    #[arg(long, global = true)]
    palette: Option<String>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Also write the argument decomposition.
    #[arg(long, global = true)]
    dump_arguments: bool,
    /// Input side length for seeded reference models.
    #[arg(long, global = true)]
    image_size: Option<usize>,
    /// Embedding size for seeded reference models.
    #[arg(long, global = true)]
    embedding_dim: Option<usize>,
    /// Number of pairs timed by `latency`.
    #[arg(long, global = true)]
    pair_count: Option<usize>,
}

impl CommonArgs {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            model: self.model.clone(),
            weights: self.weights.clone(),
            data_root: self.data_root.clone(),
            pairs: self.pairs.clone(),
            bench: self.bench.clone(),
            seed: self.seed,
            out: self.out.clone(),
            step: self.step,
            threshold: self.threshold,
            palette: self.palette.clone(),
            workers: self.workers,
            explainers: (!self.explainers.is_empty()).then(|| self.explainers.clone()),
            dump_arguments: self.dump_arguments.then_some(true),
            image_size: self.image_size,
            embedding_dim: self.embedding_dim,
            pair_count: self.pair_count,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Explanation maps for one image pair.
    Explain { image_a: PathBuf, image_b: PathBuf },
    /// Build a patched benchmark from a pairs file.
    Bench,
    /// DPR curves for one or more explainers over a benchmark.
    Dpr,
    /// EER threshold and score summary for a pairs file.
    Eer,
    /// Per-pair map-creation time and pass counts.
    Latency {
        /// xssab or occlusion (repeatable).
        #[arg(long = "approach", default_values_t = ["xssab".to_string(), "occlusion".to_string()])]
        approaches: Vec<String>,
    },
    /// Render a saved map as a heatmap PNG.
    Render {
        map: PathBuf,
        /// Face image to overlay.
        #[arg(long)]
        face: Option<PathBuf>,
    },
    /// Write the weights of a seeded reference model.
    Init { path: PathBuf },
    /// Write a seeded toy dataset and pairs file for trying the tools.
    Synth {
        #[arg(long, default_value_t = 12)]
        identities: usize,
        #[arg(long, default_value_t = 4)]
        images: usize,
        #[arg(long, default_value_t = 20)]
        genuine: usize,
        #[arg(long, default_value_t = 20)]
        imposter: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("xssab: error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.common.config {
        Some(p) => ConfigLayer::read(p)?,
        None => ConfigLayer::default(),
    };
    let cfg = RunConfig::resolve(cli.common.layer().over(file))?;
    if let Some(n) = cfg.workers {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Explain { image_a, image_b } => cmd_explain(&cfg, &image_a, &image_b),
        Command::Bench => cmd_bench(&cfg),
        Command::Dpr => cmd_dpr(&cfg),
        Command::Eer => cmd_eer(&cfg),
        Command::Latency { approaches } => cmd_latency(&cfg, &approaches),
        Command::Render { map, face } => cmd_render(&cfg, &map, face.as_deref()),
        Command::Init { path } => cmd_init(&cfg, &path),
        Command::Synth {
            identities,
            images,
            genuine,
            imposter,
        } => cmd_synth(&cfg, identities, images, genuine, imposter),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json") + "\n"
}

/// Genuine and imposter scores for a pairs file, using the embedding cache.
fn score_pairs(cfg: &RunConfig, model: &ReferenceModel) -> Result<ScoreSet> {
    let root = cfg.require_data_root()?;
    let pairs = read_pairs(cfg.require_pairs()?)?;
    let store = DirStore::new(root);
    let mut cache = EmbeddingCache::open(&default_cache_dir(), &model.model_id())?;
    let mut scores = ScoreSet::default();
    for p in &pairs {
        let a = cache.embed(model, &p.reference, &store.load(&p.reference)?)?;
        let b = cache.embed(model, &p.probe, &store.load(&p.probe)?)?;
        let s = cosine_score(&a, &b)?;
        match p.label {
            PairLabel::Genuine => scores.genuine.push(s),
            PairLabel::Imposter => scores.imposter.push(s),
        }
    }
    log::info!(
        "embedding cache {}: {} hits, {} computed",
        cache.path().display(),
        cache.hits(),
        cache.misses()
    );
    cache.save()?;
    scores.validate()?;
    Ok(scores)
}

fn resolve_threshold(cfg: &RunConfig, model: &ReferenceModel) -> Result<DecisionThreshold> {
    match cfg.threshold_source() {
        ThresholdSource::Explicit(t) => DecisionThreshold::new(t, "explicit"),
        ThresholdSource::EerFromPairs => {
            if cfg.pairs.is_none() || cfg.data_root.is_none() {
                return Err(Error::Contract(
                    "no threshold: pass --threshold, or --pairs and --data-root to use the EER threshold".into(),
                ));
            }
            let eer = compute_eer_threshold(&score_pairs(cfg, model)?)?;
            DecisionThreshold::new(eer.threshold, "eer")
        }
    }
}

fn cmd_explain(cfg: &RunConfig, path_a: &Path, path_b: &Path) -> Result<()> {
    let model = cfg.build_model()?;
    let raw_a = read_png(path_a)?;
    let raw_b = read_png(path_b)?;
    let th = resolve_threshold(cfg, &model)?;
    let (a, b) = (preprocess(&raw_a), preprocess(&raw_b));
    let id_a = path_a.display().to_string();
    let id_b = path_b.display().to_string();
    let ex = explain_pair(
        &model,
        ImageRef::new(&id_a, &a),
        ImageRef::new(&id_b, &b),
        &th,
    )?;

    let out = &cfg.out;
    cfg.echo_into(out)?;
    write_map(&ex.map_i, &out.join("map_a.xsm"))?;
    write_map(&ex.map_j, &out.join("map_b.xsm"))?;
    render_heatmap(
        &ex.map_i,
        &out.join("heatmap_a.png"),
        cfg.palette(),
        Some(&raw_a),
    )?;
    render_heatmap(
        &ex.map_j,
        &out.join("heatmap_b.png"),
        cfg.palette(),
        Some(&raw_b),
    )?;
    if cfg.dump_arguments {
        write_text(&out.join("arguments.json"), &ex.decomposition.to_json())?;
    }
    let d = &ex.decomposition;
    println!(
        "score {:.6} threshold {:.6} ({}) decision {} positive {} negative {} -> {}",
        d.score,
        th.value(),
        th.provenance(),
        if d.score >= th.value() {
            "match"
        } else {
            "non-match"
        },
        d.positive.len(),
        d.negative.len(),
        out.display()
    );
    Ok(())
}

fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    let root = cfg.require_data_root()?;
    let pairs = read_pairs(cfg.require_pairs()?)?;
    let dataset = Dataset::scan_dir(root)?;
    let store = DirStore::new(root);
    let mut bench = build_benchmark(&dataset, &store, &pairs, cfg.seed)?;
    bench.manifest.data_root = Some(root.display().to_string());
    write_benchmark(&bench, &cfg.out)?;
    cfg.echo_into(&cfg.out)?;
    let m = &bench.manifest;
    println!(
        "bench: {} records ({} genuine, {} imposter), {} skipped -> {}",
        m.records.len(),
        m.genuine_count(),
        m.imposter_count(),
        m.skipped.len(),
        cfg.out.display()
    );
    Ok(())
}

fn parse_explainer(name: &str, seed: u64) -> Result<Explainer> {
    match name {
        "xssab" => Ok(Explainer::Xssab),
        "random" => Ok(Explainer::Random { seed }),
        "occlusion" => Ok(Explainer::Occlusion(OcclusionConfig::default())),
        "oracle" => Ok(Explainer::Oracle),
        other => Err(Error::Domain(format!("unknown explainer `{other}`"))),
    }
}

fn dpr_threshold(
    cfg: &RunConfig,
    model: &ReferenceModel,
    pairs: &[DprPair],
) -> Result<(DecisionThreshold, ScoreSet, ScoreSet)> {
    let mut cache = EmbeddingCache::open(&default_cache_dir(), &model.model_id())?;
    let mut original = ScoreSet::default();
    let mut patched = ScoreSet::default();
    for p in pairs {
        let probe = cache.embed(model, &p.probe_id, &p.probe)?;
        let o = cosine_score(&cache.embed(model, &p.reference_id, &p.original)?, &probe)?;
        let q = cosine_score(&model.embed(&preprocess(&p.patched))?, &probe)?;
        let (os, ps) = match p.label {
            PairLabel::Genuine => (&mut original.genuine, &mut patched.genuine),
            PairLabel::Imposter => (&mut original.imposter, &mut patched.imposter),
        };
        os.push(o);
        ps.push(q);
    }
    log::info!(
        "embedding cache: {} hits, {} computed",
        cache.hits(),
        cache.misses()
    );
    cache.save()?;
    let th = match cfg.threshold_source() {
        ThresholdSource::Explicit(t) => DecisionThreshold::new(t, "explicit")?,
        ThresholdSource::EerFromPairs => {
            DecisionThreshold::new(compute_eer_threshold(&original)?.threshold, "eer")?
        }
    };
    Ok((th, original, patched))
}

fn cmd_dpr(cfg: &RunConfig) -> Result<()> {
    let bench_dir = cfg
        .bench
        .as_deref()
        .ok_or_else(|| Error::Contract("dpr needs --bench".into()))?;
    let manifest = BenchmarkManifest::read(&bench_dir.join(MANIFEST_FILE))?;
    let root = match (&cfg.data_root, &manifest.data_root) {
        (Some(r), _) => r.clone(),
        (None, Some(r)) => PathBuf::from(r),
        (None, None) => {
            return Err(Error::Contract(
                "dpr needs --data-root (the manifest records none)".into(),
            ))
        }
    };
    let explainers: Vec<Explainer> = cfg
        .explainers
        .iter()
        .map(|n| parse_explainer(n, cfg.seed))
        .collect::<Result<_>>()?;
    let model = cfg.build_model()?;
    let pairs = load_dpr_pairs(&manifest, bench_dir, &DirStore::new(&root))?;
    if let Some(p) = pairs.first() {
        model.check_input(&preprocess(&p.patched))?;
    }
    let (th, original, patched) = dpr_threshold(cfg, &model, &pairs)?;
    let (o_fmr, o_fnmr) = fmr_fnmr(&original, th.value())?;
    let (p_fmr, p_fnmr) = fmr_fnmr(&patched, th.value())?;
    println!("threshold {:.6} ({})", th.value(), th.provenance());
    println!("unpatched FMR {o_fmr:.4} FNMR {o_fnmr:.4}; patched FMR {p_fmr:.4} FNMR {p_fnmr:.4}");

    cfg.echo_into(&cfg.out)?;
    let mut curves = Vec::new();
    let mut summary = Vec::new();
    println!("explainer\tauc_fmr\tauc_fnmr");
    for ex in &explainers {
        let (curve, _) = dpr_curve(&model, &pairs, &th, ex, cfg.step)?;
        let (a_fmr, a_fnmr) = auc(&curve)?;
        println!("{}\t{a_fmr:.6}\t{a_fnmr:.6}", curve.explainer);
        write_text(
            &cfg.out.join(format!("dpr_{}.tsv", curve.explainer)),
            &curve.to_table(),
        )?;
        summary.push(json!({"explainer": curve.explainer, "auc_fmr": a_fmr, "auc_fnmr": a_fnmr}));
        curves.push(curve);
    }
    plot_dpr_curves(&curves, &cfg.out.join("dpr.svg"))?;
    let report = json!({
        "threshold": th.value(),
        "threshold_source": th.provenance(),
        "pairs": pairs.len(),
        "unpatched": {"fmr": o_fmr, "fnmr": o_fnmr},
        "patched": {"fmr": p_fmr, "fnmr": p_fnmr},
        "explainers": summary,
    });
    write_text(&cfg.out.join("dpr_summary.json"), &pretty(&report))
}

fn histogram(scores: &[f64], bins: usize) -> Vec<usize> {
    let mut h = vec![0; bins];
    for &s in scores {
        let k = (((s + 1.0) / 2.0) * bins as f64)
            .floor()
            .clamp(0.0, bins as f64 - 1.0) as usize;
        h[k] += 1;
    }
    h
}

fn stats(scores: &[f64]) -> serde_json::Value {
    let n = scores.len() as f64;
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    json!({"count": scores.len(), "min": min, "mean": scores.iter().sum::<f64>() / n, "max": max, "histogram": histogram(scores, 10)})
}

fn cmd_eer(cfg: &RunConfig) -> Result<()> {
    let model = cfg.build_model()?;
    let scores = score_pairs(cfg, &model)?;
    let eer = compute_eer_threshold(&scores)?;
    println!(
        "th_eer {:.6} EER {:.4} (FMR {:.4}, FNMR {:.4}) genuine {} imposter {}",
        eer.threshold,
        eer.eer,
        eer.fmr,
        eer.fnmr,
        scores.genuine.len(),
        scores.imposter.len()
    );
    for (label, s) in [("genuine", &scores.genuine), ("imposter", &scores.imposter)] {
        let st = stats(s);
        println!(
            "{label}: n {} min {:.4} mean {:.4} max {:.4} histogram[-1,1] {}",
            st["count"],
            st["min"].as_f64().unwrap(),
            st["mean"].as_f64().unwrap(),
            st["max"].as_f64().unwrap(),
            st["histogram"]
        );
    }
    cfg.echo_into(&cfg.out)?;
    let report = json!({
        "threshold": eer.threshold,
        "eer": eer.eer,
        "fmr": eer.fmr,
        "fnmr": eer.fnmr,
        "genuine": stats(&scores.genuine),
        "imposter": stats(&scores.imposter),
    });
    write_text(&cfg.out.join("eer.json"), &pretty(&report))
}

fn cmd_latency(cfg: &RunConfig, approach_names: &[String]) -> Result<()> {
    let approaches: Vec<Approach> = approach_names
        .iter()
        .map(|a| Approach::parse(a))
        .collect::<Result<_>>()?;
    let model = cfg.build_model()?;
    let pairs = read_pairs(cfg.require_pairs()?)?;
    if pairs.len() < cfg.pair_count {
        return Err(Error::Data(format!(
            "latency wants {} pairs but the pairs file has {}",
            cfg.pair_count,
            pairs.len()
        )));
    }
    let th = resolve_threshold(cfg, &model)?;
    let store = DirStore::new(cfg.require_data_root()?);
    let load_start = std::time::Instant::now();
    let images = pairs[..cfg.pair_count]
        .iter()
        .map(|p| {
            Ok((
                preprocess(&store.load(&p.reference)?),
                preprocess(&store.load(&p.probe)?),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    log::debug!(
        "image loading (not part of map creation): {:.3}s for {} pairs",
        load_start.elapsed().as_secs_f64(),
        images.len()
    );

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Contract(format!("cannot build a single-thread pool: {e}")))?;
    let mut report = LatencyReport::default();
    for a in &approaches {
        report
            .entries
            .push(pool.install(|| measure(&model, &images, a, &th))?);
    }
    print!("{}", report.to_table());
    let published: Vec<String> = PUBLISHED_SECONDS
        .iter()
        .map(|(n, s)| format!("{n} {s}s"))
        .collect();
    println!(
        "published per-pair means (ResNet-100, GPU), for context only: {}",
        published.join(", ")
    );
    cfg.echo_into(&cfg.out)?;
    write_text(&cfg.out.join("latency.tsv"), &report.to_table())?;
    write_text(
        &cfg.out.join("latency.json"),
        &(serde_json::to_string_pretty(&report).expect("json") + "\n"),
    )
}

fn cmd_render(cfg: &RunConfig, map_path: &Path, face: Option<&Path>) -> Result<()> {
    let map = read_map(map_path)?;
    let face = face.map(read_png).transpose()?;
    let stem = map_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("map");
    let path = cfg.out.join(format!("{stem}.png"));
    render_heatmap(&map, &path, cfg.palette(), face.as_ref())?;
    cfg.echo_into(&cfg.out)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_init(cfg: &RunConfig, path: &Path) -> Result<()> {
    let model = cfg.build_model()?;
    model.save(path)?;
    println!("{} -> {}", model.model_id(), path.display());
    Ok(())
}

fn cmd_synth(
    cfg: &RunConfig,
    identities: usize,
    images: usize,
    genuine: usize,
    imposter: usize,
) -> Result<()> {
    let spec = SyntheticSpec {
        identities,
        images_per_identity: images,
        height: cfg.image_size,
        width: cfg.image_size,
        seed: cfg.seed,
        ..SyntheticSpec::default()
    };
    let faces = synthetic_faces(&spec);
    let data = cfg.out.join("data");
    faces.write(&data)?;
    let pairs = synthetic_pairs(&faces.dataset, genuine, imposter, cfg.seed);
    write_text(&cfg.out.join("pairs.txt"), &format_pairs(&pairs))?;
    cfg.echo_into(&cfg.out)?;
    println!(
        "synth: {} images of {} identities, {} pairs -> {}",
        faces.images.len(),
        identities,
        pairs.len(),
        cfg.out.display()
    );
    Ok(())
}
