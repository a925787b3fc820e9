use std::io::BufReader;
use std::path::Path;

use denoise_core::data::{build_graph, kcore_filter, read_catalog, read_interactions, split_dataset, Dataset, Split, SplitRatios, TextCatalog};
use denoise_core::evaluation::{coldstart_report, coldstart_table, evaluate, robustness_sweep, EvalOptions, MetricReport};
use denoise_core::llm::{HttpProvider, LlmGateway, MockProvider, MockRules, ProviderConfig, ResponseCache};
use denoise_core::model::{read_checkpoint, write_checkpoint, Checkpoint};
use denoise_core::preference::{build_preference_knowledge, read_preference_knowledge, write_preference_knowledge, PreferenceKnowledge, ProjectionHead};
use denoise_core::prompts::PromptSet;
use denoise_core::relation::{build_relation_knowledge, read_relation_knowledge, write_relation_knowledge, RelationConfig, RelationContext, RelationKnowledge};
use denoise_core::trainer::{export_denoised_graph, fit, metrics_log, representations, FitOutcome, Knowledge, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::failure::Failure;
use crate::manifest::Workspace;
use crate::{Cli, Command, EvalArgs, ExportArgs, GatewayArgs, IngestArgs, KnowledgeArgs, KnowledgeKind, RobustnessArgs, SplitArg, TrainArgs};

pub const DATASET: &str = "dataset.json";
pub const PREFS: &str = "kp.bin";
pub const RELATIONS: &str = "kr.txt";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_CONFIG: &str = "train_config.txt";
pub const CACHE: &str = "llm-cache.jsonl";

const DEFAULT_SEED: u64 = 2024;

type Outcome = Result<(), Failure>;

pub fn run(cli: Cli) -> Outcome {
    let mut ws = Workspace::open(&cli.workdir)?;
    let seed = cli.seed;
    if !matches!(cli.command, Command::Ingest(_)) {
        ws.verify_all()?;
    }
    match cli.command {
        Command::Ingest(a) => ingest(&mut ws, &a, seed.unwrap_or(DEFAULT_SEED)),
        Command::Knowledge(a) => knowledge(&mut ws, &a, seed.unwrap_or(DEFAULT_SEED)),
        Command::Train(a) => train(&mut ws, &a, seed),
        Command::Eval(a) => eval(&mut ws, &a),
        Command::Robustness(a) => robustness(&mut ws, &a, seed),
        Command::Coldstart(a) => coldstart(&mut ws, &a),
        Command::ExportGraph(a) => export_graph(&mut ws, &a),
    }
}

fn open_reader(path: &Path) -> Result<BufReader<std::fs::File>, Failure> {
    std::fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))
}

fn with_path(path: &Path, e: denoise_core::Error) -> Failure {
    let mut f = Failure::from(e);
    f.message = format!("{}: {}", path.display(), f.message);
    f
}

fn ingest(ws: &mut Workspace, a: &IngestArgs, seed: u64) -> Outcome {
    if a.k == 0 {
        return Err(Failure::usage("--k must be at least 1"));
    }
    let records = read_interactions(open_reader(&a.interactions)?).map_err(|e| with_path(&a.interactions, e))?;
    let catalog = match &a.catalog {
        Some(p) => read_catalog(open_reader(p)?).map_err(|e| with_path(p, e))?,
        None => TextCatalog::default(),
    };
    let min_rating = (!a.no_rating_filter).then_some(a.min_rating);
    let kept = kcore_filter(&records, a.k, min_rating);
    if kept.is_empty() {
        return Err(Failure::data(format!(
            "no interactions survive filtering (k = {}, min_rating = {})",
            a.k,
            min_rating.map_or("none".to_string(), |r| r.to_string())
        )));
    }
    let ds = split_dataset(&kept, SplitRatios::default(), seed, catalog)?;
    ws.write(DATASET, ds.to_json().as_bytes(), "ingest")?;
    ws.record_seed("ingest", seed);
    ws.save()?;
    let name = a.interactions.file_stem().map_or("dataset".into(), |s| s.to_string_lossy().into_owned());
    println!("dataset\tusers\titems\tinteractions\tdensity");
    println!(
        "{name}\t{}\t{}\t{}\t{:.5}",
        ds.num_users(),
        ds.num_items(),
        ds.total_interactions(),
        ds.density()
    );
    Ok(())
}

fn load_dataset(ws: &Workspace) -> Result<Dataset, Failure> {
    let bytes = ws.read(DATASET)?;
    let text = String::from_utf8(bytes).map_err(|_| Failure::data(format!("{DATASET} is not UTF-8")))?;
    Ok(Dataset::from_json(&text)?)
}

fn gateway(ws: &Workspace, g: &GatewayArgs) -> Result<LlmGateway, Failure> {
    let cache = ResponseCache::open(&ws.path(CACHE))?;
    if g.mock {
        let rules = MockRules::default();
        let parallel = g.max_parallel.unwrap_or(4);
        return Ok(LlmGateway::new(Box::new(MockProvider::new(rules)), cache, parallel));
    }
    let mut config = ProviderConfig {
        api_key_env: g.api_key_env.clone(),
        ..ProviderConfig::default()
    };
    if let Some(v) = &g.endpoint {
        config.endpoint = v.clone();
    }
    if let Some(v) = &g.model {
        config.model = v.clone();
    }
    if let Some(v) = &g.embedding_model {
        config.embedding_model = v.clone();
    }
    if let Some(v) = g.embedding_dim {
        config.embedding_dim = v;
    }
    if let Some(v) = g.max_parallel {
        config.max_parallel = v;
    }
    config.validate()?;
    let parallel = config.max_parallel;
    Ok(LlmGateway::new(Box::new(HttpProvider::from_env(config)?), cache, parallel))
}

fn prompts(g: &GatewayArgs) -> Result<PromptSet, Failure> {
    Ok(match &g.prompts {
        Some(dir) => PromptSet::load_dir(dir)?,
        None => PromptSet::default(),
    })
}

fn load_prefs(ws: &Workspace) -> Result<PreferenceKnowledge, Failure> {
    let bytes = ws.read(PREFS)?;
    read_preference_knowledge(&mut bytes.as_slice()).map_err(|e| with_path(&ws.path(PREFS), e))
}

fn load_relations(ws: &Workspace) -> Result<RelationKnowledge, Failure> {
    let bytes = ws.read(RELATIONS)?;
    read_relation_knowledge(&bytes).map_err(|e| with_path(&ws.path(RELATIONS), e))
}

fn knowledge(ws: &mut Workspace, a: &KnowledgeArgs, seed: u64) -> Outcome {
    let ds = load_dataset(ws)?;
    let gw = gateway(ws, &a.gateway)?;
    let prompts = prompts(&a.gateway)?;
    match a.kind {
        KnowledgeKind::Prefs => {
            let head = ProjectionHead::new(gw.embedding_dim(), a.dim, None, &mut ChaCha8Rng::seed_from_u64(seed));
            let kp = build_preference_knowledge(&gw, &ds, &prompts, &head, a.text_budget, a.max_keywords)?;
            let mut bytes = Vec::new();
            write_preference_knowledge(&mut bytes, &kp)?;
            ws.write(PREFS, &bytes, "knowledge prefs")?;
            ws.record_seed("knowledge prefs", seed);
            println!("preference knowledge: {} users, {} items, text dim {}", kp.num_users(), kp.num_items(), kp.text_dim());
        }
        KnowledgeKind::Relations => {
            let kp = load_prefs(ws)?;
            let ctx = RelationContext {
                gateway: &gw,
                prompts: &prompts,
                dataset: &ds,
                knowledge: &kp,
                config: RelationConfig::default(),
            };
            let kr = build_relation_knowledge(&ctx, None)?;
            ws.write(RELATIONS, &write_relation_knowledge(&kr), "knowledge relations")?;
            println!(
                "relation knowledge: {} noise, {} collaborative, {} interest edges",
                kr.noise_edges.len(),
                kr.collab_edges.len(),
                kr.interest_edges.len()
            );
        }
    }
    ws.save()?;
    let stats = gw.stats();
    println!("provider calls {}, cache hits {}", stats.provider_calls, stats.cache_hits);
    Ok(())
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
pub fn resolve_config(a: &TrainArgs, seed: Option<u64>) -> Result<TrainConfig, Failure> {
    let mut c = TrainConfig::default();
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
        c.apply_text(&text).map_err(|e| with_path(path, e))?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        c.set(k, v)?;
    }
    if let Some(v) = a.alpha {
        c.alpha = v;
    }
    if let Some(v) = a.beta {
        c.beta = v;
    }
    if let Some(v) = a.lr {
        c.lr = v;
    }
    if let Some(v) = a.epochs {
        c.max_epochs = v;
    }
    if let Some(v) = &a.backbone {
        c.set("backbone", v)?;
    }
    c.ablation.no_mi_min |= a.no_mi_min;
    c.ablation.no_mi_max |= a.no_mi_max;
    c.ablation.no_pk |= a.no_pk;
    c.ablation.no_rk |= a.no_rk;
    if let Some(s) = seed {
        c.seed = s;
    }
    c.validate()?;
    Ok(c)
}

struct Loaded {
    prefs: Option<PreferenceKnowledge>,
    relations: Option<RelationKnowledge>,
}

fn load_knowledge(ws: &Workspace, c: &TrainConfig) -> Result<Loaded, Failure> {
    let hint = |f: Failure, flag: &str| Failure::data(format!("{} (pass {flag} to train without it)", f.message));
    let prefs = if c.ablation.uses_prf() || ws.exists(PREFS) {
        match load_prefs(ws) {
            Ok(kp) => Some(kp),
            Err(f) if c.ablation.uses_prf() => return Err(hint(f, "--no-pk")),
            Err(_) => None,
        }
    } else {
        None
    };
    let relations = if c.ablation.uses_rel() {
        Some(load_relations(ws).map_err(|f| hint(f, "--no-rk"))?)
    } else {
        None
    };
    Ok(Loaded { prefs, relations })
}

fn test_report(ds: &Dataset, ck: &Checkpoint, c: &TrainConfig, split: Split, ns: &[usize]) -> Result<MetricReport, Failure> {
    let graph = build_graph(ds, &[], None)?;
    let h = representations(&ck.model, &graph, c, ck.epoch);
    let opts = EvalOptions {
        ns: ns.to_vec(),
        seed: c.seed,
        config_hash: c.hash(),
        ..EvalOptions::default()
    };
    Ok(evaluate(h.view(), ds, split, &opts)?)
}

fn checkpoint_bytes(ck: &Checkpoint) -> Result<Vec<u8>, Failure> {
    let mut bytes = Vec::new();
    write_checkpoint(&mut bytes, ck)?;
    Ok(bytes)
}

fn train(ws: &mut Workspace, a: &TrainArgs, seed: Option<u64>) -> Outcome {
    let c = resolve_config(a, seed)?;
    let ds = load_dataset(ws)?;
    let loaded = load_knowledge(ws, &c)?;
    let k = Knowledge {
        preference: loaded.prefs.as_ref(),
        relations: loaded.relations.as_ref(),
    };
    let out: FitOutcome = fit(&ds, k, &c)?;
    let report = test_report(&ds, &out.best, &c, Split::Test, &denoise_core::evaluation::DEFAULT_NS)?;
    ws.write(TRAIN_CONFIG, c.to_text().as_bytes(), "train")?;
    ws.write(CHECKPOINT, &checkpoint_bytes(&out.best)?, "train")?;
    ws.write("metrics.tsv", metrics_log(&out.steps).as_bytes(), "train")?;
    ws.write("epochs.tsv", out.epoch_log().as_bytes(), "train")?;
    ws.write("report.tsv", report.to_table().as_bytes(), "train")?;
    ws.manifest.config_hash = Some(c.hash());
    ws.record_seed("train", c.seed);
    ws.save()?;
    println!(
        "best epoch {} of {} (validation Recall@{} {:.4})",
        out.best.epoch,
        out.epochs.len(),
        c.monitor_n,
        out.best.best_recall
    );
    print!("{}", report.to_table());
    Ok(())
}

/// Checkpoint plus the config it was trained under.
fn load_trained(ws: &Workspace, checkpoint: Option<&Path>) -> Result<(Checkpoint, TrainConfig), Failure> {
    let name = checkpoint.map_or(CHECKPOINT.to_string(), |p| p.to_string_lossy().into_owned());
    let bytes = ws.read(&name)?;
    let ck = read_checkpoint(&mut bytes.as_slice()).map_err(|e| with_path(&ws.path(&name), e))?;
    let text = String::from_utf8(ws.read(TRAIN_CONFIG)?).map_err(|_| Failure::data(format!("{TRAIN_CONFIG} is not UTF-8")))?;
    let c = TrainConfig::from_text(&text).map_err(|e| Failure::data(format!("{TRAIN_CONFIG}: {e}")))?;
    if c.hash() != ck.config_hash {
        return Err(Failure::data(format!(
            "{name} was trained under config {} but {TRAIN_CONFIG} hashes to {}",
            ck.config_hash,
            c.hash()
        )));
    }
    Ok((ck, c))
}

fn eval(ws: &mut Workspace, a: &EvalArgs) -> Outcome {
    let ds = load_dataset(ws)?;
    let (ck, c) = load_trained(ws, a.checkpoint.as_deref())?;
    let split = match a.split {
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    };
    let report = test_report(&ds, &ck, &c, split, &a.ns)?;
    let name = match a.split {
        SplitArg::Val => "report_val.tsv",
        SplitArg::Test => "report.tsv",
    };
    ws.write(name, report.to_table().as_bytes(), "eval")?;
    ws.save()?;
    print!("{}", report.to_table());
    Ok(())
}

fn coldstart(ws: &mut Workspace, a: &EvalArgs) -> Outcome {
    let ds = load_dataset(ws)?;
    let (ck, c) = load_trained(ws, a.checkpoint.as_deref())?;
    let graph = build_graph(&ds, &[], None)?;
    let h = representations(&ck.model, &graph, &c, ck.epoch);
    let opts = EvalOptions {
        ns: a.ns.clone(),
        seed: c.seed,
        config_hash: c.hash(),
        ..EvalOptions::default()
    };
    let table = coldstart_table(&coldstart_report(h.view(), &ds, &opts)?);
    ws.write("coldstart.tsv", table.as_bytes(), "coldstart")?;
    ws.save()?;
    print!("{table}");
    Ok(())
}

fn export_graph(ws: &mut Workspace, a: &ExportArgs) -> Outcome {
    let ds = load_dataset(ws)?;
    let (ck, c) = load_trained(ws, a.checkpoint.as_deref())?;
    let text = export_denoised_graph(&ck, &ds, &c)?;
    let path = ws.write("graph.tsv", text.as_bytes(), "export-graph")?;
    ws.save()?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Relation knowledge restricted to what stays valid on a noisier copy of
/// the training split: interest edges that became training edges are dropped.
pub fn relations_for(kr: &RelationKnowledge, ds: &Dataset) -> RelationKnowledge {
    let mut out = kr.clone();
    out.interest_edges.retain(|&(u, i)| !ds.is_train_positive(u, i));
    out
}

fn robustness(ws: &mut Workspace, a: &RobustnessArgs, seed: Option<u64>) -> Outcome {
    if a.ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
        return Err(Failure::usage("noise ratios must lie in [0, 1]"));
    }
    let c = resolve_config(&a.train, seed)?;
    let ds = load_dataset(ws)?;
    let loaded = load_knowledge(ws, &c)?;
    let table = robustness_sweep(&ds, &a.ratios, a.n, c.seed, |noisy| {
        let kr = loaded.relations.as_ref().map(|kr| relations_for(kr, noisy));
        let k = Knowledge {
            preference: loaded.prefs.as_ref(),
            relations: kr.as_ref(),
        };
        let out = fit(noisy, k, &c)?;
        test_report(noisy, &out.best, &c, Split::Test, &[a.n]).map_err(|f| denoise_core::Error::Validation(f.message))
    })?;
    let text = format!("{}\n{}", table.to_table(), table.drop_series());
    ws.write("robustness.tsv", text.as_bytes(), "robustness")?;
    ws.record_seed("robustness", c.seed);
    ws.save()?;
    print!("{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_overrides_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "alpha = 0.5\nbeta = 0.2\nlr = 0.01\nseed = 3\n").unwrap();
        let a = TrainArgs {
            config: Some(path),
            overrides: vec!["beta=0.3".into(), "lr = 0.02".into()],
            lr: Some(0.05),
            no_pk: true,
            ..TrainArgs::default()
        };
        let c = resolve_config(&a, Some(9)).unwrap();
        assert_eq!((c.alpha, c.beta, c.lr, c.seed), (0.5, 0.3, 0.05, 9));
        assert!(c.ablation.no_pk && !c.ablation.no_rk);
        assert_eq!(c.dim, TrainConfig::default().dim);
        let c = resolve_config(&TrainArgs { config: a.config.clone(), ..TrainArgs::default() }, None).unwrap();
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn bad_overrides_are_usage_errors() {
        let a = TrainArgs {
            overrides: vec!["alpha".into()],
            ..TrainArgs::default()
        };
        assert_eq!(resolve_config(&a, None).unwrap_err().code, 2);
        let a = TrainArgs {
            lr: Some(-1.0),
            ..TrainArgs::default()
        };
        assert_eq!(resolve_config(&a, None).unwrap_err().code, 2);
    }
}
