//! One function per subcommand.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use semdec::baselines::{parse_strategy_list, Ranker, StrategyKind, StrategySpec};
use semdec::config::{parse_config_text, validate_config, UsdConfig};
use semdec::eval::{format_table, rank_all, EvalReport};
use semdec::io::{read_jsonl, read_requests, to_jsonl, DecodeRecord};
use semdec::model::{CandidateItem, DecodeRequest, ItemId};
use semdec::synth::{self, Catalog, CatalogItem, SynthSpec};
use semdec::token_model::Codebook;
use semdec::{decode_traced, SimilarityMatrix};

use crate::error::{CliError, CliResult};
use crate::output::{read_file, OutputDir, RunManifest};
use crate::{
    display, parse_ks, CompareArgs, DecodeArgs, EvalArgs, InputArgs, StrategyArgs, SweepArgs, SynthArgs, SEED_ENV,
};

fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

/// Loads the config, defaulting every missing key. A seed in the file wins
/// over the environment variable, which wins over the built-in default.
fn load_config(path: Option<&Path>, manifest: &mut RunManifest) -> CliResult<UsdConfig> {
    let raw = match path {
        Some(p) => {
            let bytes = read_file(p)?;
            manifest.record_input(p, &bytes);
            let text = String::from_utf8(bytes).map_err(|_| CliError::Data(format!("{}: not UTF-8", display(p))))?;
            parse_config_text(&text).map_err(|e| CliError::Data(format!("{}: {e}", display(p))))?
        }
        None => Default::default(),
    };
    let mut cfg = validate_config(&raw).map_err(|e| CliError::Data(e.to_string()))?;
    if !raw.contains_key("seed") {
        if let Some(seed) = env_seed()? {
            cfg.seed = seed;
        }
    }
    manifest.seed = cfg.seed;
    manifest.config = serde_json::to_value(&cfg)?;
    Ok(cfg)
}

fn load_requests(path: &Path, manifest: &mut RunManifest) -> CliResult<Vec<DecodeRequest>> {
    let bytes = read_file(path)?;
    manifest.record_input(path, &bytes);
    let reqs = read_requests(&bytes[..]).map_err(|e| CliError::Data(format!("{}: {e}", display(path))))?;
    log::info!("read {} request(s) from {}", reqs.len(), display(path));
    Ok(reqs)
}

fn load_catalog(path: &Path, manifest: &mut RunManifest) -> CliResult<Catalog> {
    let bytes = read_file(path)?;
    manifest.record_input(path, &bytes);
    let items: Vec<CatalogItem> =
        read_jsonl(&bytes[..]).map_err(|e| CliError::Data(format!("{}: {e}", display(path))))?;
    let n_groups = items.iter().map(|i| i.group + 1).max().unwrap_or(0);
    Ok(Catalog { items, n_groups })
}

fn load_codebook(io: &InputArgs, manifest: &mut RunManifest) -> CliResult<Option<Codebook>> {
    match &io.catalog {
        Some(p) => {
            let cat = load_catalog(p, manifest)?;
            Ok(Some(
                cat.codebook()
                    .map_err(|e| CliError::Data(format!("{}: {e}", display(p))))?,
            ))
        }
        None => Ok(None),
    }
}

fn strategy_spec(kind: StrategyKind, knobs: &StrategyArgs) -> StrategySpec {
    StrategySpec {
        kind,
        width_or_n: if kind == StrategyKind::Beam {
            knobs.beam_width
        } else {
            knobs.n
        },
        top_p: knobs.top_p,
    }
}

fn ranker<'a>(spec: StrategySpec, cfg: &UsdConfig, book: Option<&'a Codebook>) -> CliResult<Ranker<'a>> {
    if spec.kind == StrategyKind::Beam && book.is_none() {
        return Err(CliError::Usage("strategy beam needs --catalog".into()));
    }
    Ranker::new(spec, cfg.clone(), book).map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_kind(name: &str) -> CliResult<StrategyKind> {
    name.parse().map_err(|e: semdec::Error| CliError::Usage(e.to_string()))
}

/// Runs `f` on every request in parallel and returns results in input
/// order. The first failing request (by position) decides the error.
fn par_map<T: Send, F>(reqs: &[DecodeRequest], f: F) -> CliResult<Vec<T>>
where
    F: Fn(&DecodeRequest) -> CliResult<T> + Sync + Send,
{
    let results: Vec<CliResult<T>> = reqs.par_iter().map(f).collect();
    results.into_iter().collect()
}

#[derive(Serialize)]
struct SimilarityDump {
    request_id: String,
    ids: Vec<ItemId>,
    matrix: Vec<Vec<f64>>,
}

fn similarity_dump(req: &DecodeRequest) -> CliResult<SimilarityDump> {
    let mut items: Vec<CandidateItem> = req.candidates.clone();
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let m = SimilarityMatrix::compute(&items).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(SimilarityDump {
        request_id: req.request_id.clone(),
        ids: m.ids().to_vec(),
        matrix: m.rows(),
    })
}

fn warn_dropped(ranker: &Ranker<'_>) {
    if ranker.dropped() > 0 {
        log::warn!("beam: dropped {} sequence(s) with no catalog item", ranker.dropped());
    }
}

pub fn decode(a: &DecodeArgs, args: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new("decode", args, serde_json::Value::Null, 0);
    let cfg = load_config(a.io.config.as_deref(), &mut manifest)?;
    let kind = parse_kind(&a.strategy)?;
    let book = load_codebook(&a.io, &mut manifest)?;
    let ranker = ranker(strategy_spec(kind, &a.knobs), &cfg, book.as_ref())?;
    let reqs = load_requests(&a.io.input, &mut manifest)?;

    let records = par_map(&reqs, |r| {
        Ok(if kind == StrategyKind::Usd {
            DecodeRecord::from(decode_traced(r, &cfg)?)
        } else {
            DecodeRecord::from_baseline(ranker.rank(r)?)
        })
    })?;
    warn_dropped(&ranker);

    let mut out = OutputDir::create(&a.io.output)?;
    out.write("rankings.jsonl", to_jsonl(&records)?.as_bytes())?;
    if a.dump_similarity {
        let dumps = par_map(&reqs, similarity_dump)?;
        out.write("similarity.jsonl", to_jsonl(&dumps)?.as_bytes())?;
    }
    log::info!("decoded {} request(s)", records.len());
    out.finish(manifest)
}

fn report_for(reqs: &[DecodeRequest], ranker: &Ranker<'_>, ks: &[usize]) -> CliResult<EvalReport> {
    let pairs = rank_all(reqs, ranker)?;
    warn_dropped(ranker);
    Ok(EvalReport::from_rankings(ranker.spec, &pairs, ks)?)
}

pub fn eval(a: &EvalArgs, args: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new("eval", args, serde_json::Value::Null, 0);
    let ks = parse_ks(&a.k)?;
    let cfg = load_config(a.io.config.as_deref(), &mut manifest)?;
    let kind = parse_kind(&a.strategy)?;
    let book = load_codebook(&a.io, &mut manifest)?;
    let ranker = ranker(strategy_spec(kind, &a.knobs), &cfg, book.as_ref())?;
    let reqs = load_requests(&a.io.input, &mut manifest)?;

    let report = report_for(&reqs, &ranker, &ks)?;
    let table = format_table(&[(kind.name().to_owned(), &report)]);
    print!("{table}");

    let mut out = OutputDir::create(&a.io.output)?;
    out.write_json("report.json", &report)?;
    out.write("report.txt", table.as_bytes())?;
    out.finish(manifest)
}

#[derive(Serialize)]
struct NamedReport<'a> {
    name: &'a str,
    report: &'a EvalReport,
}

pub fn compare(a: &CompareArgs, args: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new("compare", args, serde_json::Value::Null, 0);
    let ks = parse_ks(&a.k)?;
    let (kinds, dups) = parse_strategy_list(&a.strategies).map_err(|e| CliError::Usage(e.to_string()))?;
    for d in dups {
        log::warn!("strategy {d} listed more than once; running it once");
    }
    let cfg = load_config(a.io.config.as_deref(), &mut manifest)?;
    let book = load_codebook(&a.io, &mut manifest)?;
    let rankers = kinds
        .iter()
        .map(|k| ranker(strategy_spec(*k, &a.knobs), &cfg, book.as_ref()))
        .collect::<CliResult<Vec<_>>>()?;
    let reqs = load_requests(&a.io.input, &mut manifest)?;

    let reports = rankers
        .iter()
        .map(|r| report_for(&reqs, r, &ks))
        .collect::<CliResult<Vec<_>>>()?;
    let rows: Vec<(String, &EvalReport)> = kinds.iter().map(|k| k.name().to_owned()).zip(&reports).collect();
    let table = format_table(&rows);
    print!("{table}");

    let mut out = OutputDir::create(&a.io.output)?;
    for (k, r) in kinds.iter().zip(&reports) {
        out.write_json(&format!("{}.json", k.name()), r)?;
    }
    let combined: Vec<NamedReport<'_>> = kinds
        .iter()
        .zip(&reports)
        .map(|(k, r)| NamedReport {
            name: k.name(),
            report: r,
        })
        .collect();
    out.write_json("compare.json", &combined)?;
    out.write("compare.txt", table.as_bytes())?;
    out.finish(manifest)
}

/// Parses and validates every sweep value before any evaluation runs.
pub fn sweep_configs(base: &UsdConfig, param: &str, values: &str) -> CliResult<Vec<(String, UsdConfig)>> {
    let mut out = Vec::new();
    for raw in values.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let v: f64 = raw
            .parse()
            .map_err(|_| CliError::Usage(format!("--values: {raw:?} is not a number")))?;
        let cfg = base.with_param(param, v).map_err(|e| CliError::Data(e.to_string()))?;
        out.push((raw.to_owned(), cfg));
    }
    if out.is_empty() {
        return Err(CliError::Usage("--values needs at least one value".into()));
    }
    Ok(out)
}

pub fn sweep(a: &SweepArgs, args: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new("sweep", args, serde_json::Value::Null, 0);
    let ks = parse_ks(&a.k)?;
    let base = load_config(a.io.config.as_deref(), &mut manifest)?;
    let param = a.param.name();
    let configs = sweep_configs(&base, param, &a.values)?;
    let reqs = load_requests(&a.io.input, &mut manifest)?;

    let spec = StrategySpec::new(StrategyKind::Usd);
    let mut reports = Vec::with_capacity(configs.len());
    for (_, cfg) in &configs {
        reports.push(report_for(&reqs, &ranker(spec, cfg, None)?, &ks)?);
    }

    let mut csv = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["param".to_owned(), "value".to_owned()];
    header.extend(EvalReport::header(ks.iter().copied()));
    let csv_err = |e: csv::Error| CliError::Internal(format!("csv: {e}"));
    csv.write_record(&header).map_err(csv_err)?;
    for ((raw, _), report) in configs.iter().zip(&reports) {
        let mut row = vec![param.to_owned(), raw.clone()];
        row.extend(report.row().iter().map(|v| v.to_string()));
        csv.write_record(&row).map_err(csv_err)?;
    }
    let csv_bytes = csv.into_inner().map_err(|e| CliError::Internal(format!("csv: {e}")))?;

    let rows: Vec<(String, &EvalReport)> = configs
        .iter()
        .map(|(raw, _)| format!("{param}={raw}"))
        .zip(&reports)
        .collect();
    print!("{}", format_table(&rows));

    let mut out = OutputDir::create(&a.io.output)?;
    for (i, ((raw, _), r)) in configs.iter().zip(&reports).enumerate() {
        out.write_json(&format!("report_{i:02}_{param}_{raw}.json"), r)?;
    }
    out.write("sweep.csv", &csv_bytes)?;
    out.finish(manifest)
}

/// Spec from file and flags; flags win. The seed falls back to the
/// environment variable when neither sets it.
pub fn synth_spec(a: &SynthArgs, manifest: &mut RunManifest) -> CliResult<SynthSpec> {
    let (mut spec, file_has_seed) = match &a.spec {
        Some(p) => {
            let bytes = read_file(p)?;
            manifest.record_input(p, &bytes);
            let value: serde_json::Value =
                serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", display(p))))?;
            let has_seed = value.get("seed").is_some();
            let spec: SynthSpec =
                serde_json::from_value(value).map_err(|e| CliError::Data(format!("{}: {e}", display(p))))?;
            (spec, has_seed)
        }
        None => (SynthSpec::default(), false),
    };
    macro_rules! apply {
        ($($field:ident),*) => { $( if let Some(v) = a.$field { spec.$field = v; } )* };
    }
    apply!(
        n_users,
        n_items,
        n_groups,
        intra_group_sim_target,
        inter_group_sim_cap,
        logit_dim,
        markov_concentration,
        seq_len,
        n_candidates
    );
    if let Some(r) = &a.regime {
        spec.regime = r.parse()?;
    }
    match a.seed {
        Some(s) => spec.seed = s,
        None if !file_has_seed => {
            if let Some(s) = env_seed()? {
                spec.seed = s;
            }
        }
        None => {}
    }
    spec.validate()?;
    Ok(spec)
}

pub fn synth(a: &SynthArgs, args: Vec<String>) -> CliResult<()> {
    let mut manifest = RunManifest::new("synth", args, serde_json::Value::Null, 0);
    let spec = synth_spec(a, &mut manifest)?;
    manifest.seed = spec.seed;
    manifest.config = serde_json::to_value(&spec)?;

    let corpus = synth::generate(&spec)?;
    let mut out = OutputDir::create(&a.out)?;
    out.write("catalog.jsonl", to_jsonl(&corpus.catalog.items)?.as_bytes())?;
    out.write("interactions.jsonl", to_jsonl(&corpus.users)?.as_bytes())?;
    out.write("candidates.jsonl", to_jsonl(&corpus.requests)?.as_bytes())?;
    log::info!(
        "wrote {} items, {} users, {} requests",
        corpus.catalog.items.len(),
        corpus.users.len(),
        corpus.requests.len()
    );
    out.finish(manifest)
}
