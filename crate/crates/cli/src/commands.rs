use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use nbra::diagnostics::{
    alpha_sweep, distance_correlation, indices_with_noun, interference_report, k_sweep,
    mapper_structure_report, SweepContext,
};
use nbra::mappers::{
    distance_reduction, fit_ridge, global_steering_vector, map_steering_vector, steering_vector,
    MergeStrategy, RidgeMapper, SteeringVector,
};
use nbra::metrics::{
    build_heuristic_relevance, build_heuristic_similarity, evaluate, item_tuples, query_tuples,
    read_relevance, EvalInputs, EvalSpec, GradeKind, MetricsReport, PositivesPredicate,
};
use nbra::ot::{cost_bundle, fgw_solve, uniform, FwConfig, SinkhornConfig};
use nbra::retrieval::{
    build_per_object_set, read_results, rerank_fgw, rerank_hungarian, run_merged, run_pipeline,
    write_results, HungarianTiebreak, PhraseLookup, PipelineConfig, RankedList, Shortlist, Stage1,
    Stage2, Steering, DEFAULT_K,
};
use nbra::shapes::{
    all_primitives, emit_svg, enumerate_compositions, heuristic_relevance, item_id, query_id,
    sample_split, substitution_matrix, Composition, Shape, SynthEmbedConfig, SynthEmbedder,
};
use nbra::store::{
    load_corpus, normalize_rows, read_manifest, write_atomic, write_embeddings, write_manifest,
    EmbeddingMatrix,
};
use nbra::{Corpus, Error, ItemRecord, Modality};

use crate::args::*;
use crate::config::{echo_path_for, Echo};
use crate::error::{CliError, CliResult};

/// What a finished subcommand reports on stdout.
pub type Summary = serde_json::Map<String, Value>;

pub struct Run {
    pub strict: bool,
}

fn need<T: Clone>(v: &Option<T>, flag: &str) -> CliResult<T> {
    v.clone()
        .ok_or_else(|| CliError::usage(format!("missing required --{flag}")))
}

fn sibling(p: &Path) -> PathBuf {
    p.with_extension("nbra")
}

fn distinct(output: &Path, inputs: &[&Path]) -> CliResult<()> {
    if inputs.contains(&output) {
        return Err(CliError::usage(format!(
            "output {} would overwrite an input",
            output.display()
        )));
    }
    Ok(())
}

fn read_items(path: &Path, echo: &mut Echo) -> CliResult<Vec<ItemRecord>> {
    echo.input(path);
    read_manifest(path).map_err(CliError::data)
}

fn read_corpus(
    manifest: &Path,
    embeddings: Option<&PathBuf>,
    modality: Modality,
    echo: &mut Echo,
) -> CliResult<Corpus> {
    let emb = embeddings.cloned().unwrap_or_else(|| sibling(manifest));
    echo.input(manifest);
    echo.input(&emb);
    load_corpus(manifest, &emb, modality).map_err(CliError::data)
}

fn read_lists(path: &Path, echo: &mut Echo) -> CliResult<Vec<RankedList>> {
    echo.input(path);
    read_results(path).map_err(CliError::data)
}

fn read_mapper(path: &Path, echo: &mut Echo) -> CliResult<RidgeMapper> {
    echo.input_with_sidecar(path);
    RidgeMapper::load(path).map_err(CliError::data)
}

fn read_steering(path: &Path, echo: &mut Echo) -> CliResult<SteeringVector> {
    echo.input_with_sidecar(path);
    SteeringVector::load(path).map_err(CliError::data)
}

fn read_phrases(p: &PhraseArgs, echo: &mut Echo) -> CliResult<PhraseLookup> {
    let manifest = need(&p.phrases_manifest, "phrases-manifest")?;
    let corpus = read_corpus(&manifest, p.phrases_embeddings.as_ref(), Modality::Text, echo)?;
    Ok(corpus
        .items()
        .iter()
        .enumerate()
        .map(|(i, it)| (it.id.clone(), corpus.embeddings().row_f64(i)))
        .collect())
}

fn compositions(items: &[ItemRecord]) -> CliResult<HashMap<String, Composition>> {
    items
        .iter()
        .map(|it| {
            Composition::parse(&it.caption)
                .map(|c| (it.id.clone(), c))
                .map_err(|e| CliError::data(format!("item {}: {e}", it.id)))
        })
        .collect()
}

fn fill_solver(s: &mut SolverArgs) -> FwConfig {
    let d = FwConfig::default();
    FwConfig {
        beta: *s.beta.get_or_insert(d.beta),
        sinkhorn: SinkhornConfig {
            epsilon: *s.epsilon.get_or_insert(d.sinkhorn.epsilon),
            max_iters: *s.sinkhorn_iters.get_or_insert(d.sinkhorn.max_iters),
            tol: *s.sinkhorn_tol.get_or_insert(d.sinkhorn.tol),
        },
        max_iters: *s.fw_iters.get_or_insert(d.max_iters),
        rel_tol: *s.fw_tol.get_or_insert(d.rel_tol),
    }
}

fn tiebreak(t: TiebreakArg) -> HungarianTiebreak {
    match t {
        TiebreakArg::TopOnly => HungarianTiebreak::TopOnly,
        TiebreakArg::Cosine => HungarianTiebreak::Cosine,
    }
}

fn stage2(s: Stage2Arg) -> Stage2 {
    match s {
        Stage2Arg::None => Stage2::None,
        Stage2Arg::Hungarian => Stage2::Hungarian,
        Stage2Arg::Fgw => Stage2::Fgw,
    }
}

fn infer_stage1(explicit: Option<Stage1Arg>, mapper: bool, steering: bool) -> Stage1Arg {
    explicit.unwrap_or(match (mapper, steering) {
        (_, true) => Stage1Arg::RidgePlusSteer,
        (true, false) => Stage1Arg::RidgeMapped,
        _ => Stage1Arg::Raw,
    })
}

fn stage1(s: Stage1Arg) -> Stage1 {
    match s {
        Stage1Arg::Raw => Stage1::Raw,
        Stage1Arg::RidgeMapped => Stage1::RidgeMapped,
        Stage1Arg::RidgePlusSteer => Stage1::RidgePlusSteer,
    }
}

fn summary(pairs: Value) -> Summary {
    match pairs {
        Value::Object(m) => m,
        _ => unreachable!("summaries are objects"),
    }
}

fn count_warnings(lists: &[RankedList]) -> usize {
    lists
        .iter()
        .flat_map(|l| &l.entries)
        .filter(|e| !e.warnings.is_empty())
        .count()
}

pub fn gen_shapes(run: &Run, args: &GenShapesArgs) -> CliResult<Summary> {
    let mut a = args.clone();
    let arity = *a.arity.get_or_insert(3);
    let seed = *a.seed.get_or_insert(0);
    let out_dir = need(&a.out_dir, "out-dir")?;
    if arity == 0 {
        return Err(CliError::usage("arity must be at least 1"));
    }
    if a.relevance && a.queries.is_none() {
        return Err(CliError::usage("--relevance needs --queries"));
    }
    let (items, queries) = match (a.items, a.queries) {
        (None, None) => (
            enumerate_compositions(arity)?.into_iter().enumerate().collect(),
            Vec::new(),
        ),
        (n, q) => {
            let total = match n {
                Some(n) => n,
                None => enumerate_compositions(arity)?.len(),
            };
            sample_split(seed, arity, total, q.unwrap_or(0))?
        }
    };
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::data(format!("creating {}: {e}", out_dir.display())))?;

    let mut outputs = Vec::new();
    let records: Vec<ItemRecord> = items.iter().map(|(i, c)| c.to_record(item_id(*i))).collect();
    let items_path = out_dir.join("items.jsonl");
    write_manifest(&records, &items_path)?;
    outputs.push(items_path);

    if !queries.is_empty() {
        let qrecords: Vec<ItemRecord> =
            queries.iter().map(|(i, c)| c.to_record(query_id(*i))).collect();
        let path = out_dir.join("queries.jsonl");
        write_manifest(&qrecords, &path)?;
        outputs.push(path);
    }
    if a.svg {
        let dir = out_dir.join("svg");
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::data(format!("creating {}: {e}", dir.display())))?;
        items.par_iter().try_for_each(|(i, c)| {
            write_atomic(&dir.join(format!("{}.svg", item_id(*i))), emit_svg(c).as_bytes())
        })?;
        outputs.push(dir);
    }
    if a.relevance {
        let mut table = nbra::metrics::RelevanceTable::new(GradeKind::Graded);
        for (qi, q) in &queries {
            for (ii, it) in &items {
                table.insert(&query_id(*qi), &item_id(*ii), f64::from(heuristic_relevance(q, it)))?;
            }
        }
        let path = out_dir.join("relevance.jsonl");
        nbra::metrics::write_relevance(&table, &path)?;
        outputs.push(path);
    }
    Echo::default().write(&out_dir.join("gen-shapes.config.json"), "gen-shapes", run.strict, &a)?;
    Ok(summary(json!({
        "items": items.len(),
        "queries": queries.len(),
        "outputs": outputs,
    })))
}

pub fn synth_embed(run: &Run, args: &SynthEmbedArgs) -> CliResult<Summary> {
    let mut a = args.clone();
    let manifest = need(&a.manifest, "manifest")?;
    let modality = need(&a.modality, "modality")?;
    let out = a.out.get_or_insert_with(|| sibling(&manifest)).clone();
    let d = SynthEmbedConfig::default();
    let cfg = SynthEmbedConfig {
        seed: *a.seed.get_or_insert(d.seed),
        dim: *a.dim.get_or_insert(d.dim),
        noise_sigma: *a.noise_sigma.get_or_insert(d.noise_sigma),
        modality_rotation: a.modality_rotation,
    };
    distinct(&out, &[&manifest])?;
    let mut echo = Echo::default();
    let items = read_items(&manifest, &mut echo)?;
    let comps = compositions(&items)?;
    let model = SynthEmbedder::new(cfg)?;
    let rows: Vec<Vec<f64>> = items
        .par_iter()
        .map(|it| {
            let c = &comps[&it.id];
            match modality {
                ModalityArg::Image => model.embed_image(c),
                ModalityArg::Text => model.embed_text(c),
            }
        })
        .collect();
    write_embeddings(&EmbeddingMatrix::from_rows_f64(&rows, cfg.dim, true)?, &out)?;
    let mut outputs = vec![out.clone()];

    if let Some(phrases) = &a.phrases_out {
        distinct(phrases, &[&manifest, &out])?;
        let prims = all_primitives();
        let records: Vec<ItemRecord> = prims
            .iter()
            .map(|p| ItemRecord {
                id: p.label(),
                caption: p.label(),
                objects: vec![p.annotation()],
                split: None,
            })
            .collect();
        let rows: Vec<Vec<f64>> = prims.iter().map(|p| model.embed_phrase(*p)).collect();
        write_manifest(&records, phrases)?;
        write_embeddings(
            &EmbeddingMatrix::from_rows_f64(&rows, cfg.dim, true)?,
            sibling(phrases),
        )?;
        outputs.push(phrases.clone());
        outputs.push(sibling(phrases));
    }
    echo.write(&echo_path_for(&out), "synth-embed", run.strict, &a)?;
    Ok(summary(json!({
        "count": items.len(),
        "dim": cfg.dim,
        "outputs": outputs,
    })))
}

pub fn import(run: &Run, args: &ImportArgs) -> CliResult<Summary> {
    let mut a = args.clone();
    let manifest = need(&a.manifest, "manifest")?;
    let embeddings = a.embeddings.get_or_insert_with(|| sibling(&manifest)).clone();
    let modality = need(&a.modality, "modality")?;
    let out = need(&a.out, "out")?;
    let out_emb = sibling(&out);
    distinct(&out, &[&manifest, &embeddings])?;
    distinct(&out_emb, &[&manifest, &embeddings])?;
    let mut echo = Echo::default();
    let corpus = read_corpus(&manifest, Some(&embeddings), modality.into(), &mut echo)?;
    let matrix = if a.normalize {
        normalize_rows(corpus.embeddings()).map_err(CliError::data)?
    } else {
        corpus.embeddings().clone()
    };
    write_manifest(corpus.items(), &out)?;
    write_embeddings(&matrix, &out_emb)?;
    echo.write(&echo_path_for(&out), "import", run.strict, &a)?;
    Ok(summary(json!({
        "count": matrix.count(),
        "dim": matrix.dim(),
        "unit_norm": matrix.is_unit_norm(),
        "outputs": [out, out_emb],
    })))
}

/// Source items that found a partner, with both embedding rows.
struct Paired {
    items: Vec<ItemRecord>,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

fn read_paired(p: &mut PairedArgs, echo: &mut Echo) -> CliResult<Paired> {
    let by = *p.pair_by.get_or_insert(PairBy::Id);
    let sm = need(&p.source_manifest, "source-manifest")?;
    let tm = need(&p.target_manifest, "target-manifest")?;
    let source = read_corpus(&sm, p.source_embeddings.as_ref(), Modality::Text, echo)?;
    let target = read_corpus(&tm, p.target_embeddings.as_ref(), Modality::Image, echo)?;
    let key = |it: &ItemRecord| match by {
        PairBy::Id => it.id.clone(),
        PairBy::Caption => it.caption.clone(),
    };
    let mut rows: HashMap<String, usize> = HashMap::new();
    for (i, it) in target.items().iter().enumerate() {
        rows.entry(key(it)).or_insert(i);
    }
    let mut out = Paired {
        items: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
    };
    for (i, it) in source.items().iter().enumerate() {
        if let Some(&j) = rows.get(&key(it)) {
            out.items.push(it.clone());
            out.x.push(source.embeddings().row_f64(i));
            out.y.push(target.embeddings().row_f64(j));
        }
    }
    if out.items.is_empty() {
        return Err(CliError::data("no source item has a partner in the target set"));
    }
    Ok(out)
}

pub fn fit_mapper(run: &Run, args: &FitMapperArgs) -> CliResult<Summary> {
    let mut a = args.clone();
    let lambda = *a.lambda.get_or_insert(1e-2);
    let out = need(&a.out, "out")?;
    let mut echo = Echo::default();
    let pairs = read_paired(&mut a.paired, &mut echo)?;
    let mapper = fit_ridge(&pairs.x, &pairs.y, lambda)?;
    let reduction = match distance_reduction(&pairs.x, &pairs.y, &mapper) {
        Ok(r) => Some(r),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e.into()),
    };
    mapper.save(&out)?;
    echo.write(&echo_path_for(&out), "fit-mapper", run.strict, &a)?;
    Ok(summary(json!({
        "pairs": pairs.items.len(),
        "distance_reduction": reduction,
        "outputs": [out.clone(), PathBuf::from(format!("{}.json", out.display()))],
    })))
}

pub fn steer(run: &Run, args: &SteerArgs) -> CliResult<Summary> {
    let a = args.clone();
    let out = need(&a.out, "out")?;
    if a.source.is_empty() || a.source.len() != a.target.len() {
        return Err(CliError::usage(
            "give one or more --source phrases with the same number of --target phrases",
        ));
    }
    let mut echo = Echo::default();
    let lookup = read_phrases(&a.phrases, &mut echo)?;
    let vec_of = |p: &str| {
        lookup
            .get(p)
            .ok_or_else(|| CliError::data(format!("phrase {p:?} not in the phrase set")))
    };
    let mut locals = Vec::with_capacity(a.source.len());
    for (s, t) in a.source.iter().zip(&a.target) {
        locals.push(steering_vector(vec_of(s)?, vec_of(t)?)?.labelled(
            s.clone(),
            t.clone(),
            a.noun_scope.clone(),
        ));
    }
    let mut v = if locals.len() == 1 {
        locals.pop().expect("one vector")
    } else {
        global_steering_vector(&locals)?.labelled(
            a.source.join("+"),
            a.target.join("+"),
            a.noun_scope.clone(),
        )
    };
    if let Some(path) = &a.mapper {
        let m = read_mapper(path, &mut echo)?;
        let labels = (v.source_label.clone(), v.target_label.clone(), v.noun_scope.clone());
        v = map_steering_vector(&m, &v)?.labelled(labels.0, labels.1, labels.2);
    }
    v.save(&out)?;
    echo.write(&echo_path_for(&out), "steer", run.strict, &a)?;
    Ok(summary(json!({
        "dim": v.dim(),
        "pairs": a.source.len(),
        "outputs": [out.clone(), PathBuf::from(format!("{}.json", out.display()))],
    })))
}

pub fn retrieve(run: &Run, args: &RetrieveArgs) -> CliResult<Summary> {
    let mut a = args.clone();
    let k = *a.k.get_or_insert(DEFAULT_K);
    let out = need(&a.out, "out")?;
    let mut echo = Echo::default();
    let lists = if let Some(merge) = a.merge {
        if a.mapper.is_some() || a.steering.is_some() || a.stage1.is_some_and(|s| s != Stage1Arg::Raw)
        {
            return Err(CliError::usage("--merge works on raw phrase vectors only"));
        }
        let strategy = match merge {
            MergeArg::Average => MergeStrategy::Average,
            MergeArg::Min => MergeStrategy::Min,
            MergeArg::Softmin => MergeStrategy::Softmin {
                tau: *a.tau.get_or_insert(1.0),
            },
        };
        let qm = need(&a.data.queries_manifest, "queries-manifest")?;
        let cm = need(&a.data.corpus_manifest, "corpus-manifest")?;
        let queries = read_items(&qm, &mut echo)?;
        let corpus = read_corpus(&cm, a.data.corpus_embeddings.as_ref(), Modality::Image, &mut echo)?;
        let lookup = read_phrases(&a.phrases, &mut echo)?;
        run_merged(&queries, &corpus, &lookup, k, strategy)?
    } else {
        let s1 = infer_stage1(a.stage1, a.mapper.is_some(), a.steering.is_some());
        a.stage1 = Some(s1);
        let qm = need(&a.data.queries_manifest, "queries-manifest")?;
        let cm = need(&a.data.corpus_manifest, "corpus-manifest")?;
        let queries = read_corpus(&qm, a.data.queries_embeddings.as_ref(), Modality::Text, &mut echo)?;
        let corpus = read_corpus(&cm, a.data.corpus_embeddings.as_ref(), Modality::Image, &mut echo)?;
        let mapper = a.mapper.as_ref().map(|p| read_mapper(p, &mut echo)).transpose()?;
        let steering = match &a.steering {
            Some(p) => Some(Steering {
                vector: read_steering(p, &mut echo)?,
                alpha: *a.alpha.get_or_insert(1.0),
            }),
            None => None,
        };
        let cfg = PipelineConfig {
            stage1: stage1(s1),
            steering,
            stage2: Stage2::None,
            k,
            ..PipelineConfig::default()
        };
        run_pipeline(&queries, &corpus, &cfg, mapper.as_ref(), None)?
    };
    write_results(&lists, &out)?;
    echo.write(&echo_path_for(&out), "retrieve", run.strict, &a)?;
    Ok(summary(json!({
        "queries": lists.len(),
        "k": k,
        "outputs": [out],
    })))
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

pub fn rerank(run: &Run, args: &RerankArgs) -> CliResult<Summary> {
    let mut a = args.clone();
    let s2 = *a.stage2.get_or_insert(Stage2Arg::Fgw);
    let k = *a.k.get_or_insert(DEFAULT_K);
    let tb = tiebreak(*a.hungarian_tiebreak.get_or_insert(TiebreakArg::TopOnly));
    let fw = fill_solver(&mut a.solver);
    let out = need(&a.out, "out")?;
    let results = need(&a.results, "results")?;
    distinct(&out, &[&results])?;
    if k == 0 {
        return Err(CliError::usage("k must be positive"));
    }
    if s2 == Stage2Arg::None {
        return Err(CliError::usage("rerank needs --stage2 hungarian or fgw"));
    }
    if a.dump_plans.is_some() && s2 != Stage2Arg::Fgw {
        return Err(CliError::usage("--dump-plans is only available with --stage2 fgw"));
    }
    if s2 == Stage2Arg::Fgw {
        fw.validate()?;
    }
    let mut echo = Echo::default();
    let lists = read_lists(&results, &mut echo)?;
    let queries = read_items(&need(&a.queries_manifest, "queries-manifest")?, &mut echo)?;
    let items = read_items(&need(&a.corpus_manifest, "corpus-manifest")?, &mut echo)?;
    let lookup = read_phrases(&a.phrases, &mut echo)?;
    let qmap: HashMap<&str, &ItemRecord> = queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let imap: HashMap<&str, &ItemRecord> = items.iter().map(|i| (i.id.as_str(), i)).collect();

    let reranked = lists
        .par_iter()
        .map(|list| -> CliResult<RankedList> {
            let q = qmap
                .get(list.query_id.as_str())
                .ok_or_else(|| CliError::data(format!("query {} not in manifest", list.query_id)))?;
            let shortlist = Shortlist::from_list(list, k);
            let qset = build_per_object_set(q, &lookup)?;
            let mut sets = HashMap::with_capacity(shortlist.entries.len());
            for e in &shortlist.entries {
                let it = imap
                    .get(e.item_id.as_str())
                    .ok_or_else(|| CliError::data(format!("item {} not in manifest", e.item_id)))?;
                sets.insert(e.item_id.clone(), build_per_object_set(it, &lookup)?);
            }
            let out = match s2 {
                Stage2Arg::Hungarian => rerank_hungarian(&shortlist, &qset, &sets, tb)?,
                _ => rerank_fgw(&shortlist, &qset, &sets, &fw)?,
            };
            if let (Some(dir), Some(top)) = (&a.dump_plans, out.entries.first()) {
                let b = cost_bundle(&qset.vectors, &sets[&top.item_id].vectors)?;
                let sol = fgw_solve(&b, &uniform(b.m()), &uniform(b.n()), &fw)?;
                std::fs::create_dir_all(dir)
                    .map_err(|e| CliError::data(format!("creating {}: {e}", dir.display())))?;
                write_atomic(
                    &dir.join(format!("{}.txt", safe_name(&list.query_id))),
                    sol.plan.to_text().as_bytes(),
                )?;
            }
            Ok(out)
        })
        .collect::<CliResult<Vec<_>>>()?;

    let warned = count_warnings(&reranked);
    if warned > 0 {
        if run.strict {
            return Err(CliError::solver(format!(
                "{warned} candidate solves did not converge"
            )));
        }
        eprintln!("warning: {warned} candidate solves did not converge; see result warnings");
    }
    write_results(&reranked, &out)?;
    echo.write(&echo_path_for(&out), "rerank", run.strict, &a)?;
    let mut outputs = vec![out];
    if let Some(d) = &a.dump_plans {
        outputs.push(d.clone());
    }
    Ok(summary(json!({
        "queries": reranked.len(),
        "k": k,
        "nonconverged": warned,
        "outputs": outputs,
    })))
}

fn metrics_summary(r: &MetricsReport) -> Value {
    json!({
        "recall": r.recall,
        "ndcg": r.ndcg,
        "cas": r.cas,
        "cas_noun": r.cas_noun,
    })
}

pub fn eval(run: &Run, args: &EvalArgs) -> CliResult<Summary> {
    let mut a = args.clone();
    let positives_kind = *a.positives.get_or_insert(PositivesArg::ExactCaption);
    if a.ks.is_empty() {
        a.ks = EvalSpec::default().ks;
    }
    let spec = EvalSpec {
        ks: a.ks.clone(),
        cas_k: *a.cas_k.get_or_insert(EvalSpec::default().cas_k),
    };
    let out = need(&a.out, "out")?;
    let results = need(&a.results, "results")?;
    distinct(&out, &[&results])?;
    if a.heuristic && (a.relevance.is_some() || a.similarity.is_some()) {
        return Err(CliError::usage(
            "--heuristic cannot be combined with --relevance or --similarity",
        ));
    }
    let mut echo = Echo::default();
    let lists = read_lists(&results, &mut echo)?;
    let queries = read_items(&need(&a.queries_manifest, "queries-manifest")?, &mut echo)?;
    let items = read_items(&need(&a.corpus_manifest, "corpus-manifest")?, &mut echo)?;

    let needs_shapes = a.heuristic || positives_kind == PositivesArg::Symbolic;
    let (qc, ic) = if needs_shapes {
        (compositions(&queries)?, compositions(&items)?)
    } else {
        (HashMap::new(), HashMap::new())
    };
    let positives = match positives_kind {
        PositivesArg::ExactCaption => Some(PositivesPredicate::exact_caption(&queries, &items)),
        PositivesArg::Symbolic => Some(PositivesPredicate::SymbolicMatch {
            queries: qc.clone(),
            items: ic.clone(),
        }),
        PositivesArg::None => None,
    };
    let (graded, continuous) = if a.heuristic {
        (
            Some(build_heuristic_relevance(&lists, &qc, &ic)?),
            Some(build_heuristic_similarity(&lists, &qc, &ic)?),
        )
    } else {
        let mut load = |p: &Option<PathBuf>, kind| -> CliResult<_> {
            p.as_ref()
                .map(|p| {
                    echo.input(p);
                    read_relevance(p, kind).map_err(CliError::data)
                })
                .transpose()
        };
        (
            load(&a.relevance, GradeKind::Graded)?,
            load(&a.similarity, GradeKind::Continuous)?,
        )
    };
    let with_objects = queries.iter().any(|q| !q.objects.is_empty());
    let qt = query_tuples(&queries);
    let it = item_tuples(&items);
    let inputs = EvalInputs {
        positives: positives.as_ref(),
        graded: graded.as_ref(),
        continuous: continuous.as_ref(),
        query_objects: with_objects.then_some(&qt),
        item_tuples: with_objects.then_some(&it),
    };
    let report = evaluate(&lists, &inputs, &spec)?;
    write_atomic(&out, report.to_json().as_bytes())?;
    echo.write(&echo_path_for(&out), "eval", run.strict, &a)?;
    let mut s = summary(metrics_summary(&report));
    s.insert("outputs".into(), json!([out]));
    Ok(s)
}

pub fn diagnose_mapper(run: &Run, args: &DiagnoseMapperArgs) -> CliResult<Summary> {
    let mut a = args.clone();
    let fw = fill_solver(&mut a.solver);
    let out = need(&a.out, "out")?;
    let mut echo = Echo::default();
    let pairs = read_paired(&mut a.paired, &mut echo)?;
    let mapper = read_mapper(&need(&a.mapper, "mapper")?, &mut echo)?;
    let report = mapper_structure_report(&pairs.x, &pairs.y, &mapper, &fw)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_atomic(&out, text.as_bytes())?;
    echo.write(&echo_path_for(&out), "diagnose mapper", run.strict, &a)?;
    let mut s = summary(serde_json::to_value(&report).expect("report serializes"));
    s.insert("outputs".into(), json!([out]));
    Ok(s)
}

pub fn diagnose_correlation(run: &Run, args: &DiagnoseCorrelationArgs) -> CliResult<Summary> {
    let mut a = args.clone();
    let out = need(&a.out, "out")?;
    let mut echo = Echo::default();
    let pairs = read_paired(&mut a.paired, &mut echo)?;
    let subset = a.noun.as_ref().map(|n| indices_with_noun(&pairs.items, n));
    let r = distance_correlation(&pairs.x, &pairs.y, subset.as_deref())?;
    let points = subset.as_ref().map_or(pairs.items.len(), Vec::len);
    let doc = json!({ "correlation": r, "points": points, "noun": a.noun });
    write_atomic(&out, format!("{}\n", serde_json::to_string_pretty(&doc).unwrap()).as_bytes())?;
    echo.write(&echo_path_for(&out), "diagnose correlation", run.strict, &a)?;
    Ok(summary(json!({ "correlation": r, "points": points, "outputs": [out] })))
}

pub fn diagnose_interference(run: &Run, args: &DiagnoseInterferenceArgs) -> CliResult<Summary> {
    let mut a = args.clone();
    let k = *a.k.get_or_insert(10);
    let noun_kind = a.noun_kind.get_or_insert_with(|| "noun".into()).clone();
    let out = need(&a.out, "out")?;
    let tsv = out.with_extension("tsv");
    let mut echo = Echo::default();
    let queries = read_items(&need(&a.queries_manifest, "queries-manifest")?, &mut echo)?;
    let cm = need(&a.corpus_manifest, "corpus-manifest")?;
    let corpus = read_corpus(&cm, a.corpus_embeddings.as_ref(), Modality::Image, &mut echo)?;
    let baseline = read_lists(&need(&a.baseline, "baseline")?, &mut echo)?;
    let merged = read_lists(&need(&a.merged, "merged")?, &mut echo)?;
    let report = interference_report(&queries, &baseline, &merged, &corpus, k, &noun_kind)?;
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_atomic(&out, text.as_bytes())?;
    write_atomic(&tsv, report.slots_tsv().as_bytes())?;
    echo.write(&echo_path_for(&out), "diagnose interference", run.strict, &a)?;
    Ok(summary(json!({
        "queries": report.n_queries,
        "queries_degraded_any": report.queries_degraded_any,
        "outputs": [out, tsv],
    })))
}

pub fn diagnose_substitutions(run: &Run, args: &DiagnoseSubstitutionsArgs) -> CliResult<Summary> {
    let a = args.clone();
    let out = need(&a.out, "out")?;
    let mut echo = Echo::default();
    let lists = read_lists(&need(&a.results, "results")?, &mut echo)?;
    let queries = read_items(&need(&a.queries_manifest, "queries-manifest")?, &mut echo)?;
    let items = read_items(&need(&a.corpus_manifest, "corpus-manifest")?, &mut echo)?;
    let m = substitution_matrix(&lists, &compositions(&items)?, &compositions(&queries)?)?;
    let mut text = String::from("query_shape");
    for s in Shape::ALL {
        write!(text, "\t{}", s.name()).unwrap();
    }
    text.push('\n');
    for (s, row) in Shape::ALL.iter().zip(&m) {
        text.push_str(s.name());
        for c in row {
            write!(text, "\t{c}").unwrap();
        }
        text.push('\n');
    }
    write_atomic(&out, text.as_bytes())?;
    echo.write(&echo_path_for(&out), "diagnose substitutions", run.strict, &a)?;
    let total: u64 = m.iter().flatten().sum();
    Ok(summary(json!({ "substitutions": total, "outputs": [out] })))
}

struct PipelineInputs {
    queries: Corpus,
    corpus: Corpus,
    mapper: Option<RidgeMapper>,
    lookup: Option<PhraseLookup>,
}

fn read_pipeline(p: &PipelineArgs, echo: &mut Echo) -> CliResult<PipelineInputs> {
    let qm = need(&p.data.queries_manifest, "queries-manifest")?;
    let cm = need(&p.data.corpus_manifest, "corpus-manifest")?;
    let queries = read_corpus(&qm, p.data.queries_embeddings.as_ref(), Modality::Text, echo)?;
    let corpus = read_corpus(&cm, p.data.corpus_embeddings.as_ref(), Modality::Image, echo)?;
    let mapper = p.mapper.as_ref().map(|m| read_mapper(m, echo)).transpose()?;
    let lookup = match p.phrases.phrases_manifest {
        Some(_) => Some(read_phrases(&p.phrases, echo)?),
        None => None,
    };
    Ok(PipelineInputs {
        queries,
        corpus,
        mapper,
        lookup,
    })
}

fn base_config(p: &mut PipelineArgs, s1: Stage1) -> PipelineConfig {
    PipelineConfig {
        stage1: s1,
        steering: None,
        stage2: stage2(*p.stage2.get_or_insert(Stage2Arg::None)),
        k: DEFAULT_K,
        fw: fill_solver(&mut p.solver),
        hungarian_tiebreak: tiebreak(*p.hungarian_tiebreak.get_or_insert(TiebreakArg::TopOnly)),
    }
}

pub fn sweep_k(run: &Run, args: &SweepKArgs) -> CliResult<Summary> {
    let mut a = args.clone();
    if a.k_grid.is_empty() {
        a.k_grid = vec![1, 5, 10, 20, 50];
    }
    let out = need(&a.out, "out")?;
    let s1 = if a.pipeline.mapper.is_some() { Stage1::RidgeMapped } else { Stage1::Raw };
    let base = base_config(&mut a.pipeline, s1);
    let mut echo = Echo::default();
    let inputs = read_pipeline(&a.pipeline, &mut echo)?;
    let mut truth = HashMap::new();
    for q in inputs.queries.items() {
        let hit = inputs
            .corpus
            .items()
            .iter()
            .find(|it| it.caption == q.caption)
            .ok_or_else(|| CliError::data(format!("query {} has no exact-caption item", q.id)))?;
        truth.insert(q.id.clone(), hit.id.clone());
    }
    let ctx = SweepContext {
        queries: &inputs.queries,
        corpus: &inputs.corpus,
        mapper: inputs.mapper.as_ref(),
        phrase_lookup: inputs.lookup.as_ref(),
    };
    let result = k_sweep(ctx, &base, &a.k_grid, &truth)?;
    write_atomic(&out, result.to_tsv().as_bytes())?;
    echo.write(&echo_path_for(&out), "sweep k", run.strict, &a)?;
    Ok(summary(json!({ "points": a.k_grid.len(), "outputs": [out] })))
}

pub fn sweep_alpha(run: &Run, args: &SweepAlphaArgs) -> CliResult<Summary> {
    let mut a = args.clone();
    if a.alpha_grid.is_empty() {
        a.alpha_grid = vec![0.0, 0.25, 0.5, 1.0, 2.0];
    }
    if a.ks.is_empty() {
        a.ks = EvalSpec::default().ks;
    }
    let k = *a.k.get_or_insert(DEFAULT_K);
    let out = need(&a.out, "out")?;
    let mut base = base_config(&mut a.pipeline, Stage1::RidgeMapped);
    base.k = k;
    let mut echo = Echo::default();
    let steering = read_steering(&need(&a.steering, "steering")?, &mut echo)?;
    need(&a.pipeline.mapper, "mapper")?;
    let inputs = read_pipeline(&a.pipeline, &mut echo)?;
    let positives =
        PositivesPredicate::exact_caption(inputs.queries.items(), inputs.corpus.items());
    let spec = EvalSpec {
        ks: a.ks.clone(),
        ..EvalSpec::default()
    };
    let ctx = SweepContext {
        queries: &inputs.queries,
        corpus: &inputs.corpus,
        mapper: inputs.mapper.as_ref(),
        phrase_lookup: inputs.lookup.as_ref(),
    };
    let eval = |lists: &[RankedList]| {
        evaluate(
            lists,
            &EvalInputs {
                positives: Some(&positives),
                ..EvalInputs::default()
            },
            &spec,
        )
    };
    let result = alpha_sweep(ctx, &base, &steering, &a.alpha_grid, eval)?;
    write_atomic(&out, result.to_tsv().as_bytes())?;
    echo.write(&echo_path_for(&out), "sweep alpha", run.strict, &a)?;
    Ok(summary(json!({ "points": a.alpha_grid.len(), "outputs": [out] })))
}
