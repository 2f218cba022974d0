//! Flag definitions. Every field is optional so that a config file can
//! supply it; defaults are applied after merging.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "nbra", version, about = "Cross-modal retrieval with structure-aware reranking")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-query work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Treat solver non-convergence as fatal (exit 4).
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enumerate shape compositions and write a manifest.
    GenShapes(GenShapesArgs),
    /// Embed a shapes manifest with the seeded synthetic encoder.
    SynthEmbed(SynthEmbedArgs),
    /// Validate an external manifest and embedding file and copy them in.
    Import(ImportArgs),
    /// Fit a ridge mapper between two paired embedding sets.
    FitMapper(FitMapperArgs),
    /// Build a steering vector from phrase pairs.
    Steer(SteerArgs),
    /// First-stage cosine retrieval, optionally mapped, steered or merged.
    Retrieve(RetrieveArgs),
    /// Rerank first-stage shortlists with Hungarian matching or FGW.
    Rerank(RerankArgs),
    /// Compute Recall@K, nDCG@K and CAS for a results file.
    Eval(EvalArgs),
    /// Geometric and error-analysis reports.
    #[command(subcommand)]
    Diagnose(DiagnoseCommand),
    /// Parameter sweeps.
    #[command(subcommand)]
    Sweep(SweepCommand),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenShapes(_) => "gen-shapes",
            Command::SynthEmbed(_) => "synth-embed",
            Command::Import(_) => "import",
            Command::FitMapper(_) => "fit-mapper",
            Command::Steer(_) => "steer",
            Command::Retrieve(_) => "retrieve",
            Command::Rerank(_) => "rerank",
            Command::Eval(_) => "eval",
            Command::Diagnose(d) => match d {
                DiagnoseCommand::Mapper(_) => "diagnose mapper",
                DiagnoseCommand::Correlation(_) => "diagnose correlation",
                DiagnoseCommand::Interference(_) => "diagnose interference",
                DiagnoseCommand::Substitutions(_) => "diagnose substitutions",
            },
            Command::Sweep(s) => match s {
                SweepCommand::K(_) => "sweep k",
                SweepCommand::Alpha(_) => "sweep alpha",
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModalityArg {
    Text,
    Image,
}

impl From<ModalityArg> for nbra::Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Text => nbra::Modality::Text,
            ModalityArg::Image => nbra::Modality::Image,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairBy {
    Id,
    Caption,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage1Arg {
    Raw,
    RidgeMapped,
    RidgePlusSteer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage2Arg {
    None,
    Hungarian,
    Fgw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiebreakArg {
    TopOnly,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeArg {
    Average,
    Min,
    Softmin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositivesArg {
    ExactCaption,
    Symbolic,
    None,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct GenShapesArgs {
    /// Primitives per composition.
    #[arg(long)]
    pub arity: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Write one SVG per item into `<out-dir>/svg`.
    #[arg(long)]
    pub svg: bool,
    /// Sample this many items instead of writing the full universe.
    #[arg(long)]
    pub items: Option<usize>,
    /// Sample this many queries from the items into `queries.jsonl`.
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// With --queries, write graded relevance of every query against every item.
    #[arg(long)]
    pub relevance: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthEmbedArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub modality: Option<ModalityArg>,
    /// Defaults to the manifest path with extension `.nbra`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the 42 single-primitive phrase embeddings to this manifest
    /// path (and its `.nbra` sibling).
    #[arg(long)]
    pub phrases_out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Rotate text embeddings by a fixed seeded orthogonal matrix.
    #[arg(long)]
    pub modality_rotation: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub modality: Option<ModalityArg>,
    /// Output manifest path; embeddings go to its `.nbra` sibling.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// L2-normalize rows before writing.
    #[arg(long)]
    pub normalize: bool,
}

/// Two embedding sets whose rows are paired by id or caption.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct PairedArgs {
    #[arg(long)]
    pub source_manifest: Option<PathBuf>,
    #[arg(long)]
    pub source_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub target_manifest: Option<PathBuf>,
    #[arg(long)]
    pub target_embeddings: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub pair_by: Option<PairBy>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct FitMapperArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub paired: PairedArgs,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct PhraseArgs {
    /// Phrase manifest: one record per phrase, id = phrase.
    #[arg(long)]
    pub phrases_manifest: Option<PathBuf>,
    #[arg(long)]
    pub phrases_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SteerArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub phrases: PhraseArgs,
    /// Source phrase; repeat together with --target for a global vector.
    #[arg(long)]
    pub source: Vec<String>,
    #[arg(long)]
    pub target: Vec<String>,
    /// Map the direction into the mapper's output space.
    #[arg(long)]
    pub mapper: Option<PathBuf>,
    #[arg(long)]
    pub noun_scope: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusArgs {
    #[arg(long)]
    pub queries_manifest: Option<PathBuf>,
    #[arg(long)]
    pub queries_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub corpus_manifest: Option<PathBuf>,
    #[arg(long)]
    pub corpus_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverArgs {
    /// Structure weight in [0, 1]; 0 is pure feature transport.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub sinkhorn_iters: Option<usize>,
    #[arg(long)]
    pub sinkhorn_tol: Option<f64>,
    #[arg(long)]
    pub fw_iters: Option<usize>,
    #[arg(long)]
    pub fw_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieveArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: CorpusArgs,
    #[arg(long)]
    pub k: Option<usize>,
    /// Inferred from --mapper and --steering when omitted.
    #[arg(long, value_enum)]
    pub stage1: Option<Stage1Arg>,
    #[arg(long)]
    pub mapper: Option<PathBuf>,
    #[arg(long)]
    pub steering: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Collapse each multi-object query with this strategy instead.
    #[arg(long, value_enum)]
    pub merge: Option<MergeArg>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    pub phrases: PhraseArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankArgs {
    /// First-stage results file.
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub queries_manifest: Option<PathBuf>,
    #[arg(long)]
    pub corpus_manifest: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub phrases: PhraseArgs,
    #[arg(long, value_enum)]
    pub stage2: Option<Stage2Arg>,
    /// Shortlist size taken from each first-stage list.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub hungarian_tiebreak: Option<TiebreakArg>,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    /// Write each query's transport plan against its new top item here.
    #[arg(long)]
    pub dump_plans: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalArgs {
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub queries_manifest: Option<PathBuf>,
    #[arg(long)]
    pub corpus_manifest: Option<PathBuf>,
    /// Graded 0-4 relevance file for nDCG.
    #[arg(long)]
    pub relevance: Option<PathBuf>,
    /// Continuous [0, 1] similarity file for CAS.
    #[arg(long)]
    pub similarity: Option<PathBuf>,
    /// Derive both tables from shape captions.
    #[arg(long)]
    pub heuristic: bool,
    #[arg(long, value_enum)]
    pub positives: Option<PositivesArg>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    #[arg(long)]
    pub cas_k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum DiagnoseCommand {
    /// Distance reduction and GW before/after mapping.
    Mapper(DiagnoseMapperArgs),
    /// Correlation of pairwise distances across two paired sets.
    Correlation(DiagnoseCorrelationArgs),
    /// Per-slot degradation of merged queries against a baseline.
    Interference(DiagnoseInterferenceArgs),
    /// Color-preserving shape substitutions at rank 1.
    Substitutions(DiagnoseSubstitutionsArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseMapperArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub paired: PairedArgs,
    #[arg(long)]
    pub mapper: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseCorrelationArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub paired: PairedArgs,
    /// Restrict to source items with an object of this noun.
    #[arg(long)]
    pub noun: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseInterferenceArgs {
    #[arg(long)]
    pub queries_manifest: Option<PathBuf>,
    #[arg(long)]
    pub corpus_manifest: Option<PathBuf>,
    #[arg(long)]
    pub corpus_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long)]
    pub merged: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Slot kind used for the noun itself.
    #[arg(long)]
    pub noun_kind: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseSubstitutionsArgs {
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub queries_manifest: Option<PathBuf>,
    #[arg(long)]
    pub corpus_manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SweepCommand {
    /// Rank of the exact-caption item as the shortlist size grows.
    K(SweepKArgs),
    /// Metrics as the steering strength grows.
    Alpha(SweepAlphaArgs),
}

/// Pipeline flags shared by the sweeps.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: CorpusArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub phrases: PhraseArgs,
    #[arg(long)]
    pub mapper: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub stage2: Option<Stage2Arg>,
    #[arg(long, value_enum)]
    pub hungarian_tiebreak: Option<TiebreakArg>,
    #[command(flatten)]
    #[serde(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepKArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepAlphaArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long)]
    pub steering: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub alpha_grid: Vec<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
