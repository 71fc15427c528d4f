use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orthovar::corpus::{DataFormat, UnknownDtagPolicy};
use orthovar::embedding::{DiffDirection, LayerAggregation};
use orthovar::pipeline::{parse_kind_list, run_until, EmbeddingInput, PipelineError, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "orthovar", version, about = "Cluster contextual embeddings of orthographic variants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and check the dataset, apply the character limit
    Validate(RunArgs),
    /// Generate the synthetic variants (writes variants.jsonl)
    Mutate(RunArgs),
    /// Pool embeddings into absolute and relative point sets
    BuildSets(RunArgs),
    /// Run the k-means sweep over every point set
    Cluster(RunArgs),
    /// Score every clustering (writes metrics.json)
    Evaluate(RunArgs),
    /// Emit curves, plots and tables
    Report(RunArgs),
    /// All stages
    Run(RunArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON run configuration; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    dataset_format: Option<DataFormat>,
    /// JSON list of {code, description} tag definitions
    #[arg(long)]
    dtag_inventory: Option<PathBuf>,
    /// Reject records whose Dtag is not in the inventory instead of registering it
    #[arg(long)]
    reject_unknown_dtags: bool,
    /// Match the observed token in its context case-insensitively
    #[arg(long)]
    case_fold: bool,
    #[arg(long)]
    confusion_table: Option<PathBuf>,
    /// One embedding file per model run, as model_id=path
    #[arg(long, num_args = 1.., value_name = "MODEL_ID=PATH")]
    embeddings: Vec<EmbeddingInput>,
    /// Word-vector table for semantic coherency
    #[arg(long)]
    type_vectors: Option<PathBuf>,
    #[arg(long)]
    char_limit: Option<usize>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ocr_mutations: Option<usize>,
    /// concat, sum or last
    #[arg(long)]
    layer_agg: Option<LayerAggregation>,
    /// std-minus-var or var-minus-std
    #[arg(long)]
    diff_direction: Option<DiffDirection>,
    /// Kinds left out of the filtered relative set, e.g. rev,swp; "" for none
    #[arg(long, value_parser = parse_kind_list)]
    exclude_kinds: Option<std::collections::BTreeSet<orthovar::mutation::VariantKind>>,
    /// Cluster unit-length vectors
    #[arg(long)]
    normalize: bool,
    /// Dtag purity over all variant kinds instead of observed tokens only
    #[arg(long)]
    dtag_all_kinds: bool,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Tokens per cluster above which pairwise measures are sampled
    #[arg(long)]
    pairwise_cap: Option<usize>,
    #[arg(long)]
    top_edits: Option<usize>,
    /// Run directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<DataFormat, String> {
    match s {
        "jsonl" => Ok(DataFormat::Jsonl),
        "csv" => Ok(DataFormat::Csv),
        other => Err(format!("unknown format {other:?}; expected jsonl or csv")),
    }
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, String> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
                RunConfig::from_json_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        set!(dataset, char_limit, k_min, k_max, seed, ocr_mutations, layer_agg, diff_direction, exclude_kinds, restarts, tol, max_iter, pairwise_cap, top_edits, out);
        if self.dataset_format.is_some() {
            c.dataset_format = self.dataset_format;
        }
        if self.dtag_inventory.is_some() {
            c.dtag_inventory = self.dtag_inventory;
        }
        if self.confusion_table.is_some() {
            c.confusion_table = self.confusion_table;
        }
        if self.type_vectors.is_some() {
            c.type_vectors = self.type_vectors;
        }
        if !self.embeddings.is_empty() {
            c.embeddings = self.embeddings;
        }
        if self.reject_unknown_dtags {
            c.unknown_dtag = UnknownDtagPolicy::Reject;
        }
        c.case_fold |= self.case_fold;
        c.normalize |= self.normalize;
        c.dtag_all_kinds |= self.dtag_all_kinds;
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (stage, args) = match cli.command {
        Command::Validate(a) => (Stage::Validate, a),
        Command::Mutate(a) => (Stage::Mutate, a),
        Command::BuildSets(a) => (Stage::BuildSets, a),
        Command::Cluster(a) => (Stage::Cluster, a),
        Command::Evaluate(a) => (Stage::Evaluate, a),
        Command::Report(a) | Command::Run(a) => (Stage::Report, a),
    };
    let config = match args.into_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_until(&config, stage) {
        Ok(summary) => {
            if let Some(c) = &summary.corpus {
                println!(
                    "datapoints: {} loaded, {} rejected, {} within {} characters",
                    c.loaded, c.rejected, c.after_char_limit, c.char_limit
                );
                let tags: Vec<String> = c.tags_after_char_limit.iter().map(|(t, n)| format!("{t}={n}")).collect();
                println!("tags: {}", tags.join(" "));
            }
            println!(
                "{}: ran [{}], reused [{}]",
                summary.dir.display(),
                summary.executed.join(", "),
                summary.cached.join(", ")
            );
            ExitCode::SUCCESS
        }
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &PipelineError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
