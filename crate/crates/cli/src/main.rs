//! `clinlabel` command-line tool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

/// Adjudicate, score and analyze span annotations over conversations.
#[derive(Parser, Debug)]
#[command(name = "clinlabel", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Report format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads for per-conversation work.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Timestamp recorded in audit trails (default: now, RFC 3339).
    #[arg(long, global = true)]
    pub timestamp: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Table,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskArg {
    Symptoms,
    Medications,
    Conditions,
}

impl From<TaskArg> for clinlabel::corpus::Task {
    fn from(t: TaskArg) -> Self {
        use clinlabel::corpus::Task;
        match t {
            TaskArg::Symptoms => Task::Symptoms,
            TaskArg::Medications => Task::Medications,
            TaskArg::Conditions => Task::Conditions,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeArg {
    Relaxed,
    Strict,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum GranularityArg {
    Span,
    Conversation,
    Relation,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyArg {
    Tag,
    TagStatus,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterArg {
    All,
    Entities,
    Attributes,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartArg {
    Train,
    Dev,
    Test,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus with gold and simulated labeler annotations.
    Synth(SynthArgs),
    /// Check annotations against task ontologies.
    Validate(ValidateArgs),
    /// Build voted references from several labelers.
    Vote(VoteArgs),
    /// Score predictions against references.
    Score(ScoreArgs),
    /// Pairwise inter-labeler kappa per category.
    Kappa(KappaArgs),
    /// Score labelers against a reference and pick reviewers.
    Qa(QaArgs),
    /// Drop rare or contested entity tags from an ontology.
    Prune(PruneArgs),
    /// Lexicon suggestions for conversations.
    Suggest(SuggestArgs),
    /// Train a span tagger for one task.
    TrainTagger(TrainTaggerArgs),
    /// Tag conversations with a trained model.
    Tag(TagArgs),
    /// Train the turn classifier.
    TrainTurns(TrainTurnsArgs),
    /// Classify turns and optionally evaluate.
    DetectTurns(DetectTurnsArgs),
    /// Align, categorize and summarize model errors.
    #[command(subcommand)]
    Errors(ErrorsCommand),
    /// Label and relation counts.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON generator configuration; flags below override its split sizes.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub dev: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    /// Simulated labelers per conversation (0 for none).
    #[arg(long, default_value_t = 3)]
    pub labelers: usize,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Ontology files; built-in ontologies cover tasks not given.
    #[arg(long)]
    pub ontology: Vec<PathBuf>,
    /// Also cross-check spans against the conversations.
    #[arg(long)]
    pub conversations: Option<PathBuf>,
    /// Write violations here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VoteArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub conversations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Labeler whose relations carry over to the voted reference.
    #[arg(long)]
    pub senior: Option<String>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value = "relaxed")]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value = "span")]
    pub granularity: GranularityArg,
    #[arg(long, value_enum, default_value = "tag-status")]
    pub key: KeyArg,
    /// Restrict to one task.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Restrict to one split part; needs --split.
    #[arg(long, value_enum, requires = "split")]
    pub part: Option<PartArg>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct KappaArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub conversations: PathBuf,
    #[arg(long)]
    pub ontology: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct QaArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Number of reviewers to select.
    #[arg(long)]
    pub reviewers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PruneArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub conversations: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Ontology to prune; the built-in one by default.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub min_count: u64,
    #[arg(long)]
    pub min_kappa: f64,
    /// Pruned ontology file.
    #[arg(long)]
    pub out: PathBuf,
    /// Annotations rewritten onto the pruned ontology.
    #[arg(long)]
    pub out_annotations: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SuggestArgs {
    #[arg(long)]
    pub conversations: PathBuf,
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Task recorded on the suggestion sets.
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Refuse conversations outside this manifest's train split.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainTaggerArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub conversations: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Train only on this manifest's train split.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, value_enum, default_value = "all")]
    pub task_filter: FilterArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TagArgs {
    /// Model files; one annotation set per model and conversation.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    #[arg(long)]
    pub conversations: PathBuf,
    /// Restrict to one split part; needs --split.
    #[arg(long, value_enum, requires = "split")]
    pub part: Option<PartArg>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainTurnsArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub conversations: PathBuf,
    /// Learn from one task only; all tasks by default.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DetectTurnsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub conversations: PathBuf,
    #[arg(long, value_enum, requires = "split")]
    pub part: Option<PartArg>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Per-turn predictions as JSON Lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Gold annotations; prints the evaluation CSV.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Tagger output projected onto turns, evaluated alongside.
    #[arg(long, requires = "gold")]
    pub compare: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum ErrorsCommand {
    /// Pair reference and predicted spans into error records.
    Align(AlignArgs),
    /// Record a rater's category for one error.
    Annotate(AnnotateArgs),
    /// Proportions by type, cause and relevance.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    /// Conversations for the context column.
    #[arg(long)]
    pub conversations: Option<PathBuf>,
    /// Restrict to one task.
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    /// Restrict to one split part; needs --split.
    #[arg(long, value_enum, requires = "split")]
    pub part: Option<PartArg>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnnotateArgs {
    /// Error records, rewritten in place unless --out is given.
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub id: String,
    #[arg(long)]
    pub cause: String,
    #[arg(long)]
    pub relevance: String,
    #[arg(long)]
    pub rater: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub records: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Conversations, for surface-level unique counts.
    #[arg(long)]
    pub conversations: Option<PathBuf>,
    /// Include unique span counts.
    #[arg(long)]
    pub unique: bool,
}

/// Outcome of a subcommand that ran to completion.
pub enum Outcome {
    Ok,
    /// Input was read fine but failed checks.
    Invalid,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Invalid) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
