//! The `curator` command-line front end.
//!
//! [`run`] parses arguments, executes one pipeline and maps the outcome to an exit
//! code: 0 on success, 1 for invalid data or configuration, 2 for usage errors.

pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use curator_core::acquisition::{select_cdal, select_entropy, select_random};
use curator_core::ada;
use curator_core::eval::eval_cluster_coverage;
use curator_core::fairness::{self, fairness_objective};
use curator_core::records::{self, parse_groups, parse_labels, parse_predictions};
use curator_core::signature::{build_signatures, distance_matrix};
use curator_core::synth::{gen_synth, GROUPS};
use curator_core::{AnchorSet, FrameScores, LabelRecord, ParseOptions, PredictionRecord, SynthSpec};
use log::info;
use serde::Serialize;

pub use config::EngineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "curator",
    version,
    about = "Context-aware selection, fairness repair and annotation scoring"
)]
pub struct Cli {
    /// JSON engine configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Ignore unknown keys in input records.
    #[arg(long, global = true)]
    pub lenient: bool,
    /// Seed overriding the configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread count.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Context-diverse selection by farthest-point k-center greedy.
    SelectCdal(CdalArgs),
    /// Highest prediction entropy first.
    SelectEntropy(SelectArgs),
    /// Seeded uniform sample.
    SelectRandom(SelectArgs),
    /// Remove items until the class-group co-occurrence is as even as possible.
    RepairRemove(RepairRemoveArgs),
    /// Add pool items to even out class-group co-occurrence.
    RepairAdd(RepairAddArgs),
    /// Score frame classes against training-set anchors.
    AdaAnchor(AdaAnchorArgs),
    /// Score frame classes by cross-view instability.
    AdaAugment(AdaAugmentArgs),
    /// Write a synthetic dataset with planted clusters and group skew.
    GenSynth(GenSynthArgs),
    /// Cluster coverage (and optionally fairness) of a selection.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub budget: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CdalArgs {
    #[command(flatten)]
    pub select: SelectArgs,
    /// Already-labelled item ids, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub preselected: Vec<String>,
    /// Also write the distance matrix as CSV.
    #[arg(long)]
    pub matrix_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RepairRemoveArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Number of items to keep.
    #[arg(long)]
    pub target: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RepairAddArgs {
    /// Current labelled set.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Candidate pool with labels.
    #[arg(long)]
    pub pool_labels: Option<PathBuf>,
    /// Current set as predictions (pseudo-label mode).
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Candidate pool as predictions (pseudo-label mode).
    #[arg(long)]
    pub pool_pred: Option<PathBuf>,
    /// item_id to group table (pseudo-label mode).
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub budget: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdaOutput {
    /// Total estimated annotation weight.
    #[arg(long)]
    pub budget: f64,
    /// Recommendations, one JSON object per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary report; defaults to `<out>.summary.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub per_frame_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AdaAnchorArgs {
    /// Target-domain frames.
    #[arg(long)]
    pub pred: PathBuf,
    /// Training-set predictions used to build anchors.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub output: AdaOutput,
}

#[derive(Debug, Args)]
pub struct AdaAugmentArgs {
    /// Frames with several views each, keyed by (item_id, view_id).
    #[arg(long)]
    pub pred: PathBuf,
    /// Training predictions; averages in the anchor score (experimental).
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub output: AdaOutput,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON spec; individual flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n_items: Option<usize>,
    #[arg(long)]
    pub n_clusters: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub regions_per_item: Option<usize>,
    #[arg(long)]
    pub bias: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub biased_classes: Option<Vec<usize>>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions with cluster tags.
    #[arg(long)]
    pub pred: PathBuf,
    /// A selection or repair report.
    #[arg(long)]
    pub selection: PathBuf,
    /// Labels for a fairness objective of the selected items.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// A flag combination clap cannot express; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(message.into()))
}

/// Runs one invocation and returns its exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("CURATOR_LOG", "warn")).try_init();
    match execute_with_threads(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn execute_with_threads(cli: Cli) -> Result<()> {
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.into())
                .build()
                .context("cannot start worker pool")?;
            pool.install(|| execute(cli))
        }
        None => execute(cli),
    }
}

/// Runs the parsed command on the current rayon pool.
pub fn execute(cli: Cli) -> Result<()> {
    let mut config = EngineConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ctx = Pipeline {
        options: ParseOptions {
            lenient: cli.lenient,
            num_classes: config.num_classes,
        },
        config,
    };
    match cli.command {
        Command::SelectCdal(a) => ctx.select_cdal(a),
        Command::SelectEntropy(a) => ctx.select_entropy(a),
        Command::SelectRandom(a) => ctx.select_random(a),
        Command::RepairRemove(a) => ctx.repair_remove(a),
        Command::RepairAdd(a) => ctx.repair_add(a),
        Command::AdaAnchor(a) => ctx.ada_anchor(a),
        Command::AdaAugment(a) => ctx.ada_augment(a),
        Command::GenSynth(a) => ctx.gen_synth(a),
        Command::Eval(a) => ctx.eval(a),
    }
}

struct Pipeline {
    config: EngineConfig,
    options: ParseOptions,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("{}: cannot open", path.display()))?;
    Ok(BufReader::new(file))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("{}: cannot create", path.display()))?;
    Ok(BufWriter::new(file))
}

/// Pretty JSON with a trailing newline.
fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("{}: cannot write", path.display()))
}

fn write_jsonl<V: Serialize>(path: &Path, values: &[V]) -> Result<()> {
    let mut w = create(path)?;
    for v in values {
        serde_json::to_writer(&mut w, v)?;
        w.write_all(b"\n")?;
    }
    w.flush().with_context(|| format!("{}: cannot write", path.display()))
}

impl Pipeline {
    fn predictions(&self, path: &Path) -> Result<Vec<PredictionRecord>> {
        let records: Vec<PredictionRecord> =
            parse_predictions(open(path)?, self.options).with_context(|| path.display().to_string())?;
        if let Some(first) = records.first() {
            self.config
                .check_classes(first.num_classes())
                .with_context(|| path.display().to_string())?;
        }
        info!("{}: {} prediction records", path.display(), records.len());
        Ok(records)
    }

    /// Records describing the item itself rather than an augmented view.
    fn canonical(&self, path: &Path) -> Result<Vec<PredictionRecord>> {
        let all = self.predictions(path)?;
        let total = all.len();
        let kept: Vec<_> = all.into_iter().filter(|r| r.is_canonical()).collect();
        if kept.len() < total {
            info!("{}: skipped {} non-canonical views", path.display(), total - kept.len());
        }
        if kept.is_empty() {
            bail!("{}: no records", path.display());
        }
        Ok(kept)
    }

    fn labels(&self, path: &Path) -> Result<Vec<LabelRecord>> {
        let labels = parse_labels(open(path)?, self.options).with_context(|| path.display().to_string())?;
        info!("{}: {} label records", path.display(), labels.len());
        Ok(labels)
    }

    fn groups(&self, path: &Path) -> Result<BTreeMap<String, String>> {
        parse_groups(open(path)?, self.options).with_context(|| path.display().to_string())
    }

    fn select_cdal(&self, a: CdalArgs) -> Result<()> {
        let records = self.canonical(&a.select.pred)?;
        let mask = self.config.mask();
        let sigs = build_signatures(&records, mask.as_ref());
        let m = distance_matrix(&sigs, self.config.distance_params()?)?;
        if let Some(csv) = &a.matrix_csv {
            m.write_csv(create(csv)?)
                .with_context(|| format!("{}: cannot write", csv.display()))?;
        }
        let result = select_cdal(&m, a.select.budget, &a.preselected)?;
        write_json(&a.select.out, &result)
    }

    fn select_entropy(&self, a: SelectArgs) -> Result<()> {
        let records = self.canonical(&a.pred)?;
        let result = select_entropy(&records, a.budget, self.config.eps)?;
        write_json(&a.out, &result)
    }

    fn select_random(&self, a: SelectArgs) -> Result<()> {
        let records = self.canonical(&a.pred)?;
        let ids: Vec<String> = records.into_iter().map(|r| r.item_id).collect();
        let result = select_random::<f64>(&ids, a.budget, self.config.seed)?;
        write_json(&a.out, &result)
    }

    fn repair_remove(&self, a: RepairRemoveArgs) -> Result<()> {
        let labels = self.labels(&a.labels)?;
        let result = fairness::repair_remove::<f64>(&labels, a.target)?;
        write_json(&a.out, &result)
    }

    fn repair_add(&self, a: RepairAddArgs) -> Result<()> {
        let result = match (&a.labels, &a.pool_labels, &a.pred, &a.pool_pred) {
            (Some(cur), Some(pool), None, None) => {
                if a.groups.is_some() {
                    return Err(usage("--groups applies only with --pred/--pool-pred"));
                }
                fairness::repair_add::<f64>(&self.labels(cur)?, &self.labels(pool)?, a.budget)?
            }
            (None, None, Some(cur), Some(pool)) => {
                let groups_path = a
                    .groups
                    .as_ref()
                    .ok_or_else(|| usage("--pred/--pool-pred need --groups"))?;
                let groups = self.groups(groups_path)?;
                let mask = self.config.mask();
                let cur_sigs = build_signatures(&self.canonical(cur)?, mask.as_ref());
                let pool_sigs = build_signatures(&self.canonical(pool)?, mask.as_ref());
                fairness::repair_add_proxy(&cur_sigs, &pool_sigs, a.budget, Some(&groups))?
            }
            _ => {
                return Err(usage(
                    "repair-add needs either --labels and --pool-labels or --pred and --pool-pred",
                ))
            }
        };
        write_json(&a.out, &result)
    }

    fn alpha(&self, flag: Option<f64>) -> Result<f64> {
        let alpha = flag.unwrap_or(self.config.alpha);
        if !(0.0..=1.0).contains(&alpha) {
            bail!("--alpha {alpha} outside [0, 1]");
        }
        Ok(alpha)
    }

    fn anchors(&self, train: &Path) -> Result<AnchorSet> {
        let mask = self.config.mask();
        let sigs = build_signatures(&self.canonical(train)?, mask.as_ref());
        ada::build_anchors(&sigs).with_context(|| train.display().to_string())
    }

    fn anchor_scores(&self, frame: &PredictionRecord, anchors: &AnchorSet, alpha: f64) -> Result<BTreeMap<usize, f64>> {
        let mask = self.config.mask();
        let sig = curator_core::signature::build_signature_masked(frame, mask.as_ref());
        let hardness = ada::class_hardness(frame, self.config.eps, mask.as_ref())?;
        ada::score_anchor(&sig, &hardness, anchors, alpha, self.config.distance_params()?)
            .with_context(|| format!("item `{}`", frame.item_id))
    }

    fn ada_anchor(&self, a: AdaAnchorArgs) -> Result<()> {
        let alpha = self.alpha(a.alpha)?;
        let anchors = self.anchors(&a.train)?;
        let frames = self.canonical(&a.pred)?;
        let mask = self.config.mask();
        let scored = frames
            .iter()
            .map(|f| {
                let scores = self.anchor_scores(f, &anchors, alpha)?;
                Ok(FrameScores::new(
                    f.item_id.clone(),
                    &scores,
                    &ada::class_weights(f, mask.as_ref()),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        self.recommend(&scored, &a.output)
    }

    fn ada_augment(&self, a: AdaAugmentArgs) -> Result<()> {
        let alpha = self.alpha(a.alpha)?;
        let anchors = a.train.as_deref().map(|t| self.anchors(t)).transpose()?;
        let mut by_item: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
        for r in self.predictions(&a.pred)? {
            by_item.entry(r.item_id.clone()).or_default().push(r);
        }
        if by_item.is_empty() {
            bail!("{}: no records", a.pred.display());
        }
        let mask = self.config.mask();
        let scored = by_item
            .iter()
            .map(|(id, views)| {
                let mut scores = ada::score_augmentation(views, self.config.eps, mask.as_ref())
                    .with_context(|| format!("{}: item `{id}`", a.pred.display()))?;
                if let Some(anchors) = &anchors {
                    let base = views.iter().min_by_key(|v| v.view()).expect("non-empty view group");
                    scores = ada::combine_mean(&scores, &self.anchor_scores(base, anchors, alpha)?);
                }
                Ok(FrameScores::new(
                    id.clone(),
                    &scores,
                    &ada::view_class_weights(views, mask.as_ref()),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        self.recommend(&scored, &a.output)
    }

    fn recommend(&self, frames: &[FrameScores], out: &AdaOutput) -> Result<()> {
        let per_frame = out.per_frame_max.unwrap_or(self.config.per_frame_max);
        let recs = ada::recommend(frames, out.budget, per_frame)?;
        write_jsonl(&out.out, &recs)?;
        let summary_path = out.summary.clone().unwrap_or_else(|| {
            let mut p = out.out.clone().into_os_string();
            p.push(".summary.json");
            PathBuf::from(p)
        });
        write_json(&summary_path, &ada::summarize(&recs, out.budget))
    }

    fn gen_synth(&self, a: GenSynthArgs) -> Result<()> {
        let mut spec: SynthSpec = match &a.spec {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("{}: cannot read", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("{}: invalid spec", p.display()))?
            }
            None => SynthSpec::default(),
        };
        spec.seed = self.config.seed;
        macro_rules! apply {
            ($($field:ident),*) => { $(if let Some(v) = a.$field.clone() { spec.$field = v; })* };
        }
        apply!(
            n_items,
            n_clusters,
            num_classes,
            regions_per_item,
            bias,
            biased_classes,
            noise
        );
        let (preds, labels) = gen_synth::<f64>(&spec)?;
        fs::create_dir_all(&a.out).with_context(|| format!("{}: cannot create", a.out.display()))?;
        let pred_path = a.out.join("predictions.jsonl");
        let mut w = create(&pred_path)?;
        records::write_predictions(&mut w, &preds)?;
        w.flush()?;
        let label_path = a.out.join("labels.jsonl");
        let mut w = create(&label_path)?;
        records::write_labels(&mut w, &labels)?;
        w.flush()?;
        #[derive(Serialize)]
        struct GroupLine<'a> {
            item_id: &'a str,
            group: &'a str,
        }
        let groups: Vec<GroupLine> = labels
            .iter()
            .filter_map(|l| {
                Some(GroupLine {
                    item_id: &l.item_id,
                    group: l.group.as_deref()?,
                })
            })
            .collect();
        debug_assert!(groups.iter().all(|g| GROUPS.contains(&g.group)));
        write_jsonl(&a.out.join("groups.jsonl"), &groups)?;
        write_json(&a.out.join("spec.json"), &spec)
    }

    fn eval(&self, a: EvalArgs) -> Result<()> {
        let records = self.canonical(&a.pred)?;
        let text =
            fs::read_to_string(&a.selection).with_context(|| format!("{}: cannot read", a.selection.display()))?;
        let report: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("{}: invalid report", a.selection.display()))?;
        let ids_value = report
            .get("selected")
            .or_else(|| report.get("kept"))
            .ok_or_else(|| anyhow!("{}: field `selected` or `kept` missing", a.selection.display()))?;
        let selected: Vec<String> = serde_json::from_value(ids_value.clone())
            .with_context(|| format!("{}: field `selected` must be a list of ids", a.selection.display()))?;
        let coverage = eval_cluster_coverage(&selected, &records).with_context(|| a.pred.display().to_string())?;

        #[derive(Serialize)]
        struct EvalReport {
            coverage: f64,
            clusters_covered: usize,
            clusters_total: usize,
            selected: usize,
            #[serde(skip_serializing_if = "Option::is_none")]
            fairness_objective: Option<f64>,
        }
        let fairness_objective = match &a.labels {
            Some(path) => {
                let labels = self.labels(path)?;
                let chosen: std::collections::HashSet<&str> = selected.iter().map(String::as_str).collect();
                let subset: Vec<LabelRecord> = labels
                    .into_iter()
                    .filter(|l| chosen.contains(l.item_id.as_str()))
                    .collect();
                let m = fairness::cooccurrence(&subset).with_context(|| path.display().to_string())?;
                Some(fairness_objective::<f64>(&m))
            }
            None => None,
        };
        write_json(
            &a.out,
            &EvalReport {
                coverage: coverage.coverage,
                clusters_covered: coverage.clusters_covered,
                clusters_total: coverage.clusters_total,
                selected: selected.len(),
                fairness_objective,
            },
        )
    }
}
