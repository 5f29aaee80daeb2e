use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use pathrec::{ProfileVariant, RankLoss, Roles, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "pathrec", version, about = "Coarse-to-fine knowledge-graph path reasoning for recommendation")]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,

    #[command(subcommand)]
    pub command: Command,
}

/// Run configuration. Precedence: flag > environment > `--config` file >
/// built-in default.
#[derive(Args, Debug, Default)]
pub struct ConfigArgs {
    /// TOML file with RunConfig fields
    #[arg(long, global = true, env = "PATHREC_CONFIG")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, env = "PATHREC_DIM")]
    pub dim: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_HIDDEN")]
    pub hidden: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_MAX_LEN")]
    pub max_len: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_MAX_PATTERNS")]
    pub max_patterns: Option<usize>,
    /// Output paths per user (K)
    #[arg(long, global = true, env = "PATHREC_BUDGET")]
    pub budget: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_LAMBDA")]
    pub lambda: Option<f64>,
    #[arg(long, global = true, env = "PATHREC_LEARNING_RATE")]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true, env = "PATHREC_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_NEGATIVES")]
    pub negatives: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_RANK_LOSS")]
    pub rank_loss: Option<RankLossArg>,
    #[arg(long, global = true, env = "PATHREC_WALKS_PER_PAIR")]
    pub walks_per_pair: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_PATHS_PER_PATTERN")]
    pub paths_per_pattern: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_BOUND_CAP")]
    pub bound_cap: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_PROMINENCE_CAP")]
    pub prominence_cap: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_PRETRAIN_EPOCHS")]
    pub pretrain_epochs: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_PRETRAIN_LEARNING_RATE")]
    pub pretrain_learning_rate: Option<f64>,
    #[arg(long, global = true, env = "PATHREC_PRETRAIN_MARGIN")]
    pub pretrain_margin: Option<f64>,
    #[arg(long, global = true, env = "PATHREC_TOP_N")]
    pub top_n: Option<usize>,
    #[arg(long, global = true, env = "PATHREC_MASK_INTERACTED", action = ArgAction::Set)]
    pub mask_interacted: Option<bool>,
    #[arg(long, global = true, env = "PATHREC_EXCLUDE_TRAIN", action = ArgAction::Set)]
    pub exclude_train: Option<bool>,
    #[arg(long, global = true, env = "PATHREC_VARIANT")]
    pub variant: Option<VariantArg>,
    #[arg(long, global = true, env = "PATHREC_KEEP_FRACTION")]
    pub keep_fraction: Option<f64>,
    #[arg(long, global = true, env = "PATHREC_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core, 1 is fully deterministic
    #[arg(long, global = true, env = "PATHREC_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RankLossArg {
    Sigmoid,
    LogSigmoid,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Cafe,
    Rand,
    Prior,
}

impl From<VariantArg> for ProfileVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Cafe => ProfileVariant::Cafe,
            VariantArg::Rand => ProfileVariant::Rand,
            VariantArg::Prior => ProfileVariant::Prior,
        }
    }
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_toml_file(p).with_context(|| format!("reading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            dim, hidden, max_len, max_patterns, budget, lambda, learning_rate, batch_size, epochs, negatives,
            walks_per_pair, paths_per_pattern, bound_cap, prominence_cap, pretrain_epochs,
            pretrain_learning_rate, pretrain_margin, top_n, mask_interacted, exclude_train, keep_fraction,
            seed, threads
        );
        if let Some(r) = self.rank_loss {
            c.rank_loss = match r {
                RankLossArg::Sigmoid => RankLoss::Sigmoid,
                RankLossArg::LogSigmoid => RankLoss::LogSigmoid,
            };
        }
        if let Some(v) = self.variant {
            c.variant = v.into();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset directory (entities, relations, triples, train, test)
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "user")]
    pub user_type: String,
    #[arg(long, default_value = "item")]
    pub item_type: String,
    #[arg(long, default_value = "purchase")]
    pub interaction: String,
}

impl DataArgs {
    pub fn roles(&self) -> Roles {
        Roles {
            user_type: self.user_type.clone(),
            item_type: self.item_type.clone(),
            interaction: self.interaction.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SweepParam {
    Lambda,
    K,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic planted-pattern dataset
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with generator fields
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        items: Option<usize>,
        #[arg(long)]
        noise_rate: Option<f64>,
        /// Generator seed (defaults to the run seed)
        #[arg(long)]
        synth_seed: Option<u64>,
    },
    /// Mine candidate user-centric patterns
    Mine {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain translational entity embeddings
    Pretrain {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the relation modules
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compose user profiles
    Compose {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run path reasoning and write ranked, explained recommendations
    Recommend {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate on the test split and write report.json
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate cafe, rand and prior instead of the configured variant
        #[arg(long)]
        all_variants: bool,
        /// Also run the unseen-pattern study with `keep_fraction`
        #[arg(long)]
        unseen: bool,
        #[arg(long)]
        per_user: bool,
    },
    /// Time batch against one-by-one path reasoning
    Bench {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        users: usize,
        #[arg(long, default_value_t = 10000)]
        paths: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
    },
    /// Sweep lambda (retrains) or K (re-infers) and write a CSV table
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values; defaults to 0,5,10,15,20 or 15,20,25,30
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Trained model, required for the K sweep
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}
