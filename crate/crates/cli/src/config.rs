use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

/// One value or a list, so a config can request a λ sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lambdas {
    One(f64),
    Many(Vec<f64>),
}

impl Lambdas {
    fn into_vec(self) -> Vec<f64> {
        match self {
            Lambdas::One(l) => vec![l],
            Lambdas::Many(v) => v,
        }
    }
}

/// Contents of a `--config` JSON file. Relative paths are taken relative to
/// the file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lambda: Option<Lambdas>,
    pub skip_p0: Option<bool>,
    pub renormalize: Option<bool>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub projection: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    pub targets: Option<PathBuf>,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.out,
            &mut cfg.prompts,
            &mut cfg.projection,
            &mut cfg.input,
            &mut cfg.images,
            &mut cfg.queries,
            &mut cfg.attributes,
            &mut cfg.pairs,
            &mut cfg.heldout,
            &mut cfg.targets,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Calibration weight; a comma-separated list runs a sweep where supported
    #[arg(long, value_name = "L[,L...]", value_delimiter = ',')]
    pub lambda: Vec<f64>,

    /// Use P0 = I (calibration only)
    #[arg(long)]
    pub skip_p0: bool,

    /// Apply the orthogonal projection in generative-prep
    #[arg(long, conflicts_with = "skip_p0")]
    pub with_p0: bool,

    /// Keep projected embeddings at their projected length
    #[arg(long)]
    pub no_renormalize: bool,

    /// Rescale projected embeddings to unit length
    #[arg(long, conflicts_with = "no_renormalize")]
    pub renormalize: bool,

    /// Retrieval cutoff for MaxSkew@k
    #[arg(long)]
    pub k: Option<usize>,

    /// Seed for the verification instances
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output prefix or file
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Prompt embedding set (class, spurious and pair entries)
    #[arg(long, value_name = "PREFIX")]
    pub prompts: Option<PathBuf>,

    /// Projection written by `build`
    #[arg(long, value_name = "PREFIX")]
    pub projection: Option<PathBuf>,

    /// Embedding set to transform
    #[arg(long, value_name = "PREFIX")]
    pub input: Option<PathBuf>,

    /// Image embeddings with a labels sidecar
    #[arg(long, value_name = "PREFIX")]
    pub images: Option<PathBuf>,

    /// Retrieval query prompts
    #[arg(long, value_name = "PREFIX")]
    pub queries: Option<PathBuf>,

    /// Attribute prompts used to label images
    #[arg(long, value_name = "PREFIX")]
    pub attributes: Option<PathBuf>,

    /// Positive pairs used to fit the calibration
    #[arg(long, value_name = "PREFIX")]
    pub pairs: Option<PathBuf>,

    /// Held-out positive pairs, only measured
    #[arg(long, value_name = "PREFIX")]
    pub heldout: Option<PathBuf>,

    /// Prompts to debias
    #[arg(long, value_name = "PREFIX")]
    pub targets: Option<PathBuf>,
}

/// Flags merged over the config file, with command-specific defaults still
/// unresolved.
#[derive(Debug, Clone)]
pub struct Settings {
    pub lambdas: Option<Vec<f64>>,
    pub skip_p0: Option<bool>,
    pub renormalize: Option<bool>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub projection: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    pub targets: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(args: CommonArgs) -> Result<Self> {
        let cfg = match &args.config {
            Some(path) => RunConfig::read(path)?,
            None => RunConfig::default(),
        };
        let lambdas = if args.lambda.is_empty() {
            cfg.lambda.map(Lambdas::into_vec)
        } else {
            Some(args.lambda)
        };
        if let Some(ls) = &lambdas {
            if ls.is_empty() {
                bail!("lambda list is empty");
            }
            if let Some(bad) = ls.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
                bail!("lambda must be a finite non-negative number, got {bad}");
            }
        }
        let skip_p0 = match (args.skip_p0, args.with_p0) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => cfg.skip_p0,
        };
        let renormalize = match (args.no_renormalize, args.renormalize) {
            (true, _) => Some(false),
            (_, true) => Some(true),
            _ => cfg.renormalize,
        };
        let k = args.k.or(cfg.k);
        if k == Some(0) {
            bail!("k must be at least 1");
        }
        Ok(Self {
            lambdas,
            skip_p0,
            renormalize,
            k,
            seed: args.seed.or(cfg.seed),
            out: args.out.or(cfg.out),
            prompts: args.prompts.or(cfg.prompts),
            projection: args.projection.or(cfg.projection),
            input: args.input.or(cfg.input),
            images: args.images.or(cfg.images),
            queries: args.queries.or(cfg.queries),
            attributes: args.attributes.or(cfg.attributes),
            pairs: args.pairs.or(cfg.pairs),
            heldout: args.heldout.or(cfg.heldout),
            targets: args.targets.or(cfg.targets),
        })
    }

    pub fn lambdas_or(&self, default: f64) -> Vec<f64> {
        self.lambdas.clone().unwrap_or_else(|| vec![default])
    }

    /// Exactly one λ, for commands that build a single matrix.
    pub fn single_lambda(&self, default: f64) -> Result<f64> {
        match self.lambdas.as_deref() {
            None => Ok(default),
            Some([l]) => Ok(*l),
            Some(_) => bail!("this command takes a single lambda"),
        }
    }

    pub fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        match value {
            Some(p) => Ok(p),
            None => bail!("missing --{flag}"),
        }
    }
}
