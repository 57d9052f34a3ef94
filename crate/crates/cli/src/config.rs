//! Run configuration with three layers of precedence: built-in defaults,
//! then a flat `key=value` config file, then command-line flags. File keys
//! are the flag names with dashes removed (`latent-dim` -> `latentdim`).

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use std::path::{Path, PathBuf};
use svat_core::ranker::PsiKind;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub epsilon: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub lookback: usize,
    pub latent_dim: usize,
    pub k: usize,
    pub samples: usize,
    pub rf: f64,
    pub stocks: usize,
    pub days: usize,
    pub backbone: PsiKind,
    pub embed_dim: usize,
    pub head_hidden: usize,
    pub vpg_hidden: usize,
    pub train_end: Option<NaiveDate>,
    pub valid_end: Option<NaiveDate>,
    pub pair_subsample: Option<usize>,
    pub sweep_k: Option<(usize, usize)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            data: None,
            out: None,
            epsilon: 0.05,
            alpha: 0.5,
            lambda: 0.5,
            lr: 5e-3,
            epochs: 100,
            lookback: 8,
            latent_dim: 16,
            k: 5,
            samples: 50,
            rf: 0.0,
            stocks: 20,
            days: 300,
            backbone: PsiKind::Recurrent,
            embed_dim: 64,
            head_hidden: 64,
            vpg_hidden: 128,
            train_end: None,
            valid_end: None,
            pair_subsample: None,
            sweep_k: None,
        }
    }
}

/// Optional values collected from the command line; `None` means "not given".
#[derive(Debug, Default, Clone, clap::Args)]
pub struct CommonArgs {
    /// Flat key=value config file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Panel directory of per-symbol CSVs.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Perturbation radius (l2).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Pairwise loss weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Adversarial + KL loss weight; 0 trains the plain baseline.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Lookback window length.
    #[arg(long)]
    pub lookback: Option<usize>,
    /// Latent risk-factor dimension.
    #[arg(long = "latent-dim")]
    pub latent_dim: Option<usize>,
    /// Portfolio size.
    #[arg(long)]
    pub k: Option<usize>,
    /// Monte-Carlo perturbation samples per stock.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Daily risk-free rate.
    #[arg(long)]
    pub rf: Option<f64>,
    /// Synthetic market: number of stocks.
    #[arg(long)]
    pub stocks: Option<usize>,
    /// Synthetic market: number of trading days.
    #[arg(long)]
    pub days: Option<usize>,
    /// Transformation: concat or recurrent.
    #[arg(long)]
    pub backbone: Option<String>,
    /// Embedding dimension.
    #[arg(long = "embed-dim")]
    pub embed_dim: Option<usize>,
    /// Scoring-head hidden width.
    #[arg(long = "head-hidden")]
    pub head_hidden: Option<usize>,
    /// Generator hidden width (two layers each for encoder/prior/decoder).
    #[arg(long = "vpg-hidden")]
    pub vpg_hidden: Option<usize>,
    /// Last date (inclusive) of the training range, YYYY-MM-DD.
    #[arg(long = "train-end")]
    pub train_end: Option<String>,
    /// Last date (inclusive) of the validation range, YYYY-MM-DD.
    #[arg(long = "valid-end")]
    pub valid_end: Option<String>,
    /// Cap on pairwise partners per anchor (exact O(N^2) when absent).
    #[arg(long = "pair-subsample")]
    pub pair_subsample: Option<usize>,
    /// Backtest k sweep, e.g. 1:10.
    #[arg(long = "sweep-k")]
    pub sweep_k: Option<String>,
}

fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").with_context(|| format!("bad date `{s}`"))
}

fn parse_backbone(s: &str) -> Result<PsiKind> {
    match s {
        "concat" => Ok(PsiKind::Concat),
        "recurrent" => Ok(PsiKind::Recurrent),
        other => bail!("unknown backbone `{other}` (use concat or recurrent)"),
    }
}

fn parse_sweep(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s
        .split_once(':')
        .with_context(|| format!("bad sweep `{s}`, expected a:b"))?;
    let lo: usize = a.trim().parse().with_context(|| format!("bad sweep lower bound `{a}`"))?;
    let hi: usize = b.trim().parse().with_context(|| format!("bad sweep upper bound `{b}`"))?;
    if lo == 0 || hi < lo {
        bail!("sweep bounds must satisfy 1 <= a <= b, got {lo}:{hi}");
    }
    Ok((lo, hi))
}

impl RunConfig {
    /// Defaults, overlaid by the config file (if any), overlaid by flags.
    pub fn resolve(args: &CommonArgs) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_args(args)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key=value", path.display(), no + 1))?;
            let key: String = key
                .trim()
                .to_ascii_lowercase()
                .chars()
                .filter(|c| *c != '-' && *c != '_')
                .collect();
            let value = value.trim();
            self.apply_kv(&key, value)
                .with_context(|| format!("{}:{}", path.display(), no + 1))?;
        }
        Ok(())
    }

    fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = value.parse()?,
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "epsilon" => self.epsilon = value.parse()?,
            "alpha" => self.alpha = value.parse()?,
            "lambda" => self.lambda = value.parse()?,
            "lr" => self.lr = value.parse()?,
            "epochs" => self.epochs = value.parse()?,
            "lookback" => self.lookback = value.parse()?,
            "latentdim" => self.latent_dim = value.parse()?,
            "k" => self.k = value.parse()?,
            "samples" => self.samples = value.parse()?,
            "rf" => self.rf = value.parse()?,
            "stocks" => self.stocks = value.parse()?,
            "days" => self.days = value.parse()?,
            "backbone" => self.backbone = parse_backbone(value)?,
            "embeddim" => self.embed_dim = value.parse()?,
            "headhidden" => self.head_hidden = value.parse()?,
            "vpghidden" => self.vpg_hidden = value.parse()?,
            "trainend" => self.train_end = Some(parse_date(value)?),
            "validend" => self.valid_end = Some(parse_date(value)?),
            "pairsubsample" => self.pair_subsample = Some(value.parse()?),
            "sweepk" => self.sweep_k = Some(parse_sweep(value)?),
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    fn apply_args(&mut self, args: &CommonArgs) -> Result<()> {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &args.$field {
                    self.$field = v.clone();
                }
            };
        }
        take!(seed);
        take!(epsilon);
        take!(alpha);
        take!(lambda);
        take!(lr);
        take!(epochs);
        take!(lookback);
        take!(latent_dim);
        take!(k);
        take!(samples);
        take!(rf);
        take!(stocks);
        take!(days);
        take!(embed_dim);
        take!(head_hidden);
        take!(vpg_hidden);
        if let Some(v) = &args.data {
            self.data = Some(v.clone());
        }
        if let Some(v) = &args.out {
            self.out = Some(v.clone());
        }
        if let Some(v) = &args.backbone {
            self.backbone = parse_backbone(v)?;
        }
        if let Some(v) = &args.train_end {
            self.train_end = Some(parse_date(v)?);
        }
        if let Some(v) = &args.valid_end {
            self.valid_end = Some(parse_date(v)?);
        }
        if let Some(v) = args.pair_subsample {
            self.pair_subsample = Some(v);
        }
        if let Some(v) = &args.sweep_k {
            self.sweep_k = Some(parse_sweep(v)?);
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            bail!("usage error: epsilon must be > 0, got {}", self.epsilon);
        }
        if self.alpha <= 0.0 {
            bail!("usage error: alpha must be > 0, got {}", self.alpha);
        }
        if self.lambda < 0.0 {
            bail!("usage error: lambda must be >= 0, got {}", self.lambda);
        }
        if self.lr <= 0.0 {
            bail!("usage error: lr must be > 0, got {}", self.lr);
        }
        if self.epochs == 0 || self.lookback == 0 || self.latent_dim == 0 {
            bail!("usage error: epochs, lookback and latent-dim must be at least 1");
        }
        if self.k == 0 {
            bail!("usage error: k must be at least 1");
        }
        if self.samples == 0 {
            bail!("usage error: samples must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn args() -> CommonArgs {
        CommonArgs::default()
    }

    #[test]
    fn defaults_match_documented_values() {
        let cfg = RunConfig::resolve(&args()).unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.samples, 50);
        assert_eq!(cfg.epochs, 100);
        assert!(cfg.epsilon >= 0.001 && cfg.epsilon <= 0.1);
        assert!(cfg.alpha >= 0.1 && cfg.alpha <= 1.0);
        assert!(cfg.lambda >= 0.1 && cfg.lambda <= 1.0);
    }

    #[test]
    fn file_overrides_defaults_and_flags_override_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "# comment\nepsilon = 0.01\nlatent-dim=8\nk=3").unwrap();

        let mut a = args();
        a.config = Some(f.path().to_path_buf());
        let cfg = RunConfig::resolve(&a).unwrap();
        assert_eq!(cfg.epsilon, 0.01);
        assert_eq!(cfg.latent_dim, 8);
        assert_eq!(cfg.k, 3);

        let mut a = args();
        a.config = Some(f.path().to_path_buf());
        a.epsilon = Some(0.1);
        let cfg = RunConfig::resolve(&a).unwrap();
        assert_eq!(cfg.epsilon, 0.1);
        assert_eq!(cfg.latent_dim, 8);
    }

    #[test]
    fn file_keys_drop_dashes_and_underscores() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "latentdim=4\nembed_dim=32\nvpg-hidden=16").unwrap();
        let mut a = args();
        a.config = Some(f.path().to_path_buf());
        let cfg = RunConfig::resolve(&a).unwrap();
        assert_eq!(cfg.latent_dim, 4);
        assert_eq!(cfg.embed_dim, 32);
        assert_eq!(cfg.vpg_hidden, 16);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "epsilonn=0.01").unwrap();
        let mut a = args();
        a.config = Some(f.path().to_path_buf());
        assert!(RunConfig::resolve(&a).is_err());
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let mut a = args();
        a.epsilon = Some(-1.0);
        assert!(RunConfig::resolve(&a).is_err());
        let mut a = args();
        a.sweep_k = Some("5:1".into());
        assert!(RunConfig::resolve(&a).is_err());
        let mut a = args();
        a.backbone = Some("magic".into());
        assert!(RunConfig::resolve(&a).is_err());
    }
}
