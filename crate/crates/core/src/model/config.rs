use crate::attention::Mechanism;
use crate::error::{Error, Result};

/// Architecture hyperparameters of a [`super::FactFormer`].
#[derive(Debug, Clone, PartialEq)]
pub struct FactFormerConfig {
    pub grid: Vec<usize>,
    pub in_channels: usize,
    pub context: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub lambda: f64,
    pub march_steps: usize,
    pub seed: u64,
    pub mechanism: Mechanism,
    pub rff_sigma: f64,
    /// One positional encoder shared by all blocks; otherwise one per block.
    pub shared_pos_encoding: bool,
    /// Take each block's residual from the value before the positional term is added.
    pub skip_before_pos: bool,
}

impl Default for FactFormerConfig {
    fn default() -> Self {
        FactFormerConfig {
            grid: vec![32, 32],
            in_channels: 1,
            context: 4,
            width: 32,
            depth: 2,
            heads: 4,
            head_dim: 16,
            lambda: 64.0,
            march_steps: 4,
            seed: 0,
            mechanism: Mechanism::Factorized,
            rff_sigma: 1.0,
            shared_pos_encoding: true,
            skip_before_pos: false,
        }
    }
}

pub(crate) fn parse_grid(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("grid {s:?} is not of the form S1xS2...")))
        })
        .collect()
}

pub(crate) fn format_grid(grid: &[usize]) -> String {
    grid.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl FactFormerConfig {
    /// Keys accepted by [`FactFormerConfig::set`], in serialization order.
    pub const KEYS: [&'static str; 14] = [
        "grid",
        "in_channels",
        "context",
        "width",
        "depth",
        "heads",
        "head_dim",
        "lambda",
        "march_steps",
        "seed",
        "mechanism",
        "rff_sigma",
        "shared_pos_encoding",
        "skip_before_pos",
    ];

    pub fn axes(&self) -> usize {
        self.grid.len()
    }

    pub fn points(&self) -> usize {
        self.grid.iter().product()
    }

    /// Frame shape `[S_1, ..., S_n, c]`.
    pub fn frame_shape(&self) -> Vec<usize> {
        let mut s = self.grid.clone();
        s.push(self.in_channels);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(1..=3).contains(&self.grid.len()) {
            return fail(format!("grid must have 1 to 3 axes, got {}", self.grid.len()));
        }
        if self.grid.contains(&0) || self.points() < 2 {
            return fail(format!("grid {:?} needs positive extents and at least 2 points", self.grid));
        }
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("context", self.context),
            ("width", self.width),
            ("depth", self.depth),
            ("heads", self.heads),
            ("march_steps", self.march_steps),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.head_dim == 0 || self.head_dim % 2 != 0 {
            return fail(format!("head_dim must be even and positive, got {}", self.head_dim));
        }
        if self.mechanism == Mechanism::Factorized && self.width % self.heads != 0 {
            return fail(format!("width {} must be divisible by heads {}", self.width, self.heads));
        }
        if self.mechanism == Mechanism::Linear && (self.head_dim / self.axes()) % 2 != 0 {
            return fail(format!(
                "linear attention splits head_dim {} across {} axes into even blocks",
                self.head_dim,
                self.axes()
            ));
        }
        if self.width < 2 {
            return fail("width must be at least 2 for the positional encoding".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) || !(self.rff_sigma > 0.0 && self.rff_sigma.is_finite()) {
            return fail("lambda and rff_sigma must be positive".into());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "grid" => self.grid = parse_grid(value)?,
            "in_channels" => self.in_channels = parse_value(key, value)?,
            "context" => self.context = parse_value(key, value)?,
            "width" => self.width = parse_value(key, value)?,
            "depth" => self.depth = parse_value(key, value)?,
            "heads" => self.heads = parse_value(key, value)?,
            "head_dim" => self.head_dim = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "march_steps" => self.march_steps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "mechanism" => self.mechanism = value.trim().parse()?,
            "rff_sigma" => self.rff_sigma = parse_value(key, value)?,
            "shared_pos_encoding" => self.shared_pos_encoding = parse_value(key, value)?,
            "skip_before_pos" => self.skip_before_pos = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown model key {other:?}"))),
        }
        Ok(())
    }

    /// Every field as a `(key, value)` text pair; values round-trip exactly through [`FactFormerConfig::set`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let values = [
            format_grid(&self.grid),
            self.in_channels.to_string(),
            self.context.to_string(),
            self.width.to_string(),
            self.depth.to_string(),
            self.heads.to_string(),
            self.head_dim.to_string(),
            self.lambda.to_string(),
            self.march_steps.to_string(),
            self.seed.to_string(),
            self.mechanism.to_string(),
            self.rff_sigma.to_string(),
            self.shared_pos_encoding.to_string(),
            self.skip_before_pos.to_string(),
        ];
        Self::KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = FactFormerConfig::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
