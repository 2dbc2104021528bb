use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRNetConfig {
    pub in_channels: usize,
    /// Foreground classes plus background.
    pub num_classes: usize,
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    /// Sorted subset of {3, 5}; one MWCN level per kernel.
    pub kernel_set: Vec<usize>,
    pub use_cfa: bool,
    /// `false` fuses the two branches with fixed 0.5/0.5 weights.
    pub use_gfwm: bool,
    /// `false` swaps every encoder stage for a plain double-conv UNet block.
    pub use_mwcn: bool,
    pub mwcn_residual: bool,
    pub wtconv_levels: usize,
    pub cfa_patch: usize,
    pub leaky_slope: f64,
    pub layernorm_eps: f64,
    /// GFWM matrices are stored per pixel, so the model is built for one
    /// input extent.
    pub input_height: usize,
    pub input_width: usize,
    /// Seeds weight init and the frozen CFA grouping permutations.
    pub seed: u64,
}

impl Default for PRNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            num_classes: 10,
            stem_channels: 64,
            stage_channels: vec![64, 128, 256, 512],
            blocks_per_stage: vec![1, 1, 2, 1],
            kernel_set: vec![3, 5],
            use_cfa: true,
            use_gfwm: true,
            use_mwcn: true,
            mwcn_residual: true,
            wtconv_levels: 2,
            cfa_patch: 2,
            leaky_slope: 0.01,
            layernorm_eps: 1e-5,
            input_height: 256,
            input_width: 256,
            seed: 0,
        }
    }
}

/// The rows of the component ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Unet,
    UnetCfa,
    MwcnK3,
    MwcnK5,
    MwcnBoth,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Unet,
        Ablation::UnetCfa,
        Ablation::MwcnK3,
        Ablation::MwcnK5,
        Ablation::MwcnBoth,
        Ablation::Full,
    ];

    pub fn apply(self, cfg: &PRNetConfig) -> PRNetConfig {
        let mut c = cfg.clone();
        let (cfa, mwcn, kernels, gfwm) = match self {
            Ablation::Unet => (false, false, vec![3, 5], false),
            Ablation::UnetCfa => (true, false, vec![3, 5], false),
            Ablation::MwcnK3 => (true, true, vec![3], false),
            Ablation::MwcnK5 => (true, true, vec![5], false),
            Ablation::MwcnBoth => (true, true, vec![3, 5], false),
            Ablation::Full => (true, true, vec![3, 5], true),
        };
        c.use_cfa = cfa;
        c.use_mwcn = mwcn;
        c.kernel_set = kernels;
        c.use_gfwm = gfwm;
        c
    }

    pub fn label(self) -> &'static str {
        match self {
            Ablation::Unet => "unet",
            Ablation::UnetCfa => "unet+cfa",
            Ablation::MwcnK3 => "mwcn-k3+cfa",
            Ablation::MwcnK5 => "mwcn-k5+cfa",
            Ablation::MwcnBoth => "mwcn-k3k5+cfa",
            Ablation::Full => "prnet",
        }
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: {v:?} is not a list of integers")))
        })
        .collect()
}

fn parse_val<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl PRNetConfig {
    /// Same topology with every width divided down to `stem` at stage 1
    /// (stage widths `stem·[1,2,4,8]`), sized for desk-scale runs.
    pub fn with_base_width(mut self, stem: usize) -> Self {
        self.stem_channels = stem;
        self.stage_channels = vec![stem, 2 * stem, 4 * stem, 8 * stem];
        self
    }

    pub fn with_input(mut self, h: usize, w: usize) -> Self {
        self.input_height = h;
        self.input_width = w;
        self
    }

    /// Input extents must be multiples of this.
    pub fn required_multiple(&self) -> usize {
        if self.use_cfa {
            // F_3 sits at 1/4 resolution and is folded into 2s×2s patches.
            8 * self.cfa_patch.max(1)
        } else {
            8
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stage_channels.len() != 4 || self.blocks_per_stage.len() != 4 {
            return bad("stage_channels and blocks_per_stage need exactly 4 entries".into());
        }
        if self.stage_channels.contains(&0) || self.stem_channels == 0 || self.in_channels == 0 {
            return bad("channel widths must be positive".into());
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return bad(format!("num_classes {} outside 2..=256", self.num_classes));
        }
        if self.use_mwcn && self.blocks_per_stage.contains(&0) {
            return bad("every stage needs at least one MWCN block".into());
        }
        let mut ks = self.kernel_set.clone();
        ks.sort_unstable();
        ks.dedup();
        if ks.is_empty() || ks != self.kernel_set || ks.iter().any(|k| *k != 3 && *k != 5) {
            return bad(format!(
                "kernel_set {:?} must be a sorted subset of {{3,5}}",
                self.kernel_set
            ));
        }
        if self.wtconv_levels > 3 {
            return bad(format!("wtconv_levels {} outside 0..=3", self.wtconv_levels));
        }
        if self.cfa_patch == 0 {
            return bad("cfa_patch must be positive".into());
        }
        if self.leaky_slope < 0.0 || self.layernorm_eps <= 0.0 {
            return bad("leaky_slope must be >= 0 and layernorm_eps > 0".into());
        }
        self.check_input(self.input_height, self.input_width)
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.required_multiple();
        if h == 0 || w == 0 || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            let why = if self.use_cfa {
                format!(
                    "must be divisible by {m} (8 for the encoder, 4·2s = {} for CFA on F_3)",
                    8 * self.cfa_patch
                )
            } else {
                "must be divisible by 8 for the encoder".to_string()
            };
            return Err(Error::divisibility(
                "model_forward",
                format!("input extent {h}x{w} {why}"),
            ));
        }
        Ok(())
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "in_channels" => self.in_channels = parse_val(key, v)?,
            "num_classes" => self.num_classes = parse_val(key, v)?,
            "stem_channels" => self.stem_channels = parse_val(key, v)?,
            "stage_channels" => self.stage_channels = parse_list(key, v)?,
            "blocks_per_stage" => self.blocks_per_stage = parse_list(key, v)?,
            "kernel_set" => self.kernel_set = parse_list(key, v)?,
            "use_cfa" => self.use_cfa = parse_val(key, v)?,
            "use_gfwm" => self.use_gfwm = parse_val(key, v)?,
            "use_mwcn" => self.use_mwcn = parse_val(key, v)?,
            "mwcn_residual" => self.mwcn_residual = parse_val(key, v)?,
            "wtconv_levels" => self.wtconv_levels = parse_val(key, v)?,
            "cfa_patch" => self.cfa_patch = parse_val(key, v)?,
            "leaky_slope" => self.leaky_slope = parse_val(key, v)?,
            "layernorm_eps" => self.layernorm_eps = parse_val(key, v)?,
            "input_height" => self.input_height = parse_val(key, v)?,
            "input_width" => self.input_width = parse_val(key, v)?,
            "input_size" => {
                let s: usize = parse_val(key, v)?;
                self.input_height = s;
                self.input_width = s;
            }
            "model_seed" => self.seed = parse_val(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// All settings as `key=value` lines, in a fixed order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        vec![
            ("in_channels".into(), self.in_channels.to_string()),
            ("num_classes".into(), self.num_classes.to_string()),
            ("stem_channels".into(), self.stem_channels.to_string()),
            ("stage_channels".into(), list(&self.stage_channels)),
            ("blocks_per_stage".into(), list(&self.blocks_per_stage)),
            ("kernel_set".into(), list(&self.kernel_set)),
            ("use_cfa".into(), self.use_cfa.to_string()),
            ("use_gfwm".into(), self.use_gfwm.to_string()),
            ("use_mwcn".into(), self.use_mwcn.to_string()),
            ("mwcn_residual".into(), self.mwcn_residual.to_string()),
            ("wtconv_levels".into(), self.wtconv_levels.to_string()),
            ("cfa_patch".into(), self.cfa_patch.to_string()),
            ("leaky_slope".into(), self.leaky_slope.to_string()),
            ("layernorm_eps".into(), self.layernorm_eps.to_string()),
            ("input_height".into(), self.input_height.to_string()),
            ("input_width".into(), self.input_width.to_string()),
            ("model_seed".into(), self.seed.to_string()),
        ]
    }
}
