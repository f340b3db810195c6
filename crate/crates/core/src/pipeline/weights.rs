use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::{Attention, Linear, Mlp, ParamSet};
use crate::scene::DEFAULT_ROI_WINDOW;
use crate::{Error, Result};

/// Model dimensions and initialization seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Token width `c`.
    pub width: usize,
    pub heads: usize,
    /// Number of decoder blocks `D`.
    pub depth: usize,
    /// Persistent state size `K`.
    pub state_tokens: usize,
    /// Prior feature width `c_p`.
    pub prior_width: usize,
    pub vertices: usize,
    pub joints: usize,
    /// RoI pooling window for the geometry token.
    pub window: usize,
    /// Side of the square pixel patch behind each image token.
    pub patch: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            width: 64,
            heads: 4,
            depth: 2,
            state_tokens: 16,
            prior_width: 32,
            vertices: crate::body::DEFAULT_VERTICES,
            joints: crate::body::DEFAULT_JOINTS,
            window: DEFAULT_ROI_WINDOW,
            patch: 4,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("heads", self.heads),
            ("state_tokens", self.state_tokens),
            ("prior_width", self.prior_width),
            ("vertices", self.vertices),
            ("joints", self.joints),
            ("patch", self.patch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::arg(format!("pipeline {name} must be positive")));
            }
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::arg("pipeline width must be a multiple of heads"));
        }
        if self.window.is_multiple_of(2) {
            return Err(Error::arg("pipeline RoI window must be odd"));
        }
        Ok(())
    }

    /// Width of one person's raw body-parameter row: pose, shape, translation.
    pub fn body_dim(&self) -> usize {
        3 * self.joints + self.joints + 3
    }
}

/// One stand-in decoder block: self-attention over all tokens,
/// cross-attention to the state, then a feed-forward MLP, each residual.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBlock {
    pub self_attn: Attention,
    pub cross_attn: Attention,
    pub ffn: Mlp,
}

impl DecoderBlock {
    fn zeros_like(&self) -> Self {
        DecoderBlock {
            self_attn: self.self_attn.zeros_like(),
            cross_attn: self.cross_attn.zeros_like(),
            ffn: self.ffn.zeros_like(),
        }
    }
}

impl ParamSet for DecoderBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'_, f64>)) {
        self.self_attn.visit(&format!("{prefix}.self_attn"), f);
        self.cross_attn.visit(&format!("{prefix}.cross_attn"), f);
        self.ffn.visit(&format!("{prefix}.ffn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        self.self_attn.visit_mut(&format!("{prefix}.self_attn"), f);
        self.cross_attn.visit_mut(&format!("{prefix}.cross_attn"), f);
        self.ffn.visit_mut(&format!("{prefix}.ffn"), f);
    }
}

/// Named weight groups. Frozen groups stand in for pretrained modules and
/// are never touched by gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightGroup {
    ImageEmbed,
    PoseToken,
    PriorProj,
    StateInit,
    Decoder,
    StateUpdate,
    CaCurr,
    CaMem,
    Gate,
    Geometry,
    Momentum,
    Fusion,
    Augment,
    ContactHead,
    Residual,
    HumanHead,
}

impl WeightGroup {
    pub const ALL: [WeightGroup; 16] = [
        WeightGroup::ImageEmbed,
        WeightGroup::PoseToken,
        WeightGroup::PriorProj,
        WeightGroup::StateInit,
        WeightGroup::Decoder,
        WeightGroup::StateUpdate,
        WeightGroup::CaCurr,
        WeightGroup::CaMem,
        WeightGroup::Gate,
        WeightGroup::Geometry,
        WeightGroup::Momentum,
        WeightGroup::Fusion,
        WeightGroup::Augment,
        WeightGroup::ContactHead,
        WeightGroup::Residual,
        WeightGroup::HumanHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightGroup::ImageEmbed => "image_embed",
            WeightGroup::PoseToken => "pose_token",
            WeightGroup::PriorProj => "prior_proj",
            WeightGroup::StateInit => "state_init",
            WeightGroup::Decoder => "decoder",
            WeightGroup::StateUpdate => "state_update",
            WeightGroup::CaCurr => "ca_curr",
            WeightGroup::CaMem => "ca_mem",
            WeightGroup::Gate => "gate",
            WeightGroup::Geometry => "geometry",
            WeightGroup::Momentum => "momentum",
            WeightGroup::Fusion => "fusion",
            WeightGroup::Augment => "augment",
            WeightGroup::ContactHead => "contact_head",
            WeightGroup::Residual => "residual",
            WeightGroup::HumanHead => "human_head",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == name)
    }

    pub fn frozen(self) -> bool {
        matches!(
            self,
            WeightGroup::ImageEmbed
                | WeightGroup::PoseToken
                | WeightGroup::PriorProj
                | WeightGroup::StateInit
                | WeightGroup::Decoder
                | WeightGroup::StateUpdate
        )
    }

    pub fn learnable() -> impl Iterator<Item = WeightGroup> {
        Self::ALL.into_iter().filter(|g| !g.frozen())
    }
}

/// Every parameter of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineWeights {
    pub config: PipelineConfig,
    /// Patch statistics (mean point, valid fraction) to token width.
    pub image_embed: Linear,
    pub pose_token: Array1<f64>,
    pub prior_proj: Linear,
    pub state_init: Array2<f64>,
    pub decoder: Vec<DecoderBlock>,
    pub state_update: Attention,
    pub ca_curr: Attention,
    pub ca_mem: Attention,
    pub gate: Mlp,
    pub geometry: Mlp,
    pub momentum: Mlp,
    pub fusion: Mlp,
    pub augment_human: Linear,
    pub augment_contact: Linear,
    pub contact_head: Mlp,
    pub residual: Mlp,
    pub human_head: Linear,
}

/// Gain of projections that write into a residual stream.
const RESIDUAL_GAIN: f64 = 0.5;
const HUMAN_HEAD_GAIN: f64 = 0.1;

impl PipelineWeights {
    /// Deterministic initialization from `config.seed`.
    pub fn init(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let c = config.width;
        let h = config.heads;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut decoder = Vec::with_capacity(config.depth);
        let image_embed = Linear::init(4, c, 1.0, &mut rng);
        let pose_token = Array1::from_shape_simple_fn(c, || unit.sample(&mut rng));
        let prior_proj = Linear::init(config.prior_width, c, 1.0, &mut rng);
        let state_init = Array2::from_shape_simple_fn((config.state_tokens, c), || unit.sample(&mut rng));
        for _ in 0..config.depth {
            decoder.push(DecoderBlock {
                self_attn: Attention::init(c, h, RESIDUAL_GAIN, &mut rng)?,
                cross_attn: Attention::init(c, h, RESIDUAL_GAIN, &mut rng)?,
                ffn: Mlp::init(c, c, RESIDUAL_GAIN, &mut rng),
            });
        }
        Ok(PipelineWeights {
            config: config.clone(),
            image_embed,
            pose_token,
            prior_proj,
            state_init,
            decoder,
            state_update: Attention::init(c, h, RESIDUAL_GAIN, &mut rng)?,
            ca_curr: Attention::init(c, h, 1.0, &mut rng)?,
            ca_mem: Attention::init(c, h, 1.0, &mut rng)?,
            gate: Mlp::init(3 * c, c, 1.0, &mut rng),
            geometry: Mlp::init(3, c, 1.0, &mut rng),
            momentum: Mlp::init(c, c, 1.0, &mut rng),
            fusion: Mlp::init(4 * c, c, 1.0, &mut rng),
            augment_human: Linear::init(c + config.prior_width, c, 1.0, &mut rng),
            augment_contact: Linear::init(c + config.prior_width, c, 1.0, &mut rng),
            contact_head: Mlp::init(c, config.vertices, 1.0, &mut rng),
            residual: Mlp::init(c, c, RESIDUAL_GAIN, &mut rng),
            human_head: Linear::init(c, config.body_dim(), HUMAN_HEAD_GAIN, &mut rng),
        })
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        PipelineWeights {
            config: self.config.clone(),
            image_embed: self.image_embed.zeros_like(),
            pose_token: Array1::zeros(self.pose_token.len()),
            prior_proj: self.prior_proj.zeros_like(),
            state_init: Array2::zeros(self.state_init.raw_dim()),
            decoder: self.decoder.iter().map(DecoderBlock::zeros_like).collect(),
            state_update: self.state_update.zeros_like(),
            ca_curr: self.ca_curr.zeros_like(),
            ca_mem: self.ca_mem.zeros_like(),
            gate: self.gate.zeros_like(),
            geometry: self.geometry.zeros_like(),
            momentum: self.momentum.zeros_like(),
            fusion: self.fusion.zeros_like(),
            augment_human: self.augment_human.zeros_like(),
            augment_contact: self.augment_contact.zeros_like(),
            contact_head: self.contact_head.zeros_like(),
            residual: self.residual.zeros_like(),
            human_head: self.human_head.zeros_like(),
        }
    }

    /// Zeroes every parameter of the residual head, so `ΔH = 0` exactly.
    pub fn zero_residual(&mut self) {
        self.residual = self.residual.zeros_like();
    }

    /// Visits the parameters of one group with fully qualified names.
    pub fn visit_group(&self, group: WeightGroup, f: &mut dyn FnMut(String, ArrayViewD<'_, f64>)) {
        let p = group.name();
        match group {
            WeightGroup::ImageEmbed => self.image_embed.visit(p, f),
            WeightGroup::PoseToken => f(p.to_string(), self.pose_token.view().into_dyn()),
            WeightGroup::PriorProj => self.prior_proj.visit(p, f),
            WeightGroup::StateInit => f(p.to_string(), self.state_init.view().into_dyn()),
            WeightGroup::Decoder => {
                for (i, b) in self.decoder.iter().enumerate() {
                    b.visit(&format!("{p}.{i}"), f);
                }
            }
            WeightGroup::StateUpdate => self.state_update.visit(p, f),
            WeightGroup::CaCurr => self.ca_curr.visit(p, f),
            WeightGroup::CaMem => self.ca_mem.visit(p, f),
            WeightGroup::Gate => self.gate.visit(p, f),
            WeightGroup::Geometry => self.geometry.visit(p, f),
            WeightGroup::Momentum => self.momentum.visit(p, f),
            WeightGroup::Fusion => self.fusion.visit(p, f),
            WeightGroup::Augment => {
                self.augment_human.visit(&format!("{p}.human"), f);
                self.augment_contact.visit(&format!("{p}.contact"), f);
            }
            WeightGroup::ContactHead => self.contact_head.visit(p, f),
            WeightGroup::Residual => self.residual.visit(p, f),
            WeightGroup::HumanHead => self.human_head.visit(p, f),
        }
    }

    pub fn visit_group_mut(
        &mut self,
        group: WeightGroup,
        f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>),
    ) {
        let p = group.name();
        match group {
            WeightGroup::ImageEmbed => self.image_embed.visit_mut(p, f),
            WeightGroup::PoseToken => f(p.to_string(), self.pose_token.view_mut().into_dyn()),
            WeightGroup::PriorProj => self.prior_proj.visit_mut(p, f),
            WeightGroup::StateInit => f(p.to_string(), self.state_init.view_mut().into_dyn()),
            WeightGroup::Decoder => {
                for (i, b) in self.decoder.iter_mut().enumerate() {
                    b.visit_mut(&format!("{p}.{i}"), f);
                }
            }
            WeightGroup::StateUpdate => self.state_update.visit_mut(p, f),
            WeightGroup::CaCurr => self.ca_curr.visit_mut(p, f),
            WeightGroup::CaMem => self.ca_mem.visit_mut(p, f),
            WeightGroup::Gate => self.gate.visit_mut(p, f),
            WeightGroup::Geometry => self.geometry.visit_mut(p, f),
            WeightGroup::Momentum => self.momentum.visit_mut(p, f),
            WeightGroup::Fusion => self.fusion.visit_mut(p, f),
            WeightGroup::Augment => {
                self.augment_human.visit_mut(&format!("{p}.human"), f);
                self.augment_contact.visit_mut(&format!("{p}.contact"), f);
            }
            WeightGroup::ContactHead => self.contact_head.visit_mut(p, f),
            WeightGroup::Residual => self.residual.visit_mut(p, f),
            WeightGroup::HumanHead => self.human_head.visit_mut(p, f),
        }
    }

    /// Number of scalar parameters in a group.
    pub fn group_len(&self, group: WeightGroup) -> usize {
        let mut n = 0;
        self.visit_group(group, &mut |_, a| n += a.len());
        n
    }

    /// Checks every shape against the configuration.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let c = cfg.width;
        let lin = |l: &Linear, i: usize, o: usize, what: &str| -> Result<()> {
            if l.weight.dim() != (i, o) || l.bias.len() != o {
                return Err(Error::Schema(format!(
                    "{what}: expected {i}x{o}, found {:?}",
                    l.weight.dim()
                )));
            }
            Ok(())
        };
        let mlp = |m: &Mlp, i: usize, o: usize, what: &str| -> Result<()> {
            lin(&m.fc1, i, 2 * i, what)?;
            lin(&m.fc2, 2 * i, o, what)
        };
        let att = |a: &Attention, what: &str| -> Result<()> {
            if a.heads != cfg.heads {
                return Err(Error::Schema(format!("{what}: head count differs from config")));
            }
            for l in [&a.query, &a.key, &a.value, &a.output] {
                lin(l, c, c, what)?;
            }
            Ok(())
        };
        lin(&self.image_embed, 4, c, "image_embed")?;
        lin(&self.prior_proj, cfg.prior_width, c, "prior_proj")?;
        if self.pose_token.len() != c || self.state_init.dim() != (cfg.state_tokens, c) {
            return Err(Error::Schema("pose token or state shape differs from config".into()));
        }
        if self.decoder.len() != cfg.depth {
            return Err(Error::Schema("decoder depth differs from config".into()));
        }
        for b in &self.decoder {
            att(&b.self_attn, "decoder")?;
            att(&b.cross_attn, "decoder")?;
            mlp(&b.ffn, c, c, "decoder")?;
        }
        att(&self.state_update, "state_update")?;
        att(&self.ca_curr, "ca_curr")?;
        att(&self.ca_mem, "ca_mem")?;
        mlp(&self.gate, 3 * c, c, "gate")?;
        mlp(&self.geometry, 3, c, "geometry")?;
        mlp(&self.momentum, c, c, "momentum")?;
        mlp(&self.fusion, 4 * c, c, "fusion")?;
        lin(&self.augment_human, c + cfg.prior_width, c, "augment")?;
        lin(&self.augment_contact, c + cfg.prior_width, c, "augment")?;
        mlp(&self.contact_head, c, cfg.vertices, "contact_head")?;
        mlp(&self.residual, c, c, "residual")?;
        lin(&self.human_head, c, cfg.body_dim(), "human_head")
    }
}

impl ParamSet for PipelineWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'_, f64>)) {
        for g in WeightGroup::ALL {
            self.visit_group(g, &mut |name, a| {
                let full = if prefix.is_empty() { name } else { format!("{prefix}.{name}") };
                f(full, a)
            });
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        for g in WeightGroup::ALL {
            self.visit_group_mut(g, &mut |name, a| {
                let full = if prefix.is_empty() { name } else { format!("{prefix}.{name}") };
                f(full, a)
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PipelineConfig {
        PipelineConfig {
            width: 8,
            heads: 2,
            depth: 1,
            state_tokens: 4,
            prior_width: 5,
            vertices: 16,
            joints: 3,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_valid() {
        let a = PipelineWeights::init(&small()).unwrap();
        let b = PipelineWeights::init(&small()).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        let other = PipelineWeights::init(&PipelineConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn default_dimensions() {
        let w = PipelineWeights::init(&PipelineConfig::default()).unwrap();
        assert_eq!(w.contact_head.output_dim(), 6890);
        assert_eq!(w.human_head.output_dim(), 24 * 4 + 3);
        assert_eq!(w.decoder.len(), 2);
    }

    #[test]
    fn group_names_round_trip() {
        for g in WeightGroup::ALL {
            assert_eq!(WeightGroup::from_name(g.name()), Some(g));
        }
        assert_eq!(WeightGroup::learnable().count(), 10);
        assert!(WeightGroup::Decoder.frozen());
        assert!(!WeightGroup::ContactHead.frozen());
    }

    #[test]
    fn visiting_covers_every_parameter_once() {
        let w = PipelineWeights::init(&small()).unwrap();
        let mut names = Vec::new();
        let mut total = 0;
        w.visit("", &mut |n, a| {
            names.push(n);
            total += a.len();
        });
        let by_group: usize = WeightGroup::ALL.iter().map(|g| w.group_len(*g)).sum();
        assert_eq!(total, by_group);
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert!(names.contains(&"decoder.0.self_attn.query.weight".to_string()));
    }

    #[test]
    fn rejects_inconsistent_config() {
        let bad = PipelineConfig { heads: 3, ..small() };
        assert!(PipelineWeights::init(&bad).is_err());
        let mut w = PipelineWeights::init(&small()).unwrap();
        w.config.vertices = 17;
        assert!(w.validate().is_err());
    }
}
