//! The full CTR model and its baseline variants.
//!
//! Every variant shares the embedding tables, the short-term target attention
//! and the CTR head; they differ only in how the long-term feature is built.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brm::{select_topk, topk_by_lookup, Bucketer, Kind, RetrievalResult, Selection};
use crate::data::Sample;
use crate::embedding::EmbeddingTables;
use crate::error::{GenliError, Result};
use crate::ifm::{CtrHead, GatedFusion, TargetAttention};
use crate::igm::{relative_on_tape, uniform_rows, InterestHead};
use crate::nn::{MhaConfig, ParameterStore, Tape, Tensor2D, Var};

/// Long-term interest module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    /// Generated distributions with lookup retrieval. A removed kind is
    /// replaced by the uniform distribution, loses its retrieval branch and
    /// its auxiliary loss.
    Genli { implicit: bool, explicit: bool, relative: bool },
    /// Mean of all long-term behavior embeddings.
    AvgPool,
    /// Top-k by inner product with the target embedding.
    SimSoft,
    /// Top-k by category match with the target.
    SimHard,
}

impl Variant {
    pub const GENLI: Variant = Variant::Genli { implicit: true, explicit: true, relative: true };

    pub fn uses(&self, kind: Kind) -> bool {
        match (self, kind) {
            (Variant::Genli { implicit, .. }, Kind::Implicit) => *implicit,
            (Variant::Genli { explicit, .. }, Kind::Explicit) => *explicit,
            (Variant::Genli { relative, .. }, Kind::Relative) => *relative,
            _ => false,
        }
    }

    pub fn is_genli(&self) -> bool {
        matches!(self, Variant::Genli { .. })
    }

    pub fn all_names() -> &'static [&'static str] {
        &["genli", "genli-no-implicit", "genli-no-explicit", "genli-no-relative", "avgpool", "sim-soft", "sim-hard"]
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Genli { implicit: true, explicit: true, relative: true } => "genli",
            Variant::Genli { implicit: false, explicit: true, relative: true } => "genli-no-implicit",
            Variant::Genli { implicit: true, explicit: false, relative: true } => "genli-no-explicit",
            Variant::Genli { implicit: true, explicit: true, relative: false } => "genli-no-relative",
            Variant::Genli { implicit, explicit, relative } => {
                return write!(f, "genli-i{}-e{}-r{}", *implicit as u8, *explicit as u8, *relative as u8)
            }
            Variant::AvgPool => "avgpool",
            Variant::SimSoft => "sim-soft",
            Variant::SimHard => "sim-hard",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = GenliError;

    fn from_str(s: &str) -> Result<Self> {
        let g = |implicit, explicit, relative| Variant::Genli { implicit, explicit, relative };
        Ok(match s {
            "genli" => g(true, true, true),
            "genli-no-implicit" => g(false, true, true),
            "genli-no-explicit" => g(true, false, true),
            "genli-no-relative" => g(true, true, false),
            "avgpool" => Variant::AvgPool,
            "sim-soft" => Variant::SimSoft,
            "sim-hard" => Variant::SimHard,
            other => {
                return Err(GenliError::config(format!(
                    "unknown model '{other}', expected one of {}",
                    Variant::all_names().join(", ")
                )))
            }
        })
    }
}

impl TryFrom<String> for Variant {
    type Error = GenliError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

/// Architecture hyper-parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model: Variant,
    pub item_dim: usize,
    pub category_dim: usize,
    /// Distribution size N.
    pub buckets: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Behaviors retrieved per kind.
    pub k: usize,
    /// Short-term window length l.
    pub short_len: usize,
    /// Hidden widths of the distribution and CTR MLPs.
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model: Variant::GENLI,
            item_dim: 4,
            category_dim: 4,
            buckets: 4096,
            heads: 4,
            head_dim: 8,
            k: 20,
            short_len: 10,
            hidden: vec![200, 80],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("item_dim", self.item_dim),
            ("category_dim", self.category_dim),
            ("buckets", self.buckets),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("k", self.k),
            ("short_len", self.short_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(GenliError::config(format!("{name} must be at least 1")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(GenliError::config("hidden widths must be positive"));
        }
        Bucketer::new(self.buckets)?;
        Ok(())
    }

    pub fn behavior_dim(&self) -> usize {
        self.item_dim + self.category_dim
    }

    fn mha(&self) -> MhaConfig {
        MhaConfig { heads: self.heads, head_dim: self.head_dim, input_dim: self.behavior_dim() }
    }
}

/// Parameter layout of one model. Values live in a [`ParameterStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub tables: EmbeddingTables,
    pub implicit: Option<InterestHead>,
    pub explicit: Option<InterestHead>,
    /// Per-kind target attention in [`Kind::ALL`] order (GenLI), or a single
    /// one for retrieval baselines.
    pub long: Vec<Option<TargetAttention>>,
    pub fusion: Option<GatedFusion>,
    pub short: TargetAttention,
    pub ctr: CtrHead,
    pub bucketer: Bucketer,
}

/// Auxiliary-loss weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub implicit: f64,
    pub explicit: f64,
}

/// Tape handles and side outputs of one batched forward pass.
pub struct Forward {
    pub logits: Var,
    pub implicit: Option<Var>,
    pub explicit: Option<Var>,
    pub relative: Option<Var>,
    pub long_feature: Var,
    pub gate: Option<Var>,
    /// Per sample; `None` for variants without lookup retrieval.
    pub retrieval: Vec<Option<RetrievalResult>>,
    /// Per sample, positions selected by a retrieval baseline.
    pub baseline_selection: Vec<Option<Selection<f64>>>,
}

/// Scalar loss node plus its components (batch means).
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub ctr: f64,
    pub implicit: f64,
    pub explicit: f64,
    pub total_value: f64,
}

impl Model {
    /// Builds parameters with a seeded initialization. Vocabulary sizes include
    /// the padding row.
    pub fn new(
        cfg: ModelConfig,
        items: usize,
        categories: usize,
        seed: u64,
        store: &mut ParameterStore,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = EmbeddingTables::new(store, items, categories, cfg.item_dim, cfg.category_dim, &mut rng)?;
        let mha = cfg.mha();
        let dh = cfg.head_dim;
        let mut implicit = None;
        let mut explicit = None;
        let mut long = Vec::new();
        let mut fusion = None;
        let long_width = match cfg.model {
            Variant::Genli { .. } => {
                if cfg.model.uses(Kind::Implicit) {
                    implicit =
                        Some(InterestHead::new(store, "interest.implicit", mha, &cfg.hidden, cfg.buckets, &mut rng)?);
                }
                if cfg.model.uses(Kind::Explicit) {
                    explicit =
                        Some(InterestHead::new(store, "interest.explicit", mha, &cfg.hidden, cfg.buckets, &mut rng)?);
                }
                for kind in Kind::ALL {
                    long.push(if cfg.model.uses(kind) {
                        Some(TargetAttention::new(store, &format!("fusion.{}", kind.name()), mha, &mut rng)?)
                    } else {
                        None
                    });
                }
                fusion = Some(GatedFusion::new(store, "fusion", 3 * dh, dh, &mut rng)?);
                dh
            }
            Variant::AvgPool => cfg.behavior_dim(),
            Variant::SimSoft | Variant::SimHard => {
                long.push(Some(TargetAttention::new(store, "long.attention", mha, &mut rng)?));
                dh
            }
        };
        let short = TargetAttention::new(store, "short.attention", mha, &mut rng)?;
        let ctr = CtrHead::new(store, "ctr", long_width + dh + cfg.behavior_dim(), &cfg.hidden, &mut rng)?;
        let bucketer = Bucketer::new(cfg.buckets)?;
        Ok(Model { cfg, tables, implicit, explicit, long, fusion, short, ctr, bucketer })
    }

    /// Batched forward pass building the tape.
    pub fn forward(&self, tape: &mut Tape, batch: &[&Sample]) -> Result<Forward> {
        let b = batch.len();
        if b == 0 {
            return Err(GenliError::data("empty batch"));
        }
        let l = self.cfg.short_len;
        let mut w_items = Vec::with_capacity(b * l);
        let mut w_cats = Vec::with_capacity(b * l);
        let mut w_mask = Vec::with_capacity(b * l);
        for s in batch {
            let (i, c, m) = s.sequence.window(l);
            w_items.extend(i);
            w_cats.extend(c);
            w_mask.extend(m);
        }
        let window = self.tables.embed(tape, &w_items, &w_cats)?;
        let t_items: Vec<u32> = batch.iter().map(|s| s.target_item).collect();
        let t_cats: Vec<u32> = batch.iter().map(|s| s.target_category).collect();
        let target = self.tables.embed(tape, &t_items, &t_cats)?;

        let mut out = Forward {
            logits: target,
            implicit: None,
            explicit: None,
            relative: None,
            long_feature: target,
            gate: None,
            retrieval: vec![None; b],
            baseline_selection: vec![None; b],
        };

        let long_feature = match self.cfg.model {
            Variant::Genli { .. } => self.genli_long(tape, batch, window, &w_mask, target, &mut out)?,
            Variant::AvgPool => {
                let len = batch[0].sequence.len();
                let mut items = Vec::with_capacity(b * len);
                let mut cats = Vec::with_capacity(b * len);
                let mut mask = Vec::with_capacity(b * len);
                for s in batch {
                    if s.sequence.len() != len {
                        return Err(GenliError::data("sequences in one batch differ in length"));
                    }
                    items.extend_from_slice(s.sequence.items());
                    cats.extend_from_slice(s.sequence.categories());
                    mask.extend(s.sequence.mask());
                }
                let all = self.tables.embed(tape, &items, &cats)?;
                tape.segment_mean(all, len, mask)?
            }
            Variant::SimSoft | Variant::SimHard => self.baseline_long(tape, batch, target, &mut out)?,
        };
        out.long_feature = long_feature;

        let short = self.short.forward(tape, target, window, w_mask, b, l)?;
        let features = tape.concat_cols(&[long_feature, short, target])?;
        out.logits = self.ctr.logits(tape, features)?;
        Ok(out)
    }

    fn genli_long(
        &self,
        tape: &mut Tape,
        batch: &[&Sample],
        window: Var,
        w_mask: &[bool],
        target: Var,
        out: &mut Forward,
    ) -> Result<Var> {
        let b = batch.len();
        let l = self.cfg.short_len;
        let n = self.cfg.buckets;
        if let Some(h) = &self.implicit {
            out.implicit = Some(h.forward(tape, window, w_mask, b, l)?);
        }
        if let Some(h) = &self.explicit {
            out.explicit = Some(h.forward(tape, window, w_mask, b, l)?);
        }
        if self.cfg.model.uses(Kind::Relative) {
            let e = match out.explicit {
                Some(v) => v,
                None => uniform_rows(tape, b, n),
            };
            let i = match out.implicit {
                Some(v) => v,
                None => uniform_rows(tape, b, n),
            };
            out.relative = Some(relative_on_tape(tape, e, i)?);
        }

        let k = self.cfg.k;
        let mut selections: [Vec<Selection<f64>>; 3] = Default::default();
        for (slot, kind) in Kind::ALL.into_iter().enumerate() {
            let p = match kind {
                Kind::Implicit => out.implicit,
                Kind::Explicit => out.explicit,
                Kind::Relative => out.relative,
            };
            let Some(p) = p else { continue };
            let probs = tape.value(p);
            selections[slot] = batch
                .iter()
                .enumerate()
                .map(|(r, s)| topk_by_lookup(s.sequence.items(), s.sequence.valid(), probs.row(r), &self.bucketer, k))
                .collect();
        }
        let empty = Selection { k, positions: Vec::new(), scores: Vec::new() };
        for r in 0..b {
            let pick = |slot: usize| selections[slot].get(r).cloned().unwrap_or_else(|| empty.clone());
            out.retrieval[r] = Some(RetrievalResult { implicit: pick(0), explicit: pick(1), relative: pick(2) });
        }

        let mut parts = Vec::with_capacity(3);
        for (slot, att) in self.long.iter().enumerate() {
            let z = match att {
                Some(att) => {
                    let sel: Vec<&Selection<f64>> = selections[slot].iter().collect();
                    self.aggregate(tape, batch, &sel, target, att)?
                }
                None => tape.input(Tensor2D::zeros(b, self.cfg.head_dim)),
            };
            parts.push(z);
        }
        let interests = tape.concat_cols(&parts)?;
        let fused = self.fusion.as_ref().expect("genli fusion").forward(tape, interests)?;
        out.gate = Some(fused.gate);
        Ok(fused.output)
    }

    /// Target attention over selected positions, visited in temporal order.
    /// A sample without any selected behavior attends to the padding row.
    fn aggregate(
        &self,
        tape: &mut Tape,
        batch: &[&Sample],
        selections: &[&Selection<f64>],
        target: Var,
        att: &TargetAttention,
    ) -> Result<Var> {
        let k = self.cfg.k;
        let b = batch.len();
        let mut items = vec![0u32; b * k];
        let mut cats = vec![0u32; b * k];
        let mut mask = vec![false; b * k];
        for (r, (s, sel)) in batch.iter().zip(selections).enumerate() {
            let mut pos = sel.positions.clone();
            pos.sort_unstable();
            for (j, &p) in pos.iter().enumerate() {
                items[r * k + j] = s.sequence.items()[p];
                cats[r * k + j] = s.sequence.categories()[p];
                mask[r * k + j] = true;
            }
            if pos.is_empty() {
                mask[r * k] = true;
            }
        }
        let rows = self.tables.embed(tape, &items, &cats)?;
        att.forward(tape, target, rows, mask, b, k)
    }

    fn baseline_long(&self, tape: &mut Tape, batch: &[&Sample], target: Var, out: &mut Forward) -> Result<Var> {
        let store = tape.store();
        let k = self.cfg.k;
        let mut sels = Vec::with_capacity(batch.len());
        for (r, s) in batch.iter().enumerate() {
            let seq = &s.sequence;
            let valid = seq.valid();
            let sel = match self.cfg.model {
                Variant::SimSoft => {
                    let t = tape.value(target).row(r).to_vec();
                    let rows = self.tables.lookup_rows(store, &seq.items()[..valid], &seq.categories()[..valid]);
                    select_topk((0..valid).map(|p| (p, rows.row(p).iter().zip(&t).map(|(a, b)| a * b).sum::<f64>())), k)
                }
                _ => select_topk(
                    (0..valid).map(|p| (p, f64::from(u8::from(seq.categories()[p] == s.target_category)))),
                    k,
                ),
            };
            sels.push(sel);
        }
        let refs: Vec<&Selection<f64>> = sels.iter().collect();
        let att = self.long[0].as_ref().expect("baseline attention");
        let z = self.aggregate(tape, batch, &refs, target, att)?;
        for (r, s) in sels.into_iter().enumerate() {
            out.baseline_selection[r] = Some(s);
        }
        Ok(z)
    }

    /// CTR loss plus weighted auxiliary losses, all averaged over the batch.
    pub fn loss(&self, tape: &mut Tape, batch: &[&Sample], fwd: &Forward, weights: LossWeights) -> Result<LossParts> {
        let b = batch.len() as f64;
        let labels: Vec<f64> = batch.iter().map(|s| f64::from(s.label)).collect();
        let ctr = tape.bce_with_logits_mean(fwd.logits, labels)?;
        let mut terms = vec![(ctr, 1.0)];
        let mut implicit = 0.0;
        let mut explicit = 0.0;
        if let Some(p) = fwd.implicit {
            let picks = batch
                .iter()
                .map(|s| Ok((self.bucketer.bucket(s.exposed_or_surrogate()?), 1.0)))
                .collect::<Result<_>>()?;
            let v = tape.nll_lookup(p, picks)?;
            implicit = tape.value(v).get(0, 0) / b;
            terms.push((v, weights.implicit / b));
        }
        if let Some(p) = fwd.explicit {
            let picks = batch.iter().map(|s| (self.bucketer.bucket(s.target_item), f64::from(s.label))).collect();
            let v = tape.nll_lookup(p, picks)?;
            explicit = tape.value(v).get(0, 0) / b;
            terms.push((v, weights.explicit / b));
        }
        let total = tape.weighted_sum(&terms)?;
        Ok(LossParts {
            total,
            ctr: tape.value(ctr).get(0, 0),
            implicit,
            explicit,
            total_value: tape.value(total).get(0, 0),
        })
    }

    /// Click probabilities for a batch.
    pub fn predict(&self, store: &ParameterStore, batch: &[&Sample]) -> Result<Vec<f64>> {
        let mut tape = Tape::new(store);
        let fwd = self.forward(&mut tape, batch)?;
        Ok(tape.value(fwd.logits).data().iter().map(|&z| crate::nn::tape::sigmoid(z)).collect())
    }
}

/// Pure total loss for one batch from already computed quantities:
/// `mean BCE + α·mean implicit + β·mean explicit`. Distributions are optional
/// per kind; `None` drops that term.
pub fn total_loss(
    predictions: &[f64],
    labels: &[u8],
    explicit: Option<&[Vec<f64>]>,
    implicit: Option<&[Vec<f64>]>,
    targets: &[u32],
    exposed: &[u32],
    weights: LossWeights,
) -> f64 {
    let b = predictions.len() as f64;
    let ctr: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(crate::igm::LOG_FLOOR, 1.0 - crate::igm::LOG_FLOOR);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / b;
    let exp = explicit.map_or(0.0, |ps| {
        ps.iter().zip(targets).zip(labels).map(|((p, &t), &y)| crate::igm::explicit_loss(p, t, y)).sum::<f64>() / b
    });
    let imp = implicit
        .map_or(0.0, |ps| ps.iter().zip(exposed).map(|(p, &e)| crate::igm::implicit_loss(p, e)).sum::<f64>() / b);
    ctr + weights.implicit * imp + weights.explicit * exp
}
