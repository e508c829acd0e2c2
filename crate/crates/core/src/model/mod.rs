//! Autoregressive composition of ODE evolution and temporal aggregation, the
//! ranking objective and the training loop.

mod checkpoint;
mod forward;
mod objective;
mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionLayerParams, TimeEncoder};
use crate::data::EdgeView;
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;

pub use checkpoint::{config_hash, Checkpoint};
pub use forward::{final_representation, forward, ForwardOutput, ForwardPlan, LayerGraphs, ParamVars};
pub use objective::{bpr_loss, bpr_loss_tape, sample_negative, score, TrainIndex, Triple};
pub use train::{fit, fit_with_progress, EpochLog, FitResult, TrainConfig};

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

/// Which modules run at every layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// ODE evolution followed by temporal attention.
    Full,
    /// Attention only; the ODE step is skipped.
    Att,
    /// ODE only; the aggregation step is skipped.
    Ode,
    /// ODE followed by plain normalized graph convolution.
    Gcn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Att, Variant::Ode, Variant::Gcn];

    pub fn uses_ode(self) -> bool {
        !matches!(self, Variant::Att)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "att" | "attention" => Ok(Self::Att),
            "ode" => Ok(Self::Ode),
            "gcn" => Ok(Self::Gcn),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Att => "att",
            Self::Ode => "ode",
            Self::Gcn => "gcn",
        })
    }
}

/// Edge visibility of the ODE and aggregation modules at each layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignalPolicy {
    pub ode_view: EdgeView,
    pub attn_view: EdgeView,
}

impl SignalPolicy {
    /// ODE on the current interval, attention on everything so far.
    pub const ORIGIN: Self = Self::new(EdgeView::Current, EdgeView::Previous);
    pub const STATIC: Self = Self::new(EdgeView::All, EdgeView::All);
    pub const SHORT_SIGHTED: Self = Self::new(EdgeView::Current, EdgeView::Current);
    pub const REVERSED: Self = Self::new(EdgeView::Previous, EdgeView::Current);
    pub const LOOK_BACK: Self = Self::new(EdgeView::Previous, EdgeView::Previous);

    pub const fn new(ode_view: EdgeView, attn_view: EdgeView) -> Self {
        Self { ode_view, attn_view }
    }
}

impl Default for SignalPolicy {
    fn default() -> Self {
        Self::ORIGIN
    }
}

impl std::str::FromStr for SignalPolicy {
    type Err = Error;

    /// Accepts `origin`, `m1`..`m4`, or `<ode>/<attn>` such as `cur/prev`.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "origin" => Ok(Self::ORIGIN),
            "m1" => Ok(Self::STATIC),
            "m2" => Ok(Self::SHORT_SIGHTED),
            "m3" => Ok(Self::REVERSED),
            "m4" => Ok(Self::LOOK_BACK),
            other => {
                let (ode, attn) = other
                    .split_once('/')
                    .ok_or_else(|| Error::Config(format!("unknown signal policy '{other}'")))?;
                Ok(Self::new(ode.parse()?, attn.parse()?))
            }
        }
    }
}

impl std::fmt::Display for SignalPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.ode_view, self.attn_view)
    }
}

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// `|V| x d` initial node states.
    pub embeddings: DenseMatrix,
    /// One aggregation layer per interval.
    pub layers: Vec<AttentionLayerParams>,
    pub time_encoder: TimeEncoder,
}

impl ModelParams {
    /// Embeddings drawn from `N(0, init_std²)`, layers per
    /// [`AttentionLayerParams::new`], log-spaced time frequencies.
    pub fn init(num_nodes: usize, k: usize, d: usize, time_dim: usize, init_std: f64, rng: &mut impl Rng) -> Result<Self> {
        if d == 0 || time_dim == 0 || k == 0 {
            return Err(Error::Invalid(format!(
                "embedding dim {d}, time dim {time_dim} and interval count {k} must be positive"
            )));
        }
        let normal = Normal::new(0.0, init_std).map_err(|e| Error::Invalid(e.to_string()))?;
        let embeddings =
            DenseMatrix::from_vec(num_nodes, d, (0..num_nodes * d).map(|_| normal.sample(rng)).collect())?;
        let layers = (0..k).map(|_| AttentionLayerParams::new(d, time_dim, rng)).collect();
        Ok(Self {
            embeddings,
            layers,
            time_encoder: TimeEncoder::new(time_dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_nodes(&self) -> usize {
        self.embeddings.rows()
    }

    /// Flat views of every tensor: embeddings, frequencies, then `α`, `W_Q`,
    /// `W_K` per layer. [`ParamVars`] registers leaves in the same order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = vec![self.embeddings.as_slice(), self.time_encoder.frequencies.as_slice()];
        for l in &self.layers {
            out.push(l.alpha.as_slice());
            out.push(l.w_q.as_slice());
            out.push(l.w_k.as_slice());
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.embeddings.as_mut_slice(),
            self.time_encoder.frequencies.as_mut_slice(),
        ];
        for l in &mut self.layers {
            out.push(l.alpha.as_mut_slice());
            out.push(l.w_q.as_mut_slice());
            out.push(l.w_k.as_mut_slice());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn policies_parse() {
        assert_eq!("origin".parse::<SignalPolicy>().unwrap(), SignalPolicy::ORIGIN);
        assert_eq!("cur/prev".parse::<SignalPolicy>().unwrap(), SignalPolicy::ORIGIN);
        assert_eq!("M3".parse::<SignalPolicy>().unwrap(), SignalPolicy::REVERSED);
        assert_eq!(SignalPolicy::STATIC.to_string(), "all/all");
        assert!("sideways".parse::<SignalPolicy>().is_err());
    }

    #[test]
    fn variants_parse() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
    }

    #[test]
    fn init_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ModelParams::init(10, 3, 4, 2, 0.1, &mut rng).unwrap();
        assert_eq!(p.embeddings.shape(), (10, 4));
        assert_eq!(p.layers.len(), 3);
        assert_eq!(p.layers[0].alpha.len(), 2 * 4 + 2 * 2);
        assert_eq!(p.slices().len(), 2 + 3 * 3);
        assert!(p.layers.iter().all(|l| l.alpha.iter().all(|&a| a == 0.0)));
        assert!(ModelParams::init(10, 0, 4, 2, 0.1, &mut rng).is_err());
    }
}
