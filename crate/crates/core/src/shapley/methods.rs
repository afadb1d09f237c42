use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::closed_form::{closed_form_cls, closed_form_mutual};
use super::exact::{exact_shapley, DEFAULT_EXACT_LIMIT};
use super::game::{CharacteristicKind, CharacteristicSpec, EmptyValue, PairReading};
use super::sampling::{sampled_shapley, SamplingMode, SamplingScheme};
use crate::error::{Error, Result};
use crate::model::{SequenceInput, Transformer};
use crate::tensor::{
    average_attention, contribution_matrix, raw_attention_importance, AttentionStack, GradientStack, Matrix,
};

/// The fourteen attribution methods, named as in the usual comparison table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Att,
    ShapleyAttCls,
    ShapleyAttMutual,
    ShapleyAttMaxMutual,
    ApproxShapleyAttMaxMutual,
    KernelShapleyAttMaxMutual,
    GradSam,
    ShapleyGradAttCls,
    ShapleyGradAttMutual,
    ShapleyGradAttMaxMutual,
    ApproxShapleyGradAttMaxMutual,
    KernelShapleyGradAttMaxMutual,
    ShapleyInput,
    Shap,
}

impl Method {
    pub const ALL: [Method; 14] = [
        Method::Att,
        Method::ShapleyAttCls,
        Method::ShapleyAttMutual,
        Method::ShapleyAttMaxMutual,
        Method::ApproxShapleyAttMaxMutual,
        Method::KernelShapleyAttMaxMutual,
        Method::GradSam,
        Method::ShapleyGradAttCls,
        Method::ShapleyGradAttMutual,
        Method::ShapleyGradAttMaxMutual,
        Method::ApproxShapleyGradAttMaxMutual,
        Method::KernelShapleyGradAttMaxMutual,
        Method::ShapleyInput,
        Method::Shap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Att => "Att",
            Method::ShapleyAttCls => "Shapley-Att-CLS",
            Method::ShapleyAttMutual => "Shapley-Att-Mutual",
            Method::ShapleyAttMaxMutual => "Shapley-Att-Max-Mutual",
            Method::ApproxShapleyAttMaxMutual => "Approx. Shapley-Att-Max-Mutual",
            Method::KernelShapleyAttMaxMutual => "Kernel Shapley-Att-Max-Mutual",
            Method::GradSam => "Grad-SAM",
            Method::ShapleyGradAttCls => "Shapley-Grad-Att-CLS",
            Method::ShapleyGradAttMutual => "Shapley-Grad-Att-Mutual",
            Method::ShapleyGradAttMaxMutual => "Shapley-Grad-Att-Max-Mutual",
            Method::ApproxShapleyGradAttMaxMutual => "Approx. Shapley-Grad-Att-Max-Mutual",
            Method::KernelShapleyGradAttMaxMutual => "Kernel Shapley-Grad-Att-Max-Mutual",
            Method::ShapleyInput => "Shapley-Input",
            Method::Shap => "SHAP",
        }
    }

    /// Game used by the method, if any.
    pub fn kind(self) -> Option<CharacteristicKind> {
        use CharacteristicKind as K;
        Some(match self {
            Method::Att | Method::GradSam => return None,
            Method::ShapleyAttCls => K::AttCls,
            Method::ShapleyAttMutual => K::AttMutual,
            Method::ShapleyAttMaxMutual | Method::ApproxShapleyAttMaxMutual | Method::KernelShapleyAttMaxMutual => {
                K::AttMaxMutual
            }
            Method::ShapleyGradAttCls => K::GradAttCls,
            Method::ShapleyGradAttMutual => K::GradAttMutual,
            Method::ShapleyGradAttMaxMutual
            | Method::ApproxShapleyGradAttMaxMutual
            | Method::KernelShapleyGradAttMaxMutual => K::GradAttMaxMutual,
            Method::ShapleyInput | Method::Shap => K::InputMasking,
        })
    }

    /// Coalition sampling mode, `Exact` for enumerated or closed-form methods.
    pub fn sampling_mode(self) -> SamplingMode {
        match self {
            Method::ApproxShapleyAttMaxMutual | Method::ApproxShapleyGradAttMaxMutual => SamplingMode::MonteCarlo,
            Method::KernelShapleyAttMaxMutual | Method::KernelShapleyGradAttMaxMutual | Method::Shap => {
                SamplingMode::Kernel
            }
            _ => SamplingMode::Exact,
        }
    }

    pub fn needs_gradients(self) -> bool {
        matches!(
            self.kind(),
            Some(CharacteristicKind::GradAttCls | CharacteristicKind::GradAttMutual | CharacteristicKind::GradAttMaxMutual)
        ) || self == Method::GradSam
    }

    /// Runs the model on perturbed inputs rather than reading one trace.
    pub fn needs_model(self) -> bool {
        matches!(self, Method::ShapleyInput | Method::Shap)
    }

    /// Parses a comma-separated list; `all` selects every method.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        if s.trim().eq_ignore_ascii_case("all") {
            return Ok(Method::ALL.to_vec());
        }
        s.split(',').map(|p| p.trim().parse()).collect()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

impl Serialize for Method {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-token scores from one method on one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub method: Method,
    pub class: usize,
    pub seed: Option<u64>,
    pub n_samples: Option<usize>,
    pub scores: Vec<f64>,
    /// Token position of each score.
    pub player_indices: Vec<usize>,
    /// `v(∅)` when it is not zero (SHAP's masked-input output).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_value: Option<f64>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl AttributionResult {
    /// Score for a token position.
    pub fn score_of(&self, position: usize) -> Option<f64> {
        self.player_indices.iter().position(|&p| p == position).map(|i| self.scores[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeOptions {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dedup: bool,
    #[serde(default = "default_limit")]
    pub exact_limit: usize,
    #[serde(default)]
    pub pair_reading: PairReading,
}

fn default_samples() -> usize {
    SamplingScheme::DEFAULT_SAMPLES
}

fn default_limit() -> usize {
    DEFAULT_EXACT_LIMIT
}

impl Default for AttributeOptions {
    fn default() -> Self {
        Self {
            n_samples: default_samples(),
            seed: 0,
            dedup: false,
            exact_limit: default_limit(),
            pair_reading: PairReading::Unordered,
        }
    }
}

impl AttributeOptions {
    fn scheme(&self, mode: SamplingMode) -> SamplingScheme {
        SamplingScheme { mode, n_samples: self.n_samples, seed: self.seed, dedup: self.dedup }
    }
}

/// Mean of each column of `m` over every row, reported for `players`.
pub fn grad_sam_scores(m: &Matrix, players: &[usize]) -> Vec<f64> {
    let sums = m.column_sums();
    let rows = m.rows().max(1) as f64;
    players.iter().map(|&p| sums[p] / rows).collect()
}

/// Attention (and optionally gradient) stacks for one input, the data every
/// trace-based method reads.
#[derive(Clone, Debug)]
pub struct StackInput<'a> {
    pub attention: &'a AttentionStack,
    pub gradients: Option<&'a GradientStack>,
    pub players: &'a [usize],
    pub cls: usize,
}

fn scored(method: Method, class: usize, scheme: Option<&SamplingScheme>, scores: Vec<f64>, players: &[usize]) -> AttributionResult {
    AttributionResult {
        method,
        class,
        seed: scheme.map(|s| s.seed),
        n_samples: scheme.map(|s| s.n_samples),
        scores,
        player_indices: players.to_vec(),
        base_value: None,
        wall_time: Duration::ZERO,
    }
}

fn game_scores(spec: &CharacteristicSpec, mode: SamplingMode, opts: &AttributeOptions) -> Result<Vec<f64>> {
    match mode {
        SamplingMode::Exact => exact_shapley(spec, opts.exact_limit),
        _ => sampled_shapley(spec, &opts.scheme(mode)),
    }
}

/// Runs a trace-based method (everything except `Shapley-Input` and `SHAP`)
/// on precomputed stacks.
pub fn attribute_stacks(method: Method, input: &StackInput, class: usize, opts: &AttributeOptions) -> Result<AttributionResult> {
    let start = Instant::now();
    let players = input.players;
    let mode = method.sampling_mode();
    let scheme = (mode != SamplingMode::Exact).then(|| opts.scheme(mode));
    let kind = method.kind();
    let matrix = if method.needs_gradients() {
        let grads = input
            .gradients
            .ok_or_else(|| Error::InvalidInput(format!("{} needs attention gradients", method)))?;
        contribution_matrix(input.attention, grads, class)?.mat
    } else {
        average_attention(input.attention)
    };
    let scores = match (method, kind) {
        (Method::Att, _) => players
            .iter()
            .map(|&p| raw_attention_importance(input.attention, p))
            .collect::<Result<Vec<_>>>()?,
        (Method::GradSam, _) => {
            check_players(&matrix, players, input.cls)?;
            grad_sam_scores(&matrix, players)
        }
        (_, Some(CharacteristicKind::InputMasking)) | (_, None) => {
            return Err(Error::InvalidInput(format!("{} needs the model, not stacks", method)))
        }
        (_, Some(CharacteristicKind::GradAttCls | CharacteristicKind::AttCls)) => {
            check_players(&matrix, players, input.cls)?;
            closed_form_cls(&matrix, input.cls, players)
        }
        (_, Some(CharacteristicKind::GradAttMutual | CharacteristicKind::AttMutual)) => {
            check_players(&matrix, players, input.cls)?;
            closed_form_mutual(&matrix, players, opts.pair_reading)
        }
        (_, Some(kind)) => {
            let spec = if method.needs_gradients() {
                CharacteristicSpec::from_contribution(kind, matrix, players.to_vec(), input.cls)?
            } else {
                CharacteristicSpec::from_average_attention(kind, matrix, players.to_vec(), input.cls)?
            };
            game_scores(&spec.with_pair_reading(opts.pair_reading), mode, opts)?
        }
    };
    let mut out = scored(method, class, scheme.as_ref(), scores, players);
    out.wall_time = start.elapsed();
    check_finite(out)
}

fn check_players(m: &Matrix, players: &[usize], cls: usize) -> Result<()> {
    match players.iter().chain([&cls]).find(|&&p| p >= m.rows()) {
        Some(&p) => Err(Error::IndexOutOfRange { index: p, len: m.rows() }),
        None => Ok(()),
    }
}

fn check_finite(r: AttributionResult) -> Result<AttributionResult> {
    if r.scores.iter().all(|s| s.is_finite()) {
        Ok(r)
    } else {
        Err(Error::Numeric(format!("{} produced non-finite scores", r.method)))
    }
}

/// Attribution of `class` for one input with any of the fourteen methods.
/// Scores are reported for the original (non-special) tokens.
pub fn attribute(
    method: Method,
    model: &Transformer,
    input: &SequenceInput,
    class: usize,
    opts: &AttributeOptions,
) -> Result<AttributionResult> {
    if class >= model.config().n_classes {
        return Err(Error::IndexOutOfRange { index: class, len: model.config().n_classes });
    }
    let players = input.original_indices();
    if method.needs_model() {
        let start = Instant::now();
        let mode = method.sampling_mode();
        let empty = if method == Method::Shap { EmptyValue::ModelOutput } else { EmptyValue::Zero };
        let spec = CharacteristicSpec::input_masking(model, input.clone(), class, empty)?;
        let scores = game_scores(&spec, mode, opts)?;
        let scheme = (mode != SamplingMode::Exact).then(|| opts.scheme(mode));
        let mut out = scored(method, class, scheme.as_ref(), scores, &players);
        if empty == EmptyValue::ModelOutput {
            out.base_value = Some(spec.base_value());
        }
        out.wall_time = start.elapsed();
        return check_finite(out);
    }
    let trace = model.forward(input)?;
    let grads = if method.needs_gradients() { Some(model.attention_gradients(&trace, class)?) } else { None };
    let stacks = StackInput { attention: &trace.attention, gradients: grads.as_ref(), players: &players, cls: input.cls_index() };
    attribute_stacks(method, &stacks, class, opts)
}
