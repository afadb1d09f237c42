use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mask_tokens, SequenceInput, Transformer};
use crate::tensor::Matrix;

/// A cooperative game over players `0..n_players()`.
///
/// `value` receives the members as ascending player slots and must return
/// the same number for the same set.
pub trait Game: Sync {
    fn n_players(&self) -> usize;
    fn value(&self, members: &[usize]) -> f64;
}

/// The seven characteristic functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CharacteristicKind {
    GradAttCls,
    GradAttMutual,
    GradAttMaxMutual,
    AttCls,
    AttMutual,
    AttMaxMutual,
    InputMasking,
}

impl CharacteristicKind {
    pub const ALL: [CharacteristicKind; 7] = [
        CharacteristicKind::GradAttCls,
        CharacteristicKind::GradAttMutual,
        CharacteristicKind::GradAttMaxMutual,
        CharacteristicKind::AttCls,
        CharacteristicKind::AttMutual,
        CharacteristicKind::AttMaxMutual,
        CharacteristicKind::InputMasking,
    ];

    fn shape(self) -> Option<PairForm> {
        use CharacteristicKind::*;
        match self {
            GradAttCls | AttCls => Some(PairForm::Cls),
            GradAttMutual | AttMutual => Some(PairForm::Mutual),
            GradAttMaxMutual | AttMaxMutual => Some(PairForm::MaxMutual),
            InputMasking => None,
        }
    }

    fn uses_gradients(self) -> bool {
        use CharacteristicKind::*;
        matches!(self, GradAttCls | GradAttMutual | GradAttMaxMutual)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PairForm {
    Cls,
    Mutual,
    MaxMutual,
}

/// How the `i ≠ j` double sum of the mutual games is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairReading {
    /// Each unordered pair contributes once.
    #[default]
    Unordered,
    /// Each unordered pair contributes twice (once per ordered pair).
    Ordered,
}

impl PairReading {
    pub fn multiplicity(self) -> f64 {
        match self {
            PairReading::Unordered => 1.0,
            PairReading::Ordered => 2.0,
        }
    }
}

/// What the empty coalition is worth in the input-masking game.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyValue {
    /// `v(∅) = 0`.
    #[default]
    Zero,
    /// `v(∅) = f_k` of the fully masked input (a single-reference base value).
    ModelOutput,
}

/// The data a characteristic function is evaluated on.
#[derive(Clone, Debug)]
pub enum Payload<'a> {
    /// Gradient-weighted attention `M_k`.
    Contribution(Matrix),
    /// Layer/head-averaged attention.
    AverageAttention(Matrix),
    Model { model: &'a Transformer, input: SequenceInput, class: usize },
}

/// A sorted, duplicate-free set of token positions.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coalition {
    members: Vec<usize>,
}

impl Coalition {
    pub fn new(mut members: Vec<usize>) -> Self {
        members.sort_unstable();
        members.dedup();
        Self { members }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, pos: usize) -> bool {
        self.members.binary_search(&pos).is_ok()
    }
}

/// A cooperative game over the original tokens of one input.
#[derive(Clone, Debug)]
pub struct CharacteristicSpec<'a> {
    kind: CharacteristicKind,
    payload: Payload<'a>,
    /// Token position of each player slot.
    players: Vec<usize>,
    cls: usize,
    pair_reading: PairReading,
    empty_value: EmptyValue,
    /// Matrix entries restricted to players (`players × players`).
    sub: Option<Matrix>,
    /// CLS row restricted to players.
    cls_row: Vec<f64>,
    base_value: f64,
}

impl<'a> CharacteristicSpec<'a> {
    /// Builds a game over `players` (token positions). Matrix payloads must be
    /// square and cover every player and the CLS position.
    pub fn new(kind: CharacteristicKind, payload: Payload<'a>, players: Vec<usize>, cls: usize) -> Result<Self> {
        let mut sorted = players.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != players.len() {
            return Err(Error::InvalidInput("duplicate player positions".into()));
        }
        if players.contains(&cls) {
            return Err(Error::InvalidInput("the CLS position cannot be a player".into()));
        }
        let mut spec = Self {
            kind,
            payload,
            players,
            cls,
            pair_reading: PairReading::Unordered,
            empty_value: EmptyValue::Zero,
            sub: None,
            cls_row: Vec::new(),
            base_value: 0.0,
        };
        match (&spec.payload, kind.shape()) {
            (Payload::Contribution(m), Some(_)) if kind.uses_gradients() => spec.index_matrix(m.clone())?,
            (Payload::AverageAttention(m), Some(_)) if !kind.uses_gradients() => spec.index_matrix(m.clone())?,
            (Payload::Model { model, input, class }, None) => {
                model.validate_input(input)?;
                if *class >= model.config().n_classes {
                    return Err(Error::IndexOutOfRange { index: *class, len: model.config().n_classes });
                }
                if spec.cls != input.cls_index() {
                    return Err(Error::InvalidInput("CLS position does not match the input".into()));
                }
                let originals = input.original_indices();
                if let Some(p) = spec.players.iter().find(|p| !originals.contains(p)) {
                    return Err(Error::InvalidInput(format!("player {} is not an original token position", p)));
                }
            }
            _ => {
                return Err(Error::InvalidInput(format!(
                    "payload does not match characteristic kind {:?}",
                    kind
                )))
            }
        }
        Ok(spec)
    }

    fn index_matrix(&mut self, m: Matrix) -> Result<()> {
        let n = m.rows();
        if m.cols() != n {
            return Err(Error::Dimension("characteristic payload must be square".into()));
        }
        if self.cls >= n {
            return Err(Error::IndexOutOfRange { index: self.cls, len: n });
        }
        if let Some(&p) = self.players.iter().find(|&&p| p >= n) {
            return Err(Error::IndexOutOfRange { index: p, len: n });
        }
        let pl = &self.players;
        self.sub = Some(Matrix::from_fn(pl.len(), pl.len(), |a, b| m.get(pl[a], pl[b])));
        self.cls_row = pl.iter().map(|&p| m.get(self.cls, p)).collect();
        Ok(())
    }

    /// Game over `M_k` with players = every position except `cls`.
    pub fn from_contribution(kind: CharacteristicKind, m: Matrix, players: Vec<usize>, cls: usize) -> Result<Self> {
        Self::new(kind, Payload::Contribution(m), players, cls)
    }

    pub fn from_average_attention(kind: CharacteristicKind, m: Matrix, players: Vec<usize>, cls: usize) -> Result<Self> {
        Self::new(kind, Payload::AverageAttention(m), players, cls)
    }

    /// `v(S) = f_k(x_S)`: model probability for `class` with the original
    /// tokens outside `S` masked.
    pub fn input_masking(
        model: &'a Transformer,
        input: SequenceInput,
        class: usize,
        empty_value: EmptyValue,
    ) -> Result<Self> {
        let players = input.original_indices();
        let cls = input.cls_index();
        let mut spec = Self::new(CharacteristicKind::InputMasking, Payload::Model { model, input, class }, players, cls)?;
        spec.empty_value = empty_value;
        if empty_value == EmptyValue::ModelOutput {
            spec.base_value = spec.masked_output(&[]);
        }
        Ok(spec)
    }

    pub fn with_pair_reading(mut self, reading: PairReading) -> Self {
        self.pair_reading = reading;
        self
    }

    pub fn kind(&self) -> CharacteristicKind {
        self.kind
    }

    pub fn players(&self) -> &[usize] {
        &self.players
    }

    pub fn pair_reading(&self) -> PairReading {
        self.pair_reading
    }

    /// Value assigned to the empty coalition.
    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    /// Player-restricted payload matrix, for matrix kinds.
    pub fn player_matrix(&self) -> Option<&Matrix> {
        self.sub.as_ref()
    }

    pub fn cls_row(&self) -> &[f64] {
        &self.cls_row
    }

    fn masked_output(&self, slots: &[usize]) -> f64 {
        match &self.payload {
            Payload::Model { model, input, class } => {
                let keep: Vec<usize> = slots.iter().map(|&s| self.players[s]).collect();
                mask_tokens(input, &keep)
                    .and_then(|x| model.predict(&x))
                    .map(|p| p.probs[*class])
                    .unwrap_or(f64::NAN)
            }
            _ => unreachable!("masked_output on a matrix game"),
        }
    }

    /// `v(S)` for a coalition of token positions.
    pub fn char_value(&self, coalition: &Coalition) -> Result<f64> {
        let slots = coalition
            .members()
            .iter()
            .map(|p| {
                self.players
                    .iter()
                    .position(|q| q == p)
                    .ok_or_else(|| Error::InvalidInput(format!("position {} is not a player of this game", p)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut slots = slots;
        slots.sort_unstable();
        Ok(self.value(&slots))
    }
}

impl Game for CharacteristicSpec<'_> {
    fn n_players(&self) -> usize {
        self.players.len()
    }

    fn value(&self, members: &[usize]) -> f64 {
        if members.is_empty() {
            return self.base_value;
        }
        let Some(form) = self.kind.shape() else {
            return self.masked_output(members);
        };
        if form == PairForm::Cls {
            return members.iter().map(|&s| self.cls_row[s]).sum();
        }
        let m = self.sub.as_ref().expect("matrix game");
        if let [only] = members {
            return m.get(*only, *only);
        }
        let mut total = 0.0;
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                total += match form {
                    PairForm::Mutual => m.get(i, j) + m.get(j, i),
                    _ => m.get(i, j).max(m.get(j, i)),
                };
            }
        }
        total * self.pair_reading.multiplicity()
    }
}

/// A game given by an explicit closure, mostly for tests and examples.
pub struct FnGame<F: Fn(&[usize]) -> f64 + Sync> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[usize]) -> f64 + Sync> Game for FnGame<F> {
    fn n_players(&self) -> usize {
        self.n
    }

    fn value(&self, members: &[usize]) -> f64 {
        (self.f)(members)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2() -> Matrix {
        // Position 0 is CLS, players are positions 1 and 2.
        Matrix::from_rows(&[[0.0, 0.2, 0.7], [0.0, 1.0, 2.0], [0.0, 3.0, 4.0]]).unwrap()
    }

    #[test]
    fn empty_coalition_is_zero_for_matrix_kinds() {
        for kind in CharacteristicKind::ALL.iter().filter(|k| k.shape().is_some()) {
            let spec = if kind.uses_gradients() {
                CharacteristicSpec::from_contribution(*kind, m2(), vec![1, 2], 0)
            } else {
                CharacteristicSpec::from_average_attention(*kind, m2(), vec![1, 2], 0)
            }
            .unwrap();
            assert_eq!(spec.char_value(&Coalition::empty()).unwrap(), 0.0);
        }
    }

    #[test]
    fn mutual_hand_values() {
        let s = CharacteristicSpec::from_contribution(CharacteristicKind::GradAttMutual, m2(), vec![1, 2], 0).unwrap();
        assert_eq!(s.char_value(&Coalition::new(vec![1])).unwrap(), 1.0);
        assert_eq!(s.char_value(&Coalition::new(vec![1, 2])).unwrap(), 5.0);
        let ordered = s.with_pair_reading(PairReading::Ordered);
        assert_eq!(ordered.char_value(&Coalition::new(vec![1, 2])).unwrap(), 10.0);
    }

    #[test]
    fn max_mutual_hand_values() {
        let s = CharacteristicSpec::from_contribution(CharacteristicKind::GradAttMaxMutual, m2(), vec![1, 2], 0).unwrap();
        assert_eq!(s.char_value(&Coalition::new(vec![1, 2])).unwrap(), 3.0);
        let ordered = s.with_pair_reading(PairReading::Ordered);
        assert_eq!(ordered.char_value(&Coalition::new(vec![1, 2])).unwrap(), 6.0);
    }

    #[test]
    fn cls_game_sums_the_cls_row() {
        let s = CharacteristicSpec::from_average_attention(CharacteristicKind::AttCls, m2(), vec![1, 2], 0).unwrap();
        assert!((s.char_value(&Coalition::new(vec![1, 2])).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn payload_kind_mismatch_is_rejected() {
        assert!(CharacteristicSpec::from_average_attention(CharacteristicKind::GradAttCls, m2(), vec![1, 2], 0).is_err());
        assert!(CharacteristicSpec::from_contribution(CharacteristicKind::AttMutual, m2(), vec![1, 2], 0).is_err());
        assert!(CharacteristicSpec::from_contribution(CharacteristicKind::InputMasking, m2(), vec![1, 2], 0).is_err());
    }

    #[test]
    fn non_players_are_rejected() {
        let s = CharacteristicSpec::from_contribution(CharacteristicKind::GradAttCls, m2(), vec![1, 2], 0).unwrap();
        assert!(s.char_value(&Coalition::new(vec![0])).is_err());
        assert!(CharacteristicSpec::from_contribution(CharacteristicKind::GradAttCls, m2(), vec![0, 1], 0).is_err());
        assert!(CharacteristicSpec::from_contribution(CharacteristicKind::GradAttCls, m2(), vec![3], 0).is_err());
    }
}
