//! Membership scorers and the input-dropout confidence estimator.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::game::ConfidenceTable;
use crate::metrics::{auc, roc};
use crate::network::{ModelKind, Model};
use crate::seeds;
use crate::tensor::{Activation, Tensor};

/// Floor applied to the RMIA denominator.
pub const RMIA_EPSILON: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "attack_p")]
    AttackP,
    #[serde(rename = "attack_p_orig")]
    AttackPOriginal,
    #[serde(rename = "attack_r")]
    AttackR,
    #[serde(rename = "rmia")]
    Rmia,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [
        AttackKind::AttackP,
        AttackKind::AttackPOriginal,
        AttackKind::AttackR,
        AttackKind::Rmia,
    ];

    /// Column name in `scores.csv`.
    pub fn column(self) -> &'static str {
        match self {
            AttackKind::AttackP => "attack_p",
            AttackKind::AttackPOriginal => "attack_p_orig",
            AttackKind::AttackR => "attack_r",
            AttackKind::Rmia => "rmia",
        }
    }

    pub fn needs_references(self) -> bool {
        matches!(self, AttackKind::AttackR | AttackKind::Rmia)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|a| a.column() == s)
            .ok_or_else(|| Error::invalid(format!("unknown attack '{s}'")))
    }
}

/// `score(x) = Pr(x | θ)`.
pub fn attack_p_modified(target: &[f64]) -> Vec<f64> {
    target.to_vec()
}

/// Fraction of the population `z` whose confidence does not exceed `x`'s.
pub fn attack_p_original(target: &[f64], population: &[f64]) -> Result<Vec<f64>> {
    if population.is_empty() {
        return Err(Error::invalid("Attack-P needs a non-empty population"));
    }
    let mut sorted = population.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(target
        .iter()
        .map(|&c| sorted.partition_point(|&z| z <= c) as f64 / n)
        .collect())
}

/// Fraction of reference models that are no more confident than the target.
///
/// `references[x]` lists every reference confidence of sample `x`.
pub fn attack_r(target: &[f64], references: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_references(target, references)?;
    Ok(target
        .iter()
        .zip(references)
        .map(|(&c, refs)| refs.iter().filter(|&&r| c >= r).count() as f64 / refs.len() as f64)
        .collect())
}

/// Target confidence over the mean reference confidence.
///
/// `membership[x][j]` says whether reference `j` trained on `x`; it is
/// required so the average provably mixes IN and OUT models.
pub fn rmia(
    target: &[f64],
    references: &[Vec<f64>],
    membership: Option<&[Vec<bool>]>,
) -> Result<Vec<f64>> {
    check_references(target, references)?;
    let membership =
        membership.ok_or_else(|| Error::invalid("RMIA needs the IN/OUT membership bitmap"))?;
    if membership.len() != references.len()
        || membership.iter().zip(references).any(|(m, r)| m.len() != r.len())
    {
        return Err(Error::invalid("membership bitmap does not match reference table"));
    }
    Ok(target
        .iter()
        .zip(references)
        .zip(membership)
        .map(|((&c, refs), bits)| {
            let (mut inside, mut outside) = (0.0, 0.0);
            for (&r, &m) in refs.iter().zip(bits) {
                if m {
                    inside += r;
                } else {
                    outside += r;
                }
            }
            let denom = ((inside + outside) / refs.len() as f64).max(RMIA_EPSILON);
            c / denom
        })
        .collect())
}

fn check_references(target: &[f64], references: &[Vec<f64>]) -> Result<()> {
    if references.len() != target.len() {
        return Err(Error::invalid("one reference row per target sample required"));
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(Error::invalid("reference pool is empty"));
    }
    Ok(())
}

/// Input-dropout estimator parameters: `p` is the probability that an
/// input element is zeroed, `n` the number of averaged passes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub p: f64,
    pub n: usize,
    pub seed: u64,
}

impl DropoutSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::invalid(format!("dropout p {} not in [0, 1]", self.p)));
        }
        if self.n == 0 {
            return Err(Error::invalid("dropout needs at least one pass"));
        }
        Ok(())
    }
}

/// Keep-mask of one `(sample, pass)`; the stream does not depend on `p`, so
/// masks for a larger `p` zero a superset of elements.
pub fn dropout_mask(seed: u64, sample: usize, pass: usize, len: usize, p: f64) -> Vec<bool> {
    let mut rng = seeds::rng(seed, "dropout", &[sample as u64, pass as u64]);
    (0..len).map(|_| rng.random::<f64>() >= p).collect()
}

/// Applies the pass-`pass` masks to every row of `x`; row `i` is sample
/// `ids[i]`.
pub fn masked_inputs(x: &Tensor, ids: &[usize], seed: u64, pass: usize, p: f64) -> Tensor {
    let mut out = x.clone();
    if p == 0.0 {
        return out;
    }
    let d = x.cols();
    for (row, &id) in out.data_mut().chunks_mut(d).zip(ids) {
        for (v, keep) in row.iter_mut().zip(dropout_mask(seed, id, pass, d, p)) {
            if !keep {
                *v = 0.0;
            }
        }
    }
    out
}

/// Running means of dropout confidences for each model, recorded after
/// each pass count listed in `checkpoints` (ascending).
///
/// Returns `[checkpoint][model][sample]`. Masks are shared by all models.
pub fn dropout_confidence_prefixes(
    models: &[&Model],
    data: &Dataset,
    p: f64,
    seed: u64,
    checkpoints: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>> {
    let passes = checkpoints.iter().copied().max().unwrap_or(0);
    let ids: Vec<usize> = (0..data.len()).collect();
    let mut means = vec![vec![0.0f64; data.len()]; models.len()];
    let mut out = Vec::with_capacity(checkpoints.len());
    for pass in 0..passes {
        let x = masked_inputs(data.features(), &ids, seed, pass, p);
        let confs: Vec<Vec<f64>> = models
            .par_iter()
            .map(|m| m.confidences(&x, data.labels()))
            .collect::<Result<_>>()?;
        for (mean, conf) in means.iter_mut().zip(&confs) {
            for (m, &c) in mean.iter_mut().zip(conf) {
                *m += (c - *m) / (pass + 1) as f64;
            }
        }
        for _ in checkpoints.iter().filter(|&&c| c == pass + 1) {
            out.push(means.clone());
        }
    }
    Ok(out)
}

/// Dropout-averaged confidence of every sample of `data` under each model.
/// Returns `[model][sample]`.
pub fn dropout_confidences(
    models: &[&Model],
    data: &Dataset,
    spec: &DropoutSpec,
) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    Ok(dropout_confidence_prefixes(models, data, spec.p, spec.seed, &[spec.n])?
        .pop()
        .expect("one checkpoint"))
}

/// Dropout-averaged `Pr(x | θ)` of a single input. `sample` selects the
/// mask stream, matching [`dropout_confidences`].
pub fn dropout_confidence(
    model: &Model,
    x: &[f32],
    label: usize,
    sample: usize,
    spec: &DropoutSpec,
) -> Result<f64> {
    spec.validate()?;
    let row = Tensor::new(vec![1, x.len()], x.to_vec())?;
    let mut mean = 0.0f64;
    for pass in 0..spec.n {
        let masked = masked_inputs(&row, &[sample], spec.seed, pass, spec.p);
        let c = model.confidences(&masked, &[label])?[0];
        mean += (c - mean) / (pass + 1) as f64;
    }
    Ok(mean)
}

/// Compares `φ(Wᵀ(M⊙X))` with `φ((M⊙W)ᵀX)` for a single layer; `w` is
/// `[inputs][outputs]` and the mask acts on inputs.
pub fn input_weight_dropout_identity_check(
    w: &[Vec<f64>],
    x: &[f64],
    mask: &[bool],
    activation: Activation,
) -> bool {
    if w.len() != x.len() || mask.len() != x.len() {
        return false;
    }
    let outputs = w.first().map_or(0, |r| r.len());
    let m = |keep: bool| if keep { 1.0 } else { 0.0 };
    (0..outputs).all(|k| {
        let input_side: f64 = (0..x.len()).map(|i| w[i][k] * (m(mask[i]) * x[i])).sum();
        let weight_side: f64 = (0..x.len()).map(|i| (m(mask[i]) * w[i][k]) * x[i]).sum();
        (activation.apply_f64(input_side) - activation.apply_f64(weight_side)).abs() <= 1e-12
    })
}

/// Per-sample scores of every requested attack against `table`'s target.
pub fn score_table(
    table: &ConfidenceTable,
    membership: Option<&[Vec<bool>]>,
    attacks: &[AttackKind],
) -> Result<BTreeMap<AttackKind, Vec<f64>>> {
    score_columns(&table.target(), &table.references(), membership, attacks)
}

fn score_columns(
    target: &[f64],
    references: &[Vec<f64>],
    membership: Option<&[Vec<bool>]>,
    attacks: &[AttackKind],
) -> Result<BTreeMap<AttackKind, Vec<f64>>> {
    attacks
        .iter()
        .map(|&a| {
            let scores = match a {
                AttackKind::AttackP => attack_p_modified(target),
                AttackKind::AttackPOriginal => attack_p_original(target, target)?,
                AttackKind::AttackR => attack_r(target, references)?,
                AttackKind::Rmia => rmia(target, references, membership)?,
            };
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::NonFinite { op: "attack score" });
            }
            Ok((a, scores))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub p: f64,
    pub n: usize,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: DropoutSpec,
    pub best_auc: f64,
    /// Pool index of the model that stood in for the target.
    pub surrogate_index: usize,
    pub attack: AttackKind,
    pub cells: Vec<GridCell>,
}

/// Picks `(p, N)` by attacking pool model 0 with the rest of the pool.
///
/// `membership[x][j]` is pool model `j`'s IN bit for sample `x`. Ties go to
/// the smaller `p`, then the smaller `N`.
pub fn grid_search_dropout(
    pool: &[&Model],
    membership: &[Vec<bool>],
    data: &Dataset,
    attack: AttackKind,
    p_grid: &[f64],
    n_grid: &[usize],
    seed: u64,
) -> Result<GridSearchResult> {
    if p_grid.is_empty() || n_grid.is_empty() {
        return Err(Error::invalid("dropout grid search needs non-empty grids"));
    }
    if pool.len() < 2 {
        return Err(Error::invalid("dropout grid search needs at least two pool models"));
    }
    let surrogate = 0;
    let mut ps = p_grid.to_vec();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    let mut ns = n_grid.to_vec();
    ns.sort_unstable();
    ns.dedup();
    for &p in &ps {
        DropoutSpec { p, n: ns[0], seed }.validate()?;
    }
    let labels: Vec<bool> = membership.iter().map(|row| row[surrogate]).collect();
    let rest_membership: Vec<Vec<bool>> = membership
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|&(j, _)| j != surrogate)
                .map(|(_, &b)| b)
                .collect()
        })
        .collect();

    let mut cells = Vec::with_capacity(ps.len() * ns.len());
    let mut best: Option<GridCell> = None;
    for &p in &ps {
        let prefixes = dropout_confidence_prefixes(pool, data, p, seed, &ns)?;
        for (&n, confs) in ns.iter().zip(prefixes) {
            let target = &confs[surrogate];
            let references: Vec<Vec<f64>> = (0..data.len())
                .map(|x| {
                    (0..pool.len())
                        .filter(|&j| j != surrogate)
                        .map(|j| confs[j][x])
                        .collect()
                })
                .collect();
            let scores = score_columns(target, &references, Some(&rest_membership), &[attack])?;
            let cell = GridCell {
                p,
                n,
                auc: auc(&roc(&scores[&attack], &labels)?),
            };
            if best.as_ref().is_none_or(|b| cell.auc > b.auc) {
                best = Some(cell.clone());
            }
            cells.push(cell);
        }
    }
    let best = best.expect("non-empty grid");
    Ok(GridSearchResult {
        best: DropoutSpec {
            p: best.p,
            n: best.n,
            seed,
        },
        best_auc: best.auc,
        surrogate_index: surrogate,
        attack,
        cells,
    })
}

/// Per-sample attack scores with the setting they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub member: Vec<bool>,
    pub scores: BTreeMap<AttackKind, Vec<f64>>,
    pub dropout: Option<(f64, usize)>,
    pub pool_kind: ModelKind,
    /// Target latency; `None` for a conventional target.
    pub latency: Option<usize>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.member.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member.is_empty()
    }
}
