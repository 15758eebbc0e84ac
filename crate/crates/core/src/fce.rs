//! Fibred coarse embeddings: data model, constructions and the two-condition verifier.
//!
//! Every fibre is the standard `ℓ^p_dim`. A fibration carries a section, exclusion sets
//! `K_r` and, for each scale `r` and admissible subset `C` (outside `K_r`, diameter `< r`),
//! one affine isometry `t_C(x)` per point `x ∈ C`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::box_space::{assemble_box_space, BoxPoint, BoxSpace};
use crate::embedding::{comparison_tolerance, lp_distance, CoarseEmbeddingMap, Control, Exponent, FLOAT_TOLERANCE};
use crate::error::{Error, Result};
use crate::group_chain::{AmbientElement, AmbientGroup, GroupChain};
use crate::isometry::{AffineIsometry, LinearPart};

/// Largest number of admissible points accepted by [`SubsetMode::All`].
pub const ALL_SUBSETS_LIMIT: usize = 16;

const MAX_WITNESSES: usize = 64;
const MAX_TRANSITIONS: usize = 32;

/// Which admissible subsets the verifier enumerates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetMode {
    /// Balls `B(z, ρ)` with `2ρ < r`, cut down to the admissible points.
    Balls,
    /// Two-point subsets at distance `< r`.
    Pairs,
    #[default]
    BallsAndPairs,
    /// Every subset of diameter `< r`; at most [`ALL_SUBSETS_LIMIT`] admissible points.
    All,
}

impl FromStr for SubsetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balls" => Ok(SubsetMode::Balls),
            "pairs" => Ok(SubsetMode::Pairs),
            "balls-and-pairs" | "default" => Ok(SubsetMode::BallsAndPairs),
            "all" => Ok(SubsetMode::All),
            other => Err(Error::Parse { line: None, message: format!("unknown subset mode {other:?}") }),
        }
    }
}

impl fmt::Display for SubsetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubsetMode::Balls => "balls",
            SubsetMode::Pairs => "pairs",
            SubsetMode::BallsAndPairs => "balls-and-pairs",
            SubsetMode::All => "all",
        })
    }
}

/// An affine action of the ambient group on `ℓ^p_dim`, one isometry per generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineAction {
    pub p: Exponent,
    pub dim: usize,
    pub generators: Vec<AffineIsometry>,
}

impl AffineAction {
    pub fn new(p: Exponent, dim: usize, generators: Vec<AffineIsometry>) -> Result<Self> {
        for g in &generators {
            if g.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: g.dim() });
            }
            if g.p != p {
                return Err(Error::ExponentMismatch { expected: p.to_string(), found: g.p.to_string() });
            }
            if !g.is_isometry() {
                return Err(Error::InvalidIsometry(format!("generator linear part is not an isometry of l^{p}")));
            }
        }
        Ok(AffineAction { p, dim, generators })
    }

    /// Generator `i` translates by the unit vector `e_i` of `ℓ^p_rank`.
    pub fn translation(rank: usize, p: Exponent) -> Self {
        let generators = (0..rank)
            .map(|i| {
                let mut t = vec![0.0; rank];
                t[i] = 1.0;
                AffineIsometry::translation_by(p, t)
            })
            .collect();
        AffineAction { p, dim: rank, generators }
    }

    /// Every generator acts as the identity.
    pub fn trivial(rank: usize, p: Exponent, dim: usize) -> Self {
        AffineAction { p, dim, generators: vec![AffineIsometry::identity(p, dim); rank] }
    }

    pub fn is_integral(&self) -> bool {
        self.generators.iter().all(AffineIsometry::is_integral)
    }

    /// `α(g)`: the product of generator images along `g`.
    pub fn evaluate(&self, g: &AmbientElement) -> Result<AffineIsometry> {
        let id = AffineIsometry::identity(self.p, self.dim);
        let generator = |i: usize| {
            self.generators
                .get(i)
                .ok_or_else(|| Error::AmbientMismatch(format!("{g} uses generator {i} but the action has {}", self.generators.len())))
        };
        match g {
            AmbientElement::Word(letters) => letters.iter().try_fold(id, |acc, l| {
                let s = generator(l.generator)?;
                Ok(acc.compose(&if l.inverse { s.inverse()? } else { s.clone() }))
            }),
            AmbientElement::Vector(v) => v.iter().enumerate().try_fold(id, |acc, (i, &n)| Ok(acc.compose(&generator(i)?.power(n)?))),
            AmbientElement::Limit(_) => Err(Error::Unsupported("actions of explicit chain limits".into())),
        }
    }

    /// Checks `α(gh) = α(g)α(h)` (linear and translation parts, the latter being the cocycle
    /// identity) for all `g, h` with `|g| + |h| <= r_max`.
    pub fn check_relations(&self, chain: &GroupChain, r_max: u64) -> Result<()> {
        let ball = chain.ambient_ball(r_max + 1);
        let values = ball.iter().map(|g| self.evaluate(g)).collect::<Result<Vec<_>>>()?;
        let lengths = ball.iter().map(|g| chain.ambient_word_length(g)).collect::<Result<Vec<_>>>()?;
        for (i, g) in ball.iter().enumerate() {
            for (j, h) in ball.iter().enumerate() {
                if lengths[i] + lengths[j] > r_max {
                    continue;
                }
                let gh = chain.ambient_multiply(g, h)?;
                let direct = self.evaluate(&gh)?;
                let product = values[i].compose(&values[j]);
                let scale = 1f64.max(direct.translation.iter().fold(0.0, |m: f64, x| m.max(x.abs())));
                if !direct.linear.approx_eq(&product.linear, FLOAT_TOLERANCE) {
                    return Err(Error::ActionRelation { identity: "α(gh) = α(g)α(h)".into(), witness: format!("g = {g}, h = {h}") });
                }
                if !direct.approx_eq(&product, FLOAT_TOLERANCE * scale) {
                    return Err(Error::ActionRelation {
                        identity: "b(gh) = π(g)b(h) + b(g)".into(),
                        witness: format!("g = {g}, h = {h}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Explicitly stored exclusion sets and trivializations, keyed by scale and sorted point indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrivializationTable {
    pub exclusions: BTreeMap<u64, BTreeSet<usize>>,
    pub maps: BTreeMap<(u64, Vec<usize>), Vec<AffineIsometry>>,
}

impl TrivializationTable {
    /// Flips one sign of the linear part of `t_C(x)` for `x` the `position`-th point of `C`.
    pub fn flip_sign(&mut self, r: u64, subset: &[usize], position: usize, coordinate: usize) -> Result<()> {
        let entry = self
            .maps
            .get_mut(&(r, subset.to_vec()))
            .ok_or_else(|| Error::MissingTrivialization { r, subset: format!("{subset:?}") })?;
        let t = entry.get_mut(position).ok_or(Error::InvalidPoint(format!("position {position}")))?;
        match &mut t.linear {
            LinearPart::Signed(s) => {
                if coordinate >= s.dim() {
                    return Err(Error::DimensionMismatch { expected: s.dim(), found: coordinate });
                }
                *s = s.with_flipped_sign(coordinate);
            }
            LinearPart::Matrix(m) => {
                let row = m.row(coordinate) * -1.0;
                m.set_row(coordinate, &row);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct ActionSource {
    chain: Arc<GroupChain>,
    action: AffineAction,
}

#[derive(Clone, Debug)]
enum Trivializations {
    Identity,
    Action(Arc<ActionSource>),
    Table(TrivializationTable),
}

/// The data `(B_x, s, K_r, t_C)` over a finite box space.
#[derive(Clone, Debug)]
pub struct FibredEmbedding {
    base: Arc<BoxSpace>,
    p: Exponent,
    dim: usize,
    section: Vec<Vec<f64>>,
    trivializations: Trivializations,
}

/// Section `f`, empty exclusion sets, identity trivializations.
pub fn trivial_fibration(f: &CoarseEmbeddingMap) -> FibredEmbedding {
    FibredEmbedding {
        base: f.domain().clone(),
        p: f.p(),
        dim: f.dim(),
        section: f.rows().to_vec(),
        trivializations: Trivializations::Identity,
    }
}

/// Fibration induced by an affine action of the ambient group.
///
/// At scale `r` the admissible levels start at the first level with isometry radius `>= 2r`;
/// shallower levels form `K_r`. For admissible `C` the point of least eccentricity (least index
/// on ties) is lifted canonically and every other `x ∈ C` is lifted through the canonical lift of
/// its offset from that root. Then `t_C(x) = α(g_x)` and the section is zero.
pub fn from_proper_action(chain: Arc<GroupChain>, action: AffineAction, r_max: u64) -> Result<FibredEmbedding> {
    match chain.ambient() {
        AmbientGroup::Free { .. } | AmbientGroup::FreeAbelian { .. } => {}
        AmbientGroup::ExplicitChainLimit { .. } => {
            return Err(Error::Unsupported("actions need a free or free abelian ambient group".into()))
        }
    }
    if action.generators.len() != chain.ambient().generator_count() {
        return Err(Error::DimensionMismatch { expected: chain.ambient().generator_count(), found: action.generators.len() });
    }
    let action = AffineAction::new(action.p, action.dim, action.generators)?;
    action.check_relations(&chain, r_max)?;
    for r in 1..=r_max {
        chain.select_level_for_r(2 * r, 0)?;
    }
    let base = Arc::new(assemble_box_space(chain.clone()));
    let (p, dim) = (action.p, action.dim);
    let section = vec![vec![0.0; dim]; base.point_count()];
    Ok(FibredEmbedding { base, p, dim, section, trivializations: Trivializations::Action(Arc::new(ActionSource { chain, action })) })
}

fn describe(base: &BoxSpace, subset: &[usize]) -> String {
    let names: Vec<String> = subset.iter().map(|&i| base.point(i).to_string()).collect();
    format!("{{{}}}", names.join(", "))
}

impl FibredEmbedding {
    /// A fibration given by explicit tables.
    pub fn from_table(base: Arc<BoxSpace>, p: Exponent, section: Vec<Vec<f64>>, table: TrivializationTable) -> Result<Self> {
        if section.len() != base.point_count() {
            return Err(Error::MissingPoint(base.point(section.len().min(base.point_count() - 1)).to_string()));
        }
        let dim = section.first().map(Vec::len).unwrap_or(0);
        if let Some(row) = section.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
        }
        for maps in table.maps.values() {
            if let Some(t) = maps.iter().find(|t| t.dim() != dim) {
                return Err(Error::DimensionMismatch { expected: dim, found: t.dim() });
            }
        }
        Ok(FibredEmbedding { base, p, dim, section, trivializations: Trivializations::Table(table) })
    }

    pub fn base(&self) -> &Arc<BoxSpace> {
        &self.base
    }

    pub fn p(&self) -> Exponent {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn section(&self, index: usize) -> &[f64] {
        &self.section[index]
    }

    pub fn table(&self) -> Option<&TrivializationTable> {
        match &self.trivializations {
            Trivializations::Table(t) => Some(t),
            _ => None,
        }
    }

    pub fn table_mut(&mut self) -> Option<&mut TrivializationTable> {
        match &mut self.trivializations {
            Trivializations::Table(t) => Some(t),
            _ => None,
        }
    }

    /// Whether every stored or generated value is an integer with signed-permutation linear parts.
    pub fn is_integral(&self) -> bool {
        let section = self.section.iter().flatten().all(|v| v.fract() == 0.0);
        section
            && match &self.trivializations {
                Trivializations::Identity => true,
                Trivializations::Action(a) => a.action.is_integral(),
                Trivializations::Table(t) => t.maps.values().flatten().all(AffineIsometry::is_integral),
            }
    }

    /// Membership mask of `K_r`.
    pub fn exclusion(&self, r: u64) -> Result<Vec<bool>> {
        let n = self.base.point_count();
        match &self.trivializations {
            Trivializations::Identity => Ok(vec![false; n]),
            Trivializations::Action(a) => {
                let level = a.chain.select_level_for_r(2 * r, 0)?;
                Ok((0..n).map(|i| self.base.point(i).level < level).collect())
            }
            Trivializations::Table(t) => {
                let k = t.exclusions.get(&r).ok_or_else(|| Error::MissingTrivialization { r, subset: "K_r".into() })?;
                Ok((0..n).map(|i| k.contains(&i)).collect())
            }
        }
    }

    fn subset_diameter(&self, subset: &[usize]) -> u64 {
        let mut d = 0;
        for (a, &x) in subset.iter().enumerate() {
            for &y in &subset[a + 1..] {
                d = d.max(self.base.distance_by_index(x, y));
            }
        }
        d
    }

    /// `C` is admissible at scale `r` when it avoids `K_r` and has diameter `< r`.
    pub fn is_admissible(&self, r: u64, subset: &[usize]) -> Result<bool> {
        let excluded = self.exclusion(r)?;
        Ok(!subset.is_empty()
            && subset.iter().all(|&i| i < excluded.len() && !excluded[i])
            && self.subset_diameter(subset) < r)
    }

    /// `t_C(x)` for each `x` of the admissible subset `C` (sorted point indices).
    pub fn trivialization(&self, r: u64, subset: &[usize]) -> Result<Vec<AffineIsometry>> {
        let missing = || Error::MissingTrivialization { r, subset: describe(&self.base, subset) };
        if subset.windows(2).any(|w| w[0] >= w[1]) || !self.is_admissible(r, subset)? {
            return Err(missing());
        }
        match &self.trivializations {
            Trivializations::Identity => Ok(vec![AffineIsometry::identity(self.p, self.dim); subset.len()]),
            Trivializations::Table(t) => t.maps.get(&(r, subset.to_vec())).cloned().ok_or_else(missing),
            Trivializations::Action(a) => {
                let points: Vec<BoxPoint> = subset.iter().map(|&i| self.base.point(i)).collect();
                let level = points[0].level;
                if points.iter().any(|x| x.level != level) {
                    return Err(missing());
                }
                let q = a.chain.level(level);
                let eccentricity = |x: usize| points.iter().map(|y| q.distance_unchecked(x, y.element)).max().unwrap_or(0);
                let root = points.iter().map(|x| x.element).min_by_key(|&x| (eccentricity(x), x)).expect("nonempty");
                let root_lift = a.chain.canonical_lift(level, root);
                let root_inv = q.inverse(root);
                points
                    .iter()
                    .map(|x| {
                        let offset = a.chain.canonical_lift(level, q.multiply(root_inv, x.element));
                        a.action.evaluate(&a.chain.ambient_multiply(&root_lift, &offset)?)
                    })
                    .collect()
            }
        }
    }

    /// The family of admissible subsets the verifier enumerates at scale `r`, deduplicated and sorted.
    pub fn admissible_subsets(&self, r: u64, mode: SubsetMode) -> Result<Vec<Vec<usize>>> {
        let excluded = self.exclusion(r)?;
        let admissible: Vec<usize> = (0..excluded.len()).filter(|&i| !excluded[i]).collect();
        let d = |x: usize, y: usize| self.base.distance_by_index(x, y);
        let mut family = BTreeSet::new();
        if matches!(mode, SubsetMode::Balls | SubsetMode::BallsAndPairs) {
            for &z in &admissible {
                for radius in 0..r.div_ceil(2) {
                    family.insert(admissible.iter().copied().filter(|&w| d(z, w) <= radius).collect::<Vec<_>>());
                }
            }
        }
        if matches!(mode, SubsetMode::Pairs | SubsetMode::BallsAndPairs) {
            for (a, &x) in admissible.iter().enumerate() {
                for &y in &admissible[a + 1..] {
                    if d(x, y) < r {
                        family.insert(vec![x, y]);
                    }
                }
            }
        }
        if mode == SubsetMode::All {
            if admissible.len() > ALL_SUBSETS_LIMIT {
                return Err(Error::TooManyPoints { limit: ALL_SUBSETS_LIMIT, found: admissible.len() });
            }
            fn extend(current: &mut Vec<usize>, candidates: &[usize], close: &dyn Fn(usize, usize) -> bool, out: &mut BTreeSet<Vec<usize>>) {
                for (k, &c) in candidates.iter().enumerate() {
                    current.push(c);
                    out.insert(current.clone());
                    let next: Vec<usize> = candidates[k + 1..].iter().copied().filter(|&w| close(c, w)).collect();
                    extend(current, &next, close, out);
                    current.pop();
                }
            }
            let close = |x: usize, y: usize| d(x, y) < r;
            extend(&mut Vec::new(), &admissible, &close, &mut family);
        }
        Ok(family.into_iter().collect())
    }

    /// A copy whose trivializations at the given scales are stored explicitly for the family of `mode`.
    pub fn materialize(&self, scales: &[u64], mode: SubsetMode) -> Result<FibredEmbedding> {
        let mut table = TrivializationTable::default();
        for &r in scales {
            let excluded = self.exclusion(r)?;
            table.exclusions.insert(r, (0..excluded.len()).filter(|&i| excluded[i]).collect());
            for subset in self.admissible_subsets(r, mode)? {
                let maps = self.trivialization(r, &subset)?;
                table.maps.insert((r, subset), maps);
            }
        }
        FibredEmbedding::from_table(self.base.clone(), self.p, self.section.clone(), table)
    }

    /// Structured dump of the section and of the trivializations at the given scales.
    pub fn dump(&self, scales: &[u64], mode: SubsetMode) -> Result<FibrationDump> {
        let section = (0..self.base.point_count())
            .map(|i| SectionEntry { point: self.base.point(i), coords: self.section[i].clone() })
            .collect();
        let mut out = Vec::new();
        for &r in scales {
            let excluded = self.exclusion(r)?;
            let subsets = self
                .admissible_subsets(r, mode)?
                .into_iter()
                .map(|s| {
                    let maps = self.trivialization(r, &s)?;
                    Ok(SubsetDump { points: s.iter().map(|&i| self.base.point(i)).collect(), maps })
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(ScaleDump {
                r,
                excluded: (0..excluded.len()).filter(|&i| excluded[i]).map(|i| self.base.point(i)).collect(),
                subsets,
            });
        }
        Ok(FibrationDump { p: self.p, dim: self.dim, section, scales: out })
    }

    /// Rebuilds a table-backed fibration from a dump over `base`.
    pub fn from_dump(base: Arc<BoxSpace>, dump: &FibrationDump) -> Result<Self> {
        let mut section = vec![None; base.point_count()];
        for e in &dump.section {
            section[base.index_of(e.point)?] = Some(e.coords.clone());
        }
        let section = section
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::MissingPoint(base.point(i).to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut table = TrivializationTable::default();
        for scale in &dump.scales {
            let excluded = scale.excluded.iter().map(|&x| base.index_of(x)).collect::<Result<BTreeSet<_>>>()?;
            table.exclusions.insert(scale.r, excluded);
            for s in &scale.subsets {
                let mut keyed = s.points.iter().map(|&x| base.index_of(x)).collect::<Result<Vec<_>>>()?.into_iter().zip(s.maps.iter().cloned()).collect::<Vec<_>>();
                if keyed.len() != s.points.len() || s.maps.len() != s.points.len() {
                    return Err(Error::DimensionMismatch { expected: s.points.len(), found: s.maps.len() });
                }
                keyed.sort_by_key(|(i, _)| *i);
                let (subset, maps): (Vec<usize>, Vec<AffineIsometry>) = keyed.into_iter().unzip();
                table.maps.insert((scale.r, subset), maps);
            }
        }
        let f = FibredEmbedding::from_table(base, dump.p, section, table)?;
        if f.dim != dump.dim {
            return Err(Error::DimensionMismatch { expected: dump.dim, found: f.dim });
        }
        Ok(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionEntry {
    pub point: BoxPoint,
    pub coords: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetDump {
    pub points: Vec<BoxPoint>,
    /// `t_C(x)` for each listed point, in the same order.
    pub maps: Vec<AffineIsometry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleDump {
    pub r: u64,
    pub excluded: Vec<BoxPoint>,
    pub subsets: Vec<SubsetDump>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FibrationDump {
    pub p: Exponent,
    pub dim: usize,
    pub section: Vec<SectionEntry>,
    pub scales: Vec<ScaleDump>,
}

/// The common `t_{C₁C₂} = t_{C₁}(x) ∘ t_{C₂}(x)⁻¹` over `C₁ ∩ C₂`, or `None` for disjoint subsets.
pub fn transition_between(f: &FibredEmbedding, r: u64, c1: &[usize], c2: &[usize], tolerance: f64) -> Result<Option<AffineIsometry>> {
    let t1 = f.trivialization(r, c1)?;
    let t2 = f.trivialization(r, c2)?;
    let mut common: Option<(usize, AffineIsometry)> = None;
    for (a, x) in c1.iter().enumerate() {
        let Some(b) = c2.iter().position(|y| y == x) else { continue };
        let t = t1[a].compose(&t2[b].inverse()?);
        match &common {
            None => common = Some((*x, t)),
            Some((x0, t0)) => {
                if !t.approx_eq(t0, tolerance) {
                    return Err(Error::VerifierFailure(format!(
                        "transition between {} and {} differs at {} and {}",
                        describe(f.base(), c1),
                        describe(f.base(), c2),
                        f.base().point(*x0),
                        f.base().point(*x)
                    )));
                }
            }
        }
    }
    Ok(common.map(|(_, t)| t))
}

/// Checks `t_{C₁C₂} ∘ t_{C₂C₃} = t_{C₁C₃}` on up to `limit` triples of the family with a common point.
/// Returns the number of triples checked.
pub fn triple_coherence(f: &FibredEmbedding, r: u64, mode: SubsetMode, limit: usize) -> Result<usize> {
    let family = f.admissible_subsets(r, mode)?;
    let mut by_point: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (k, s) in family.iter().enumerate() {
        for &x in s {
            by_point.entry(x).or_default().push(k);
        }
    }
    let mut checked = 0;
    for members in by_point.values() {
        for (i, &a) in members.iter().enumerate() {
            for (j, &b) in members.iter().enumerate().skip(i + 1) {
                for &c in &members[j + 1..] {
                    if checked >= limit {
                        return Ok(checked);
                    }
                    let tr = |u: usize, v: usize| -> Result<AffineIsometry> {
                        Ok(transition_between(f, r, &family[u], &family[v], FLOAT_TOLERANCE)?.expect("common point"))
                    };
                    let lhs = tr(a, b)?.compose(&tr(b, c)?);
                    let rhs = tr(a, c)?;
                    if !lhs.approx_eq(&rhs, FLOAT_TOLERANCE) {
                        return Err(Error::VerifierFailure(format!(
                            "transitions of {}, {}, {} do not compose",
                            describe(f.base(), &family[a]),
                            describe(f.base(), &family[b]),
                            describe(f.base(), &family[c])
                        )));
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(checked)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionIWitness {
    Sandwich { subset: Vec<BoxPoint>, x: BoxPoint, y: BoxPoint, distance: u64, norm: f64, lower: f64, upper: f64 },
    NotIsometric { subset: Vec<BoxPoint>, x: BoxPoint },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionIIWitness {
    pub first: Vec<BoxPoint>,
    pub second: Vec<BoxPoint>,
    pub x: BoxPoint,
    pub y: BoxPoint,
    pub discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub first: Vec<BoxPoint>,
    pub second: Vec<BoxPoint>,
    pub transition: AffineIsometry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport<W> {
    pub pass: bool,
    pub violations: usize,
    pub witnesses: Vec<W>,
}

impl<W> ConditionReport<W> {
    pub(crate) fn new() -> Self {
        ConditionReport { pass: true, violations: 0, witnesses: Vec::new() }
    }

    pub(crate) fn record(&mut self, w: W) {
        self.pass = false;
        self.violations += 1;
        if self.witnesses.len() < MAX_WITNESSES {
            self.witnesses.push(w);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FceReport {
    pub r: u64,
    pub mode: SubsetMode,
    pub tolerance: f64,
    pub admissible_points: usize,
    pub excluded_points: usize,
    pub subsets_checked: usize,
    pub pairs_checked: usize,
    pub overlaps_checked: usize,
    pub condition_i: ConditionReport<ConditionIWitness>,
    pub condition_ii: ConditionReport<ConditionIIWitness>,
    /// A sample of the common transition maps found on overlaps.
    pub transitions: Vec<TransitionRecord>,
    pub pass: bool,
}

/// Checks conditions i) and ii) at scale `r` over the family of `mode`.
///
/// Condition ii is checked through the pair invariant `t_C(y)⁻¹ ∘ t_C(x)`: two subsets have a
/// constant transition on their overlap exactly when they agree on this map for every pair of
/// overlap points.
pub fn verify_fce(
    f: &FibredEmbedding,
    r: u64,
    rho1: &Control,
    rho2: &Control,
    mode: SubsetMode,
    tolerance: Option<f64>,
) -> Result<FceReport> {
    if r == 0 {
        return Err(Error::InvalidChain("scale r must be at least 1".into()));
    }
    let base = f.base();
    let excluded = f.exclusion(r)?;
    let family = f.admissible_subsets(r, mode)?;
    let tol = tolerance.unwrap_or_else(|| comparison_tolerance(f.p(), f.is_integral()));
    let names = |s: &[usize]| s.iter().map(|&i| base.point(i)).collect::<Vec<_>>();

    let mut cond_i = ConditionReport::new();
    let mut cond_ii = ConditionReport::new();
    let mut transitions = Vec::new();
    let mut recorded: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut gauge: HashMap<(usize, usize), (usize, AffineIsometry)> = HashMap::new();
    let (mut pairs, mut overlaps) = (0, 0);

    for (ci, c) in family.iter().enumerate() {
        let ts = f.trivialization(r, c)?;
        for (k, t) in ts.iter().enumerate() {
            if !t.is_isometry() {
                cond_i.record(ConditionIWitness::NotIsometric { subset: names(c), x: base.point(c[k]) });
            }
        }
        let images: Vec<Vec<f64>> = ts.iter().zip(c).map(|(t, &x)| t.apply(f.section(x))).collect();
        let inverses = ts.iter().map(AffineIsometry::inverse).collect::<Result<Vec<_>>>()?;
        for a in 0..c.len() {
            for b in a + 1..c.len() {
                pairs += 1;
                let t = base.distance_by_index(c[a], c[b]);
                let v = lp_distance(f.p(), &images[a], &images[b]);
                let (lo, hi) = (rho1.require(t)?, rho2.require(t)?);
                if lo > v + tol || v > hi + tol {
                    cond_i.record(ConditionIWitness::Sandwich {
                        subset: names(c),
                        x: base.point(c[a]),
                        y: base.point(c[b]),
                        distance: t,
                        norm: v,
                        lower: lo,
                        upper: hi,
                    });
                }

                let g = inverses[b].compose(&ts[a]);
                match gauge.get(&(c[a], c[b])) {
                    None => {
                        gauge.insert((c[a], c[b]), (ci, g));
                    }
                    Some((cj, g0)) => {
                        overlaps += 1;
                        let scale = 1f64.max(g0.translation.iter().fold(0.0, |m: f64, x| m.max(x.abs())));
                        if !g.approx_eq(g0, tol * scale) {
                            cond_ii.record(ConditionIIWitness {
                                first: names(&family[*cj]),
                                second: names(c),
                                x: base.point(c[a]),
                                y: base.point(c[b]),
                                discrepancy: g.discrepancy(g0),
                            });
                        } else if transitions.len() < MAX_TRANSITIONS && recorded.insert((*cj, ci)) {
                            if let Ok(Some(t)) = transition_between(f, r, &family[*cj], c, tol.max(FLOAT_TOLERANCE)) {
                                transitions.push(TransitionRecord { first: names(&family[*cj]), second: names(c), transition: t });
                            }
                        }
                    }
                }
            }
        }
    }

    let excluded_points = excluded.iter().filter(|&&e| e).count();
    let pass = cond_i.pass && cond_ii.pass;
    Ok(FceReport {
        r,
        mode,
        tolerance: tol,
        admissible_points: excluded.len() - excluded_points,
        excluded_points,
        subsets_checked: family.len(),
        pairs_checked: pairs,
        overlaps_checked: overlaps,
        condition_i: cond_i,
        condition_ii: cond_ii,
        transitions,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{constant_embedding, linf_embedding, profile, torus_embedding};
    use crate::group_chain::{build_quotient, QuotientSpec};
    use nalgebra::DMatrix;

    fn cyclic_chain(moduli: &[u64]) -> Arc<GroupChain> {
        let z = AmbientGroup::FreeAbelian { rank: 1 };
        let levels = moduli
            .iter()
            .map(|&m| build_quotient(&z, &QuotientSpec::Cyclic { moduli: vec![m] }).unwrap())
            .collect();
        Arc::new(GroupChain::new(z, levels).unwrap())
    }

    fn torus_chain(sides: &[u64]) -> Arc<GroupChain> {
        let z2 = AmbientGroup::FreeAbelian { rank: 2 };
        let levels = sides
            .iter()
            .map(|&m| build_quotient(&z2, &QuotientSpec::Cyclic { moduli: vec![m, m] }).unwrap())
            .collect();
        Arc::new(GroupChain::new(z2, levels).unwrap())
    }

    #[test]
    fn trivial_fibration_of_linf_passes() {
        let b = Arc::new(assemble_box_space(cyclic_chain(&[4, 8])));
        let f = trivial_fibration(&linf_embedding(b.clone(), BoxPoint::new(0, 0)).unwrap());
        for r in [2, 5, 7] {
            let rep = verify_fce(&f, r, &Control::Identity, &Control::Identity, SubsetMode::All, None).unwrap();
            assert!(rep.pass, "r = {r}: {rep:?}");
            assert_eq!(rep.tolerance, 0.0);
            assert!(rep.transitions.iter().all(|t| t.transition.approx_eq(&AffineIsometry::identity(Exponent::INFINITY, 12), 0.0)));
        }
    }

    #[test]
    fn constant_section_fails_condition_i() {
        let b = Arc::new(assemble_box_space(cyclic_chain(&[6])));
        let f = trivial_fibration(&constant_embedding(b, Exponent::TWO, vec![1.0]).unwrap());
        let rep = verify_fce(&f, 3, &Control::Identity, &Control::Identity, SubsetMode::Pairs, None).unwrap();
        assert!(!rep.condition_i.pass);
        assert!(rep.condition_ii.pass);
    }

    #[test]
    fn non_isometric_trivialization_is_a_condition_i_witness() {
        let b = Arc::new(assemble_box_space(cyclic_chain(&[8])));
        let g = torus_embedding(b.clone(), Exponent::TWO).unwrap();
        let prof = profile(&g).unwrap();
        let mut fib = trivial_fibration(&g).materialize(&[3], SubsetMode::BallsAndPairs).unwrap();
        let key = fib.table().unwrap().maps.keys().find(|(_, s)| s.len() == 3).unwrap().clone();
        let stretch = LinearPart::Matrix(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 3.0]));
        fib.table_mut().unwrap().maps.get_mut(&key).unwrap()[0] =
            AffineIsometry::new_unchecked(Exponent::TWO, stretch, vec![0.0, 0.0]).unwrap();
        let rep = verify_fce(&fib, 3, &prof.lower(), &prof.upper(), SubsetMode::BallsAndPairs, None).unwrap();
        assert!(!rep.condition_i.pass);
        assert!(rep.condition_i.witnesses.iter().any(|w| matches!(w, ConditionIWitness::NotIsometric { .. })));
        assert!(rep.condition_i.witnesses.iter().any(|w| matches!(w, ConditionIWitness::Sandwich { .. })));
    }

    #[test]
    fn integer_translation_action_passes() {
        let chain = cyclic_chain(&[2, 4, 8, 16, 32, 64]);
        for p in [Exponent::ONE, Exponent::TWO] {
            let f = from_proper_action(chain.clone(), AffineAction::translation(1, p), 5).unwrap();
            for r in 1..=5 {
                let rep = verify_fce(&f, r, &Control::Identity, &Control::Identity, SubsetMode::BallsAndPairs, None).unwrap();
                assert!(rep.pass, "p = {p}, r = {r}: {:?}", rep.condition_ii.witnesses.first());
                assert_eq!(rep.excluded_points > 0, r > 1);
            }
        }
    }

    #[test]
    fn transitions_are_translations_by_lift_discrepancies() {
        let chain = cyclic_chain(&[2, 4, 8, 16, 32, 64]);
        let f = from_proper_action(chain, AffineAction::translation(1, Exponent::ONE), 4).unwrap();
        let rep = verify_fce(&f, 4, &Control::Identity, &Control::Identity, SubsetMode::BallsAndPairs, None).unwrap();
        assert!(!rep.transitions.is_empty());
        for t in &rep.transitions {
            assert!(t.transition.linear.approx_eq(&LinearPart::identity(1), 0.0));
            let gamma = t.transition.translation[0];
            let m = f.base().chain().level(t.first[0].level).order() as f64;
            assert_eq!(gamma.rem_euclid(m), 0.0, "γ must lie in the kernel: {gamma}");
        }
        assert!(triple_coherence(&f, 4, SubsetMode::BallsAndPairs, 2000).unwrap() > 0);
    }

    #[test]
    fn torus_translation_action_passes_in_l1() {
        let chain = torus_chain(&[2, 4, 8, 16]);
        let f = from_proper_action(chain, AffineAction::translation(2, Exponent::ONE), 4).unwrap();
        for r in 1..=4 {
            let rep = verify_fce(&f, r, &Control::Identity, &Control::Identity, SubsetMode::BallsAndPairs, None).unwrap();
            assert!(rep.pass, "r = {r}");
        }
    }

    #[test]
    fn trivial_action_fails_condition_i() {
        let chain = cyclic_chain(&[2, 4, 8, 16, 32]);
        let f = from_proper_action(chain, AffineAction::trivial(1, Exponent::TWO, 1), 2).unwrap();
        let rep = verify_fce(&f, 2, &Control::Identity, &Control::Identity, SubsetMode::Pairs, None).unwrap();
        assert!(!rep.condition_i.pass);
    }

    #[test]
    fn action_errors() {
        let chain = cyclic_chain(&[2, 4, 8]);
        assert!(matches!(
            from_proper_action(chain.clone(), AffineAction::translation(1, Exponent::ONE), 5),
            Err(Error::ChainExhausted { .. })
        ));
        let z2 = torus_chain(&[4]);
        let swap = LinearPart::Signed(crate::isometry::SignedPermutation::new(vec![1, 0], vec![1, 1]).unwrap());
        let gens = vec![
            AffineIsometry::new(Exponent::ONE, swap, vec![1.0, 0.0]).unwrap(),
            AffineIsometry::translation_by(Exponent::ONE, vec![0.0, 1.0]),
        ];
        let action = AffineAction::new(Exponent::ONE, 2, gens).unwrap();
        assert!(matches!(from_proper_action(z2, action, 2), Err(Error::ActionRelation { .. })));
    }

    #[test]
    fn sign_flip_breaks_condition_ii() {
        let chain = cyclic_chain(&[2, 4, 8, 16, 32]);
        let f = from_proper_action(chain, AffineAction::translation(1, Exponent::ONE), 4).unwrap();
        let mut m = f.materialize(&[4], SubsetMode::Balls).unwrap();
        assert!(verify_fce(&m, 4, &Control::Identity, &Control::Identity, SubsetMode::Balls, None).unwrap().pass);
        let key = m.table().unwrap().maps.keys().find(|(_, s)| s.len() == 3).unwrap().clone();
        m.table_mut().unwrap().flip_sign(key.0, &key.1, 1, 0).unwrap();
        let rep = verify_fce(&m, 4, &Control::Identity, &Control::Identity, SubsetMode::Balls, None).unwrap();
        assert!(!rep.condition_ii.pass);
    }

    #[test]
    fn missing_trivialization_is_an_error() {
        let b = Arc::new(assemble_box_space(cyclic_chain(&[8])));
        let f = trivial_fibration(&linf_embedding(b, BoxPoint::new(0, 0)).unwrap());
        let mut m = f.materialize(&[3], SubsetMode::Pairs).unwrap();
        let key = m.table().unwrap().maps.keys().next().unwrap().clone();
        m.table_mut().unwrap().maps.remove(&key);
        assert!(matches!(
            verify_fce(&m, 3, &Control::Identity, &Control::Identity, SubsetMode::Pairs, None),
            Err(Error::MissingTrivialization { .. })
        ));
    }

    #[test]
    fn all_mode_has_a_size_limit() {
        let b = Arc::new(assemble_box_space(cyclic_chain(&[4, 16])));
        let f = trivial_fibration(&linf_embedding(b, BoxPoint::new(0, 0)).unwrap());
        assert!(matches!(
            verify_fce(&f, 2, &Control::Identity, &Control::Identity, SubsetMode::All, None),
            Err(Error::TooManyPoints { limit: 16, found: 20 })
        ));
    }

    #[test]
    fn dump_round_trip() {
        let chain = cyclic_chain(&[2, 4, 8, 16]);
        let f = from_proper_action(chain, AffineAction::translation(1, Exponent::TWO), 2).unwrap();
        let dump = f.dump(&[1, 2], SubsetMode::BallsAndPairs).unwrap();
        let text = serde_json::to_string(&dump).unwrap();
        let back = FibredEmbedding::from_dump(f.base().clone(), &serde_json::from_str(&text).unwrap()).unwrap();
        for r in [1, 2] {
            let a = verify_fce(&f, r, &Control::Identity, &Control::Identity, SubsetMode::BallsAndPairs, None).unwrap();
            let b = verify_fce(&back, r, &Control::Identity, &Control::Identity, SubsetMode::BallsAndPairs, None).unwrap();
            assert_eq!(a, b);
        }
    }
}
