//! Maps from a box space into finite-dimensional ℓ^p and their control functions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::box_space::{BoxPoint, BoxSpace};
use crate::error::{Error, Result};

/// Comparison tolerance for p-norms that involve inexact roots.
pub const FLOAT_TOLERANCE: f64 = 1e-9;

/// An exponent `p ∈ [1, ∞]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Exponent(f64);

impl Exponent {
    pub const ONE: Exponent = Exponent(1.0);
    pub const TWO: Exponent = Exponent(2.0);
    pub const INFINITY: Exponent = Exponent(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidExponent(p.to_string()));
        }
        Ok(Exponent(p))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }

    /// `n^{1/p}`, the constant relating an ℓ^p combination of `n` equal blocks to one block.
    pub fn power_constant(&self, n: usize) -> f64 {
        if self.is_infinite() {
            1.0
        } else {
            (n as f64).powf(1.0 / self.0)
        }
    }

    pub fn norm(&self, coords: &[f64]) -> f64 {
        lp_norm(*self, coords)
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(Exponent::INFINITY),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::InvalidExponent(other.to_string()))
                .and_then(Exponent::new),
        }
    }
}

impl TryFrom<String> for Exponent {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Exponent> for String {
    fn from(p: Exponent) -> String {
        p.to_string()
    }
}

pub fn lp_norm(p: Exponent, coords: &[f64]) -> f64 {
    let p = p.value();
    if p.is_infinite() {
        coords.iter().fold(0.0, |m, x| m.max(x.abs()))
    } else if p == 1.0 {
        coords.iter().map(|x| x.abs()).sum()
    } else if p == 2.0 {
        coords.iter().map(|x| x * x).sum::<f64>().sqrt()
    } else {
        coords.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// `‖a - b‖_p` without allocating.
pub fn lp_distance(p: Exponent, a: &[f64], b: &[f64]) -> f64 {
    let pv = p.value();
    let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
    if pv.is_infinite() {
        diffs.fold(0.0, f64::max)
    } else if pv == 1.0 {
        diffs.sum()
    } else if pv == 2.0 {
        diffs.map(|d| d * d).sum::<f64>().sqrt()
    } else {
        diffs.map(|d| d.powf(pv)).sum::<f64>().powf(1.0 / pv)
    }
}

/// Tolerance for comparing norms: exact when the data is integral and the norm involves
/// no roots (`p = 1` or `p = ∞`), [`FLOAT_TOLERANCE`] otherwise.
pub fn comparison_tolerance(p: Exponent, integral_data: bool) -> f64 {
    if integral_data && (p.value() == 1.0 || p.is_infinite()) {
        0.0
    } else {
        FLOAT_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpVector {
    pub p: Exponent,
    pub coords: Vec<f64>,
}

impl LpVector {
    pub fn new(p: Exponent, coords: Vec<f64>) -> Self {
        LpVector { p, coords }
    }

    pub fn zero(p: Exponent, dim: usize) -> Self {
        LpVector { p, coords: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        lp_norm(self.p, &self.coords)
    }

    pub fn is_zero(&self) -> bool {
        self.norm() <= 1e-12
    }

    pub fn sub(&self, other: &LpVector) -> LpVector {
        LpVector { p: self.p, coords: self.coords.iter().zip(&other.coords).map(|(a, b)| a - b).collect() }
    }

    pub fn add(&self, other: &LpVector) -> LpVector {
        LpVector { p: self.p, coords: self.coords.iter().zip(&other.coords).map(|(a, b)| a + b).collect() }
    }

    pub fn scale(&self, s: f64) -> LpVector {
        LpVector { p: self.p, coords: self.coords.iter().map(|a| a * s).collect() }
    }
}

/// A map `f: □Γ → ℓ^p_dim`, stored as one coordinate row per point.
#[derive(Clone, Debug)]
pub struct CoarseEmbeddingMap {
    domain: Arc<BoxSpace>,
    p: Exponent,
    dim: usize,
    table: Vec<Vec<f64>>,
}

impl CoarseEmbeddingMap {
    /// `table[i]` is the image of the `i`-th point of the domain.
    pub fn new(domain: Arc<BoxSpace>, p: Exponent, table: Vec<Vec<f64>>) -> Result<Self> {
        if table.len() != domain.point_count() {
            let missing = domain.point(table.len().min(domain.point_count().saturating_sub(1)));
            return Err(Error::MissingPoint(missing.to_string()));
        }
        let dim = table.first().map(Vec::len).unwrap_or(0);
        if let Some(row) = table.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: row.len() });
        }
        Ok(CoarseEmbeddingMap { domain, p, dim, table })
    }

    pub fn domain(&self) -> &Arc<BoxSpace> {
        &self.domain
    }

    pub fn p(&self) -> Exponent {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn value(&self, x: BoxPoint) -> Result<LpVector> {
        let i = self.domain.index_of(x)?;
        Ok(LpVector::new(self.p, self.table[i].clone()))
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.table[index]
    }

    pub fn is_integral(&self) -> bool {
        self.table.iter().flatten().all(|v| v.fract() == 0.0)
    }

    /// `‖f(x_i) - f(x_j)‖_p` by global point index.
    pub fn image_distance(&self, i: usize, j: usize) -> f64 {
        lp_distance(self.p, &self.table[i], &self.table[j])
    }

    /// The same map with every coordinate of one point shifted; used to build test violations.
    pub fn with_row(&self, index: usize, row: Vec<f64>) -> Result<Self> {
        let mut table = self.table.clone();
        table[index] = row;
        CoarseEmbeddingMap::new(self.domain.clone(), self.p, table)
    }

    /// CSV with a `# p=<p> dim=<dim>` header and rows `level,element,c_1,...,c_dim`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# p={} dim={}\nlevel,element", self.p, self.dim);
        for c in 1..=self.dim {
            out.push_str(&format!(",c{c}"));
        }
        out.push('\n');
        for (i, row) in self.table.iter().enumerate() {
            let x = self.domain.point(i);
            out.push_str(&format!("{},{}", x.level, x.element));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(domain: Arc<BoxSpace>, text: &str) -> Result<Self> {
        let (p, dim) = parse_header(text)?;
        let mut rows: Vec<Option<Vec<f64>>> = vec![None; domain.point_count()];
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
        for record in reader.records() {
            let record = record.map_err(csv_error)?;
            let line = record.position().map(|p| p.line() as usize);
            let parse_err = |message: String| Error::Parse { line, message };
            if record.len() != dim + 2 {
                return Err(Error::DimensionMismatch { expected: dim + 2, found: record.len() });
            }
            let level: usize = record[0].parse().map_err(|_| parse_err(format!("bad level {:?}", &record[0])))?;
            let element: usize = record[1].parse().map_err(|_| parse_err(format!("bad element {:?}", &record[1])))?;
            let index = domain.index_of(BoxPoint::new(level, element))?;
            let coords = (2..record.len())
                .map(|c| record[c].parse::<f64>().map_err(|_| parse_err(format!("bad coordinate {:?}", &record[c]))))
                .collect::<Result<Vec<f64>>>()?;
            if rows[index].replace(coords).is_some() {
                return Err(parse_err(format!("point {} appears twice", domain.point(index))));
            }
        }
        let table = rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| r.ok_or_else(|| Error::MissingPoint(domain.point(i).to_string())))
            .collect::<Result<Vec<_>>>()?;
        let map = CoarseEmbeddingMap::new(domain, p, table)?;
        if map.dim != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: map.dim });
        }
        Ok(map)
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::Parse { line: e.position().map(|p| p.line() as usize), message: e.to_string() }
}

/// Reads `p` and `dim` from a leading `# p=.. dim=..` comment line.
pub(crate) fn parse_header(text: &str) -> Result<(Exponent, usize)> {
    let first = text.lines().next().unwrap_or_default();
    let bad = || Error::Parse { line: Some(1), message: "expected a header line `# p=<p> dim=<dim>`".into() };
    let body = first.trim().strip_prefix('#').ok_or_else(bad)?;
    let (mut p, mut dim) = (None, None);
    for field in body.split_whitespace() {
        match field.split_once('=') {
            Some(("p", v)) => p = Some(v.parse::<Exponent>()?),
            Some(("dim", v)) | Some(("block_dim", v)) => dim = Some(v.parse::<usize>().map_err(|_| bad())?),
            _ => {}
        }
    }
    Ok((p.ok_or_else(bad)?, dim.ok_or_else(bad)?))
}

/// A control function sampled or given in closed form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Control {
    Identity,
    Affine { slope: f64, intercept: f64 },
    Constant(f64),
    Samples(BTreeMap<u64, f64>),
}

impl Control {
    pub fn eval(&self, t: u64) -> Option<f64> {
        match self {
            Control::Identity => Some(t as f64),
            Control::Affine { slope, intercept } => Some(slope * t as f64 + intercept),
            Control::Constant(c) => Some(*c),
            Control::Samples(m) => m.get(&t).copied(),
        }
    }

    pub fn require(&self, t: u64) -> Result<f64> {
        self.eval(t).ok_or(Error::MissingControl(t))
    }
}

/// `identity`, `const:<c>`, `affine:<slope>,<intercept>`, or a path handled by the caller.
impl FromStr for Control {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse { line: None, message: format!("unknown control {s:?}") };
        let s = s.trim();
        if s == "identity" || s == "t" {
            return Ok(Control::Identity);
        }
        if s == "zero" {
            return Ok(Control::Constant(0.0));
        }
        if let Some(c) = s.strip_prefix("const:") {
            return Ok(Control::Constant(c.parse().map_err(|_| bad())?));
        }
        if let Some(rest) = s.strip_prefix("affine:") {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            return Ok(Control::Affine { slope: a.parse().map_err(|_| bad())?, intercept: b.parse().map_err(|_| bad())? });
        }
        Err(bad())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub t: u64,
    pub raw_min: f64,
    pub raw_max: f64,
    pub rho_minus: f64,
    pub rho_plus: f64,
}

/// Tightest controls realized by a finite map.
///
/// `raw_min`/`raw_max` are the extreme image distances among pairs at distance `t`;
/// `rho_minus` is the largest nondecreasing function below `raw_min` (suffix minimum)
/// and `rho_plus` the smallest nondecreasing function above `raw_max` (prefix maximum).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPair {
    pub samples: Vec<ControlSample>,
}

impl ControlPair {
    fn from_extremes(extremes: BTreeMap<u64, (f64, f64)>) -> Self {
        let mut samples: Vec<ControlSample> = extremes
            .into_iter()
            .map(|(t, (lo, hi))| ControlSample { t, raw_min: lo, raw_max: hi, rho_minus: lo, rho_plus: hi })
            .collect();
        let mut running = f64::NEG_INFINITY;
        for s in samples.iter_mut() {
            running = running.max(s.raw_max);
            s.rho_plus = running;
        }
        let mut running = f64::INFINITY;
        for s in samples.iter_mut().rev() {
            running = running.min(s.raw_min);
            s.rho_minus = running;
        }
        ControlPair { samples }
    }

    pub fn lower(&self) -> Control {
        Control::Samples(self.samples.iter().map(|s| (s.t, s.rho_minus)).collect())
    }

    pub fn upper(&self) -> Control {
        Control::Samples(self.samples.iter().map(|s| (s.t, s.rho_plus)).collect())
    }

    pub fn get(&self, t: u64) -> Option<&ControlSample> {
        self.samples.binary_search_by_key(&t, |s| s.t).ok().map(|i| &self.samples[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,rho_minus,rho_plus\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{}\n", s.t, s.rho_minus, s.rho_plus));
        }
        out
    }
}

/// Optimal control functions for `f` over every pair of its (finite) domain, including `t = 0`.
pub fn profile(f: &CoarseEmbeddingMap) -> Result<ControlPair> {
    let b = f.domain();
    let n = b.point_count();
    if n == 0 {
        return Err(Error::EmptyDomain);
    }
    let mut extremes: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    extremes.insert(0, (0.0, 0.0));
    for i in 0..n {
        for j in i + 1..n {
            let t = b.distance_by_index(i, j);
            let v = f.image_distance(i, j);
            let e = extremes.entry(t).or_insert((v, v));
            e.0 = e.0.min(v);
            e.1 = e.1.max(v);
        }
    }
    Ok(ControlPair::from_extremes(extremes))
}

/// `x ↦ (y ↦ d(x, y) - d(x₀, y))` into `ℓ^∞` of dimension `|B|`; an isometric embedding.
pub fn linf_embedding(b: Arc<BoxSpace>, basepoint: BoxPoint) -> Result<CoarseEmbeddingMap> {
    let base = b.index_of(basepoint)?;
    let n = b.point_count();
    let table = (0..n)
        .map(|x| (0..n).map(|y| b.distance_by_index(x, y) as f64 - b.distance_by_index(base, y) as f64).collect())
        .collect();
    CoarseEmbeddingMap::new(b, Exponent::INFINITY, table)
}

/// `(cos(2πk/m), sin(2πk/m))`, exact at quarter turns.
pub fn unit_circle(k: u64, m: u64) -> (f64, f64) {
    let k = k % m;
    if (4 * k).is_multiple_of(m) {
        return match 4 * k / m {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
    }
    let angle = std::f64::consts::TAU * k as f64 / m as f64;
    (angle.cos(), angle.sin())
}

/// Each cyclic coordinate `x_c ∈ Z/m_c` goes to the unit circle; a level of rank `k`
/// lands in `ℓ^p_{2k}`. Every level must be a product of the same number of cyclic groups.
pub fn torus_embedding(b: Arc<BoxSpace>, p: Exponent) -> Result<CoarseEmbeddingMap> {
    let mut rank = None;
    let mut table = Vec::with_capacity(b.point_count());
    for x in b.points() {
        let q = b.chain().level(x.level);
        let moduli = q
            .moduli()
            .ok_or_else(|| Error::Unsupported(format!("level {} is not given as a product of cyclic groups", x.level)))?;
        if *rank.get_or_insert(moduli.len()) != moduli.len() {
            return Err(Error::Unsupported("levels have different cyclic ranks".into()));
        }
        let coords = q.abelian_coordinates(x.element).expect("cyclic level");
        let mut row = Vec::with_capacity(2 * moduli.len());
        for (c, m) in coords.iter().zip(moduli) {
            let (u, v) = unit_circle(*c, *m);
            row.push(u);
            row.push(v);
        }
        table.push(row);
    }
    CoarseEmbeddingMap::new(b, p, table)
}

/// [`torus_embedding`] restricted to cyclic levels: `k ↦ (cos(2πk/m), sin(2πk/m))`.
pub fn cycle_plane(b: Arc<BoxSpace>, p: Exponent) -> Result<CoarseEmbeddingMap> {
    if b.chain().levels().iter().any(|q| q.moduli().map(<[u64]>::len) != Some(1)) {
        return Err(Error::Unsupported("cycle-plane needs every level to be cyclic".into()));
    }
    torus_embedding(b, p)
}

/// Maps every point to the same vector.
pub fn constant_embedding(b: Arc<BoxSpace>, p: Exponent, value: Vec<f64>) -> Result<CoarseEmbeddingMap> {
    let n = b.point_count();
    CoarseEmbeddingMap::new(b, p, vec![value; n])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairWitness {
    pub x: BoxPoint,
    pub y: BoxPoint,
    pub distance: u64,
    pub norm: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSurrogate {
    pub max_distance: u64,
    pub rho1_at_max_distance: f64,
    pub rho1_max: f64,
    /// Whether `ρ₁` reaches its largest value at the largest realized distance.
    pub attained_at_max_distance: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseReport {
    pub pass: bool,
    pub tolerance: f64,
    pub checked_pairs: usize,
    pub controls_nondecreasing: bool,
    pub witnesses: Vec<PairWitness>,
    pub divergence: DivergenceSurrogate,
}

/// Checks `ρ₁(d(x, y)) <= ‖f(x) - f(y)‖ <= ρ₂(d(x, y))` on every pair of the domain.
///
/// `tolerance` defaults to [`comparison_tolerance`] for the map's data.
pub fn verify_coarse(f: &CoarseEmbeddingMap, rho1: &Control, rho2: &Control, tolerance: Option<f64>) -> Result<CoarseReport> {
    let b = f.domain();
    let n = b.point_count();
    if n == 0 {
        return Err(Error::EmptyDomain);
    }
    let tol = tolerance.unwrap_or_else(|| comparison_tolerance(f.p(), f.is_integral()));

    let mut realized: BTreeMap<u64, ()> = BTreeMap::new();
    realized.insert(0, ());
    for i in 0..n {
        for j in i + 1..n {
            realized.insert(b.distance_by_index(i, j), ());
        }
    }
    let mut lower = BTreeMap::new();
    let mut upper = BTreeMap::new();
    for &t in realized.keys() {
        lower.insert(t, rho1.require(t)?);
        upper.insert(t, rho2.require(t)?);
    }
    let monotone = |m: &BTreeMap<u64, f64>| m.values().zip(m.values().skip(1)).all(|(a, b)| a <= b);
    let controls_nondecreasing = monotone(&lower) && monotone(&upper);

    let mut witnesses = Vec::new();
    let mut checked = 0;
    for i in 0..n {
        for j in i + 1..n {
            let t = b.distance_by_index(i, j);
            let v = f.image_distance(i, j);
            checked += 1;
            let (lo, hi) = (lower[&t], upper[&t]);
            if lo > v + tol || v > hi + tol {
                witnesses.push(PairWitness { x: b.point(i), y: b.point(j), distance: t, norm: v, lower: lo, upper: hi });
            }
        }
    }

    let (&max_distance, &rho1_at_max) = lower.iter().next_back().expect("nonempty");
    let rho1_max = lower.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let divergence = DivergenceSurrogate {
        max_distance,
        rho1_at_max_distance: rho1_at_max,
        rho1_max,
        attained_at_max_distance: rho1_at_max >= rho1_max,
        note: "divergence of the lower control is asymptotic; only its finite-range surrogate is checked".into(),
    };
    Ok(CoarseReport { pass: witnesses.is_empty(), tolerance: tol, checked_pairs: checked, controls_nondecreasing, witnesses, divergence })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub c: f64,
    pub combined: f64,
    /// Whether every block norm lies in `[K, K']`.
    pub hypothesis: bool,
    pub lower: f64,
    pub upper: f64,
    /// `cK <= N <= cK'` whenever the hypothesis holds.
    pub holds: bool,
}

/// The ℓ^p combination `N` of `n` block norms against the annulus `[cK, cK']`, `c = n^{1/p}`.
pub fn pnorm_power_check(n: usize, p: Exponent, block_norms: &[f64], k_low: f64, k_high: f64) -> Result<PowerReport> {
    if block_norms.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: block_norms.len() });
    }
    let c = p.power_constant(n);
    let combined = lp_norm(p, block_norms);
    let hypothesis = block_norms.iter().all(|&b| k_low <= b && b <= k_high);
    let (lower, upper) = (c * k_low, c * k_high);
    let scale = 1f64.max(upper.abs());
    let holds = !hypothesis || (lower - FLOAT_TOLERANCE * scale <= combined && combined <= upper + FLOAT_TOLERANCE * scale);
    Ok(PowerReport { c, combined, hypothesis, lower, upper, holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::box_space::assemble_box_space;
    use crate::group_chain::{build_quotient, AmbientGroup, GroupChain, QuotientSpec};
    use proptest::prelude::*;

    fn cyclic_box(moduli: &[u64]) -> Arc<BoxSpace> {
        let z = AmbientGroup::FreeAbelian { rank: 1 };
        let levels = moduli
            .iter()
            .map(|&m| build_quotient(&z, &QuotientSpec::Cyclic { moduli: vec![m] }).unwrap())
            .collect();
        Arc::new(assemble_box_space(Arc::new(GroupChain::new(z, levels).unwrap())))
    }

    #[test]
    fn exponent_parsing() {
        assert!("inf".parse::<Exponent>().unwrap().is_infinite());
        assert_eq!("1.5".parse::<Exponent>().unwrap().value(), 1.5);
        assert!("0.5".parse::<Exponent>().is_err());
        assert!("nan".parse::<Exponent>().is_err());
    }

    #[test]
    fn constant_map_profile_is_zero() {
        let b = cyclic_box(&[4, 8]);
        let f = constant_embedding(b, Exponent::TWO, vec![1.0, -2.0]).unwrap();
        let prof = profile(&f).unwrap();
        assert!(prof.samples.iter().all(|s| s.rho_minus == 0.0 && s.rho_plus == 0.0));
    }

    #[test]
    fn linf_profile_is_identity() {
        let b = cyclic_box(&[2, 4, 8]);
        let f = linf_embedding(b.clone(), BoxPoint::new(0, 0)).unwrap();
        for s in profile(&f).unwrap().samples {
            assert_eq!(s.rho_minus, s.t as f64);
            assert_eq!(s.rho_plus, s.t as f64);
        }
        let zero = f.value(BoxPoint::new(0, 0)).unwrap();
        assert!(zero.coords.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn linf_two_points() {
        let z = AmbientGroup::FreeAbelian { rank: 1 };
        let levels = vec![build_quotient(&z, &QuotientSpec::Cyclic { moduli: vec![6] }).unwrap()];
        let b = Arc::new(assemble_box_space(Arc::new(GroupChain::new(z, levels).unwrap())));
        let f = linf_embedding(b, BoxPoint::new(0, 1)).unwrap();
        let d = f.value(BoxPoint::new(0, 0)).unwrap().sub(&f.value(BoxPoint::new(0, 3)).unwrap());
        assert_eq!(d.norm(), 3.0);
    }

    #[test]
    fn cycle_plane_chord() {
        let b = cyclic_box(&[8]);
        let f = cycle_plane(b.clone(), Exponent::TWO).unwrap();
        // brute force over pairs at distance 1
        let mut best: f64 = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                if b.distance_by_index(i, j) == 1 {
                    let (a, c) = (f.row(i), f.row(j));
                    best = best.max(((a[0] - c[0]).powi(2) + (a[1] - c[1]).powi(2)).sqrt());
                }
            }
        }
        let prof = profile(&f).unwrap();
        assert!((prof.get(1).unwrap().rho_plus - best).abs() < 1e-15);
        assert!((best - 2.0 * (std::f64::consts::PI / 8.0).sin()).abs() < 1e-12);
    }

    #[test]
    fn verify_coarse_examples() {
        let b = cyclic_box(&[4, 8]);
        let f = linf_embedding(b.clone(), BoxPoint::new(1, 0)).unwrap();
        let ok = verify_coarse(&f, &Control::Identity, &Control::Identity, None).unwrap();
        assert!(ok.pass);
        assert_eq!(ok.tolerance, 0.0);
        assert!(ok.divergence.attained_at_max_distance);

        let shifted = Control::Affine { slope: 1.0, intercept: 1.0 };
        let bad = verify_coarse(&f, &shifted, &Control::Constant(1e9), None).unwrap();
        assert!(!bad.pass);
        assert_eq!(bad.witnesses.len(), bad.checked_pairs);

        let g = torus_embedding(b, Exponent::new(3.0).unwrap()).unwrap();
        let prof = profile(&g).unwrap();
        assert!(verify_coarse(&g, &prof.lower(), &prof.upper(), None).unwrap().pass);
    }

    #[test]
    fn verify_coarse_missing_control() {
        let b = cyclic_box(&[4]);
        let f = linf_embedding(b, BoxPoint::new(0, 0)).unwrap();
        let partial = Control::Samples([(0, 0.0), (1, 1.0)].into_iter().collect());
        assert_eq!(verify_coarse(&f, &partial, &Control::Identity, None), Err(Error::MissingControl(2)));
    }

    #[test]
    fn power_check_examples() {
        let r = pnorm_power_check(4, Exponent::TWO, &[3.0; 4], 3.0, 3.0).unwrap();
        assert_eq!(r.c, 2.0);
        assert_eq!(r.combined, 6.0);
        assert!(r.holds);
        let r = pnorm_power_check(1, Exponent::new(3.0).unwrap(), &[2.5], 0.0, 10.0).unwrap();
        assert_eq!(r.c, 1.0);
        assert!((r.combined - 2.5).abs() < 1e-15);
        let r = pnorm_power_check(2, Exponent::ONE, &[1.0, 3.0], 1.0, 3.0).unwrap();
        assert_eq!((r.lower, r.combined, r.upper), (2.0, 4.0, 6.0));
        assert!(r.holds);
    }

    #[test]
    fn csv_round_trip() {
        let b = cyclic_box(&[2, 4]);
        let f = torus_embedding(b.clone(), Exponent::new(1.5).unwrap()).unwrap();
        let g = CoarseEmbeddingMap::from_csv(b.clone(), &f.to_csv()).unwrap();
        assert_eq!(g.rows(), f.rows());
        assert_eq!(g.p(), f.p());
        let truncated: String = f.to_csv().lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(matches!(CoarseEmbeddingMap::from_csv(b.clone(), &truncated), Err(Error::MissingPoint(_))));
        let csv = f.to_csv();
        let repeated = format!("{csv}{}\n", csv.lines().nth(2).unwrap());
        assert!(matches!(CoarseEmbeddingMap::from_csv(b, &repeated), Err(Error::Parse { .. })));
    }

    fn exponent() -> impl Strategy<Value = Exponent> {
        prop_oneof![
            Just(Exponent::ONE),
            Just(Exponent::TWO),
            Just(Exponent::INFINITY),
            (1.0f64..6.0).prop_map(|p| Exponent::new(p).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn norm_triangle_and_homogeneity(
            p in exponent(),
            (a, b) in (1usize..8).prop_flat_map(|n| (prop::collection::vec(-10.0f64..10.0, n), prop::collection::vec(-10.0f64..10.0, n))),
            s in -5.0f64..5.0,
        ) {
            let (u, v) = (LpVector::new(p, a), LpVector::new(p, b));
            prop_assert!(u.add(&v).norm() <= u.norm() + v.norm() + 1e-9);
            prop_assert!((u.scale(s).norm() - s.abs() * u.norm()).abs() <= 1e-9 * (1.0 + u.norm()));
            prop_assert!(u.norm() >= 0.0);
        }

        #[test]
        fn power_sandwich(p in exponent(), blocks in prop::collection::vec(0.0f64..20.0, 1..=8)) {
            let lo = blocks.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = blocks.iter().copied().fold(0.0, f64::max);
            let r = pnorm_power_check(blocks.len(), p, &blocks, lo, hi).unwrap();
            prop_assert!(r.hypothesis);
            prop_assert!(r.holds);
        }
    }
}
