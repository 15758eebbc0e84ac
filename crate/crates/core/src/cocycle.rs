//! r-local representations and cocycles on block spaces `⊕_{z ∈ X_n} ℓ^p_d`.
//!
//! Block vectors are stored flat, block `z` occupying `z·d .. (z+1)·d`. Cocycle values are kept
//! in raw units together with a normalizer `N`; the true value is `raw · N^{-1/p}`. All
//! identities are linear, so they are checked on the raw data.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{csv_error, lp_norm, parse_header, CoarseEmbeddingMap, Control, Exponent, FLOAT_TOLERANCE};
use crate::error::{Error, Result};
use crate::fce::{ConditionReport, FibredEmbedding};
use crate::group_chain::{AmbientElement, Element, GroupChain, Radius};
use crate::isometry::{AffineIsometry, LinearPart};

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarrierKind {
    /// All elements of one level of the chain.
    Quotient { level: usize },
    /// The ambient elements of length `< radius`.
    AmbientBall { radius: u64 },
}

/// A finite piece of a group: its elements, lengths and the products that stay inside.
#[derive(Debug)]
pub struct Carrier {
    chain: Arc<GroupChain>,
    kind: CarrierKind,
    labels: Vec<String>,
    lengths: Vec<u64>,
    identity: usize,
    table: Vec<u32>,
    ambient: Vec<AmbientElement>,
    index: HashMap<AmbientElement, usize>,
}

impl Carrier {
    pub fn quotient(chain: Arc<GroupChain>, level: usize) -> Self {
        let q = chain.level(level);
        let n = q.order();
        let mut table = Vec::with_capacity(n * n);
        for x in 0..n {
            table.extend((0..n).map(|y| q.multiply(x, y) as u32));
        }
        Carrier {
            kind: CarrierKind::Quotient { level },
            labels: (0..n).map(|x| x.to_string()).collect(),
            lengths: (0..n).map(|x| q.length(x)).collect(),
            identity: q.identity(),
            table,
            ambient: Vec::new(),
            index: HashMap::new(),
            chain,
        }
    }

    pub fn ambient_ball(chain: Arc<GroupChain>, radius: u64) -> Result<Self> {
        let ball = chain.ambient_ball(radius);
        let index: HashMap<AmbientElement, usize> = ball.iter().cloned().enumerate().map(|(i, g)| (g, i)).collect();
        let n = ball.len();
        let mut table = Vec::with_capacity(n * n);
        for g in &ball {
            for h in &ball {
                let gh = chain.ambient_multiply(g, h)?;
                table.push(index.get(&gh).map_or(NONE, |&i| i as u32));
            }
        }
        let lengths = ball.iter().map(|g| chain.ambient_word_length(g)).collect::<Result<Vec<_>>>()?;
        let identity = index[&chain.ambient_identity()];
        Ok(Carrier {
            kind: CarrierKind::AmbientBall { radius },
            labels: ball.iter().map(|g| g.to_string()).collect(),
            lengths,
            identity,
            table,
            ambient: ball,
            index,
            chain,
        })
    }

    pub fn chain(&self) -> &Arc<GroupChain> {
        &self.chain
    }

    pub fn kind(&self) -> CarrierKind {
        self.kind
    }

    pub fn order(&self) -> usize {
        self.labels.len()
    }

    pub fn identity(&self) -> usize {
        self.identity
    }

    pub fn label(&self, g: usize) -> &str {
        &self.labels[g]
    }

    pub fn length(&self, g: usize) -> u64 {
        self.lengths[g]
    }

    /// `gh` when it is an element of the carrier.
    pub fn multiply(&self, g: usize, h: usize) -> Option<usize> {
        let v = self.table[g * self.order() + h];
        (v != NONE).then_some(v as usize)
    }

    /// Index of an ambient element of an ambient-ball carrier.
    pub fn find(&self, g: &AmbientElement) -> Option<usize> {
        self.index.get(g).copied()
    }

    pub fn find_label(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn ambient_element(&self, g: usize) -> Option<&AmbientElement> {
        self.ambient.get(g)
    }
}

/// `(Aξ)_z = maps[z](ξ_{source[z]})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockOperator {
    pub source: Vec<usize>,
    pub maps: Vec<LinearPart>,
}

impl BlockOperator {
    pub fn identity(blocks: usize, dim: usize) -> Self {
        BlockOperator { source: (0..blocks).collect(), maps: vec![LinearPart::identity(dim); blocks] }
    }

    /// Block permutation `z ↦ source[z]` with identity block maps.
    pub fn permutation(source: Vec<usize>, dim: usize) -> Self {
        let maps = vec![LinearPart::identity(dim); source.len()];
        BlockOperator { source, maps }
    }

    pub fn apply(&self, v: &[f64], dim: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(v.len());
        for (z, m) in self.maps.iter().enumerate() {
            let s = self.source[z] * dim;
            out.extend(m.apply(&v[s..s + dim]));
        }
        out
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &BlockOperator) -> BlockOperator {
        let source = self.source.iter().map(|&s| other.source[s]).collect();
        let maps = self.maps.iter().zip(&self.source).map(|(m, &s)| m.compose(&other.maps[s])).collect();
        BlockOperator { source, maps }
    }

    pub fn approx_eq(&self, other: &BlockOperator, tol: f64) -> bool {
        self.source == other.source && self.maps.iter().zip(&other.maps).all(|(a, b)| a.approx_eq(b, tol))
    }

    /// A block permutation whose block maps are isometries preserves the combined ℓ^p norm.
    pub fn is_isometry(&self, p: Exponent) -> bool {
        let mut seen = vec![false; self.source.len()];
        self.source.iter().all(|&s| s < seen.len() && !std::mem::replace(&mut seen[s], true))
            && self.maps.iter().all(|m| m.is_isometry(p))
    }
}

/// `g ↦ π(g)` for the carrier elements inside the locality radius; identity elsewhere.
#[derive(Clone, Debug)]
pub struct LocalRepresentation {
    pub r: Radius,
    pub p: Exponent,
    pub block_dim: usize,
    pub block_count: usize,
    carrier: Arc<Carrier>,
    images: Vec<Option<BlockOperator>>,
}

impl LocalRepresentation {
    pub fn carrier(&self) -> &Arc<Carrier> {
        &self.carrier
    }

    pub fn image(&self, g: usize) -> BlockOperator {
        self.images[g].clone().unwrap_or_else(|| BlockOperator::identity(self.block_count, self.block_dim))
    }

    pub fn stored_image(&self, g: usize) -> Option<&BlockOperator> {
        self.images[g].as_ref()
    }

    /// Replaces a stored image; used to build violations.
    pub fn with_image(&self, g: usize, op: BlockOperator) -> Self {
        let mut out = self.clone();
        out.images[g] = Some(op);
        out
    }
}

/// `g ↦ b(g)` for the carrier elements inside the locality radius; zero elsewhere.
#[derive(Clone, Debug)]
pub struct LocalCocycle {
    pub r: Radius,
    pub p: Exponent,
    pub block_dim: usize,
    pub block_count: usize,
    /// Level whose elements index the blocks.
    pub block_level: usize,
    normalizer: f64,
    raw: Vec<Option<Vec<f64>>>,
    companion: Arc<LocalRepresentation>,
}

impl LocalCocycle {
    pub fn carrier(&self) -> &Arc<Carrier> {
        &self.companion.carrier
    }

    pub fn representation(&self) -> &LocalRepresentation {
        &self.companion
    }

    /// `N` in `b = raw · N^{-1/p}`.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    fn scale(&self) -> f64 {
        if self.p.is_infinite() {
            1.0
        } else {
            self.normalizer.powf(-1.0 / self.p.value())
        }
    }

    pub fn raw(&self, g: usize) -> Option<&[f64]> {
        self.raw[g].as_deref()
    }

    pub fn stored(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.raw.len()).filter(|&g| self.raw[g].is_some())
    }

    pub fn value(&self, g: usize) -> Vec<f64> {
        let s = self.scale();
        match &self.raw[g] {
            Some(v) => v.iter().map(|x| x * s).collect(),
            None => vec![0.0; self.block_count * self.block_dim],
        }
    }

    /// `‖b(g)‖_p`, computed as `(Σ|raw|^p / N)^{1/p}`.
    pub fn norm(&self, g: usize) -> f64 {
        let Some(v) = &self.raw[g] else { return 0.0 };
        let p = self.p.value();
        if self.p.is_infinite() {
            lp_norm(self.p, v)
        } else if p == 1.0 {
            v.iter().map(|x| x.abs()).sum::<f64>() / self.normalizer
        } else if p == 2.0 {
            (v.iter().map(|x| x * x).sum::<f64>() / self.normalizer).sqrt()
        } else {
            (v.iter().map(|x| x.abs().powf(p)).sum::<f64>() / self.normalizer).powf(1.0 / p)
        }
    }

    pub fn is_integral(&self) -> bool {
        self.raw.iter().flatten().flatten().all(|x| x.fract() == 0.0)
    }

    /// Adds `delta` to one raw coordinate of `b(g)`; an absent value is first set to zero.
    pub fn with_offset(&self, g: usize, coordinate: usize, delta: f64) -> Self {
        let mut out = self.clone();
        let width = self.block_count * self.block_dim;
        out.raw[g].get_or_insert_with(|| vec![0.0; width])[coordinate] += delta;
        out
    }

    /// The zero cocycle with the same representation.
    pub fn zeroed(&self) -> Self {
        let mut out = self.clone();
        for v in out.raw.iter_mut().flatten() {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        out
    }

    /// CSV with a `# p=.. block_dim=.. r=..` header and rows `g,level,element,c_1..c_d`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# p={} block_dim={} r={}\ng,level,element", self.p, self.block_dim, self.r);
        for c in 1..=self.block_dim {
            out.push_str(&format!(",c{c}"));
        }
        out.push('\n');
        let carrier = self.carrier();
        for g in self.stored() {
            let v = self.value(g);
            for z in 0..self.block_count {
                out.push_str(&format!("{},{},{}", carrier.label(g), self.block_level, z));
                for x in &v[z * self.block_dim..(z + 1) * self.block_dim] {
                    out.push_str(&format!(",{x}"));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Values read from a dump produced by [`LocalCocycle::to_csv`], reusing this cocycle's
    /// carrier and representation. Elements absent from the dump are zero.
    pub fn replay(&self, text: &str) -> Result<LocalCocycle> {
        let (p, dim) = parse_header(text)?;
        if p != self.p {
            return Err(Error::ExponentMismatch { expected: self.p.to_string(), found: p.to_string() });
        }
        if dim != self.block_dim {
            return Err(Error::DimensionMismatch { expected: self.block_dim, found: dim });
        }
        let width = self.block_count * self.block_dim;
        let mut raw: Vec<Option<Vec<f64>>> = vec![None; self.raw.len()];
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
        for record in reader.records() {
            let record = record.map_err(csv_error)?;
            let line = record.position().map(|p| p.line() as usize);
            let err = |message: String| Error::Parse { line, message };
            if record.len() != dim + 3 {
                return Err(Error::DimensionMismatch { expected: dim + 3, found: record.len() });
            }
            let g = self.carrier().find_label(&record[0]).ok_or_else(|| err(format!("unknown element {:?}", &record[0])))?;
            let level: usize = record[1].parse().map_err(|_| err(format!("bad level {:?}", &record[1])))?;
            let z: usize = record[2].parse().map_err(|_| err(format!("bad element {:?}", &record[2])))?;
            if level != self.block_level || z >= self.block_count {
                return Err(err(format!("block L{level}:{z} is not a block of this cocycle")));
            }
            let slot = raw[g].get_or_insert_with(|| vec![0.0; width]);
            for c in 0..dim {
                slot[z * dim + c] = record[3 + c].parse().map_err(|_| err(format!("bad coordinate {:?}", &record[3 + c])))?;
            }
        }
        Ok(LocalCocycle { normalizer: 1.0, raw, ..self.clone() })
    }
}

/// The averaged cocycle on level `level`:
/// `b(x) = N^{-1/p} ⊕_z (f(zx) − f(z))` with `σ(x)ξ = ⊕_z ξ_{zx}`, globally (`r = ∞`).
pub fn averaged_cocycle(f: &CoarseEmbeddingMap, level: usize) -> Result<LocalCocycle> {
    let domain = f.domain();
    let chain = domain.chain().clone();
    if level >= chain.len() {
        return Err(Error::InvalidPoint(format!("level {level}")));
    }
    let q = chain.level(level);
    let n = q.order();
    let offset = domain.level_range(level).start;
    let d = f.dim();
    let carrier = Arc::new(Carrier::quotient(chain.clone(), level));
    let mut images = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n);
    for x in 0..n {
        images.push(Some(BlockOperator::permutation((0..n).map(|z| q.multiply(z, x)).collect(), d)));
        let mut v = Vec::with_capacity(n * d);
        for z in 0..n {
            let (a, b) = (f.row(offset + q.multiply(z, x)), f.row(offset + z));
            v.extend(a.iter().zip(b).map(|(s, t)| s - t));
        }
        raw.push(Some(v));
    }
    let rep = LocalRepresentation { r: Radius::Infinite, p: f.p(), block_dim: d, block_count: n, carrier, images };
    Ok(LocalCocycle {
        r: Radius::Infinite,
        p: f.p(),
        block_dim: d,
        block_count: n,
        block_level: level,
        normalizer: n as f64,
        raw,
        companion: Arc::new(rep),
    })
}

/// The r-local cocycle of a fibred embedding.
///
/// With `C_z = {w : d(z, w) < r}` in the chosen level and `s = 2r − 1` (so every `C_z` is
/// admissible at scale `s`), for `|x| < r`:
/// `c^z(x) = t_{C_z}(z)(s(z)) − t_{C_z}(zx)(s(zx))` and
/// `(σ(x)ξ)_z = ρ_{C_z C_{zx}}(ξ_{zx})`, the linear part of the transition. Outside the ball
/// `b = 0` and `σ = Id`. The level is the first one outside `K_s` with isometry radius `>= r`.
pub fn local_cocycle_from_fce(fib: &FibredEmbedding, r: u64) -> Result<LocalCocycle> {
    if r == 0 {
        return Err(Error::InvalidChain("locality radius must be at least 1".into()));
    }
    let base = fib.base();
    let chain = base.chain().clone();
    let s = 2 * r - 1;
    let excluded = fib.exclusion(s)?;
    let first_clear = (0..chain.len()).find(|&l| base.level_range(l).all(|i| !excluded[i])).unwrap_or(chain.len());
    let level = chain.select_level_for_r(r, first_clear)?;
    let q = chain.level(level);
    let n = q.order();
    let d = fib.dim();
    let offset = base.level_range(level).start;
    let tol = if fib.is_integral() { 0.0 } else { FLOAT_TOLERANCE };

    let balls: Vec<Vec<Element>> = (0..n).map(|z| (0..n).filter(|&w| q.distance_unchecked(z, w) < r).collect()).collect();
    let mut trivs: Vec<HashMap<Element, AffineIsometry>> = Vec::with_capacity(n);
    for ball in &balls {
        let subset: Vec<usize> = ball.iter().map(|&w| offset + w).collect();
        let maps = fib.trivialization(s, &subset)?;
        trivs.push(ball.iter().copied().zip(maps).collect());
    }

    let mut images = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n);
    for x in 0..n {
        if q.length(x) >= r {
            images.push(None);
            raw.push(None);
            continue;
        }
        let mut maps = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n * d);
        for z in 0..n {
            let zx = q.multiply(z, x);
            let (tz, tzx) = (&trivs[z], &trivs[zx]);
            let mut common: Option<(Element, AffineIsometry)> = None;
            for (&w, t1) in tz.iter().filter(|(w, _)| tzx.contains_key(w)) {
                let t = t1.compose(&tzx[&w].inverse()?);
                match &common {
                    None => common = Some((w, t)),
                    Some((w0, t0)) if !t.approx_eq(t0, tol * 1f64.max(t0.translation.iter().fold(0.0, |m: f64, a| m.max(a.abs())))) => {
                        return Err(Error::VerifierFailure(format!(
                            "transition between the {r}-balls at L{level}:{z} and L{level}:{zx} differs at L{level}:{w0} and L{level}:{w}"
                        )));
                    }
                    Some(_) => {}
                }
            }
            maps.push(common.expect("zx lies in both balls").1.linear);
            let a = tz[&z].apply(fib.section(offset + z));
            let b = tz[&zx].apply(fib.section(offset + zx));
            v.extend(a.iter().zip(&b).map(|(s, t)| s - t));
        }
        images.push(Some(BlockOperator { source: (0..n).map(|z| q.multiply(z, x)).collect(), maps }));
        raw.push(Some(v));
    }
    let carrier = Arc::new(Carrier::quotient(chain, level));
    let rep = LocalRepresentation { r: Radius::Finite(r), p: fib.p(), block_dim: d, block_count: n, carrier, images };
    Ok(LocalCocycle {
        r: Radius::Finite(r),
        p: fib.p(),
        block_dim: d,
        block_count: n,
        block_level: level,
        normalizer: n as f64,
        raw,
        companion: Arc::new(rep),
    })
}

/// Pulls a cocycle on a level back to the ambient ball of radius `r`: `b_r = b ∘ π` on
/// `|g| < r`, zero outside; the representation likewise, identity outside.
pub fn lift_to_group(coc: &LocalCocycle, r: u64) -> Result<LocalCocycle> {
    let CarrierKind::Quotient { level } = coc.carrier().kind() else {
        return Err(Error::Unsupported("lifting needs a cocycle on a quotient level".into()));
    };
    let chain = coc.carrier().chain().clone();
    let radius = chain.r_isometric_radius(level);
    if r > radius {
        return Err(Error::RadiusTooLarge { requested: r, radius, level });
    }
    if let Radius::Finite(own) = coc.r {
        if r > own {
            return Err(Error::RadiusTooLarge { requested: r, radius: own, level });
        }
    }
    let carrier = Arc::new(Carrier::ambient_ball(chain.clone(), r)?);
    let rep = coc.representation();
    let mut images = Vec::with_capacity(carrier.order());
    let mut raw = Vec::with_capacity(carrier.order());
    for g in 0..carrier.order() {
        let x = chain.project(level, carrier.ambient_element(g).expect("ambient carrier"))?;
        images.push(Some(rep.image(x)));
        raw.push(Some(coc.raw(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; coc.block_count * coc.block_dim])));
    }
    let lifted = LocalRepresentation { r: Radius::Finite(r), p: coc.p, block_dim: coc.block_dim, block_count: coc.block_count, carrier, images };
    Ok(LocalCocycle { r: Radius::Finite(r), raw, companion: Arc::new(lifted), ..coc.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomomorphismWitness {
    pub g: String,
    pub h: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocycleWitness {
    pub g: String,
    pub h: String,
    /// `π(g)b(h) + b(g)`
    pub lhs: Vec<f64>,
    /// `b(gh)`
    pub rhs: Vec<f64>,
    pub discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalActionReport {
    pub r: String,
    pub p: Exponent,
    pub tolerance: f64,
    pub pairs_checked: usize,
    pub identity_value_zero: bool,
    pub isometric: bool,
    pub homomorphism: ConditionReport<HomomorphismWitness>,
    pub cocycle: ConditionReport<CocycleWitness>,
    pub pass: bool,
}

/// Checks `π(gh) = π(g)π(h)` and `π(g)b(h) + b(g) = b(gh)` for all `g, h` with
/// `|g|, |h|, |gh| < r`, plus `b(e) = 0` and isometry of every `π(g)`.
///
/// Comparisons are exact when `p = 1`, the raw data is integral and every block map is a signed
/// permutation; otherwise within `tolerance` (default 1e-9) relative to `max(1, ‖b(gh)‖_∞)`.
pub fn verify_local_action(rep: &LocalRepresentation, coc: &LocalCocycle, tolerance: Option<f64>) -> Result<LocalActionReport> {
    if !Arc::ptr_eq(&rep.carrier, coc.carrier()) || rep.r != coc.r {
        return Err(Error::InvalidChain("representation and cocycle live on different carriers".into()));
    }
    if rep.p != coc.p {
        return Err(Error::ExponentMismatch { expected: rep.p.to_string(), found: coc.p.to_string() });
    }
    let carrier = coc.carrier();
    let n = carrier.order();
    let d = coc.block_dim;
    let signed = rep.images.iter().flatten().all(|op| op.maps.iter().all(LinearPart::is_signed));
    let tol = tolerance.unwrap_or(if coc.p.value() == 1.0 && coc.is_integral() && signed { 0.0 } else { FLOAT_TOLERANCE });

    let inside: Vec<bool> = (0..n).map(|g| coc.r.admits(carrier.length(g))).collect();
    let images: Vec<BlockOperator> = (0..n).map(|g| rep.image(g)).collect();
    let width = coc.block_count * d;
    let raw: Vec<Vec<f64>> = (0..n).map(|g| coc.raw(g).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; width])).collect();
    let scale = coc.scale();

    let e = carrier.identity();
    let identity_value_zero = raw[e].iter().all(|&x| x == 0.0);
    let isometric = images.iter().all(|op| op.is_isometry(coc.p));

    let mut hom = ConditionReport::new();
    let mut cocycle = ConditionReport::new();
    let mut pairs = 0;
    for g in (0..n).filter(|&g| inside[g]) {
        for h in (0..n).filter(|&h| inside[h]) {
            let Some(gh) = carrier.multiply(g, h) else { continue };
            if !inside[gh] {
                continue;
            }
            pairs += 1;
            let composed = images[g].compose(&images[h]);
            if !composed.approx_eq(&images[gh], tol) {
                hom.record(HomomorphismWitness { g: carrier.label(g).into(), h: carrier.label(h).into() });
            }
            let mut lhs = images[g].apply(&raw[h], d);
            lhs.iter_mut().zip(&raw[g]).for_each(|(a, b)| *a += b);
            let rhs = &raw[gh];
            let bound = tol * 1f64.max(rhs.iter().fold(0.0, |m: f64, x| m.max(x.abs())));
            let discrepancy = lhs.iter().zip(rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if discrepancy > bound {
                cocycle.record(CocycleWitness {
                    g: carrier.label(g).into(),
                    h: carrier.label(h).into(),
                    lhs: lhs.iter().map(|x| x * scale).collect(),
                    rhs: rhs.iter().map(|x| x * scale).collect(),
                    discrepancy: discrepancy * scale,
                });
            }
        }
    }
    let pass = identity_value_zero && isometric && hom.pass && cocycle.pass;
    Ok(LocalActionReport {
        r: coc.r.to_string(),
        p: coc.p,
        tolerance: tol,
        pairs_checked: pairs,
        identity_value_zero,
        isometric,
        homomorphism: hom,
        cocycle,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichWitness {
    pub g: String,
    pub length: u64,
    pub norm: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Checks `ρ₁(|g|) <= ‖b(g)‖_p <= ρ₂(|g|)` for every carrier element inside the radius.
pub fn cocycle_sandwich(coc: &LocalCocycle, rho1: &Control, rho2: &Control, tolerance: f64) -> Result<ConditionReport<SandwichWitness>> {
    let carrier = coc.carrier();
    let mut report = ConditionReport::new();
    for g in (0..carrier.order()).filter(|&g| coc.r.admits(carrier.length(g))) {
        let t = carrier.length(g);
        let (lo, hi, v) = (rho1.require(t)?, rho2.require(t)?, coc.norm(g));
        if lo > v + tolerance * 1f64.max(lo.abs()) || v > hi + tolerance * 1f64.max(hi.abs()) {
            report.record(SandwichWitness { g: carrier.label(g).into(), length: t, norm: v, lower: lo, upper: hi });
        }
    }
    Ok(report)
}

/// Cocycles on ambient balls for strictly increasing radii.
#[derive(Clone, Debug)]
pub struct CocycleFamily {
    entries: Vec<(u64, LocalCocycle)>,
}

impl CocycleFamily {
    pub fn new(entries: Vec<(u64, LocalCocycle)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidChain("empty cocycle family".into()));
        }
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidChain("family radii must increase strictly".into()));
        }
        if let Some((r, _)) = entries.iter().find(|(_, c)| !matches!(c.carrier().kind(), CarrierKind::AmbientBall { .. })) {
            return Err(Error::Unsupported(format!("family entry r = {r} is not on an ambient ball")));
        }
        Ok(CocycleFamily { entries })
    }

    pub fn entries(&self) -> &[(u64, LocalCocycle)] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [(u64, LocalCocycle)] {
        &mut self.entries
    }

    pub fn chain(&self) -> &Arc<GroupChain> {
        self.entries[0].1.carrier().chain()
    }
}

/// For each `r`: the r-local cocycle of `fib`, lifted to the ambient `r`-ball.
pub fn forge_family(fib: &FibredEmbedding, radii: impl IntoIterator<Item = u64>) -> Result<CocycleFamily> {
    let entries = radii
        .into_iter()
        .map(|r| Ok((r, lift_to_group(&local_cocycle_from_fce(fib, r)?, r)?)))
        .collect::<Result<Vec<_>>>()?;
    CocycleFamily::new(entries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementEvidence {
    pub g: String,
    pub length: u64,
    /// `(r, ‖b_r(g)‖_p)` over the whole family.
    pub norms: Vec<(u64, f64)>,
    /// The same restricted to `r > |g|`.
    pub eventual: Vec<(u64, f64)>,
    pub bounded: bool,
    pub eventually_proper: bool,
    /// Radii where `‖b_r(g)‖_p > ρ₂(|g|)`.
    pub unbounded_at: Vec<u64>,
    /// Radii `r > |g|` where `‖b_r(g)‖_p < ρ₁(|g|)`.
    pub below_lower_at: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UltraproductReport {
    pub elements: Vec<ElementEvidence>,
    pub bounded: bool,
    pub eventually_proper: bool,
    pub pass: bool,
    pub conclusion: String,
}

/// Checks the ultralimit hypotheses on a finite family: `‖b_r(g)‖ <= ρ₂(|g|)` for every
/// `r`, and `‖b_r(g)‖ >= ρ₁(|g|)` for every `r > |g|`.
pub fn ultraproduct_hypothesis_check(
    fam: &CocycleFamily,
    rho1: &Control,
    rho2: &Control,
    tests: &[AmbientElement],
) -> Result<UltraproductReport> {
    let chain = fam.chain().clone();
    let mut elements = Vec::with_capacity(tests.len());
    for g in tests {
        let len = chain.ambient_word_length(g)?;
        let (lo, hi) = (rho1.require(len)?, rho2.require(len)?);
        let mut ev = ElementEvidence {
            g: g.to_string(),
            length: len,
            norms: Vec::new(),
            eventual: Vec::new(),
            bounded: true,
            eventually_proper: true,
            unbounded_at: Vec::new(),
            below_lower_at: Vec::new(),
        };
        for (r, coc) in fam.entries() {
            let norm = if len < *r {
                let idx = coc.carrier().find(g).ok_or_else(|| Error::MissingCocycleValue { element: g.to_string(), r: r.to_string() })?;
                if coc.raw(idx).is_none() {
                    return Err(Error::MissingCocycleValue { element: g.to_string(), r: r.to_string() });
                }
                coc.norm(idx)
            } else {
                0.0
            };
            ev.norms.push((*r, norm));
            if norm > hi + FLOAT_TOLERANCE * 1f64.max(hi.abs()) {
                ev.bounded = false;
                ev.unbounded_at.push(*r);
            }
            if *r > len {
                ev.eventual.push((*r, norm));
                if norm < lo - FLOAT_TOLERANCE * 1f64.max(lo.abs()) {
                    ev.eventually_proper = false;
                    ev.below_lower_at.push(*r);
                }
            }
        }
        elements.push(ev);
    }
    let bounded = elements.iter().all(|e| e.bounded);
    let eventually_proper = elements.iter().all(|e| e.eventually_proper);
    Ok(UltraproductReport {
        elements,
        bounded,
        eventually_proper,
        pass: bounded && eventually_proper,
        conclusion: "finite-scale evidence for the hypotheses of the ultraproduct limit; the ultralimit itself is not constructed".into(),
    })
}
