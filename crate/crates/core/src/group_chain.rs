//! Finite marked quotients of a finitely generated group and nested chains of them.
//!
//! Every quotient carries the images of the ambient generators. Generating sets are
//! symmetrized: the Cayley graph of a quotient has an edge `x -> x * s` for every `s`
//! in `S ∪ S⁻¹`, and the word metric is `d(x, y) = |x⁻¹ y|`, which is left-invariant.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of an element in a quotient's fixed enumeration.
pub type Element = usize;

/// Group orders up to this size get exhaustive associativity checks.
pub const DEFAULT_EXHAUSTIVE_LIMIT: usize = 512;

const SAMPLED_TRIPLES: usize = 200_000;
const SAMPLING_SEED: u64 = 0x5eed_b0c5;
const NO_PARENT: u32 = u32::MAX;

/// The finitely generated group the chain approximates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbientGroup {
    Free { rank: usize },
    FreeAbelian { rank: usize },
    /// The group is only known through the chain itself; its word metric is the
    /// stabilized quotient distance.
    ExplicitChainLimit { generators: usize },
}

impl AmbientGroup {
    pub fn generator_count(&self) -> usize {
        match *self {
            AmbientGroup::Free { rank } | AmbientGroup::FreeAbelian { rank } => rank,
            AmbientGroup::ExplicitChainLimit { generators } => generators,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.generator_count() == 0 {
            return Err(Error::InvalidChain("ambient group needs at least one generator".into()));
        }
        Ok(())
    }
}

/// Radius of a word-length ball; `Infinite` admits every element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Radius {
    Finite(u64),
    Infinite,
}

impl Radius {
    /// Strict membership: `length < r`.
    pub fn admits(&self, length: u64) -> bool {
        match *self {
            Radius::Finite(r) => length < r,
            Radius::Infinite => true,
        }
    }
}

impl fmt::Display for Radius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Radius::Finite(r) => write!(f, "{r}"),
            Radius::Infinite => write!(f, "inf"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Letter {
    pub generator: usize,
    pub inverse: bool,
}

impl Letter {
    fn from_symmetric(index: usize) -> Self {
        Letter { generator: index / 2, inverse: index % 2 == 1 }
    }

    fn symmetric_index(&self) -> usize {
        2 * self.generator + usize::from(self.inverse)
    }

    fn inverted(self) -> Self {
        Letter { generator: self.generator, inverse: !self.inverse }
    }
}

/// An element of the ambient group.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AmbientElement {
    /// Freely reduced word (free groups).
    Word(Vec<Letter>),
    /// Integer coordinates (free abelian groups).
    Vector(Vec<i64>),
    /// Element of the deepest level (explicit chain limits).
    Limit(Element),
}

fn free_reduce(letters: impl IntoIterator<Item = Letter>) -> Vec<Letter> {
    let mut out: Vec<Letter> = Vec::new();
    for l in letters {
        if out.last() == Some(&l.inverted()) {
            out.pop();
        } else {
            out.push(l);
        }
    }
    out
}

impl AmbientElement {
    /// Parses a word such as `abA`: lowercase letters are generators `a, b, c, ...`,
    /// uppercase letters their inverses, `1` (or the empty string) the identity.
    pub fn parse_word(text: &str) -> Result<Self> {
        let mut letters = Vec::new();
        for c in text.chars().filter(|c| !c.is_whitespace() && *c != '1') {
            if !c.is_ascii_alphabetic() {
                return Err(Error::Parse { line: None, message: format!("bad letter {c:?} in word {text:?}") });
            }
            let generator = (c.to_ascii_lowercase() as u8 - b'a') as usize;
            letters.push(Letter { generator, inverse: c.is_ascii_uppercase() });
        }
        Ok(AmbientElement::Word(free_reduce(letters)))
    }

    pub fn word(letters: Vec<Letter>) -> Self {
        AmbientElement::Word(free_reduce(letters))
    }
}

impl fmt::Display for AmbientElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AmbientElement::Word(w) if w.is_empty() => write!(f, "1"),
            AmbientElement::Word(w) => {
                for l in w {
                    let c = (b'a' + l.generator as u8) as char;
                    write!(f, "{}", if l.inverse { c.to_ascii_uppercase() } else { c })?;
                }
                Ok(())
            }
            AmbientElement::Vector(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "({})", parts.join(";"))
            }
            AmbientElement::Limit(x) => write!(f, "#{x}"),
        }
    }
}

/// How one level of a chain is described.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuotientSpec {
    /// Product of cyclic groups; generator `i` maps to the `i`-th unit vector.
    Cyclic { moduli: Vec<u64> },
    /// Explicit multiplication table plus one element index per ambient generator.
    Table { table: Vec<Vec<usize>>, generators: Vec<usize> },
    /// Images of the ambient generators as permutations; the group they generate
    /// must act simply transitively on the orbit of `base_point`.
    Permutations { generators: Vec<Vec<usize>>, base_point: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum GroupLaw {
    Abelian { moduli: Vec<u64>, order: usize },
    Table { order: usize, table: Vec<u32> },
}

impl GroupLaw {
    fn order(&self) -> usize {
        match self {
            GroupLaw::Abelian { order, .. } | GroupLaw::Table { order, .. } => *order,
        }
    }

    fn multiply(&self, a: Element, b: Element) -> Element {
        match self {
            GroupLaw::Table { order, table } => table[a * order + b] as Element,
            GroupLaw::Abelian { moduli, .. } => {
                let (mut a, mut b) = (a as u64, b as u64);
                let (mut out, mut stride) = (0u64, 1u64);
                for &m in moduli {
                    let digit = (a % m + b % m) % m;
                    out += digit * stride;
                    stride *= m;
                    a /= m;
                    b /= m;
                }
                out as Element
            }
        }
    }
}

/// One level `Γ/Γ_n` of a chain: a finite group with the images of the ambient generators.
#[derive(Clone, Debug)]
pub struct MarkedQuotient {
    law: GroupLaw,
    identity: Element,
    gen_images: Vec<Element>,
    inverses: Vec<Element>,
    symmetric: Vec<Element>,
    distance: Vec<u32>,
    parent: Vec<(Element, u32)>,
}

impl PartialEq for MarkedQuotient {
    fn eq(&self, other: &Self) -> bool {
        self.law == other.law && self.identity == other.identity && self.gen_images == other.gen_images
    }
}

pub fn build_quotient(ambient: &AmbientGroup, spec: &QuotientSpec) -> Result<MarkedQuotient> {
    build_quotient_with_limit(ambient, spec, DEFAULT_EXHAUSTIVE_LIMIT)
}

/// Like [`build_quotient`], with a configurable order threshold above which the group
/// axioms are sampled rather than checked exhaustively.
pub fn build_quotient_with_limit(
    ambient: &AmbientGroup,
    spec: &QuotientSpec,
    exhaustive_limit: usize,
) -> Result<MarkedQuotient> {
    ambient.validate()?;
    let k = ambient.generator_count();
    let (law, identity, gens) = match spec {
        QuotientSpec::Cyclic { moduli } => {
            if moduli.len() != k {
                return Err(Error::InvalidQuotient(format!(
                    "{} cyclic moduli given for {k} ambient generators",
                    moduli.len()
                )));
            }
            if moduli.contains(&0) {
                return Err(Error::InvalidQuotient("cyclic moduli must be positive".into()));
            }
            let order = moduli
                .iter()
                .try_fold(1u64, |acc, &m| acc.checked_mul(m))
                .filter(|&o| o <= u32::MAX as u64)
                .ok_or_else(|| Error::InvalidQuotient("group order too large".into()))?
                as usize;
            let mut stride = 1u64;
            let mut gens = Vec::with_capacity(k);
            for &m in moduli {
                gens.push(if m == 1 { 0 } else { stride as Element });
                stride *= m;
            }
            (GroupLaw::Abelian { moduli: moduli.clone(), order }, 0, gens)
        }
        QuotientSpec::Table { table, generators } => {
            if generators.len() != k {
                return Err(Error::InvalidQuotient(format!(
                    "{} generator images given for {k} ambient generators",
                    generators.len()
                )));
            }
            let (law, identity) = table_law(table, exhaustive_limit)?;
            for &g in generators {
                if g >= law.order() {
                    return Err(Error::ElementOutOfRange { index: g, order: law.order() });
                }
            }
            (law, identity, generators.clone())
        }
        QuotientSpec::Permutations { generators, base_point } => {
            if generators.len() != k {
                return Err(Error::InvalidQuotient(format!(
                    "{} permutations given for {k} ambient generators",
                    generators.len()
                )));
            }
            permutation_law(generators, *base_point)?
        }
    };

    if matches!(ambient, AmbientGroup::FreeAbelian { .. }) {
        for (i, &a) in gens.iter().enumerate() {
            for &b in &gens[i + 1..] {
                if law.multiply(a, b) != law.multiply(b, a) {
                    return Err(Error::InvalidQuotient(
                        "generator images do not commute, so this is not a quotient of a free abelian group".into(),
                    ));
                }
            }
        }
    }
    MarkedQuotient::from_law(law, identity, gens)
}

fn table_law(table: &[Vec<usize>], exhaustive_limit: usize) -> Result<(GroupLaw, Element)> {
    let n = table.len();
    if n == 0 {
        return Err(Error::NotAGroup("empty multiplication table".into()));
    }
    if n > u32::MAX as usize {
        return Err(Error::NotAGroup("table too large".into()));
    }
    let mut flat = Vec::with_capacity(n * n);
    for (i, row) in table.iter().enumerate() {
        if row.len() != n {
            return Err(Error::NotAGroup(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        for &v in row {
            if v >= n {
                return Err(Error::NotAGroup(format!("entry {v} in row {i} is out of range")));
            }
            flat.push(v as u32);
        }
    }
    let mul = |a: usize, b: usize| flat[a * n + b] as usize;
    let identity = (0..n)
        .find(|&e| (0..n).all(|x| mul(e, x) == x && mul(x, e) == x))
        .ok_or_else(|| Error::NotAGroup("no identity element".into()))?;
    for a in 0..n {
        if !(0..n).any(|b| mul(a, b) == identity && mul(b, a) == identity) {
            return Err(Error::NotAGroup(format!("element {a} has no inverse")));
        }
    }
    let check = |a: usize, b: usize, c: usize| -> Result<()> {
        if mul(mul(a, b), c) != mul(a, mul(b, c)) {
            return Err(Error::NotAGroup(format!("associativity fails on ({a}, {b}, {c})")));
        }
        Ok(())
    };
    if n <= exhaustive_limit {
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    check(a, b, c)?;
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLING_SEED);
        for _ in 0..SAMPLED_TRIPLES {
            check(rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n))?;
        }
    }
    Ok((GroupLaw::Table { order: n, table: flat }, identity))
}

fn permutation_law(perms: &[Vec<usize>], base: usize) -> Result<(GroupLaw, Element, Vec<Element>)> {
    let degree = perms.first().map(Vec::len).unwrap_or(0);
    if degree == 0 || base >= degree {
        return Err(Error::InvalidQuotient(format!("base point {base} outside a permutation domain of size {degree}")));
    }
    for p in perms {
        let mut seen = vec![false; degree];
        if p.len() != degree || p.iter().any(|&v| v >= degree || std::mem::replace(&mut seen[v], true)) {
            return Err(Error::InvalidQuotient("generator images are not permutations of one common set".into()));
        }
    }
    // orbit of the base point
    let mut orbit_index = vec![usize::MAX; degree];
    let mut orbit = vec![base];
    orbit_index[base] = 0;
    let mut head = 0;
    while head < orbit.len() {
        let x = orbit[head];
        head += 1;
        for p in perms {
            if orbit_index[p[x]] == usize::MAX {
                orbit_index[p[x]] = orbit.len();
                orbit.push(p[x]);
            }
        }
    }
    let m = orbit.len();
    let restrict = |p: &Vec<usize>| -> Vec<usize> { orbit.iter().map(|&x| orbit_index[p[x]]).collect() };
    let gens: Vec<Vec<usize>> = perms.iter().map(restrict).collect();

    // closure under right multiplication; elements are keyed by the image of the base point
    let mut by_point: Vec<Option<usize>> = vec![None; m];
    let mut elements: Vec<Vec<usize>> = vec![(0..m).collect()];
    by_point[0] = Some(0);
    let mut head = 0;
    while head < elements.len() {
        let g = elements[head].clone();
        head += 1;
        for s in &gens {
            let gs: Vec<usize> = (0..m).map(|i| g[s[i]]).collect();
            match by_point[gs[0]] {
                Some(j) if elements[j] == gs => {}
                Some(_) => {
                    return Err(Error::NotSimplyTransitive { base_point: base, orbit: m, group: elements.len() + 1 });
                }
                None => {
                    by_point[gs[0]] = Some(elements.len());
                    elements.push(gs);
                }
            }
        }
    }
    let point_to_element: Vec<usize> = by_point.into_iter().map(|e| e.expect("orbit is transitive")).collect();
    let mut table = Vec::with_capacity(m * m);
    for a in &elements {
        for b in &elements {
            table.push(point_to_element[a[b[0]]] as u32);
        }
    }
    let gen_images = gens.iter().map(|s| point_to_element[s[0]]).collect();
    Ok((GroupLaw::Table { order: m, table }, 0, gen_images))
}

impl MarkedQuotient {
    fn from_law(law: GroupLaw, identity: Element, gen_images: Vec<Element>) -> Result<Self> {
        let n = law.order();
        let inverses: Vec<Element> = match &law {
            GroupLaw::Abelian { moduli, .. } => (0..n)
                .map(|x| {
                    let (mut x, mut out, mut stride) = (x as u64, 0u64, 1u64);
                    for &m in moduli {
                        out += ((m - x % m) % m) * stride;
                        stride *= m;
                        x /= m;
                    }
                    out as Element
                })
                .collect(),
            GroupLaw::Table { .. } => {
                let mut inv = vec![0; n];
                for (a, slot) in inv.iter_mut().enumerate() {
                    *slot = (0..n).find(|&b| law.multiply(a, b) == identity).expect("validated group");
                }
                inv
            }
        };
        let symmetric: Vec<Element> = gen_images.iter().flat_map(|&g| [g, inverses[g]]).collect();

        let mut distance = vec![u32::MAX; n];
        let mut parent = vec![(identity, NO_PARENT); n];
        distance[identity] = 0;
        let mut queue = VecDeque::from([identity]);
        let mut reached = 1;
        while let Some(x) = queue.pop_front() {
            for (j, &s) in symmetric.iter().enumerate() {
                let y = law.multiply(x, s);
                if distance[y] == u32::MAX {
                    distance[y] = distance[x] + 1;
                    parent[y] = (x, j as u32);
                    reached += 1;
                    queue.push_back(y);
                }
            }
        }
        if reached != n {
            return Err(Error::Disconnected { reached, order: n });
        }
        Ok(MarkedQuotient { law, identity, gen_images, inverses, symmetric, distance, parent })
    }

    pub fn order(&self) -> usize {
        self.law.order()
    }

    pub fn identity(&self) -> Element {
        self.identity
    }

    pub fn gen_images(&self) -> &[Element] {
        &self.gen_images
    }

    /// `[s_0, s_0⁻¹, s_1, s_1⁻¹, ...]`.
    pub fn symmetric_generators(&self) -> &[Element] {
        &self.symmetric
    }

    pub fn multiply(&self, a: Element, b: Element) -> Element {
        self.law.multiply(a, b)
    }

    pub fn inverse(&self, a: Element) -> Element {
        self.inverses[a]
    }

    pub fn power(&self, x: Element, exponent: i64) -> Element {
        let mut base = if exponent < 0 { self.inverses[x] } else { x };
        let mut e = exponent.unsigned_abs();
        let mut acc = self.identity;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.multiply(acc, base);
            }
            base = self.multiply(base, base);
            e >>= 1;
        }
        acc
    }

    fn check_index(&self, x: Element) -> Result<()> {
        if x >= self.order() {
            return Err(Error::ElementOutOfRange { index: x, order: self.order() });
        }
        Ok(())
    }

    /// Word length of `x` with respect to the symmetrized generators.
    pub fn length(&self, x: Element) -> u64 {
        self.distance[x] as u64
    }

    /// Word-metric distance; uses left-invariance `d(x, y) = |x⁻¹ y|`.
    pub fn cayley_distance(&self, x: Element, y: Element) -> Result<u64> {
        self.check_index(x)?;
        self.check_index(y)?;
        Ok(self.distance_unchecked(x, y))
    }

    pub(crate) fn distance_unchecked(&self, x: Element, y: Element) -> u64 {
        self.distance[self.multiply(self.inverses[x], y)] as u64
    }

    pub fn quotient_diameter(&self) -> u64 {
        self.distance.iter().copied().max().unwrap_or(0) as u64
    }

    /// Symmetric-generator indices of the BFS-tree geodesic from the identity to `x`.
    pub fn geodesic_word(&self, x: Element) -> Vec<usize> {
        let mut word = Vec::with_capacity(self.distance[x] as usize);
        let mut cur = x;
        while cur != self.identity {
            let (p, j) = self.parent[cur];
            word.push(j as usize);
            cur = p;
        }
        word.reverse();
        word
    }

    /// Cyclic moduli when the level was built from a cyclic description.
    pub fn moduli(&self) -> Option<&[u64]> {
        match &self.law {
            GroupLaw::Abelian { moduli, .. } => Some(moduli),
            GroupLaw::Table { .. } => None,
        }
    }

    /// Coordinates of `x` in the product of cyclic groups, when available.
    pub fn abelian_coordinates(&self, x: Element) -> Option<Vec<u64>> {
        let moduli = self.moduli()?;
        let mut rest = x as u64;
        Some(
            moduli
                .iter()
                .map(|&m| {
                    let d = rest % m;
                    rest /= m;
                    d
                })
                .collect(),
        )
    }

    /// Full multiplication table, row `a` holding `a * b` for each `b`.
    pub fn multiplication_table(&self) -> Vec<Vec<usize>> {
        let n = self.order();
        (0..n).map(|a| (0..n).map(|b| self.multiply(a, b)).collect()).collect()
    }

    fn evaluate_symmetric_word(&self, word: &[usize]) -> Element {
        word.iter().fold(self.identity, |acc, &j| self.multiply(acc, self.symmetric[j]))
    }
}

/// The data `{Γ, (Γ_i)}`: an ambient group and nested finite quotients with connecting epimorphisms.
#[derive(Clone, Debug)]
pub struct GroupChain {
    ambient: AmbientGroup,
    levels: Vec<MarkedQuotient>,
    connecting: Vec<Vec<Element>>,
    radii: Vec<u64>,
    warnings: Vec<String>,
}

/// Induces the map `upper -> lower` sending marked generators to marked generators.
pub fn infer_connecting_map(upper: &MarkedQuotient, lower: &MarkedQuotient) -> Result<Vec<Element>> {
    if upper.gen_images.len() != lower.gen_images.len() {
        return Err(Error::InvalidChain("levels mark different numbers of generators".into()));
    }
    let n = upper.order();
    let mut map = vec![usize::MAX; n];
    map[upper.identity] = lower.identity;
    let mut queue = VecDeque::from([upper.identity]);
    while let Some(x) = queue.pop_front() {
        for (j, &s) in upper.symmetric.iter().enumerate() {
            let y = upper.multiply(x, s);
            let image = lower.multiply(map[x], lower.symmetric[j]);
            if map[y] == usize::MAX {
                map[y] = image;
                queue.push_back(y);
            } else if map[y] != image {
                return Err(Error::InvalidChain(format!(
                    "generator images do not induce a homomorphism (element {y} of the deeper level would map to both {} and {image})",
                    map[y]
                )));
            }
        }
    }
    Ok(map)
}

fn validate_connecting_map(upper: &MarkedQuotient, lower: &MarkedQuotient, map: &[Element], index: usize) -> Result<()> {
    let bad = |msg: String| Error::InvalidChain(format!("connecting map {index}: {msg}"));
    if map.len() != upper.order() {
        return Err(bad(format!("has {} entries, expected {}", map.len(), upper.order())));
    }
    if let Some(&v) = map.iter().find(|&&v| v >= lower.order()) {
        return Err(bad(format!("image {v} out of range")));
    }
    for (a, b) in upper.gen_images.iter().zip(&lower.gen_images) {
        if map[*a] != *b {
            return Err(bad("does not send marked generators to marked generators".into()));
        }
    }
    for x in 0..upper.order() {
        for &s in &upper.gen_images {
            if map[upper.multiply(x, s)] != lower.multiply(map[x], map[s]) {
                return Err(bad(format!("is not a homomorphism at element {x}")));
            }
        }
    }
    let mut hit = vec![false; lower.order()];
    map.iter().for_each(|&v| hit[v] = true);
    if hit.iter().any(|h| !h) {
        return Err(bad("is not surjective".into()));
    }
    Ok(())
}

impl GroupChain {
    /// Builds a chain, inferring every connecting map from the generator markings.
    pub fn new(ambient: AmbientGroup, levels: Vec<MarkedQuotient>) -> Result<Self> {
        let n = levels.len();
        Self::with_maps(ambient, levels, vec![None; n.saturating_sub(1)])
    }

    /// Builds a chain; `maps[i]`, when given, is the epimorphism from level `i + 1` onto level `i`.
    pub fn with_maps(ambient: AmbientGroup, levels: Vec<MarkedQuotient>, maps: Vec<Option<Vec<Element>>>) -> Result<Self> {
        ambient.validate()?;
        if levels.is_empty() {
            return Err(Error::InvalidChain("a chain needs at least one level".into()));
        }
        if maps.len() != levels.len() - 1 {
            return Err(Error::InvalidChain(format!(
                "{} connecting maps given for {} levels",
                maps.len(),
                levels.len()
            )));
        }
        for (i, q) in levels.iter().enumerate() {
            if q.gen_images.len() != ambient.generator_count() {
                return Err(Error::InvalidChain(format!("level {i} marks the wrong number of generators")));
            }
        }
        let mut connecting = Vec::with_capacity(maps.len());
        for (i, given) in maps.into_iter().enumerate() {
            let (lower, upper) = (&levels[i], &levels[i + 1]);
            if upper.order() < lower.order() {
                return Err(Error::InvalidChain(format!("order decreases from level {i} to level {}", i + 1)));
            }
            let map = match given {
                Some(m) => {
                    validate_connecting_map(upper, lower, &m, i)?;
                    m
                }
                None => infer_connecting_map(upper, lower)?,
            };
            connecting.push(map);
        }
        let mut chain = GroupChain { ambient, levels, connecting, radii: Vec::new(), warnings: Vec::new() };
        chain.radii = (0..chain.levels.len()).map(|i| chain.compute_radius(i)).collect::<Result<_>>()?;
        if let Some(i) = chain.radii.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidChain(format!("isometry radius decreases after level {i}")));
        }
        chain.warnings.push(format!(
            "trivial intersection of the subgroups is asymptotic; this finite chain only shows isometry radii growing to {}",
            chain.radii.last().copied().unwrap_or(0)
        ));
        if chain.radii.len() > 1 && chain.radii[chain.radii.len() - 2] == chain.radii[chain.radii.len() - 1] {
            chain.warnings.push("isometry radius did not grow at the deepest level".into());
        }
        Ok(chain)
    }

    pub fn ambient(&self) -> &AmbientGroup {
        &self.ambient
    }

    pub fn levels(&self) -> &[MarkedQuotient] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &MarkedQuotient {
        &self.levels[i]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn connecting_map(&self, i: usize) -> &[Element] {
        &self.connecting[i]
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn deepest(&self) -> usize {
        self.levels.len() - 1
    }

    /// Pushes an element of level `from` down to level `to <= from`.
    pub fn project_between(&self, from: usize, to: usize, x: Element) -> Element {
        (to..from).rev().fold(x, |acc, i| self.connecting[i][acc])
    }

    fn check_shape(&self, g: &AmbientElement) -> Result<()> {
        let k = self.ambient.generator_count();
        match (&self.ambient, g) {
            (AmbientGroup::Free { .. }, AmbientElement::Word(w)) if w.iter().all(|l| l.generator < k) => Ok(()),
            (AmbientGroup::FreeAbelian { .. }, AmbientElement::Vector(v)) if v.len() == k => Ok(()),
            (AmbientGroup::ExplicitChainLimit { .. }, AmbientElement::Limit(x)) if *x < self.levels[self.deepest()].order() => {
                Ok(())
            }
            _ => Err(Error::AmbientMismatch(format!("{g} is not an element of {:?}", self.ambient))),
        }
    }

    /// The quotient map `π_level`.
    pub fn project(&self, level: usize, g: &AmbientElement) -> Result<Element> {
        self.check_shape(g)?;
        let q = &self.levels[level];
        Ok(match g {
            AmbientElement::Word(w) => w.iter().fold(q.identity, |acc, l| q.multiply(acc, q.symmetric[l.symmetric_index()])),
            AmbientElement::Vector(v) => v
                .iter()
                .zip(&q.gen_images)
                .fold(q.identity, |acc, (&c, &s)| q.multiply(acc, q.power(s, c))),
            AmbientElement::Limit(x) => self.project_between(self.deepest(), level, *x),
        })
    }

    pub fn ambient_identity(&self) -> AmbientElement {
        match self.ambient {
            AmbientGroup::Free { .. } => AmbientElement::Word(Vec::new()),
            AmbientGroup::FreeAbelian { rank } => AmbientElement::Vector(vec![0; rank]),
            AmbientGroup::ExplicitChainLimit { .. } => AmbientElement::Limit(self.levels[self.deepest()].identity),
        }
    }

    pub fn ambient_multiply(&self, a: &AmbientElement, b: &AmbientElement) -> Result<AmbientElement> {
        self.check_shape(a)?;
        self.check_shape(b)?;
        Ok(match (a, b) {
            (AmbientElement::Word(x), AmbientElement::Word(y)) => AmbientElement::word(x.iter().chain(y).copied().collect()),
            (AmbientElement::Vector(x), AmbientElement::Vector(y)) => {
                AmbientElement::Vector(x.iter().zip(y).map(|(p, q)| p + q).collect())
            }
            (AmbientElement::Limit(x), AmbientElement::Limit(y)) => AmbientElement::Limit(self.levels[self.deepest()].multiply(*x, *y)),
            _ => unreachable!("shapes checked"),
        })
    }

    pub fn ambient_inverse(&self, a: &AmbientElement) -> Result<AmbientElement> {
        self.check_shape(a)?;
        Ok(match a {
            AmbientElement::Word(w) => AmbientElement::Word(w.iter().rev().map(|l| l.inverted()).collect()),
            AmbientElement::Vector(v) => AmbientElement::Vector(v.iter().map(|x| -x).collect()),
            AmbientElement::Limit(x) => AmbientElement::Limit(self.levels[self.deepest()].inverse(*x)),
        })
    }

    /// Ambient element spelled by a word of symmetric-generator indices.
    pub fn ambient_from_symmetric_word(&self, word: &[usize]) -> AmbientElement {
        match self.ambient {
            AmbientGroup::Free { .. } => AmbientElement::word(word.iter().map(|&j| Letter::from_symmetric(j)).collect()),
            AmbientGroup::FreeAbelian { rank } => {
                let mut v = vec![0i64; rank];
                for &j in word {
                    v[j / 2] += if j % 2 == 0 { 1 } else { -1 };
                }
                AmbientElement::Vector(v)
            }
            AmbientGroup::ExplicitChainLimit { .. } => {
                AmbientElement::Limit(self.levels[self.deepest()].evaluate_symmetric_word(word))
            }
        }
    }

    /// Canonical lift of a level element: the BFS geodesic word from the identity.
    pub fn canonical_lift(&self, level: usize, x: Element) -> AmbientElement {
        self.ambient_from_symmetric_word(&self.levels[level].geodesic_word(x))
    }

    /// Word length `d_Γ(g, e)`.
    pub fn ambient_word_length(&self, g: &AmbientElement) -> Result<u64> {
        self.check_shape(g)?;
        match g {
            AmbientElement::Word(w) => Ok(free_reduce(w.iter().copied()).len() as u64),
            AmbientElement::Vector(v) => Ok(v.iter().map(|c| c.unsigned_abs()).sum()),
            AmbientElement::Limit(x) => {
                let d = self.deepest();
                let last = self.levels[d].length(*x);
                if d == 0 {
                    return Err(Error::NotStabilized { previous: last, last });
                }
                let previous = self.levels[d - 1].length(self.project_between(d, d - 1, *x));
                if previous != last {
                    return Err(Error::NotStabilized { previous, last });
                }
                Ok(last)
            }
        }
    }

    /// Length used for ball enumeration; for chain limits this is the deepest-level length.
    fn ball_length(&self, g: &AmbientElement) -> u64 {
        match g {
            AmbientElement::Limit(x) => self.levels[self.deepest()].length(*x),
            other => self.ambient_word_length(other).expect("checked element"),
        }
    }

    /// All ambient elements of length `< radius`, in a deterministic order.
    /// For chain limits the deepest level stands in for the ambient group.
    pub fn ambient_ball(&self, radius: u64) -> Vec<AmbientElement> {
        match self.ambient {
            AmbientGroup::Free { rank } => {
                let mut out = vec![AmbientElement::Word(Vec::new())];
                let mut frontier: Vec<Vec<Letter>> = vec![Vec::new()];
                for _ in 1..radius {
                    let mut next = Vec::new();
                    for w in &frontier {
                        for j in 0..2 * rank {
                            let l = Letter::from_symmetric(j);
                            if w.last() == Some(&l.inverted()) {
                                continue;
                            }
                            let mut nw = w.clone();
                            nw.push(l);
                            next.push(nw);
                        }
                    }
                    out.extend(next.iter().cloned().map(AmbientElement::Word));
                    frontier = next;
                }
                out
            }
            AmbientGroup::FreeAbelian { rank } => {
                let mut out = Vec::new();
                for len in 0..radius {
                    vectors_of_norm(rank, len, &mut Vec::new(), &mut out);
                }
                out.into_iter().map(AmbientElement::Vector).collect()
            }
            AmbientGroup::ExplicitChainLimit { .. } => {
                let q = &self.levels[self.deepest()];
                (0..q.order()).filter(|&x| q.length(x) < radius).map(AmbientElement::Limit).collect()
            }
        }
    }

    pub fn ball_contains(&self, g: &AmbientElement, radius: Radius) -> bool {
        radius.admits(self.ball_length(g))
    }

    /// Isometry radius of the quotient map onto `level`: the largest `r` such that the map
    /// is isometric on every subset of diameter `< r`.
    pub fn r_isometric_radius(&self, level: usize) -> u64 {
        self.radii[level]
    }

    pub fn radii(&self) -> &[u64] {
        &self.radii
    }

    fn compute_radius(&self, level: usize) -> Result<u64> {
        let q = &self.levels[level];
        let n = q.order();
        let limit = q.quotient_diameter() + 1;
        match self.ambient {
            AmbientGroup::Free { rank } => {
                // states (element, last symmetric letter) reachable by reduced words of exact length L
                let width = 2 * rank + 1;
                let start = 2 * rank;
                let mut layer = vec![false; n * width];
                layer[q.identity * width + start] = true;
                for len in 1..=limit {
                    let mut next = vec![false; n * width];
                    for (state, _) in layer.iter().enumerate().filter(|(_, on)| **on) {
                        let (x, last) = (state / width, state % width);
                        for j in 0..2 * rank {
                            if last != start && j == (last ^ 1) {
                                continue;
                            }
                            let y = q.multiply(x, q.symmetric[j]);
                            if q.length(y) < len {
                                return Ok(len);
                            }
                            next[y * width + j] = true;
                        }
                    }
                    layer = next;
                }
                Ok(limit)
            }
            AmbientGroup::FreeAbelian { rank } => {
                // states (element, per-coordinate direction in {unused, +, -})
                let patterns = 3usize
                    .checked_pow(rank as u32)
                    .filter(|p| p.saturating_mul(n) <= 1 << 26)
                    .ok_or_else(|| Error::Unsupported(format!("free abelian rank {rank} is too large for the radius search")))?;
                let mut layer = vec![false; n * patterns];
                layer[q.identity * patterns] = true;
                for len in 1..=limit {
                    let mut next = vec![false; n * patterns];
                    for (state, _) in layer.iter().enumerate().filter(|(_, on)| **on) {
                        let (x, pattern) = (state / patterns, state % patterns);
                        let mut stride = 1;
                        for c in 0..rank {
                            let used = (pattern / stride) % 3;
                            for dir in 1..=2usize {
                                if used != 0 && used != dir {
                                    continue;
                                }
                                let y = q.multiply(x, q.symmetric[2 * c + dir - 1]);
                                if q.length(y) < len {
                                    return Ok(len);
                                }
                                let np = pattern + (dir - used) * stride;
                                next[y * patterns + np] = true;
                            }
                            stride *= 3;
                        }
                    }
                    layer = next;
                }
                Ok(limit)
            }
            AmbientGroup::ExplicitChainLimit { .. } => {
                let d = self.deepest();
                let deep = &self.levels[d];
                let failure = (0..deep.order())
                    .filter(|&x| q.length(self.project_between(d, level, x)) < deep.length(x))
                    .map(|x| deep.length(x))
                    .min();
                Ok(failure.unwrap_or(deep.quotient_diameter() + 1))
            }
        }
    }

    /// Smallest level index `>= exclude_below` whose isometry radius is at least `r`.
    pub fn select_level_for_r(&self, r: u64, exclude_below: usize) -> Result<usize> {
        (exclude_below..self.levels.len())
            .find(|&i| self.radii[i] >= r)
            .ok_or(Error::ChainExhausted {
                requested: r,
                exclude_below,
                deepest: self.radii.last().copied().unwrap_or(0),
            })
    }
}

fn vectors_of_norm(rank: usize, norm: u64, prefix: &mut Vec<i64>, out: &mut Vec<Vec<i64>>) {
    if prefix.len() + 1 == rank {
        let n = norm as i64;
        for v in if n == 0 { vec![0] } else { vec![n, -n] } {
            let mut full = prefix.clone();
            full.push(v);
            out.push(full);
        }
        return;
    }
    for c in 0..=norm {
        let n = c as i64;
        for v in if n == 0 { vec![0] } else { vec![n, -n] } {
            prefix.push(v);
            vectors_of_norm(rank, norm - c, prefix, out);
            prefix.pop();
        }
    }
}
