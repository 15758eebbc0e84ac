//! The coarse disjoint union of the levels of a chain.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group_chain::{Element, GroupChain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BoxPoint {
    pub level: usize,
    pub element: Element,
}

impl BoxPoint {
    pub fn new(level: usize, element: Element) -> Self {
        BoxPoint { level, element }
    }
}

/// `L<level>:<element>`
impl fmt::Display for BoxPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}:{}", self.level, self.element)
    }
}

impl FromStr for BoxPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse { line: None, message: format!("expected a point like L0:3, found {s:?}") };
        let rest = s.trim().strip_prefix('L').ok_or_else(bad)?;
        let (level, element) = rest.split_once(':').ok_or_else(bad)?;
        Ok(BoxPoint { level: level.parse().map_err(|_| bad())?, element: element.parse().map_err(|_| bad())? })
    }
}

/// Finite prefix of the box space `□Γ`.
///
/// Points of different levels are joined through the identity elements: for levels
/// `i < j`, `d(x, y) = d(x, e_i) + separations[i] + ... + separations[j - 1] + d(e_j, y)`.
#[derive(Clone, Debug)]
pub struct BoxSpace {
    chain: Arc<GroupChain>,
    diameters: Vec<u64>,
    separations: Vec<u64>,
    level_offsets: Vec<u64>,
    point_offsets: Vec<usize>,
}

/// Separation between successive identities is `max(diam_i, diam_{i+1}) + 1`.
pub fn assemble_box_space(chain: Arc<GroupChain>) -> BoxSpace {
    let diameters: Vec<u64> = chain.levels().iter().map(|q| q.quotient_diameter()).collect();
    let separations: Vec<u64> = diameters.windows(2).map(|w| w[0].max(w[1]) + 1).collect();
    let mut level_offsets = vec![0u64];
    for s in &separations {
        level_offsets.push(level_offsets.last().unwrap() + s);
    }
    let mut point_offsets = vec![0usize];
    for q in chain.levels() {
        point_offsets.push(point_offsets.last().unwrap() + q.order());
    }
    BoxSpace { chain, diameters, separations, level_offsets, point_offsets }
}

impl BoxSpace {
    pub fn chain(&self) -> &Arc<GroupChain> {
        &self.chain
    }

    pub fn separations(&self) -> &[u64] {
        &self.separations
    }

    pub fn diameters(&self) -> &[u64] {
        &self.diameters
    }

    /// Distance from the identity of level 0 to the identity of each level.
    pub fn level_offsets(&self) -> &[u64] {
        &self.level_offsets
    }

    pub fn point_count(&self) -> usize {
        *self.point_offsets.last().unwrap()
    }

    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        self.point_offsets[level]..self.point_offsets[level + 1]
    }

    /// Points are enumerated level by level, elements in index order.
    pub fn point(&self, index: usize) -> BoxPoint {
        let level = self.point_offsets.partition_point(|&o| o <= index) - 1;
        BoxPoint { level, element: index - self.point_offsets[level] }
    }

    pub fn index_of(&self, p: BoxPoint) -> Result<usize> {
        self.check(p)?;
        Ok(self.point_offsets[p.level] + p.element)
    }

    pub fn points(&self) -> impl Iterator<Item = BoxPoint> + '_ {
        (0..self.point_count()).map(move |i| self.point(i))
    }

    fn check(&self, p: BoxPoint) -> Result<()> {
        if p.level >= self.chain.len() || p.element >= self.chain.level(p.level).order() {
            return Err(Error::InvalidPoint(p.to_string()));
        }
        Ok(())
    }

    pub fn box_distance(&self, x: BoxPoint, y: BoxPoint) -> Result<u64> {
        self.check(x)?;
        self.check(y)?;
        Ok(self.distance_unchecked(x, y))
    }

    pub(crate) fn distance_unchecked(&self, x: BoxPoint, y: BoxPoint) -> u64 {
        if x.level == y.level {
            return self.chain.level(x.level).distance_unchecked(x.element, y.element);
        }
        let (a, b) = if x.level < y.level { (x, y) } else { (y, x) };
        self.chain.level(a.level).length(a.element)
            + (self.level_offsets[b.level] - self.level_offsets[a.level])
            + self.chain.level(b.level).length(b.element)
    }

    /// Distance between points given by global index.
    pub fn distance_by_index(&self, i: usize, j: usize) -> u64 {
        self.distance_unchecked(self.point(i), self.point(j))
    }

    pub fn diameter(&self) -> u64 {
        let n = self.point_count();
        let mut best = 0;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(self.distance_by_index(i, j));
            }
        }
        best
    }

    /// CSV triples `point,point,distance` over all ordered pairs `i < j`.
    pub fn distance_csv(&self) -> String {
        let mut out = String::from("x,y,distance\n");
        let n = self.point_count();
        for i in 0..n {
            for j in i + 1..n {
                out.push_str(&format!("{},{},{}\n", self.point(i), self.point(j), self.distance_by_index(i, j)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group_chain::{build_quotient, AmbientGroup, QuotientSpec};

    pub(crate) fn cyclic_box(moduli: &[u64]) -> BoxSpace {
        let z = AmbientGroup::FreeAbelian { rank: 1 };
        let levels = moduli
            .iter()
            .map(|&m| build_quotient(&z, &QuotientSpec::Cyclic { moduli: vec![m] }).unwrap())
            .collect();
        assemble_box_space(Arc::new(GroupChain::new(z, levels).unwrap()))
    }

    #[test]
    fn separations_follow_the_rule() {
        assert_eq!(cyclic_box(&[4, 8]).separations(), &[5]);
        assert!(cyclic_box(&[8]).separations().is_empty());
        assert_eq!(cyclic_box(&[2, 4, 8]).separations(), &[3, 5]);
    }

    #[test]
    fn distances() {
        let b = cyclic_box(&[4, 8]);
        let d = |x, y| b.box_distance(x, y).unwrap();
        assert_eq!(d(BoxPoint::new(0, 2), BoxPoint::new(0, 2)), 0);
        assert_eq!(d(BoxPoint::new(0, 2), BoxPoint::new(1, 1)), 8);
        assert_eq!(d(BoxPoint::new(1, 1), BoxPoint::new(0, 2)), 8);
        assert_eq!(d(BoxPoint::new(1, 0), BoxPoint::new(1, 5)), 3);
        assert!(b.box_distance(BoxPoint::new(0, 4), BoxPoint::new(0, 0)).is_err());
        assert!(b.box_distance(BoxPoint::new(2, 0), BoxPoint::new(0, 0)).is_err());
    }

    #[test]
    fn metric_axioms_exhaustive() {
        for moduli in [&[2u64, 4, 8][..], &[4, 8, 16], &[3, 6, 12]] {
            let b = cyclic_box(moduli);
            let n = b.point_count();
            for i in 0..n {
                assert_eq!(b.distance_by_index(i, i), 0);
                for j in 0..n {
                    let dij = b.distance_by_index(i, j);
                    assert_eq!(dij, b.distance_by_index(j, i));
                    assert!(i == j || dij > 0);
                    for k in 0..n {
                        assert!(b.distance_by_index(i, k) <= dij + b.distance_by_index(j, k));
                    }
                }
            }
        }
    }

    #[test]
    fn identities_are_separated_beyond_diameters() {
        let b = cyclic_box(&[2, 4, 8, 16]);
        for i in 0..4 {
            for j in i + 1..4 {
                let d = b.box_distance(BoxPoint::new(i, 0), BoxPoint::new(j, 0)).unwrap();
                assert!(d > b.diameters()[i].max(b.diameters()[j]));
            }
        }
    }

    #[test]
    fn small_subsets_stay_in_one_level() {
        let b = cyclic_box(&[2, 4, 8]);
        let min_sep = *b.separations().iter().min().unwrap();
        for i in 0..b.point_count() {
            for j in 0..b.point_count() {
                if b.distance_by_index(i, j) < min_sep {
                    assert_eq!(b.point(i).level, b.point(j).level);
                }
            }
        }
    }

    #[test]
    fn point_names_round_trip() {
        let p: BoxPoint = "L3:17".parse().unwrap();
        assert_eq!(p, BoxPoint::new(3, 17));
        assert_eq!(p.to_string(), "L3:17");
        assert!("3:17".parse::<BoxPoint>().is_err());
    }
}
