//! TOML chain descriptions.
//!
//! ```toml
//! [ambient]
//! family = "free_abelian"   # free | free_abelian | explicit_chain_limit
//! rank = 1                  # `generators = k` for explicit_chain_limit
//!
//! [[levels]]
//! cyclic = [4]
//!
//! [[levels]]
//! table = [[0, 1], [1, 0]]
//! generators = [1]
//!
//! [[levels]]
//! permutations = [[1, 2, 0]]
//! base_point = 0
//!
//! [[connecting_maps]]       # optional; inferred when absent
//! upper = 2                 # the map goes from level `upper` to level `upper - 1`
//! map = [0, 1, 0]
//!
//! [action]                  # optional affine action, one entry per ambient generator
//! p = 1                     # or "inf"
//! dim = 1
//! [[action.generators]]
//! perm = [0]
//! signs = [1]
//! translation = [1.0]
//! ```

use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;
use toml::Spanned;

use crate::embedding::Exponent;
use crate::error::{Error, Result};
use crate::fce::AffineAction;
use crate::group_chain::{build_quotient, AmbientElement, AmbientGroup, GroupChain, QuotientSpec};
use crate::isometry::{AffineIsometry, LinearPart, SignedPermutation};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainDoc {
    ambient: Spanned<AmbientDoc>,
    levels: Vec<Spanned<LevelDoc>>,
    #[serde(default)]
    connecting_maps: Vec<Spanned<MapDoc>>,
    action: Option<Spanned<ActionDoc>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AmbientDoc {
    family: String,
    rank: Option<usize>,
    generators: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelDoc {
    name: Option<String>,
    cyclic: Option<Vec<u64>>,
    table: Option<Vec<Vec<usize>>>,
    generators: Option<Vec<usize>>,
    permutations: Option<Vec<Vec<usize>>>,
    base_point: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MapDoc {
    upper: usize,
    map: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ExponentDoc {
    Number(f64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionDoc {
    p: ExponentDoc,
    dim: usize,
    generators: Vec<GeneratorDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GeneratorDoc {
    perm: Option<Vec<usize>>,
    signs: Option<Vec<i8>>,
    matrix: Option<Vec<Vec<f64>>>,
    translation: Vec<f64>,
}

/// A parsed chain file.
#[derive(Clone, Debug)]
pub struct ChainFile {
    pub chain: Arc<GroupChain>,
    pub level_names: Vec<Option<String>>,
    pub action: Option<AffineAction>,
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

fn at(text: &str, span: Range<usize>, e: impl ToString) -> Error {
    Error::Parse { line: Some(line_of(text, span)), message: e.to_string() }
}

pub fn parse_chain(text: &str) -> Result<ChainFile> {
    let doc: ChainDoc = toml::from_str(text)
        .map_err(|e| Error::Parse { line: e.span().map(|s| line_of(text, s)), message: e.message().to_string() })?;

    let amb_span = doc.ambient.span();
    let amb = doc.ambient.into_inner();
    let need = |v: Option<usize>, key: &str| v.ok_or_else(|| at(text, amb_span.clone(), format!("ambient family {} needs `{key}`", amb.family)));
    let ambient = match amb.family.as_str() {
        "free" => AmbientGroup::Free { rank: need(amb.rank, "rank")? },
        "free_abelian" => AmbientGroup::FreeAbelian { rank: need(amb.rank, "rank")? },
        "explicit_chain_limit" => AmbientGroup::ExplicitChainLimit { generators: need(amb.generators, "generators")? },
        other => return Err(at(text, amb_span, format!("unknown ambient family {other:?}"))),
    };
    ambient.validate().map_err(|e| at(text, amb_span.clone(), e))?;

    if doc.levels.is_empty() {
        return Err(Error::Parse { line: None, message: "a chain needs at least one [[levels]] entry".into() });
    }
    let mut levels = Vec::with_capacity(doc.levels.len());
    let mut level_names = Vec::with_capacity(doc.levels.len());
    for level in doc.levels {
        let span = level.span();
        let l = level.into_inner();
        let spec = match (l.cyclic, l.table, l.permutations) {
            (Some(moduli), None, None) if l.generators.is_none() && l.base_point.is_none() => QuotientSpec::Cyclic { moduli },
            (None, Some(table), None) if l.base_point.is_none() => QuotientSpec::Table {
                table,
                generators: l.generators.ok_or_else(|| at(text, span.clone(), "a table level needs `generators`"))?,
            },
            (None, None, Some(generators)) if l.generators.is_none() => {
                QuotientSpec::Permutations { generators, base_point: l.base_point.unwrap_or(0) }
            }
            _ => {
                return Err(at(
                    text,
                    span,
                    "a level is exactly one of `cyclic`, `table` + `generators`, or `permutations` (+ `base_point`)",
                ))
            }
        };
        levels.push(build_quotient(&ambient, &spec).map_err(|e| at(text, span, e))?);
        level_names.push(l.name);
    }

    let mut maps: Vec<Option<Vec<usize>>> = vec![None; levels.len().saturating_sub(1)];
    let mut map_spans = vec![None; maps.len()];
    for m in doc.connecting_maps {
        let span = m.span();
        let m = m.into_inner();
        if m.upper == 0 || m.upper >= levels.len() {
            return Err(at(text, span, format!("connecting map from level {} does not exist", m.upper)));
        }
        if maps[m.upper - 1].replace(m.map).is_some() {
            return Err(at(text, span, format!("duplicate connecting map from level {}", m.upper)));
        }
        map_spans[m.upper - 1] = Some(span);
    }
    let chain = GroupChain::with_maps(ambient, levels, maps).map_err(|e| {
        // attribute the failure to the first supplied map, if any
        match map_spans.iter().flatten().next() {
            Some(span) => at(text, span.clone(), e),
            None => Error::Parse { line: None, message: e.to_string() },
        }
    })?;

    let action = match doc.action {
        None => None,
        Some(a) => {
            let span = a.span();
            Some(parse_action(a.into_inner()).map_err(|e| at(text, span, e))?)
        }
    };
    Ok(ChainFile { chain: Arc::new(chain), level_names, action })
}

fn parse_action(doc: ActionDoc) -> Result<AffineAction> {
    let p = match doc.p {
        ExponentDoc::Number(v) => Exponent::new(v)?,
        ExponentDoc::Text(s) => s.parse()?,
    };
    let generators = doc
        .generators
        .into_iter()
        .map(|g| {
            let linear = match (g.perm, g.signs, g.matrix) {
                (Some(perm), signs, None) => {
                    let n = perm.len();
                    LinearPart::Signed(SignedPermutation::new(perm, signs.unwrap_or_else(|| vec![1; n]))?)
                }
                (None, None, Some(rows)) => {
                    let n = rows.len();
                    if rows.iter().any(|r| r.len() != n) {
                        return Err(Error::InvalidIsometry("matrix must be square".into()));
                    }
                    LinearPart::Matrix(nalgebra::DMatrix::from_row_iterator(n, n, rows.into_iter().flatten()))
                }
                (None, None, None) => LinearPart::identity(g.translation.len()),
                _ => return Err(Error::InvalidIsometry("give either `perm` (+ `signs`) or `matrix`".into())),
            };
            AffineIsometry::new(p, linear, g.translation)
        })
        .collect::<Result<Vec<_>>>()?;
    AffineAction::new(p, doc.dim, generators)
}

pub fn load_chain(path: &Path) -> Result<ChainFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_chain(&text)
}

/// Parses an ambient element: a word such as `abA` for free groups, `(3;-2)`, `3,-2` or `3`
/// for free abelian groups, `#x` for chain limits.
pub fn parse_element(chain: &GroupChain, text: &str) -> Result<AmbientElement> {
    let t = text.trim();
    let bad = || Error::Parse { line: None, message: format!("cannot read {t:?} as an element of {:?}", chain.ambient()) };
    let g = match chain.ambient() {
        AmbientGroup::Free { .. } => AmbientElement::parse_word(t)?,
        AmbientGroup::FreeAbelian { .. } => {
            let inner = t.strip_prefix('(').and_then(|s| s.strip_suffix(')')).unwrap_or(t);
            let coords = inner
                .split([';', ','])
                .map(|c| c.trim().parse::<i64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            AmbientElement::Vector(coords)
        }
        AmbientGroup::ExplicitChainLimit { .. } => {
            AmbientElement::Limit(t.strip_prefix('#').unwrap_or(t).parse().map_err(|_| bad())?)
        }
    };
    chain.ambient_word_length(&g).or_else(|e| match e {
        Error::NotStabilized { .. } => Ok(0),
        other => Err(other),
    })?;
    Ok(g)
}
