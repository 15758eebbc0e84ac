//! Linear and affine isometries of finite-dimensional ℓ^p.
//!
//! For `p ≠ 2` the linear isometries are the signed permutations. For `p = 2` an
//! orthogonal matrix is also accepted.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{lp_norm, Exponent, FLOAT_TOLERANCE};
use crate::error::{Error, Result};

/// `v ↦ w` with `w[i] = signs[i] · v[perm[i]]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedPermutation {
    perm: Vec<usize>,
    signs: Vec<i8>,
}

impl SignedPermutation {
    pub fn new(perm: Vec<usize>, signs: Vec<i8>) -> Result<Self> {
        if perm.len() != signs.len() {
            return Err(Error::DimensionMismatch { expected: perm.len(), found: signs.len() });
        }
        let mut seen = vec![false; perm.len()];
        for &j in &perm {
            if j >= perm.len() || std::mem::replace(&mut seen[j], true) {
                return Err(Error::InvalidIsometry(format!("{perm:?} is not a permutation")));
            }
        }
        if let Some(s) = signs.iter().find(|s| s.abs() != 1) {
            return Err(Error::InvalidIsometry(format!("sign {s} is not ±1")));
        }
        Ok(SignedPermutation { perm, signs })
    }

    pub fn identity(dim: usize) -> Self {
        SignedPermutation { perm: (0..dim).collect(), signs: vec![1; dim] }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &j)| i == j) && self.signs.iter().all(|&s| s == 1)
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.perm.iter().zip(&self.signs).map(|(&j, &s)| f64::from(s) * v[j]).collect()
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &SignedPermutation) -> SignedPermutation {
        let perm = self.perm.iter().map(|&j| other.perm[j]).collect();
        let signs = self.perm.iter().zip(&self.signs).map(|(&j, &s)| s * other.signs[j]).collect();
        SignedPermutation { perm, signs }
    }

    pub fn inverse(&self) -> SignedPermutation {
        let n = self.dim();
        let mut perm = vec![0; n];
        let mut signs = vec![1; n];
        for (i, (&j, &s)) in self.perm.iter().zip(&self.signs).enumerate() {
            perm[j] = i;
            signs[j] = s;
        }
        SignedPermutation { perm, signs }
    }

    /// Flips the sign attached to output coordinate `i`.
    pub fn with_flipped_sign(&self, i: usize) -> SignedPermutation {
        let mut out = self.clone();
        out.signs[i] = -out.signs[i];
        out
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, (&j, &s)) in self.perm.iter().zip(&self.signs).enumerate() {
            m[(i, j)] = f64::from(s);
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LinearPartRepr {
    SignedPermutation { perm: Vec<usize>, signs: Vec<i8> },
    Matrix { rows: Vec<Vec<f64>> },
}

/// The linear part of an affine map: a signed permutation or a general square matrix.
///
/// Matrices are only isometric for `p = 2` and only when orthogonal; [`LinearPart::is_isometry`]
/// decides that.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearPartRepr", into = "LinearPartRepr")]
pub enum LinearPart {
    Signed(SignedPermutation),
    Matrix(DMatrix<f64>),
}

impl TryFrom<LinearPartRepr> for LinearPart {
    type Error = Error;

    fn try_from(r: LinearPartRepr) -> Result<Self> {
        match r {
            LinearPartRepr::SignedPermutation { perm, signs } => SignedPermutation::new(perm, signs).map(LinearPart::Signed),
            LinearPartRepr::Matrix { rows } => {
                let n = rows.len();
                if let Some(row) = rows.iter().find(|row| row.len() != n) {
                    return Err(Error::DimensionMismatch { expected: n, found: row.len() });
                }
                Ok(LinearPart::Matrix(DMatrix::from_row_iterator(n, n, rows.into_iter().flatten())))
            }
        }
    }
}

impl From<LinearPart> for LinearPartRepr {
    fn from(l: LinearPart) -> Self {
        match l {
            LinearPart::Signed(s) => LinearPartRepr::SignedPermutation { perm: s.perm, signs: s.signs },
            LinearPart::Matrix(m) => LinearPartRepr::Matrix { rows: m.row_iter().map(|r| r.iter().copied().collect()).collect() },
        }
    }
}

impl LinearPart {
    pub fn identity(dim: usize) -> Self {
        LinearPart::Signed(SignedPermutation::identity(dim))
    }

    pub fn dim(&self) -> usize {
        match self {
            LinearPart::Signed(s) => s.dim(),
            LinearPart::Matrix(m) => m.nrows(),
        }
    }

    pub fn is_signed(&self) -> bool {
        matches!(self, LinearPart::Signed(_))
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            LinearPart::Signed(s) => s.apply(v),
            LinearPart::Matrix(m) => (m * DVector::from_column_slice(v)).iter().copied().collect(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            LinearPart::Signed(s) => s.to_matrix(),
            LinearPart::Matrix(m) => m.clone(),
        }
    }

    pub fn compose(&self, other: &LinearPart) -> LinearPart {
        match (self, other) {
            (LinearPart::Signed(a), LinearPart::Signed(b)) => LinearPart::Signed(a.compose(b)),
            _ => LinearPart::Matrix(self.to_matrix() * other.to_matrix()),
        }
    }

    /// Inverse; matrices are inverted numerically and fail when singular.
    pub fn inverse(&self) -> Result<LinearPart> {
        match self {
            LinearPart::Signed(s) => Ok(LinearPart::Signed(s.inverse())),
            LinearPart::Matrix(m) => m
                .clone()
                .try_inverse()
                .map(LinearPart::Matrix)
                .ok_or_else(|| Error::InvalidIsometry("singular linear part".into())),
        }
    }

    /// Signed permutations always; matrices only for `p = 2` when `MᵀM = I` to 1e-9.
    pub fn is_isometry(&self, p: Exponent) -> bool {
        match self {
            LinearPart::Signed(_) => true,
            LinearPart::Matrix(m) => {
                p.value() == 2.0
                    && m.is_square()
                    && (m.transpose() * m - DMatrix::identity(m.nrows(), m.nrows())).abs().max() <= FLOAT_TOLERANCE
            }
        }
    }

    pub fn approx_eq(&self, other: &LinearPart, tol: f64) -> bool {
        match (self, other) {
            (LinearPart::Signed(a), LinearPart::Signed(b)) => a == b,
            _ => self.dim() == other.dim() && (self.to_matrix() - other.to_matrix()).abs().max() <= tol,
        }
    }
}

/// `v ↦ L v + t` on `ℓ^p_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineIsometry {
    pub p: Exponent,
    pub linear: LinearPart,
    pub translation: Vec<f64>,
}

impl AffineIsometry {
    /// Checks dimensions and that `linear` is an isometry of `ℓ^p`.
    pub fn new(p: Exponent, linear: LinearPart, translation: Vec<f64>) -> Result<Self> {
        let t = Self::new_unchecked(p, linear, translation)?;
        if !t.linear.is_isometry(p) {
            return Err(Error::InvalidIsometry(format!("linear part is not an isometry of l^{p}")));
        }
        Ok(t)
    }

    /// Like [`AffineIsometry::new`] without the isometry check; for deliberately broken data.
    pub fn new_unchecked(p: Exponent, linear: LinearPart, translation: Vec<f64>) -> Result<Self> {
        if linear.dim() != translation.len() {
            return Err(Error::DimensionMismatch { expected: linear.dim(), found: translation.len() });
        }
        Ok(AffineIsometry { p, linear, translation })
    }

    pub fn identity(p: Exponent, dim: usize) -> Self {
        AffineIsometry { p, linear: LinearPart::identity(dim), translation: vec![0.0; dim] }
    }

    pub fn translation_by(p: Exponent, t: Vec<f64>) -> Self {
        AffineIsometry { p, linear: LinearPart::identity(t.len()), translation: t }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn is_isometry(&self) -> bool {
        self.linear.is_isometry(self.p)
    }

    pub fn is_integral(&self) -> bool {
        self.linear.is_signed() && self.translation.iter().all(|t| t.fract() == 0.0)
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = self.linear.apply(v);
        for (o, t) in out.iter_mut().zip(&self.translation) {
            *o += t;
        }
        out
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &AffineIsometry) -> AffineIsometry {
        AffineIsometry {
            p: self.p,
            linear: self.linear.compose(&other.linear),
            translation: self.apply(&other.translation),
        }
    }

    pub fn inverse(&self) -> Result<AffineIsometry> {
        let linear = self.linear.inverse()?;
        let translation = linear.apply(&self.translation).into_iter().map(|x| -x).collect();
        Ok(AffineIsometry { p: self.p, linear, translation })
    }

    /// `self^n` for any integer `n`.
    pub fn power(&self, n: i64) -> Result<AffineIsometry> {
        let base = if n < 0 { self.inverse()? } else { self.clone() };
        let mut acc = AffineIsometry::identity(self.p, self.dim());
        for _ in 0..n.unsigned_abs() {
            acc = acc.compose(&base);
        }
        Ok(acc)
    }

    /// Equal linear parts (exactly for signed permutations) and translations within `tol`.
    pub fn approx_eq(&self, other: &AffineIsometry, tol: f64) -> bool {
        self.dim() == other.dim()
            && self.linear.approx_eq(&other.linear, tol)
            && self.translation.iter().zip(&other.translation).all(|(a, b)| (a - b).abs() <= tol)
    }

    /// Largest coordinate discrepancy against `other`, counting a linear-part mismatch as infinite
    /// when both are signed permutations.
    pub fn discrepancy(&self, other: &AffineIsometry) -> f64 {
        let linear = match (&self.linear, &other.linear) {
            (LinearPart::Signed(a), LinearPart::Signed(b)) => {
                if a == b {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            (a, b) => (a.to_matrix() - b.to_matrix()).abs().max(),
        };
        let t = self.translation.iter().zip(&other.translation).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        linear.max(t)
    }

    pub fn norm_of_image(&self, v: &[f64]) -> f64 {
        lp_norm(self.p, &self.apply(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn signed_perm(dim: usize) -> impl Strategy<Value = SignedPermutation> {
        (Just((0..dim).collect::<Vec<usize>>()).prop_shuffle(), prop::collection::vec(prop::bool::ANY, dim))
            .prop_map(|(perm, s)| SignedPermutation::new(perm, s.into_iter().map(|b| if b { 1 } else { -1 }).collect()).unwrap())
    }

    fn affine(dim: usize) -> impl Strategy<Value = AffineIsometry> {
        (signed_perm(dim), prop::collection::vec(-8i32..8, dim)).prop_map(|(s, t)| {
            AffineIsometry::new(Exponent::ONE, LinearPart::Signed(s), t.into_iter().map(f64::from).collect()).unwrap()
        })
    }

    fn rotation(theta: f64) -> LinearPart {
        LinearPart::Matrix(DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()]))
    }

    #[test]
    fn rejects_bad_data() {
        assert!(SignedPermutation::new(vec![0, 0], vec![1, 1]).is_err());
        assert!(SignedPermutation::new(vec![0, 1], vec![1, 2]).is_err());
        let shear = LinearPart::Matrix(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        assert!(AffineIsometry::new(Exponent::TWO, shear, vec![0.0, 0.0]).is_err());
        assert!(AffineIsometry::new(Exponent::ONE, rotation(0.3), vec![0.0, 0.0]).is_err());
        assert!(AffineIsometry::new(Exponent::TWO, rotation(0.3), vec![0.0, 0.0]).is_ok());
    }

    #[test]
    fn signed_permutation_matches_matrix() {
        let s = SignedPermutation::new(vec![2, 0, 1], vec![-1, 1, -1]).unwrap();
        let v = [1.0, 2.0, 3.0];
        let w = s.to_matrix() * DVector::from_column_slice(&v);
        assert_eq!(s.apply(&v), w.iter().copied().collect::<Vec<_>>());
        assert_eq!(s.apply(&v), vec![-3.0, 1.0, -2.0]);
    }

    #[test]
    fn serde_round_trip() {
        let t = AffineIsometry::new(Exponent::TWO, rotation(1.0), vec![1.0, 2.0]).unwrap();
        let back: AffineIsometry = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert!(back.approx_eq(&t, 0.0));
    }

    proptest! {
        #[test]
        fn affine_group_laws(a in affine(5), b in affine(5), c in affine(5), v in prop::collection::vec(-10i32..10, 5)) {
            let v: Vec<f64> = v.into_iter().map(f64::from).collect();
            prop_assert_eq!(a.compose(&b).compose(&c), a.compose(&b.compose(&c)));
            prop_assert!(a.compose(&a.inverse().unwrap()).approx_eq(&AffineIsometry::identity(Exponent::ONE, 5), 0.0));
            prop_assert_eq!(a.compose(&b).apply(&v), a.apply(&b.apply(&v)));
            for p in [Exponent::ONE, Exponent::TWO, Exponent::new(3.0).unwrap(), Exponent::INFINITY] {
                prop_assert_eq!(lp_norm(p, &a.linear.apply(&v)), lp_norm(p, &v));
            }
        }

        #[test]
        fn orthogonal_preserves_l2(theta in 0.0f64..6.3, phi in 0.0f64..6.3, v in prop::collection::vec(-10.0f64..10.0, 2)) {
            let a = AffineIsometry::new(Exponent::TWO, rotation(theta), vec![1.0, -2.0]).unwrap();
            let b = AffineIsometry::new(Exponent::TWO, rotation(phi), vec![0.5, 0.0]).unwrap();
            let l = a.linear.apply(&v);
            prop_assert!((lp_norm(Exponent::TWO, &l) - lp_norm(Exponent::TWO, &v)).abs() <= 1e-9);
            prop_assert!(a.compose(&a.inverse().unwrap()).approx_eq(&AffineIsometry::identity(Exponent::TWO, 2), 1e-9));
            prop_assert!(a.compose(&b).is_isometry());
        }
    }
}
