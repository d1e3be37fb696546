//! SO(2) irreps, composite feature types and the steerable kernel bases.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::FeatureError;
use crate::scalar::Scalar;

/// Highest irrep order accepted anywhere.
pub const MAX_ORDER: u32 = 8;

/// Ordered direct sum of irreps, e.g. `4xrho0+rho1+3xrho2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureType {
    orders: Vec<u32>,
    offsets: Vec<usize>,
    dim: usize,
}

impl FeatureType {
    pub fn new(orders: Vec<u32>) -> Result<Self, FeatureError> {
        if let Some(&order) = orders.iter().find(|&&n| n > MAX_ORDER) {
            return Err(FeatureError::OrderTooLarge {
                order,
                max: MAX_ORDER,
            });
        }
        let mut offsets = Vec::with_capacity(orders.len());
        let mut dim = 0;
        for &n in &orders {
            offsets.push(dim);
            dim += irrep_dim(n);
        }
        Ok(FeatureType {
            orders,
            offsets,
            dim,
        })
    }

    /// `count` copies of ρ0.
    pub fn scalars(count: usize) -> Self {
        Self::new(vec![0; count]).expect("order 0 is always valid")
    }

    /// `count` copies of this type, concatenated.
    pub fn repeat(&self, count: usize) -> Self {
        let orders = (0..count).flat_map(|_| self.orders.iter().copied()).collect();
        Self::new(orders).expect("orders already validated")
    }

    pub fn concat(&self, other: &FeatureType) -> Self {
        let orders = self.orders.iter().chain(&other.orders).copied().collect();
        Self::new(orders).expect("orders already validated")
    }

    pub fn orders(&self) -> &[u32] {
        &self.orders
    }

    /// Start column of every component.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn component_count(&self) -> usize {
        self.orders.len()
    }

    pub fn max_order(&self) -> u32 {
        self.orders.iter().copied().max().unwrap_or(0)
    }

    pub fn is_scalar(&self) -> bool {
        self.orders.iter().all(|&n| n == 0)
    }

    /// Splits into `parts` consecutive equal-dimension pieces, if possible.
    pub fn split_even(&self, parts: usize) -> Option<Vec<FeatureType>> {
        if parts == 0 || !self.dim.is_multiple_of(parts) {
            return None;
        }
        let want = self.dim / parts;
        let mut out = Vec::with_capacity(parts);
        let mut cur = Vec::new();
        let mut d = 0;
        for &n in &self.orders {
            cur.push(n);
            d += irrep_dim(n);
            if d == want {
                out.push(Self::new(std::mem::take(&mut cur)).ok()?);
                d = 0;
            } else if d > want {
                return None;
            }
        }
        (out.len() == parts).then_some(out)
    }
}

pub fn irrep_dim(n: u32) -> usize {
    if n == 0 {
        1
    } else {
        2
    }
}

fn fmt_run(orders: &[u32]) -> String {
    let mut terms = Vec::new();
    let mut i = 0;
    while i < orders.len() {
        let mut j = i;
        while j < orders.len() && orders[j] == orders[i] {
            j += 1;
        }
        let k = j - i;
        if k == 1 {
            terms.push(format!("rho{}", orders[i]));
        } else {
            terms.push(format!("{k}xrho{}", orders[i]));
        }
        i = j;
    }
    terms.join("+")
}

impl fmt::Display for FeatureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let len = self.orders.len();
        if len == 0 {
            return f.write_str("0");
        }
        // smallest period that tiles the whole list
        let period = (1..=len)
            .find(|&p| len.is_multiple_of(p) && (p..len).all(|i| self.orders[i] == self.orders[i - p]))
            .unwrap_or(len);
        let unit = &self.orders[..period];
        let reps = len / period;
        let unit_str = fmt_run(unit);
        if reps == 1 {
            f.write_str(&unit_str)
        } else if unit.iter().all(|&n| n == unit[0]) {
            write!(f, "{len}xrho{}", unit[0])
        } else {
            write!(f, "{reps}x({unit_str})")
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, message: impl Into<String>) -> FeatureError {
        FeatureError::ParseType {
            input: self.src.to_string(),
            message: format!("{} at byte {}", message.into(), self.pos),
        }
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn number(&mut self) -> Option<u64> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
        if len == 0 {
            return None;
        }
        let n = rest[..len].parse().ok()?;
        self.pos += len;
        Some(n)
    }

    fn sum(&mut self) -> Result<Vec<u32>, FeatureError> {
        let mut out = self.term()?;
        while self.eat("+") {
            out.extend(self.term()?);
        }
        Ok(out)
    }

    fn term(&mut self) -> Result<Vec<u32>, FeatureError> {
        let save = self.pos;
        let count = match self.number() {
            Some(k) if self.eat("x") || self.eat("*") => k as usize,
            Some(_) => {
                // a bare number like "4rho0"
                self.pos = save;
                let k = self.number().unwrap_or(1) as usize;
                self.skip_ws();
                if !self.src[self.pos..].starts_with("rho") && !self.src[self.pos..].starts_with('(') {
                    return Err(self.err("expected 'x', 'rho' or '('"));
                }
                k
            }
            None => 1,
        };
        if count > 1 << 20 {
            return Err(self.err("multiplicity too large"));
        }
        let unit = if self.eat("(") {
            let inner = self.sum()?;
            if !self.eat(")") {
                return Err(self.err("expected ')'"));
            }
            inner
        } else if self.eat("rho") {
            let n = self.number().ok_or_else(|| self.err("expected irrep order"))?;
            vec![u32::try_from(n).map_err(|_| self.err("irrep order too large"))?]
        } else {
            return Err(self.err("expected 'rho' or '('"));
        };
        Ok((0..count).flat_map(|_| unit.iter().copied()).collect())
    }
}

impl FromStr for FeatureType {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut p = Parser { src: s, pos: 0 };
        let orders = p.sum()?;
        p.skip_ws();
        if p.pos != s.len() {
            return Err(p.err("trailing input"));
        }
        FeatureType::new(orders)
    }
}

impl Serialize for FeatureType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeatureType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// ρ_n(g) as a 1×1 or 2×2 matrix.
pub fn rho_matrix(n: u32, g: f64) -> DMatrix<f64> {
    if n == 0 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    let (s, c) = (n as f64 * g).sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
}

pub fn rep_block_diag(t: &FeatureType, g: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(t.dim(), t.dim());
    for (&n, &o) in t.orders().iter().zip(t.offsets()) {
        let d = irrep_dim(n);
        m.view_mut((o, o), (d, d)).copy_from(&rho_matrix(n, g));
    }
    m
}

/// Applies ρ(g) of type `t` to a coordinate vector in place.
pub fn rotate_features<T: Scalar>(t: &FeatureType, g: T, f: &mut [T]) {
    for (&n, &o) in t.orders().iter().zip(t.offsets()) {
        if n > 0 {
            let (s, c) = (T::of(n as f64) * g).sin_cos();
            let (x, y) = (f[o], f[o + 1]);
            f[o] = c * x - s * y;
            f[o + 1] = s * x + c * y;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// θ-independent kernel applied at the vertex itself.
    #[serde(rename = "self")]
    SelfInteraction,
    /// Kernel evaluated at the neighbor angle θ_pq.
    #[serde(rename = "neigh")]
    Neighbor,
}

/// Padded 2×2 block; only the leading `d_out × d_in` entries are meaningful.
pub type Block2<T> = [[T; 2]; 2];

/// Number of basis elements for one irrep pair.
pub fn basis_len(n_in: u32, n_out: u32, kind: KernelKind) -> usize {
    match kind {
        KernelKind::Neighbor => match (n_in, n_out) {
            (0, 0) => 1,
            (_, 0) | (0, _) => 2,
            _ => 4,
        },
        KernelKind::SelfInteraction => match (n_in, n_out) {
            (0, 0) => 1,
            (a, b) if a == b => 2,
            _ => 0,
        },
    }
}

/// Evaluates every basis element of (ρ_{n_in} → ρ_{n_out}) at θ into `out`.
/// Returns the basis count.
pub fn basis_blocks<T: Scalar>(n_in: u32, n_out: u32, kind: KernelKind, theta: T, out: &mut [Block2<T>; 4]) -> usize {
    let z = T::zero();
    let one = T::one();
    match kind {
        KernelKind::SelfInteraction => match (n_in, n_out) {
            (0, 0) => {
                out[0] = [[one, z], [z, z]];
                1
            }
            (a, b) if a == b => {
                out[0] = [[one, z], [z, one]];
                out[1] = [[z, one], [-one, z]];
                2
            }
            _ => 0,
        },
        KernelKind::Neighbor => match (n_in, n_out) {
            (0, 0) => {
                out[0] = [[one, z], [z, z]];
                1
            }
            (n, 0) => {
                let (s, c) = (T::of(n as f64) * theta).sin_cos();
                out[0] = [[c, s], [z, z]];
                out[1] = [[s, -c], [z, z]];
                2
            }
            (0, m) => {
                let (s, c) = (T::of(m as f64) * theta).sin_cos();
                out[0] = [[c, z], [s, z]];
                out[1] = [[s, z], [-c, z]];
                2
            }
            (n, m) => {
                let (sm, cm) = (T::of(m as f64 - n as f64) * theta).sin_cos();
                let (sp, cp) = (T::of((m + n) as f64) * theta).sin_cos();
                out[0] = [[cm, -sm], [sm, cm]];
                out[1] = [[sm, cm], [-cm, sm]];
                out[2] = [[cp, sp], [sp, -cp]];
                out[3] = [[-sp, cp], [cp, sp]];
                4
            }
        },
    }
}

/// The basis for one irrep pair, as matrix-valued functions of θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelBasis {
    pub n_in: u32,
    pub n_out: u32,
    pub kind: KernelKind,
}

pub fn kernel_basis(n_in: u32, n_out: u32, kind: KernelKind) -> KernelBasis {
    KernelBasis { n_in, n_out, kind }
}

impl KernelBasis {
    pub fn len(&self) -> usize {
        basis_len(self.n_in, self.n_out, self.kind)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn eval(&self, theta: f64) -> Vec<DMatrix<f64>> {
        let mut blocks = [[[0.0; 2]; 2]; 4];
        let k = basis_blocks(self.n_in, self.n_out, self.kind, theta, &mut blocks);
        let (r, c) = (irrep_dim(self.n_out), irrep_dim(self.n_in));
        blocks[..k]
            .iter()
            .map(|b| DMatrix::from_fn(r, c, |i, j| b[i][j]))
            .collect()
    }
}

/// One nonempty (out component, in component) pair of a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelBlock {
    pub out_component: usize,
    pub in_component: usize,
    pub n_out: u32,
    pub n_in: u32,
    pub out_offset: usize,
    pub in_offset: usize,
    /// First coefficient of this block in the flat coefficient vector.
    pub coef_offset: usize,
    pub basis_len: usize,
}

/// Coefficient layout: row-major over (out component, in component), basis
/// index fastest. Pairs with an empty basis are skipped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelLayout {
    in_type: FeatureType,
    out_type: FeatureType,
    kind: KernelKind,
    blocks: Vec<KernelBlock>,
    coef_count: usize,
}

impl KernelLayout {
    pub fn new(in_type: &FeatureType, out_type: &FeatureType, kind: KernelKind) -> Self {
        let mut blocks = Vec::new();
        let mut coef = 0;
        for (oc, (&n_out, &oo)) in out_type.orders().iter().zip(out_type.offsets()).enumerate() {
            for (ic, (&n_in, &io)) in in_type.orders().iter().zip(in_type.offsets()).enumerate() {
                let b = basis_len(n_in, n_out, kind);
                if b == 0 {
                    continue;
                }
                blocks.push(KernelBlock {
                    out_component: oc,
                    in_component: ic,
                    n_out,
                    n_in,
                    out_offset: oo,
                    in_offset: io,
                    coef_offset: coef,
                    basis_len: b,
                });
                coef += b;
            }
        }
        KernelLayout {
            in_type: in_type.clone(),
            out_type: out_type.clone(),
            kind,
            blocks,
            coef_count: coef,
        }
    }

    pub fn in_type(&self) -> &FeatureType {
        &self.in_type
    }

    pub fn out_type(&self) -> &FeatureType {
        &self.out_type
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn blocks(&self) -> &[KernelBlock] {
        &self.blocks
    }

    pub fn coef_count(&self) -> usize {
        self.coef_count
    }

    /// Half-width of the uniform initialization range for one block.
    pub fn init_scale(&self, block: &KernelBlock) -> f64 {
        1.0 / ((self.in_type.dim() * block.basis_len) as f64).sqrt()
    }

    /// Draws coefficients uniformly from [-s, s] per block.
    pub fn init_coefficients<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut c = vec![0.0; self.coef_count];
        for b in &self.blocks {
            let s = self.init_scale(b);
            for x in &mut c[b.coef_offset..b.coef_offset + b.basis_len] {
                *x = rng.random_range(-s..=s);
            }
        }
        c
    }

    /// Coefficients whose assembled self kernel is the identity, when input
    /// and output types agree.
    pub fn identity_coefficients(&self) -> Option<Vec<f64>> {
        if self.kind != KernelKind::SelfInteraction || self.in_type != self.out_type {
            return None;
        }
        let mut c = vec![0.0; self.coef_count];
        let mut basis = [[[0.0; 2]; 2]; 4];
        for b in self.blocks.iter().filter(|b| b.out_component == b.in_component) {
            basis_blocks(b.n_in, b.n_out, self.kind, 0.0, &mut basis);
            let d = irrep_dim(b.n_in);
            let k = basis[..b.basis_len].iter().position(|m| {
                (0..d).all(|i| (0..d).all(|j| m[i][j] == if i == j { 1.0 } else { 0.0 }))
            })?;
            c[b.coef_offset + k] = 1.0;
        }
        Some(c)
    }

    /// Dense K(θ) for a flat coefficient vector.
    pub fn assemble(&self, coefficients: &[f64], theta: f64) -> DMatrix<f64> {
        assert_eq!(coefficients.len(), self.coef_count, "coefficient count");
        let mut m = DMatrix::zeros(self.out_type.dim(), self.in_type.dim());
        let mut basis = [[[0.0; 2]; 2]; 4];
        for b in &self.blocks {
            basis_blocks(b.n_in, b.n_out, self.kind, theta, &mut basis);
            for i in 0..irrep_dim(b.n_out) {
                for j in 0..irrep_dim(b.n_in) {
                    let mut v = 0.0;
                    for (k, bb) in basis[..b.basis_len].iter().enumerate() {
                        v += coefficients[b.coef_offset + k] * bb[i][j];
                    }
                    m[(b.out_offset + i, b.in_offset + j)] = v;
                }
            }
        }
        m
    }
}

/// Learnable kernel: a layout plus its coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivariantKernel {
    layout: KernelLayout,
    coefficients: Vec<f64>,
}

impl EquivariantKernel {
    pub fn new(layout: KernelLayout, coefficients: Vec<f64>) -> Result<Self, FeatureError> {
        if coefficients.len() != layout.coef_count() {
            return Err(FeatureError::LengthMismatch {
                expected: layout.coef_count(),
                actual: coefficients.len(),
            });
        }
        Ok(EquivariantKernel {
            layout,
            coefficients,
        })
    }

    pub fn zeros(layout: KernelLayout) -> Self {
        let coefficients = vec![0.0; layout.coef_count()];
        EquivariantKernel {
            layout,
            coefficients,
        }
    }

    pub fn random<R: Rng + ?Sized>(layout: KernelLayout, rng: &mut R) -> Self {
        let coefficients = layout.init_coefficients(rng);
        EquivariantKernel {
            layout,
            coefficients,
        }
    }

    pub fn layout(&self) -> &KernelLayout {
        &self.layout
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }
}

/// K(θ); θ is ignored for self kernels.
pub fn assemble_kernel(k: &EquivariantKernel, theta: f64) -> DMatrix<f64> {
    let theta = match k.layout.kind {
        KernelKind::SelfInteraction => 0.0,
        KernelKind::Neighbor => theta,
    };
    k.layout.assemble(&k.coefficients, theta)
}

/// ‖K(θ - g) - ρ_out(-g) K(θ) ρ_in(g)‖_F.
pub fn constraint_residual(k: &EquivariantKernel, theta: f64, g: f64) -> f64 {
    let l = &k.layout;
    let lhs = assemble_kernel(k, theta - g);
    let rhs = rep_block_diag(l.out_type(), -g) * assemble_kernel(k, theta) * rep_block_diag(l.in_type(), g);
    (lhs - rhs).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ft(s: &str) -> FeatureType {
        s.parse().unwrap()
    }

    #[test]
    fn parse_and_display() {
        let t = ft("16x(rho0+rho1+rho2)");
        assert_eq!(t.dim(), 80);
        assert_eq!(t.component_count(), 48);
        assert_eq!(t.to_string(), "16x(rho0+rho1+rho2)");
        let t = ft("4xrho0 + rho1 + 3xrho2");
        assert_eq!(t.dim(), 12);
        assert_eq!(t.to_string(), "4xrho0+rho1+3xrho2");
        assert_eq!(ft("3xrho0").orders(), &[0, 0, 0]);
        assert_eq!(ft("2rho1"), ft("2xrho1"));
        assert_eq!(ft("rho0+rho1").offsets(), &[0, 1]);
        assert_eq!(ft("2x(rho1+rho0)").offsets(), &[0, 2, 3, 5]);
        for bad in ["", "rho", "rhox", "2x", "(rho0", "rho0+", "rho9", "rho1 rho2"] {
            assert!(bad.parse::<FeatureType>().is_err(), "{bad:?} parsed");
        }
        assert_eq!(
            FeatureType::new(vec![9]),
            Err(FeatureError::OrderTooLarge { order: 9, max: 8 })
        );
    }

    #[test]
    fn split_even() {
        let t = ft("4x(rho0+rho1)");
        let parts = t.split_even(2).unwrap();
        assert_eq!(parts, vec![ft("2x(rho0+rho1)"); 2]);
        assert_eq!(ft("rho0+rho1").split_even(2), None);
    }

    #[test]
    fn rho_examples() {
        assert_eq!(rho_matrix(0, 1.234), DMatrix::from_element(1, 1, 1.0));
        let r = DMatrix::from_row_slice(2, 2, &[0., -1., 1., 0.]);
        assert_relative_eq!(rho_matrix(1, PI / 2.0), r, epsilon = 1e-15);
        assert_relative_eq!(rho_matrix(2, PI / 4.0), r, epsilon = 1e-15);
    }

    #[test]
    fn block_diag_examples() {
        let t = ft("rho0+rho1");
        assert_eq!(rep_block_diag(&t, 0.0), DMatrix::identity(3, 3));
        let expect = DMatrix::from_row_slice(3, 3, &[1., 0., 0., 0., 0., -1., 0., 1., 0.]);
        assert_relative_eq!(rep_block_diag(&t, PI / 2.0), expect, epsilon = 1e-15);
        let t = ft("4xrho0+rho1+3xrho2");
        let m = rep_block_diag(&t, 0.77);
        assert_eq!(m.shape(), (12, 12));
        assert_relative_eq!(&m * rep_block_diag(&t, -0.77), DMatrix::identity(12, 12), epsilon = 1e-12);
    }

    #[test]
    fn rotate_features_matches_matrix() {
        let t = ft("rho0+rho1+rho3");
        let f = [0.3, -1.0, 2.0, 0.5, 0.25];
        let mut g = f;
        rotate_features(&t, 0.4, &mut g);
        let expect = rep_block_diag(&t, 0.4) * nalgebra::DVector::from_row_slice(&f);
        assert_relative_eq!(nalgebra::DVector::from_row_slice(&g), expect, epsilon = 1e-15);
    }

    #[test]
    fn basis_examples() {
        let b = kernel_basis(0, 0, KernelKind::Neighbor).eval(0.9);
        assert_eq!(b, vec![DMatrix::from_element(1, 1, 1.0)]);
        let b = kernel_basis(0, 1, KernelKind::Neighbor).eval(0.0);
        assert_eq!(b[0], DMatrix::from_column_slice(2, 1, &[1., 0.]));
        assert_eq!(b[1], DMatrix::from_column_slice(2, 1, &[0., -1.]));
        assert_eq!(kernel_basis(1, 2, KernelKind::Neighbor).len(), 4);
        assert_eq!(kernel_basis(1, 2, KernelKind::SelfInteraction).len(), 0);
        assert_eq!(kernel_basis(2, 2, KernelKind::SelfInteraction).len(), 2);
        assert_eq!(kernel_basis(0, 0, KernelKind::SelfInteraction).len(), 1);
    }

    #[test]
    fn coefficient_counts() {
        let l = KernelLayout::new(&ft("rho0+rho1"), &ft("rho0+rho1+rho2"), KernelKind::Neighbor);
        // (0,0)=1 (0,1)=2 | (1,0)=2 (1,1)=4 | (2,0)=2 (2,1)=4
        assert_eq!(l.coef_count(), 15);
        let l = KernelLayout::new(&ft("rho0+rho1"), &ft("rho0+rho1+rho2"), KernelKind::SelfInteraction);
        assert_eq!(l.coef_count(), 3);
        let offs: Vec<_> = l.blocks().iter().map(|b| (b.out_component, b.in_component, b.coef_offset)).collect();
        assert_eq!(offs, vec![(0, 0, 0), (1, 1, 1)]);
    }

    #[test]
    fn assemble_examples() {
        let layout = KernelLayout::new(&ft("rho0+rho1"), &ft("rho1+rho2"), KernelKind::Neighbor);
        let k = EquivariantKernel::zeros(layout);
        assert_eq!(assemble_kernel(&k, 1.1), DMatrix::zeros(4, 3));
        let layout = KernelLayout::new(&ft("rho0"), &ft("rho0"), KernelKind::Neighbor);
        let k = EquivariantKernel::new(layout, vec![2.5]).unwrap();
        assert_eq!(assemble_kernel(&k, 0.3), assemble_kernel(&k, -2.0));
        assert_eq!(assemble_kernel(&k, 0.3)[(0, 0)], 2.5);
    }

    /// Entry-by-entry oracle written directly from the basis table.
    fn table_entry(n: u32, m: u32, k: usize, i: usize, j: usize, t: f64) -> f64 {
        let (nf, mf) = (n as f64, m as f64);
        match (n, m) {
            (0, 0) => 1.0,
            (_, 0) => [[(nf * t).cos(), (nf * t).sin()], [(nf * t).sin(), -(nf * t).cos()]][k][j],
            (0, _) => [[(mf * t).cos(), (mf * t).sin()], [(mf * t).sin(), -(mf * t).cos()]][k][i],
            _ => {
                let (cm, sm) = (((mf - nf) * t).cos(), ((mf - nf) * t).sin());
                let (cp, sp) = (((mf + nf) * t).cos(), ((mf + nf) * t).sin());
                let mats = [
                    [[cm, -sm], [sm, cm]],
                    [[sm, cm], [-cm, sm]],
                    [[cp, sp], [sp, -cp]],
                    [[-sp, cp], [cp, sp]],
                ];
                mats[k][i][j]
            }
        }
    }

    #[test]
    fn assemble_matches_slow_oracle() {
        let tin = ft("rho0+rho1");
        let tout = ft("rho0+rho1+rho2");
        let layout = KernelLayout::new(&tin, &tout, KernelKind::Neighbor);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let k = EquivariantKernel::random(layout, &mut rng);
        let theta = 0.83;
        let m = assemble_kernel(&k, theta);
        let mut oracle = DMatrix::zeros(tout.dim(), tin.dim());
        let mut c = 0;
        for (oc, &m_ord) in tout.orders().iter().enumerate() {
            for (ic, &n_ord) in tin.orders().iter().enumerate() {
                let nb = basis_len(n_ord, m_ord, KernelKind::Neighbor);
                for kk in 0..nb {
                    for i in 0..irrep_dim(m_ord) {
                        for j in 0..irrep_dim(n_ord) {
                            oracle[(tout.offsets()[oc] + i, tin.offsets()[ic] + j)] +=
                                k.coefficients()[c + kk] * table_entry(n_ord, m_ord, kk, i, j, theta);
                        }
                    }
                }
                c += nb;
            }
        }
        assert_relative_eq!(m, oracle, epsilon = 1e-15);
    }

    #[test]
    fn residual_zero_at_identity_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = ft("rho0+rho1+rho2");
        for kind in [KernelKind::Neighbor, KernelKind::SelfInteraction] {
            let k = EquivariantKernel::random(KernelLayout::new(&t, &t, kind), &mut rng);
            assert_eq!(constraint_residual(&k, 0.4, 0.0), 0.0);
        }
    }

    #[test]
    fn corrupted_basis_violates_constraint() {
        // flip the sign of one entry of the first ρ1→ρ2 solution
        let bad = |t: f64| {
            let (s, c) = t.sin_cos();
            DMatrix::from_row_slice(2, 2, &[c, s, s, c])
        };
        let (theta, g) = (0.7, 1.3);
        let lhs = bad(theta - g);
        let rhs = rho_matrix(2, -g) * bad(theta) * rho_matrix(1, g);
        assert!((lhs - rhs).norm() > 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn every_pair_solves_constraint(
            n in 0u32..=3, m in 0u32..=3, self_kind: bool,
            coefs in prop::collection::vec(-2.0f64..2.0, 4),
            theta in -PI..PI, g in -PI..PI,
        ) {
            let kind = if self_kind { KernelKind::SelfInteraction } else { KernelKind::Neighbor };
            let layout = KernelLayout::new(&FeatureType::new(vec![n]).unwrap(), &FeatureType::new(vec![m]).unwrap(), kind);
            let c = coefs[..layout.coef_count()].to_vec();
            let k = EquivariantKernel::new(layout, c).unwrap();
            prop_assert!(constraint_residual(&k, theta, g) <= 1e-10);
        }

        #[test]
        fn homomorphism_and_orthogonality(g1 in -PI..PI, g2 in -PI..PI) {
            let t = ft("rho0+rho1+2xrho2+rho3");
            let a = rep_block_diag(&t, g1);
            let prod = &a * rep_block_diag(&t, g2);
            prop_assert!((prod - rep_block_diag(&t, g1 + g2)).norm() <= 1e-12);
            prop_assert!((a.transpose() * &a - DMatrix::identity(t.dim(), t.dim())).norm() <= 1e-12);
        }

        #[test]
        fn display_round_trips(orders in prop::collection::vec(0u32..=4, 1..12), reps in 1usize..4) {
            let t = FeatureType::new(orders).unwrap().repeat(reps);
            prop_assert_eq!(t.to_string().parse::<FeatureType>().unwrap(), t);
        }
    }
}
