//! Stratified nilpotent Lie algebras of step at most three and the group
//! structure they induce on coordinate space.
//!
//! A stratified algebra splits as `W_1 ⊕ ... ⊕ W_k` with
//! `W_{j+1} = [W_1, W_j]`; exponential coordinates of the first kind identify
//! the corresponding simply connected group with `R^N`, where the product is
//! the truncated Baker-Campbell-Hausdorff series
//!
//! ```text
//! x · y = x + y + ½[x,y] + (1/12)([x,[x,y]] − [y,[x,y]])
//! ```
//!
//! which is exact for nilpotency step ≤ 3. Inversion is coordinate negation
//! and the dilation `δ_λ` scales coordinate `i` by `λ^{w_i}`, with `w_i` the
//! layer weight. The homogeneous dimension is `Q = Σ_j j·m_j`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Hard tolerance for the structural identities (antisymmetry, grading,
/// Jacobi) checked at construction.
const STRUCTURE_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AlgebraError {
    #[error("step {0} outside the supported range 1..=3")]
    UnsupportedStep(usize),
    #[error("layer dimensions must be nonempty and strictly positive")]
    BadLayerDims,
    #[error("structure tensor must be N x N x N with N = {want}")]
    BadTensorShape { want: usize },
    #[error("structure entry ({i},{j},{l}) out of range for N = {n}")]
    EntryOutOfRange { i: usize, j: usize, l: usize, n: usize },
    #[error("duplicate structure entry for ({i},{j})->{l}")]
    DuplicateEntry { i: usize, j: usize, l: usize },
    #[error("structure constants not antisymmetric at ({i},{j},{l})")]
    NotAntisymmetric { i: usize, j: usize, l: usize },
    #[error(
        "grading violated at ({i},{j},{l}): weight {wl} target with {wi}+{wj} sources"
    )]
    GradingViolation {
        i: usize,
        j: usize,
        l: usize,
        wi: usize,
        wj: usize,
        wl: usize,
    },
    #[error("Jacobi identity fails on basis triple ({i},{j},{l}), residual {residual:.3e}")]
    JacobiViolation {
        i: usize,
        j: usize,
        l: usize,
        residual: f64,
    },
    #[error("layer {layer} is not spanned by brackets of the first layer")]
    NotStratified { layer: usize },
    #[error("rotation matrix must be {m1} x {m1}")]
    BadRotationShape { m1: usize },
    #[error("rotation matrix is not orthogonal, residual {residual:.3e}")]
    NotOrthogonal { residual: f64 },
    #[error("unknown builtin group {0:?} (expected abelian(n), heisenberg(n) or engel)")]
    UnknownBuiltin(String),
}

/// A point of the group in exponential coordinates of the first kind.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupPoint<S> {
    coords: Vec<S>,
}

impl<S: Real> GroupPoint<S> {
    pub fn new(coords: Vec<S>) -> Self {
        Self { coords }
    }

    pub fn zero(n: usize) -> Self {
        Self {
            coords: vec![S::zero(); n],
        }
    }

    pub fn coords(&self) -> &[S] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<S> {
        self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Euclidean norm of the coordinate vector (not a homogeneous norm).
    pub fn euclidean_norm(&self) -> S {
        self.coords
            .iter()
            .fold(S::zero(), |acc, &c| acc + c * c)
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }
}

impl<S> std::ops::Index<usize> for GroupPoint<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.coords[i]
    }
}

/// Sparse structure-constant entry: `[e_i, e_j] = Σ_l c · e_l`.
#[derive(Clone, Copy, Debug)]
struct StructureEntry<S> {
    i: usize,
    j: usize,
    l: usize,
    c: S,
}

/// A stratified nilpotent Lie algebra of step ≤ 3, with the group operations
/// it induces in exponential coordinates.
#[derive(Clone, Debug)]
pub struct StratifiedAlgebra<S: Real> {
    name: String,
    layer_dims: Vec<usize>,
    /// Layer weight of each coordinate, `w_i ∈ 1..=step`.
    weights: Vec<usize>,
    /// Dense `c[i][j][l]`, kept for lookups and validation.
    dense: Vec<S>,
    /// Nonzero entries, iterated by the bracket kernel.
    entries: Vec<StructureEntry<S>>,
    q: usize,
}

impl<S: Real> StratifiedAlgebra<S> {
    /// Builds and validates an algebra from a dense structure tensor
    /// (`tensor[i][j][l]` is the `e_l` coefficient of `[e_i, e_j]`).
    pub fn from_structure(
        name: impl Into<String>,
        layer_dims: &[usize],
        tensor: &[Vec<Vec<S>>],
    ) -> Result<Self, AlgebraError> {
        let step = layer_dims.len();
        if step == 0 || step > 3 {
            return Err(AlgebraError::UnsupportedStep(step));
        }
        if layer_dims.iter().any(|&m| m == 0) {
            return Err(AlgebraError::BadLayerDims);
        }
        let n: usize = layer_dims.iter().sum();
        if tensor.len() != n
            || tensor.iter().any(|t| t.len() != n)
            || tensor
                .iter()
                .any(|t| t.iter().any(|row| row.len() != n))
        {
            return Err(AlgebraError::BadTensorShape { want: n });
        }

        let mut weights = Vec::with_capacity(n);
        for (layer, &m) in layer_dims.iter().enumerate() {
            weights.extend(std::iter::repeat(layer + 1).take(m));
        }
        let q = layer_dims
            .iter()
            .enumerate()
            .map(|(layer, &m)| (layer + 1) * m)
            .sum();

        let mut dense = vec![S::zero(); n * n * n];
        let mut entries = Vec::new();
        let tol = S::of(STRUCTURE_TOL);
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let c = tensor[i][j][l];
                    let c_t = tensor[j][i][l];
                    if (c + c_t).abs() > tol {
                        return Err(AlgebraError::NotAntisymmetric { i, j, l });
                    }
                    if c != S::zero() && weights[l] != weights[i] + weights[j] {
                        return Err(AlgebraError::GradingViolation {
                            i,
                            j,
                            l,
                            wi: weights[i],
                            wj: weights[j],
                            wl: weights[l],
                        });
                    }
                    dense[(i * n + j) * n + l] = c;
                    if c != S::zero() {
                        entries.push(StructureEntry { i, j, l, c });
                    }
                }
            }
        }

        let alg = Self {
            name: name.into(),
            layer_dims: layer_dims.to_vec(),
            weights,
            dense,
            entries,
            q,
        };
        alg.check_jacobi()?;
        alg.check_stratified()?;
        Ok(alg)
    }

    /// `[e_i, [e_j, e_l]] + [e_j, [e_l, e_i]] + [e_l, [e_i, e_j]] = 0`.
    fn check_jacobi(&self) -> Result<(), AlgebraError> {
        let n = self.n();
        let tol = S::of(STRUCTURE_TOL);
        for i in 0..n {
            for j in (i + 1)..n {
                for l in (j + 1)..n {
                    for target in 0..n {
                        let mut sum = S::zero();
                        for m in 0..n {
                            sum += self.c(j, l, m) * self.c(i, m, target)
                                + self.c(l, i, m) * self.c(j, m, target)
                                + self.c(i, j, m) * self.c(l, m, target);
                        }
                        if sum.abs() > tol {
                            return Err(AlgebraError::JacobiViolation {
                                i,
                                j,
                                l,
                                residual: sum.as_f64(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Stratification: each layer above the first is spanned by brackets of
    /// first-layer elements with the layer below.
    fn check_stratified(&self) -> Result<(), AlgebraError> {
        for upper in 2..=self.step() {
            let target = self.layer_range(upper);
            let source = self.layer_range(upper - 1);
            let m = target.len();
            // Rows: layer-`upper` components of [e_i, e_j], i in layer 1.
            let mut rows: Vec<Vec<S>> = Vec::new();
            for i in self.layer_range(1) {
                for j in source.clone() {
                    let row: Vec<S> =
                        target.clone().map(|l| self.c(i, j, l)).collect();
                    if row.iter().any(|&v| v != S::zero()) {
                        rows.push(row);
                    }
                }
            }
            if crate::linalg::rank(&mut rows, S::of(1e-10)) < m {
                return Err(AlgebraError::NotStratified { layer: upper });
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Topological dimension `N`.
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// Nilpotency step `k`.
    pub fn step(&self) -> usize {
        self.layer_dims.len()
    }

    /// Homogeneous dimension `Q = Σ_j j·m_j`.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// Dimension of the horizontal layer `W_1`.
    pub fn horizontal_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Layer weight of coordinate `i`.
    pub fn weight(&self, i: usize) -> usize {
        self.weights[i]
    }

    pub fn weights(&self) -> &[usize] {
        &self.weights
    }

    /// Coordinate range of layer `w` (1-based layer index).
    pub fn layer_range(&self, w: usize) -> std::ops::Range<usize> {
        let start: usize = self.layer_dims[..w - 1].iter().sum();
        start..start + self.layer_dims[w - 1]
    }

    /// Structure constant `c[i][j][l]`.
    pub fn c(&self, i: usize, j: usize, l: usize) -> S {
        let n = self.n();
        self.dense[(i * n + j) * n + l]
    }

    pub fn zero(&self) -> GroupPoint<S> {
        GroupPoint::zero(self.n())
    }

    /// Embeds a horizontal vector as the group element `exp(Σ v_i X_i)`.
    pub fn horizontal(&self, v: &[S]) -> GroupPoint<S> {
        debug_assert_eq!(v.len(), self.horizontal_dim());
        let mut coords = vec![S::zero(); self.n()];
        coords[..v.len()].copy_from_slice(v);
        GroupPoint::new(coords)
    }

    /// `exp(t X_i)` as a group element: a single coordinate line.
    pub fn exp_generator(&self, i: usize, t: S) -> GroupPoint<S> {
        debug_assert!(i < self.n());
        let mut coords = vec![S::zero(); self.n()];
        coords[i] = t;
        GroupPoint::new(coords)
    }

    /// First-layer block of a point.
    pub fn horizontal_part<'a>(&self, x: &'a GroupPoint<S>) -> &'a [S] {
        &x.coords()[..self.horizontal_dim()]
    }

    /// Lie bracket of coordinate vectors, `[a, b]_l = Σ_{i,j} c[i][j][l] a_i b_j`.
    pub fn bracket(&self, a: &[S], b: &[S]) -> Vec<S> {
        debug_assert_eq!(a.len(), self.n());
        debug_assert_eq!(b.len(), self.n());
        let mut out = vec![S::zero(); self.n()];
        for e in &self.entries {
            out[e.l] += e.c * a[e.i] * b[e.j];
        }
        out
    }

    /// Group product by the step-3 truncated BCH series (exact here).
    pub fn multiply(&self, x: &GroupPoint<S>, y: &GroupPoint<S>) -> GroupPoint<S> {
        debug_assert_eq!(x.dim(), self.n());
        debug_assert_eq!(y.dim(), self.n());
        let a = x.coords();
        let b = y.coords();
        let mut z: Vec<S> = a.iter().zip(b).map(|(&p, &q)| p + q).collect();
        if self.step() >= 2 {
            let half = S::of(0.5);
            let br = self.bracket(a, b);
            for (zi, &bi) in z.iter_mut().zip(&br) {
                *zi += half * bi;
            }
            if self.step() >= 3 {
                let twelfth = S::of(1.0 / 12.0);
                let xbr = self.bracket(a, &br);
                let ybr = self.bracket(b, &br);
                for ((zi, &xi), &yi) in z.iter_mut().zip(&xbr).zip(&ybr) {
                    *zi += twelfth * (xi - yi);
                }
            }
        }
        GroupPoint::new(z)
    }

    /// Adds the gradients of `⟨cot, [a, b]⟩` with respect to `a` and `b`
    /// into the accumulators.
    fn bracket_vjp(&self, a: &[S], b: &[S], cot: &[S], a_bar: &mut [S], b_bar: &mut [S]) {
        for e in &self.entries {
            let g = cot[e.l] * e.c;
            a_bar[e.i] += g * b[e.j];
            b_bar[e.j] += g * a[e.i];
        }
    }

    /// Gradients of `⟨cot, x·y⟩` with respect to `x` and `y`. Exact, since
    /// the product law is polynomial in the coordinates; this is what makes
    /// analytic gradients through products of many factors cheap.
    pub fn multiply_vjp(
        &self,
        x: &GroupPoint<S>,
        y: &GroupPoint<S>,
        cot: &[S],
    ) -> (Vec<S>, Vec<S>) {
        debug_assert_eq!(cot.len(), self.n());
        let a = x.coords();
        let b = y.coords();
        let mut a_bar = cot.to_vec();
        let mut b_bar = cot.to_vec();
        if self.step() >= 2 {
            let half = S::of(0.5);
            let cot_half: Vec<S> = cot.iter().map(|&v| v * half).collect();
            if self.step() >= 3 {
                let w = self.bracket(a, b);
                let twelfth = S::of(1.0 / 12.0);
                let cot_p: Vec<S> = cot.iter().map(|&v| v * twelfth).collect();
                let cot_m: Vec<S> = cot.iter().map(|&v| -v * twelfth).collect();
                let mut w_bar = vec![S::zero(); self.n()];
                self.bracket_vjp(a, &w, &cot_p, &mut a_bar, &mut w_bar);
                self.bracket_vjp(b, &w, &cot_m, &mut b_bar, &mut w_bar);
                self.bracket_vjp(a, b, &w_bar, &mut a_bar, &mut b_bar);
            }
            self.bracket_vjp(a, b, &cot_half, &mut a_bar, &mut b_bar);
        }
        (a_bar, b_bar)
    }

    /// Group inverse; in first-kind coordinates this is plain negation.
    pub fn inverse(&self, x: &GroupPoint<S>) -> GroupPoint<S> {
        debug_assert_eq!(x.dim(), self.n());
        GroupPoint::new(x.coords().iter().map(|&c| -c).collect())
    }

    /// `y^{-1} · x`, the displacement entering left-invariant distances.
    pub fn displacement(&self, x: &GroupPoint<S>, y: &GroupPoint<S>) -> GroupPoint<S> {
        self.multiply(&self.inverse(y), x)
    }

    /// Dilation `δ_λ`: coordinate `i` scales by `λ^{w_i}`.
    pub fn dilate(&self, lambda: S, x: &GroupPoint<S>) -> GroupPoint<S> {
        debug_assert_eq!(x.dim(), self.n());
        let coords = x
            .coords()
            .iter()
            .zip(&self.weights)
            .map(|(&c, &w)| c * lambda.powi(w as i32))
            .collect();
        GroupPoint::new(coords)
    }

    /// Applies an orthogonal matrix to the horizontal block, fixing the upper
    /// layers: `(x̂, x̌) ↦ (A x̂, x̌)`. Measure-preserving since `|det A| = 1`.
    pub fn apply_horizontal_rotation(
        &self,
        a: &[Vec<S>],
        x: &GroupPoint<S>,
    ) -> Result<GroupPoint<S>, AlgebraError> {
        let m1 = self.horizontal_dim();
        if a.len() != m1 || a.iter().any(|row| row.len() != m1) {
            return Err(AlgebraError::BadRotationShape { m1 });
        }
        // A Aᵀ = I, checked to a fixed tolerance.
        let tol = S::of(1e-9);
        let mut residual = S::zero();
        for r in 0..m1 {
            for s in 0..m1 {
                let mut dot = S::zero();
                for t in 0..m1 {
                    dot += a[r][t] * a[s][t];
                }
                let want = if r == s { S::one() } else { S::zero() };
                residual = residual.max((dot - want).abs());
            }
        }
        if residual > tol {
            return Err(AlgebraError::NotOrthogonal {
                residual: residual.as_f64(),
            });
        }
        let mut coords = x.coords().to_vec();
        for r in 0..m1 {
            let mut v = S::zero();
            for t in 0..m1 {
                v += a[r][t] * x.coords()[t];
            }
            coords[r] = v;
        }
        Ok(GroupPoint::new(coords))
    }

    /// Abelian `R^n`: step 1, trivial brackets, `Q = N = n`.
    pub fn abelian(n: usize) -> Result<Self, AlgebraError> {
        if n == 0 {
            return Err(AlgebraError::BadLayerDims);
        }
        let tensor = vec![vec![vec![S::zero(); n]; n]; n];
        Self::from_structure(format!("abelian({n})"), &[n], &tensor)
    }

    /// Heisenberg group `H^n`: layers `(2n, 1)`, `[X_i, Y_i] = T`,
    /// `N = 2n+1`, `Q = 2n+2`.
    pub fn heisenberg(n: usize) -> Result<Self, AlgebraError> {
        if n == 0 {
            return Err(AlgebraError::BadLayerDims);
        }
        let dim = 2 * n + 1;
        let mut tensor = vec![vec![vec![S::zero(); dim]; dim]; dim];
        for i in 0..n {
            tensor[i][n + i][2 * n] = S::one();
            tensor[n + i][i][2 * n] = -S::one();
        }
        Self::from_structure(format!("heisenberg({n})"), &[2 * n, 1], &tensor)
    }

    /// Engel group: layers `(2, 1, 1)`, `[X_1, X_2] = X_3`, `[X_1, X_3] = X_4`,
    /// `Q = 7`.
    pub fn engel() -> Result<Self, AlgebraError> {
        let mut tensor = vec![vec![vec![S::zero(); 4]; 4]; 4];
        tensor[0][1][2] = S::one();
        tensor[1][0][2] = -S::one();
        tensor[0][2][3] = S::one();
        tensor[2][0][3] = -S::one();
        Self::from_structure("engel", &[2, 1, 1], &tensor)
    }

    /// Serializable description of this algebra.
    pub fn to_spec(&self) -> AlgebraSpec {
        let mut entries = Vec::new();
        for e in &self.entries {
            if e.i < e.j {
                entries.push(SpecEntry {
                    i: e.i,
                    j: e.j,
                    l: e.l,
                    c: e.c.as_f64(),
                });
            }
        }
        AlgebraSpec {
            name: self.name.clone(),
            step: self.step(),
            layer_dims: self.layer_dims.clone(),
            structure_constants: entries,
        }
    }
}

/// Resolves a builtin group by name: `abelian(n)`, `heisenberg(n)` (also
/// accepted without parentheses, e.g. `heisenberg2`) or `engel`.
pub fn builtin_group<S: Real>(name: &str) -> Result<StratifiedAlgebra<S>, AlgebraError> {
    let trimmed = name.trim().to_ascii_lowercase();
    if trimmed == "engel" {
        return StratifiedAlgebra::engel();
    }
    for (prefix, ctor) in [
        ("abelian", StratifiedAlgebra::abelian as fn(usize) -> _),
        ("heisenberg", StratifiedAlgebra::heisenberg as fn(usize) -> _),
    ] {
        if let Some(rest) = trimmed.strip_prefix(prefix) {
            let digits = rest.trim_matches(|c| c == '(' || c == ')');
            if let Ok(n) = digits.parse::<usize>() {
                if n > 0 {
                    return ctor(n);
                }
            }
        }
    }
    Err(AlgebraError::UnknownBuiltin(name.to_string()))
}

/// JSON-facing description: `{name, step, layer_dims, structure_constants}`
/// with one entry per bracket pair `i < j` (the antisymmetric closure is
/// implied).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraSpec {
    pub name: String,
    pub step: usize,
    pub layer_dims: Vec<usize>,
    pub structure_constants: Vec<SpecEntry>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecEntry {
    pub i: usize,
    pub j: usize,
    pub l: usize,
    pub c: f64,
}

impl AlgebraSpec {
    pub fn build<S: Real>(&self) -> Result<StratifiedAlgebra<S>, AlgebraError> {
        if self.step != self.layer_dims.len() {
            return Err(AlgebraError::UnsupportedStep(self.step));
        }
        let n: usize = self.layer_dims.iter().sum();
        let mut tensor = vec![vec![vec![S::zero(); n]; n]; n];
        for e in &self.structure_constants {
            if e.i >= n || e.j >= n || e.l >= n {
                return Err(AlgebraError::EntryOutOfRange {
                    i: e.i,
                    j: e.j,
                    l: e.l,
                    n,
                });
            }
            if tensor[e.i][e.j][e.l] != S::zero() {
                return Err(AlgebraError::DuplicateEntry {
                    i: e.i,
                    j: e.j,
                    l: e.l,
                });
            }
            let c = S::of(e.c);
            tensor[e.i][e.j][e.l] = c;
            tensor[e.j][e.i][e.l] = -c;
        }
        StratifiedAlgebra::from_structure(self.name.clone(), &self.layer_dims, &tensor)
    }
}
