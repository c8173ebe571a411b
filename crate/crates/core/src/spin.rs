//! Dense complex linear algebra and composite-basis bookkeeping.
//!
//! Electron levels are ordered `(+1, 0, -1)` and nuclear levels `(+1/2, -1/2)`.
//! Composite spaces are `eA ⊗ eB` (9) or `eA ⊗ nA ⊗ eB ⊗ nB` (36).

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{NvError, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Electron spin projections in basis order.
pub const MS_LEVELS: [i8; 3] = [1, 0, -1];
/// Twice the nuclear projections in basis order.
pub const TWO_MI_LEVELS: [i8; 2] = [1, -1];

pub const DIMS_ELECTRON: [usize; 2] = [3, 3];
pub const DIMS_FULL: [usize; 4] = [3, 2, 3, 2];

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn zeros(n: usize) -> CMatrix {
    CMatrix::zeros(n, n)
}

pub fn from_real_diag(d: &[f64]) -> CMatrix {
    let mut m = zeros(d.len());
    for (i, v) in d.iter().enumerate() {
        m[(i, i)] = c(*v, 0.0);
    }
    m
}

/// Kronecker product `a ⊗ b`; row index of the result is `i_a * dim_b + i_b`.
pub fn tensor_product(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if !a.is_square() || !b.is_square() {
        return Err(NvError::Dimension("tensor_product needs square factors".into()));
    }
    let out = a.kronecker(b);
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(NvError::NonFinite);
    }
    Ok(out)
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn kron_all(ops: &[&CMatrix]) -> CMatrix {
    let mut out = identity(1);
    for op in ops {
        out = out.kronecker(*op);
    }
    out
}

pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    a.kronecker(b)
}

/// Places `op` on subsystem `site` of a composite space with subsystem sizes `dims`.
pub fn embed(op: &CMatrix, site: usize, dims: &[usize]) -> CMatrix {
    assert_eq!(op.nrows(), dims[site]);
    let mut out = identity(1);
    for (k, d) in dims.iter().enumerate() {
        if k == site {
            out = out.kronecker(op);
        } else {
            out = out.kronecker(&identity(*d));
        }
    }
    out
}

/// Cartesian spin operators (dimensionless, ħ = 1).
#[derive(Clone, Debug)]
pub struct SpinOps {
    pub x: CMatrix,
    pub y: CMatrix,
    pub z: CMatrix,
}

impl SpinOps {
    pub fn dot(&self, v: &[f64; 3]) -> CMatrix {
        &self.x * c(v[0], 0.0) + &self.y * c(v[1], 0.0) + &self.z * c(v[2], 0.0)
    }

    pub fn components(&self) -> [&CMatrix; 3] {
        [&self.x, &self.y, &self.z]
    }
}

pub fn spin1() -> SpinOps {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let x = CMatrix::from_row_slice(
        3,
        3,
        &[
            c(0.0, 0.0), c(s, 0.0), c(0.0, 0.0),
            c(s, 0.0), c(0.0, 0.0), c(s, 0.0),
            c(0.0, 0.0), c(s, 0.0), c(0.0, 0.0),
        ],
    );
    let y = CMatrix::from_row_slice(
        3,
        3,
        &[
            c(0.0, 0.0), c(0.0, -s), c(0.0, 0.0),
            c(0.0, s), c(0.0, 0.0), c(0.0, -s),
            c(0.0, 0.0), c(0.0, s), c(0.0, 0.0),
        ],
    );
    SpinOps {
        x,
        y,
        z: from_real_diag(&[1.0, 0.0, -1.0]),
    }
}

pub fn spin_half() -> SpinOps {
    let x = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0)]);
    let y = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -0.5), c(0.0, 0.5), c(0.0, 0.0)]);
    SpinOps {
        x,
        y,
        z: from_real_diag(&[0.5, -0.5]),
    }
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn hermitian_deviation(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn ensure_hermitian(m: &CMatrix, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(NvError::Dimension("matrix is not square".into()));
    }
    if !is_finite(m) {
        return Err(NvError::NonFinite);
    }
    let scale = max_abs(m).max(1.0);
    let dev = hermitian_deviation(m);
    if dev > tol * scale {
        return Err(NvError::NotHermitian(dev));
    }
    Ok(())
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh(h: &CMatrix) -> (Vec<f64>, CMatrix) {
    let sym = (h + h.adjoint()) * c(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = zeros(n);
    for (col, &k) in order.iter().enumerate() {
        vecs.set_column(col, &eig.eigenvectors.column(k));
    }
    (values, vecs)
}

/// A matrix checked to be unitary to 1e-10.
#[derive(Clone, Debug, PartialEq)]
pub struct Unitary(CMatrix);

pub const UNITARY_TOL: f64 = 1e-10;

impl Unitary {
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(NvError::Dimension("unitary must be square".into()));
        }
        let dev = unitary_deviation(&m);
        if !(dev <= UNITARY_TOL) {
            return Err(NvError::InvalidArgument(format!(
                "matrix is not unitary (deviation {dev:e})"
            )));
        }
        Ok(Unitary(m))
    }

    pub fn identity(n: usize) -> Self {
        Unitary(identity(n))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn dagger(&self) -> Self {
        Unitary(self.0.adjoint())
    }

    /// `self` applied after `first`.
    pub fn after(&self, first: &Unitary) -> Self {
        Unitary(&self.0 * &first.0)
    }

    pub fn tensor(&self, other: &Unitary) -> Self {
        Unitary(self.0.kronecker(&other.0))
    }
}

pub fn unitary_deviation(m: &CMatrix) -> f64 {
    max_abs(&(m.adjoint() * m - identity(m.nrows())))
}

/// `exp(-i 2π h t)` for Hermitian `h` in Hz and `t` in seconds.
pub fn matrix_exponential(h: &CMatrix, t: f64) -> Result<Unitary> {
    ensure_hermitian(h, 1e-12)?;
    let (vals, vecs) = eigh(h);
    let phases: Vec<Complex64> = vals
        .iter()
        .map(|e| Complex64::from_polar(1.0, -TWO_PI * e * t))
        .collect();
    let mut scaled = vecs.clone();
    for (j, p) in phases.iter().enumerate() {
        let mut col = scaled.column_mut(j);
        col *= *p;
    }
    Ok(Unitary(scaled * vecs.adjoint()))
}

/// Diagonal propagator for a diagonal Hamiltonian given by its real entries.
pub fn diagonal_propagator(energies_hz: &[f64], t: f64) -> Unitary {
    let mut m = zeros(energies_hz.len());
    for (i, e) in energies_hz.iter().enumerate() {
        m[(i, i)] = Complex64::from_polar(1.0, -TWO_PI * e * t);
    }
    Unitary(m)
}

fn digits(mut index: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for k in (0..dims.len()).rev() {
        out[k] = index % dims[k];
        index /= dims[k];
    }
    out
}

fn compose(digs: &[usize], dims: &[usize]) -> usize {
    digs.iter().zip(dims).fold(0, |acc, (d, n)| acc * n + d)
}

/// Traces out every subsystem not listed in `keep`; kept subsystems retain their order.
pub fn partial_trace(rho: &CMatrix, dims: &[usize], keep: &[usize]) -> Result<CMatrix> {
    let total: usize = dims.iter().product();
    if rho.nrows() != total || rho.ncols() != total {
        return Err(NvError::Dimension(format!(
            "matrix is {}x{}, subsystems imply {total}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    let mut sorted = keep.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != keep.len() || sorted.iter().any(|&k| k >= dims.len()) {
        return Err(NvError::Selector(format!("{keep:?} for {} subsystems", dims.len())));
    }
    let traced: Vec<usize> = (0..dims.len()).filter(|k| !sorted.contains(k)).collect();
    let keep_dims: Vec<usize> = sorted.iter().map(|&k| dims[k]).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&k| dims[k]).collect();
    let nk: usize = keep_dims.iter().product();
    let nt: usize = traced_dims.iter().product();
    let mut out = zeros(nk);
    let mut full = vec![0usize; dims.len()];
    let mut index_of = |kd: &[usize], td: &[usize]| {
        for (slot, &k) in sorted.iter().enumerate() {
            full[k] = kd[slot];
        }
        for (slot, &k) in traced.iter().enumerate() {
            full[k] = td[slot];
        }
        compose(&full, dims)
    };
    for i in 0..nk {
        let di = digits(i, &keep_dims);
        for j in 0..nk {
            let dj = digits(j, &keep_dims);
            let mut acc = c(0.0, 0.0);
            for t in 0..nt {
                let dt = digits(t, &traced_dims);
                let a = index_of(&di, &dt);
                let b = index_of(&dj, &dt);
                acc += rho[(a, b)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

/// `⟨ψ|ρ|ψ⟩` for a normalized pure target.
pub fn state_fidelity(rho: &CMatrix, target: &CVector) -> Result<f64> {
    if rho.nrows() != target.len() {
        return Err(NvError::Dimension(format!(
            "state has dim {}, target has dim {}",
            rho.nrows(),
            target.len()
        )));
    }
    let norm = target.norm();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(NvError::InvalidArgument(format!("target norm {norm} is not 1")));
    }
    let v = target.adjoint() * rho * target;
    Ok(v[(0, 0)].re.clamp(0.0, 1.0))
}

/// Von Neumann entropy in bits.
pub fn entropy_bits(rho: &CMatrix) -> f64 {
    let (vals, _) = eigh(rho);
    vals.iter()
        .filter(|&&p| p > 1e-15)
        .map(|&p| -p * p.log2())
        .sum()
}

pub fn ket(dim: usize, index: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[index] = c(1.0, 0.0);
    v
}

pub fn projector(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

/// Density matrix on a composite space with validated physicality.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
    dims: Vec<usize>,
}

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = -1e-9;

impl DensityMatrix {
    pub fn new(matrix: CMatrix, dims: &[usize]) -> Result<Self> {
        let total: usize = dims.iter().product();
        if matrix.nrows() != total || matrix.ncols() != total {
            return Err(NvError::Dimension(format!(
                "density matrix {}x{} does not match subsystems {dims:?}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        ensure_hermitian(&matrix, HERMITIAN_TOL)?;
        let tr = trace(&matrix);
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(NvError::InvalidState(format!("trace {tr} is not 1")));
        }
        let (vals, _) = eigh(&matrix);
        if vals[0] < POSITIVITY_TOL {
            return Err(NvError::InvalidState(format!(
                "negative eigenvalue {}",
                vals[0]
            )));
        }
        Ok(DensityMatrix {
            matrix,
            dims: dims.to_vec(),
        })
    }

    /// Skips the physicality checks; for linear estimates that need not be PSD.
    pub fn unchecked(matrix: CMatrix, dims: &[usize]) -> Self {
        DensityMatrix {
            matrix,
            dims: dims.to_vec(),
        }
    }

    pub fn from_pure(psi: &CVector, dims: &[usize]) -> Result<Self> {
        let n = psi.norm();
        if n == 0.0 {
            return Err(NvError::InvalidState("zero vector".into()));
        }
        let v = psi / c(n, 0.0);
        DensityMatrix::new(projector(&v), dims)
    }

    pub fn maximally_mixed(dims: &[usize]) -> Self {
        let n: usize = dims.iter().product();
        DensityMatrix {
            matrix: identity(n) * c(1.0 / n as f64, 0.0),
            dims: dims.to_vec(),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn evolve(&self, u: &Unitary) -> DensityMatrix {
        DensityMatrix {
            matrix: u.matrix() * &self.matrix * u.matrix().adjoint(),
            dims: self.dims.clone(),
        }
    }

    pub fn partial_trace(&self, keep: &[usize]) -> Result<DensityMatrix> {
        let m = partial_trace(&self.matrix, &self.dims, keep)?;
        let mut keep_sorted = keep.to_vec();
        keep_sorted.sort_unstable();
        let dims: Vec<usize> = keep_sorted.iter().map(|&k| self.dims[k]).collect();
        Ok(DensityMatrix { matrix: m, dims })
    }

    pub fn fidelity(&self, target: &CVector) -> Result<f64> {
        state_fidelity(&self.matrix, target)
    }

    pub fn populations(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|z| z.re).collect()
    }

    pub fn tensor(&self, other: &DensityMatrix) -> DensityMatrix {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        DensityMatrix {
            matrix: self.matrix.kronecker(&other.matrix),
            dims,
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        eigh(&self.matrix).0[0]
    }
}

/// Label of a composite basis state; `mi` fields hold twice the nuclear projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasisLabel {
    pub ms_a: i8,
    pub mi_a: Option<i8>,
    pub ms_b: i8,
    pub mi_b: Option<i8>,
}

pub fn ms_index(ms: i8) -> usize {
    match ms {
        1 => 0,
        0 => 1,
        -1 => 2,
        _ => panic!("mS must be +1, 0 or -1"),
    }
}

pub fn mi_index(two_mi: i8) -> usize {
    match two_mi {
        1 => 0,
        -1 => 1,
        _ => panic!("2 mI must be +1 or -1"),
    }
}

impl BasisLabel {
    pub fn electron(ms_a: i8, ms_b: i8) -> Self {
        BasisLabel {
            ms_a,
            mi_a: None,
            ms_b,
            mi_b: None,
        }
    }

    pub fn full(ms_a: i8, two_mi_a: i8, ms_b: i8, two_mi_b: i8) -> Self {
        BasisLabel {
            ms_a,
            mi_a: Some(two_mi_a),
            ms_b,
            mi_b: Some(two_mi_b),
        }
    }

    pub fn is_full(&self) -> bool {
        self.mi_a.is_some()
    }

    pub fn index(&self) -> usize {
        match (self.mi_a, self.mi_b) {
            (Some(na), Some(nb)) => {
                ((ms_index(self.ms_a) * 2 + mi_index(na)) * 3 + ms_index(self.ms_b)) * 2
                    + mi_index(nb)
            }
            _ => ms_index(self.ms_a) * 3 + ms_index(self.ms_b),
        }
    }

    pub fn from_index(index: usize, full: bool) -> Self {
        if full {
            let d = digits(index, &DIMS_FULL);
            BasisLabel::full(
                MS_LEVELS[d[0]],
                TWO_MI_LEVELS[d[1]],
                MS_LEVELS[d[2]],
                TWO_MI_LEVELS[d[3]],
            )
        } else {
            let d = digits(index, &DIMS_ELECTRON);
            BasisLabel::electron(MS_LEVELS[d[0]], MS_LEVELS[d[1]])
        }
    }

    pub fn all(full: bool) -> Vec<Self> {
        let n = if full { 36 } else { 9 };
        (0..n).map(|i| BasisLabel::from_index(i, full)).collect()
    }

    pub fn ket(&self) -> CVector {
        ket(if self.is_full() { 36 } else { 9 }, self.index())
    }
}

fn ms_str(ms: i8) -> &'static str {
    match ms {
        1 => "+1",
        0 => "0",
        _ => "-1",
    }
}

fn mi_str(two_mi: i8) -> &'static str {
    if two_mi > 0 {
        "+1/2"
    } else {
        "-1/2"
    }
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.mi_a, self.mi_b) {
            (Some(na), Some(nb)) => write!(
                f,
                "|{},{};{},{}>",
                ms_str(self.ms_a),
                mi_str(na),
                ms_str(self.ms_b),
                mi_str(nb)
            ),
            _ => write!(f, "|{},{}>", ms_str(self.ms_a), ms_str(self.ms_b)),
        }
    }
}

/// Normalized superposition `Σ amp_k |label_k⟩`.
pub fn superposition(terms: &[(BasisLabel, Complex64)]) -> CVector {
    let dim = if terms[0].0.is_full() { 36 } else { 9 };
    let mut v = CVector::zeros(dim);
    for (label, amp) in terms {
        v[label.index()] += *amp;
    }
    let n = v.norm();
    v / c(n, 0.0)
}
