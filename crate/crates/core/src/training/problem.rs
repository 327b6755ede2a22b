//! Differential problems on axis-aligned boxes and their collocation points.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::functions::PointFn;
use crate::error::{check_dim, Error, Result};
use crate::multiindex::{IndexSet, MultiIndex};

/// `coeff(x) · ∏ D^{factor} u`. A single factor gives a linear term; more
/// factors give nonlinear ones such as `u · u_a`.
#[derive(Clone, Debug)]
pub struct OperatorTerm {
    pub coeff: PointFn,
    pub factors: Vec<MultiIndex>,
}

impl OperatorTerm {
    pub fn linear(index: MultiIndex, coeff: f64) -> OperatorTerm {
        OperatorTerm {
            coeff: PointFn::constant(coeff),
            factors: vec![index],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<BoxDomain> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty()
            || lower
                .iter()
                .zip(&upper)
                .any(|(l, u)| l.partial_cmp(u) != Some(Ordering::Less))
        {
            return Err(Error::Config(format!("empty box {lower:?}..{upper:?}")));
        }
        Ok(BoxDomain { lower, upper })
    }

    pub fn unit(dim: usize) -> BoxDomain {
        BoxDomain {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn scale(&self, axis: usize, t: f64) -> f64 {
        self.lower[axis] + t * (self.upper[axis] - self.lower[axis])
    }

    pub fn faces(&self) -> Vec<Face> {
        (0..self.dim())
            .flat_map(|axis| [Face { axis, upper: false }, Face { axis, upper: true }])
            .collect()
    }

    /// Whether `x` lies on `face` (exact comparison).
    pub fn on_face(&self, face: Face, x: &[f64]) -> bool {
        x[face.axis]
            == if face.upper {
                self.upper[face.axis]
            } else {
                self.lower[face.axis]
            }
    }
}

/// One side of the box: the lower or upper end of an axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

impl fmt::Display for Face {
    /// `a-` is the lower face of the first variable, `b+` the upper face of the second.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = if self.upper { '+' } else { '-' };
        if self.axis < 26 {
            write!(f, "{}{side}", (b'a' + self.axis as u8) as char)
        } else {
            write!(f, "x{}{side}", self.axis + 1)
        }
    }
}

impl FromStr for Face {
    type Err = Error;

    fn from_str(s: &str) -> Result<Face> {
        let bad = || Error::Parse(format!("face must look like \"a-\" or \"b+\", got {s:?}"));
        let (name, upper) = if let Some(n) = s.strip_suffix('+') {
            (n, true)
        } else if let Some(n) = s.strip_suffix('-') {
            (n, false)
        } else {
            return Err(bad());
        };
        let axis = match name.as_bytes() {
            [c @ b'a'..=b'z'] => (c - b'a') as usize,
            _ => name
                .strip_prefix('x')
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(|n| n - 1)
                .ok_or_else(bad)?,
        };
        Ok(Face { axis, upper })
    }
}

#[derive(Clone, Debug)]
pub struct BoundaryCondition {
    pub face: Face,
    pub target: PointFn,
}

/// A PDE `Σ_k c_k(x) ∏_j D^{s_kj} u = f(x)` on a box, with Dirichlet data
/// on selected faces enforced by a penalty.
#[derive(Clone, Debug)]
pub struct PdeProblem {
    pub input_dim: usize,
    pub terms: Vec<OperatorTerm>,
    pub rhs: PointFn,
    pub domain: BoxDomain,
    pub boundary: Vec<BoundaryCondition>,
    /// Weight of the boundary penalty.
    pub lambda: f64,
    pub interior_points: usize,
    pub boundary_points: usize,
    /// Known solution, used only for reporting.
    pub exact: Option<PointFn>,
}

impl PdeProblem {
    pub fn validate(&self) -> Result<()> {
        check_dim(self.input_dim, self.domain.dim())?;
        if self.terms.is_empty() {
            return Err(Error::Config("operator has no terms".into()));
        }
        for t in &self.terms {
            if t.factors.is_empty() {
                return Err(Error::Config(
                    "operator term has no derivative factor".into(),
                ));
            }
            for f in &t.factors {
                check_dim(self.input_dim, f.dim())?;
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "penalty weight must be finite and ≥ 0, got {}",
                self.lambda
            )));
        }
        if self.interior_points == 0 {
            return Err(Error::Config("interior batch is empty".into()));
        }
        for bc in &self.boundary {
            if bc.face.axis >= self.input_dim {
                return Err(Error::Config(format!(
                    "face {} outside a {}-d domain",
                    bc.face, self.input_dim
                )));
            }
        }
        Ok(())
    }

    /// Indices the forward pass must carry: the downward closure of every
    /// factor plus the value itself.
    pub fn closure(&self) -> IndexSet {
        let all = std::iter::once(MultiIndex::zero(self.input_dim))
            .chain(self.terms.iter().flat_map(|t| t.factors.iter().cloned()));
        IndexSet::new(all).expect("non-empty").downward_closure()
    }

    /// `Σ_k c_k(x) ∏ D^{s} u − f(x)` given the derivative values at `x`.
    pub fn residual(&self, x: &[f64], derivs: impl Fn(&MultiIndex) -> f64) -> f64 {
        let lhs: f64 = self
            .terms
            .iter()
            .map(|t| t.coeff.eval(x) * t.factors.iter().map(&derivs).product::<f64>())
            .sum();
        lhs - self.rhs.eval(x)
    }

    /// Seeded quasi-random collocation points: a randomly shifted Halton
    /// sequence inside the box, and per-face sequences on the boundary.
    pub fn sample(&self, seed: u64) -> Result<Collocation> {
        self.validate()?;
        let dim = self.input_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
        let interior = Array2::from_shape_fn((self.interior_points, dim), |(i, axis)| {
            self.domain
                .scale(axis, shifted_halton(i + 1, PRIMES[axis], shifts[axis]))
        });

        let mut boundary = Vec::new();
        let faces = self.boundary.len();
        if let Some(per_face) = self.boundary_points.checked_div(faces) {
            for (k, bc) in self.boundary.iter().enumerate() {
                let count = per_face + usize::from(k < self.boundary_points % faces);
                let shifts: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
                for i in 0..count {
                    let mut p = Vec::with_capacity(dim);
                    let mut free = 0;
                    for (axis, &shift) in shifts.iter().enumerate() {
                        if axis == bc.face.axis {
                            p.push(if bc.face.upper {
                                self.domain.upper[axis]
                            } else {
                                self.domain.lower[axis]
                            });
                        } else {
                            p.push(
                                self.domain
                                    .scale(axis, shifted_halton(i + 1, PRIMES[free], shift)),
                            );
                            free += 1;
                        }
                    }
                    boundary.push((k, p));
                }
            }
        }
        Collocation::new(self, interior, &boundary)
    }
}

const PRIMES: [usize; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let inv = 1.0 / base as f64;
    let mut acc = 0.0;
    let mut f = inv;
    while i > 0 {
        acc += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    acc
}

fn shifted_halton(i: usize, base: usize, shift: f64) -> f64 {
    let v = radical_inverse(i, base) + shift;
    v - v.floor()
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum RowData {
    Interior { coeffs: Vec<f64>, rhs: f64 },
    Boundary { target: f64 },
}

/// Collocation points with the per-point data of the loss precomputed.
///
/// Interior rows come first, then boundary rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Collocation {
    points: Array2<f64>,
    pub(crate) rows: Vec<RowData>,
    interior: usize,
}

impl Collocation {
    /// `boundary` pairs a boundary-condition index with a point on its face.
    pub fn new(
        problem: &PdeProblem,
        interior: Array2<f64>,
        boundary: &[(usize, Vec<f64>)],
    ) -> Result<Collocation> {
        check_dim(problem.input_dim, interior.ncols())?;
        let n_int = interior.nrows();
        let mut points = Array2::zeros((n_int + boundary.len(), problem.input_dim));
        let mut rows = Vec::with_capacity(points.nrows());
        for (i, x) in interior.rows().into_iter().enumerate() {
            points.row_mut(i).assign(&x);
            let x = x.to_vec();
            rows.push(RowData::Interior {
                coeffs: problem.terms.iter().map(|t| t.coeff.eval(&x)).collect(),
                rhs: problem.rhs.eval(&x),
            });
        }
        for (j, (k, x)) in boundary.iter().enumerate() {
            check_dim(problem.input_dim, x.len())?;
            let bc = problem
                .boundary
                .get(*k)
                .ok_or_else(|| Error::Config(format!("no boundary condition #{k}")))?;
            points
                .row_mut(n_int + j)
                .assign(&ArrayView1::from(x.as_slice()));
            rows.push(RowData::Boundary {
                target: bc.target.eval(x),
            });
        }
        Ok(Collocation {
            points,
            rows,
            interior: n_int,
        })
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn interior_count(&self) -> usize {
        self.interior
    }

    pub fn boundary_count(&self) -> usize {
        self.rows.len() - self.interior
    }

    /// Rows selected by index; interior rows must precede boundary rows.
    pub fn subset(&self, rows: &[usize]) -> Collocation {
        let points = Array2::from_shape_fn((rows.len(), self.points.ncols()), |(i, j)| {
            self.points[[rows[i], j]]
        });
        let interior = rows.iter().filter(|&&r| r < self.interior).count();
        Collocation {
            points,
            rows: rows.iter().map(|&r| self.rows[r].clone()).collect(),
            interior,
        }
    }

    /// Reorders rows, keeping interior rows before boundary rows.
    pub fn permuted(&self, order: &[usize]) -> Collocation {
        let mut o: Vec<usize> = order.to_vec();
        o.sort_by_key(|&r| r >= self.interior);
        self.subset(&o)
    }

    /// Canonical row order (lexicographic in coordinates within each part),
    /// so the loss does not depend on the order points were supplied in.
    pub fn sorted(&self) -> Collocation {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            (a >= self.interior)
                .cmp(&(b >= self.interior))
                .then_with(|| {
                    self.points
                        .row(a)
                        .iter()
                        .zip(self.points.row(b).iter())
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
        });
        self.subset(&order)
    }
}

/// Tensor grid with `per_axis` nodes per axis over the box, including its
/// faces.
pub fn evaluation_grid(domain: &BoxDomain, per_axis: usize) -> Array2<f64> {
    tensor_grid(domain, &vec![per_axis.max(2); domain.dim()])
}

/// Tensor grid with `counts[i]` evenly spaced nodes along axis `i`, last
/// axis fastest. A single node sits at the middle of its axis.
pub fn tensor_grid(domain: &BoxDomain, counts: &[usize]) -> Array2<f64> {
    let dim = counts.len();
    let total: usize = counts.iter().product();
    Array2::from_shape_fn((total, dim), |(i, axis)| {
        let n = counts[axis];
        let stride: usize = counts[axis + 1..].iter().product();
        let k = (i / stride) % n;
        if n == 1 {
            domain.scale(axis, 0.5)
        } else if k == n - 1 {
            domain.upper[axis]
        } else {
            domain.scale(axis, k as f64 / (n - 1) as f64)
        }
    })
}
