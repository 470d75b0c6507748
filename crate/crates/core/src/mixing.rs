//! Row- and column-stochastic mixing matrices, Perron vectors, contraction
//! estimates and the topology constant `c_pi = n * pi_r . pi_c`.
//!
//! Weights are uniform over the closed neighbourhood: row `i` of R puts
//! `1 / (|in(i)| + 1)` on `i` and each in-neighbour, column `j` of C puts
//! `1 / (|out(j)| + 1)` on `j` and each out-neighbour. Self-loops in the input
//! graph are ignored; the diagonal is always added.
//!
//! Contraction factors are reported as the second-largest eigenvalue modulus
//! (SLEM). That is the asymptotic per-step rate of `R^t - 1 pi_r^T`; it does
//! not guarantee one-step contraction in any particular norm.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::graph::DirectedGraph;

/// Tolerance for row/column sums of a stochastic matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Default tolerance for Perron power iteration.
pub const PERRON_TOL: f64 = 1e-12;
/// Perron residual required before a contraction estimate is attempted.
pub const CONTRACTION_PERRON_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MixingError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("matrix is not {kind}-stochastic: {detail}")]
    NotStochastic { kind: &'static str, detail: String },
    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("Perron residual {0:e} too large for a contraction estimate")]
    InaccuratePerron(f64),
    #[error("internal inconsistency: {0}")]
    Inconsistent(String),
    #[error("matrix csv line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

fn check_square(m: &Array2<f64>) -> Result<usize, MixingError> {
    let (rows, cols) = m.dim();
    if rows != cols || rows == 0 {
        return Err(MixingError::NotSquare { rows, cols });
    }
    Ok(rows)
}

fn validate_stochastic(m: &Array2<f64>, by_rows: bool) -> Result<(), MixingError> {
    let kind = if by_rows { "row" } else { "column" };
    let n = check_square(m)?;
    if let Some(v) = m.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(MixingError::NotStochastic {
            kind,
            detail: format!("entry {v} is negative or non-finite"),
        });
    }
    for i in 0..n {
        if m[[i, i]] <= 0.0 {
            return Err(MixingError::NotStochastic {
                kind,
                detail: format!("diagonal entry {i} is not positive"),
            });
        }
    }
    let residual = sum_residual(m, by_rows);
    if residual > STOCHASTIC_TOL {
        return Err(MixingError::NotStochastic {
            kind,
            detail: format!("sum residual {residual:e}"),
        });
    }
    Ok(())
}

fn sum_residual(m: &Array2<f64>, by_rows: bool) -> f64 {
    let axis = if by_rows { 1 } else { 0 };
    m.sum_axis(ndarray::Axis(axis))
        .iter()
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

fn support_matches(m: &Array2<f64>, g: &DirectedGraph) -> bool {
    let n = g.n();
    if m.dim() != (n, n) {
        return false;
    }
    (0..n).all(|i| {
        (0..n).all(|j| {
            let expected = i == j || g.has_edge(j, i);
            (m[[i, j]] > 0.0) == expected
        })
    })
}

/// Row-stochastic matrix with a strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStochasticMatrix(Array2<f64>);

/// Column-stochastic matrix with a strictly positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ColStochasticMatrix(Array2<f64>);

macro_rules! stochastic_common {
    ($ty:ident, $by_rows:expr) => {
        impl $ty {
            /// Validates nonnegativity, positive diagonal and unit sums.
            pub fn from_matrix(m: Array2<f64>) -> Result<Self, MixingError> {
                validate_stochastic(&m, $by_rows)?;
                Ok(Self(m))
            }

            pub fn n(&self) -> usize {
                self.0.nrows()
            }

            pub fn matrix(&self) -> &Array2<f64> {
                &self.0
            }

            pub fn view(&self) -> ArrayView2<'_, f64> {
                self.0.view()
            }

            /// Largest absolute deviation of a row (or column) sum from 1.
            pub fn sum_residual(&self) -> f64 {
                sum_residual(&self.0, $by_rows)
            }

            /// True iff the nonzero pattern equals the graph's edges plus the diagonal.
            pub fn support_matches(&self, g: &DirectedGraph) -> bool {
                support_matches(&self.0, g)
            }

            pub fn min_diagonal(&self) -> f64 {
                self.0.diag().iter().copied().fold(f64::INFINITY, f64::min)
            }
        }
    };
}

stochastic_common!(RowStochasticMatrix, true);
stochastic_common!(ColStochasticMatrix, false);

/// Uniform in-neighbourhood weights `1 / (|in(i)| + 1)`.
pub fn build_row_stochastic(g: &DirectedGraph) -> RowStochasticMatrix {
    let n = g.n();
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        let nbrs = g.in_neighbors(i);
        let w = 1.0 / (nbrs.len() + 1) as f64;
        m[[i, i]] = w;
        for j in nbrs {
            m[[i, j]] = w;
        }
    }
    RowStochasticMatrix(m)
}

/// Uniform out-neighbourhood weights `1 / (|out(j)| + 1)`.
pub fn build_col_stochastic(g: &DirectedGraph) -> ColStochasticMatrix {
    let n = g.n();
    let mut m = Array2::zeros((n, n));
    for j in 0..n {
        let nbrs = g.out_neighbors(j);
        let w = 1.0 / (nbrs.len() + 1) as f64;
        m[[j, j]] = w;
        for i in nbrs {
            m[[i, j]] = w;
        }
    }
    ColStochasticMatrix(m)
}

/// Stationary vector from power iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronVector {
    pub vector: Array1<f64>,
    /// Fixed-point residual in the infinity norm.
    pub residual: f64,
    pub iterations: usize,
}

fn infinity_distance(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// Power iteration for `op`'s fixed point, starting at the uniform vector and
// renormalising to unit sum each step. Stops once the fixed-point residual
// itself drops below `tol`.
fn perron_power(
    n: usize,
    op: impl Fn(&Array1<f64>) -> Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<PerronVector, MixingError> {
    let mut pi = Array1::from_elem(n, 1.0 / n as f64);
    let mut iterations = 0;
    let mut residual = infinity_distance(&op(&pi), &pi);
    while residual > tol && iterations < max_iter {
        let mut next = op(&pi);
        let s = next.sum();
        next /= s;
        pi = next;
        iterations += 1;
        residual = infinity_distance(&op(&pi), &pi);
    }
    if residual > tol {
        return Err(MixingError::NonConvergence {
            iterations,
            residual,
        });
    }
    Ok(PerronVector {
        vector: pi,
        residual,
        iterations,
    })
}

/// Left Perron vector: `pi^T R = pi^T`, `sum(pi) = 1`.
pub fn perron_left(
    r: &RowStochasticMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<PerronVector, MixingError> {
    let rt = r.0.t();
    perron_power(r.n(), |v| rt.dot(v), tol, max_iter)
}

/// Right Perron vector: `C pi = pi`, `sum(pi) = 1`.
pub fn perron_right(
    c: &ColStochasticMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<PerronVector, MixingError> {
    perron_power(c.n(), |v| c.0.dot(v), tol, max_iter)
}

pub fn default_max_iter(n: usize) -> usize {
    100 * n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `M` is row-stochastic and `pi` is its left Perron vector.
    Row,
    /// `M` is column-stochastic and `pi` is its right Perron vector.
    Col,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionEstimate {
    /// Second-largest eigenvalue modulus estimate.
    pub rho: f64,
    /// False when the estimate did not settle within the iteration budget.
    pub converged: bool,
    pub iterations: usize,
}

fn dot(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.dot(b)
}

// Modulus of the dominant root of the best-fit monic quadratic
// z^2 + a z + b annihilating (u, Au, A^2 u); None when the fit is poor.
fn quadratic_fit_modulus(u: &Array1<f64>, a1: &Array1<f64>, a2: &Array1<f64>) -> Option<f64> {
    let g11 = dot(a1, a1);
    let g12 = dot(a1, u);
    let g22 = dot(u, u);
    let r1 = -dot(a1, a2);
    let r2 = -dot(u, a2);
    let det = g11 * g22 - g12 * g12;
    if det <= 1e-24 * g11 * g22 {
        return None;
    }
    let a = (r1 * g22 - r2 * g12) / det;
    let b = (g11 * r2 - g12 * r1) / det;
    let fit = a2 + &(a1 * a) + &(u * b);
    let scale = dot(a2, a2).sqrt().max(1e-300);
    if dot(&fit, &fit).sqrt() > 1e-7 * scale {
        return None;
    }
    let disc = a * a - 4.0 * b;
    if disc < 0.0 {
        Some(b.max(0.0).sqrt())
    } else {
        let s = disc.sqrt();
        Some(((-a + s) / 2.0).abs().max(((-a - s) / 2.0).abs()))
    }
}

/// Second-largest eigenvalue modulus of a stochastic matrix.
///
/// Power iteration on the deflated operator `M - 1 pi^T` (row side) or
/// `M - pi 1^T` (column side), started from an alternating-sign vector and
/// re-projected off the dominant direction every step. Each step the modulus
/// is read off either a Rayleigh quotient (real dominant eigenvalue) or a
/// two-term Krylov fit (complex pair). When neither settles, the windowed
/// geometric mean of the growth factors is returned with `converged = false`.
pub fn contraction_estimate(
    m: ArrayView2<'_, f64>,
    pi: ArrayView1<'_, f64>,
    side: Side,
    tol: f64,
    max_iter: usize,
) -> Result<ContractionEstimate, MixingError> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(MixingError::NotSquare { rows, cols });
    }
    let n = rows;
    if pi.len() != n {
        return Err(MixingError::Shape(format!(
            "Perron vector has length {}, matrix is {n}x{n}",
            pi.len()
        )));
    }
    let pi = pi.to_owned();
    let perron_residual = match side {
        Side::Row => infinity_distance(&m.t().dot(&pi), &pi),
        Side::Col => infinity_distance(&m.dot(&pi), &pi),
    };
    if perron_residual > CONTRACTION_PERRON_TOL {
        return Err(MixingError::InaccuratePerron(perron_residual));
    }
    if n == 1 {
        return Ok(ContractionEstimate {
            rho: 0.0,
            converged: true,
            iterations: 0,
        });
    }

    let project = |w: &mut Array1<f64>| match side {
        Side::Row => {
            let c = pi.dot(w);
            *w -= c;
        }
        Side::Col => {
            let c = w.sum();
            w.scaled_add(-c, &pi);
        }
    };
    let apply = |w: &Array1<f64>| {
        let mut out = m.dot(w);
        project(&mut out);
        out
    };

    // Alternating signs with growing magnitude so that the start is not an
    // eigenvector of a circulant matrix.
    let mut u = Array1::from_shape_fn(n, |i| if i % 2 == 0 { 1.0 + i as f64 } else { -1.0 - i as f64 });
    project(&mut u);
    let norm = dot(&u, &u).sqrt();
    if norm == 0.0 {
        u = Array1::from_shape_fn(n, |i| i as f64);
        project(&mut u);
    }
    u /= dot(&u, &u).sqrt();

    const ZERO: f64 = 1e-13;
    let window = 50.max(2 * n);
    let mut log_growth: Vec<f64> = Vec::with_capacity(max_iter);
    let mut prev: Option<f64> = None;
    for it in 1..=max_iter {
        let a1 = apply(&u);
        let g = dot(&a1, &a1).sqrt();
        if g <= ZERO {
            return Ok(ContractionEstimate {
                rho: 0.0,
                converged: true,
                iterations: it,
            });
        }
        let a2 = apply(&a1);
        let parallel_resid = {
            let c = dot(&a1, &u);
            let r = &a1 - &(&u * c);
            dot(&r, &r).sqrt()
        };
        let candidate = if parallel_resid <= 1e-9 * g {
            Some(dot(&a1, &u).abs())
        } else {
            quadratic_fit_modulus(&u, &a1, &a2)
        };
        if let (Some(c), Some(p)) = (candidate, prev) {
            if (c - p).abs() <= tol {
                return Ok(ContractionEstimate {
                    rho: if c <= ZERO { 0.0 } else { c.min(1.0) },
                    converged: true,
                    iterations: it,
                });
            }
        }
        prev = candidate;
        log_growth.push(g.ln());
        u = a1 / g;
    }
    let tail = &log_growth[log_growth.len().saturating_sub(window)..];
    let rho = if tail.is_empty() {
        0.0
    } else {
        (tail.iter().sum::<f64>() / tail.len() as f64).exp()
    };
    Ok(ContractionEstimate {
        rho: rho.clamp(0.0, 1.0),
        converged: false,
        iterations: max_iter,
    })
}

/// `n * pi_r . pi_c`, with `n` the vector length.
pub fn topology_constant(pi_r: ArrayView1<'_, f64>, pi_c: ArrayView1<'_, f64>) -> Result<f64, MixingError> {
    if pi_r.len() != pi_c.len() {
        return Err(MixingError::Shape(format!(
            "pi_r has length {}, pi_c has length {}",
            pi_r.len(),
            pi_c.len()
        )));
    }
    let c = pi_r.len() as f64 * pi_r.dot(&pi_c);
    if !(c > 0.0) || !c.is_finite() {
        return Err(MixingError::Inconsistent(format!(
            "topology constant {c} is not positive"
        )));
    }
    Ok(c)
}

/// Perron vectors and contraction diagnostics for an (R, C) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronData {
    pub pi_r: Array1<f64>,
    pub pi_c: Array1<f64>,
    pub rho_r: ContractionEstimate,
    pub rho_c: ContractionEstimate,
    pub residual_r: f64,
    pub residual_c: f64,
    pub c_pi: f64,
}

impl PerronData {
    /// Both Perron vectors entrywise positive. Spanning-tree graphs give
    /// vectors supported on the root's strongly connected class only.
    pub fn strictly_positive(&self) -> bool {
        self.pi_r.iter().chain(self.pi_c.iter()).all(|&p| p > 0.0)
    }
}

/// Pull matrix R, push matrix C, and their spectral data.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingPair {
    pub r: RowStochasticMatrix,
    pub c: ColStochasticMatrix,
    pub perron: PerronData,
}

impl MixingPair {
    /// Builds R from `g_r` and C from `g_c` with default iteration settings.
    pub fn from_graphs(g_r: &DirectedGraph, g_c: &DirectedGraph) -> Result<Self, MixingError> {
        if g_r.n() != g_c.n() {
            return Err(MixingError::Shape(format!(
                "pull graph has {} nodes, push graph has {}",
                g_r.n(),
                g_c.n()
            )));
        }
        Self::from_matrices(build_row_stochastic(g_r), build_col_stochastic(g_c))
    }

    pub fn from_matrices(r: RowStochasticMatrix, c: ColStochasticMatrix) -> Result<Self, MixingError> {
        let n = r.n();
        if c.n() != n {
            return Err(MixingError::Shape(format!("R is {n}x{n}, C is {0}x{0}", c.n())));
        }
        let max_iter = default_max_iter(n);
        let left = perron_left(&r, PERRON_TOL, max_iter)?;
        let right = perron_right(&c, PERRON_TOL, max_iter)?;
        let rho_r = contraction_estimate(r.view(), left.vector.view(), Side::Row, PERRON_TOL, max_iter)?;
        let rho_c = contraction_estimate(c.view(), right.vector.view(), Side::Col, PERRON_TOL, max_iter)?;
        let c_pi = topology_constant(left.vector.view(), right.vector.view())?;
        Ok(Self {
            r,
            c,
            perron: PerronData {
                pi_r: left.vector,
                pi_c: right.vector,
                rho_r,
                rho_c,
                residual_r: left.residual,
                residual_c: right.residual,
                c_pi,
            },
        })
    }

    pub fn n(&self) -> usize {
        self.r.n()
    }
}

/// CSV dump: one row per line, 17 significant digits.
pub fn matrix_to_csv(m: ArrayView2<'_, f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Result<Array2<f64>, MixingError> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| MixingError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(MixingError::Parse {
                    line: i + 1,
                    msg: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| MixingError::Parse {
        line: 0,
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_complete, gen_exponential, gen_multi_sub_ring, gen_ring, DirectedGraph};
    use ndarray::array;

    #[test]
    fn row_stochastic_examples() {
        let r = build_row_stochastic(&DirectedGraph::empty(1).unwrap());
        assert_eq!(r.matrix(), &array![[1.0]]);

        let r = build_row_stochastic(&gen_ring(3).unwrap());
        // node i receives from i-1
        assert_eq!(
            r.matrix(),
            &array![[0.5, 0.0, 0.5], [0.5, 0.5, 0.0], [0.0, 0.5, 0.5]]
        );

        let r = build_row_stochastic(&gen_complete(3).unwrap());
        assert!(r.matrix().iter().all(|&v| v == 1.0 / 3.0));
    }

    #[test]
    fn col_stochastic_examples() {
        let c = build_col_stochastic(&DirectedGraph::empty(1).unwrap());
        assert_eq!(c.matrix(), &array![[1.0]]);
        let c = build_col_stochastic(&gen_ring(3).unwrap());
        // column j pushes to j+1
        assert_eq!(
            c.matrix(),
            &array![[0.5, 0.0, 0.5], [0.5, 0.5, 0.0], [0.0, 0.5, 0.5]]
        );
    }

    #[test]
    fn col_equals_transposed_row_of_reverse_for_regular_graphs() {
        for g in [gen_ring(3).unwrap(), gen_ring(7).unwrap(), gen_complete(4).unwrap(), gen_exponential(8).unwrap()] {
            let c = build_col_stochastic(&g);
            let rt = build_row_stochastic(&g.reverse()).matrix().t().to_owned();
            let n = g.n();
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(c.matrix()[[i, j]], rt[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn isolated_receiver_gets_identity_row() {
        let g = DirectedGraph::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        let r = build_row_stochastic(&g);
        assert_eq!(r.matrix().row(0).to_vec(), vec![1.0, 0.0, 0.0]);
        let c = build_col_stochastic(&g);
        assert_eq!(c.matrix().column(2).to_vec(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn from_matrix_rejects_bad_input() {
        assert!(RowStochasticMatrix::from_matrix(array![[0.5, 0.4], [0.5, 0.5]]).is_err());
        assert!(RowStochasticMatrix::from_matrix(array![[0.0, 1.0], [0.5, 0.5]]).is_err());
        assert!(ColStochasticMatrix::from_matrix(array![[0.5, 0.5], [0.5, 0.5], [0.0, 0.0]]).is_err());
        assert!(ColStochasticMatrix::from_matrix(array![[0.5, 0.25], [0.5, 0.75]]).is_ok());
    }

    #[test]
    fn perron_examples() {
        let one = RowStochasticMatrix::from_matrix(array![[1.0]]).unwrap();
        let p = perron_left(&one, 1e-12, 100).unwrap();
        assert_eq!(p.vector.to_vec(), vec![1.0]);
        assert_eq!(p.residual, 0.0);

        // Stationary equations pi1 = 0.5 pi1 + 0.25 pi2, pi1 + pi2 = 1 -> (1/3, 2/3).
        let r = RowStochasticMatrix::from_matrix(array![[0.5, 0.5], [0.25, 0.75]]).unwrap();
        let p = perron_left(&r, 1e-12, 1000).unwrap();
        assert!((p.vector[0] - 1.0 / 3.0).abs() < 1e-11);
        assert!((p.vector[1] - 2.0 / 3.0).abs() < 1e-11);

        let c = ColStochasticMatrix::from_matrix(array![[0.5, 0.25], [0.5, 0.75]]).unwrap();
        let p = perron_right(&c, 1e-12, 1000).unwrap();
        assert!((p.vector[0] - 1.0 / 3.0).abs() < 1e-11);
        assert!((p.vector[1] - 2.0 / 3.0).abs() < 1e-11);

        let one = ColStochasticMatrix::from_matrix(array![[1.0]]).unwrap();
        assert_eq!(perron_right(&one, 1e-12, 10).unwrap().vector.to_vec(), vec![1.0]);
    }

    #[test]
    fn perron_of_doubly_stochastic_is_uniform() {
        for g in [gen_ring(6).unwrap(), gen_exponential(10).unwrap()] {
            let r = build_row_stochastic(&g);
            let c = build_col_stochastic(&g);
            let pl = perron_left(&r, 1e-12, 2000).unwrap();
            let pr = perron_right(&c, 1e-12, 2000).unwrap();
            let u = 1.0 / g.n() as f64;
            assert!(pl.vector.iter().all(|v| (v - u).abs() < 1e-14));
            assert!(pr.vector.iter().all(|v| (v - u).abs() < 1e-14));
        }
    }

    #[test]
    fn perron_reports_nonconvergence() {
        // Two disconnected blocks: the fixed point is not unique and the
        // start vector is already stationary, so force a tiny budget on a
        // slowly mixing chain instead.
        let r = RowStochasticMatrix::from_matrix(array![[0.999, 0.001], [0.0005, 0.9995]]).unwrap();
        let err = perron_left(&r, 1e-14, 3).unwrap_err();
        assert!(matches!(err, MixingError::NonConvergence { iterations: 3, .. }));
    }

    #[test]
    fn contraction_examples() {
        let one = array![[1.0]];
        let est = contraction_estimate(one.view(), array![1.0].view(), Side::Row, 1e-12, 100).unwrap();
        assert_eq!(est.rho, 0.0);

        // eigenvalues of [[.5,.5],[.25,.75]] are 1 and trace - 1 = 0.25
        let m = array![[0.5, 0.5], [0.25, 0.75]];
        let pi = array![1.0 / 3.0, 2.0 / 3.0];
        let est = contraction_estimate(m.view(), pi.view(), Side::Row, 1e-12, 200).unwrap();
        assert!(est.converged);
        assert!((est.rho - 0.25).abs() < 1e-10, "{}", est.rho);

        let est = contraction_estimate(m.t(), pi.view(), Side::Col, 1e-12, 200).unwrap();
        assert!((est.rho - 0.25).abs() < 1e-10, "{}", est.rho);

        for n in [2usize, 3, 5, 8] {
            let m = Array2::from_elem((n, n), 1.0 / n as f64);
            let pi = Array1::from_elem(n, 1.0 / n as f64);
            let est = contraction_estimate(m.view(), pi.view(), Side::Row, 1e-12, 100).unwrap();
            assert!(est.rho.abs() < 1e-12, "n={n} rho={}", est.rho);
        }
    }

    #[test]
    fn contraction_rejects_inaccurate_perron() {
        let m = array![[0.5, 0.5], [0.25, 0.75]];
        let err = contraction_estimate(m.view(), array![0.5, 0.5].view(), Side::Row, 1e-12, 10).unwrap_err();
        assert!(matches!(err, MixingError::InaccuratePerron(_)));
    }

    #[test]
    fn ring_slem_matches_closed_form() {
        // R = (I + P)/2 is circulant: |(1 + e^{2 pi i / n})| / 2 = cos(pi / n).
        for n in [3usize, 4, 7, 20] {
            let pair = MixingPair::from_graphs(&gen_ring(n).unwrap(), &gen_ring(n).unwrap()).unwrap();
            let expected = (std::f64::consts::PI / n as f64).cos();
            assert!((pair.perron.rho_r.rho - expected).abs() < 1e-8, "n={n} {}", pair.perron.rho_r.rho);
            assert!((pair.perron.rho_c.rho - expected).abs() < 1e-8);
        }
    }

    // Largest eigenvalue modulus of `m - 1 pi^T` (rows) or `m - pi 1^T`
    // (columns) from a dense Schur decomposition.
    fn deflated_spectral_radius(m: ArrayView2<'_, f64>, pi: ArrayView1<'_, f64>, side: Side) -> f64 {
        let n = m.nrows();
        let d = nalgebra::DMatrix::from_fn(n, n, |i, j| match side {
            Side::Row => m[[i, j]] - pi[j],
            Side::Col => m[[i, j]] - pi[i],
        });
        d.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn contraction_matches_dense_eigenvalues() {
        let mut graphs = vec![
            gen_exponential(20).unwrap(),
            gen_multi_sub_ring(20, 4, 0).unwrap().0,
            gen_multi_sub_ring(13, 3, 5).unwrap().0,
            gen_ring(9).unwrap(),
        ];
        // ring plus a few chords: non-normal, complex spectrum
        let mut g = gen_ring(12).unwrap();
        for (a, b) in [(0, 5), (3, 9), (7, 2), (11, 6)] {
            g.insert_edge(a, b).unwrap();
        }
        graphs.push(g);
        for g in &graphs {
            let pair = MixingPair::from_graphs(g, g).unwrap();
            let p = &pair.perron;
            let want_r = deflated_spectral_radius(pair.r.view(), p.pi_r.view(), Side::Row);
            let want_c = deflated_spectral_radius(pair.c.view(), p.pi_c.view(), Side::Col);
            assert!(p.rho_r.converged && p.rho_c.converged);
            assert!((p.rho_r.rho - want_r).abs() < 1e-6, "{} vs {want_r}", p.rho_r.rho);
            assert!((p.rho_c.rho - want_c).abs() < 1e-6, "{} vs {want_c}", p.rho_c.rho);
        }
    }

    #[test]
    fn topology_constant_examples() {
        for n in [1usize, 2, 5, 20] {
            let u = Array1::from_elem(n, 1.0 / n as f64);
            assert!((topology_constant(u.view(), u.view()).unwrap() - 1.0).abs() < 1e-15);
        }
        let pr = array![1.0 / 3.0, 2.0 / 3.0];
        let pc = array![2.0 / 3.0, 1.0 / 3.0];
        assert!((topology_constant(pr.view(), pc.view()).unwrap() - 8.0 / 9.0).abs() < 1e-15);
        assert!(topology_constant(array![1.0, 0.0].view(), array![0.0, 1.0].view()).is_err());
        assert!(topology_constant(array![1.0].view(), array![0.5, 0.5].view()).is_err());
    }

    #[test]
    fn multi_sub_ring_pair_is_well_formed() {
        let (gr, gc) = gen_multi_sub_ring(20, 4, 0).unwrap();
        let pair = MixingPair::from_graphs(&gr, &gc).unwrap();
        assert!(pair.perron.residual_r <= 1e-10);
        assert!(pair.perron.residual_c <= 1e-10);
        assert!(pair.perron.strictly_positive());
        assert!(pair.perron.c_pi > 0.0);
        assert!(pair.perron.rho_r.rho < 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let r = build_row_stochastic(&gen_exponential(5).unwrap());
        let text = matrix_to_csv(r.view());
        assert_eq!(text.lines().count(), 5);
        assert_eq!(&matrix_from_csv(&text).unwrap(), r.matrix());
        assert!(matrix_from_csv("1,2\n3\n").is_err());
    }
}
