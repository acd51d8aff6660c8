//! Derivatives of the Itô map `x ↦ Φ(x)`: flow fields `Ψ^i_{t,s}`, first and
//! second directional derivatives, the Malliavin matrix of `Y_t(ξ)` and its
//! `𝓗`-norm.
//!
//! The Malliavin matrix is computed by a backward (adjoint) sweep: with
//! `A_k = S_δ(I + Σ_j Δx^j_k DG_j(y_k))` the flow satisfies
//! `Ψ^i_{t,s_k} = A_{t−1}⋯A_k G_i(y_k)`, so `Ψ^i_{t,s_k}(ξ) = r_k·G_i(y_k)`
//! with `r_k = A_kᵀ r_{k+1}` and `r_t` the evaluation functional at `ξ`.
//! One sweep yields every source time.

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::fbm::{holder_constant, DriverPath, IncrementGram};
use crate::report::{numbered, CsvTable};
use crate::solver::{HeatModel, Linearization, NemytskiiFamily, Regularizer, SolverConfig};
use crate::spectral::{basis_values, dot, semigroup_factors, sobolev_weights, weighted_sq, SpectralField};
use crate::young::FieldPath;

/// `Ψ^i_{·,s}` for every driver component `i`, on `[s, end]`.
#[derive(Clone, Debug)]
pub struct FlowField {
    pub source: usize,
    pub psi: Vec<FieldPath>,
}

/// Forward flow from source index `s`: `solve_linear` with `w_t = S_{t−s} G_i(Y_s)`.
pub fn flow_field_with(model: &HeatModel, y: &FieldPath, lin: &Linearization, x: &DriverPath, s: usize) -> Result<FlowField> {
    let ys = y.at(s).ok_or_else(|| invalid(format!("source index {s} outside the solution grid")))?;
    let steps = y.end() - s;
    let psi = (0..model.family().len())
        .map(|i| {
            let g = model.drift_field(ys, i)?;
            let mut w = FieldPath::semigroup_orbit(&g, x.dt(), steps);
            w = FieldPath::from_parts(x.dt(), s, w.into_fields());
            model.solve_linear(&w, lin, x, s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowField { source: s, psi })
}

/// Forward flow of the equation defined by `(f, L)` around the solution `y`.
pub fn flow_field(y: &FieldPath, x: &DriverPath, f: &NemytskiiFamily, l: &Regularizer, s: usize) -> Result<FlowField> {
    let model = HeatModel::new(y.n_modes(), f.clone(), l.clone())?;
    let lin = model.linearize(y)?;
    flow_field_with(&model, y, &lin, x, s)
}

/// `𝓓^i_{s_k} Y_t(ξ)` on the source grid `s_k = k·stride·δ`, `k = 0..=t/stride`.
#[derive(Clone, Debug, PartialEq)]
pub struct MalliavinMatrix {
    pub xi: f64,
    pub hurst: Option<f64>,
    pub dt: f64,
    pub stride: usize,
    /// Grid index of the evaluation time `t`.
    pub terminal: usize,
    /// `entries[i][k]` is component `i` at source `s_k`.
    pub entries: Vec<Vec<f64>>,
}

impl MalliavinMatrix {
    pub fn n_components(&self) -> usize {
        self.entries.len()
    }

    pub fn n_sources(&self) -> usize {
        self.entries[0].len()
    }

    pub fn source_time(&self, k: usize) -> f64 {
        (k * self.stride) as f64 * self.dt
    }

    pub fn source_spacing(&self) -> f64 {
        self.stride as f64 * self.dt
    }

    /// Entries at `s = t`.
    pub fn terminal_entries(&self) -> Vec<f64> {
        self.entries.iter().map(|r| *r.last().expect("non-empty")).collect()
    }

    /// `max_{i,s} |𝓓^i_s|`.
    pub fn sup_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest all-pairs `β`-Hölder constant of `s ↦ 𝓓^i_s` over the components.
    pub fn holder_constant(&self, beta: f64) -> f64 {
        self.entries
            .iter()
            .map(|r| holder_constant(r, self.source_spacing(), beta))
            .fold(0.0, f64::max)
    }

    /// Largest jump between neighbouring source times.
    pub fn max_neighbor_jump(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|r| r.windows(2).map(|w| (w[1] - w[0]).abs()))
            .fold(0.0, f64::max)
    }

    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(std::iter::once("s".to_string()).chain(numbered("comp", self.n_components())));
        for k in 0..self.n_sources() {
            let mut row = vec![self.source_time(k)];
            row.extend(self.entries.iter().map(|r| r[k]));
            t.push(row);
        }
        t
    }
}

fn check_sources(terminal: usize, stride: usize, steps: usize) -> Result<()> {
    if stride == 0 || terminal % stride != 0 {
        return Err(invalid(format!("stride {stride} must divide the terminal index {terminal}")));
    }
    if terminal > steps {
        return Err(invalid(format!("terminal index {terminal} beyond {steps} steps")));
    }
    Ok(())
}

/// Adjoint sweep for `𝓓^i_s Y_t(ξ)` at the terminal grid index `t`.
pub fn malliavin_matrix_at(
    model: &HeatModel,
    lin: &Linearization,
    x: &DriverPath,
    xi: f64,
    terminal: usize,
    stride: usize,
) -> Result<MalliavinMatrix> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::OutOfDomain {
            name: "xi",
            value: xi,
            domain: "(0,1)",
        });
    }
    check_sources(terminal, stride, x.steps())?;
    let n = model.n_modes();
    let d = model.family().len();
    let decay = semigroup_factors(n, x.dt());
    let mut s = model.scratch();
    let mut r = basis_values(n, xi);
    let mut u = vec![0.0; n];
    let mut g = vec![0.0; n];
    let n_src = terminal / stride + 1;
    let mut entries = vec![vec![0.0; n_src]; d];
    let mut incs = vec![0.0; d];
    let mut k = terminal;
    loop {
        if k % stride == 0 {
            let yv = lin.at(k);
            for (i, row) in entries.iter_mut().enumerate() {
                model.drift_from_values(yv, i, &mut s, &mut g);
                row[k / stride] = dot(&r, &g);
            }
        }
        if k == 0 {
            break;
        }
        k -= 1;
        for (i, v) in incs.iter_mut().enumerate() {
            *v = x.increment(i, k);
        }
        for ((a, b), e) in u.iter_mut().zip(&r).zip(&decay) {
            *a = b * e;
        }
        r.copy_from_slice(&u);
        if incs.iter().any(|v| *v != 0.0) {
            model.linear_term_transpose(lin.at(k), &incs, &u, &mut s, &mut r);
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                step: k,
                time: x.time(k),
            });
        }
    }
    Ok(MalliavinMatrix {
        xi,
        hurst: x.hurst(),
        dt: x.dt(),
        stride,
        terminal,
        entries,
    })
}

/// `𝓓^i_s Y_1(ξ) = Ψ^i_{1,s}(ξ)` for the solution `y` of the equation defined by `(f, L)`.
pub fn malliavin_matrix(
    y: &FieldPath,
    x: &DriverPath,
    f: &NemytskiiFamily,
    l: &Regularizer,
    xi: f64,
    stride: usize,
) -> Result<MalliavinMatrix> {
    let model = HeatModel::new(y.n_modes(), f.clone(), l.clone())?;
    let lin = model.linearize(y)?;
    malliavin_matrix_at(&model, &lin, x, xi, y.end(), stride)
}

/// Whole fields `Ψ^i_{t,s_k}` on the source grid, from a backward sweep of
/// the full propagator `A_{t−1}⋯A_k` (all `N` evaluation functionals at once).
pub fn flow_fields_at_sources(
    model: &HeatModel,
    lin: &Linearization,
    x: &DriverPath,
    terminal: usize,
    stride: usize,
) -> Result<Vec<Vec<SpectralField>>> {
    check_sources(terminal, stride, x.steps())?;
    let n = model.n_modes();
    let d = model.family().len();
    let grid = model.grid();
    let p = grid.len();
    let p1 = (p + 1) as f64;
    let decay = semigroup_factors(n, x.dt());
    // synthesis T (P×N) and analysis A (N×P)
    let mut t_mat = DMatrix::zeros(p, n);
    let mut col = vec![0.0; p];
    let mut e = vec![0.0; n];
    for m in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[m] = 1.0;
        grid.synthesize(&e, &mut col);
        for j in 0..p {
            t_mat[(j, m)] = col[j];
        }
    }
    let a_mat = t_mat.transpose() / p1;
    let w_mat = model.regularizer().kernel().map(|k| DMatrix::from_fn(p, p, |j, l| k.entry(j, l)));
    let mut s = model.scratch();
    let mut g = vec![0.0; n];
    let n_src = terminal / stride + 1;
    let mut out = vec![vec![SpectralField::zeros(n); n_src]; d];
    let mut prop = DMatrix::<f64>::identity(n, n);
    let mut k = terminal;
    loop {
        if k % stride == 0 {
            let yv = lin.at(k);
            for (i, row) in out.iter_mut().enumerate() {
                model.drift_from_values(yv, i, &mut s, &mut g);
                let gv = nalgebra::DVector::from_column_slice(&g);
                row[k / stride] = SpectralField::from_vec((&prop * gv).as_slice().to_vec());
            }
        }
        if k == 0 {
            break;
        }
        k -= 1;
        for (m, e) in decay.iter().enumerate() {
            prop.column_mut(m).scale_mut(*e);
        }
        let incs = x.increments_at(k);
        if incs.iter().any(|v| *v != 0.0) {
            let yv = lin.at(k);
            let mut z = &prop * &a_mat;
            if let Some(w) = &w_mat {
                z = &z * w;
            }
            for j in 0..p {
                let gj: f64 = incs
                    .iter()
                    .enumerate()
                    .map(|(i, dx)| dx * model.family().member(i).d1(yv[j]))
                    .sum();
                z.column_mut(j).scale_mut(gj);
            }
            prop += &z * &t_mat;
        }
        if prop.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp {
                step: k,
                time: x.time(k),
            });
        }
    }
    Ok(out)
}

/// `max_i 𝓝[Ψ^i_{t,·}; 𝓒^γ(𝓑_α)]` over the source grid.
pub fn flow_holder_constant(flows: &[Vec<SpectralField>], spacing: f64, alpha: f64, gamma: f64) -> f64 {
    let mut best = 0.0f64;
    for row in flows {
        let n = row[0].n_modes();
        let w = sobolev_weights(n, alpha);
        for a in 0..row.len() {
            for b in a + 1..row.len() {
                let diff = row[b].difference(&row[a]);
                let v = weighted_sq(diff.coeffs(), &w).sqrt() / ((b - a) as f64 * spacing).powf(gamma);
                best = best.max(v);
            }
        }
    }
    best
}

/// `DΦ(x)(h)` for the equation defined by `(φ, f, L)`.
pub fn directional_derivative(
    x: &DriverPath,
    h: &DriverPath,
    phi: &SpectralField,
    f: &NemytskiiFamily,
    l: &Regularizer,
    cfg: &SolverConfig,
) -> Result<FieldPath> {
    cfg.validate()?;
    let model = HeatModel::new(cfg.n_modes, f.clone(), l.clone())?;
    let y = model.solve(phi, x)?;
    let lin = model.linearize(&y)?;
    model.directional(&lin, x, h)
}

/// `D²Φ(x)(h,k)` for the equation defined by `(φ, f, L)`.
pub fn second_directional_derivative(
    x: &DriverPath,
    h: &DriverPath,
    k: &DriverPath,
    phi: &SpectralField,
    f: &NemytskiiFamily,
    l: &Regularizer,
    cfg: &SolverConfig,
) -> Result<FieldPath> {
    cfg.validate()?;
    let model = HeatModel::new(cfg.n_modes, f.clone(), l.clone())?;
    let y = model.solve(phi, x)?;
    let lin = model.linearize(&y)?;
    let zh = model.directional(&lin, x, h)?;
    let zk = model.directional(&lin, x, k)?;
    model.second_directional(&lin, x, h, k, &zh, &zk)
}

/// `∫_0^t Ψ^i_{t,u}(ξ) dh^i_u` by left-point sums on the source grid.
pub fn representation_integral(matrix: &MalliavinMatrix, h: &DriverPath) -> Result<f64> {
    if h.n_components() != matrix.n_components() || h.steps() < matrix.terminal {
        return Err(Error::Shape {
            context: "representation direction",
            expected: matrix.n_components(),
            got: h.n_components(),
        });
    }
    let st = matrix.stride;
    let mut s = 0.0;
    for (i, row) in matrix.entries.iter().enumerate() {
        let hi = h.component(i);
        for k in 0..row.len() - 1 {
            s += row[k] * (hi[(k + 1) * st] - hi[k * st]);
        }
    }
    Ok(s)
}

/// `‖𝓓 Y_t(ξ)‖_𝓗` with each component row read as a step function on the source grid.
pub fn malliavin_h_norm(matrix: &MalliavinMatrix) -> Result<f64> {
    let hurst = matrix
        .hurst
        .ok_or_else(|| invalid("the H-norm needs the Hurst index of the driver"))?;
    let pieces = matrix.n_sources() - 1;
    if pieces == 0 {
        return Ok(0.0);
    }
    let gram = IncrementGram::new(pieces, matrix.source_spacing(), hurst);
    let sq: f64 = matrix
        .entries
        .iter()
        .map(|r| gram.bilinear(&r[..pieces], &r[..pieces]))
        .sum();
    Ok(sq.max(0.0).sqrt())
}

/// Outcome of [`nondegeneracy_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct NondegeneracyReport {
    pub terminal_entries: Vec<f64>,
    pub min_terminal_entry: f64,
    pub max_terminal_entry: f64,
    pub threshold: f64,
    pub passes: bool,
}

/// Passes iff `max_i |𝓓^i_t Y_t(ξ)| ≥ c_U λ_0 − 1e−8`.
pub fn nondegeneracy_check(matrix: &MalliavinMatrix, c_u: f64, lambda_0: f64) -> NondegeneracyReport {
    let terminal = matrix.terminal_entries();
    let abs: Vec<f64> = terminal.iter().map(|v| v.abs()).collect();
    let min = abs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = abs.iter().copied().fold(0.0, f64::max);
    let threshold = c_u * lambda_0;
    NondegeneracyReport {
        terminal_entries: terminal,
        min_terminal_entry: min,
        max_terminal_entry: max,
        threshold,
        passes: max >= threshold - 1e-8,
    }
}
