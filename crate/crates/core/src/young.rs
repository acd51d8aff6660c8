//! Convolutional Young integrals `∫_s^t S_{t−u} z_u dx_u` and time-regularity
//! norms of field-valued paths.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fbm::DriverPath;
use crate::report::{numbered, CsvTable};
use crate::spectral::{eigenvalue, semigroup_factors, sobolev_weights, weighted_sq, CollocationGrid, SpectralField};

/// One field per grid time `t_j = (offset + j) δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPath {
    dt: f64,
    offset: usize,
    fields: Vec<SpectralField>,
}

/// Column layout of a [`FieldPath`] export.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotMode {
    Coefficients,
    GridValues,
}

impl FieldPath {
    pub fn new(dt: f64, offset: usize, fields: Vec<SpectralField>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        let n = fields.first().ok_or_else(|| invalid("a field path needs at least one field"))?.n_modes();
        if let Some(f) = fields.iter().find(|f| f.n_modes() != n) {
            return Err(Error::Shape {
                context: "field path modes",
                expected: n,
                got: f.n_modes(),
            });
        }
        Ok(Self { dt, offset, fields })
    }

    pub(crate) fn from_parts(dt: f64, offset: usize, fields: Vec<SpectralField>) -> Self {
        Self { dt, offset, fields }
    }

    /// `t ↦ S_t φ` on `steps + 1` grid times.
    pub fn semigroup_orbit(phi: &SpectralField, dt: f64, steps: usize) -> Self {
        let n = phi.n_modes();
        let step = semigroup_factors(n, dt);
        let mut cur = phi.clone();
        let mut fields = Vec::with_capacity(steps + 1);
        fields.push(cur.clone());
        for _ in 0..steps {
            cur.apply_factors(&step);
            fields.push(cur.clone());
        }
        Self::from_parts(dt, 0, fields)
    }

    pub fn constant(phi: &SpectralField, dt: f64, steps: usize) -> Self {
        Self::from_parts(dt, 0, vec![phi.clone(); steps + 1])
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Grid index of the first field.
    pub fn offset(&self) -> usize {
        self.offset
    }

    /// Grid index of the last field.
    pub fn end(&self) -> usize {
        self.offset + self.fields.len() - 1
    }

    pub fn n_modes(&self) -> usize {
        self.fields[0].n_modes()
    }

    pub fn time(&self, j: usize) -> f64 {
        (self.offset + j) as f64 * self.dt
    }

    pub fn fields(&self) -> &[SpectralField] {
        &self.fields
    }

    pub fn into_fields(self) -> Vec<SpectralField> {
        self.fields
    }

    /// Field at global grid index `k`.
    pub fn at(&self, k: usize) -> Option<&SpectralField> {
        k.checked_sub(self.offset).and_then(|j| self.fields.get(j))
    }

    pub fn last(&self) -> &SpectralField {
        self.fields.last().expect("field paths are non-empty")
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self::from_parts(self.dt, self.offset, self.fields.iter().map(|f| f.scaled(a)).collect())
    }

    /// Largest coefficient-wise `ℓ²` distance to another path on the same grid.
    pub fn max_distance(&self, other: &FieldPath) -> f64 {
        self.fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| a.difference(b).l2_norm())
            .fold(0.0, f64::max)
    }

    pub fn to_table(&self, mode: SnapshotMode) -> CsvTable {
        let n = self.n_modes();
        match mode {
            SnapshotMode::Coefficients => {
                let mut t = CsvTable::new(std::iter::once("time".to_string()).chain(numbered("mode", n)));
                for (j, f) in self.fields.iter().enumerate() {
                    let mut row = vec![self.time(j)];
                    row.extend_from_slice(f.coeffs());
                    t.push(row);
                }
                t
            }
            SnapshotMode::GridValues => {
                let grid = CollocationGrid::shared(n);
                let mut t = CsvTable::new(
                    std::iter::once("time".to_string()).chain((0..n).map(|j| format!("xi_{}", grid.point(j)))),
                );
                let mut vals = vec![0.0; n];
                for (j, f) in self.fields.iter().enumerate() {
                    grid.synthesize(f.coeffs(), &mut vals);
                    let mut row = vec![self.time(j)];
                    row.extend_from_slice(&vals);
                    t.push(row);
                }
                t
            }
        }
    }
}

fn check_integrand(z: &[FieldPath], x: &DriverPath, s: usize, t: usize) -> Result<()> {
    if z.len() != x.n_components() {
        return Err(Error::Shape {
            context: "integrand components",
            expected: x.n_components(),
            got: z.len(),
        });
    }
    if s >= t || t > x.steps() {
        return Err(invalid(format!("integration bounds ({s},{t}) invalid for {} steps", x.steps())));
    }
    for zi in z {
        if zi.offset > s || zi.end() < t {
            return Err(invalid(format!(
                "integrand covers [{},{}] but [{s},{t}] is required",
                zi.offset,
                zi.end()
            )));
        }
    }
    Ok(())
}

fn check_partition(partition: &[usize], s: usize, t: usize) -> Result<()> {
    if partition.len() < 2 || partition[0] != s || partition[partition.len() - 1] != t {
        return Err(invalid(format!("partition must run from {s} to {t}")));
    }
    if partition.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("partition must be strictly increasing"));
    }
    Ok(())
}

fn riemann_sum(z: &[FieldPath], x: &DriverPath, t: usize, partition: &[usize], right: bool) -> SpectralField {
    let n = z[0].n_modes();
    let lambdas: Vec<f64> = (1..=n).map(eigenvalue).collect();
    let mut acc = vec![0.0; n];
    for w in partition.windows(2) {
        let (a, b) = (w[0], w[1]);
        let eval_at = if right { b } else { a };
        let lag = (t - eval_at) as f64 * x.dt();
        for (i, zi) in z.iter().enumerate() {
            let dx = x.component(i)[b] - x.component(i)[a];
            if dx == 0.0 {
                continue;
            }
            let f = zi.at(eval_at).expect("checked coverage");
            for ((o, c), l) in acc.iter_mut().zip(f.coeffs()).zip(&lambdas) {
                *o += (-l * lag).exp() * c * dx;
            }
        }
    }
    SpectralField::from_vec(acc)
}

/// `Σ_k S_{t−t_{k+1}} z^i_{t_{k+1}} (x^i_{t_{k+1}} − x^i_{t_k})` over a partition
/// of grid indices from `s` to `t`; `z` holds one integrand path per driver component.
pub fn conv_riemann_sum(
    z: &[FieldPath],
    x: &DriverPath,
    s: usize,
    t: usize,
    partition: &[usize],
) -> Result<SpectralField> {
    check_integrand(z, x, s, t)?;
    check_partition(partition, s, t)?;
    Ok(riemann_sum(z, x, t, partition, true))
}

/// Same sum with the integrand frozen at the left end of each piece.
pub fn conv_left_riemann_sum(
    z: &[FieldPath],
    x: &DriverPath,
    s: usize,
    t: usize,
    partition: &[usize],
) -> Result<SpectralField> {
    check_integrand(z, x, s, t)?;
    check_partition(partition, s, t)?;
    Ok(riemann_sum(z, x, t, partition, false))
}

/// `pieces + 1` grid indices spreading `[s,t]` as evenly as the grid allows.
pub fn uniform_partition(s: usize, t: usize, pieces: usize) -> Vec<usize> {
    let len = t - s;
    let pieces = pieces.clamp(1, len.max(1));
    let mut p: Vec<usize> = (0..=pieces).map(|j| s + (j * len + pieces / 2) / pieces).collect();
    p.dedup();
    *p.last_mut().expect("non-empty") = t;
    p
}

/// Result of [`conv_integral`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvIntegral {
    pub value: SpectralField,
    /// False when the grid resolution was reached before the tolerance.
    pub converged: bool,
    pub pieces: usize,
    pub last_change: f64,
}

/// Dyadic refinement of right-point sums until two successive sums differ by
/// less than `rel_tol` (relative, in `𝓑`), capped at the driver grid.
pub fn conv_integral(z: &[FieldPath], x: &DriverPath, s: usize, t: usize, rel_tol: f64) -> Result<ConvIntegral> {
    check_integrand(z, x, s, t)?;
    if !(rel_tol > 0.0) {
        return Err(invalid(format!("tolerance must be positive, got {rel_tol}")));
    }
    let len = t - s;
    let mut pieces = 1usize;
    let mut prev = riemann_sum(z, x, t, &uniform_partition(s, t, 1), true);
    let mut last_change = f64::INFINITY;
    while pieces < len {
        pieces = (pieces * 2).min(len);
        let cur = riemann_sum(z, x, t, &uniform_partition(s, t, pieces), true);
        let change = cur.difference(&prev).l2_norm();
        let scale = cur.l2_norm();
        last_change = change;
        prev = cur;
        if change <= rel_tol * scale {
            return Ok(ConvIntegral {
                value: prev,
                converged: true,
                pieces,
                last_change,
            });
        }
    }
    Ok(ConvIntegral {
        value: prev,
        converged: len == 1,
        pieces,
        last_change,
    })
}

/// One level of [`refinement_study`]: `‖I_{2m} − I_m‖_{𝓑_α}` for `m = pieces`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinementLevel {
    pub pieces: usize,
    pub mesh: f64,
    pub change: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementStudy {
    pub levels: Vec<RefinementLevel>,
    /// Least-squares slope of `log change` against `log mesh`.
    pub order: f64,
}

/// Successive right-point sums on dyadic partitions of `[s,t]`, from `coarsest`
/// pieces up to the grid resolution.
pub fn refinement_study(
    z: &[FieldPath],
    x: &DriverPath,
    s: usize,
    t: usize,
    coarsest: usize,
    alpha: f64,
) -> Result<RefinementStudy> {
    check_integrand(z, x, s, t)?;
    if coarsest == 0 || coarsest * 4 > t - s {
        return Err(invalid(format!(
            "need at least two refinements between {coarsest} pieces and the {} grid steps",
            t - s
        )));
    }
    let len = (t - s) as f64 * x.dt();
    let mut pieces = coarsest;
    let mut prev = riemann_sum(z, x, t, &uniform_partition(s, t, pieces), true);
    let mut levels = Vec::new();
    while pieces * 2 <= t - s {
        let next = riemann_sum(z, x, t, &uniform_partition(s, t, pieces * 2), true);
        levels.push(RefinementLevel {
            pieces,
            mesh: len / pieces as f64,
            change: next.difference(&prev).sobolev_norm(alpha)?,
        });
        prev = next;
        pieces *= 2;
    }
    let pts: Vec<(f64, f64)> = levels
        .iter()
        .filter(|l| l.change > 0.0)
        .map(|l| (l.mesh.ln(), l.change.ln()))
        .collect();
    let order = if pts.len() < 2 {
        f64::INFINITY
    } else {
        let n = pts.len() as f64;
        let mu = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mu) * (p.1 - mv)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mu).powi(2)).sum();
        sxy / sxx
    };
    Ok(RefinementStudy { levels, order })
}

impl RefinementStudy {
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(["pieces", "mesh", "change"]);
        for l in &self.levels {
            t.push(vec![l.pieces as f64, l.mesh, l.change]);
        }
        t
    }
}

/// `𝓝[y; 𝓒⁰(I;𝓑_α)]`, `𝓝[y; 𝓒^κ(I;𝓑_α)]` and `𝓝[y; Ĉ^κ(I;𝓑_α)]` on the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathNorms {
    pub c0: f64,
    pub holder: f64,
    pub hat_holder: f64,
}

/// Norms of `y` over the grid indices `start..=end`, with all-pairs scans.
pub fn path_norms(y: &FieldPath, start: usize, end: usize, kappa: f64, alpha: f64) -> Result<PathNorms> {
    if start > end || start < y.offset || end > y.end() {
        return Err(invalid(format!(
            "interval [{start},{end}] not within the path grid [{},{}]",
            y.offset,
            y.end()
        )));
    }
    if !(alpha >= 0.0) {
        return Err(invalid(format!("Sobolev order must be >= 0, got {alpha}")));
    }
    let n = y.n_modes();
    let w = sobolev_weights(n, alpha);
    let lo = start - y.offset;
    let hi = end - y.offset;
    let fields = &y.fields[lo..=hi];
    let c0 = fields
        .iter()
        .map(|f| weighted_sq(f.coeffs(), &w).sqrt())
        .fold(0.0, f64::max);
    let m = fields.len();
    let dt = y.dt;
    let decay: Vec<f64> = (0..m)
        .flat_map(|j| (1..=n).map(move |i| (-eigenvalue(i) * j as f64 * dt).exp()))
        .collect();
    let inv: Vec<f64> = (0..m).map(|j| if j == 0 { 0.0 } else { (j as f64 * dt).powf(-kappa) }).collect();
    let (holder, hat_holder) = (0..m)
        .into_par_iter()
        .map(|a| {
            let ya = fields[a].coeffs();
            let mut hold = 0.0f64;
            let mut hat = 0.0f64;
            for (b, fb) in fields.iter().enumerate().skip(a + 1) {
                let yb = fb.coeffs();
                let e = &decay[(b - a) * n..(b - a + 1) * n];
                let mut d1 = 0.0;
                let mut d2 = 0.0;
                for i in 0..n {
                    let diff = yb[i] - ya[i];
                    let hdiff = yb[i] - e[i] * ya[i];
                    d1 += w[i] * diff * diff;
                    d2 += w[i] * hdiff * hdiff;
                }
                hold = hold.max(d1.sqrt() * inv[b - a]);
                hat = hat.max(d2.sqrt() * inv[b - a]);
            }
            (hold, hat)
        })
        .reduce(|| (0.0, 0.0), |p, q| (p.0.max(q.0), p.1.max(q.1)));
    Ok(PathNorms {
        c0,
        holder,
        hat_holder,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn closed_form_integral() {
        let m = 4096;
        let dt = 1.0 / m as f64;
        let e1 = SpectralField::basis(4, 1).unwrap();
        let z = FieldPath::constant(&e1, dt, m);
        let x = DriverPath::from_fn(m, 1.0, 1, |_, t| t).unwrap();
        let p: Vec<usize> = (0..=m).collect();
        let v = conv_riemann_sum(std::slice::from_ref(&z), &x, 0, m, &p).unwrap();
        let exact = (1.0 - (-PI * PI).exp()) / (PI * PI);
        assert!((v.coeffs()[0] - exact).abs() < 1e-3);
        assert!(v.coeffs()[1..].iter().all(|c| *c == 0.0));

        let flat = DriverPath::zero(m, 1.0, 1);
        let zero = conv_riemann_sum(std::slice::from_ref(&z), &flat, 0, m, &p).unwrap();
        assert_eq!(zero.l2_norm(), 0.0);

        let tol = 1e-2;
        let ci = conv_integral(std::slice::from_ref(&z), &x, 0, m, tol).unwrap();
        assert!(ci.converged);
        assert!((ci.value.coeffs()[0] - exact).abs() <= tol * exact);
    }

    #[test]
    fn partition_errors() {
        let z = FieldPath::constant(&SpectralField::zeros(2), 0.25, 4);
        let x = DriverPath::zero(4, 1.0, 1);
        assert!(conv_riemann_sum(std::slice::from_ref(&z), &x, 0, 4, &[0, 2]).is_err());
        assert!(conv_riemann_sum(std::slice::from_ref(&z), &x, 0, 4, &[0, 3, 2, 4]).is_err());
        assert!(conv_riemann_sum(std::slice::from_ref(&z), &x, 0, 4, &[0, 4]).is_ok());
    }

    #[test]
    fn uniform_partitions() {
        assert_eq!(uniform_partition(0, 8, 4), vec![0, 2, 4, 6, 8]);
        assert_eq!(uniform_partition(3, 6, 8), vec![3, 4, 5, 6]);
        let p = uniform_partition(0, 10, 4);
        assert_eq!(p.first(), Some(&0));
        assert_eq!(p.last(), Some(&10));
    }

    #[test]
    fn norms_of_special_paths() {
        let mut c = vec![0.0; 8];
        c[0] = 1.0;
        c[2] = -0.3;
        let phi = SpectralField::new(c).unwrap();
        let orbit = FieldPath::semigroup_orbit(&phi, 1.0 / 64.0, 64);
        let n = path_norms(&orbit, 0, 64, 0.45, 0.5).unwrap();
        assert!(n.hat_holder < 1e-12 * n.c0.max(1.0), "{}", n.hat_holder);
        let cst = FieldPath::constant(&phi, 1.0 / 64.0, 64);
        let n = path_norms(&cst, 0, 64, 0.45, 1.0).unwrap();
        assert_eq!(n.holder, 0.0);
        assert!((n.c0 - phi.sobolev_norm(1.0).unwrap()).abs() < 1e-12);
    }
}
