//! Matérn (ν = 1) Gaussian Markov random fields on regular lattices, built
//! from a finite-difference discretisation of `(κ² − Δ) w = noise`, and their
//! penalised-complexity hyperpriors.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geodata::{DomainMask, GridGeometry};
use crate::rng;
use crate::sparse::{grid_nested_dissection, CholeskyFactor, Ordering, SymbolicCholesky, SymmetricCsc};

/// Smoothness of the SPDE operator; fixed.
pub const ALPHA: f64 = 2.0;

/// Marginal sd and practical range of the latent field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternHyper {
    pub sigma: f64,
    pub rho: f64,
}

impl MaternHyper {
    pub fn new(sigma: f64, rho: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite() && rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "Matérn hyperparameters must be positive (sigma = {sigma}, rho = {rho})"
            )));
        }
        Ok(Self { sigma, rho })
    }

    pub fn alpha(&self) -> f64 {
        ALPHA
    }

    /// `κ = √(8ν)/ρ` with `ν = 1`.
    pub fn kappa(&self) -> f64 {
        8f64.sqrt() / self.rho
    }
}

/// Matérn correlation with `ν = 1` at distance `h`: `κh·K₁(κh)`.
pub fn matern_correlation(h: f64, rho: f64) -> f64 {
    if h <= 0.0 {
        return 1.0;
    }
    let x = 8f64.sqrt() / rho * h;
    x * bessel_k1(x)
}

// Modified Bessel function K₁, polynomial approximations (Abramowitz & Stegun 9.8.7-9.8.8).
fn bessel_k1(x: f64) -> f64 {
    if x <= 2.0 {
        let t = x / 3.75;
        let t2 = t * t;
        let i1 = x
            * (0.5
                + t2 * (0.87890594
                    + t2 * (0.51498869 + t2 * (0.15084934 + t2 * (0.02658733 + t2 * (0.00301532 + t2 * 0.00032411))))));
        let y = x * x / 4.0;
        (x / 2.0).ln() * i1
            + (1.0 / x)
                * (1.0
                    + y * (0.15443144
                        + y * (-0.67278579 + y * (-0.18156897 + y * (-0.01919402 + y * (-0.00110404 + y * (-0.00004686)))))))
    } else {
        let y = 2.0 / x;
        ((-x).exp() / x.sqrt())
            * (1.25331414
                + y * (0.23498619
                    + y * (-0.03655620 + y * (0.01504268 + y * (-0.00780353 + y * (0.00325614 + y * (-0.00068245)))))))
    }
}

/// Tail statements defining the PC priors: `P(ρ < rho0) = p_rho` and
/// `P(σ > sigma0) = p_sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcPriorSpec {
    pub rho0: f64,
    pub p_rho: f64,
    pub sigma0: f64,
    pub p_sigma: f64,
}

impl Default for PcPriorSpec {
    fn default() -> Self {
        Self {
            rho0: 50.0,
            p_rho: 0.5,
            sigma0: 0.5,
            p_sigma: 0.01,
        }
    }
}

impl PcPriorSpec {
    pub fn new(rho0: f64, p_rho: f64, sigma0: f64, p_sigma: f64) -> Result<Self> {
        let prob = |p: f64| p > 0.0 && p < 1.0;
        if !(rho0 > 0.0 && sigma0 > 0.0 && prob(p_rho) && prob(p_sigma)) {
            return Err(Error::InvalidInput(format!(
                "invalid PC prior: rho0 = {rho0}, p_rho = {p_rho}, sigma0 = {sigma0}, p_sigma = {p_sigma}"
            )));
        }
        Ok(Self {
            rho0,
            p_rho,
            sigma0,
            p_sigma,
        })
    }

    /// Rate of the range prior in two dimensions.
    pub fn lambda_rho(&self) -> f64 {
        -self.p_rho.ln() * self.rho0
    }

    pub fn lambda_sigma(&self) -> f64 {
        -self.p_sigma.ln() / self.sigma0
    }

    /// `log π(ρ) = log λ − 2 log ρ − λ/ρ`
    pub fn log_density_rho(&self, rho: f64) -> f64 {
        let l = self.lambda_rho();
        l.ln() - 2.0 * rho.ln() - l / rho
    }

    /// `log π(σ) = log λ − λσ`
    pub fn log_density_sigma(&self, sigma: f64) -> f64 {
        let l = self.lambda_sigma();
        l.ln() - l * sigma
    }

    pub fn prob_rho_below(&self, r: f64) -> f64 {
        (-self.lambda_rho() / r).exp()
    }

    pub fn prob_sigma_above(&self, s: f64) -> f64 {
        (-self.lambda_sigma() * s).exp()
    }
}

/// Joint PC-prior log density of `(σ, ρ)`.
pub fn pc_prior_logdensity(hyper: &MaternHyper, spec: &PcPriorSpec) -> f64 {
    spec.log_density_rho(hyper.rho) + spec.log_density_sigma(hyper.sigma)
}

/// Variance of the unit-scaled lattice field `(κ²I + L)⁻²` on an infinite
/// lattice with spacings `dx`, `dy`:
/// `(1/2π) ∫ (A + B/2) / (A(A+B))^{3/2} dθ`, `A = κ² + (4/dx²)sin²(θ/2)`, `B = 4/dy²`.
pub fn lattice_variance(kappa: f64, dx: f64, dy: f64) -> f64 {
    let k2 = kappa * kappa;
    let b = 4.0 / (dy * dy);
    let f = |t: f64| {
        let a = k2 + 4.0 / (dx * dx) * (t / 2.0).sin().powi(2);
        (a + b / 2.0) / (a * (a + b)).powf(1.5)
    };
    // periodic trapezoid rule, refined until it settles
    let mut n = 64usize;
    let mut prev = (0..n).map(|k| f(2.0 * PI * k as f64 / n as f64)).sum::<f64>() / n as f64;
    loop {
        let odd: f64 = (0..n).map(|k| f(2.0 * PI * (k as f64 + 0.5) / n as f64)).sum();
        let next = 0.5 * prev + odd / (2 * n) as f64;
        n *= 2;
        if (next - prev).abs() <= 1e-14 * next || n >= 1 << 24 {
            return next;
        }
        prev = next;
    }
}

/// Regular lattice carrying the SPDE discretisation: the covariate grid plus a
/// halo of `halo` cells on every side (Neumann boundary on the outer edge).
///
/// Node `(ix, iy)` has index `iy * nx + ix`, with `iy = 0` on the north edge.
#[derive(Debug)]
pub struct SpdeMesh {
    pub geometry: GridGeometry,
    pub halo: usize,
    pub nx: usize,
    pub ny: usize,
    pattern: SymmetricCsc,
    identity_part: Vec<f64>,
    laplacian_part: Vec<f64>,
    biharmonic_part: Vec<f64>,
    laplacian_eigenvalues: Vec<f64>,
    symbolic: Arc<SymbolicCholesky>,
}

impl SpdeMesh {
    pub fn new(geometry: GridGeometry, halo: usize) -> Arc<Self> {
        let nx = geometry.n_cols + 2 * halo;
        let ny = geometry.n_rows + 2 * halo;
        let n = nx * ny;
        let (wx, wy) = (1.0 / geometry.cell_dx.powi(2), 1.0 / geometry.cell_dy.powi(2));

        let mut lap: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(5); n];
        for iy in 0..ny {
            for ix in 0..nx {
                let i = iy * nx + ix;
                let mut diag = 0.0;
                let mut link = |j: usize, w: f64, row: &mut Vec<(usize, f64)>| {
                    row.push((j, -w));
                    diag += w;
                };
                let row = &mut lap[i];
                if ix > 0 {
                    link(i - 1, wx, row);
                }
                if ix + 1 < nx {
                    link(i + 1, wx, row);
                }
                if iy > 0 {
                    link(i - nx, wy, row);
                }
                if iy + 1 < ny {
                    link(i + nx, wy, row);
                }
                row.push((i, diag));
            }
        }

        let mut triplets = Vec::with_capacity(7 * n);
        let mut biharmonic = Vec::with_capacity(7 * n);
        let mut acc = vec![0.0; n];
        let mut touched = Vec::new();
        for i in 0..n {
            for &(k, lik) in &lap[i] {
                for &(j, lkj) in &lap[k] {
                    if j <= i {
                        if acc[j] == 0.0 {
                            touched.push(j);
                        }
                        acc[j] += lik * lkj;
                    }
                }
            }
            for &j in &touched {
                triplets.push((i, j, 0.0));
                biharmonic.push((i, j, acc[j]));
                acc[j] = 0.0;
            }
            touched.clear();
        }
        let pattern = SymmetricCsc::from_triplets(n, &triplets);
        let nnz = pattern.nnz();
        let mut identity_part = vec![0.0; nnz];
        let mut laplacian_part = vec![0.0; nnz];
        let mut biharmonic_part = vec![0.0; nnz];
        for (i, j, v) in biharmonic {
            biharmonic_part[pattern.slot(i, j).expect("pattern")] += v;
        }
        for (i, row) in lap.iter().enumerate() {
            identity_part[pattern.slot(i, i).expect("pattern")] = 1.0;
            for &(j, v) in row {
                if j <= i {
                    laplacian_part[pattern.slot(i, j).expect("pattern")] = v;
                }
            }
        }

        let path = |m: usize, w: f64| -> Vec<f64> {
            (0..m).map(|k| 4.0 * w * (PI * k as f64 / (2 * m) as f64).sin().powi(2)).collect()
        };
        let ex = path(nx, wx);
        let ey = path(ny, wy);
        let laplacian_eigenvalues = ey.iter().flat_map(|&b| ex.iter().map(move |&a| a + b)).collect();

        let symbolic = SymbolicCholesky::analyze(&pattern, Ordering::Custom(grid_nested_dissection(nx, ny, 2)));
        Arc::new(Self {
            geometry,
            halo,
            nx,
            ny,
            pattern,
            identity_part,
            laplacian_part,
            biharmonic_part,
            laplacian_eigenvalues,
            symbolic,
        })
    }

    /// Mesh whose halo is one range `rho` wide, capped at the grid's larger side.
    pub fn for_range(geometry: GridGeometry, rho: f64) -> Arc<Self> {
        let cell = geometry.cell_dx.min(geometry.cell_dy);
        let cap = geometry.n_rows.max(geometry.n_cols);
        let halo = ((rho / cell).ceil() as usize).clamp(1, cap);
        Self::new(geometry, halo)
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_of_cell(&self, cell: usize) -> usize {
        let (row, col) = self.geometry.row_col(cell);
        (row + self.halo) * self.nx + col + self.halo
    }

    /// Sparsity pattern shared by every precision on this mesh (values zero).
    pub fn pattern(&self) -> &SymmetricCsc {
        &self.pattern
    }

    /// Symbolic factorization of the precision pattern.
    pub fn symbolic(&self) -> &Arc<SymbolicCholesky> {
        &self.symbolic
    }

    /// Scale `c` in `Q = c (κ²I + L)²` giving stationary marginal variance `σ²`.
    pub fn precision_scale(&self, hyper: &MaternHyper) -> f64 {
        lattice_variance(hyper.kappa(), self.geometry.cell_dx, self.geometry.cell_dy) / hyper.sigma.powi(2)
    }

    /// Precision values aligned with [`pattern`](Self::pattern).
    pub fn precision_values(&self, hyper: &MaternHyper) -> Vec<f64> {
        let c = self.precision_scale(hyper);
        let k2 = hyper.kappa().powi(2);
        let (a, b) = (c * k2 * k2, 2.0 * c * k2);
        self.identity_part
            .iter()
            .zip(&self.laplacian_part)
            .zip(&self.biharmonic_part)
            .map(|((i, l), l2)| a * i + b * l + c * l2)
            .collect()
    }

    pub fn precision(&self, hyper: &MaternHyper) -> SymmetricCsc {
        let mut q = self.pattern.clone();
        q.values_mut().copy_from_slice(&self.precision_values(hyper));
        q
    }

    /// `log |Q|` from the closed-form spectrum of the Neumann Laplacian.
    pub fn log_det(&self, hyper: &MaternHyper) -> f64 {
        let k2 = hyper.kappa().powi(2);
        let n = self.n_nodes() as f64;
        n * self.precision_scale(hyper).ln() + 2.0 * self.laplacian_eigenvalues.iter().map(|e| (k2 + e).ln()).sum::<f64>()
    }
}

/// Precision matrix of the lattice field together with its mesh.
#[derive(Debug, Clone)]
pub struct SparsePrecision {
    pub mesh: Arc<SpdeMesh>,
    pub hyper: MaternHyper,
    pub matrix: SymmetricCsc,
}

impl SparsePrecision {
    pub fn on_mesh(mesh: Arc<SpdeMesh>, hyper: MaternHyper) -> Self {
        let matrix = mesh.precision(&hyper);
        Self { mesh, hyper, matrix }
    }

    pub fn dimension(&self) -> usize {
        self.matrix.dim()
    }

    /// All nonzeros, both triangles.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(2 * self.matrix.nnz());
        for (i, j, v) in self.matrix.triplets() {
            out.push((i, j, v));
            if i != j {
                out.push((j, i, v));
            }
        }
        out
    }

    pub fn log_det(&self) -> f64 {
        self.mesh.log_det(&self.hyper)
    }

    pub fn factor(&self) -> Result<CholeskyFactor> {
        self.mesh.symbolic().factor(&self.matrix, "SPDE precision")
    }

    /// `log p(w)` for the zero-mean field.
    pub fn log_density(&self, w: &[f64]) -> f64 {
        let n = self.dimension() as f64;
        0.5 * self.log_det() - 0.5 * self.matrix.quad_form(w) - 0.5 * n * (2.0 * PI).ln()
    }

    /// Field values at grid cells.
    pub fn at_cells(&self, w: &[f64], cells: &[usize]) -> Vec<f64> {
        cells.iter().map(|&c| w[self.mesh.node_of_cell(c)]).collect()
    }
}

/// Precision of the field over `grid`'s lattice, extended by a halo one range wide.
pub fn build_precision(grid: &DomainMask, hyper: MaternHyper) -> Result<SparsePrecision> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("cannot build a field over an empty domain".into()));
    }
    MaternHyper::new(hyper.sigma, hyper.rho)?;
    Ok(SparsePrecision::on_mesh(SpdeMesh::for_range(grid.geometry, hyper.rho), hyper))
}

/// One zero-mean draw with the given precision, at every mesh node.
pub fn sample_field(precision: &SparsePrecision, rng_seed: u64) -> Result<Vec<f64>> {
    Ok(sample_fields(precision, rng_seed, 1)?.pop().unwrap())
}

/// `count` independent draws sharing one factorization.
pub fn sample_fields(precision: &SparsePrecision, rng_seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
    let factor = precision.factor()?;
    let n = precision.dimension();
    let mut rng = rng::stream(rng_seed, &[]);
    let z: Vec<f64> = (0..n * count).map(|_| rng.sample(StandardNormal)).collect();
    let x = factor.sample_transform_many(&z, count);
    Ok(x.chunks(n).map(<[f64]>::to_vec).collect())
}
