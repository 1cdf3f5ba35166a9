//! Primal-dual interior-point solver for the Dantzig-selector linear program.
//!
//! With `G = XᵀX`, `c = Xᵀy` and `β = u − v`, the program
//!
//! ```text
//! minimize   1ᵀu + 1ᵀv
//! subject to  G(u − v) + s₁ = c + λ
//!            −G(u − v) + s₂ = λ − c
//!             u, v, s₁, s₂ ≥ 0
//! ```
//!
//! is solved with Mehrotra's predictor-corrector method. The constraint
//! matrix is never formed; the normal-equation matrix `A D Aᵀ` is assembled
//! from the `p × p` block `G diag(d_u + d_v) G`.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{QivError, Result};

const MAX_ITER: usize = 200;
const STEP_DAMPING: f64 = 0.995;

/// Primal solution and convergence certificate.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub beta: DVector<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
}

struct Problem<'a> {
    g: &'a DMatrix<f64>,
    b1: DVector<f64>,
    b2: DVector<f64>,
}

/// Primal variables `(u, v, s₁, s₂)` or reduced costs stacked the same way.
#[derive(Clone)]
struct Blocks {
    u: DVector<f64>,
    v: DVector<f64>,
    s1: DVector<f64>,
    s2: DVector<f64>,
}

impl Blocks {
    fn filled(p: usize, x: f64) -> Self {
        let f = DVector::from_element(p, x);
        Self { u: f.clone(), v: f.clone(), s1: f.clone(), s2: f }
    }

    fn parts(&self) -> [&DVector<f64>; 4] {
        [&self.u, &self.v, &self.s1, &self.s2]
    }

    fn map2(&self, other: &Blocks, f: impl Fn(f64, f64) -> f64 + Copy) -> Blocks {
        let z = |a: &DVector<f64>, b: &DVector<f64>| a.zip_map(b, f);
        Blocks {
            u: z(&self.u, &other.u),
            v: z(&self.v, &other.v),
            s1: z(&self.s1, &other.s1),
            s2: z(&self.s2, &other.s2),
        }
    }

    fn axpy(&mut self, a: f64, other: &Blocks) {
        self.u.axpy(a, &other.u, 1.0);
        self.v.axpy(a, &other.v, 1.0);
        self.s1.axpy(a, &other.s1, 1.0);
        self.s2.axpy(a, &other.s2, 1.0);
    }

    fn dot(&self, other: &Blocks) -> f64 {
        self.u.dot(&other.u) + self.v.dot(&other.v) + self.s1.dot(&other.s1) + self.s2.dot(&other.s2)
    }

    fn sum(&self) -> f64 {
        self.parts().iter().map(|b| b.sum()).sum()
    }

    fn min(&self) -> f64 {
        self.parts().iter().map(|b| b.min()).fold(f64::INFINITY, f64::min)
    }

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn len(&self) -> usize {
        4 * self.u.len()
    }

    fn add_scalar(&mut self, a: f64) {
        for b in [&mut self.u, &mut self.v, &mut self.s1, &mut self.s2] {
            b.add_scalar_mut(a);
        }
    }
}

impl Problem<'_> {
    fn p(&self) -> usize {
        self.g.nrows()
    }

    /// `A x`.
    fn apply(&self, x: &Blocks) -> (DVector<f64>, DVector<f64>) {
        let gb = self.g * (&x.u - &x.v);
        (&gb + &x.s1, -gb + &x.s2)
    }

    /// `Aᵀ y`.
    fn apply_t(&self, y1: &DVector<f64>, y2: &DVector<f64>) -> Blocks {
        let gw = self.g * (y1 - y2);
        Blocks { u: gw.clone(), v: -gw, s1: y1.clone(), s2: y2.clone() }
    }

    fn cost(&self) -> Blocks {
        let p = self.p();
        Blocks {
            u: DVector::from_element(p, 1.0),
            v: DVector::from_element(p, 1.0),
            s1: DVector::zeros(p),
            s2: DVector::zeros(p),
        }
    }

    /// Factor of `A diag(d) Aᵀ`.
    fn normal_matrix(&self, d: &Blocks) -> Option<NormalFactor> {
        let p = self.p();
        let duv = &d.u + &d.v;
        let mut gd = self.g.clone();
        for (j, mut col) in gd.column_iter_mut().enumerate() {
            col *= duv[j];
        }
        let h = &gd * self.g;
        let mut m = DMatrix::zeros(2 * p, 2 * p);
        m.view_mut((0, 0), (p, p)).copy_from(&h);
        m.view_mut((p, p), (p, p)).copy_from(&h);
        m.view_mut((0, p), (p, p)).copy_from(&(-&h));
        m.view_mut((p, 0), (p, p)).copy_from(&(-&h));
        for i in 0..p {
            m[(i, i)] += d.s1[i];
            m[(p + i, p + i)] += d.s2[i];
        }
        NormalFactor::new(m)
    }
}

/// Cholesky factor of a Jacobi-scaled normal matrix, kept with the original
/// for one step of iterative refinement.
struct NormalFactor {
    matrix: DMatrix<f64>,
    scale: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl NormalFactor {
    fn new(matrix: DMatrix<f64>) -> Option<Self> {
        let k = matrix.nrows();
        let scale = matrix.diagonal().map(|v| 1.0 / v.max(1e-300).sqrt());
        let scaled = DMatrix::from_fn(k, k, |i, j| matrix[(i, j)] * scale[i] * scale[j]);
        for reg in [1e-14, 1e-12, 1e-10, 1e-8] {
            let mut m = scaled.clone();
            for i in 0..k {
                m[(i, i)] += reg;
            }
            if let Some(chol) = Cholesky::new(m) {
                return Some(Self { matrix, scale, chol });
            }
        }
        None
    }

    fn solve_scaled(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let r = rhs.component_mul(&self.scale);
        self.chol.solve(&r).component_mul(&self.scale)
    }

    fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = r1.len();
        let mut rhs = DVector::zeros(2 * p);
        rhs.rows_mut(0, p).copy_from(r1);
        rhs.rows_mut(p, p).copy_from(r2);
        let mut sol = self.solve_scaled(&rhs);
        let resid = &rhs - &self.matrix * &sol;
        sol += self.solve_scaled(&resid);
        (sol.rows(0, p).clone_owned(), sol.rows(p, p).clone_owned())
    }
}

fn max_step(x: &Blocks, dx: &Blocks) -> f64 {
    let mut alpha = 1.0_f64;
    for (xb, db) in x.parts().iter().zip(dx.parts()) {
        for (xi, di) in xb.iter().zip(db.iter()) {
            if *di < 0.0 {
                alpha = alpha.min(-xi / di);
            }
        }
    }
    alpha
}

/// Solves the Dantzig program `min ‖β‖₁ s.t. ‖c − Gβ‖∞ ≤ λ`.
///
/// Stops once primal and dual residuals and the duality gap, each relative
/// to `1 + ` the size of the corresponding quantity, fall below `tol`.
pub fn solve_dantzig(g: &DMatrix<f64>, c: &DVector<f64>, lambda: f64, tol: f64) -> Result<LpSolution> {
    let p = g.nrows();
    let prob = Problem {
        g,
        b1: c.add_scalar(lambda),
        b2: (-c).add_scalar(lambda),
    };
    let cost = prob.cost();
    let b_norm = prob.b1.amax().max(prob.b2.amax());
    let c_norm = cost.norm();

    // Mehrotra's starting point.
    let ones = Blocks::filled(p, 1.0);
    let chol = prob.normal_matrix(&ones).ok_or(QivError::SolverDidNotConverge(0))?;
    let (ay1, ay2) = chol.solve(&prob.b1, &prob.b2);
    let mut x = prob.apply_t(&ay1, &ay2);
    let (ac1, ac2) = prob.apply(&cost);
    let (mut y1, mut y2) = chol.solve(&ac1, &ac2);
    let aty = prob.apply_t(&y1, &y2);
    let mut z = cost.map2(&aty, |a, b| a - b);
    x.add_scalar((-1.5 * x.min()).max(0.0));
    z.add_scalar((-1.5 * z.min()).max(0.0));
    let xz = x.dot(&z);
    let (dx0, dz0) = (0.5 * xz / z.sum().max(1e-300), 0.5 * xz / x.sum().max(1e-300));
    x.add_scalar(dx0.max(1e-8));
    z.add_scalar(dz0.max(1e-8));

    let n_var = x.len() as f64;
    for iter in 0..MAX_ITER {
        let (ax1, ax2) = prob.apply(&x);
        let rb1 = &ax1 - &prob.b1;
        let rb2 = &ax2 - &prob.b2;
        let aty = prob.apply_t(&y1, &y2);
        let rc = {
            let mut r = aty.map2(&z, |a, b| a + b);
            r.axpy(-1.0, &cost);
            r
        };
        let primal_obj = cost.dot(&x);
        let dual_obj = prob.b1.dot(&y1) + prob.b2.dot(&y2);
        let mu = x.dot(&z) / n_var;
        let rb_rel = rb1.amax().max(rb2.amax()) / (1.0 + b_norm);
        let rc_rel = rc.norm() / (1.0 + c_norm);
        let gap_rel = (primal_obj - dual_obj).abs() / (1.0 + primal_obj.abs());
        if rb_rel <= tol && rc_rel <= tol && gap_rel <= tol {
            return Ok(LpSolution {
                beta: &x.u - &x.v,
                objective: primal_obj,
                dual_objective: dual_obj,
                iterations: iter,
            });
        }

        let d = x.map2(&z, |a, b| a / b);
        let chol = prob
            .normal_matrix(&d)
            .ok_or(QivError::SolverDidNotConverge(iter))?;

        // Direction for the complementarity right-hand side `r_xz`:
        //   (A D Aᵀ) Δy = −r_b + A Z⁻¹ r_xz − A D r_c
        let direction = |rxz: &Blocks| -> (Blocks, DVector<f64>, DVector<f64>, Blocks) {
            let zinv_rxz = rxz.map2(&z, |a, b| a / b);
            let d_rc = d.map2(&rc, |a, b| a * b);
            let (a1, a2) = prob.apply(&zinv_rxz);
            let (e1, e2) = prob.apply(&d_rc);
            let r1 = -&rb1 + a1 - e1;
            let r2 = -&rb2 + a2 - e2;
            let (dy1, dy2) = chol.solve(&r1, &r2);
            let at_dy = prob.apply_t(&dy1, &dy2);
            let dz = rc.map2(&at_dy, |a, b| -a - b);
            // Δx = −Z⁻¹ r_xz − D Δz
            let dx = zinv_rxz.map2(&d.map2(&dz, |a, b| a * b), |a, b| -a - b);
            (dx, dy1, dy2, dz)
        };

        let rxz_aff = x.map2(&z, |a, b| a * b);
        let (dx_aff, _, _, dz_aff) = direction(&rxz_aff);
        let ap = max_step(&x, &dx_aff);
        let ad = max_step(&z, &dz_aff);
        let mut x_aff = x.clone();
        x_aff.axpy(ap, &dx_aff);
        let mut z_aff = z.clone();
        z_aff.axpy(ad, &dz_aff);
        let mu_aff = x_aff.dot(&z_aff) / n_var;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        let mut rxz = dx_aff.map2(&dz_aff, |a, b| a * b);
        rxz.axpy(1.0, &rxz_aff);
        rxz.add_scalar(-sigma * mu);
        let (dx, dy1, dy2, dz) = direction(&rxz);
        let ap = (STEP_DAMPING * max_step(&x, &dx)).min(1.0);
        let ad = (STEP_DAMPING * max_step(&z, &dz)).min(1.0);
        x.axpy(ap, &dx);
        y1.axpy(ad, &dy1, 1.0);
        y2.axpy(ad, &dy2, 1.0);
        z.axpy(ad, &dz);
    }
    Err(QivError::SolverDidNotConverge(MAX_ITER))
}
