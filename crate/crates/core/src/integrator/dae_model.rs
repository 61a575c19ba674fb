use nalgebra::DMatrix;

use super::model::{Event, ModelError, OdeModel};
use crate::dae::{CompiledDae, DaeError, EvaluationWorkspace, SemiExplicitDae};

/// Mass-matrix view `diag(I, 0) y' = [f; g]` of a semi-explicit DAE with
/// `y = [x; z]`. Only meaningful for the integrator when `g_z` is
/// nonsingular.
pub struct DaeModel {
    pub dae: CompiledDae,
    ws: EvaluationWorkspace,
    full: DMatrix<f64>,
}

fn convert(e: DaeError) -> ModelError {
    match e {
        DaeError::NonFinite { equation, .. } => ModelError::NonFinite(equation),
        other => ModelError::Eval(other.to_string()),
    }
}

impl DaeModel {
    pub fn new(sys: &mut SemiExplicitDae) -> Self {
        Self::from_compiled(CompiledDae::new(sys))
    }

    pub fn from_compiled(dae: CompiledDae) -> Self {
        let ws = dae.workspace();
        let n = dae.n_diff() + dae.n_alg();
        DaeModel { dae, ws, full: DMatrix::zeros(n, n) }
    }

    /// Newton on `g(t, x, z) = 0` for `z` with `x` held; returns `[x; z]`.
    pub fn consistent_state(&mut self, t: f64, x: &[f64], z_guess: &[f64]) -> Result<Vec<f64>, ModelError> {
        let (n, m) = (self.dae.n_diff(), self.dae.n_alg());
        let mut y: Vec<f64> = x.iter().chain(z_guess).copied().collect();
        let mut r = vec![0.0; n + m];
        for _ in 0..50 {
            self.rhs(t, &y, &mut r)?;
            let g = nalgebra::DVector::from_column_slice(&r[n..]);
            if g.amax() <= 1e-13 * (1.0 + y[n..].iter().fold(0.0f64, |a, v| a.max(v.abs()))) {
                return Ok(y);
            }
            let mut jac = DMatrix::zeros(n + m, n + m);
            self.jacobian(t, &y, &mut jac)?;
            let gz = jac.view((n, n), (m, m)).into_owned();
            let dz = gz.lu().solve(&g).ok_or_else(|| ModelError::Singular("g_z".into()))?;
            for k in 0..m {
                y[n + k] -= dz[k];
            }
        }
        Err(ModelError::NoConvergence("consistent algebraic values".into()))
    }

    fn split<'a>(&self, y: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        y.split_at(self.dae.n_diff())
    }
}

impl OdeModel for DaeModel {
    fn dim(&self) -> usize {
        self.dae.n_diff() + self.dae.n_alg()
    }

    fn state_names(&self) -> Vec<String> {
        self.dae.column_names().to_vec()
    }

    fn differential_mask(&self) -> Option<Vec<bool>> {
        Some((0..self.dim()).map(|k| k < self.dae.n_diff()).collect())
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), ModelError> {
        let (x, z) = self.split(y);
        self.dae.rhs(t, x, z, &mut self.ws, dy).map_err(convert)
    }

    fn jacobian(&mut self, t: f64, y: &[f64], jac: &mut DMatrix<f64>) -> Result<(), ModelError> {
        let (x, z) = self.split(y);
        self.dae.jacobian_into(t, x, z, &mut self.ws, &mut self.full).map_err(convert)?;
        jac.copy_from(&self.full);
        Ok(())
    }

    fn is_autonomous(&self) -> bool {
        !self.dae.depends_on_time()
    }

    fn time_partial(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        let (x, z) = self.split(y);
        self.dae.time_partial(t, x, z, &mut self.ws, out).map_err(convert)
    }

    fn apply_event(&mut self, event: &Event) -> Result<(), ModelError> {
        if self.dae.set_input_named(&event.input, event.value) {
            Ok(())
        } else {
            Err(ModelError::UnknownInput(event.input.clone()))
        }
    }
}
