use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("evaluation failed: {0}")]
    Eval(String),
    #[error("singular linear system in {0}")]
    Singular(String),
    #[error("unknown input `{0}`")]
    UnknownInput(String),
    #[error("non-finite value in component {0}")]
    NonFinite(usize),
    #[error("nonlinear solve for {0} did not converge")]
    NoConvergence(String),
}

/// A held input changed at a fixed time.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub input: String,
    pub value: f64,
}

/// Right-hand side `M y' = F(t, y)` with a diagonal 0/1 mass matrix.
pub trait OdeModel {
    fn dim(&self) -> usize;

    fn state_names(&self) -> Vec<String>;

    /// `None` for an identity mass matrix; otherwise `true` marks a
    /// differential row and `false` an algebraic row (`M_ii = 0`).
    fn differential_mask(&self) -> Option<Vec<bool>> {
        None
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<(), ModelError>;

    /// Dense `∂F/∂y`. The default uses forward differences.
    fn jacobian(&mut self, t: f64, y: &[f64], jac: &mut DMatrix<f64>) -> Result<(), ModelError> {
        fd_jacobian(self, t, y, jac)
    }

    fn is_autonomous(&self) -> bool {
        false
    }

    /// `∂F/∂t`. The default uses a forward difference in `t`.
    fn time_partial(&mut self, t: f64, y: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        let n = self.dim();
        let mut f0 = vec![0.0; n];
        self.rhs(t, y, &mut f0)?;
        let h = f64::EPSILON.sqrt() * t.abs().max(1.0);
        self.rhs(t + h, y, out)?;
        for i in 0..n {
            out[i] = (out[i] - f0[i]) / h;
        }
        Ok(())
    }

    fn apply_event(&mut self, event: &Event) -> Result<(), ModelError> {
        Err(ModelError::UnknownInput(event.input.clone()))
    }
}

pub fn fd_jacobian<M: OdeModel + ?Sized>(
    model: &mut M,
    t: f64,
    y: &[f64],
    jac: &mut DMatrix<f64>,
) -> Result<(), ModelError> {
    let n = model.dim();
    let mut f0 = vec![0.0; n];
    let mut f1 = vec![0.0; n];
    model.rhs(t, y, &mut f0)?;
    let mut yp = y.to_vec();
    for j in 0..n {
        let h = f64::EPSILON.sqrt() * y[j].abs().max(1.0);
        yp[j] = y[j] + h;
        model.rhs(t, &yp, &mut f1)?;
        yp[j] = y[j];
        for i in 0..n {
            jac[(i, j)] = (f1[i] - f0[i]) / h;
        }
    }
    Ok(())
}
