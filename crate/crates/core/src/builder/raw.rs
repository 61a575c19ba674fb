use crate::dae::SemiExplicitDae;
use crate::devices::{emit_raw_equations, RawContext};
use crate::structural::{detect_topological_index2, structural_index_report, CircuitGraph, Finding, IndexReport};

use super::{BuildError, NetworkCase};

/// Flat MNA system together with the circuit graph it was built from.
#[derive(Clone, Debug)]
pub struct RawSystem {
    pub sys: SemiExplicitDae,
    pub circuit: CircuitGraph,
}

impl RawSystem {
    pub fn index_report(&self) -> IndexReport {
        structural_index_report(&self.sys)
    }

    pub fn findings(&self) -> Vec<Finding> {
        detect_topological_index2(&self.circuit)
    }
}

/// Raw formulation: bus voltages first, then device variables in
/// instantiation order.
pub fn assemble_raw(case: &NetworkCase) -> Result<RawSystem, BuildError> {
    case.validate()?;
    let mut ctx = RawContext::new(case.omega0);
    for b in &case.buses {
        ctx.add_bus(&b.name, case.shunt(&b.name))?;
    }
    for d in &case.devices {
        emit_raw_equations(d, &mut ctx)?;
    }
    let (sys, circuit) = ctx.finish()?;
    Ok(RawSystem { sys, circuit })
}
