use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emtdq::analysis::{eigen_diff, eigenvalues, state_matrix_ode, SampledTrajectory};
use emtdq::builder::{
    assemble_raw, base_case, builtin, default_s1_transformer, default_s2_machine, s1_case, s2_case, scale_case,
    table_case, ComposedModel, NetworkCase, ScalingSpec,
};
use emtdq::dae::CompiledDae;
use emtdq::devices::{solve_interface_voltages, SauerPaiParams, TransformerParams};
use emtdq::expr::{Node, OpKind};
use emtdq::init::{composed_from_point, initialize};
use emtdq::integrator::OdeModel;
use emtdq::reduction::phase_one;
use emtdq::structural::{blt_sort, maximum_matching, structural_index_report, IndexClass};

#[test]
fn rebuilding_every_node_adds_nothing() {
    let mut raw = assemble_raw(&base_case()).unwrap();
    let roots: Vec<_> = (0..raw.sys.n_eq()).map(|r| raw.sys.equation(r)).collect();
    let g = &mut raw.sys.graph;
    let before = g.node_count();
    let nodes = g.reachable(&roots);
    assert!(nodes.len() > 100);
    for id in nodes {
        let (op, kids): (OpKind, Vec<_>) = match g.node(id) {
            Node::Const(bits) => (OpKind::Constant(f64::from_bits(bits)), vec![]),
            Node::Var(v) => (OpKind::Variable(v), vec![]),
            Node::Der(v) => (OpKind::Derivative(v), vec![]),
            Node::Add(a, b) => (OpKind::Add, vec![a, b]),
            Node::Sub(a, b) => (OpKind::Sub, vec![a, b]),
            Node::Mul(a, b) => (OpKind::Mul, vec![a, b]),
            Node::Div(a, b) => (OpKind::Div, vec![a, b]),
            Node::Neg(a) => (OpKind::Neg, vec![a]),
            Node::Sin(a) => (OpKind::Sin, vec![a]),
            Node::Cos(a) => (OpKind::Cos, vec![a]),
            Node::Sqrt(a) => (OpKind::Sqrt, vec![a]),
        };
        assert_eq!(g.add_expression(op, &kids).unwrap(), id);
    }
    assert_eq!(g.node_count(), before);
}

fn structural_pattern_covers_jacobian(name: &str, exact: bool) {
    let mut raw = builtin(name).unwrap().raw().unwrap();
    let inc = raw.sys.incidence();
    let dae = CompiledDae::new(&mut raw.sys);
    let (n, m) = (dae.n_diff(), dae.n_alg());
    let mut ws = dae.workspace();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut seen = vec![vec![false; n + m]; n + m];
    for _ in 0..20 {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let j = dae.jacobian(0.1, &x, &z, &mut ws).unwrap();
        // pure: the same input yields the same bits
        assert_eq!(j, dae.jacobian(0.1, &x, &z, &mut ws).unwrap());
        for r in 0..n + m {
            // the incidence records only the algebraic columns
            for c in n..n + m {
                if j[(r, c)] != 0.0 {
                    assert!(inc.get(r, c), "{name}: numeric nonzero at ({r}, {c}) outside the pattern");
                    seen[r][c] = true;
                }
            }
        }
    }
    if exact {
        for r in 0..n + m {
            for c in n..n + m {
                if inc.get(r, c) {
                    assert!(seen[r][c], "{name}: structural entry ({r}, {c}) never nonzero");
                }
            }
        }
    }
}

#[test]
fn incidence_covers_numeric_jacobian() {
    for name in ["s1", "s2", "fig1-cutset", "rl-ladder"] {
        structural_pattern_covers_jacobian(name, true);
    }
    structural_pattern_covers_jacobian("wscc9", false);
}

#[test]
fn findings_account_for_every_constraint() {
    for name in ["wscc9", "c2", "c3", "s1", "s2", "fig1-cutset", "fig2-loop", "rl-ladder"] {
        let raw = builtin(name).unwrap().raw().unwrap();
        let rep = raw.index_report();
        assert_eq!(2 * raw.findings().len(), rep.q, "{name}");
        assert_eq!(rep.constraint_rows.len(), rep.q, "{name}");
    }
    for name in ["wscc9", "c2", "c3", "c4", "s1", "s2"] {
        let case = builtin(name).unwrap().case().unwrap().clone();
        let d = case.counts();
        assert_eq!(assemble_raw(&case).unwrap().index_report().q, 2 * d.transformers + 2 * d.sgs, "{name}");
    }
}

#[test]
fn blt_blocks_partition_raw_c1() {
    let raw = assemble_raw(&base_case()).unwrap();
    let (reduced, _) = phase_one(raw.sys).unwrap();
    let inc = reduced.incidence();
    let m = maximum_matching(&inc);
    assert!(m.is_perfect());
    let order = blt_sort(&inc, &m).unwrap();
    let (rows, cols) = order.permutation();
    let mut r = rows.clone();
    let mut c = cols.clone();
    r.sort_unstable();
    c.sort_unstable();
    assert_eq!(r, (0..inc.n_rows()).collect::<Vec<_>>());
    assert_eq!(c, (0..inc.n_cols()).collect::<Vec<_>>());
    assert_eq!(order.block_sizes().iter().sum::<usize>(), inc.n_rows());
}

#[test]
fn scaled_cases_are_deterministic() {
    let a = scale_case(&ScalingSpec::new(8));
    let b = scale_case(&ScalingSpec::new(8));
    assert_eq!(a, b);
    let ma = ComposedModel::build(&a).unwrap();
    let mb = ComposedModel::build(&b).unwrap();
    assert_eq!(ma.names, mb.names);
    let ra = assemble_raw(&a).unwrap();
    let rb = assemble_raw(&b).unwrap();
    assert_eq!(ra.sys.diff_names(), rb.sys.diff_names());
    assert_eq!(ra.sys.alg_names(), rb.sys.alg_names());
    let other = scale_case(&ScalingSpec { seed: 7, ..ScalingSpec::new(8) });
    assert_eq!(other.counts(), a.counts());
    assert_eq!(scale_case(&ScalingSpec::new(1)), base_case());
}

#[test]
fn composed_models_have_no_algebraic_variables() {
    for k in 1..=4 {
        let case = table_case(&format!("c{k}")).unwrap();
        let m = ComposedModel::build(&case).unwrap();
        assert!(m.differential_mask().map_or(true, |mask| mask.iter().all(|&d| d)));
        assert_eq!(m.dim(), m.names.len());
    }
}

#[test]
fn spectrum_ignores_device_order() {
    let case = base_case();
    let mut shuffled: NetworkCase = case.clone();
    shuffled.devices.reverse();
    let spectrum = |c: &NetworkCase| {
        let init = initialize(c).unwrap();
        let (mut m, y) = composed_from_point(c, &init.point).unwrap();
        eigenvalues(&state_matrix_ode(&mut m, 0.0, &y).unwrap()).unwrap()
    };
    let d = eigen_diff(&spectrum(&case), &spectrum(&shuffled)).unwrap();
    assert!(d <= 1e-8, "spectral difference {d}");
}

fn transformer_strategy() -> impl Strategy<Value = TransformerParams> {
    (0.01..2.0f64, 0.01..2.0f64, 0.01..2.0f64, 0.0..0.1f64, 0.0..0.1f64, 0.0..0.1f64)
        .prop_map(|(x1, x2, x3, r1, r2, r3)| TransformerParams { r1, x1, r2, x2, r3, x3 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn phase_one_bookkeeping(t in transformer_strategy(), with_machine in any::<bool>()) {
        let case = if with_machine { s2_case(&default_s2_machine(), &t) } else { s1_case(&t) };
        let raw = assemble_raw(&case).unwrap();
        let q = raw.index_report().q;
        let (d, a, e) = (raw.sys.n_diff(), raw.sys.n_alg(), raw.sys.n_eq());
        let (out, _) = phase_one(raw.sys).unwrap();
        prop_assert_eq!(out.n_eq(), e + q);
        prop_assert_eq!(out.n_alg(), a + 2 * q);
        prop_assert_eq!(out.n_diff() + q, d);
        prop_assert_eq!(structural_index_report(&out).class, IndexClass::Index1);
    }

    #[test]
    fn interface_coefficients_are_consistent(xpp_d in 0.06..0.3f64, xpp_q in 0.06..0.3f64, delta in -3.0..3.0f64) {
        let m = SauerPaiParams { xd_pp: xpp_d, xq_pp: xpp_q, ..default_s2_machine() };
        let mut x = [0.0; 14];
        x[0] = delta;
        x[1] = 1.0;
        let s = solve_interface_voltages(&m, &default_s1_transformer(), &x, [1.0, 0.0], 377.0);
        prop_assert!((s.phi_dq + s.phi_qd - (1.0 / xpp_d + 1.0 / xpp_q)).abs() < 1e-12);
        let same = SauerPaiParams { xq_pp: xpp_d, ..m };
        let s = solve_interface_voltages(&same, &default_s1_transformer(), &x, [1.0, 0.0], 377.0);
        prop_assert!(s.theta.abs() < 1e-12);
    }

    #[test]
    fn trajectory_difference_is_a_pseudometric(
        rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 9), 4),
    ) {
        let make = |k: usize| {
            let mut csv = String::from("t,a,b,c\n");
            for (i, r) in rows.iter().enumerate() {
                csv.push_str(&format!("{},{},{},{}\n", i as f64 * 1e-3, r[3 * k], r[3 * k + 1], r[3 * k + 2]));
            }
            SampledTrajectory::from_csv(&csv).unwrap()
        };
        let (x, y, z) = (make(0), make(1), make(2));
        let d = |p: &SampledTrajectory, q: &SampledTrajectory| p.diff(q).unwrap().max;
        prop_assert_eq!(d(&x, &x), 0.0);
        prop_assert_eq!(d(&x, &y), d(&y, &x));
        prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
        let rep = x.diff(&y).unwrap();
        prop_assert!(rep.max >= rep.mean && rep.mean >= 0.0);
    }
}

#[test]
fn residuals_are_bit_reproducible() {
    let mut raw = assemble_raw(&base_case()).unwrap();
    let dae = CompiledDae::new(&mut raw.sys);
    let mut ws = dae.workspace();
    let x: Vec<f64> = (0..dae.n_diff()).map(|k| (k as f64 * 0.37).sin()).collect();
    let z: Vec<f64> = (0..dae.n_alg()).map(|k| (k as f64 * 0.11).cos()).collect();
    let mut a = vec![0.0; x.len() + z.len()];
    let mut b = a.clone();
    dae.rhs(0.2, &x, &z, &mut ws, &mut a).unwrap();
    let mut ws2 = dae.workspace();
    dae.rhs(0.2, &x, &z, &mut ws2, &mut b).unwrap();
    let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let named: HashMap<_, _> = dae.column_names().iter().zip(&a).collect();
    assert_eq!(named.len(), a.len());
}
