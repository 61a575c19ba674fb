use std::collections::HashMap;

use proptest::prelude::*;

use emtdq::expr::{ExpressionGraph, NodeId, VarId, VarKind};

#[derive(Clone, Debug)]
enum Tree {
    X,
    Y,
    C(f64),
    Add(Box<Tree>, Box<Tree>),
    Sub(Box<Tree>, Box<Tree>),
    Mul(Box<Tree>, Box<Tree>),
    Div(Box<Tree>, Box<Tree>),
    Neg(Box<Tree>),
    Sin(Box<Tree>),
    Cos(Box<Tree>),
}

fn tree() -> impl Strategy<Value = Tree> {
    let leaf = prop_oneof![Just(Tree::X), Just(Tree::Y), (-2.0..2.0f64).prop_map(Tree::C)];
    leaf.prop_recursive(8, 64, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Tree::Add(a.into(), b.into())),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Tree::Sub(a.into(), b.into())),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Tree::Mul(a.into(), b.into())),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Tree::Div(a.into(), b.into())),
            inner.clone().prop_map(|a| Tree::Neg(a.into())),
            inner.clone().prop_map(|a| Tree::Sin(a.into())),
            inner.prop_map(|a| Tree::Cos(a.into())),
        ]
    })
}

fn emit(g: &mut ExpressionGraph, t: &Tree, x: VarId, y: VarId) -> NodeId {
    match t {
        Tree::X => g.var(x),
        Tree::Y => g.var(y),
        Tree::C(c) => g.constant(*c),
        Tree::Add(a, b) => {
            let (a, b) = (emit(g, a, x, y), emit(g, b, x, y));
            g.add(a, b)
        }
        Tree::Sub(a, b) => {
            let (a, b) = (emit(g, a, x, y), emit(g, b, x, y));
            g.sub(a, b)
        }
        Tree::Mul(a, b) => {
            let (a, b) = (emit(g, a, x, y), emit(g, b, x, y));
            g.mul(a, b)
        }
        Tree::Div(a, b) => {
            let (a, b) = (emit(g, a, x, y), emit(g, b, x, y));
            g.div(a, b)
        }
        Tree::Neg(a) => {
            let a = emit(g, a, x, y);
            g.neg(a)
        }
        Tree::Sin(a) => {
            let a = emit(g, a, x, y);
            g.sin(a)
        }
        Tree::Cos(a) => {
            let a = emit(g, a, x, y);
            g.cos(a)
        }
    }
}

/// Value of `t` at `(x, y)` and the smallest |denominator| met on the way.
fn min_denominator(t: &Tree, x: f64, y: f64) -> (f64, f64) {
    let two = |a: &Tree, b: &Tree| (min_denominator(a, x, y), min_denominator(b, x, y));
    match t {
        Tree::X => (x, f64::INFINITY),
        Tree::Y => (y, f64::INFINITY),
        Tree::C(c) => (*c, f64::INFINITY),
        Tree::Add(a, b) => {
            let ((va, ma), (vb, mb)) = two(a, b);
            (va + vb, ma.min(mb))
        }
        Tree::Sub(a, b) => {
            let ((va, ma), (vb, mb)) = two(a, b);
            (va - vb, ma.min(mb))
        }
        Tree::Mul(a, b) => {
            let ((va, ma), (vb, mb)) = two(a, b);
            (va * vb, ma.min(mb))
        }
        Tree::Div(a, b) => {
            let ((va, ma), (vb, mb)) = two(a, b);
            (va / vb, ma.min(mb).min(vb.abs()))
        }
        Tree::Neg(a) => {
            let (v, m) = min_denominator(a, x, y);
            (-v, m)
        }
        Tree::Sin(a) => {
            let (v, m) = min_denominator(a, x, y);
            (v.sin(), m)
        }
        Tree::Cos(a) => {
            let (v, m) = min_denominator(a, x, y);
            (v.cos(), m)
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn time_derivative_matches_finite_difference_along_path(
        t in tree(), x0 in -1.0..1.0f64, y0 in -1.0..1.0f64, vx in -1.0..1.0f64, vy in -1.0..1.0f64,
    ) {
        let (value, min_den) = min_denominator(&t, x0, y0);
        prop_assume!(value.is_finite() && min_den > 0.2 && value.abs() < 1e3);
        let mut g = ExpressionGraph::new();
        let x = g.add_variable("x", VarKind::Differential).unwrap();
        let y = g.add_variable("y", VarKind::Differential).unwrap();
        let root = emit(&mut g, &t, x, y);
        let bind: HashMap<_, _> = [(x, g.constant(vx)), (y, g.constant(vy))].into_iter().collect();
        let dt = g.differentiate_time(root, &bind).unwrap();
        let ad = g.evaluate(dt, &[x0, y0]).unwrap();
        let h = 1e-6;
        let f = |s: f64| g.evaluate(root, &[x0 + vx * s, y0 + vy * s]).unwrap();
        let fd = (f(h) - f(-h)) / (2.0 * h);
        prop_assert!((ad - fd).abs() / ad.abs().max(1.0) <= 1e-6, "ad {} fd {}", ad, fd);
    }

    #[test]
    fn building_the_same_tree_twice_adds_no_nodes(t in tree()) {
        let mut g = ExpressionGraph::new();
        let x = g.add_variable("x", VarKind::Differential).unwrap();
        let y = g.add_variable("y", VarKind::Algebraic).unwrap();
        let a = emit(&mut g, &t, x, y);
        let n = g.node_count();
        let b = emit(&mut g, &t, x, y);
        prop_assert_eq!(a, b);
        prop_assert_eq!(g.node_count(), n);
    }
}
