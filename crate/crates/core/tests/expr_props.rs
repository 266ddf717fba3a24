use multihom_core::expr::{BinaryOp, Node, UnaryOp};
use multihom_core::Expr;
use proptest::prelude::*;

const VARS: [&str; 2] = ["x", "eps"];

fn node() -> impl Strategy<Value = Node> {
    let leaf = prop_oneof![
        prop_oneof![Just(0.0), Just(-0.0), Just(1.0), Just(-2.5), Just(1e-300), Just(3.0e17), -1e3..1e3f64].prop_map(Node::Const),
        (0usize..2).prop_map(Node::Var),
    ];
    leaf.prop_recursive(5, 40, 2, |inner| {
        let unary = prop_oneof![
            Just(UnaryOp::Neg),
            Just(UnaryOp::Sqrt),
            Just(UnaryOp::Exp),
            Just(UnaryOp::Ln),
            Just(UnaryOp::Sin),
            Just(UnaryOp::Cos),
        ];
        let binary = prop_oneof![
            Just(BinaryOp::Add),
            Just(BinaryOp::Sub),
            Just(BinaryOp::Mul),
            Just(BinaryOp::Div),
            Just(BinaryOp::Pow),
        ];
        prop_oneof![
            (unary, inner.clone()).prop_map(|(op, a)| Node::Unary(op, Box::new(a))),
            (binary, inner.clone(), inner).prop_map(|(op, a, b)| Node::Binary(op, Box::new(a), Box::new(b))),
        ]
    })
}

fn same(a: &Result<f64, multihom_core::ExprError>, b: &Result<f64, multihom_core::ExprError>) -> bool {
    match (a, b) {
        (Ok(x), Ok(y)) => x.to_bits() == y.to_bits(),
        (Err(_), Err(_)) => true,
        _ => false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn printing_round_trips(n in node(), x in -3.0..3.0f64, eps in 1e-6..1.0f64) {
        let e = Expr::from_node(n, &VARS);
        let text = e.to_string();
        let back = Expr::parse(&text, &VARS).unwrap();
        prop_assert_eq!(back.to_string(), text.clone());
        let (a, b) = (e.eval(&[x, eps]), back.eval(&[x, eps]));
        prop_assert!(same(&a, &b), "{} -> {:?} vs {:?}", text, a, b);
    }

    #[test]
    fn evaluation_is_pure(n in node(), x in -3.0..3.0f64) {
        let e = Expr::from_node(n, &VARS);
        let first = e.eval(&[x, 0.5]);
        for _ in 0..3 {
            prop_assert!(same(&first, &e.eval(&[x, 0.5])));
        }
    }
}
