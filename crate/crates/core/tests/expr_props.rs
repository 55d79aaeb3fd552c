use contraswitch::expr::{Expr, VectorExpr};
use proptest::prelude::*;

const VARS: [&str; 2] = ["x", "y"];

/// Random smooth expression text. Denominators are kept away from zero.
fn smooth_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (1u32..50).prop_map(|v| format!("{}", v as f64 / 10.0)),
        Just("x".to_string()),
        Just("y".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({} + {})", a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({} - {})", a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{} * {}", a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("{} / (1 + ({})^2)", a, b)),
            (inner.clone(), 0u32..4).prop_map(|(a, k)| format!("({})^{}", a, k)),
            inner.clone().prop_map(|a| format!("-{}", a)),
        ]
    })
}

fn any_expr() -> impl Strategy<Value = String> {
    prop_oneof![
        smooth_expr(),
        smooth_expr().prop_map(|a| format!("abs({}) - 1", a)),
        smooth_expr().prop_map(|a| format!("sign({} - 1) * x", a)),
    ]
}

fn same(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

proptest! {
    #[test]
    fn display_round_trips(text in any_expr(), x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let e = Expr::parse(&text, &VARS).unwrap();
        let printed = e.to_string();
        let back = Expr::parse(&printed, &VARS).unwrap();
        prop_assert_eq!(back.to_string(), printed.clone());
        let (a, b) = (e.eval(&[x, y]), back.eval(&[x, y]));
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert!(same(a, b), "{} vs {} for {}", a, b, printed),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn derivative_matches_central_difference(text in smooth_expr(), x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let e = Expr::parse(&text, &VARS).unwrap();
        let h = 1e-5;
        for var in 0..2 {
            let d = e.differentiate(var);
            prop_assert!(!d.uses_sign_convention);
            let mut p = [x, y];
            let mut m = [x, y];
            p[var] += h;
            m[var] -= h;
            let fd = (e.eval(&p).unwrap() - e.eval(&m).unwrap()) / (2.0 * h);
            let exact = d.expr.eval(&[x, y]).unwrap();
            let scale = 1.0 + exact.abs().max(e.eval(&[x, y]).unwrap().abs());
            prop_assert!((fd - exact).abs() <= 1e-4 * scale, "{}: d/d{} = {} vs fd {}", text, VARS[var], exact, fd);
        }
    }

    #[test]
    fn jacobian_entries_are_component_derivatives(a in smooth_expr(), b in smooth_expr(), x in -2.0..2.0f64, y in -2.0..2.0f64) {
        let v = VectorExpr::parse(&[a.as_str(), b.as_str()], &VARS).unwrap();
        let jac = v.jacobian();
        for (i, row) in jac.iter().enumerate() {
            for (j, entry) in row.iter().enumerate() {
                let direct = v.components()[i].differentiate(j).expr.eval(&[x, y]).unwrap();
                prop_assert!(same(entry.eval(&[x, y]).unwrap(), direct));
            }
        }
    }
}

#[test]
fn precedence_and_errors() {
    let e = Expr::parse("-x^2 + 2*y", &VARS).unwrap();
    assert_eq!(e.eval(&[3.0, 1.0]).unwrap(), -7.0);
    assert!(Expr::parse("x^2^2", &VARS).is_err());
    assert!(Expr::parse("x^-1", &VARS).is_err());
    assert!(Expr::parse("z + 1", &VARS).is_err());
    assert!(Expr::parse("", &VARS).is_err());
    assert!(Expr::parse("1/(x - x)", &VARS).unwrap().eval(&[1.0, 0.0]).is_err());
}
