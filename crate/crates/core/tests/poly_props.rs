use nalgebra::{DMatrix, DVector};
use orbitroa::poly::Polynomial;
use proptest::prelude::*;

type P = Polynomial<f64>;

const N: usize = 3;

fn poly(max_deg: u32) -> impl Strategy<Value = P> {
    let term = (prop::collection::vec(0..=max_deg, N), -3.0..3.0f64);
    prop::collection::vec(term, 0..8).prop_map(move |terms| {
        let terms = terms.into_iter().filter(|(e, _)| e.iter().sum::<u32>() <= max_deg);
        P::from_terms(N, terms).unwrap()
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5..1.5f64, N)
}

fn close(a: &P, b: &P, tol: f64) -> bool {
    let d = a.sub(b).unwrap();
    d.max_abs_coeff() <= tol * (1.0 + a.max_abs_coeff().max(b.max_abs_coeff()))
}

proptest! {
    #[test]
    fn ring_axioms(p in poly(2), q in poly(2), r in poly(2)) {
        prop_assert_eq!(p.add(&q).unwrap(), q.add(&p).unwrap());
        prop_assert!(close(&p.mul(&q).unwrap(), &q.mul(&p).unwrap(), 1e-14));
        prop_assert!(close(&p.add(&q).unwrap().add(&r).unwrap(), &p.add(&q.add(&r).unwrap()).unwrap(), 1e-14));
        prop_assert!(close(&p.mul(&q).unwrap().mul(&r).unwrap(), &p.mul(&q.mul(&r).unwrap()).unwrap(), 1e-12));
        let lhs = p.mul(&q.add(&r).unwrap()).unwrap();
        let rhs = p.mul(&q).unwrap().add(&p.mul(&r).unwrap()).unwrap();
        prop_assert!(close(&lhs, &rhs, 1e-12));
        prop_assert!(lhs.degree() <= 6);
    }

    #[test]
    fn evaluation_is_multiplicative(p in poly(3), q in poly(3), v in point()) {
        let pq = p.mul(&q).unwrap().eval(&v);
        let want = p.eval(&v) * q.eval(&v);
        prop_assert!((pq - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {}", pq, want);
    }

    #[test]
    fn affine_substitution_obeys_chain_rule(
        p in poly(3),
        m in prop::collection::vec(-1.0..1.0f64, N * N),
        b in prop::collection::vec(-1.0..1.0f64, N),
        j in 0..N,
    ) {
        let m = DMatrix::from_row_slice(N, N, &m);
        let b = DVector::from_vec(b);
        let lhs = p.substitute_affine(&m, &b).unwrap().differentiate(j);
        let mut rhs = P::zero(N);
        for i in 0..N {
            let gi = p.differentiate(i).substitute_affine(&m, &b).unwrap();
            rhs = rhs.add(&gi.scale(m[(i, j)])).unwrap();
        }
        prop_assert!(close(&lhs, &rhs, 1e-11));
    }

    #[test]
    fn json_round_trip_is_exact(p in poly(6)) {
        let text = serde_json::to_string(&p).unwrap();
        let back: P = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
