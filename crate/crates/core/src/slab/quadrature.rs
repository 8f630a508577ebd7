//! Gauss-Radau quadrature on (0, 1] with a fixed node at μ = 1.

/// Legendre P_{n}(x) and P_{n-1}(x) by the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// `n` nodes ascending in (0, 1] (last one exactly 1) and weights summing
/// to 1. Exact for polynomials of degree ≤ 2n − 2.
pub fn radau(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    // free nodes on [−1, 1) for the fixed endpoint −1 are roots of
    // (P_{n−1} + P_n)/(1 + x); mirror them to fix +1 instead
    let f = |x: f64| {
        let (pn, pn1) = legendre_pair(n, x);
        pn + pn1
    };
    let mut roots = Vec::with_capacity(n - 1);
    let steps = 4000 * n;
    let mut a = -1.0 + 1e-12;
    let mut fa = f(a);
    for s in 1..=steps {
        let b = -1.0 + 2.0 * s as f64 / steps as f64;
        let fb = f(b);
        if fa * fb < 0.0 && a > -1.0 + 1e-9 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        a = b;
        fa = fb;
    }
    debug_assert_eq!(roots.len(), n - 1);
    let nn = (n * n) as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &x in roots.iter().rev() {
        let (_, pn1) = legendre_pair(n, x);
        let w = (1.0 - x) / (nn * pn1 * pn1);
        nodes.push((1.0 - x) / 2.0);
        weights.push(w / 2.0);
    }
    nodes.push(1.0);
    weights.push(1.0 / nn);
    (nodes, weights)
}
