/// Solves a tridiagonal system with sub-diagonal `a`, diagonal `b`,
/// super-diagonal `c` (a[0] and c[n-1] ignored) in place of `d`.
pub fn solve_tridiag(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64], scratch: &mut Vec<f64>) {
    let n = d.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let cp = scratch;
    cp[0] = c[0] / b[0];
    d[0] /= b[0];
    for i in 1..n {
        let den = b[i] - a[i] * cp[i - 1];
        cp[i] = if i + 1 < n { c[i] / den } else { 0.0 };
        d[i] = (d[i] - a[i] * d[i - 1]) / den;
    }
    for i in (0..n - 1).rev() {
        d[i] -= cp[i] * d[i + 1];
    }
}
