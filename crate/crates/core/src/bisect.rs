/// Largest `t` in `[lo, hi]` (to within `tol`) at which a monotone predicate
/// still holds, given `pred(lo)` true and `pred(hi)` false.
///
/// Returns `(pass, fail)` with `pred(pass)`, `!pred(fail)` and
/// `fail - pass <= tol`.
pub fn bisect_last_true<E>(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut pred: impl FnMut(f64) -> Result<bool, E>,
) -> Result<(f64, f64), E> {
    debug_assert!(lo <= hi && tol > 0.0);
    while hi - lo > tol {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}
