//! Small dense vector helpers over `f64` slices.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Unit vector along `a`, or `None` when `a` is (numerically) zero.
pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    if n > 0.0 && n.is_finite() {
        Some(scale(a, 1.0 / n))
    } else {
        None
    }
}

/// Denominator floor used by [`guarded_cosine`].
pub const COSINE_FLOOR: f64 = 1e-12;

/// Cosine similarity with the norm product clamped below by [`COSINE_FLOOR`].
///
/// Returns `(cosine, guarded)` where `guarded` reports whether the clamp was hit.
pub fn guarded_cosine(a: &[f64], b: &[f64]) -> (f64, bool) {
    let denom = norm(a) * norm(b);
    if denom < COSINE_FLOOR {
        (dot(a, b) / COSINE_FLOOR, true)
    } else {
        (dot(a, b) / denom, false)
    }
}

/// Gradient of [`guarded_cosine`] with respect to its second argument.
pub fn guarded_cosine_grad_b(a: &[f64], b: &[f64]) -> Vec<f64> {
    let na = norm(a);
    let nb = norm(b);
    let denom = na * nb;
    if denom < COSINE_FLOOR {
        return scale(a, 1.0 / COSINE_FLOOR);
    }
    // d/db (a.b / (|a||b|)) = a/(|a||b|) - (a.b) b / (|a||b|^3)
    let c = dot(a, b) / denom;
    a.iter()
        .zip(b)
        .map(|(ai, bi)| ai / denom - c * bi / (nb * nb))
        .collect()
}

/// Numerically stable `ln(sum(exp(x)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax computed with the same max-shift as [`log_sum_exp`].
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Modified Gram-Schmidt (two passes) over row vectors, in place.
///
/// Returns `false` if a row collapses below `tol` after projection.
pub fn orthonormalize_rows(rows: &mut [Vec<f64>], tol: f64) -> bool {
    for i in 0..rows.len() {
        for _pass in 0..2 {
            for j in 0..i {
                let (done, rest) = rows.split_at_mut(i);
                let p = dot(&rest[0], &done[j]);
                axpy(-p, &done[j], &mut rest[0]);
            }
        }
        let n = norm(&rows[i]);
        if n < tol {
            return false;
        }
        for v in rows[i].iter_mut() {
            *v /= n;
        }
    }
    true
}
