// Inner loops shared by the tape. Reductions run in a fixed sequential order.

use super::Real;

/// `c[m×n] += a[m×k] · b[k×n]`, row-major.
pub fn matmul_into<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c, &b) in c_row.iter_mut().zip(b_row) {
                *c = *c + aip * b;
            }
        }
    }
}

/// `da[m×k] += dc[m×n] · bᵀ`.
pub(crate) fn matmul_grad_a<T: Real>(dc: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    let mut bt = vec![T::zero(); k * n];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j];
        }
    }
    for i in 0..m {
        let da_row = &mut da[i * k..(i + 1) * k];
        for (j, &g) in dc[i * n..(i + 1) * n].iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            for (d, &y) in da_row.iter_mut().zip(&bt[j * k..(j + 1) * k]) {
                *d = *d + g * y;
            }
        }
    }
}

/// `db[k×n] += aᵀ · dc`.
pub(crate) fn matmul_grad_b<T: Real>(a: &[T], dc: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let db_row = &mut db[p * n..(p + 1) * n];
            for (d, &g) in db_row.iter_mut().zip(dc_row) {
                *d = *d + aip * g;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let three = T::of(3.0);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + three * a * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}
