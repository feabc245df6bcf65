//! Matrix exponential via scaling-and-squaring with Padé approximants
//! (orders 3, 5, 7, 9, 13 selected by the 1-norm, Higham 2005).

use super::matrix::{ensure_finite, ensure_square, one_norm, Matrix};
use crate::error::{Error, Result};

const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Computes `exp(m)` for a square finite matrix.
pub fn mat_exp(m: &Matrix) -> Result<Matrix> {
    ensure_square(m)?;
    ensure_finite(m, "mat_exp input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let norm = one_norm(m);

    let out = if let Some(&(order, _)) = THETA.iter().find(|(_, theta)| norm <= *theta) {
        let coeffs: &[f64] = match order {
            3 => &PADE_3,
            5 => &PADE_5,
            7 => &PADE_7,
            _ => &PADE_9,
        };
        pade_low(m, coeffs)?
    } else {
        let squarings = if norm > THETA_13 {
            (norm / THETA_13).log2().ceil().max(0.0) as i32
        } else {
            0
        };
        let scaled = m * 2f64.powi(-squarings);
        let mut r = pade_13(&scaled)?;
        for _ in 0..squarings {
            r = &r * &r;
        }
        r
    };
    ensure_finite(&out, "mat_exp result")?;
    Ok(out)
}

fn solve_pade(u: Matrix, v: Matrix) -> Result<Matrix> {
    let p = &v + &u;
    let q = &v - &u;
    q.lu()
        .solve(&p)
        .ok_or(Error::Singular("Padé denominator"))
}

fn pade_low(a: &Matrix, b: &[f64]) -> Result<Matrix> {
    let n = a.nrows();
    let ident = Matrix::identity(n, n);
    let a2 = a * a;
    // Even powers up to a^(m-1).
    let mut powers = vec![ident.clone(), a2.clone()];
    while powers.len() * 2 < b.len() {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u_inner = Matrix::zeros(n, n);
    let mut v = Matrix::zeros(n, n);
    for (k, pw) in powers.iter().enumerate() {
        u_inner += pw * b[2 * k + 1];
        v += pw * b[2 * k];
    }
    let u = a * u_inner;
    solve_pade(u, v)
}

fn pade_13(a: &Matrix) -> Result<Matrix> {
    let b = &PADE_13;
    let n = a.nrows();
    let ident = Matrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_hi = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (u_hi + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let v_hi = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = v_hi + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    solve_pade(u, v)
}

/// Closed-form exponential of the upper-triangular 2×2 matrix `[[a, b], [0, c]]`.
///
/// Returns `(e11, e12, e22)`; the lower-left entry is zero.
pub fn exp_upper_2x2(a: f64, b: f64, c: f64) -> (f64, f64, f64) {
    let ea = a.exp();
    let ec = c.exp();
    // Divided difference (e^a - e^c)/(a - c), factored around the larger exponent.
    let (hi, gap) = if a >= c { (a, a - c) } else { (c, c - a) };
    let divided = if gap < 1e-8 {
        (0.5 * (a + c)).exp() * (1.0 + gap * gap / 24.0)
    } else {
        hi.exp() * (-(-gap).exp_m1()) / gap
    };
    (ea, b * divided, ec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::matrix::diag;

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = mat_exp(&Matrix::zeros(2, 2)).unwrap();
        assert!(max_abs_diff(&e, &Matrix::identity(2, 2)) < 1e-15);
    }

    #[test]
    fn exp_of_diagonal() {
        let e = mat_exp(&diag(&[1.0, -1.0])).unwrap();
        let expect = diag(&[std::f64::consts::E, 1.0 / std::f64::consts::E]);
        assert!(max_abs_diff(&e, &expect) < 1e-14);
    }

    #[test]
    fn exp_of_nilpotent() {
        let m = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = mat_exp(&m).unwrap();
        let expect = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(max_abs_diff(&e, &expect) < 1e-15);
    }

    #[test]
    fn large_norm_rotation_matches_closed_form() {
        // exp([[0, w], [-w, 0]]) is a rotation by w.
        for &w in &[0.01, 0.3, 2.0, 7.5, 40.0] {
            let m = Matrix::from_row_slice(2, 2, &[0.0, w, -w, 0.0]);
            let e = mat_exp(&m).unwrap();
            let expect = Matrix::from_row_slice(2, 2, &[w.cos(), w.sin(), -w.sin(), w.cos()]);
            assert!(max_abs_diff(&e, &expect) < 1e-10 * (1.0 + w), "w = {w}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            mat_exp(&Matrix::zeros(2, 3)),
            Err(Error::NotSquare { .. })
        ));
        let mut m = Matrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(mat_exp(&m), Err(Error::NonFinite(_))));
    }

    #[test]
    fn upper_2x2_matches_pade() {
        for &(a, b, c) in &[
            (0.3, 1.2, -0.3),
            (-2.0, 0.5, 2.0),
            (1.0, -3.0, 1.0),
            (1e-10, 2.0, -1e-10),
            (-5.0, 0.1, -4.0),
        ] {
            let (e11, e12, e22) = exp_upper_2x2(a, b, c);
            let e = mat_exp(&Matrix::from_row_slice(2, 2, &[a, b, 0.0, c])).unwrap();
            assert!((e11 - e[(0, 0)]).abs() < 1e-12 * e[(0, 0)].abs().max(1.0));
            assert!((e12 - e[(0, 1)]).abs() < 1e-11 * e[(0, 1)].abs().max(1.0));
            assert!((e22 - e[(1, 1)]).abs() < 1e-12 * e[(1, 1)].abs().max(1.0));
        }
    }
}
