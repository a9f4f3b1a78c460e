//! The smooth cutoff `h(z) = φ(|z|) |z|^4` weighting jumps in the Malliavin
//! matrix and Skorohod integral.
//!
//! `φ ≡ 1` on `[0, 1]`, `φ ≡ 0` on `[2, ∞)`, and on the collar `(1, 2)`
//! `φ(r) = g(2 - r) / (g(2 - r) + g(r - 1))` with `g(t) = exp(-1/t)`.

use std::sync::OnceLock;

use nalgebra::DVector;

fn g(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

fn g_prime(t: f64) -> f64 {
    if t > 0.0 {
        g(t) / (t * t)
    } else {
        0.0
    }
}

/// The bump `φ(r)`.
pub fn bump(r: f64) -> f64 {
    if r <= 1.0 {
        1.0
    } else if r >= 2.0 {
        0.0
    } else {
        let a = g(2.0 - r);
        let b = g(r - 1.0);
        a / (a + b)
    }
}

pub fn bump_derivative(r: f64) -> f64 {
    if r <= 1.0 || r >= 2.0 {
        return 0.0;
    }
    let a = g(2.0 - r);
    let b = g(r - 1.0);
    let s = a + b;
    (-g_prime(2.0 - r) * b - a * g_prime(r - 1.0)) / (s * s)
}

/// `h` as a function of the radius.
pub fn h_radial(r: f64) -> f64 {
    r.powi(4) * bump(r)
}

pub fn h_radial_derivative(r: f64) -> f64 {
    4.0 * r.powi(3) * bump(r) + r.powi(4) * bump_derivative(r)
}

pub fn h(z: &DVector<f64>) -> f64 {
    h_radial(z.norm())
}

pub fn grad_h(z: &DVector<f64>) -> DVector<f64> {
    let r = z.norm();
    if r == 0.0 || r >= 2.0 {
        return DVector::zeros(z.len());
    }
    if r <= 1.0 {
        return z * (4.0 * r * r);
    }
    z * (h_radial_derivative(r) / r)
}

/// The literal "h = 1 on the unit ball" reading, kept as a divergence control.
pub fn h_literal(z: &DVector<f64>) -> f64 {
    bump(z.norm())
}

/// `sup |∇h|`, located on a fine radial grid and refined by golden section.
pub fn lipschitz_h() -> f64 {
    static LIP: OnceLock<f64> = OnceLock::new();
    *LIP.get_or_init(|| {
        let n = 20_000;
        let (mut best_r, mut best) = (0.0, 0.0);
        for i in 0..=n {
            let r = 2.0 * i as f64 / n as f64;
            let v = h_radial_derivative(r).abs();
            if v > best {
                best = v;
                best_r = r;
            }
        }
        let (mut lo, mut hi) = (best_r - 2.0 / n as f64, best_r + 2.0 / n as f64);
        let gr = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let m1 = hi - gr * (hi - lo);
            let m2 = lo + gr * (hi - lo);
            if h_radial_derivative(m1).abs() > h_radial_derivative(m2).abs() {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        best.max(h_radial_derivative(0.5 * (lo + hi)).abs())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn inside_unit_ball() {
        let z = v(&[0.5, 0.0]);
        assert_eq!(h(&z), 0.0625);
        assert_eq!(grad_h(&z), v(&[0.5, 0.0]));
    }

    #[test]
    fn outside_support() {
        let z = v(&[3.0, 0.0]);
        assert_eq!(h(&z), 0.0);
        assert_eq!(grad_h(&z), v(&[0.0, 0.0]));
    }

    #[test]
    fn collar_midpoint() {
        assert!((bump(1.5) - 0.5).abs() < 1e-15);
        assert!((h(&v(&[0.0, 1.5])) - 2.53125).abs() < 1e-12);
    }

    #[test]
    fn c1_at_collar_ends() {
        // second-order one-sided differences from each side of the junction
        let step = 1e-4;
        for &r in &[1.0, 2.0] {
            let left = (3.0 * h_radial(r) - 4.0 * h_radial(r - step) + h_radial(r - 2.0 * step)) / (2.0 * step);
            let right = (-3.0 * h_radial(r) + 4.0 * h_radial(r + step) - h_radial(r + 2.0 * step)) / (2.0 * step);
            assert!((left - right).abs() < 1e-6, "r={r}: {left} vs {right}");
            assert!((left - h_radial_derivative(r)).abs() < 1e-6, "r={r}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let step = 1e-6;
        for &r in &[0.3, 1.2, 1.5, 1.8, 1.99] {
            let z = v(&[r * 0.6, r * 0.8]);
            let g = grad_h(&z);
            for k in 0..2 {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[k] += step;
                zm[k] -= step;
                let fd = (h(&zp) - h(&zm)) / (2.0 * step);
                assert!((fd - g[k]).abs() < 1e-6, "r={r} k={k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn lipschitz_constant_bounds_gradient() {
        let lip = lipschitz_h();
        assert!(lip > 9.8 && lip < 9.9, "{lip}");
        for i in 0..1000 {
            let r = 2.0 * i as f64 / 1000.0;
            assert!(h_radial_derivative(r).abs() <= lip + 1e-12);
        }
    }
}
