//! Transcendentals for the tape. The platform libm is noticeably faster than
//! the portable one, so it is used whenever std is linked.

#[cfg(feature = "std")]
mod imp {
    pub fn exp(x: f64) -> f64 {
        x.exp()
    }
    pub fn ln(x: f64) -> f64 {
        x.ln()
    }
    // glibc goes through expm1 everywhere; a single exp is enough away from 0
    pub fn tanh(x: f64) -> f64 {
        let a = x.abs();
        if a < 0.5 || a.is_nan() {
            return x.tanh();
        }
        let e = (-2.0 * a).exp();
        ((1.0 - e) / (1.0 + e)).copysign(x)
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    pub use libm::{exp, log as ln, tanh};
}

pub(super) use imp::{exp, ln, tanh};
