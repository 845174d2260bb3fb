//! f64 math that works with and without std.
//!
//! Methods like `f64::sqrt` live in std, not core; under `no_std` the same
//! operations come from `libm`. Everything downstream calls through here.

#![allow(dead_code)]

macro_rules! unary {
    ($($name:ident => $libm:ident),* $(,)?) => {
        $(
            #[cfg(feature = "std")]
            #[inline(always)]
            pub(crate) fn $name(x: f64) -> f64 {
                f64::$name(x)
            }
            #[cfg(not(feature = "std"))]
            #[inline(always)]
            pub(crate) fn $name(x: f64) -> f64 {
                libm::$libm(x)
            }
        )*
    };
}

unary! {
    sqrt => sqrt,
    cbrt => cbrt,
    exp => exp,
    ln => log,
    sin => sin,
    cos => cos,
    tan => tan,
    atan => atan,
    abs => fabs,
    floor => floor,
    ceil => ceil,
    round => round,
}

#[cfg(feature = "std")]
#[inline(always)]
pub(crate) fn expm1(x: f64) -> f64 {
    f64::exp_m1(x)
}

#[cfg(not(feature = "std"))]
#[inline(always)]
pub(crate) fn expm1(x: f64) -> f64 {
    libm::expm1(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub(crate) fn powf(x: f64, p: f64) -> f64 {
    f64::powf(x, p)
}

#[cfg(not(feature = "std"))]
#[inline(always)]
pub(crate) fn powf(x: f64, p: f64) -> f64 {
    libm::pow(x, p)
}

/// Integer power by repeated squaring; identical results on std and no_std
/// builds.
#[inline]
pub(crate) fn powi(x: f64, n: i32) -> f64 {
    let mut acc = 1.0;
    let mut base = x;
    let mut e = n.unsigned_abs();
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    if n < 0 {
        1.0 / acc
    } else {
        acc
    }
}
