//! Thin wrappers over [`libm`] so the rest of the crate never calls the
//! std float intrinsics directly. This keeps `no_std` builds working and,
//! more importantly, pins every transcendental to one implementation so
//! results do not drift between platforms or build configurations.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn pow(base: f64, exponent: f64) -> f64 {
    libm::pow(base, exponent)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}
