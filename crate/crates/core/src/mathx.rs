//! Scalar math helpers usable without `std`, plus small seeded-sampling
//! utilities shared by initialization, dropout and the data generator.

use rand::Rng;

#[inline]
pub fn expf(x: f32) -> f32 {
    libm::expf(x)
}

#[inline]
pub fn lnf(x: f32) -> f32 {
    libm::logf(x)
}

#[inline]
pub fn sqrtf(x: f32) -> f32 {
    libm::sqrtf(x)
}

#[inline]
pub fn tanhf(x: f32) -> f32 {
    libm::tanhf(x)
}

#[inline]
pub fn powf(x: f32, y: f32) -> f32 {
    libm::powf(x, y)
}

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
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma_r(x).0
}

/// Numerically stable sigmoid.
#[inline]
pub fn sigmoidf(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + expf(-x))
    } else {
        let e = expf(x);
        e / (1.0 + e)
    }
}

/// Standard-normal draw via Box-Muller.
pub fn sample_normal<R: Rng>(rng: &mut R) -> f32 {
    loop {
        let u1: f32 = rng.gen();
        if u1 <= f32::MIN_POSITIVE {
            continue;
        }
        let u2: f32 = rng.gen();
        let r = sqrtf(-2.0 * lnf(u1));
        return r * libm::cosf(2.0 * core::f32::consts::PI * u2);
    }
}

/// Zero-mean normal with standard deviation `sigma`, rejected outside
/// `±2·sigma`. Used for all weight-matrix initialization.
pub fn sample_trunc_normal<R: Rng>(rng: &mut R, sigma: f32) -> f32 {
    loop {
        let v = sample_normal(rng) * sigma;
        if v.abs() <= 2.0 * sigma {
            return v;
        }
    }
}
