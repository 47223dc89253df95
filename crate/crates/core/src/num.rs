//! Scalar math shim. Uses the platform library under `std` and `libm`
//! otherwise.

macro_rules! unary {
    ($($name:ident => $libm:ident),* $(,)?) => {$(
        #[cfg(feature = "std")]
        #[inline(always)]
        pub fn $name(x: f64) -> f64 {
            x.$name()
        }
        #[cfg(not(feature = "std"))]
        #[inline(always)]
        pub fn $name(x: f64) -> f64 {
            libm::$libm(x)
        }
    )*};
}

unary!(
    exp => exp,
    ln => log,
    tanh => tanh,
    sin => sin,
    cos => cos,
    sqrt => sqrt,
    asinh => asinh,
    atan => atan,
    exp_m1 => expm1,
    ln_1p => log1p,
);

#[inline(always)]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[inline(always)]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

#[cfg(feature = "std")]
#[inline(always)]
pub fn powf(x: f64, y: f64) -> f64 {
    x.powf(y)
}

#[cfg(not(feature = "std"))]
#[inline(always)]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn powi(x: f64, n: i32) -> f64 {
    let mut base = if n < 0 { 1.0 / x } else { x };
    let mut e = n.unsigned_abs();
    let mut acc = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

#[inline(always)]
pub fn abs(x: f64) -> f64 {
    f64::from_bits(x.to_bits() & !(1u64 << 63))
}

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    exp(-0.5 * x * x) / SQRT_2PI
}

/// Standard normal distribution function.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / core::f64::consts::SQRT_2)
}

pub const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Double factorial `(k-1)!!` for even `k`, the k-th standard normal moment.
pub fn gaussian_moment(k: u32) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let mut acc = 1.0;
    let mut j = k as i64 - 1;
    while j > 1 {
        acc *= j as f64;
        j -= 2;
    }
    acc
}

/// Branch-free `exp` for `x` in `[-700, 700]`, accurate to a few ulp.
#[inline(always)]
pub fn exp_poly(x: f64) -> f64 {
    const LOG2E: f64 = core::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let shifted = x * LOG2E + SHIFTER;
    let kf = shifted - SHIFTER;
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let bits = shifted.to_bits().wrapping_add(1023) << 52;
    p * f64::from_bits(bits)
}

/// Branch-free `tanh` suitable for vectorized loops.
#[inline(always)]
pub fn tanh_poly(u: f64) -> f64 {
    const P0: f64 = -9.643_991_794_250_523e-1;
    const P1: f64 = -9.928_772_310_019_185e1;
    const P2: f64 = -1.614_687_684_417_084_5e3;
    const Q0: f64 = 1.128_116_784_916_329_3e2;
    const Q1: f64 = 2.235_488_390_601_004_5e3;
    const Q2: f64 = 4.844_063_053_251_255e3;
    let a = abs(u).min(20.0);
    let s = u * u;
    let small = u + u * s * (((P0 * s + P1) * s + P2) / (((s + Q0) * s + Q1) * s + Q2));
    let e = exp_poly(2.0 * a);
    let large = (1.0 - 2.0 / (e + 1.0)).copysign(u);
    if a < 0.625 {
        small
    } else {
        large
    }
}
