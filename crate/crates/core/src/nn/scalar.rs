use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;

/// Element type of a network evaluation. Training and reference passes run
/// in `f64`; batched Monte-Carlo inference runs in `f32`.
pub trait Scalar:
    LinalgScalar + Float + ScalarOperand + AddAssign + MulAssign + Debug + Send + Sync + std::iter::Sum + 'static
{
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
    fn tanh_act(self) -> Self;
    fn sigmoid(self) -> Self;
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn f64(self) -> f64 {
        self
    }

    fn tanh_act(self) -> Self {
        self.tanh()
    }

    fn sigmoid(self) -> Self {
        1.0 / (1.0 + (-self).exp())
    }
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn f64(self) -> f64 {
        f64::from(self)
    }

    fn tanh_act(self) -> Self {
        fast_tanh(self)
    }

    fn sigmoid(self) -> Self {
        0.5 + 0.5 * fast_tanh(0.5 * self)
    }
}

/// Rational 13/6 approximation of tanh, accurate to a few ulp in f32.
#[inline]
pub fn fast_tanh(x: f32) -> f32 {
    const CLAMP: f32 = 7.905_311;
    const A1: f32 = 4.893_524_6e-3;
    const A3: f32 = 6.372_619_3e-4;
    const A5: f32 = 1.485_722_4e-5;
    const A7: f32 = 5.122_297e-8;
    const A9: f32 = -8.604_672e-11;
    const A11: f32 = 2.000_188e-13;
    const A13: f32 = -2.760_768_5e-16;
    const B0: f32 = 4.893_525e-3;
    const B2: f32 = 2.268_434_7e-3;
    const B4: f32 = 1.185_347e-4;
    const B6: f32 = 1.198_258_4e-6;
    let x = x.clamp(-CLAMP, CLAMP);
    let x2 = x * x;
    let mut p = x2 * A13 + A11;
    p = p * x2 + A9;
    p = p * x2 + A7;
    p = p * x2 + A5;
    p = p * x2 + A3;
    p = p * x2 + A1;
    p *= x;
    let mut q = x2 * B6 + B4;
    q = q * x2 + B2;
    q = q * x2 + B0;
    p / q
}
