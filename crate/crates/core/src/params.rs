//! Parameter containers and initializers.
//!
//! Weight structs are generic over their leaf type so the same layout serves
//! as stored tensors (`Tensor<F>`) and as bound tape handles (`Var`). Field
//! declaration order is the canonical parameter order used by the optimizer
//! and the checkpoint format.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::numerics::{Scalar, Tensor};

macro_rules! weights {
    ($(#[$meta:meta])* $vis:vis struct $name:ident { $($(#[$fmeta:meta])* $field:ident),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        $vis struct $name<T> {
            $($(#[$fmeta])* pub $field: T,)*
        }

        impl<T> $name<T> {
            pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> $name<U> {
                $name { $($field: f(&self.$field),)* }
            }

            pub fn visit<'a>(&'a self, prefix: &str, f: &mut impl FnMut(String, &'a T)) {
                $(f(format!("{prefix}{}", stringify!($field)), &self.$field);)*
            }

            pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(&'a mut T)) {
                $(f(&mut self.$field);)*
            }
        }
    };
}
pub(crate) use weights;

/// Normal initialization with the given standard deviation.
pub fn normal<F: Scalar>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<F> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Tensor::from_fn(shape, |_| F::lit(dist.sample(rng)))
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)) for a `[fan_in, fan_out]` matrix.
pub fn glorot_uniform<F: Scalar>(shape: &[usize], rng: &mut impl Rng) -> Tensor<F> {
    let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
    Tensor::from_fn(shape, |_| F::lit(dist.sample(rng)))
}

/// SplitMix64 finalizer, used to derive independent seeds for separate
/// random streams from one user seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
