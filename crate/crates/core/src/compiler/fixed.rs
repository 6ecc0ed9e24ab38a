//! Q16.16 fixed point: a float is the Word `round(v * 2^16)`.

use crate::isa::{xor_function, Opcode, Word};

pub const FRAC_BITS: i32 = 16;
const ONE: f64 = (1u64 << FRAC_BITS) as f64;

/// Nearest representable pattern; saturates outside the i32 range.
pub fn from_f64(v: f64) -> Word {
    let scaled = (v * ONE).round();
    scaled.clamp(i32::MIN as f64, i32::MAX as f64) as i32 as Word
}

pub fn to_f64(w: Word) -> f64 {
    w as i32 as f64 / ONE
}

pub fn from_int(i: Word) -> Word {
    i << FRAC_BITS
}

/// Product as computed by `xmulk rd, ra, rb, 16` (floor of the exact value).
pub fn mul(a: Word, b: Word) -> Word {
    xor_function(Opcode::Xmulk, a, b, FRAC_BITS)
}

/// Quotient as computed by `xdivk rd, ra, rb, 16`; division by zero gives 0.
pub fn div(a: Word, b: Word) -> Word {
    xor_function(Opcode::Xdivk, a, b, FRAC_BITS)
}
