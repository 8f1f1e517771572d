use serde::{Deserialize, Serialize};

/// Uniform mid-rise quantizer over `[-full_scale, full_scale]`.
///
/// `2^bits` levels at `(k + ½)·Δ` with `Δ = 2·full_scale / 2^bits`; inputs
/// beyond the range saturate at the outermost level. Quantizing a level
/// returns it unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    bits: u32,
    full_scale: f64,
}

impl Quantizer {
    pub fn new(bits: u32, full_scale: f64) -> Option<Self> {
        if bits == 0 || bits > 52 || !(full_scale > 0.0) || !full_scale.is_finite() {
            return None;
        }
        Some(Quantizer { bits, full_scale })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn full_scale(&self) -> f64 {
        self.full_scale
    }

    /// Width of one quantization step.
    pub fn lsb(&self) -> f64 {
        2.0 * self.full_scale / (1u64 << self.bits) as f64
    }

    #[inline]
    pub fn quantize(&self, v: f64) -> f64 {
        let lsb = self.lsb();
        let half_levels = (1u64 << (self.bits - 1)) as f64;
        let k = (v / lsb).floor().clamp(-half_levels, half_levels - 1.0);
        (k + 0.5) * lsb
    }
}
