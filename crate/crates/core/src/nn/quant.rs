//! 2-bit uniform scalar quantizer embedded between the DS and US blocks.
//!
//! Cells are `[0, .25) [.25, .5) [.5, .75) [.75, 1]`; a value on a boundary
//! falls into the upper cell. Codes dequantize to cell midpoints and are
//! emitted most significant bit first.

use crate::{Error, Result};

pub const LEVELS: usize = 4;
pub const BITS_PER_SYMBOL: usize = 2;

/// Fixed-length feedback bit vector; each entry is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitCodeword {
    pub bits: Vec<u8>,
}

impl BitCodeword {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn to_bit_string(&self) -> String {
        self.bits.iter().map(|&b| if b == 0 { '0' } else { '1' }).collect()
    }

    pub fn from_bit_string(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::Format(format!("invalid bit character {other:?}"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self { bits })
    }
}

pub fn quantize_code(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    ((v * LEVELS as f64).floor() as usize).min(LEVELS - 1) as u8
}

pub fn dequantize_code(code: u8) -> f64 {
    (code as f64 + 0.5) / LEVELS as f64
}

pub fn quantize_2bit(values: &[f64]) -> BitCodeword {
    let mut bits = Vec::with_capacity(values.len() * BITS_PER_SYMBOL);
    for &v in values {
        let c = quantize_code(v);
        bits.push((c >> 1) & 1);
        bits.push(c & 1);
    }
    BitCodeword { bits }
}

pub fn dequantize_2bit(code: &BitCodeword) -> Result<Vec<f64>> {
    if code.bits.len() % BITS_PER_SYMBOL != 0 {
        return Err(Error::Shape(format!("codeword length {} is odd", code.bits.len())));
    }
    code.bits
        .chunks_exact(BITS_PER_SYMBOL)
        .map(|pair| match (pair[0], pair[1]) {
            (hi @ 0..=1, lo @ 0..=1) => Ok(dequantize_code((hi << 1) | lo)),
            _ => Err(Error::Format("codeword entries must be 0 or 1".into())),
        })
        .collect()
}

/// Forward quantize-then-dequantize.
pub fn quantize_dequantize(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| dequantize_code(quantize_code(v))).collect()
}

/// Straight-through backward pass of [`quantize_dequantize`].
pub fn straight_through_backward(upstream: &[f64]) -> Vec<f64> {
    upstream.to_vec()
}

/// Element-wise `y = 2x - 1`.
pub fn lambda_map(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| 2.0 * v - 1.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_enumeration() {
        let cases = [
            (0.0, 0, 0.125),
            (0.2499, 0, 0.125),
            (0.25, 1, 0.375),
            (0.5, 2, 0.625),
            (0.7499, 2, 0.625),
            (0.75, 3, 0.875),
            (1.0, 3, 0.875),
        ];
        for (v, code, level) in cases {
            assert_eq!(quantize_code(v), code, "v={v}");
            assert_eq!(dequantize_code(code), level);
        }
        assert_eq!(quantize_2bit(&[0.0]).bits, vec![0, 0]);
        assert_eq!(quantize_2bit(&[0.5]).bits, vec![1, 0]);
    }

    #[test]
    fn clamps_out_of_range() {
        assert_eq!(quantize_code(-0.3), 0);
        assert_eq!(quantize_code(1.7), 3);
    }

    #[test]
    fn round_trip_error_bounded() {
        for i in 0..=10_000 {
            let v = i as f64 / 10_000.0;
            let r = quantize_dequantize(&[v])[0];
            assert!((v - r).abs() <= 0.125 + 1e-15);
        }
    }

    #[test]
    fn codes_are_fixed_points() {
        for code in 0..4u8 {
            assert_eq!(quantize_code(dequantize_code(code)), code);
        }
    }

    #[test]
    fn msb_first_packing() {
        let cw = quantize_2bit(&[0.9, 0.3, 0.6, 0.1]);
        assert_eq!(cw.to_bit_string(), "11011000");
        assert_eq!(dequantize_2bit(&cw).unwrap(), vec![0.875, 0.375, 0.625, 0.125]);
        assert_eq!(BitCodeword::from_bit_string("11011000").unwrap(), cw);
        assert!(dequantize_2bit(&BitCodeword { bits: vec![1, 0, 1] }).is_err());
        assert!(dequantize_2bit(&BitCodeword { bits: vec![2, 0] }).is_err());
    }

    #[test]
    fn lambda_endpoints() {
        assert_eq!(lambda_map(&[0.0, 0.5, 1.0]), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn ste_is_identity() {
        let g = [0.3, -1.2, 4.0];
        assert_eq!(straight_through_backward(&g), g.to_vec());
    }
}
