//! Phase-flip actions: a ±1 diagonal applied element-wise to φ.
//!
//! Ids follow the decimal encoding where −1 ↦ 1 and +1 ↦ 0, the first
//! element is the most significant bit, and one is added, so the identity
//! flip is id 1.

use crate::error::{invalid, Result};

/// Longest diagonal whose id fits in a `u64`.
pub const MAX_ENCODABLE: usize = 63;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PhaseFlipAction {
    pub diag: Vec<i8>,
    pub id: u64,
}

impl PhaseFlipAction {
    pub fn from_diag(diag: Vec<i8>) -> Result<Self> {
        let id = action_encode(&diag)?;
        Ok(PhaseFlipAction { diag, id })
    }

    pub fn from_id(id: u64, n: usize) -> Result<Self> {
        Ok(PhaseFlipAction { diag: action_decode(id, n)?, id })
    }

    pub fn identity(n: usize) -> Self {
        PhaseFlipAction { diag: vec![1; n], id: 1 }
    }
}

pub fn action_encode(diag: &[i8]) -> Result<u64> {
    if diag.is_empty() || diag.len() > MAX_ENCODABLE {
        return Err(invalid(format!("flip length {} outside 1..={MAX_ENCODABLE}", diag.len())));
    }
    let mut code = 0u64;
    for &d in diag {
        let bit = match d {
            1 => 0,
            -1 => 1,
            other => return Err(invalid(format!("flip entries must be ±1, got {other}"))),
        };
        code = (code << 1) | bit;
    }
    Ok(code + 1)
}

pub fn action_decode(id: u64, n: usize) -> Result<Vec<i8>> {
    if n == 0 || n > MAX_ENCODABLE {
        return Err(invalid(format!("flip length {n} outside 1..={MAX_ENCODABLE}")));
    }
    let count = 1u64 << n;
    if id == 0 || id > count {
        return Err(invalid(format!("action id {id} outside 1..={count}")));
    }
    let code = id - 1;
    Ok((0..n).map(|i| if (code >> (n - 1 - i)) & 1 == 1 { -1 } else { 1 }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn footnote_example() {
        let diag: Vec<i8> = [1, 1, -1, -1].repeat(4);
        assert_eq!(action_encode(&diag).unwrap(), 13108);
        assert_eq!(action_decode(13108, 16).unwrap(), diag);
    }

    #[test]
    fn identity_is_one() {
        assert_eq!(action_encode(&[1; 16]).unwrap(), 1);
        assert_eq!(PhaseFlipAction::identity(16), PhaseFlipAction::from_id(1, 16).unwrap());
        assert_eq!(action_encode(&[-1; 3]).unwrap(), 8);
        assert_eq!(action_encode(&[-1, 1, 1]).unwrap(), 5);
    }

    #[test]
    fn out_of_range() {
        assert!(action_decode(0, 4).is_err());
        assert!(action_decode(17, 4).is_err());
        assert!(action_decode(16, 4).is_ok());
        assert!(action_encode(&[1, 0]).is_err());
        assert!(action_encode(&[]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(bits in proptest::collection::vec(any::<bool>(), 1..=MAX_ENCODABLE)) {
            let diag: Vec<i8> = bits.iter().map(|&b| if b { -1 } else { 1 }).collect();
            let id = action_encode(&diag).unwrap();
            prop_assert_eq!(action_decode(id, diag.len()).unwrap(), diag);
        }
    }
}
