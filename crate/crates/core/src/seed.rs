//! Counter-based seed derivation.
//!
//! A child seed is obtained by folding each counter into the parent with one
//! splitmix64 round: `s <- splitmix64(s ^ splitmix64(c + GOLDEN))`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a path of counters.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |s, &c| splitmix64(s ^ splitmix64(c.wrapping_add(GOLDEN))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_children() {
        let a = derive(7, &[0, 0]);
        let b = derive(7, &[0, 1]);
        let c = derive(7, &[1, 0]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(b, c);
        assert_eq!(a, derive(7, &[0, 0]));
    }
}
