//! Small helpers shared across modules: a stable 64-bit hash and float
//! routines that avoid `std`-only intrinsics.

/// FNV-1a, 64-bit. Used for template ids and temp-table names; must stay
/// stable across runs and platforms.
#[derive(Clone, Copy)]
pub struct Fnv64(u64);

impl Fnv64 {
    pub fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }

    pub fn write_str(&mut self, s: &str) {
        self.write(s.as_bytes());
        // separator byte so ("ab","c") != ("a","bc")
        self.write(&[0xff]);
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv64 {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fabs(x: f64) -> f64 {
    if x < 0.0 {
        -x
    } else {
        x
    }
}

/// Binary exponentiation; `powi` is not available without `std`.
pub fn powu(base: f64, mut exp: u32) -> f64 {
    let mut acc = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}

/// Relative-tolerance float comparison used wherever results from two
/// arithmetic routes are checked against each other.
pub fn approx_eq(a: f64, b: f64, rel_tol: f64) -> bool {
    if a == b {
        return true;
    }
    let scale = fabs(a).max(fabs(b)).max(1.0);
    fabs(a - b) <= rel_tol * scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_is_stable() {
        let mut h = Fnv64::new();
        h.write_str("lineitem");
        h.write_u64(42);
        let a = h.finish();
        let mut h = Fnv64::new();
        h.write_str("lineitem");
        h.write_u64(42);
        assert_eq!(a, h.finish());
    }

    #[test]
    fn fnv_separates_concatenations() {
        let mut a = Fnv64::new();
        a.write_str("ab");
        a.write_str("c");
        let mut b = Fnv64::new();
        b.write_str("a");
        b.write_str("bc");
        assert_ne!(a.finish(), b.finish());
    }

    #[test]
    fn powu_matches_repeated_multiplication() {
        let mut acc = 1.0;
        for _ in 0..11 {
            acc *= 0.97;
        }
        assert!(approx_eq(powu(0.97, 11), acc, 1e-12));
        assert_eq!(powu(0.5, 0), 1.0);
    }
}
