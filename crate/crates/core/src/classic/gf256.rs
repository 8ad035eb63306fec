//! GF(2⁸) with primitive polynomial `x⁸ + x⁴ + x³ + x² + 1` (0x11D), α = 2.

const POLY: u16 = 0x11D;

const fn build_tables() -> ([u8; 512], [u8; 256]) {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        log[x as usize] = i as u8;
        x <<= 1;
        if x & 0x100 != 0 {
            x ^= POLY;
        }
        i += 1;
    }
    while i < 512 {
        exp[i] = exp[i - 255];
        i += 1;
    }
    (exp, log)
}

const TABLES: ([u8; 512], [u8; 256]) = build_tables();
const EXP: [u8; 512] = TABLES.0;
const LOG: [u8; 256] = TABLES.1;

pub fn add(a: u8, b: u8) -> u8 {
    a ^ b
}

pub fn mul(a: u8, b: u8) -> u8 {
    if a == 0 || b == 0 {
        return 0;
    }
    EXP[LOG[a as usize] as usize + LOG[b as usize] as usize]
}

/// # Panics
/// On division by zero.
pub fn div(a: u8, b: u8) -> u8 {
    assert!(b != 0, "division by zero in GF(256)");
    if a == 0 {
        return 0;
    }
    EXP[LOG[a as usize] as usize + 255 - LOG[b as usize] as usize]
}

pub fn inv(a: u8) -> u8 {
    div(1, a)
}

/// `α^i` for any integer exponent.
pub fn alpha_pow(i: i64) -> u8 {
    EXP[i.rem_euclid(255) as usize]
}

/// Discrete log base α; `None` for zero.
pub fn log(a: u8) -> Option<u8> {
    (a != 0).then(|| LOG[a as usize])
}

/// Evaluates a polynomial with coefficients in descending degree order.
pub fn poly_eval_desc(p: &[u8], x: u8) -> u8 {
    p.iter().fold(0, |acc, &c| mul(acc, x) ^ c)
}

/// Evaluates a polynomial with coefficients in ascending degree order.
pub fn poly_eval_asc(p: &[u8], x: u8) -> u8 {
    p.iter().rev().fold(0, |acc, &c| mul(acc, x) ^ c)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bitwise carry-less multiply with reduction, independent of the tables.
    fn slow_mul(mut a: u8, mut b: u8) -> u8 {
        let mut p = 0u8;
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            let carry = a & 0x80 != 0;
            a <<= 1;
            if carry {
                a ^= (POLY & 0xFF) as u8;
            }
            b >>= 1;
        }
        p
    }

    #[test]
    fn tables_match_slow_multiply() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                assert_eq!(mul(a, b), slow_mul(a, b));
            }
        }
    }

    #[test]
    fn field_axioms_exhaustive() {
        for a in 0..=255u8 {
            assert_eq!(add(a, 0), a);
            assert_eq!(mul(a, 1), a);
            assert_eq!(add(a, a), 0);
            if a != 0 {
                assert_eq!(mul(a, inv(a)), 1);
            }
            for b in 0..=255u8 {
                assert_eq!(mul(a, b), mul(b, a));
                for c in (0..=255u8).step_by(7) {
                    assert_eq!(mul(a, add(b, c)), add(mul(a, b), mul(a, c)));
                    assert_eq!(mul(a, mul(b, c)), mul(mul(a, b), c));
                }
            }
        }
    }

    #[test]
    fn distributivity_all_triples() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                let ab = mul(a, b);
                for c in 0..=255u8 {
                    assert_eq!(mul(a, b ^ c), ab ^ mul(a, c));
                }
            }
        }
    }

    #[test]
    fn alpha_is_primitive() {
        let mut seen = [false; 256];
        for i in 0..255 {
            let x = alpha_pow(i);
            assert!(!seen[x as usize]);
            seen[x as usize] = true;
        }
        assert_eq!(alpha_pow(255), 1);
        assert_eq!(alpha_pow(-1), inv(2));
    }
}
