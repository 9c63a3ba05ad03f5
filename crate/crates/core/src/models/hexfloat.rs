//! Exact text encoding of `f64` as C99-style hexadecimal float literals.

const FRAC_BITS: u32 = 52;
const FRAC_MASK: u64 = (1 << FRAC_BITS) - 1;

/// Formats a finite `f64` as e.g. `0x1.8p+1` (= 3.0). Non-finite values
/// are rejected by the caller; this function formats them as `nan`/`inf`.
pub fn format(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let bits = v.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let biased = ((bits >> FRAC_BITS) & 0x7ff) as i64;
    let frac = bits & FRAC_MASK;
    if biased == 0 && frac == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if biased == 0 { (0, -1022) } else { (1, biased - 1023) };
    let digits = format!("{frac:013x}");
    let digits = digits.trim_end_matches('0');
    if digits.is_empty() {
        format!("{sign}0x{lead}p{exp:+}")
    } else {
        format!("{sign}0x{lead}.{digits}p{exp:+}")
    }
}

pub fn parse(s: &str) -> Option<f64> {
    let s = s.trim();
    let (negative, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let rest = rest.strip_prefix("0x").or_else(|| rest.strip_prefix("0X"))?;
    let (mantissa, exp) = rest.split_once(['p', 'P'])?;
    let exp: i64 = exp.parse().ok()?;
    let (lead, digits) = match mantissa.split_once('.') {
        Some((l, d)) => (l, d),
        None => (mantissa, ""),
    };
    if digits.len() > 13 || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
        return None;
    }
    let frac = if digits.is_empty() {
        0
    } else {
        u64::from_str_radix(digits, 16).ok()? << (4 * (13 - digits.len()))
    };
    let bits = match lead {
        "1" => {
            let biased = exp + 1023;
            if !(1..=2046).contains(&biased) {
                return None;
            }
            ((biased as u64) << FRAC_BITS) | frac
        }
        "0" if frac == 0 => 0,
        "0" if exp == -1022 => frac,
        _ => return None,
    };
    let sign = if negative { 1u64 << 63 } else { 0 };
    Some(f64::from_bits(sign | bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_literals() {
        assert_eq!(format(3.0), "0x1.8p+1");
        assert_eq!(format(1.0), "0x1p+0");
        assert_eq!(format(-0.5), "-0x1p-1");
        assert_eq!(format(0.0), "0x0p+0");
        assert_eq!(format(-0.0), "-0x0p+0");
        assert_eq!(parse("0x1.8p+1"), Some(3.0));
        assert_eq!(parse("0x1p-1074"), None);
        assert_eq!(parse("0x0.0000000000001p-1022"), Some(f64::from_bits(1)));
        assert_eq!(parse("1.5"), None);
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(bits in any::<u64>()) {
            let v = f64::from_bits(bits);
            prop_assume!(v.is_finite());
            let back = parse(&format(v)).unwrap();
            prop_assert_eq!(back.to_bits(), bits);
        }
    }
}
