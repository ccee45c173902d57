//! CSV and JSON emission helpers shared by the experiments and the CLI.

use std::io::{self, Write};

/// Version tag written into the first line of every CSV this crate emits.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Formats `x` with 10 significant digits in a round-trippable form.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (9 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.9e}")
    }
}

/// Writes the versioned header comment, e.g. `# cps-detect csv v1 table1`.
pub fn write_csv_preamble<W: Write>(out: &mut W, kind: &str) -> io::Result<()> {
    writeln!(out, "# cps-detect csv v{CSV_SCHEMA_VERSION} {kind}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(9.837_409_812_3456), "9.837409812");
        assert_eq!(fmt_sig(-0.020_123_456_789_9), "-0.02012345679");
        assert_eq!(fmt_sig(2250.0), "2250");
        assert_eq!(fmt_sig(1.5e-9), "1.500000000e-9");
        assert_eq!(fmt_sig(f64::INFINITY), "inf");
    }

    #[test]
    fn values_round_trip_to_ten_digits() {
        for x in [std::f64::consts::PI, 1.0 / 3.0, 123_456.789_012_345, 7.5e-4] {
            let back: f64 = fmt_sig(x).parse().unwrap();
            assert!(((back - x) / x).abs() < 1e-9);
        }
    }
}
