//! Plain-text CSI files.
//!
//! ```text
//! M N sigmaH2
//! re+imj re+imj ...   (M lines of N entries)
//! ```
//!
//! Numbers are written in scientific notation with 17 significant digits, so
//! every `f64` survives a write/read cycle exactly.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_entry(z: Complex64) -> String {
    let im = fmt_real(z.im);
    let sign = if im.starts_with('-') { "" } else { "+" };
    format!("{}{sign}{im}j", fmt_real(z.re))
}

pub fn parse_entry(s: &str) -> Result<Complex64> {
    let bad = || Error::CsiFormat(format!("malformed entry `{s}`"));
    let body = s.strip_suffix('j').ok_or_else(bad)?;
    // The imaginary part starts at the last sign that is not an exponent sign.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| matches!(bytes[i], b'+' | b'-') && !matches!(bytes[i - 1], b'e' | b'E'))
        .ok_or_else(bad)?;
    let re: f64 = body[..split].parse().map_err(|_| bad())?;
    let im: f64 = body[split..].trim_start_matches('+').parse().map_err(|_| bad())?;
    if !re.is_finite() || !im.is_finite() {
        return Err(bad());
    }
    Ok(Complex64::new(re, im))
}

pub fn write_csi<W: Write>(w: &mut W, h: &ComplexMatrix<f64>, noise_variance: f64) -> Result<()> {
    writeln!(w, "{} {} {}", h.rows(), h.cols(), fmt_real(noise_variance))?;
    for i in 0..h.rows() {
        let line: Vec<String> = h.row(i).iter().map(|&z| format_entry(z)).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_csi<R: Read>(r: R) -> Result<(ComplexMatrix<f64>, f64)> {
    let mut lines = BufReader::new(r).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::CsiFormat("empty file".into()))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::CsiFormat(format!("header must be `M N sigmaH2`, got `{header}`")));
    }
    let dim = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::CsiFormat(format!("bad dimension `{s}`")))
    };
    let (m, n) = (dim(fields[0])?, dim(fields[1])?);
    let sigma: f64 = fields[2]
        .parse()
        .ok()
        .filter(|v: &f64| *v >= 0.0 && v.is_finite())
        .ok_or_else(|| Error::CsiFormat(format!("bad noise variance `{}`", fields[2])))?;

    let mut data = Vec::with_capacity(m * n);
    for row in 0..m {
        let line = lines
            .next()
            .ok_or_else(|| Error::CsiFormat(format!("expected {m} rows, found {row}")))??;
        let entries: Vec<&str> = line.split_whitespace().collect();
        if entries.len() != n {
            return Err(Error::CsiFormat(format!(
                "row {}: expected {n} entries, found {}",
                row + 1,
                entries.len()
            )));
        }
        for e in entries {
            data.push(parse_entry(e)?);
        }
    }
    for rest in lines {
        if !rest?.trim().is_empty() {
            return Err(Error::CsiFormat(format!("more than {m} rows")));
        }
    }
    Ok((ComplexMatrix::from_vec(m, n, data)?, sigma))
}

pub fn save_csi(path: &Path, h: &ComplexMatrix<f64>, noise_variance: f64) -> Result<()> {
    let mut buf = Vec::new();
    write_csi(&mut buf, h, noise_variance)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_csi(path: &Path) -> Result<(ComplexMatrix<f64>, f64)> {
    read_csi(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn entry_format() {
        assert_eq!(format_entry(Complex64::new(1.0, -0.5)), "1.0000000000000000e0-5.0000000000000000e-1j");
        assert_eq!(format_entry(Complex64::new(-2.0, 3e-20)), "-2.0000000000000000e0+3.0000000000000003e-20j");
        assert_eq!(parse_entry("1.5e-3-2e+2j").unwrap(), Complex64::new(1.5e-3, -200.0));
        assert_eq!(parse_entry("-1+2j").unwrap(), Complex64::new(-1.0, 2.0));
        for bad in ["1+2", "1j", "abc+1j", "1+nanj", "+j"] {
            assert!(parse_entry(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn file_round_trip_is_byte_stable() {
        let h = ComplexMatrix::from_rows(&[
            vec![Complex64::new(0.1, -0.2), Complex64::new(1.0 / 3.0, 2.0f64.sqrt())],
            vec![Complex64::new(-1e-300, 7.0), Complex64::new(0.0, -0.0)],
        ]);
        let mut a = Vec::new();
        write_csi(&mut a, &h, 0.125).unwrap();
        let (back, s) = read_csi(a.as_slice()).unwrap();
        assert_eq!(back, h);
        assert_eq!(s, 0.125);
        let mut b = Vec::new();
        write_csi(&mut b, &back, s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_files() {
        for text in [
            "",
            "2 2\n",
            "2 x 0.1\n",
            "1 1 -1\n1+1j\n",
            "2 1 0.1\n1+1j\n",
            "1 2 0.1\n1+1j\n",
            "1 1 0.1\n1+1j\n2+2j\n",
        ] {
            assert!(matches!(read_csi(text.as_bytes()), Err(Error::CsiFormat(_))), "{text:?}");
        }
    }

    proptest! {
        #[test]
        fn any_finite_entry_round_trips(re in proptest::num::f64::NORMAL | proptest::num::f64::ZERO, im in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL) {
            let z = Complex64::new(re, im);
            prop_assert_eq!(parse_entry(&format_entry(z)).unwrap(), z);
        }
    }
}
