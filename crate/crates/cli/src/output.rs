//! Trajectory CSV and JSON writers.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use herding_core::sim::TrajectoryLog;
use tempfile::NamedTempFile;

/// Scientific notation with 17 significant digits and a signed three-digit exponent.
///
/// Every finite value renders to the same width and parses back to the identical `f64`.
pub fn sci(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{:+.16e}", v);
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    format!("{mantissa}e{}{:03}", if exp < 0 { '-' } else { '+' }, exp.abs())
}

pub fn csv_header(m: usize, n: usize, pairs: &[(usize, usize)]) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..m).flat_map(|i| [format!("ex_{i}"), format!("ey_{i}")]));
    cols.extend((0..n).flat_map(|k| [format!("hx_{k}"), format!("hy_{k}")]));
    cols.extend((0..n).flat_map(|k| [format!("ux_{k}"), format!("uy_{k}")]));
    cols.extend((0..m).map(|i| format!("h1_{i}")));
    cols.extend(pairs.iter().map(|(i, j)| format!("h2_{i}_{j}")));
    cols.push("relaxed".into());
    cols.join(",")
}

pub fn trajectory_csv(log: &TrajectoryLog, m: usize, n: usize) -> String {
    let mut out = csv_header(m, n, &log.pairs);
    out.push('\n');
    for r in &log.records {
        let mut fields = vec![sci(r.t)];
        for p in r.evaders.iter().chain(&r.herders).chain(&r.u_h) {
            fields.push(sci(p.x));
            fields.push(sci(p.y));
        }
        fields.extend(r.h1_pos.iter().chain(&r.h2_pos).map(|&v| sci(v)));
        fields.push(u8::from(r.relaxed).to_string());
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sci_round_trips_and_has_fixed_width() {
        let values = [
            0.0,
            -0.0,
            1.0,
            -1.0,
            0.1,
            1.0 / 3.0,
            std::f64::consts::PI * 1e-300,
            f64::MAX,
            f64::MIN_POSITIVE,
            5e-324,
            -123456.789e10,
        ];
        for v in values {
            let s = sci(v);
            assert_eq!(s.len(), 24, "{s}");
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(sci(1.5), "+1.5000000000000000e+000");
        assert_eq!(sci(-2.5e-7), "-2.4999999999999999e-007");
        assert_eq!(sci(-0.125), "-1.2500000000000000e-001");
    }

    #[test]
    fn header_orders_columns_by_kind_then_index() {
        assert_eq!(
            csv_header(2, 2, &[(0, 1)]),
            "t,ex_0,ey_0,ex_1,ey_1,hx_0,hy_0,hx_1,hy_1,ux_0,uy_0,ux_1,uy_1,h1_0,h1_1,h2_0_1,relaxed"
        );
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
