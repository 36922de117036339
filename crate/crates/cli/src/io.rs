//! Plain-text tables exchanged between subcommands.
//!
//! Transform tables hold one row per frame: the index, the 16 entries of the
//! 4×4 matrix in row-major order, and the group tag. Twist tables hold the
//! index, the twist coordinates and the tag.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use flowstab::lie::{AffineTransform, GroupTag, Twist};
use nalgebra::Matrix4;

pub fn flow_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("flow_{i:04}.qsf"))
}

pub fn depth_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("depth_{i:04}.png"))
}

pub fn image_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("image_{i:04}.png"))
}

/// Number of consecutive `depth_NNNN.png` files starting at zero.
pub fn count_frames(dir: &Path) -> usize {
    (0..).take_while(|&i| depth_path(dir, i).exists()).count()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn format_transforms(rows: &[AffineTransform]) -> String {
    let mut s = String::from("frame");
    for r in 0..4 {
        for c in 0..4 {
            let _ = write!(s, ",m{r}{c}");
        }
    }
    s.push_str(",group\n");
    for (i, g) in rows.iter().enumerate() {
        let m = g.matrix();
        let _ = write!(s, "{i}");
        for r in 0..4 {
            for c in 0..4 {
                let _ = write!(s, ",{}", m[(r, c)]);
            }
        }
        let _ = writeln!(s, ",{}", g.tag());
    }
    s
}

pub fn format_twists(rows: &[Twist]) -> String {
    let n = rows.first().map_or(0, |t| t.tag().dim());
    let mut s = String::from("frame");
    for k in 0..n {
        let _ = write!(s, ",c{k}");
    }
    s.push_str(",group\n");
    for (i, t) in rows.iter().enumerate() {
        let _ = write!(s, "{i}");
        for c in t.coords().iter() {
            let _ = write!(s, ",{c}");
        }
        let _ = writeln!(s, ",{}", t.tag());
    }
    s
}

/// Data rows of a table as (line number, fields), skipping the header,
/// comments and blank lines. Frame indices must count up from zero.
fn rows(text: &str) -> Result<Vec<(usize, Vec<&str>)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("frame") {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| anyhow!("line {}: bad frame index {:?}", n + 1, fields[0]))?;
        if idx != out.len() {
            bail!("line {}: expected frame {}, found {idx}", n + 1, out.len());
        }
        out.push((n + 1, fields));
    }
    Ok(out)
}

fn numbers(line: usize, fields: &[&str]) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| anyhow!("line {line}: bad number {s:?}")))
        .collect()
}

pub fn parse_transforms(text: &str) -> Result<Vec<AffineTransform>> {
    rows(text)?
        .into_iter()
        .map(|(line, f)| {
            if f.len() != 18 {
                bail!("line {line}: expected 18 fields, found {}", f.len());
            }
            let tag: GroupTag = f[17].parse().map_err(|e| anyhow!("line {line}: {e}"))?;
            let m = Matrix4::from_row_slice(&numbers(line, &f[1..17])?);
            AffineTransform::new(tag, m).map_err(|e| anyhow!("line {line}: {e}"))
        })
        .collect()
}

pub fn parse_twists(text: &str) -> Result<Vec<Twist>> {
    rows(text)?
        .into_iter()
        .map(|(line, f)| {
            let tag: GroupTag = f[f.len() - 1].parse().map_err(|e| anyhow!("line {line}: {e}"))?;
            if f.len() != tag.dim() + 2 {
                bail!("line {line}: expected {} fields for {tag}, found {}", tag.dim() + 2, f.len());
            }
            Twist::from_slice(tag, &numbers(line, &f[1..f.len() - 1])?).map_err(|e| anyhow!("line {line}: {e}"))
        })
        .collect()
}

pub fn read_transforms(path: &Path) -> Result<Vec<AffineTransform>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_transforms(&text).with_context(|| format!("in {}", path.display()))
}

pub fn read_twists(path: &Path) -> Result<Vec<Twist>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_twists(&text).with_context(|| format!("in {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use flowstab::lie::group_from_twist;

    #[test]
    fn tables_round_trip_exactly() {
        for tag in GroupTag::ALL {
            let twists: Vec<Twist> = (0..5)
                .map(|i| {
                    let c: Vec<f64> = (0..tag.dim()).map(|k| 0.013 * ((i * 7 + k) as f64).sin()).collect();
                    Twist::from_slice(tag, &c).unwrap()
                })
                .collect();
            assert_eq!(parse_twists(&format_twists(&twists)).unwrap(), twists);
            let gs: Vec<AffineTransform> = twists.iter().map(group_from_twist).collect();
            assert_eq!(parse_transforms(&format_transforms(&gs)).unwrap(), gs);
        }
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let err = parse_twists("frame,c0,group\n0,1,2,3,4,5,6,se3\n2,1,2,3,4,5,6,se3\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(parse_twists("0,1,2,se3\n").is_err());
        assert!(parse_transforms("0,1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1,gl3\n").is_err());
    }
}
