//! Plain-text gain container.
//!
//! ```text
//! netlq-gains 1
//! state_dim 2
//! input_dim 1
//! controllers 2
//! horizon 50
//! mode perfect
//! seed 1
//! n_samples 4000
//! spec_hash 3f0a…
//! L 0 0 1 2
//! -1.25 0.5
//! L 0 1 1 4
//! …
//! ```
//!
//! Each `L i k rows cols` line is followed by `rows` lines of row-major
//! entries. Floats are written in shortest round-trip form, so reading a
//! container back reproduces the schedule bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::discretization::PlantSpec;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::network::{InfoMode, NetworkSpec};
use crate::solver::GainSchedule;

const MAGIC: &str = "netlq-gains 1";

#[derive(Serialize)]
struct HashedSpec<'a> {
    plant: &'a PlantSpec,
    network: &'a NetworkSpec,
}

/// SHA-256 of the canonical TOML rendering of the plant and network.
pub fn spec_hash(plant: &PlantSpec, network: &NetworkSpec) -> String {
    let text = toml::to_string(&HashedSpec { plant, network }).expect("specs serialize to TOML");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn render_schedule(schedule: &GainSchedule) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "state_dim {}", schedule.state_dim);
    let _ = writeln!(out, "input_dim {}", schedule.input_dim);
    let _ = writeln!(out, "controllers {}", schedule.controllers);
    let _ = writeln!(out, "horizon {}", schedule.horizon);
    let _ = writeln!(out, "mode {}", schedule.mode);
    let _ = writeln!(out, "seed {}", schedule.seed);
    let _ = writeln!(out, "n_samples {}", schedule.n_samples);
    let _ = writeln!(out, "spec_hash {}", schedule.spec_hash);
    for (i, per) in schedule.gains.iter().enumerate() {
        for (k, l) in per.iter().enumerate() {
            let _ = writeln!(out, "L {i} {k} {} {}", l.nrows(), l.ncols());
            for r in 0..l.nrows() {
                let row: Vec<String> = l.row(r).iter().map(|v| format!("{v:?}")).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        }
    }
    out
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, contents)?;
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

pub fn write_schedule(schedule: &GainSchedule, path: &Path) -> Result<()> {
    schedule.validate()?;
    write_atomic(path, render_schedule(schedule).as_bytes())
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(n, l)| (n + 1, l))
            .ok_or_else(|| Error::Container("unexpected end of file".into()))
    }

    fn field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (n, line) = self.next_line()?;
        let value = line
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| Error::Container(format!("line {n}: expected `{key} <value>`")))?;
        value
            .trim()
            .parse()
            .map_err(|_| Error::Container(format!("line {n}: bad value for {key}: {value}")))
    }
}

pub fn parse_schedule(text: &str) -> Result<GainSchedule> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (_, first) = lines.next_line()?;
    if first.trim() != MAGIC {
        return Err(Error::Container(format!("line 1: expected `{MAGIC}`")));
    }
    let state_dim: usize = lines.field("state_dim")?;
    let input_dim: usize = lines.field("input_dim")?;
    let controllers: usize = lines.field("controllers")?;
    let horizon: usize = lines.field("horizon")?;
    let mode: InfoMode = lines.field("mode")?;
    let seed: u64 = lines.field("seed")?;
    let n_samples: usize = lines.field("n_samples")?;
    let spec_hash: String = lines.field("spec_hash")?;
    let mut gains = vec![Vec::with_capacity(horizon); controllers];
    for (i, per) in gains.iter_mut().enumerate() {
        for k in 0..horizon {
            let (n, head) = lines.next_line()?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            let want = [i.to_string(), k.to_string()];
            if parts.len() != 5 || parts[0] != "L" || parts[1] != want[0] || parts[2] != want[1] {
                return Err(Error::Container(format!("line {n}: expected `L {i} {k} <rows> <cols>`")));
            }
            let rows: usize = parts[3].parse().map_err(|_| Error::Container(format!("line {n}: bad row count")))?;
            let cols: usize = parts[4].parse().map_err(|_| Error::Container(format!("line {n}: bad column count")))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (n, line) = lines.next_line()?;
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Container(format!("line {n}: bad number")))?;
                if row.len() != cols {
                    return Err(Error::Container(format!("line {n}: expected {cols} entries, found {}", row.len())));
                }
                data.extend(row);
            }
            per.push(Mat::from_row_slice(rows, cols, &data));
        }
    }
    if let Some((n, extra)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::Container(format!("line {}: trailing content `{extra}`", n + 1)));
    }
    let schedule = GainSchedule {
        state_dim,
        input_dim,
        controllers,
        horizon,
        mode,
        seed,
        n_samples,
        spec_hash,
        gains,
    };
    schedule.validate()?;
    Ok(schedule)
}

pub fn read_schedule(path: &Path) -> Result<GainSchedule> {
    parse_schedule(&std::fs::read_to_string(path)?)
}

/// Fails unless `schedule` was solved for exactly this plant and network.
pub fn check_compatible(schedule: &GainSchedule, plant: &PlantSpec, network: &NetworkSpec) -> Result<()> {
    let expected = spec_hash(plant, network);
    if schedule.spec_hash != expected {
        return Err(Error::Compatibility {
            expected,
            found: schedule.spec_hash.clone(),
        });
    }
    Ok(())
}

/// `controller,k,row,a_1..a_M` rows of the state-feedback blocks `A_i^k`.
pub fn write_state_blocks_csv(schedule: &GainSchedule, path: &Path) -> Result<()> {
    let mut out = String::from("controller,k,row");
    for c in 1..=schedule.state_dim {
        let _ = write!(out, ",a_{c}");
    }
    out.push('\n');
    for i in 0..schedule.controllers {
        for k in 0..schedule.horizon {
            let a = schedule.state_block(i, k);
            for r in 0..a.nrows() {
                let _ = write!(out, "{},{k},{}", i + 1, r + 1);
                for v in a.row(r).iter() {
                    let _ = write!(out, ",{v}");
                }
                out.push('\n');
            }
        }
    }
    write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{DelayModel, NetworkSpec};
    use nalgebra::dmatrix;

    fn schedule() -> GainSchedule {
        let gains = (0..2)
            .map(|i| {
                (0..3)
                    .map(|k| Mat::from_fn(1, 2 + 2 * k, |_, c| (i as f64 + 1.0) / (c as f64 + 3.0) - 0.1 * k as f64))
                    .collect()
            })
            .collect();
        GainSchedule {
            state_dim: 2,
            input_dim: 1,
            controllers: 2,
            horizon: 3,
            mode: InfoMode::Imperfect,
            seed: 17,
            n_samples: 100,
            spec_hash: "abc".into(),
            gains,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let s = schedule();
        let back = parse_schedule(&render_schedule(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn file_round_trip_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        write_schedule(&schedule(), &path).unwrap();
        assert_eq!(read_schedule(&path).unwrap(), schedule());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn truncated_container_rejected() {
        let text = render_schedule(&schedule());
        let cut = &text[..text.len() / 2];
        assert!(matches!(parse_schedule(cut), Err(Error::Container(_))));
        assert!(parse_schedule("hello").is_err());
    }

    #[test]
    fn hash_tracks_specs() {
        let plant = PlantSpec {
            a: dmatrix![0.0, 1.0; -3.0, -4.0],
            b: vec![dmatrix![0.0; 1.0]],
            period: 0.05,
            horizon: 5,
            q_terminal: Mat::identity(2, 2),
            q_stage: Mat::identity(2, 2),
            r: vec![dmatrix![1.0]],
            x0: vec![0.2, 0.1],
        };
        let net = NetworkSpec::homogeneous(1, DelayModel::uniform(1.0), 0.9, InfoMode::Perfect);
        let h = spec_hash(&plant, &net);
        assert_eq!(h, spec_hash(&plant, &net.clone()));
        assert_eq!(h.len(), 64);
        assert_ne!(h, spec_hash(&plant.with_horizon(6), &net));
        let mut s = schedule();
        s.spec_hash = h;
        assert!(check_compatible(&s, &plant, &net).is_ok());
        assert!(matches!(
            check_compatible(&s, &plant, &net.with_mode(InfoMode::Imperfect)),
            Err(Error::Compatibility { .. })
        ));
    }

    #[test]
    fn state_block_csv_has_one_row_per_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        write_state_blocks_csv(&schedule(), &path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 3);
    }
}
