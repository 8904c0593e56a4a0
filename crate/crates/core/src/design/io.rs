// SPDX-License-Identifier: Apache-2.0

//! On-disk formats: the `design.csv` cell table and the `.tgrid` binary map.
//!
//! A cell table starts with `# key: value` metadata lines followed by a CSV
//! header and one row per cell. A `.tgrid` file is a 16-byte header
//! (`TGRD`, width, height as little-endian `u32`, tile size as `f32`)
//! followed by `w * h` little-endian `f32` values in row-major order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Cell, DesignMeta, PowerMapSet, TileGrid, DEFAULT_HOTSPOT_FRACTION};
use crate::error::{Error, Result};

pub const TGRID_MAGIC: [u8; 4] = *b"TGRD";
const TGRID_HEADER: usize = 16;

const COLUMNS: [&str; 11] = [
    "id", "p_i", "p_s", "p_l", "r_tog", "t_min", "t_max", "x_min", "x_max", "y_min", "y_max",
];

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads a cell table, validating every cell against the header metadata.
pub fn load_design(path: impl AsRef<Path>) -> Result<(DesignMeta, Vec<Cell>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut name = None;
    let mut width = None;
    let mut height = None;
    let mut period = None;
    let mut count = None;
    let mut vdd = None;
    let mut threshold = None;

    let mut body_start = 0;
    let mut meta_lines = 0u64;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.starts_with('#') {
            if trimmed.is_empty() {
                body_start += line.len();
                meta_lines += 1;
                continue;
            }
            break;
        }
        meta_lines += 1;
        body_start += line.len();
        let entry = trimmed.trim_start_matches('#').trim();
        if entry.is_empty() {
            continue;
        }
        let (key, value) = entry
            .split_once(':')
            .ok_or_else(|| parse_err(path, meta_lines, format!("expected `key: value`, got `{entry}`")))?;
        let key = key.trim();
        let value = value.trim();
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| parse_err(path, meta_lines, format!("`{key}` is not a number: `{v}`")))
        };
        match key {
            "name" => name = Some(value.to_string()),
            "W" => width = Some(num(value)?),
            "H" => height = Some(num(value)?),
            "T" => period = Some(num(value)?),
            "C" => {
                count = Some(value.parse::<usize>().map_err(|_| {
                    parse_err(path, meta_lines, format!("`C` is not a count: `{value}`"))
                })?)
            }
            "vdd" => vdd = Some(num(value)?),
            "hotspot_threshold" => threshold = Some(num(value)?),
            other => {
                return Err(parse_err(path, meta_lines, format!("unknown metadata key `{other}`")));
            }
        }
    }

    let missing = |k: &str| parse_err(path, meta_lines, format!("missing metadata key `{k}`"));
    let vdd = vdd.ok_or_else(|| missing("vdd"))?;
    let meta = DesignMeta {
        name: name.unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        }),
        width: width.ok_or_else(|| missing("W"))?,
        height: height.ok_or_else(|| missing("H"))?,
        period: period.ok_or_else(|| missing("T"))?,
        cell_count: count.ok_or_else(|| missing("C"))?,
        vdd,
        hotspot_threshold: threshold.unwrap_or(DEFAULT_HOTSPOT_FRACTION * vdd),
    };
    meta.validate()?;

    let body = &text[body_start..];
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());

    let header_line = meta_lines + 1;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, header_line, e.to_string()))?
        .clone();
    let has_r_eff = match headers.len() {
        11 => false,
        12 if &headers[11] == "r_eff" => true,
        _ => {
            return Err(parse_err(
                path,
                header_line,
                format!("expected header `{}[,r_eff]`", COLUMNS.join(",")),
            ))
        }
    };
    for (i, col) in COLUMNS.iter().enumerate() {
        if &headers[i] != *col {
            return Err(parse_err(
                path,
                header_line,
                format!("column {} should be `{col}`, found `{}`", i + 1, &headers[i]),
            ));
        }
    }

    let mut cells = Vec::with_capacity(meta.cell_count);
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0) + meta_lines;
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0) + meta_lines;
        if record.len() != headers.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let f = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("`{}` is not a number: `{}`", COLUMNS[i], &record[i])))
        };
        let id = record[0]
            .parse::<u64>()
            .map_err(|_| parse_err(path, line, format!("`id` is not an integer: `{}`", &record[0])))?;
        let r_eff = if has_r_eff && !record[11].is_empty() {
            Some(record[11].parse::<f64>().map_err(|_| {
                parse_err(path, line, format!("`r_eff` is not a number: `{}`", &record[11]))
            })?)
        } else {
            None
        };
        let cell = Cell {
            id,
            p_i: f(1)?,
            p_s: f(2)?,
            p_l: f(3)?,
            r_tog: f(4)?,
            t_min: f(5)?,
            t_max: f(6)?,
            x_min: f(7)?,
            x_max: f(8)?,
            y_min: f(9)?,
            y_max: f(10)?,
            r_eff,
        };
        cell.validate(&meta)?;
        cells.push(cell);
    }

    if cells.len() != meta.cell_count {
        return Err(Error::validation(
            format!("design `{}`", meta.name),
            format!("header declares C = {} but table has {} rows", meta.cell_count, cells.len()),
        ));
    }
    Ok((meta, cells))
}

/// Writes a cell table. Floats use the shortest round-tripping form, so
/// saving the same design twice yields identical bytes.
pub fn save_design(meta: &DesignMeta, cells: &[Cell], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let _ = writeln!(out, "# name: {}", meta.name);
    let _ = writeln!(out, "# W: {}", meta.width);
    let _ = writeln!(out, "# H: {}", meta.height);
    let _ = writeln!(out, "# T: {:e}", meta.period);
    let _ = writeln!(out, "# C: {}", cells.len());
    let _ = writeln!(out, "# vdd: {}", meta.vdd);
    let _ = writeln!(out, "# hotspot_threshold: {}", meta.hotspot_threshold);
    let with_r = cells.iter().any(|c| c.r_eff.is_some());
    out.push_str(&COLUMNS.join(","));
    if with_r {
        out.push_str(",r_eff");
    }
    out.push('\n');
    for c in cells {
        let _ = write!(
            out,
            "{},{:e},{:e},{:e},{},{:e},{:e},{},{},{},{}",
            c.id, c.p_i, c.p_s, c.p_l, c.r_tog, c.t_min, c.t_max, c.x_min, c.x_max, c.y_min, c.y_max
        );
        if with_r {
            match c.r_eff {
                Some(r) => {
                    let _ = write!(out, ",{r}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Serializes a grid to `.tgrid`. Values are stored as `f32`.
pub fn save_map(grid: &TileGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_map(grid)?).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_map(grid: &TileGrid) -> Result<Vec<u8>> {
    if let Some(i) = grid.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::validation(
            "tile grid",
            format!("entry {i} is not finite"),
        ));
    }
    let w = u32::try_from(grid.w()).map_err(|_| Error::Format("grid too wide".into()))?;
    let h = u32::try_from(grid.h()).map_err(|_| Error::Format("grid too tall".into()))?;
    let mut buf = Vec::with_capacity(TGRID_HEADER + 4 * grid.len());
    buf.extend_from_slice(&TGRID_MAGIC);
    buf.extend_from_slice(&w.to_le_bytes());
    buf.extend_from_slice(&h.to_le_bytes());
    buf.extend_from_slice(&(grid.l() as f32).to_le_bytes());
    for &v in grid.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

pub fn load_map(path: impl AsRef<Path>) -> Result<TileGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_map(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub(crate) fn decode_map(bytes: &[u8]) -> Result<TileGrid> {
    if bytes.len() < TGRID_HEADER {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[0..4] != TGRID_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let w = u32::from_le_bytes(word(4)) as usize;
    let h = u32::from_le_bytes(word(8)) as usize;
    let l = f32::from_le_bytes(word(12)) as f64;
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(TGRID_HEADER))
        .ok_or_else(|| Error::Format("shape overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "header declares {w}x{h} ({expected} bytes) but payload is {} bytes",
            bytes.len()
        )));
    }
    let data = bytes[TGRID_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    TileGrid::from_vec(w, h, l, data)
}

/// Human-readable export: one CSV row per tile row (`y`), `w` columns.
pub fn save_map_csv(grid: &TileGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(grid.len() * 12);
    for y in 0..grid.h() {
        for x in 0..grid.w() {
            if x > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", grid.get(x, y));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

const MAPS_INDEX: &str = "maps.json";

#[derive(serde::Serialize, serde::Deserialize)]
struct MapsIndex {
    n: usize,
    t: f64,
}

fn instant_file(j: usize) -> String {
    format!("p_t_{j:04}.tgrid")
}

/// Writes a map set as one `.tgrid` per map plus a `maps.json` index.
pub fn save_maps(maps: &PowerMapSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, g) in [
        ("p_i", &maps.p_i),
        ("p_s", &maps.p_s),
        ("p_sca", &maps.p_sca),
        ("p_all", &maps.p_all),
        ("toggle", &maps.toggle),
    ] {
        save_map(g, dir.join(format!("{name}.tgrid")))?;
    }
    for (j, g) in maps.p_t.iter().enumerate() {
        save_map(g, dir.join(instant_file(j + 1)))?;
    }
    let index = serde_json::to_string_pretty(&MapsIndex { n: maps.n, t: maps.t }).expect("plain struct");
    let path = dir.join(MAPS_INDEX);
    fs::write(&path, index).map_err(|e| Error::io(&path, e))
}

pub fn load_maps(dir: impl AsRef<Path>) -> Result<PowerMapSet> {
    let dir = dir.as_ref();
    let path = dir.join(MAPS_INDEX);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: MapsIndex =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let load = |name: &str| load_map(dir.join(name));
    let maps = PowerMapSet {
        p_i: load("p_i.tgrid")?,
        p_s: load("p_s.tgrid")?,
        p_sca: load("p_sca.tgrid")?,
        p_all: load("p_all.tgrid")?,
        toggle: load("toggle.tgrid")?,
        p_t: (1..=index.n).map(|j| load(&instant_file(j))).collect::<Result<_>>()?,
        n: index.n,
        t: index.t,
    };
    for g in [&maps.p_i, &maps.p_s, &maps.p_sca, &maps.toggle].into_iter().chain(&maps.p_t) {
        maps.p_all.check_same_shape(g)?;
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn map_set_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut grid = || TileGrid::from_vec(5, 3, 2.0, (0..15).map(|_| f64::from(rng.gen::<f32>())).collect()).unwrap();
        let maps = PowerMapSet {
            p_i: grid(),
            p_s: grid(),
            p_sca: grid(),
            p_all: grid(),
            toggle: grid(),
            p_t: vec![grid(), grid(), grid()],
            n: 3,
            t: 2.5e-10,
        };
        let dir = tempfile::tempdir().unwrap();
        save_maps(&maps, dir.path().join("m")).unwrap();
        assert_eq!(load_maps(dir.path().join("m")).unwrap(), maps);
        fs::remove_file(dir.path().join("m").join("p_t_0002.tgrid")).unwrap();
        assert!(load_maps(dir.path().join("m")).is_err());
        assert!(load_maps(dir.path().join("missing")).is_err());
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const HEADER: &str = "# W: 100\n# H: 100\n# T: 1e-9\n# vdd: 0.94\n";
    const COLS: &str = "id,p_i,p_s,p_l,r_tog,t_min,t_max,x_min,x_max,y_min,y_max\n";

    #[test]
    fn loads_minimal_design() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}# C: 1\n{COLS}0,2e-6,3e-6,5e-7,0.4,1e-10,4e-10,1,3,2,2.5\n");
        let p = write(&dir, "mini.csv", &body);
        let (meta, cells) = load_design(&p).unwrap();
        assert_eq!(meta.name, "mini");
        assert_eq!(meta.cell_count, 1);
        assert!((meta.hotspot_threshold - 0.06 * 0.94).abs() < 1e-15);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].p_s, 3e-6);
        assert_eq!(cells[0].r_eff, None);
    }

    #[test]
    fn rejects_inverted_arrival_window() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{HEADER}# C: 1\n{COLS}42,2e-6,3e-6,5e-7,0.4,5e-10,4e-10,1,3,2,2.5\n");
        let p = write(&dir, "bad.csv", &body);
        let err = load_design(&p).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }));
        let msg = err.to_string();
        assert!(msg.contains("cell 42") && msg.contains("t_min"), "{msg}");
    }

    #[test]
    fn empty_design_is_legal() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "empty.csv", &format!("{HEADER}# C: 0\n{COLS}"));
        let (meta, cells) = load_design(&p).unwrap();
        assert_eq!(meta.cell_count, 0);
        assert!(cells.is_empty());
    }

    #[test]
    fn malformed_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}# C: 2\n{COLS}0,2e-6,3e-6,5e-7,0.4,1e-10,4e-10,1,3,2,2.5\n1,abc,3e-6,5e-7,0.4,1e-10,4e-10,1,3,2,2.5\n"
        );
        let p = write(&dir, "m.csv", &body);
        match load_design(&p).unwrap_err() {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 8, "{msg}");
                assert!(msg.contains("p_i"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn row_count_must_match_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "c.csv", &format!("{HEADER}# C: 3\n{COLS}"));
        assert!(load_design(&p).is_err());
    }

    #[test]
    fn design_round_trip_with_r_eff() {
        let dir = tempfile::tempdir().unwrap();
        let meta = DesignMeta {
            name: "rt".into(),
            width: 20.0,
            height: 10.0,
            period: 1.25e-9,
            cell_count: 2,
            vdd: 0.9,
            hotspot_threshold: 0.054,
        };
        let cells = vec![
            Cell {
                id: 0,
                p_i: 1.234567890123e-6,
                p_s: 0.1e-6,
                p_l: 3e-9,
                r_tog: 0.1,
                t_min: 0.0,
                t_max: 1e-10,
                x_min: 0.1,
                x_max: 0.7,
                y_min: 3.3,
                y_max: 4.0,
                r_eff: Some(451.5),
            },
            Cell {
                id: 1,
                p_i: 0.0,
                p_s: 0.0,
                p_l: 0.0,
                r_tog: 1.0,
                t_min: 1e-10,
                t_max: 1.25e-9,
                x_min: 19.0,
                x_max: 20.0,
                y_min: 9.5,
                y_max: 10.0,
                r_eff: Some(448.0),
            },
        ];
        let p = dir.path().join("rt.csv");
        save_design(&meta, &cells, &p).unwrap();
        let (m2, c2) = load_design(&p).unwrap();
        assert_eq!(m2, meta);
        assert_eq!(c2, cells);
    }

    #[test]
    fn zero_grid_round_trips() {
        let g = TileGrid::zeros(2, 2, 1.0);
        assert_eq!(decode_map(&encode_map(&g).unwrap()).unwrap(), g);
    }

    #[test]
    fn nan_grid_is_rejected() {
        let g = TileGrid::from_vec(2, 1, 1.0, vec![0.0, f64::NAN]).unwrap();
        assert!(matches!(save_map(&g, "/nonexistent/x.tgrid"), Err(Error::Validation { .. })));
    }

    #[test]
    fn large_random_grid_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(300_400);
        let data: Vec<f64> = (0..300 * 400).map(|_| (rng.gen::<f32>() * 1e-3) as f64).collect();
        let g = TileGrid::from_vec(300, 400, 0.5, data).unwrap();
        let p = dir.path().join("r.tgrid");
        save_map(&g, &p).unwrap();
        let first = fs::read(&p).unwrap();
        let back = load_map(&p).unwrap();
        assert_eq!(back, g);
        save_map(&back, &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let g = TileGrid::zeros(3, 3, 1.0);
        let mut bytes = encode_map(&g).unwrap();
        bytes.pop();
        assert!(matches!(decode_map(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_map(&g).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_map(&bytes), Err(Error::Format(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn base() -> (DesignMeta, Cell) {
            (
                DesignMeta {
                    name: "p".into(),
                    width: 50.0,
                    height: 40.0,
                    period: 1.0,
                    cell_count: 1,
                    vdd: 1.0,
                    hotspot_threshold: 0.06,
                },
                Cell {
                    id: 3,
                    p_i: 1.0,
                    p_s: 1.0,
                    p_l: 0.1,
                    r_tog: 0.5,
                    t_min: 0.2,
                    t_max: 0.6,
                    x_min: 10.0,
                    x_max: 12.0,
                    y_min: 5.0,
                    y_max: 6.0,
                    r_eff: Some(1.0),
                },
            )
        }

        proptest! {
            #[test]
            fn mutated_records_are_rejected(field in 0usize..12, bad in prop_oneof![
                Just(-1.0f64), Just(f64::NAN), Just(1e9), Just(-1e-12)
            ]) {
                let (meta, mut c) = base();
                // each mutation below breaks exactly one invariant
                match field {
                    0 => c.p_i = bad.min(-1e-12),
                    1 => c.p_s = bad.min(-1e-12),
                    2 => c.p_l = bad.min(-1e-12),
                    3 => c.r_tog = if bad.is_nan() { bad } else { 1.0 + bad.abs() },
                    4 => c.t_min = c.t_max + bad.abs().max(1e-3),
                    5 => c.t_max = meta.period + bad.abs().max(1e-3),
                    6 => c.x_min = c.x_max + bad.abs().max(1e-3),
                    7 => c.y_max = c.y_min - bad.abs().max(1e-3),
                    8 => c.x_max = meta.width + bad.abs().max(1e-3),
                    9 => c.y_min = -bad.abs().max(1e-3),
                    10 => c.r_eff = Some(-bad.abs()),
                    _ => c.t_min = -bad.abs().max(1e-3),
                }
                prop_assert!(c.validate(&meta).is_err());
            }
        }
    }
}
