//! Corner-list text files: one corner per line,
//! `view_id camera grid_row grid_col x y`, whitespace separated, `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{BoardSpec, Camera, CornerObservation};
use crate::geometry::ImagePoint;
use crate::{Error, Result};

pub fn read_corner_file(path: &Path, board: &BoardSpec) -> Result<Vec<CornerObservation>> {
    let text = std::fs::read_to_string(path)?;
    parse_corner_file(&text, board).map_err(|e| match e {
        Error::Format {
            node, line, message, ..
        } => Error::Format {
            path: path.to_path_buf(),
            node,
            line,
            message,
        },
        other => other,
    })
}

/// Parses corner lines into one observation per (view, camera), ordered by
/// view then camera. Every grid cell must be present exactly once.
pub fn parse_corner_file(text: &str, board: &BoardSpec) -> Result<Vec<CornerObservation>> {
    let fail = |line: usize, message: String| Error::Format {
        path: "<corners>".into(),
        node: "corner".into(),
        line,
        message,
    };
    let n = board.corner_count();
    let mut grids: BTreeMap<(usize, Camera), Vec<Option<ImagePoint>>> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(fail(line_no, format!("expected 6 fields, found {}", fields.len())));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| fail(line_no, format!("`{s}` is not a non-negative integer")))
        };
        let float = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(line_no, format!("`{s}` is not a finite number")))
        };
        let view = int(fields[0])?;
        let camera: Camera = fields[1]
            .parse()
            .map_err(|_| fail(line_no, format!("unknown camera `{}`", fields[1])))?;
        let row = int(fields[2])?;
        let col = int(fields[3])?;
        if row >= board.inner_rows || col >= board.inner_cols {
            return Err(fail(
                line_no,
                format!(
                    "grid cell ({row}, {col}) outside {}x{} board",
                    board.inner_rows, board.inner_cols
                ),
            ));
        }
        let point = ImagePoint::new(float(fields[4])?, float(fields[5])?);
        let cell = &mut grids.entry((view, camera)).or_insert_with(|| vec![None; n])[row * board.inner_cols + col];
        if cell.is_some() {
            return Err(fail(
                line_no,
                format!("duplicate corner ({row}, {col}) for view {view} camera {camera}"),
            ));
        }
        *cell = Some(point);
    }

    grids
        .into_iter()
        .map(|((view_id, camera), cells)| {
            let missing = cells.iter().filter(|c| c.is_none()).count();
            if missing > 0 {
                return Err(fail(
                    0,
                    format!("view {view_id} camera {camera} is missing {missing} corners"),
                ));
            }
            Ok(CornerObservation {
                view_id,
                camera,
                corners: cells.into_iter().flatten().collect(),
            })
        })
        .collect()
}

pub fn write_corner_file(path: &Path, board: &BoardSpec, obs: &[CornerObservation]) -> Result<()> {
    let mut out = String::from("# view_id camera grid_row grid_col x y\n");
    for o in obs {
        for (i, p) in o.corners.iter().enumerate() {
            let (r, c) = (i / board.inner_cols, i % board.inner_cols);
            writeln!(out, "{} {} {} {} {} {}", o.view_id, o.camera, r, c, p.x, p.y).unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
