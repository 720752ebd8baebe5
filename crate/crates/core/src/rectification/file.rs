//! Stereo calibration file: the calibration result, the rectified rig and
//! the four remap tables in one plain-text container.
//!
//! ```text
//! %STEREO-CALIBRATION 1
//! node <name> <rows> <cols>
//! <cols values>          # repeated <rows> times
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every `f64` parameter and every `f32` map
//! entry bit for bit. Nodes may appear in any order; `#` starts a comment.

use std::collections::HashMap;
use std::fmt::Display;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};

use super::{RectifiedRig, RemapTable, StereoMaps};
use crate::calibration::{CalibrationResult, ViewPoses};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::{Error, Result};

const MAGIC: &str = "%STEREO-CALIBRATION 1";

pub const MAP_LEFT_X: &str = "stereoMapL_x";
pub const MAP_LEFT_Y: &str = "stereoMapL_y";
pub const MAP_RIGHT_X: &str = "stereoMapR_x";
pub const MAP_RIGHT_Y: &str = "stereoMapR_y";

/// Everything stored in a calibration file.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFile {
    pub calibration: CalibrationResult,
    pub maps: StereoMaps,
}

fn write_node<W: Write, T: Display>(
    out: &mut W,
    name: &str,
    rows: usize,
    cols: usize,
    values: impl IntoIterator<Item = T>,
) -> std::io::Result<()> {
    writeln!(out, "node {name} {rows} {cols}")?;
    let mut it = values.into_iter();
    for _ in 0..rows {
        for c in 0..cols {
            let v = it.next().expect("node value count matches header");
            if c > 0 {
                out.write_all(b" ")?;
            }
            write!(out, "{v}")?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn rotation_values(m: &Matrix3<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..3).flat_map(move |r| (0..3).map(move |c| m[(r, c)]))
}

fn pose_values(p: &Pose) -> Vec<f64> {
    rotation_values(&p.rotation)
        .chain(p.translation.iter().copied())
        .collect()
}

pub fn save_calibration(path: &Path, calibration: &CalibrationResult, maps: &StereoMaps) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    let (w, h) = maps.size();
    writeln!(out, "{MAGIC}")?;
    write_node(&mut out, "image_size", 1, 2, [w, h])?;
    write_node(&mut out, "left_intrinsics", 1, 9, calibration.left.as_array())?;
    write_node(&mut out, "right_intrinsics", 1, 9, calibration.right.as_array())?;
    write_node(&mut out, "stereo_pose", 1, 12, pose_values(&calibration.stereo))?;
    write_node(&mut out, "rms_reprojection", 1, 1, [calibration.rms_reprojection])?;
    let views: Vec<f64> = calibration
        .view_poses
        .iter()
        .flat_map(|v| {
            std::iter::once(v.view_id as f64)
                .chain(pose_values(&v.left))
                .chain(pose_values(&v.right))
        })
        .collect();
    write_node(&mut out, "view_poses", calibration.view_poses.len(), 25, views)?;
    let rect = &maps.rectified;
    write_node(&mut out, "rect_rot_left", 3, 3, rotation_values(&rect.rot_left))?;
    write_node(&mut out, "rect_rot_right", 3, 3, rotation_values(&rect.rot_right))?;
    write_node(&mut out, "rect_intrinsics", 1, 9, rect.new_intrinsics.as_array())?;
    write_node(&mut out, "rect_baseline", 1, 1, [rect.baseline])?;
    for (name, table, xs) in [
        (MAP_LEFT_X, &maps.left, true),
        (MAP_LEFT_Y, &maps.left, false),
        (MAP_RIGHT_X, &maps.right, true),
        (MAP_RIGHT_Y, &maps.right, false),
    ] {
        let data = if xs { &table.map_x } else { &table.map_y };
        write_node(&mut out, name, table.height, table.width, data.iter())?;
    }
    out.flush()?;
    Ok(())
}

struct RawNode {
    rows: usize,
    cols: usize,
    line: usize,
    tokens: Vec<String>,
}

struct Parser<'a> {
    path: &'a Path,
    nodes: HashMap<String, RawNode>,
}

impl Parser<'_> {
    fn err(&self, node: &str, line: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            node: node.to_string(),
            line,
            message: message.into(),
        }
    }

    fn values<T: FromStr>(&self, name: &str, rows: Option<usize>, cols: usize) -> Result<(usize, Vec<T>)> {
        let node = self.nodes.get(name).ok_or_else(|| self.err(name, 0, "missing node"))?;
        if node.cols != cols || rows.is_some_and(|r| r != node.rows) {
            return Err(self.err(
                name,
                node.line,
                format!(
                    "expected {}x{cols}, found {}x{}",
                    rows.map_or("N".to_string(), |r| r.to_string()),
                    node.rows,
                    node.cols
                ),
            ));
        }
        let vals = node
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                t.parse::<T>()
                    .map_err(|_| self.err(name, node.line + 1 + i / cols.max(1), format!("bad value `{t}`")))
            })
            .collect::<Result<Vec<T>>>()?;
        Ok((node.rows, vals))
    }

    fn fixed<const N: usize>(&self, name: &str) -> Result<[f64; N]> {
        let (_, v) = self.values::<f64>(name, Some(1), N)?;
        Ok(v.try_into().expect("length checked"))
    }

    fn rotation(&self, name: &str) -> Result<Matrix3<f64>> {
        let (_, v) = self.values::<f64>(name, Some(3), 3)?;
        Ok(Matrix3::from_row_slice(&v))
    }

    fn table(&self, name_x: &str, name_y: &str) -> Result<RemapTable> {
        let node = self
            .nodes
            .get(name_x)
            .ok_or_else(|| self.err(name_x, 0, "missing node"))?;
        let (height, width) = (node.rows, node.cols);
        let (_, map_x) = self.values::<f32>(name_x, Some(height), width)?;
        let (_, map_y) = self.values::<f32>(name_y, Some(height), width)?;
        Ok(RemapTable {
            width,
            height,
            map_x,
            map_y,
        })
    }
}

fn pose_from(v: &[f64]) -> Pose {
    Pose::new(Matrix3::from_row_slice(&v[..9]), Vector3::new(v[9], v[10], v[11]))
}

pub fn load_calibration(path: &Path) -> Result<CalibrationFile> {
    let text = std::fs::read_to_string(path)?;
    let mut parser = Parser {
        path,
        nodes: HashMap::new(),
    };

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    if !text.starts_with(MAGIC) {
        return Err(parser.err("header", 1, format!("expected `{MAGIC}`")));
    }

    while let Some((line_no, header)) = lines.next() {
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (name, rows, cols) = match parts.as_slice() {
            ["node", name, rows, cols] => {
                let dims = rows.parse::<usize>().ok().zip(cols.parse::<usize>().ok());
                let (rows, cols) = dims.ok_or_else(|| parser.err(name, line_no, "bad node dimensions"))?;
                (name.to_string(), rows, cols)
            }
            _ => return Err(parser.err("?", line_no, format!("expected node header, found `{header}`"))),
        };
        let mut tokens = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let Some((row_line, content)) = lines.next() else {
                return Err(parser.err(&name, line_no, format!("truncated: {r} of {rows} rows present")));
            };
            let before = tokens.len();
            tokens.extend(content.split_whitespace().map(str::to_string));
            if tokens.len() - before != cols {
                return Err(parser.err(
                    &name,
                    row_line,
                    format!("expected {cols} values, found {}", tokens.len() - before),
                ));
            }
        }
        if parser.nodes.contains_key(&name) {
            return Err(parser.err(&name, line_no, "duplicate node"));
        }
        parser.nodes.insert(
            name,
            RawNode {
                rows,
                cols,
                line: line_no,
                tokens,
            },
        );
    }

    let left = CameraIntrinsics::from_array(parser.fixed::<9>("left_intrinsics")?);
    let right = CameraIntrinsics::from_array(parser.fixed::<9>("right_intrinsics")?);
    let stereo = pose_from(&parser.fixed::<12>("stereo_pose")?);
    let [rms] = parser.fixed::<1>("rms_reprojection")?;
    let (n_views, raw_views) = parser.values::<f64>("view_poses", None, 25)?;
    let view_poses = (0..n_views)
        .map(|i| {
            let row = &raw_views[i * 25..(i + 1) * 25];
            ViewPoses {
                view_id: row[0] as usize,
                left: pose_from(&row[1..13]),
                right: pose_from(&row[13..25]),
            }
        })
        .collect();
    let rectified = RectifiedRig {
        rot_left: parser.rotation("rect_rot_left")?,
        rot_right: parser.rotation("rect_rot_right")?,
        new_intrinsics: CameraIntrinsics::from_array(parser.fixed::<9>("rect_intrinsics")?),
        baseline: parser.fixed::<1>("rect_baseline")?[0],
    };
    let left_map = parser.table(MAP_LEFT_X, MAP_LEFT_Y)?;
    let right_map = parser.table(MAP_RIGHT_X, MAP_RIGHT_Y)?;
    if (left_map.width, left_map.height) != (right_map.width, right_map.height) {
        let line = parser.nodes[MAP_RIGHT_X].line;
        return Err(parser.err(MAP_RIGHT_X, line, "left and right maps differ in size"));
    }

    Ok(CalibrationFile {
        calibration: CalibrationResult {
            left,
            right,
            view_poses,
            stereo,
            rms_reprojection: rms,
        },
        maps: StereoMaps {
            rectified,
            left: left_map,
            right: right_map,
        },
    })
}
