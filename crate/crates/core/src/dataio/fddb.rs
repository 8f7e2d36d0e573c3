use std::fmt::Write as _;

use crate::detection::BBox;
use crate::error::{Error, Result};

/// One annotated face. The angle is kept but unused by the box transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FddbEllipse {
    pub major_axis_radius: f64,
    pub minor_axis_radius: f64,
    /// Radians.
    pub angle: f64,
    pub center_x: f64,
    pub center_y: f64,
}

/// Scale and vertical shift of the ellipse-to-square transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseBoxCoeffs {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for EllipseBoxCoeffs {
    fn default() -> Self {
        Self {
            alpha: 1.3,
            beta: 0.26,
        }
    }
}

/// Square box from an ellipse: with `w_e = 2 * minor_radius`, side
/// `alpha * w_e`, center shifted down by `beta * w_e`.
pub fn ellipse_to_box(e: &FddbEllipse, c: &EllipseBoxCoeffs) -> BBox {
    let we = 2.0 * e.minor_axis_radius;
    let side = c.alpha * we;
    BBox {
        cx: e.center_x,
        cy: e.center_y + c.beta * we,
        w: side,
        h: side,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FddbRecord {
    pub image_id: String,
    pub faces: Vec<FddbEllipse>,
}

impl FddbRecord {
    pub fn boxes(&self, c: &EllipseBoxCoeffs) -> Vec<BBox> {
        self.faces.iter().map(|e| ellipse_to_box(e, c)).collect()
    }
}

fn parse_ellipse(line: &str) -> Option<FddbEllipse> {
    let v: Vec<f64> = line
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    // trailing detection-score field is optional and ignored
    if !(v.len() == 5 || v.len() == 6) {
        return None;
    }
    let e = FddbEllipse {
        major_axis_radius: v[0],
        minor_axis_radius: v[1],
        angle: v[2],
        center_x: v[3],
        center_y: v[4],
    };
    (e.major_axis_radius > 0.0 && e.minor_axis_radius > 0.0 && v.iter().all(|x| x.is_finite())).then_some(e)
}

/// Parses an FDDB ellipse list: image id, face count, then one
/// `major minor angle cx cy 1` line per face.
pub fn parse_ellipse_list(text: &str) -> Result<Vec<FddbRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut out = Vec::new();
    while let Some((_, id)) = lines.next() {
        let (cline, count) = lines.next().ok_or_else(|| Error::Parse {
            line: text.lines().count(),
            msg: format!("image {id}: missing face count"),
        })?;
        let count: usize = count.parse().map_err(|_| Error::Parse {
            line: cline,
            msg: format!("image {id}: bad face count {count:?}"),
        })?;
        let mut faces = Vec::with_capacity(count);
        for k in 0..count {
            let Some((n, l)) = lines.next() else {
                return Err(Error::Parse {
                    line: text.lines().count(),
                    msg: format!("image {id} declares {count} faces, file ends after {k}"),
                });
            };
            let e = parse_ellipse(l).ok_or_else(|| Error::Parse {
                line: n,
                msg: format!("image {id} declares {count} faces, line {n} is not face {}: {l:?}", k + 1),
            })?;
            faces.push(e);
        }
        out.push(FddbRecord {
            image_id: id.to_string(),
            faces,
        });
    }
    Ok(out)
}

/// Image ids of a fold file, one per line.
pub fn parse_fold(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parses a fold's annotations, checking they list exactly the fold's
/// images in the same order.
pub fn parse_fddb(fold: &str, annotations: &str) -> Result<Vec<FddbRecord>> {
    let ids = parse_fold(fold);
    let records = parse_ellipse_list(annotations)?;
    if ids.len() != records.len() {
        return Err(Error::InvalidConfig(format!(
            "fold lists {} images, annotations cover {}",
            ids.len(),
            records.len()
        )));
    }
    for (i, (id, r)) in ids.iter().zip(&records).enumerate() {
        if *id != r.image_id {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("fold image {id} but annotation {} at the same position", r.image_id),
            });
        }
    }
    Ok(records)
}

pub fn write_ellipse_list(records: &[FddbRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(s, "{}", r.image_id);
        let _ = writeln!(s, "{}", r.faces.len());
        for e in &r.faces {
            let _ = writeln!(
                s,
                "{} {} {} {} {}  1",
                e.major_axis_radius, e.minor_axis_radius, e.angle, e.center_x, e.center_y
            );
        }
    }
    s
}
