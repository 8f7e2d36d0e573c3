//! FDDB detection files: per image an identifier line, a count line, then
//! one `left top width height score` line per box.

use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::{BBox, Detection};

pub fn write_detections<'a, I>(images: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a [Detection])>,
{
    let mut s = String::new();
    for (id, dets) in images {
        let _ = writeln!(s, "{id}");
        let _ = writeln!(s, "{}", dets.len());
        for d in dets {
            let b = &d.bbox;
            let _ = writeln!(s, "{} {} {} {} {}", b.left(), b.top(), b.w, b.h, d.score);
        }
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<(String, Vec<Detection>)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut out = Vec::new();
    while let Some((_, id)) = lines.next() {
        let (count_line, count) = lines.next().ok_or_else(|| Error::Parse {
            line: text.lines().count(),
            msg: format!("missing detection count for {id}"),
        })?;
        let count: usize = count.parse().map_err(|_| Error::Parse {
            line: count_line,
            msg: format!("bad detection count {count:?} for {id}"),
        })?;
        let mut dets = Vec::with_capacity(count);
        for k in 0..count {
            let (ln, line) = lines.next().ok_or_else(|| Error::Parse {
                line: text.lines().count(),
                msg: format!("{id}: expected {count} detections, found {k}"),
            })?;
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse {
                    line: ln,
                    msg: format!("bad detection line {line:?}"),
                })?;
            if v.len() != 5 {
                return Err(Error::Parse {
                    line: ln,
                    msg: format!("expected 5 values, got {}", v.len()),
                });
            }
            let bbox = BBox::from_corner(v[0], v[1], v[2], v[3]).map_err(|e| Error::Parse {
                line: ln,
                msg: e.to_string(),
            })?;
            dets.push(Detection {
                bbox,
                score: v[4],
                scale: 1.0,
            });
        }
        out.push((id.to_string(), dets));
    }
    Ok(out)
}
