use std::fmt::Write as _;

use crate::error::{Error, Result};

use super::BBox;

const DEFAULT_ANCHORS: &str = include_str!("../../data/anchors_25.txt");

/// Canonical box extent, placed at a cell center when used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub id: usize,
    pub w: f64,
    pub h: f64,
}

impl Anchor {
    pub fn at(&self, center: (f64, f64)) -> BBox {
        BBox {
            cx: center.0,
            cy: center.1,
            w: self.w,
            h: self.h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<Anchor>,
}

impl AnchorSet {
    pub fn new(extents: &[(f64, f64)]) -> Result<Self> {
        if extents.is_empty() {
            return Err(Error::InvalidConfig("anchor set is empty".into()));
        }
        let mut anchors = Vec::with_capacity(extents.len());
        for (id, &(w, h)) in extents.iter().enumerate() {
            if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "anchor {id} has non-positive extent {w}x{h}"
                )));
            }
            anchors.push(Anchor { id, w, h });
        }
        Ok(Self { anchors })
    }

    /// The shipped 25-anchor set.
    pub fn default_25() -> Self {
        Self::parse(DEFAULT_ANCHORS).expect("bundled anchor file is valid")
    }

    /// One `width height` pair per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut extents = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("bad anchor extent: {e}"),
                })?;
            if nums.len() != 2 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected `width height`, got {} values", nums.len()),
                });
            }
            extents.push((nums[0], nums[1]));
        }
        Self::new(&extents)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for a in &self.anchors {
            let _ = writeln!(s, "{} {}", a.w, a.h);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&Anchor> {
        self.anchors.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Anchor> {
        self.anchors.iter()
    }
}

impl Default for AnchorSet {
    fn default() -> Self {
        Self::default_25()
    }
}
