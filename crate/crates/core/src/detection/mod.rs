//! Anchors, box regression codec, IoU, non-maximum suppression and the
//! multi-scale inference pyramid.

mod anchors;
mod bbox;
mod codec;
mod head;
pub mod io;
mod nms;
mod pyramid;

pub use anchors::{Anchor, AnchorSet};
pub use bbox::{iou, BBox};
pub use codec::{decode_box, encode_box, RegressionTarget, MAX_LOG_SCALE};
pub use head::{cell_center, extract_detections, sigmoid, Detection, HeadMap, CHANNELS_PER_ANCHOR};
pub use nms::{nms, rank_order};
pub use pyramid::{detect_at_scale, multi_scale_detect, HeadModel, DEFAULT_SCALES};
