//! FDDB annotations, the ellipse-to-square box transform, and pixmap images.

mod fddb;
mod image;

pub use self::fddb::{
    ellipse_to_box, parse_ellipse_list, parse_fddb, parse_fold, write_ellipse_list, EllipseBoxCoeffs,
    FddbEllipse, FddbRecord,
};
pub use self::image::{decode_image, encode_pnm, load_image, resize_bilinear, save_image, Image};
