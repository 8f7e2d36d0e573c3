//! Synthetic corpus: bright elliptical "faces" on a noisy background, with
//! an FDDB fold file, ellipse list and optionally planted detections.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qdet::dataio::{ellipse_to_box, save_image, write_ellipse_list, EllipseBoxCoeffs, FddbEllipse, FddbRecord, Image};
use qdet::detection::io::write_detections;
use qdet::detection::Detection;

use crate::args::SynthArgs;
use crate::failure::{at_path, Failure};
use crate::manifest::Run;

fn draw(size: usize, faces: &[FddbEllipse], rng: &mut ChaCha8Rng) -> Image {
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let inside = faces.iter().any(|e| {
                let (s, c) = e.angle.sin_cos();
                let (dx, dy) = (x as f64 + 0.5 - e.center_x, y as f64 + 0.5 - e.center_y);
                // major axis along the rotated vertical
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / e.minor_axis_radius).powi(2) + (v / e.major_axis_radius).powi(2) <= 1.0
            });
            let px: [u8; 3] = if inside {
                [220, 170, 140]
            } else {
                let g = rng.gen_range(20..60);
                [g, g, g]
            };
            data.extend_from_slice(&px);
        }
    }
    Image::new(size, size, 3, data).expect("sized buffer")
}

pub fn synth(a: &SynthArgs, run: &mut Run) -> Result<String, Failure> {
    if a.images == 0 || a.size < 32 {
        return Err(Failure::Usage("need at least one image of side >= 32".into()));
    }
    let img_dir = a.output_dir.join("images");
    std::fs::create_dir_all(&img_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut records = Vec::new();
    let size = a.size as f64;
    for i in 0..a.images {
        let n = rng.gen_range(1..=2);
        let mut faces: Vec<FddbEllipse> = Vec::new();
        while faces.len() < n {
            let minor = rng.gen_range(size / 16.0..size / 8.0);
            let major = minor * 1.3;
            let e = FddbEllipse {
                major_axis_radius: major,
                minor_axis_radius: minor,
                angle: rng.gen_range(-0.2..0.2),
                center_x: rng.gen_range(major..size - major),
                center_y: rng.gen_range(major..size - major),
            };
            // keep faces apart so boxes never overlap
            let clear = faces.iter().all(|f| {
                let d = ((f.center_x - e.center_x).powi(2) + (f.center_y - e.center_y).powi(2)).sqrt();
                d > 2.0 * (f.major_axis_radius + e.major_axis_radius)
            });
            if clear {
                faces.push(e);
            }
        }
        let id = format!("images/img_{i:03}");
        let img = draw(a.size, &faces, &mut rng);
        let path = a.output_dir.join(format!("{id}.ppm"));
        save_image(&img, &path).map_err(at_path(&path))?;
        run.output(&path);
        records.push(FddbRecord { image_id: id, faces });
    }

    let fold = a.output_dir.join(format!("{}.txt", a.fold));
    let ids: String = records.iter().fold(String::new(), |mut s, r| {
        let _ = writeln!(s, "{}", r.image_id);
        s
    });
    std::fs::write(&fold, ids)?;
    run.output(&fold);
    let ellipses = a.output_dir.join(format!("{}-ellipseList.txt", a.fold));
    std::fs::write(&ellipses, write_ellipse_list(&records))?;
    run.output(&ellipses);

    if let Some(p) = &a.planted {
        let coeffs = EllipseBoxCoeffs::default();
        let dets: Vec<(String, Vec<Detection>)> = records
            .iter()
            .map(|r| {
                let d = r
                    .faces
                    .iter()
                    .map(|e| Detection {
                        bbox: ellipse_to_box(e, &coeffs),
                        score: 0.99,
                        scale: 1.0,
                    })
                    .collect();
                (r.image_id.clone(), d)
            })
            .collect();
        std::fs::write(p, write_detections(dets.iter().map(|(k, v)| (k.as_str(), v.as_slice()))))?;
        run.output(p);
    }
    let faces: usize = records.iter().map(|r| r.faces.len()).sum();
    Ok(format!("{} images, {faces} faces in {}\n", records.len(), a.output_dir.display()))
}
