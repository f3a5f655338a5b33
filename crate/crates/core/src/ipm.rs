//! Bird's-eye-view homography and image warping.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageBuffer, ImageEncoder, ImageFormat, Pixel as ImagePixel};
use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_pitch_yaw, rotation_roll, CameraIntrinsics};
use crate::par::{for_each_row, Execution};

/// Metric grid of the BEV image: `a_*` in pixels per meter, `b_*` extents
/// in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BevConfig {
    pub a_x: f64,
    pub a_z: f64,
    pub b_x: f64,
    pub b_z: f64,
}

impl Default for BevConfig {
    fn default() -> Self {
        Self { a_x: 20.0, a_z: 10.0, b_x: 24.0, b_z: 50.0 }
    }
}

impl BevConfig {
    pub fn validate(&self) -> Result<()> {
        if self.a_x > 0.0 && self.a_z > 0.0 && self.b_x >= 0.0 && self.b_z >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid BEV config: {self:?}")))
        }
    }

    /// Output size that covers the whole grid.
    pub fn image_size(&self) -> (u32, u32) {
        ((self.a_x * self.b_x).ceil() as u32, (self.a_z * self.b_z).ceil() as u32)
    }

    /// BEV pixel of a ground point.
    pub fn ground_to_pixel(&self, x: f64, z: f64) -> Vector2<f64> {
        Vector2::new(self.a_x * (x + 0.5 * self.b_x), -self.a_z * (z - self.b_z))
    }

    fn affine(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.a_x, 0.0, 0.5 * self.a_x * self.b_x,
            0.0, -self.a_z, self.b_z * self.a_z,
            0.0, 0.0, 1.0,
        )
    }
}

/// Projective map between homogeneous image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().all(|v| v.is_finite()) && m.determinant().abs() > 1e-12 {
            Ok(Self(m))
        } else {
            Err(Error::NonInvertibleHomography)
        }
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Result<Self> {
        self.0.try_inverse().map(Self).ok_or(Error::NonInvertibleHomography)
    }

    /// Maps a pixel; `None` when it lands on the line at infinity.
    pub fn apply(&self, p: &Vector2<f64>) -> Option<Vector2<f64>> {
        let q = self.0 * Vector3::new(p.x, p.y, 1.0);
        (q.z.abs() > 1e-15).then(|| Vector2::new(q.x / q.z, q.y / q.z))
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [[m[(0, 0)], m[(0, 1)], m[(0, 2)]], [m[(1, 0)], m[(1, 1)], m[(1, 2)]], [m[(2, 0)], m[(2, 1)], m[(2, 2)]]]
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }
}

/// Camera-to-road rotation: roll applied after undoing pitch and yaw.
pub fn full_rotation(theta: f64, phi: f64, psi: f64) -> Rotation3<f64> {
    rotation_roll(psi) * rotation_pitch_yaw(theta, phi).inverse()
}

/// Homography from image pixels to BEV pixels for a camera at height `h`
/// above a flat road.
pub fn bev_homography(
    k: &CameraIntrinsics,
    theta: f64,
    phi: f64,
    psi: f64,
    h: f64,
    cfg: &BevConfig,
) -> Result<Homography> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("camera height must be positive, got {h}")));
    }
    let r = full_rotation(theta, phi, psi);
    let r = r.matrix();
    let mut stacked = Matrix3::zeros();
    stacked.set_row(0, &r.row(0));
    stacked.set_row(1, &r.row(2));
    stacked.set_row(2, &(r.row(1) / h));
    Homography::new(cfg.affine() * stacked * k.inverse())
}

fn bilinear<P>(src: &ImageBuffer<P, Vec<u8>>, x: f64, y: f64, out: &mut [u8])
where
    P: ImagePixel<Subpixel = u8>,
{
    let (w, h) = src.dimensions();
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        out.fill(0);
        return;
    }
    let (x0, y0) = (x.floor() as u32, y.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (a, b) = (src.get_pixel(x0, y0).channels(), src.get_pixel(x1, y0).channels());
    let (c, d) = (src.get_pixel(x0, y1).channels(), src.get_pixel(x1, y1).channels());
    for (i, o) in out.iter_mut().enumerate() {
        let top = a[i] as f64 * (1.0 - fx) + b[i] as f64 * fx;
        let bottom = c[i] as f64 * (1.0 - fx) + d[i] as f64 * fx;
        *o = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
}

/// Resamples `src` into an `out_width x out_height` image whose pixel `q`
/// shows source pixel `hom^-1 q`, bilinearly interpolated. Pixels mapping
/// outside the source are black.
pub fn warp_image<P>(
    src: &ImageBuffer<P, Vec<u8>>,
    hom: &Homography,
    out_width: u32,
    out_height: u32,
    exec: Execution,
) -> Result<ImageBuffer<P, Vec<u8>>>
where
    P: ImagePixel<Subpixel = u8> + Send + Sync,
{
    if src.width() == 0 || src.height() == 0 {
        return Err(Error::EmptyInput);
    }
    let inv = hom.inverse()?;
    let channels = P::CHANNEL_COUNT as usize;
    let mut data = vec![0u8; out_width as usize * out_height as usize * channels];
    for_each_row(exec, &mut data, out_width as usize * channels, |v, row| {
        for (u, px) in row.chunks_mut(channels).enumerate() {
            match inv.apply(&Vector2::new(u as f64, v as f64)) {
                Some(s) => bilinear(src, s.x, s.y, px),
                None => px.fill(0),
            }
        }
    });
    ImageBuffer::from_raw(out_width, out_height, data)
        .ok_or_else(|| Error::Format("warp output buffer has the wrong size".into()))
}

pub fn read_pgm(path: &Path) -> Result<image::GrayImage> {
    Ok(image::load(BufReader::new(File::open(path)?), ImageFormat::Pnm)?.into_luma8())
}

pub fn read_ppm(path: &Path) -> Result<image::RgbImage> {
    Ok(image::load(BufReader::new(File::open(path)?), ImageFormat::Pnm)?.into_rgb8())
}

fn write_pnm(path: &Path, subtype: PnmSubtype, bytes: &[u8], w: u32, h: u32, color: ExtendedColorType) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    PnmEncoder::new(&mut out).with_subtype(subtype).write_image(bytes, w, h, color)?;
    out.flush()?;
    Ok(())
}

/// Writes binary PGM (P5).
pub fn write_pgm(path: &Path, img: &image::GrayImage) -> Result<()> {
    let subtype = PnmSubtype::Graymap(SampleEncoding::Binary);
    write_pnm(path, subtype, img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
}

/// Writes binary PPM (P6).
pub fn write_ppm(path: &Path, img: &image::RgbImage) -> Result<()> {
    let subtype = PnmSubtype::Pixmap(SampleEncoding::Binary);
    write_pnm(path, subtype, img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 960.0, 510.0).unwrap()
    }

    #[test]
    fn full_rotation_examples() {
        assert!((full_rotation(0.0, 0.0, 0.0).matrix() - Matrix3::identity()).amax() == 0.0);
        let (s, c) = 0.3f64.sin_cos();
        let roll = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
        assert!((full_rotation(0.0, 0.0, 0.3).matrix() - roll).amax() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (t, p, r): (f64, f64, f64) = (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let (st, ct) = t.sin_cos();
            let (sp, cp) = p.sin_cos();
            let (sr, cr) = r.sin_cos();
            let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ct, -st, 0.0, st, ct);
            let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
            let rr = Matrix3::new(cr, sr, 0.0, -sr, cr, 0.0, 0.0, 0.0, 1.0);
            let expected = rr * (rx * ry).transpose();
            assert!((full_rotation(t, p, r).matrix() - expected).amax() < 1e-12);
        }
    }

    #[test]
    fn identity_case_is_exact() {
        let cfg = BevConfig { a_x: 1.0, a_z: 1.0, b_x: 0.0, b_z: 0.0 };
        let h = bev_homography(&CameraIntrinsics::identity(), 0.0, 0.0, 0.0, 1.0, &cfg).unwrap();
        assert_eq!(h.to_rows(), [[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]);
    }

    #[test]
    fn ground_points_land_on_the_bev_grid() {
        let k = k();
        let cfg = BevConfig::default();
        let (t, p, r, h) = (0.02, -0.01, 0.015, 1.45);
        let hom = bev_homography(&k, t, p, r, h, &cfg).unwrap();
        let cam_from_road = full_rotation(t, p, r).inverse();
        for (x, z) in [(-5.55, 12.0), (0.0, 4.0), (1.85, 30.0), (9.25, 45.0)] {
            let pix = k.project(&(cam_from_road * Vector3::new(x, h, z)));
            let bev = hom.apply(&pix).unwrap();
            assert!((bev - cfg.ground_to_pixel(x, z)).amax() < 1e-6);
        }
    }

    #[test]
    fn doubling_height_scales_the_third_stacked_row() {
        let k = k();
        let cfg = BevConfig::default();
        let (t, p, r) = (0.01, 0.02, -0.03);
        let h1 = bev_homography(&k, t, p, r, 1.5, &cfg).unwrap();
        let h2 = bev_homography(&k, t, p, r, 3.0, &cfg).unwrap();
        let rot = full_rotation(t, p, r);
        let m = rot.matrix();
        let mut stacked = Matrix3::zeros();
        stacked.set_row(0, &m.row(0));
        stacked.set_row(1, &m.row(2));
        stacked.set_row(2, &(m.row(1) / 1.5 * 0.5));
        let expected = cfg.affine() * stacked * k.inverse();
        assert!((h2.matrix() - expected).amax() < 1e-15);
        assert!((h1.matrix() - h2.matrix()).amax() > 0.0);
    }

    #[test]
    fn homography_is_continuous_in_the_angles() {
        let k = k();
        let cfg = BevConfig::default();
        let base = bev_homography(&k, 0.01, 0.02, 0.03, 1.5, &cfg).unwrap();
        for d in [[1e-9, 0.0, 0.0], [0.0, 1e-9, 0.0], [0.0, 0.0, 1e-9]] {
            let moved = bev_homography(&k, 0.01 + d[0], 0.02 + d[1], 0.03 + d[2], 1.5, &cfg).unwrap();
            assert!((base.matrix() - moved.matrix()).amax() < 1e-6);
        }
    }

    #[test]
    fn identity_warp_copies_the_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let src = GrayImage::from_fn(40, 30, |_, _| Luma([rng.random()]));
        for exec in [Execution::Sequential, Execution::Parallel] {
            let out = warp_image(&src, &Homography::identity(), 50, 20, exec).unwrap();
            for (x, y, p) in out.enumerate_pixels() {
                let expected = if x < 40 { src.get_pixel(x, y).0[0] } else { 0 };
                assert_eq!(p.0[0], expected);
            }
        }
    }

    #[test]
    fn scaling_quadruples_area() {
        let src = RgbImage::from_fn(64, 64, |x, y| {
            if (20..30).contains(&x) && (20..30).contains(&y) { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) }
        });
        let hom = Homography::new(Matrix3::new(2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0)).unwrap();
        let out = warp_image(&src, &hom, 128, 128, Execution::default()).unwrap();
        let lit = out.pixels().filter(|p| p.0[0] >= 128).count() as f64;
        let side = lit.sqrt();
        assert!((side - 20.0).abs() <= 1.0, "side {side}");
    }

    #[test]
    fn singular_homography_is_rejected() {
        assert!(matches!(Homography::new(Matrix3::zeros()), Err(Error::NonInvertibleHomography)));
    }

    #[test]
    fn pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gray = GrayImage::from_fn(7, 5, |x, y| Luma([(x * 30 + y) as u8]));
        let rgb = RgbImage::from_fn(4, 3, |x, y| Rgb([x as u8, y as u8, 200]));
        let (gp, cp) = (dir.path().join("a.pgm"), dir.path().join("b.ppm"));
        write_pgm(&gp, &gray).unwrap();
        write_ppm(&cp, &rgb).unwrap();
        assert_eq!(&std::fs::read(&gp).unwrap()[..2], b"P5");
        assert_eq!(&std::fs::read(&cp).unwrap()[..2], b"P6");
        assert_eq!(read_pgm(&gp).unwrap(), gray);
        assert_eq!(read_ppm(&cp).unwrap(), rgb);
    }
}
