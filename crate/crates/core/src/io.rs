//! PNG and named-array persistence for images and image batches.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::nac::{ArrayData, Container};
use crate::reverse::TrajectoryBatch;
use crate::scalar::Scalar;

/// Map values in `[lo, hi]` to 8-bit, clamping outside the range.
#[inline]
pub fn to_byte(v: f64, lo: f64, hi: f64) -> u8 {
    ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Write a 1- or 3-channel image as PNG, mapping `[lo, hi]` to `[0, 255]`.
pub fn write_png<S: Scalar>(img: &Image<S>, lo: f64, hi: f64, path: impl AsRef<Path>) -> Result<()> {
    let (c, h, w) = img.shape();
    let b = |ch, y, x| to_byte(img.get(ch, y as usize, x as usize).as_f64(), lo, hi);
    match c {
        1 => GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([b(0, y, x)])).save(path)?,
        3 => RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb([b(0, y, x), b(1, y, x), b(2, y, x)]))
            .save(path)?,
        _ => return Err(Error::Input(format!("cannot write {c}-channel image as PNG"))),
    }
    Ok(())
}

/// Read a PNG as an image in `[0, 1]`; grayscale files give one channel, everything else three.
pub fn read_png<S: Scalar>(path: impl AsRef<Path>) -> Result<Image<S>> {
    let dynamic = image::open(path)?;
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let gray = matches!(
        dynamic.color(),
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
    );
    if gray {
        let g = dynamic.to_luma8();
        let data = g.pixels().map(|p| S::of(p[0] as f64 / 255.0)).collect();
        return Image::from_vec(1, h, w, data);
    }
    let rgb: ImageBuffer<Rgb<u8>, Vec<u8>> = dynamic.to_rgb8();
    let mut out = Image::zeros(3, h, w);
    for (x, y, p) in rgb.enumerate_pixels() {
        for ch in 0..3 {
            out.set(ch, y as usize, x as usize, S::of(p[ch] as f64 / 255.0));
        }
    }
    Ok(out)
}

/// Pack a uniform batch into `name` with shape `[N, C, H, W]`.
pub fn insert_batch<S: Scalar>(c: &mut Container, name: &str, batch: &[Image<S>]) -> Result<()> {
    let shape = batch.first().map(Image::shape).unwrap_or((0, 0, 0));
    let mut flat = Vec::with_capacity(batch.len() * batch.first().map_or(0, Image::len));
    for img in batch {
        if img.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                got: img.shape(),
            });
        }
        flat.extend_from_slice(img.data());
    }
    c.insert_array(
        name,
        vec![batch.len(), shape.0, shape.1, shape.2],
        ArrayData::from_scalars(&flat),
    )
}

pub fn extract_batch<S: Scalar>(c: &Container, name: &str) -> Result<Vec<Image<S>>> {
    let a = c.array(name)?;
    let [n, ch, h, w] = a.shape[..] else {
        return Err(Error::Container(format!("`{name}` must be 4-d, got {:?}", a.shape)));
    };
    let flat: Vec<S> = a.data.to_scalars();
    if n == 0 {
        return Ok(Vec::new());
    }
    flat.chunks_exact(ch * h * w)
        .map(|chunk| Image::from_vec(ch, h, w, chunk.to_vec()))
        .collect()
}

pub fn save_images<S: Scalar>(path: impl AsRef<Path>, batch: &[Image<S>]) -> Result<()> {
    let mut c = Container::new();
    insert_batch(&mut c, "images", batch)?;
    c.save(path)
}

pub fn load_images<S: Scalar>(path: impl AsRef<Path>) -> Result<Vec<Image<S>>> {
    extract_batch(&Container::load(path)?, "images")
}

/// A single image from either a PNG or a container holding one `images` entry.
pub fn load_image_any<S: Scalar>(path: impl AsRef<Path>) -> Result<Image<S>> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        return read_png(path);
    }
    let mut batch = load_images(path)?;
    if batch.len() != 1 {
        return Err(Error::Input(format!(
            "{} holds {} images, expected one",
            path.display(),
            batch.len()
        )));
    }
    Ok(batch.pop().unwrap())
}

const SNAPSHOT_PREFIX: &str = "snapshot_";

/// Finals under `finals`, each snapshot under `snapshot_<t>`.
pub fn trajectories_to_container<S: Scalar>(batch: &TrajectoryBatch<S>) -> Result<Container> {
    let mut c = Container::new();
    insert_batch(&mut c, "finals", &batch.finals)?;
    for (t, imgs) in &batch.snapshots {
        insert_batch(&mut c, &format!("{SNAPSHOT_PREFIX}{t}"), imgs)?;
    }
    c.insert_attr("sigma_mode", serde_json::to_value(batch.sigma_mode)?);
    c.insert_attr("seed", serde_json::to_value(batch.seed)?);
    Ok(c)
}

pub fn trajectories_from_container<S: Scalar>(c: &Container) -> Result<TrajectoryBatch<S>> {
    let mut snapshots = std::collections::BTreeMap::new();
    for name in c.arrays.keys() {
        if let Some(t) = name.strip_prefix(SNAPSHOT_PREFIX) {
            let t: usize = t
                .parse()
                .map_err(|_| Error::Container(format!("bad snapshot name `{name}`")))?;
            snapshots.insert(t, extract_batch(c, name)?);
        }
    }
    Ok(TrajectoryBatch {
        finals: extract_batch(c, "finals")?,
        snapshots,
        seed: serde_json::from_value(c.attr("seed")?.clone())?,
        sigma_mode: serde_json::from_value(c.attr("sigma_mode")?.clone())?,
    })
}

pub fn save_trajectories<S: Scalar>(path: impl AsRef<Path>, batch: &TrajectoryBatch<S>) -> Result<()> {
    trajectories_to_container(batch)?.save(path)
}

pub fn load_trajectories<S: Scalar>(path: impl AsRef<Path>) -> Result<TrajectoryBatch<S>> {
    trajectories_from_container(&Container::load(path)?)
}
