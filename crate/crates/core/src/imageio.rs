//! PNG reading and writing for [`RawImage`].

use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::RawImage;

pub fn read_png(path: &Path) -> Result<RawImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    RawImage::new(h as usize, w as usize, rgb.into_raw())
}

pub fn write_png(image: &RawImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let buf = RgbImage::from_raw(
        image.width() as u32,
        image.height() as u32,
        image.data().to_vec(),
    )
    .expect("buffer length matches dimensions");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other}", path.display())),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<u8> = (0..5 * 7 * 3).map(|i| (i * 37 % 256) as u8).collect();
        let img = RawImage::new(5, 7, data).unwrap();
        let p = dir.path().join("sub/x.png");
        write_png(&img, &p).unwrap();
        assert_eq!(read_png(&p).unwrap(), img);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_png(Path::new("/nonexistent/face.png")).unwrap_err();
        assert_eq!(err.category(), "io");
    }
}
