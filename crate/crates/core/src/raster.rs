use std::path::Path;

use image::GrayImage;

use crate::error::{Error, Result};
use crate::geometry::Rect;

/// Nominal scan resolution of page rasters.
pub const DEFAULT_DPI: u32 = 600;

/// Grayscale 8-bit page raster, dark ink on a light background.
#[derive(Debug, Clone, PartialEq)]
pub struct PageImage {
    pub image: GrayImage,
    pub dpi: u32,
}

impl PageImage {
    pub fn new(image: GrayImage) -> Result<Self> {
        if image.width() == 0 || image.height() == 0 {
            return Err(Error::Data("page image has zero size".into()));
        }
        Ok(PageImage {
            image,
            dpi: DEFAULT_DPI,
        })
    }

    /// Blank white page.
    pub fn blank(width: u32, height: u32) -> Result<Self> {
        PageImage::new(GrayImage::from_pixel(width, height, image::Luma([255])))
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn size(&self) -> (u32, u32) {
        self.image.dimensions()
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width(), self.height()).expect("non-empty page")
    }

    pub fn fill_rect(&mut self, r: &Rect, value: u8) {
        let right = r.right().min(self.width());
        let bottom = r.bottom().min(self.height());
        for y in r.top()..bottom {
            for x in r.left()..right {
                self.image.put_pixel(x, y, image::Luma([value]));
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        PageImage::new(img.into_luma8())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.image.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}
