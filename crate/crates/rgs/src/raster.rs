//! Dense float rasters and the bundle of maps a render produces.

use crate::{Error, Result};

/// Row-major, channel-interleaved float image. Pixel `(x, y)` starts at
/// `(y * width + x) * channels`; `y = 0` is the top row.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Mismatch(format!(
                "raster data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-pixel constant image, handy in tests.
    pub fn splat_pixel(width: usize, height: usize, value: &[f64]) -> Self {
        let channels = value.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Raster {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.index(x, y);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.index(x, y) + c;
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn expect_shape(&self, width: usize, height: usize, channels: usize) -> Result<()> {
        if self.width != width || self.height != height || self.channels != channels {
            return Err(Error::Mismatch(format!(
                "expected {}x{}x{} raster, got {}x{}x{}",
                width, height, channels, self.width, self.height, self.channels
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extracts one channel as a single-channel raster.
    pub fn channel(&self, c: usize) -> Raster {
        assert!(c < self.channels);
        let mut out = Raster::new(self.width, self.height, 1);
        for i in 0..self.width * self.height {
            out.data[i] = self.data[i * self.channels + c];
        }
        out
    }
}

/// All maps produced by one rasterization pass over a scene.
///
/// `color`, `pbr`, `albedo` and `normal` are 3-channel; `roughness`,
/// `metallic`, `depth` and `alpha` are single-channel. `depth` holds
/// alpha-blended camera-space depth (not normalized); `alpha` is the
/// accumulated opacity in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: Raster,
    pub pbr: Raster,
    pub normal: Raster,
    pub albedo: Raster,
    pub roughness: Raster,
    pub metallic: Raster,
    pub depth: Raster,
    pub alpha: Raster,
}

impl RenderOutput {
    pub fn zeros(width: usize, height: usize) -> Self {
        RenderOutput {
            color: Raster::new(width, height, 3),
            pbr: Raster::new(width, height, 3),
            normal: Raster::new(width, height, 3),
            albedo: Raster::new(width, height, 3),
            roughness: Raster::new(width, height, 1),
            metallic: Raster::new(width, height, 1),
            depth: Raster::new(width, height, 1),
            alpha: Raster::new(width, height, 1),
        }
    }

    pub fn width(&self) -> usize {
        self.color.width()
    }

    pub fn height(&self) -> usize {
        self.color.height()
    }

    /// Stable name -> map pairing, used by the CLI writers.
    pub fn maps(&self) -> [(&'static str, &Raster); 8] {
        [
            ("color", &self.color),
            ("pbr", &self.pbr),
            ("normal", &self.normal),
            ("albedo", &self.albedo),
            ("roughness", &self.roughness),
            ("metallic", &self.metallic),
            ("depth", &self.depth),
            ("alpha", &self.alpha),
        ]
    }

    pub fn map(&self, name: &str) -> Option<&Raster> {
        self.maps().into_iter().find(|(n, _)| *n == name).map(|(_, r)| r)
    }

    pub fn is_finite(&self) -> bool {
        self.maps().iter().all(|(_, r)| r.is_finite())
    }
}
