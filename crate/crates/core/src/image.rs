//! Row-major interleaved image buffers shared by every pipeline stage.

use crate::error::{Error, Result};

/// An `height × width × channels` image stored row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

pub type Frame = Image<u8>;

impl<T: Copy + Default> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![T::default(); width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Image(format!(
                "buffer of {} values does not fit {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.idx(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: T) {
        let i = self.idx(x, y, c);
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[T] {
        let i = self.idx(x, y, 0);
        &self.data[i..i + self.channels]
    }

    /// Copy the sub-rectangle `[x0, x0+w) × [y0, y0+h)`.
    pub fn sub_image(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image<T> {
        debug_assert!(x0 + w <= self.width && y0 + h <= self.height);
        let mut out = Image::new(w, h, self.channels);
        let row = w * self.channels;
        for y in 0..h {
            let src = self.idx(x0, y0 + y, 0);
            out.data[y * row..(y + 1) * row].copy_from_slice(&self.data[src..src + row]);
        }
        out
    }

    /// Paste `src` with its top-left corner at `(x0, y0)`; must fit.
    pub fn paste(&mut self, src: &Image<T>, x0: usize, y0: usize) {
        assert_eq!(self.channels, src.channels);
        assert!(x0 + src.width <= self.width && y0 + src.height <= self.height);
        let row = src.width * src.channels;
        for y in 0..src.height {
            let dst = self.idx(x0, y0 + y, 0);
            self.data[dst..dst + row].copy_from_slice(&src.data[y * row..(y + 1) * row]);
        }
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Image<u8> {
    /// Channel values scaled to `[0, 1]`.
    pub fn to_unit_f32(&self) -> Image<f32> {
        self.map(|v| v as f32 / 255.0)
    }
}
