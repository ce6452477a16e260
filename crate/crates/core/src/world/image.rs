use crate::error::{Error, Result};

/// RGB8 image, row-major `[H, W, 3]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "{height}x{width} RGB image needs {} bytes, got {}",
                height * width * 3,
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        Image {
            height,
            width,
            data: rgb.repeat(height * width),
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// 2×2 box filter with round-half-up.
    pub fn downsample2(&self) -> Image {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut data = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let at = |yy: usize, xx: usize| self.data[(yy * self.width + xx) * 3 + c] as u16;
                    let s = at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1);
                    data.push(((s + 2) / 4) as u8);
                }
            }
        }
        Image {
            height: h,
            width: w,
            data,
        }
    }

    /// Copies a `h×w` window starting at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Image {
        let mut data = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        Image {
            height: h,
            width: w,
            data,
        }
    }
}

/// Tiles four equal views as `[front | rear]` over `[left | right]`, each halved.
pub fn assemble_four_view(views: [&Image; 4]) -> Result<Image> {
    let (h, w) = (views[0].height, views[0].width);
    if views.iter().any(|v| v.height != h || v.width != w) {
        return Err(Error::Dimension("four-view inputs differ in size".into()));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!("view {h}x{w} is not even")));
    }
    let small: Vec<Image> = views.iter().map(|v| v.downsample2()).collect();
    let (qh, qw) = (h / 2, w / 2);
    let mut out = vec![0u8; h * w * 3];
    for (q, img) in small.iter().enumerate() {
        let (oy, ox) = ((q / 2) * qh, (q % 2) * qw);
        for y in 0..qh {
            let dst = ((oy + y) * w + ox) * 3;
            out[dst..dst + qw * 3].copy_from_slice(&img.data[y * qw * 3..(y + 1) * qw * 3]);
        }
    }
    Image::new(h, w, out)
}

/// RGB8 video, row-major `[F, H, W, 3]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Video {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Video {
    pub fn from_frames(frames: &[Image]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Dimension("video needs at least one frame".into()))?;
        let (h, w) = (first.height, first.width);
        if frames.iter().any(|f| f.height != h || f.width != w) {
            return Err(Error::Dimension("video frames differ in size".into()));
        }
        Ok(Video {
            frames: frames.len(),
            height: h,
            width: w,
            data: frames.iter().flat_map(|f| f.data.iter().copied()).collect(),
        })
    }

    pub fn new(frames: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != frames * height * width * 3 {
            return Err(Error::Dimension(format!(
                "video [{frames}, {height}, {width}, 3] needs {} bytes, got {}",
                frames * height * width * 3,
                data.len()
            )));
        }
        Ok(Video {
            frames,
            height,
            width,
            data,
        })
    }

    pub fn frame(&self, k: usize) -> Image {
        let n = self.height * self.width * 3;
        Image {
            height: self.height,
            width: self.width,
            data: self.data[k * n..(k + 1) * n].to_vec(),
        }
    }

    pub fn truncated(&self, frames: usize) -> Result<Video> {
        if frames > self.frames {
            return Err(Error::Dimension(format!(
                "asked for {frames} frames of a {}-frame video",
                self.frames
            )));
        }
        let n = self.height * self.width * 3;
        Video::new(frames, self.height, self.width, self.data[..frames * n].to_vec())
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, 3]
    }
}
