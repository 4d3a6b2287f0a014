//! Binary netpbm images: PPM (`P6`, RGB) and PGM (`P5`, gray), maxval 255.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit image with `channels` interleaved samples per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height * channels, "image buffer size");
        Self {
            width,
            height,
            channels,
            data,
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.buf.get(self.pos) {
            if b == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> std::result::Result<usize, (usize, String)> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err((start, "expected a decimal number".into()));
        }
        std::str::from_utf8(&self.buf[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| (start, "number out of range".into()))
    }
}

/// Parse a `P5` or `P6` file from memory.
pub fn decode(buf: &[u8]) -> std::result::Result<Image, (usize, String)> {
    let channels = match buf.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err((0, "expected magic P5 or P6".into())),
    };
    let mut c = Cursor { buf, pos: 2 };
    if !buf.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err((2, "expected whitespace after magic".into()));
    }
    let width = c.number()?;
    let height = c.number()?;
    let maxval_at = {
        c.skip_space();
        c.pos
    };
    let maxval = c.number()?;
    if width == 0 || height == 0 {
        return Err((
            maxval_at,
            format!("image extents must be positive, got {width}x{height}"),
        ));
    }
    if maxval != 255 {
        return Err((maxval_at, format!("unsupported maxval {maxval}, expected 255")));
    }
    match buf.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err((c.pos, "expected a single whitespace before raster".into())),
    }
    let need = width * height * channels;
    let have = buf.len() - c.pos;
    if have < need {
        return Err((buf.len(), format!("truncated raster: {have} of {need} bytes")));
    }
    if have > need {
        return Err((c.pos + need, format!("{} trailing bytes after raster", have - need)));
    }
    Ok(Image::new(width, height, channels, buf[c.pos..].to_vec()))
}

pub fn encode(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read(path: &Path) -> Result<Image> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|(offset, msg)| Error::Format {
        path: path.to_path_buf(),
        offset,
        msg,
    })
}

/// Read an image and require a given channel count.
pub fn read_channels(path: &Path, channels: usize) -> Result<Image> {
    let img = read(path)?;
    if img.channels != channels {
        let want = if channels == 1 { "P5" } else { "P6" };
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            msg: format!("expected a {want} file"),
        });
    }
    Ok(img)
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    assert!(
        img.channels == 1 || img.channels == 3,
        "netpbm supports 1 or 3 channels"
    );
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(img)).map_err(|e| Error::io(path, e))
}
