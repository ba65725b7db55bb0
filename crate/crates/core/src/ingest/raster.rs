//! 8-bit rasters and binary PGM (P5) / PPM (P6) I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// An 8-bit image with one (scalar) or three (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Format(format!(
                "raster must be at least 1x1, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Format(format!(
                "raster must have 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Format(format!(
                "raster data has {} values, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, data)
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Value at `(x, y)` for a single-channel raster.
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert_eq!(self.channels, 1);
        self.data[y * self.width + x]
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(self.data.len() + 32);
        self.write_to(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    /// Decodes a binary netpbm image. Only `P5` and `P6` with maxval 255
    /// are accepted.
    pub fn read_from<R: BufRead>(mut reader: R) -> Result<Self> {
        let magic = next_token(&mut reader)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            other => {
                return Err(Error::Format(format!(
                    "unsupported netpbm magic {other:?}, expected P5 or P6"
                )))
            }
        };
        let width = parse_header_int(&next_token(&mut reader)?, "width")?;
        let height = parse_header_int(&next_token(&mut reader)?, "height")?;
        let maxval = parse_header_int(&next_token(&mut reader)?, "maxval")?;
        if maxval != 255 {
            return Err(Error::Format(format!("maxval must be 255, got {maxval}")));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::Format("raster dimensions overflow".into()))?;
        let mut data = Vec::with_capacity(expected);
        reader
            .take(expected as u64)
            .read_to_end(&mut data)
            .map_err(|e| Error::Format(format!("reading raster payload: {e}")))?;
        if data.len() != expected {
            return Err(Error::Truncated {
                expected,
                found: data.len(),
            });
        }
        Self::new(width, height, channels, data)
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        write!(writer, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        writer.write_all(&self.data)
    }
}

/// Reads one whitespace-delimited header token, skipping `#` comments. The
/// single whitespace byte after the token is consumed, as netpbm requires
/// before the binary payload.
fn next_token<R: BufRead>(reader: &mut R) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = reader
            .read(&mut byte)
            .map_err(|e| Error::Format(format!("reading netpbm header: {e}")))?;
        if n == 0 {
            if token.is_empty() {
                return Err(Error::Format("unexpected end of netpbm header".into()));
            }
            break;
        }
        let b = byte[0];
        if b == b'#' && token.is_empty() {
            let mut comment = Vec::new();
            reader
                .read_until(b'\n', &mut comment)
                .map_err(|e| Error::Format(format!("reading netpbm header: {e}")))?;
            continue;
        }
        if b.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(b);
    }
    String::from_utf8(token).map_err(|_| Error::Format("non-ascii netpbm header".into()))
}

fn parse_header_int(token: &str, field: &str) -> Result<usize> {
    token
        .parse::<usize>()
        .map_err(|_| Error::Format(format!("invalid netpbm {field} {token:?}")))
}

/// Saturation channel of the HSV transform, scaled to `[0, 255]`.
///
/// Black pixels (max channel 0) have saturation 0.
pub fn rgb_to_saturation(raster: &Raster) -> Result<Raster> {
    if raster.channels() != 3 {
        return Err(Error::Format(format!(
            "saturation needs a 3-channel raster, got {} channel(s)",
            raster.channels()
        )));
    }
    let data = raster
        .data()
        .chunks_exact(3)
        .map(|px| saturation(px[0], px[1], px[2]))
        .collect();
    Raster::gray(raster.width(), raster.height(), data)
}

fn saturation(r: u8, g: u8, b: u8) -> u8 {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    if max == 0 {
        return 0;
    }
    let s = 255.0 * f64::from(max - min) / f64::from(max);
    s.round() as u8
}
